//! Experiment specs: a TOML file naming layers, variants and seeds.
//!
//! ```toml
//! name = "suite"
//! presets = ["alexnet_like", "vggnet_like"]
//! variants = ["dense", "sparten", "barista"]
//! seeds = [1, 2]
//! scale = "desk"
//! output_dir = "out"
//! formats = ["csv", "json", "plotdata"]
//!
//! [[layers]]
//! name = "wide"
//! h = 8
//! w = 8
//! d = 64
//! k = 3
//! n = 32
//! ifmap_density = 0.4
//! filter_density = 0.3
//!
//! [[custom_variants]]
//! label = "barista_no_coloring"
//! base = "barista"
//! features = { coloring = false }
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsim::balance::TelescopeSpec;
use sparsim::{presets, ArchConfig, ChunkSize, LayerSpec, Scale, Variant};
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

impl ReportFormat {
    const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Plotdata];

    fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            "plotdata" => Some(Self::Plotdata),
            _ => None,
        }
    }
}

/// Per-feature overrides; unset flags keep the base variant's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telescoping: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snarfing: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coloring: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_robin: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchical_buffering: Option<bool>,
}

/// A preset variant with some hardware parameters replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomVariant {
    pub label: String,
    pub base: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fgrs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifgcs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pes_per_node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_buffer_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_node_buffer_mult: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_buffer_slots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_buffer_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_temporal_reuse: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_banks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_latency: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac_latency: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_latency: Option<u64>,
    /// Explicit telescoping group sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telescope: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureOverrides>,
}

impl CustomVariant {
    pub fn config(&self, scale: Scale) -> Result<ArchConfig, String> {
        let base = Variant::parse(&self.base).ok_or_else(|| unknown_variant(&self.base))?;
        let mut c = ArchConfig::preset(base, scale);
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            clusters, fgrs, ifgcs, pes_per_node, shared_buffer_depth, per_node_buffer_mult, flat_buffer_slots,
            output_buffer_depth, filter_temporal_reuse, cache_banks, cache_latency, mac_latency, match_latency
        );
        if let Some(cs) = self.chunk_size {
            c.chunk_size = ChunkSize::new(cs).map_err(|e| e.to_string())?;
        }
        if let Some(t) = &self.telescope {
            c.telescope = TelescopeSpec::Explicit(t.clone());
        }
        if let Some(f) = &self.features {
            let cf = &mut c.features;
            for (dst, src) in [
                (&mut cf.telescoping, f.telescoping),
                (&mut cf.snarfing, f.snarfing),
                (&mut cf.coloring, f.coloring),
                (&mut cf.round_robin, f.round_robin),
                (&mut cf.hierarchical_buffering, f.hierarchical_buffering),
            ] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
        }
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

fn unknown_variant(name: &str) -> String {
    let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    format!("unknown variant {name:?} (known: {})", known.join(", "))
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    pub scale: Scale,
    pub output_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub presets: Vec<String>,
    pub variants: Vec<String>,
    pub layers: Vec<LayerSpec>,
    pub custom_variants: Vec<CustomVariant>,
}

/// One named hardware configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantEntry {
    pub label: String,
    pub config: ArchConfig,
}

/// Layers sharing a label in aggregates: a preset, or `custom`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGroup {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

pub const CUSTOM_GROUP: &str = "custom";

impl ExperimentSpec {
    /// Every preset, every variant, seed 1.
    pub fn standard_suite() -> Self {
        Self {
            name: "standard_suite".into(),
            seeds: vec![1],
            scale: Scale::Desk,
            output_dir: PathBuf::from("sparsim-out"),
            formats: ReportFormat::ALL.to_vec(),
            presets: presets::preset_names().into_iter().map(String::from).collect(),
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            layers: Vec::new(),
            custom_variants: Vec::new(),
        }
    }

    /// Named variants then custom ones, configured at the spec's scale.
    pub fn variant_entries(&self) -> Result<Vec<VariantEntry>, String> {
        let mut out = Vec::new();
        for v in &self.variants {
            let variant = Variant::parse(v).ok_or_else(|| unknown_variant(v))?;
            out.push(VariantEntry { label: v.clone(), config: ArchConfig::preset(variant, self.scale) });
        }
        for c in &self.custom_variants {
            let config = c.config(self.scale).map_err(|e| format!("custom variant {:?}: {e}", c.label))?;
            out.push(VariantEntry { label: c.label.clone(), config });
        }
        Ok(out)
    }

    /// Layers per group for one seed. Preset layer `i` gets `seed * 1000 + i`;
    /// custom layers get `seed * 1000 + layer.seed`.
    pub fn layer_groups(&self, seed: u64) -> Vec<LayerGroup> {
        let mut groups: Vec<LayerGroup> = self
            .presets
            .iter()
            .map(|p| LayerGroup { name: p.clone(), layers: presets::preset_layers(p, seed).expect("validated") })
            .collect();
        if !self.layers.is_empty() {
            let layers = self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let mut l = l.clone();
                    if l.name.is_empty() {
                        l.name = format!("{CUSTOM_GROUP}/{i}");
                    }
                    l.seed = seed.wrapping_mul(1000).wrapping_add(l.seed);
                    l
                })
                .collect();
            groups.push(LayerGroup { name: CUSTOM_GROUP.into(), layers });
        }
        groups
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecIssue {
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}", render(.origin, .issues))]
    Invalid { origin: String, issues: Vec<SpecIssue> },
}

impl SpecError {
    pub fn issues(&self) -> &[SpecIssue] {
        match self {
            SpecError::Invalid { issues, .. } => issues,
            SpecError::Io { .. } => &[],
        }
    }
}

fn render(origin: &str, issues: &[SpecIssue]) -> String {
    let lines: Vec<String> = issues
        .iter()
        .map(|i| match i.line {
            Some(l) => format!("{origin}:{l}: {}", i.message),
            None => format!("{origin}: {}", i.message),
        })
        .collect();
    format!("{} problem(s) in spec\n{}", issues.len(), lines.join("\n"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: Spanned<String>,
    #[serde(default)]
    seeds: Option<Spanned<Vec<u64>>>,
    #[serde(default)]
    scale: Option<Spanned<String>>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    formats: Option<Spanned<Vec<Spanned<String>>>>,
    #[serde(default)]
    presets: Option<Spanned<Vec<Spanned<String>>>>,
    #[serde(default)]
    variants: Option<Spanned<Vec<Spanned<String>>>>,
    #[serde(default)]
    layers: Vec<Spanned<LayerSpec>>,
    #[serde(default)]
    custom_variants: Vec<Spanned<CustomVariant>>,
}

struct Issues<'a> {
    text: &'a str,
    list: Vec<SpecIssue>,
}

impl Issues<'_> {
    fn at(&mut self, span: Option<Range<usize>>, message: impl Into<String>) {
        let line = span.map(|s| self.text[..s.start.min(self.text.len())].matches('\n').count() + 1);
        self.list.push(SpecIssue { line, message: message.into() });
    }
}

pub fn parse_spec(text: &str, origin: &str) -> Result<ExperimentSpec, SpecError> {
    let invalid = |issues| SpecError::Invalid { origin: origin.to_string(), issues };
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let mut is = Issues { text, list: Vec::new() };
        is.at(e.span(), e.message().trim().to_string());
        invalid(is.list)
    })?;
    let mut is = Issues { text, list: Vec::new() };

    if raw.name.get_ref().trim().is_empty() {
        is.at(Some(raw.name.span()), "name must not be empty");
    }
    let seeds = match &raw.seeds {
        Some(s) if s.get_ref().is_empty() => {
            is.at(Some(s.span()), "seeds must list at least one seed");
            Vec::new()
        }
        Some(s) => s.get_ref().clone(),
        None => vec![1],
    };
    let scale = match &raw.scale {
        None => Scale::Desk,
        Some(s) => match s.get_ref().as_str() {
            "desk" => Scale::Desk,
            "full" => Scale::Full,
            other => {
                is.at(Some(s.span()), format!("unknown scale {other:?} (known: desk, full)"));
                Scale::Desk
            }
        },
    };
    let formats = match &raw.formats {
        None => ReportFormat::ALL.to_vec(),
        Some(list) => {
            let mut out = Vec::new();
            for f in list.get_ref() {
                match ReportFormat::parse(f.get_ref()) {
                    Some(x) if !out.contains(&x) => out.push(x),
                    Some(_) => is.at(Some(f.span()), format!("format {:?} listed twice", f.get_ref())),
                    None => is.at(Some(f.span()), format!("unknown format {:?} (known: csv, json, plotdata)", f.get_ref())),
                }
            }
            if list.get_ref().is_empty() {
                is.at(Some(list.span()), "formats must not be empty");
            }
            out
        }
    };

    let mut preset_names = Vec::new();
    for p in raw.presets.iter().flat_map(|l| l.get_ref()) {
        if presets::network(p.get_ref()).is_none() {
            is.at(Some(p.span()), format!("unknown preset {:?} (known: {})", p.get_ref(), presets::preset_names().join(", ")));
        } else if preset_names.contains(p.get_ref()) {
            is.at(Some(p.span()), format!("preset {:?} listed twice", p.get_ref()));
        } else {
            preset_names.push(p.get_ref().clone());
        }
    }
    let mut layers = Vec::new();
    for l in &raw.layers {
        if let Err(e) = l.get_ref().validate() {
            is.at(Some(l.span()), format!("layer {:?}: {e}", l.get_ref().name));
        }
        layers.push(l.get_ref().clone());
    }
    if preset_names.is_empty() && layers.is_empty() {
        let span = raw.presets.as_ref().map(|p| p.span());
        is.at(span, "no layers: list presets or add [[layers]] tables");
    }

    let mut labels: Vec<String> = Vec::new();
    let mut variants = Vec::new();
    for v in raw.variants.iter().flat_map(|l| l.get_ref()) {
        if Variant::parse(v.get_ref()).is_none() {
            is.at(Some(v.span()), unknown_variant(v.get_ref()));
        } else if labels.contains(v.get_ref()) {
            is.at(Some(v.span()), format!("variant {:?} listed twice", v.get_ref()));
        } else {
            labels.push(v.get_ref().clone());
            variants.push(v.get_ref().clone());
        }
    }
    let mut custom_variants = Vec::new();
    for c in &raw.custom_variants {
        let cv = c.get_ref();
        if labels.contains(&cv.label) {
            is.at(Some(c.span()), format!("variant label {:?} used twice", cv.label));
        }
        if let Err(e) = cv.config(scale) {
            is.at(Some(c.span()), format!("custom variant {:?}: {e}", cv.label));
        }
        labels.push(cv.label.clone());
        custom_variants.push(cv.clone());
    }
    if labels.is_empty() {
        let span = raw.variants.as_ref().map(|v| v.span());
        is.at(span, "no variants: list at least one variant");
    }

    if !is.list.is_empty() {
        return Err(invalid(is.list));
    }
    Ok(ExperimentSpec {
        name: raw.name.into_inner(),
        seeds,
        scale,
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("sparsim-out")),
        formats,
        presets: preset_names,
        variants,
        layers,
        custom_variants,
    })
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io { path: path.to_path_buf(), source })?;
    parse_spec(&text, &path.display().to_string())
}

pub fn emit_spec(spec: &ExperimentSpec) -> String {
    let mut out = toml::to_string(&Emit::from(spec)).expect("specs serialize");
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

/// Field order for emission: plain keys first, then arrays of tables.
#[derive(Serialize)]
struct Emit<'a> {
    name: &'a str,
    seeds: &'a [u64],
    scale: Scale,
    output_dir: &'a Path,
    formats: &'a [ReportFormat],
    presets: &'a [String],
    variants: &'a [String],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    layers: &'a [LayerSpec],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    custom_variants: &'a [CustomVariant],
}

impl<'a> From<&'a ExperimentSpec> for Emit<'a> {
    fn from(s: &'a ExperimentSpec) -> Self {
        Emit {
            name: &s.name,
            seeds: &s.seeds,
            scale: s.scale,
            output_dir: &s.output_dir,
            formats: &s.formats,
            presets: &s.presets,
            variants: &s.variants,
            layers: &s.layers,
            custom_variants: &s.custom_variants,
        }
    }
}
