//! Sweep execution: every (layer, seed) job runs on a worker, and results
//! come back sorted by group, layer, seed and variant.

use rayon::prelude::*;
use sparsim::arch::buffer_accounting;
use sparsim::engine::{feature_ladder, isolate_features};
use sparsim::tensor::dense_conv_oracle;
use sparsim::{simulate, ArchConfig, LayerSpec, SimError, SimReport, Variant, Workload};

use crate::spec::ExperimentSpec;
use crate::CliError;

/// `(label, per_node_buffer_mult, shared_buffer_depth)`
pub const BUFFER_SCALES: [(&str, usize, usize); 3] = [("small", 2, 8), ("medium", 3, 16), ("large", 4, 32)];

#[derive(Debug, Clone)]
pub struct Job {
    pub group_index: usize,
    pub group: String,
    pub layer_index: usize,
    pub layer: LayerSpec,
    pub seed: u64,
}

impl Job {
    fn id(&self, what: &str) -> String {
        format!("{} layer {} seed {} {what}", self.group, self.layer.name, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub group: String,
    pub layer: String,
    pub seed: u64,
    pub variant: String,
    /// Cycles of the dense baseline on the same layer and seed.
    pub dense_cycles: u64,
    pub report: SimReport,
}

impl CellResult {
    pub fn speedup(&self) -> f64 {
        self.dense_cycles as f64 / self.report.total_cycles.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderResult {
    pub group: String,
    pub layer: String,
    pub seed: u64,
    pub step_index: usize,
    pub step: &'static str,
    pub report: SimReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub group: String,
    pub layer: String,
    pub seed: u64,
    pub scale_index: usize,
    pub scale: &'static str,
    pub per_node_buffer_mult: usize,
    pub shared_buffer_depth: usize,
    pub buffer_bytes: u64,
    pub report: SimReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub group: String,
    pub layer: String,
    pub seed: u64,
    pub variant: String,
    pub matches: bool,
}

pub fn jobs(spec: &ExperimentSpec) -> Vec<Job> {
    let mut out = Vec::new();
    for &seed in &spec.seeds {
        for (gi, g) in spec.layer_groups(seed).into_iter().enumerate() {
            for (li, layer) in g.layers.into_iter().enumerate() {
                out.push(Job { group_index: gi, group: g.name.clone(), layer_index: li, layer, seed });
            }
        }
    }
    out.sort_by_key(|j| (j.group_index, j.layer_index, j.seed));
    out
}

/// Runs `f` on every job with `workers` threads. Results keep job order and
/// all failures are reported together.
fn run_jobs<T, F>(spec: &ExperimentSpec, workers: usize, f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(&Job, &Workload) -> Result<Vec<T>, (String, SimError)> + Sync,
{
    let jobs = jobs(spec);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<Result<Vec<T>, (String, SimError)>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let w = Workload::generate(&job.layer, spec_chunk(spec)).map_err(|e| (job.id("workload"), e))?;
                f(job, &w)
            })
            .collect()
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.extend(v),
            Err((cell, e)) => failed.push(crate::CellFailure { cell, error: e.to_string() }),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err(CliError::Cells(failed))
    }
}

fn spec_chunk(spec: &ExperimentSpec) -> sparsim::ChunkSize {
    spec.variant_entries()
        .ok()
        .and_then(|v| v.first().map(|e| e.config.chunk_size))
        .unwrap_or_default()
}

pub fn run_sweep(spec: &ExperimentSpec, workers: usize) -> Result<Vec<CellResult>, CliError> {
    let variants = spec.variant_entries().map_err(CliError::Usage)?;
    let chunk = spec_chunk(spec);
    if let Some(v) = variants.iter().find(|v| v.config.chunk_size != chunk) {
        return Err(CliError::Usage(format!("variant {} uses a different chunk size", v.label)));
    }
    let baseline = variants.iter().position(|v| v.config.variant == Variant::Dense && v.label == "dense");
    let dense_cfg = ArchConfig::preset(Variant::Dense, spec.scale);
    run_jobs(spec, workers, |job, w| {
        let mut reports = Vec::with_capacity(variants.len());
        for v in &variants {
            reports.push(simulate(w, &v.config).map_err(|e| (job.id(&v.label), e))?.report);
        }
        let dense_cycles = match baseline {
            Some(i) => reports[i].total_cycles,
            None => simulate(w, &dense_cfg).map_err(|e| (job.id("dense baseline"), e))?.report.total_cycles,
        };
        Ok(reports
            .into_iter()
            .zip(&variants)
            .map(|(report, v)| CellResult {
                group: job.group.clone(),
                layer: job.layer.name.clone(),
                seed: job.seed,
                variant: v.label.clone(),
                dense_cycles,
                report,
            })
            .collect())
    })
}

/// The cumulative feature ladder from barista_no_opts on every layer.
pub fn run_isolation(spec: &ExperimentSpec, workers: usize) -> Result<Vec<LadderResult>, CliError> {
    let base = ArchConfig::preset(Variant::BaristaNoOpts, spec.scale);
    let steps = feature_ladder();
    run_jobs(spec, workers, |job, w| {
        let reports = isolate_features(w, &base).map_err(|e| (job.id("ladder"), e))?;
        Ok(reports
            .into_iter()
            .enumerate()
            .map(|(i, report)| LadderResult {
                group: job.group.clone(),
                layer: job.layer.name.clone(),
                seed: job.seed,
                step_index: i,
                step: steps[i].0,
                report,
            })
            .collect())
    })
}

/// Barista at the three per-node buffer scales on every layer.
pub fn run_sensitivity(spec: &ExperimentSpec, workers: usize) -> Result<Vec<SensitivityResult>, CliError> {
    run_jobs(spec, workers, |job, w| {
        BUFFER_SCALES
            .iter()
            .enumerate()
            .map(|(i, &(scale, mult, shared))| {
                let mut c = ArchConfig::preset(Variant::Barista, spec.scale);
                c.per_node_buffer_mult = mult;
                c.shared_buffer_depth = shared;
                let report = simulate(w, &c).map_err(|e| (job.id(scale), e))?.report;
                Ok(SensitivityResult {
                    group: job.group.clone(),
                    layer: job.layer.name.clone(),
                    seed: job.seed,
                    scale_index: i,
                    scale,
                    per_node_buffer_mult: mult,
                    shared_buffer_depth: shared,
                    buffer_bytes: buffer_accounting(&c).total_bytes,
                    report,
                })
            })
            .collect()
    })
}

/// Compares every variant's outputs with the direct convolution.
pub fn run_oracle_check(spec: &ExperimentSpec, workers: usize) -> Result<Vec<OracleResult>, CliError> {
    let variants = spec.variant_entries().map_err(CliError::Usage)?;
    run_jobs(spec, workers, |job, w| {
        let l = &job.layer;
        let maps = l.generate_ifmaps().map_err(|e| (job.id("oracle"), e))?;
        let filters = l.generate_filters().map_err(|e| (job.id("oracle"), e))?;
        let oracle = dense_conv_oracle(l, &maps, &filters).map_err(|e| (job.id("oracle"), e))?;
        variants
            .iter()
            .map(|v| {
                let out = simulate(w, &v.config).map_err(|e| (job.id(&v.label), e))?;
                Ok(OracleResult {
                    group: job.group.clone(),
                    layer: l.name.clone(),
                    seed: job.seed,
                    variant: v.label.clone(),
                    matches: out.raw == oracle,
                })
            })
            .collect()
    })
}
