//! Acceptance suite: one PASS/FAIL line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Instant;

use rayon::prelude::*;
use sparsim::arch::{buffer_accounting, KB, MB};
use sparsim::balance::{telescoping_schedule, TelescopeSpec};
use sparsim::engine::isolate_features;
use sparsim::tensor::dense_conv_oracle;
use sparsim_cli::{parse_spec, report, sweep};
use sparsim::{presets, simulate, ArchConfig, ChunkSize, Features, LayerSpec, Scale, SimReport, Variant, Workload};

const ORACLE_LAYERS: u64 = 60;
const REFETCH_REDUCTION: f64 = 5.0;
const IDEAL_GAP: f64 = 0.15;
/// Relative slack for a ladder step to count as non-increasing.
const STEP_NOISE: f64 = 0.005;
/// Telescoping may be neutral on low-traffic layers.
const TELESCOPE_NEUTRAL: f64 = 0.02;
const SUITE_SEED: u64 = 1;

struct Outcome {
    failed: Vec<String>,
}

impl Outcome {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id.to_string());
        }
    }
}

fn desk(v: Variant) -> ArchConfig {
    ArchConfig::preset(v, Scale::Desk)
}

fn oracle_equivalence(out: &mut Outcome) {
    let t = Instant::now();
    let bad: Vec<String> = (0..ORACLE_LAYERS)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let l = common::random_layer(seed);
            let w = Workload::generate(&l, ChunkSize::default()).unwrap();
            let oracle = dense_conv_oracle(&l, &l.generate_ifmaps().unwrap(), &l.generate_filters().unwrap()).unwrap();
            common::SPARSE_VARIANTS
                .iter()
                .filter(|&&v| simulate(&w, &desk(v)).map(|o| o.raw != oracle).unwrap_or(true))
                .map(|v| format!("{v}@{seed}"))
                .collect::<Vec<_>>()
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();
    out.line(
        "1 oracle equivalence",
        bad.is_empty() && secs < 120.0,
        format!("{ORACLE_LAYERS} layers x {} variants, mismatches {bad:?}, {secs:.1}s", common::SPARSE_VARIANTS.len()),
    );
}

fn buffer_arithmetic(out: &mut Outcome) {
    let mut flat = desk(Variant::BaristaNoOpts);
    flat.clusters = 4;
    flat.fgrs = 64;
    flat.ifgcs = 128;
    flat.pes_per_node = 1;
    flat.flat_buffer_slots = 2;
    let a = buffer_accounting(&flat);
    let mut shared = flat.clone();
    shared.ifgcs = 32;
    shared.pes_per_node = 4;
    let b = buffer_accounting(&shared);
    let h = buffer_accounting(&ArchConfig::preset(Variant::Barista, Scale::Full));
    let got = [
        a.per_pe_bytes,
        a.per_fgr_bytes as f64 / KB,
        (a.total_bytes as f64 / MB).round(),
        (b.total_bytes as f64 / MB * 10.0).round() / 10.0,
        h.per_pe_bytes,
        h.per_ifgc_bytes as f64 / KB,
        (h.total_bytes as f64 / MB * 100.0).round() / 100.0,
    ];
    // megabyte totals are compared at their printed precision
    let want = [578.0, 72.25, 18.0, 4.5, 245.0, 61.25, 7.66];
    out.line("2 buffer arithmetic", got == want, format!("{got:?}"));
}

fn telescope_default(out: &mut Outcome) {
    let s = telescoping_schedule(64, &TelescopeSpec::Default).unwrap();
    out.line("3 telescope default", s.group_sizes == [48, 12, 2, 2], format!("{:?}", s.group_sizes));
}

fn mac_conservation(out: &mut Outcome) {
    let mut bad = Vec::new();
    for seed in 200..230u64 {
        let l = common::random_layer(seed);
        let w = Workload::generate(&l, ChunkSize::default()).unwrap();
        let mut pairs = 0u64;
        for (map, sparse_map) in l.generate_ifmaps().unwrap().iter().zip(&w.ifmaps) {
            assert_eq!(map.dims, sparse_map.dims);
            for oy in 0..l.out_h() {
                for ox in 0..l.out_w() {
                    let win = sparsim::tensor::window_chunks(map, &l, oy, ox, ChunkSize::default());
                    for f in &w.filters {
                        pairs += win.iter().zip(&f.chunks).map(|(a, b)| (a.mask & b.mask).count_ones() as u64).sum::<u64>();
                    }
                }
            }
        }
        for v in [Variant::Sparten, Variant::Synchronous, Variant::BaristaNoOpts, Variant::Barista, Variant::UnlimitedBuffer] {
            let got = simulate(&w, &desk(v)).unwrap().report.macs_executed;
            if got != pairs {
                bad.push(format!("{v}@{seed}: {got} vs {pairs}"));
            }
        }
    }
    let mut l = LayerSpec::new(9, 7, 6, 3, 10);
    l.batch = 2;
    l.stride = 2;
    let dense_formula = (l.out_h() * l.out_w() * l.k * l.k * l.d * l.n * l.batch) as u64;
    let w = Workload::generate(&l, ChunkSize::default()).unwrap();
    for v in [Variant::Sparten, Variant::Barista] {
        let got = simulate(&w, &desk(v)).unwrap().report.macs_executed;
        if got != dense_formula {
            bad.push(format!("{v} density 1: {got} vs {dense_formula}"));
        }
    }
    out.line("4 MAC conservation", bad.is_empty(), format!("30 random layers + density-1 check, mismatches {bad:?}"));
}

/// Everything the suite-level criteria need from one preset layer.
struct LayerRun {
    name: String,
    /// Cycles per variant in `Variant::ALL` order.
    cycles: Vec<u64>,
    ladder: Vec<SimReport>,
    coloring_off: u64,
    /// Refetches per chunk at the small, medium and large buffer scales.
    sensitivity: [f64; 3],
}

fn buffer_scale(mult: usize, shared: usize) -> ArchConfig {
    let mut c = desk(Variant::Barista);
    c.per_node_buffer_mult = mult;
    c.shared_buffer_depth = shared;
    c
}

fn run_layer(l: &LayerSpec) -> LayerRun {
    let w = Workload::generate(l, ChunkSize::default()).unwrap();
    let cyc = |c: &ArchConfig| simulate(&w, c).unwrap().report;
    let cycles = Variant::ALL.iter().map(|&v| cyc(&desk(v)).total_cycles).collect();
    let ladder = isolate_features(&w, &desk(Variant::BaristaNoOpts)).unwrap();
    let mut off = desk(Variant::Barista);
    off.features.coloring = false;
    let sensitivity = [(2, 8), (3, 16), (4, 32)].map(|(m, s)| cyc(&buffer_scale(m, s)).stats.refetches_per_chunk());
    LayerRun { name: l.name.clone(), cycles, ladder, coloring_off: cyc(&off).total_cycles, sensitivity }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn geomean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

fn idx(v: Variant) -> usize {
    Variant::ALL.iter().position(|&x| x == v).unwrap()
}

fn suite_criteria(out: &mut Outcome) {
    let t = Instant::now();
    let runs: Vec<(&str, Vec<LayerRun>)> = presets::NETWORKS
        .iter()
        .map(|net| {
            let layers = presets::preset_layers(net.name, SUITE_SEED).unwrap();
            (net.name, layers.par_iter().map(run_layer).collect())
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();

    // 5: refetch reduction from the first ladder step
    let mut ok = secs < 900.0;
    let mut detail = Vec::new();
    for (name, layers) in &runs {
        let before = mean(layers.iter().map(|r| r.ladder[0].stats.refetches_per_chunk()));
        let after = mean(layers.iter().map(|r| r.ladder[1].stats.refetches_per_chunk()));
        ok &= before >= REFETCH_REDUCTION * after;
        detail.push(format!("{name} {before:.2}->{after:.2} ({:.1}x)", before / after));
    }
    out.line("5 refetch reduction", ok, format!("{}; suite {secs:.0}s", detail.join(", ")));

    // 6: buffer-size monotonicity
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, layers) in &runs {
        let s: Vec<f64> = (0..3).map(|i| mean(layers.iter().map(|r| r.sensitivity[i]))).collect();
        ok &= s[0] >= s[1] && s[1] >= s[2];
        detail.push(format!("{name} {:.2}/{:.2}/{:.2}", s[0], s[1], s[2]));
    }
    out.line("6 buffer-size monotonicity", ok, detail.join(", "));

    // 7: variant ordering on geomean speedup over dense
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, layers) in &runs {
        let sp = |v: Variant| geomean(layers.iter().map(|r| r.cycles[idx(Variant::Dense)] as f64 / r.cycles[idx(v)] as f64));
        let (b, gap) = (sp(Variant::Barista), 1.0 - sp(Variant::Barista) / sp(Variant::Ideal));
        let pass = b >= sp(Variant::Sparten).max(sp(Variant::Synchronous)) && b >= sp(Variant::BaristaNoOpts) && gap <= IDEAL_GAP;
        ok &= pass;
        let all: Vec<String> = Variant::ALL.iter().map(|&v| format!("{v}={:.2}", sp(v))).collect();
        detail.push(format!("{name} [{}] gap {:.1}%", all.join(" "), gap * 100.0));
    }
    out.line("7 variant ordering", ok, detail.join("; "));

    // 8: isolation ladder
    let steps = sparsim::engine::feature_ladder();
    let mut worst = vec![(0.0f64, String::new()); steps.len()];
    for (_, layers) in &runs {
        for r in layers {
            for (k, pair) in r.ladder.windows(2).enumerate() {
                let ratio = pair[1].total_cycles as f64 / pair[0].total_cycles as f64 - 1.0;
                if ratio > worst[k + 1].0 {
                    worst[k + 1] = (ratio, r.name.clone());
                }
            }
        }
    }
    let ok = (1..steps.len()).all(|k| worst[k].0 <= if k == 1 { TELESCOPE_NEUTRAL } else { STEP_NOISE });
    let detail: Vec<String> = (1..steps.len())
        .map(|k| format!("{} worst {:+.2}% ({})", steps[k].0, worst[k].0 * 100.0, if worst[k].1.is_empty() { "-" } else { &worst[k].1 }))
        .collect();
    out.line("8 isolation ladder", ok, detail.join(", "));

    // 9: coloring on never slower than off; plus a randomized tag audit
    let slower: Vec<&str> = runs
        .iter()
        .flat_map(|(_, l)| l.iter())
        .filter(|r| r.cycles[idx(Variant::Barista)] > r.coloring_off)
        .map(|r| r.name.as_str())
        .collect();
    let (violations, mismatches) = coloring_stress();
    out.line(
        "9 coloring correctness",
        slower.is_empty() && violations == 0 && mismatches == 0,
        format!("tag violations {violations}, output mismatches {mismatches}, layers slower with coloring {slower:?}"),
    );
}

/// Uneven per-filter densities, no round robin and a shallow color pool so
/// PEs of a node run several input tags apart.
fn coloring_stress() -> (u64, usize) {
    (500..540u64)
        .into_par_iter()
        .map(|seed| {
            let mut l = common::random_layer(seed);
            l.filter_spread = 1.0;
            l.d = l.d.max(8);
            let w = Workload::generate(&l, ChunkSize::default()).unwrap();
            let oracle = dense_conv_oracle(&l, &l.generate_ifmaps().unwrap(), &l.generate_filters().unwrap()).unwrap();
            let mut cfg = desk(Variant::Barista);
            cfg.features = Features { round_robin: false, ..Features::ALL };
            cfg.output_buffer_depth = 2 + (seed % 3) as usize;
            let o = simulate(&w, &cfg).unwrap();
            (o.report.color_violations, (o.raw != oracle) as usize)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

const DETERMINISM_SPEC: &str = r#"
name = "determinism"
seeds = [3, 4]
presets = ["alexnet_like"]
variants = ["dense", "sparten", "synchronous", "barista"]

[[layers]]
name = "odd"
h = 9
w = 7
d = 40
k = 3
n = 12
stride = 2
ifmap_density = 0.3
filter_density = 0.6
"#;

fn report_bytes(workers: usize) -> Vec<(String, Vec<u8>)> {
    let spec = parse_spec(DETERMINISM_SPEC, "determinism").expect("valid spec");
    let dir = tempfile::tempdir().expect("tempdir");
    let mut files = Vec::new();
    let cells = sweep::run_sweep(&spec, workers).expect("sweep");
    files.extend(report::write_run(&spec.name, &cells, &spec.formats, dir.path()).expect("write"));
    let ladder = sweep::run_isolation(&spec, workers).expect("ladder");
    files.extend(report::write_isolation(&spec.name, &ladder, &spec.formats, dir.path()).expect("write"));
    let sens = sweep::run_sensitivity(&spec, workers).expect("sensitivity");
    files.extend(report::write_sensitivity(&spec.name, &sens, &spec.formats, dir.path()).expect("write"));
    files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir.path()).unwrap().display().to_string();
            (rel, std::fs::read(&p).expect("read back"))
        })
        .collect()
}

fn determinism(out: &mut Outcome) {
    let a = report_bytes(1);
    let b = report_bytes(3);
    let differ: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let ok = a.len() == b.len() && differ.is_empty();
    out.line("10 determinism", ok, format!("{} report files, 1 vs 3 workers, differing {differ:?}", a.len()));
}

fn main() {
    let mut out = Outcome { failed: Vec::new() };
    oracle_equivalence(&mut out);
    buffer_arithmetic(&mut out);
    telescope_default(&mut out);
    mac_conservation(&mut out);
    suite_criteria(&mut out);
    determinism(&mut out);
    if !out.failed.is_empty() {
        eprintln!("failed: {:?}", out.failed);
        std::process::exit(1);
    }
}
