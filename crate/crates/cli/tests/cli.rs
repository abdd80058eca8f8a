use std::process::Command;

use sparsim::{simulate, ArchConfig, ChunkSize, LayerSpec, Scale, SimReport, Variant, Workload};
use sparsim_cli::report::{self, aggregates, breakdown_plot, csv_string, results_table};
use sparsim_cli::spec::{emit_spec, ReportFormat};
use sparsim_cli::sweep::{self, CellResult};
use sparsim_cli::{load_spec, parse_spec, CliError, ExperimentSpec};

const SMALL: &str = r#"
name = "small"
seeds = [7]
variants = ["dense", "barista", "sparten"]

[[layers]]
name = "a"
h = 6
w = 6
d = 32
k = 3
n = 8
ifmap_density = 0.4
filter_density = 0.5
"#;

fn tiny_report(v: Variant) -> SimReport {
    let l = LayerSpec::new(4, 4, 16, 2, 4).with_densities(0.5, 0.5);
    let w = Workload::generate(&l, ChunkSize::default()).unwrap();
    simulate(&w, &ArchConfig::preset(v, Scale::Desk)).unwrap().report
}

fn cell(group: &str, layer: &str, variant: &str, report: &SimReport, dense: u64) -> CellResult {
    CellResult {
        group: group.into(),
        layer: layer.into(),
        seed: 1,
        variant: variant.into(),
        dense_cycles: dense,
        report: report.clone(),
    }
}

#[test]
fn alexnet_preset_expands_with_table_densities() {
    let s = parse_spec("name = \"a\"\npresets = [\"alexnet_like\"]\nvariants = [\"barista\"]\n", "t").unwrap();
    let groups = s.layer_groups(1);
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].layers.len(), 5);
    for l in &groups[0].layers {
        assert_eq!((l.filter_density, l.ifmap_density), (0.368, 0.473));
    }
}

#[test]
fn empty_variants_is_rejected() {
    let e = parse_spec("name = \"a\"\npresets = [\"vggnet_like\"]\nvariants = []\n", "t").unwrap_err();
    assert!(e.issues().iter().any(|i| i.message.contains("variants") && i.line == Some(3)), "{e}");
}

#[test]
fn all_problems_are_reported_together() {
    let text = "name = \"\"\nscale = \"huge\"\npresets = [\"lenet\"]\nvariants = [\"barista\", \"fast\"]\nformats = [\"xml\"]\n";
    let e = parse_spec(text, "spec.toml").unwrap_err();
    assert_eq!(e.issues().len(), 6, "{e}");
    assert!(e.to_string().contains("spec.toml:3:"));
}

#[test]
fn unknown_keys_are_rejected() {
    let e = parse_spec("name = \"a\"\npresets = [\"alexnet_like\"]\nvariant = [\"barista\"]\n", "t").unwrap_err();
    assert_eq!(e.issues()[0].line, Some(3), "{e}");
}

#[test]
fn emitted_specs_parse_back_equal() {
    let text = r#"
name = "rt"
seeds = [1, 5]
scale = "full"
output_dir = "out/rt"
formats = ["json", "csv"]
presets = ["resnet18_like"]
variants = ["ideal", "one_sided"]

[[layers]]
name = "x"
h = 5
w = 9
d = 24
k = 3
n = 4
stride = 2
batch = 2
ifmap_density = 0.25
filter_density = 0.75
filter_spread = 0.1
seed = 11

[[custom_variants]]
label = "narrow"
base = "barista"
ifgcs = 4
telescope = [3, 1]

[custom_variants.features]
coloring = false
"#;
    let a = parse_spec(text, "t").unwrap();
    let b = parse_spec(&emit_spec(&a), "emitted").unwrap();
    assert_eq!(a, b);
    for s in [ExperimentSpec::standard_suite(), b] {
        assert_eq!(parse_spec(&emit_spec(&s), "e").unwrap(), s);
    }
}

#[test]
fn load_spec_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.toml");
    std::fs::write(&p, SMALL).unwrap();
    assert_eq!(load_spec(&p).unwrap(), parse_spec(SMALL, "x").unwrap());
    assert!(load_spec(&dir.path().join("missing.toml")).is_err());
}

#[test]
fn suite_cardinality() {
    let presets = ["alexnet_like", "resnet18_like", "inception_v4_like", "vggnet_like", "resnet50_like"];
    let variants = ["dense", "one_sided", "sparten", "synchronous", "barista_no_opts", "barista", "ideal"];
    let d = tiny_report(Variant::Dense);
    let b = tiny_report(Variant::Barista);
    let mut cells = Vec::new();
    for p in presets {
        for layer in 0..3 {
            for v in variants {
                let r = if v == "dense" { &d } else { &b };
                cells.push(cell(p, &format!("{p}/{layer}"), v, r, d.total_cycles));
            }
        }
    }
    let aggs = aggregates(&cells);
    assert_eq!(aggs.len(), 35);
    let t = results_table(&cells);
    assert_eq!(t.rows.iter().filter(|r| r[1] == "aggregate").count(), 35);
    assert_eq!(t.rows.iter().filter(|r| r[1] == "cell").count(), 105);
    let want = d.total_cycles as f64 / b.total_cycles as f64;
    for a in &aggs {
        if a.variant == "dense" {
            assert_eq!(a.speedup_vs_dense, 1.0);
        } else {
            assert!((a.speedup_vs_dense - want).abs() < 1e-12);
        }
    }
}

#[test]
fn geomean_uses_every_cell() {
    let b = tiny_report(Variant::Barista);
    let cells = vec![cell("g", "g/0", "barista", &b, b.total_cycles * 4), cell("g", "g/1", "barista", &b, b.total_cycles)];
    assert!((aggregates(&cells)[0].speedup_vs_dense - 2.0).abs() < 1e-12);
}

#[test]
fn empty_results_give_header_only_csv() {
    let s = csv_string(&results_table(&[]));
    assert_eq!(s.lines().count(), 1);
    assert!(s.starts_with("schema_version,row_kind,group,layer,variant,seed,"));
}

#[test]
fn breakdown_bars_sum_to_one() {
    let spec = parse_spec(SMALL, "t").unwrap();
    let cells = sweep::run_sweep(&spec, 2).unwrap();
    let t = breakdown_plot(&aggregates(&cells));
    assert_eq!(t.rows.len(), 3);
    for r in &t.rows {
        let parts: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(parts.iter().all(|&p| p >= 0.0));
        assert!((parts.iter().sum::<f64>() - 1.0).abs() < 1e-5, "{r:?}");
    }
}

#[test]
fn single_row_round_trips_through_json() {
    let b = tiny_report(Variant::Barista);
    let cells = vec![cell("g", "g/0", "barista", &b, 1000)];
    let dir = tempfile::tempdir().unwrap();
    let files = report::write_run("one", &cells, &[ReportFormat::Json], dir.path()).unwrap();
    assert_eq!(files, vec![dir.path().join("results.json")]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    let back: SimReport = serde_json::from_value(v["cells"][0]["report"].clone()).unwrap();
    assert_eq!(back, b);
}

#[test]
fn sweep_rows_are_sorted_and_complete() {
    let mut spec = parse_spec(SMALL, "t").unwrap();
    spec.seeds = vec![2, 1];
    spec.presets = vec!["alexnet_like".into()];
    let cells = sweep::run_sweep(&spec, 3).unwrap();
    assert_eq!(cells.len(), (5 + 1) * 2 * 3);
    let keys: Vec<(String, String, u64)> = cells.iter().map(|c| (c.group.clone(), c.layer.clone(), c.seed)).collect();
    assert_eq!(keys[0], ("alexnet_like".into(), "alexnet_like/0".into(), 1));
    assert_eq!(keys[3], ("alexnet_like".into(), "alexnet_like/0".into(), 2));
    assert_eq!(cells.last().unwrap().group, "custom");
    assert!(cells.iter().all(|c| c.variant != "dense" || c.speedup() == 1.0));
}

#[test]
fn sensitivity_refetches_do_not_grow_with_buffers() {
    let spec = parse_spec(SMALL, "t").unwrap();
    let r = sweep::run_sensitivity(&spec, 1).unwrap();
    assert_eq!(r.len(), 3);
    assert!(r.windows(2).all(|w| w[0].buffer_bytes < w[1].buffer_bytes));
    let rpc: Vec<f64> = r.iter().map(|x| x.report.stats.refetches_per_chunk()).collect();
    assert!(rpc.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{rpc:?}");
}

#[test]
fn failing_cells_are_named() {
    let mut spec = parse_spec(SMALL, "t").unwrap();
    spec.layers[0].d = 0;
    match sweep::run_sweep(&spec, 1) {
        Err(CliError::Cells(f)) => {
            assert_eq!(f.len(), 1);
            assert!(f[0].cell.contains("custom layer a seed 7"), "{}", f[0].cell);
        }
        other => panic!("{other:?}"),
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparsim"))
}

#[test]
fn binary_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("s.toml");
    std::fs::write(&spec, SMALL).unwrap();
    let out = dir.path().join("out");
    let st = bin().args(["run", "--spec"]).arg(&spec).arg("--out").arg(&out).args(["--workers", "2"]).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["results.csv", "results.json", "plotdata/speedup.csv", "plotdata/breakdown.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let st = bin().args(["oracle-check", "--spec"]).arg(&spec).output().unwrap();
    assert!(st.status.success());
}

#[test]
fn binary_reports_spec_errors_with_lines() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    std::fs::write(&spec, "name = \"b\"\npresets = [\"lenet\"]\nvariants = []\n").unwrap();
    let st = bin().args(["run", "--spec"]).arg(&spec).output().unwrap();
    assert!(!st.status.success());
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("bad.toml:2:") && err.contains("bad.toml:3:"), "{err}");
    let st = bin().args(["run", "--workers", "0"]).output().unwrap();
    assert!(!st.status.success());
}
