//! CSV, JSON and plot-ready outputs of the three experiment kinds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparsim::{Breakdown, SimReport};

use crate::spec::ReportFormat;
use crate::sweep::{CellResult, LadderResult, SensitivityResult};
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Group label of the rows aggregated across every group.
pub const ALL_GROUPS: &str = "all";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn geomean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Rows grouped by key in first-seen order.
fn grouped<T, K: PartialEq + Clone>(items: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut out: Vec<(K, Vec<&T>)> = Vec::new();
    for it in items {
        let k = key(it);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(it),
            None => out.push((k, vec![it])),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub group: String,
    pub variant: String,
    pub cells: usize,
    pub total_cycles: u64,
    /// Geometric mean over cells; exactly 1 for the dense baseline.
    pub speedup_vs_dense: f64,
    pub breakdown: Breakdown,
    pub macs_executed: u64,
    pub matched_macs: u64,
    pub fetches: [u64; 2],
    pub refetches: u64,
    pub mean_refetches_per_chunk: f64,
    pub bytes_transferred: u64,
    pub mean_utilization: f64,
}

fn aggregate(group: &str, variant: &str, cells: &[&CellResult]) -> Aggregate {
    let mut breakdown = Breakdown::default();
    let mut fetches = [0; 2];
    for c in cells {
        breakdown.add(&c.report.breakdown);
        fetches[0] += c.report.stats.fetches[0];
        fetches[1] += c.report.stats.fetches[1];
    }
    let speedups: Vec<f64> = cells.iter().map(|c| c.speedup()).collect();
    let sum = |g: fn(&SimReport) -> u64| cells.iter().map(|c| g(&c.report)).sum::<u64>();
    Aggregate {
        group: group.to_string(),
        variant: variant.to_string(),
        cells: cells.len(),
        total_cycles: sum(|r| r.total_cycles),
        speedup_vs_dense: if variant == "dense" { 1.0 } else { geomean(&speedups) },
        breakdown,
        macs_executed: sum(|r| r.macs_executed),
        matched_macs: sum(|r| r.matched_macs),
        fetches,
        refetches: sum(|r| r.stats.total_refetches()),
        mean_refetches_per_chunk: mean(&cells.iter().map(|c| c.report.stats.refetches_per_chunk()).collect::<Vec<_>>()),
        bytes_transferred: sum(|r| r.stats.bytes_transferred),
        mean_utilization: mean(&cells.iter().map(|c| c.report.utilization()).collect::<Vec<_>>()),
    }
}

/// One aggregate per (group, variant).
pub fn aggregates(results: &[CellResult]) -> Vec<Aggregate> {
    grouped(results, |c| (c.group.clone(), c.variant.clone()))
        .into_iter()
        .map(|((g, v), cells)| aggregate(&g, &v, &cells))
        .collect()
}

/// One aggregate per variant over every group.
pub fn overall(results: &[CellResult]) -> Vec<Aggregate> {
    grouped(results, |c| c.variant.clone())
        .into_iter()
        .map(|(v, cells)| aggregate(ALL_GROUPS, &v, &cells))
        .collect()
}

const RESULT_HEADER: [&str; 22] = [
    "schema_version", "row_kind", "group", "layer", "variant", "seed", "cells", "total_cycles",
    "speedup_vs_dense", "nonzero_compute", "zero_compute", "barrier_loss", "bandwidth_delay", "other",
    "macs_executed", "matched_macs", "ifmap_fetches", "filter_fetches", "refetches", "refetches_per_chunk",
    "bytes_transferred", "utilization",
];

fn breakdown_cols(b: &Breakdown) -> [String; 5] {
    [b.nonzero_compute, b.zero_compute, b.barrier_loss, b.bandwidth_delay, b.other].map(|x| x.to_string())
}

pub fn results_table(results: &[CellResult]) -> Table {
    let mut t = Table::new(&RESULT_HEADER);
    for c in results {
        let r = &c.report;
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            "cell".into(),
            c.group.clone(),
            c.layer.clone(),
            c.variant.clone(),
            c.seed.to_string(),
            "1".into(),
            r.total_cycles.to_string(),
            f(c.speedup()),
        ];
        row.extend(breakdown_cols(&r.breakdown));
        row.extend([
            r.macs_executed.to_string(),
            r.matched_macs.to_string(),
            r.stats.fetches[0].to_string(),
            r.stats.fetches[1].to_string(),
            r.stats.total_refetches().to_string(),
            f(r.stats.refetches_per_chunk()),
            r.stats.bytes_transferred.to_string(),
            f(r.utilization()),
        ]);
        t.push(row);
    }
    for a in aggregates(results) {
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            "aggregate".into(),
            a.group.clone(),
            String::new(),
            a.variant.clone(),
            String::new(),
            a.cells.to_string(),
            a.total_cycles.to_string(),
            f(a.speedup_vs_dense),
        ];
        row.extend(breakdown_cols(&a.breakdown));
        row.extend([
            a.macs_executed.to_string(),
            a.matched_macs.to_string(),
            a.fetches[0].to_string(),
            a.fetches[1].to_string(),
            a.refetches.to_string(),
            f(a.mean_refetches_per_chunk),
            a.bytes_transferred.to_string(),
            f(a.mean_utilization),
        ]);
        t.push(row);
    }
    t
}

pub fn speedup_plot(aggs: &[Aggregate]) -> Table {
    let mut t = Table::new(&["group", "variant", "speedup_vs_dense"]);
    for a in aggs {
        t.push(vec![a.group.clone(), a.variant.clone(), f(a.speedup_vs_dense)]);
    }
    t
}

/// Stacked bars: each bar's five shares sum to one.
pub fn breakdown_plot(aggs: &[Aggregate]) -> Table {
    let mut t = Table::new(&["group", "variant", "nonzero_compute", "zero_compute", "barrier_loss", "bandwidth_delay", "other"]);
    for a in aggs {
        let mut row = vec![a.group.clone(), a.variant.clone()];
        row.extend(a.breakdown.fractions().map(f));
        t.push(row);
    }
    t
}

pub fn isolation_table(results: &[LadderResult]) -> Table {
    let mut t = Table::new(&[
        "schema_version", "group", "layer", "seed", "step_index", "step", "total_cycles", "speedup_vs_no_opts",
        "refetches_per_chunk", "bandwidth_delay_share", "barrier_loss_share",
    ]);
    let base = |r: &LadderResult| {
        results
            .iter()
            .find(|b| b.step_index == 0 && b.group == r.group && b.layer == r.layer && b.seed == r.seed)
            .map_or(r.report.total_cycles, |b| b.report.total_cycles)
    };
    for r in results {
        let fr = r.report.breakdown.fractions();
        t.push(vec![
            SCHEMA_VERSION.to_string(),
            r.group.clone(),
            r.layer.clone(),
            r.seed.to_string(),
            r.step_index.to_string(),
            r.step.to_string(),
            r.report.total_cycles.to_string(),
            f(base(r) as f64 / r.report.total_cycles.max(1) as f64),
            f(r.report.stats.refetches_per_chunk()),
            f(fr[3]),
            f(fr[2]),
        ]);
    }
    t
}

pub fn isolation_plot(results: &[LadderResult]) -> Table {
    let mut t = Table::new(&["group", "step_index", "step", "speedup_vs_no_opts"]);
    let table = isolation_table(results);
    let rows: Vec<&Vec<String>> = table.rows.iter().collect();
    for ((group, step_index, step), rs) in grouped(&rows, |r| (r[1].clone(), r[4].clone(), r[5].clone())) {
        let s: Vec<f64> = rs.iter().map(|r| r[7].parse().expect("formatted float")).collect();
        t.push(vec![group, step_index, step, f(geomean(&s))]);
    }
    t
}

pub fn sensitivity_table(results: &[SensitivityResult]) -> Table {
    let mut t = Table::new(&[
        "schema_version", "group", "layer", "seed", "scale", "per_node_buffer_mult", "shared_buffer_depth",
        "buffer_bytes", "total_cycles", "refetches", "refetches_per_chunk",
    ]);
    for r in results {
        t.push(vec![
            SCHEMA_VERSION.to_string(),
            r.group.clone(),
            r.layer.clone(),
            r.seed.to_string(),
            r.scale.to_string(),
            r.per_node_buffer_mult.to_string(),
            r.shared_buffer_depth.to_string(),
            r.buffer_bytes.to_string(),
            r.report.total_cycles.to_string(),
            r.report.stats.total_refetches().to_string(),
            f(r.report.stats.refetches_per_chunk()),
        ]);
    }
    t
}

pub fn refetch_plot(results: &[SensitivityResult]) -> Table {
    let mut t = Table::new(&["group", "scale", "buffer_bytes", "mean_refetches_per_chunk"]);
    for ((group, scale, bytes), rs) in grouped(results, |r| (r.group.clone(), r.scale, r.buffer_bytes)) {
        let m = mean(&rs.iter().map(|r| r.report.stats.refetches_per_chunk()).collect::<Vec<_>>());
        t.push(vec![group, scale.to_string(), bytes.to_string(), f(m)]);
    }
    t
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn csv_string(t: &Table) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&t.header).expect("in-memory write");
    for r in &t.rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn json_string<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct JsonCell<'a> {
    group: &'a str,
    layer: &'a str,
    seed: u64,
    variant: &'a str,
    speedup_vs_dense: f64,
    report: &'a SimReport,
}

#[derive(Serialize)]
struct JsonRun<'a> {
    schema_version: u32,
    experiment: &'a str,
    cells: Vec<JsonCell<'a>>,
    aggregates: Vec<Aggregate>,
}

/// Writes the formats requested and returns the files written.
pub fn write_run(experiment: &str, results: &[CellResult], formats: &[ReportFormat], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let aggs = aggregates(results);
    let mut bars = aggs.clone();
    if grouped(results, |c| c.group.clone()).len() > 1 {
        bars.extend(overall(results));
    }
    for fmt in formats {
        match fmt {
            ReportFormat::Csv => files.push((out.join("results.csv"), csv_string(&results_table(results)))),
            ReportFormat::Json => {
                let doc = JsonRun {
                    schema_version: SCHEMA_VERSION,
                    experiment,
                    cells: results
                        .iter()
                        .map(|c| JsonCell {
                            group: &c.group,
                            layer: &c.layer,
                            seed: c.seed,
                            variant: &c.variant,
                            speedup_vs_dense: c.speedup(),
                            report: &c.report,
                        })
                        .collect(),
                    aggregates: aggs.clone(),
                };
                files.push((out.join("results.json"), json_string(&doc)));
            }
            ReportFormat::Plotdata => {
                files.push((out.join("plotdata/speedup.csv"), csv_string(&speedup_plot(&bars))));
                files.push((out.join("plotdata/breakdown.csv"), csv_string(&breakdown_plot(&bars))));
            }
        }
    }
    emit(files)
}

#[derive(Serialize)]
struct JsonRows<'a> {
    schema_version: u32,
    experiment: &'a str,
    columns: &'a [&'static str],
    rows: &'a [Vec<String>],
}

fn write_table_kind(
    experiment: &str,
    stem: &str,
    table: Table,
    plot: (&str, Table),
    formats: &[ReportFormat],
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for fmt in formats {
        match fmt {
            ReportFormat::Csv => files.push((out.join(format!("{stem}.csv")), csv_string(&table))),
            ReportFormat::Json => {
                let doc = JsonRows { schema_version: SCHEMA_VERSION, experiment, columns: &table.header, rows: &table.rows };
                files.push((out.join(format!("{stem}.json")), json_string(&doc)));
            }
            ReportFormat::Plotdata => files.push((out.join(format!("plotdata/{}.csv", plot.0)), csv_string(&plot.1))),
        }
    }
    emit(files)
}

pub fn write_isolation(experiment: &str, results: &[LadderResult], formats: &[ReportFormat], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    write_table_kind(experiment, "isolation", isolation_table(results), ("isolation", isolation_plot(results)), formats, out)
}

pub fn write_sensitivity(
    experiment: &str,
    results: &[SensitivityResult],
    formats: &[ReportFormat],
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    write_table_kind(experiment, "sensitivity", sensitivity_table(results), ("refetch", refetch_plot(results)), formats, out)
}

fn emit(files: Vec<(PathBuf, String)>) -> Result<Vec<PathBuf>, CliError> {
    for (p, body) in &files {
        write(p, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
