//! Cycle-level simulation of a layer on a grid variant.
//!
//! The node-based variants run an event-skipping global cycle loop
//! ([`sim`]); dense and ideal are closed-form.

pub mod schedule;
pub mod sim;

use serde::{Deserialize, Serialize};

use crate::arch::{reduce_latency, ArchConfig, Features, Organization, Sidedness};
use crate::balance::{greedy_balance, BalanceMode, BalancePlan};
use crate::error::{Result, SimError};
use crate::interconnect::BandwidthStats;
use crate::tensor::{
    activate_output, compress, decompress, ChunkSize, ConvOutput, DenseTensor, Dims3, LayerSpec,
    SparseTensor,
};

use schedule::Prepared;

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub layer: LayerSpec,
    pub ifmaps: Vec<SparseTensor>,
    pub filters: Vec<SparseTensor>,
    pub plan: BalancePlan,
}

impl Workload {
    /// Generates the layer's synthetic tensors and a GB-S plan.
    pub fn generate(layer: &LayerSpec, chunk: ChunkSize) -> Result<Self> {
        layer.validate()?;
        let ifmaps = layer.generate_ifmaps()?;
        let filters = layer.generate_filters()?;
        Self::from_dense(layer, &ifmaps, &filters, chunk)
    }

    pub fn from_dense(
        layer: &LayerSpec,
        ifmaps: &[DenseTensor],
        filters: &[DenseTensor],
        chunk: ChunkSize,
    ) -> Result<Self> {
        let w = Self {
            layer: layer.clone(),
            ifmaps: ifmaps.iter().map(|t| compress(t, chunk)).collect(),
            filters: filters.iter().map(|t| compress(t, chunk)).collect(),
            plan: greedy_balance(&[], BalanceMode::GbsVariant),
        };
        let plan = greedy_balance(&w.filter_densities(), BalanceMode::GbsVariant);
        let w = Self { plan, ..w };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        let l = &self.layer;
        if self.ifmaps.len() != l.batch || self.filters.len() != l.n {
            return Err(SimError::Dimension(format!(
                "{} input maps and {} filters for batch {} and n {}",
                self.ifmaps.len(),
                self.filters.len(),
                l.batch,
                l.n
            )));
        }
        if self.ifmaps.iter().any(|t| t.dims != l.input_dims())
            || self.filters.iter().any(|t| t.dims != l.filter_dims())
        {
            return Err(SimError::Dimension(format!("tensor shapes do not match layer {}", l.name)));
        }
        let chunk = self.chunk_size();
        if self.ifmaps.iter().chain(&self.filters).any(|t| t.chunk_size != chunk) {
            return Err(SimError::Dimension("mixed chunk sizes".into()));
        }
        Ok(())
    }

    pub fn chunk_size(&self) -> ChunkSize {
        self.filters.first().map(|f| f.chunk_size).unwrap_or_default()
    }

    pub fn filter_densities(&self) -> Vec<f64> {
        self.filters.iter().map(|f| f.density()).collect()
    }

    pub fn dense_ifmaps(&self) -> Result<Vec<DenseTensor>> {
        self.ifmaps.iter().map(decompress).collect()
    }

    pub fn dense_filters(&self) -> Result<Vec<DenseTensor>> {
        self.filters.iter().map(decompress).collect()
    }

    /// The stored plan when its mode matches, otherwise one rebuilt for `mode`.
    pub fn plan_for(&self, mode: BalanceMode) -> BalancePlan {
        if self.plan.mode == mode {
            self.plan.clone()
        } else {
            greedy_balance(&self.filter_densities(), mode)
        }
    }

    pub fn output_dims(&self) -> Dims3 {
        Dims3::new(self.layer.out_h(), self.layer.out_w(), self.layer.n)
    }
}

/// PE-cycles per bucket; the buckets sum to `total_cycles * PEs`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub nonzero_compute: u64,
    pub zero_compute: u64,
    pub barrier_loss: u64,
    pub bandwidth_delay: u64,
    pub other: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.nonzero_compute + self.zero_compute + self.barrier_loss + self.bandwidth_delay + self.other
    }

    pub fn add(&mut self, o: &Breakdown) {
        self.nonzero_compute += o.nonzero_compute;
        self.zero_compute += o.zero_compute;
        self.barrier_loss += o.barrier_loss;
        self.bandwidth_delay += o.bandwidth_delay;
        self.other += o.other;
    }

    /// Buckets as fractions of the total, in field order.
    pub fn fractions(&self) -> [f64; 5] {
        let t = self.total().max(1) as f64;
        [
            self.nonzero_compute as f64 / t,
            self.zero_compute as f64 / t,
            self.barrier_loss as f64 / t,
            self.bandwidth_delay as f64 / t,
            self.other as f64 / t,
        ]
    }
}

/// Per-PE time ledger accumulated during simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeLedger {
    pub nonzero: u64,
    pub zero: u64,
    pub barrier: u64,
    pub bandwidth: u64,
    pub overhead: u64,
    /// End of the PE's last step.
    pub last_end: u64,
}

/// Folds per-PE ledgers into the report breakdown. Time between a PE's last
/// step and the last PE's last step is imbalance (barrier loss); time after
/// that is the reduction and conversion drain.
pub fn breakdown_attribution(trace: &[PeLedger], total_cycles: u64) -> Breakdown {
    let compute_end = trace.iter().map(|p| p.last_end).max().unwrap_or(0).min(total_cycles);
    let mut b = Breakdown::default();
    for p in trace {
        b.nonzero_compute += p.nonzero;
        b.zero_compute += p.zero;
        b.bandwidth_delay += p.bandwidth;
        b.barrier_loss += p.barrier + compute_end - p.last_end.min(compute_end);
        b.other += p.overhead + total_cycles - compute_end;
    }
    b
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyMarks {
    pub input_slots_max: usize,
    pub filter_slots_max: usize,
    pub colors_max: usize,
    pub shared_buffer_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub variant: String,
    pub layer: String,
    pub total_cycles: u64,
    pub breakdown: Breakdown,
    pub macs_executed: u64,
    /// Nonzero pairs among the executed MACs.
    pub matched_macs: u64,
    pub pes: usize,
    pub stats: BandwidthStats,
    /// Completion cycle of each IFGC, cluster-major.
    pub column_finish: Vec<u64>,
    pub occupancy: OccupancyMarks,
    pub color_violations: u64,
}

impl SimReport {
    pub fn utilization(&self) -> f64 {
        if self.total_cycles == 0 {
            return 0.0;
        }
        self.breakdown.nonzero_compute as f64 / (self.total_cycles as f64 * self.pes as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub report: SimReport,
    /// Pre-activation outputs per input map, channel-minor in filter order.
    pub raw: Vec<ConvOutput>,
}

impl SimOutput {
    /// ReLU-saturated, recompressed outputs for the next layer.
    pub fn activations(&self, chunk: ChunkSize) -> Vec<SparseTensor> {
        self.raw.iter().map(|o| activate_output(o, chunk)).collect()
    }
}

pub fn simulate(workload: &Workload, config: &ArchConfig) -> Result<SimOutput> {
    config.validate()?;
    workload.validate()?;
    if workload.chunk_size() != config.chunk_size {
        return Err(SimError::Dimension(format!(
            "workload chunk {} vs config chunk {}",
            workload.chunk_size().get(),
            config.chunk_size.get()
        )));
    }
    let prep = Prepared::new(workload)?;
    match config.variant.organization() {
        Organization::Analytic if config.variant.sidedness() == Sidedness::Dense => {
            dense_run(workload, &prep, config)
        }
        Organization::Analytic => ideal_run(workload, &prep, config),
        _ => sim::run(workload, &prep, config),
    }
}

/// Perfectly pipelined systolic schedule: one dense MAC per MAC unit per
/// cycle plus a fill and drain of one array side each.
pub fn dense_schedule(workload: &Workload, config: &ArchConfig) -> Result<u64> {
    config.validate()?;
    Ok(dense_cycles(workload.layer.dense_macs(), config.total_macs() as u64))
}

fn dense_cycles(dense_macs: u64, macs: u64) -> u64 {
    let side = (macs as f64).sqrt().ceil() as u64;
    dense_macs.div_ceil(macs) + 2 * side
}

/// Functional outputs and the matched-pair total over every chunk pair,
/// plus the per-sub-chunk busy cycles used by the ideal bound.
struct Functional {
    raw: Vec<ConvOutput>,
    matched: u64,
    busy: u64,
}

fn functional(workload: &Workload, prep: &Prepared, pes: usize) -> Functional {
    let n = workload.layer.n;
    let dims = workload.output_dims();
    let mut raw = vec![ConvOutput::zeros(dims); workload.layer.batch];
    let width = workload.chunk_size().get() / pes;
    let (mut matched, mut busy) = (0u64, 0u64);
    for (wg, win) in prep.windows.iter().enumerate() {
        let (img, local) = (wg / prep.windows_per_map, wg % prep.windows_per_map);
        for f in 0..n {
            let mut acc = 0i32;
            for (a, b) in win.iter().zip(&prep.filters[f]) {
                for p in 0..pes {
                    let (v, m) = a.sub_dot(b, p * width, width);
                    acc = acc.wrapping_add(v);
                    matched += m as u64;
                    busy += m.max(1) as u64;
                }
            }
            raw[img].values[local * n + f] = acc;
        }
    }
    Functional { raw, matched, busy }
}

fn base_report(workload: &Workload, config: &ArchConfig) -> SimReport {
    SimReport {
        variant: config.variant.name().to_string(),
        layer: workload.layer.name.clone(),
        total_cycles: 0,
        breakdown: Breakdown::default(),
        macs_executed: 0,
        matched_macs: 0,
        pes: config.total_macs(),
        stats: BandwidthStats::default(),
        column_finish: Vec::new(),
        occupancy: OccupancyMarks::default(),
        color_violations: 0,
    }
}

fn dense_run(workload: &Workload, prep: &Prepared, config: &ArchConfig) -> Result<SimOutput> {
    let f = functional(workload, prep, 1);
    let dense = workload.layer.dense_macs();
    let total = dense_cycles(dense, config.total_macs() as u64);
    let pe_cycles = total * config.total_macs() as u64;
    let mut report = base_report(workload, config);
    report.total_cycles = total;
    report.macs_executed = dense;
    report.matched_macs = f.matched;
    report.breakdown = Breakdown {
        nonzero_compute: f.matched,
        zero_compute: dense - f.matched,
        other: pe_cycles - dense,
        ..Breakdown::default()
    };
    Ok(SimOutput { report, raw: f.raw })
}

/// Infinite bandwidth and buffering: the total sub-chunk work spread evenly
/// over every PE after one fetch and one match ramp.
fn ideal_run(workload: &Workload, prep: &Prepared, config: &ArchConfig) -> Result<SimOutput> {
    let pes = config.total_macs() as u64;
    let f = functional(workload, prep, config.pes_per_node);
    let work = f.busy * config.mac_latency;
    let total = if work == 0 {
        0
    } else {
        config.cache_latency + config.match_latency + work.div_ceil(pes) + reduce_latency(config.pes_per_node) + 1
    };
    let mut report = base_report(workload, config);
    report.total_cycles = total;
    report.macs_executed = f.matched;
    report.matched_macs = f.matched;
    let nonzero = f.matched * config.mac_latency;
    report.breakdown = Breakdown {
        nonzero_compute: nonzero,
        other: total * pes - nonzero,
        ..Breakdown::default()
    };
    Ok(SimOutput { report, raw: f.raw })
}

/// The cumulative feature ladder: base, +telescoping and snarfing,
/// +coloring, +hierarchical buffering, +round robin.
pub fn feature_ladder() -> Vec<(&'static str, Features)> {
    let mut f = Features::NONE;
    let mut out = vec![("no_opts", f)];
    f.telescoping = true;
    f.snarfing = true;
    out.push(("+telescoping", f));
    f.coloring = true;
    out.push(("+coloring", f));
    f.hierarchical_buffering = true;
    out.push(("+hierarchical", f));
    f.round_robin = true;
    out.push(("+round_robin", f));
    out
}

pub fn isolate_features(workload: &Workload, base_config: &ArchConfig) -> Result<Vec<SimReport>> {
    feature_ladder()
        .into_iter()
        .map(|(_, features)| {
            let config = base_config.clone().with_features(features);
            simulate(workload, &config).map(|o| o.report)
        })
        .collect()
}
