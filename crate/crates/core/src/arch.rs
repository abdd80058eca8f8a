//! Static architecture description: variants and their presets, grid
//! construction, buffer-budget arithmetic, output-buffer coloring and the
//! node adder tree.

use serde::{Deserialize, Serialize};

use crate::balance::{BalanceMode, TelescopeSpec};
use crate::error::{config_err, Result};
use crate::tensor::ChunkSize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    OneSided,
    Sparten,
    Synchronous,
    BaristaNoOpts,
    Barista,
    UnlimitedBuffer,
    Ideal,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Dense,
        Variant::OneSided,
        Variant::Sparten,
        Variant::Synchronous,
        Variant::BaristaNoOpts,
        Variant::Barista,
        Variant::UnlimitedBuffer,
        Variant::Ideal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::OneSided => "one_sided",
            Variant::Sparten => "sparten",
            Variant::Synchronous => "synchronous",
            Variant::BaristaNoOpts => "barista_no_opts",
            Variant::Barista => "barista",
            Variant::UnlimitedBuffer => "unlimited_buffer",
            Variant::Ideal => "ideal",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn organization(self) -> Organization {
        match self {
            Variant::Dense | Variant::Ideal => Organization::Analytic,
            Variant::OneSided | Variant::Sparten => Organization::SmallClusters,
            Variant::Synchronous | Variant::UnlimitedBuffer => Organization::Broadcast,
            Variant::BaristaNoOpts | Variant::Barista => Organization::BarrierFree,
        }
    }

    pub fn sidedness(self) -> Sidedness {
        match self {
            Variant::Dense => Sidedness::Dense,
            Variant::OneSided => Sidedness::OneSided,
            _ => Sidedness::TwoSided,
        }
    }

    pub fn is_two_sided(self) -> bool {
        self.sidedness() == Sidedness::TwoSided
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How data reaches the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Organization {
    /// Closed-form timing, no event loop.
    Analytic,
    /// Small clusters: one input broadcast per cluster, filters fetched per lane.
    SmallClusters,
    /// Input broadcast down each IFGC and filter broadcast along each FGR.
    Broadcast,
    /// Independent asynchronous fetches, optionally combined and snarfed.
    BarrierFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sidedness {
    Dense,
    OneSided,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Features {
    pub telescoping: bool,
    pub snarfing: bool,
    pub coloring: bool,
    pub round_robin: bool,
    pub hierarchical_buffering: bool,
}

impl Features {
    pub const NONE: Features = Features {
        telescoping: false,
        snarfing: false,
        coloring: false,
        round_robin: false,
        hierarchical_buffering: false,
    };
    pub const ALL: Features = Features {
        telescoping: true,
        snarfing: true,
        coloring: true,
        round_robin: true,
        hierarchical_buffering: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub clusters: usize,
    pub fgrs: usize,
    pub ifgcs: usize,
    pub pes_per_node: usize,
    pub chunk_size: ChunkSize,
    pub shared_buffer_depth: usize,
    pub per_node_buffer_mult: usize,
    /// Chunk slots per node without hierarchical buffering (double buffering).
    pub flat_buffer_slots: usize,
    pub output_buffer_depth: usize,
    pub filter_temporal_reuse: usize,
    pub cache_banks: usize,
    pub cache_latency: u64,
    pub mac_latency: u64,
    pub match_latency: u64,
    pub shared_buffer_latency: u64,
    pub features: Features,
    pub telescope: TelescopeSpec,
    pub balance: BalanceMode,
}

/// Node buffer slots standing in for unbounded buffering.
pub const UNLIMITED_SLOTS: usize = 64;

impl ArchConfig {
    pub fn preset(variant: Variant, scale: Scale) -> ArchConfig {
        let full = scale == Scale::Full;
        let mut c = ArchConfig {
            variant,
            clusters: if full { 4 } else { 2 },
            fgrs: if full { 64 } else { 8 },
            ifgcs: if full { 32 } else { 4 },
            pes_per_node: 4,
            chunk_size: ChunkSize::default(),
            shared_buffer_depth: 16,
            per_node_buffer_mult: 3,
            flat_buffer_slots: 4,
            output_buffer_depth: 16,
            filter_temporal_reuse: 16,
            cache_banks: if full { 32 } else { 8 },
            cache_latency: 20,
            mac_latency: 1,
            match_latency: 1,
            shared_buffer_latency: 1,
            features: Features::NONE,
            telescope: TelescopeSpec::Default,
            balance: BalanceMode::GbsVariant,
        };
        match variant {
            Variant::Dense => {
                // 16K MACs x 2 clusters at full scale
                c.clusters = 2;
                c.fgrs = if full { 128 } else { 16 };
                c.ifgcs = if full { 128 } else { 8 };
                c.pes_per_node = 1;
                c.cache_banks = if full { 8 } else { 2 };
                c.balance = BalanceMode::None;
            }
            Variant::OneSided | Variant::Sparten => {
                // 32-MAC clusters, 1K of them at full scale
                c.clusters = if full { 1024 } else { 8 };
                c.fgrs = 32;
                c.ifgcs = 1;
                c.pes_per_node = 1;
                c.balance = if variant == Variant::Sparten {
                    BalanceMode::SpartenGbs
                } else {
                    BalanceMode::None
                };
            }
            Variant::Synchronous => {}
            Variant::UnlimitedBuffer => {
                c.flat_buffer_slots = UNLIMITED_SLOTS;
                c.features.coloring = true;
                c.output_buffer_depth = UNLIMITED_SLOTS;
            }
            Variant::BaristaNoOpts => {}
            Variant::Barista | Variant::Ideal => {
                c.features = Features::ALL;
            }
        }
        c
    }

    pub fn total_macs(&self) -> usize {
        self.clusters * self.fgrs * self.ifgcs * self.pes_per_node
    }

    pub fn macs_per_cluster(&self) -> usize {
        self.fgrs * self.ifgcs * self.pes_per_node
    }

    pub fn total_nodes(&self) -> usize {
        self.clusters * self.fgrs * self.ifgcs
    }

    pub fn subchunk_width(&self) -> usize {
        self.chunk_size.get() / self.pes_per_node
    }

    /// Filters co-located on one node.
    pub fn filters_per_node(&self) -> usize {
        if self.balance == BalanceMode::SpartenGbs {
            2
        } else {
            1
        }
    }

    pub fn input_slots(&self) -> usize {
        if self.features.hierarchical_buffering {
            self.per_node_buffer_mult
        } else {
            self.flat_buffer_slots
        }
    }

    /// Input chunks a node may have requested but not yet released. Under
    /// hierarchical buffering a node can stage half the shared IFGC buffer
    /// ahead of its own slots.
    pub fn input_window(&self) -> usize {
        if self.features.hierarchical_buffering {
            self.per_node_buffer_mult + self.shared_buffer_depth / 2
        } else {
            self.flat_buffer_slots
        }
    }

    pub fn filter_slots(&self) -> usize {
        self.input_slots() * self.filters_per_node()
    }

    /// Live output colors per node; 1 degenerates to a per-step barrier.
    pub fn color_depth(&self) -> usize {
        if self.features.coloring {
            self.output_buffer_depth
        } else {
            1
        }
    }

    pub fn with_features(mut self, features: Features) -> Self {
        self.features = features;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.fgrs == 0 || self.ifgcs == 0 || self.pes_per_node == 0 {
            return config_err("grid dimensions must be positive");
        }
        if !self.pes_per_node.is_power_of_two() || self.pes_per_node > self.chunk_size.get() {
            return config_err(format!(
                "{} PEs per node cannot split a {}-cell chunk evenly",
                self.pes_per_node,
                self.chunk_size.get()
            ));
        }
        if self.cache_banks == 0 {
            return config_err("at least one cache bank is required");
        }
        if self.filter_temporal_reuse == 0 || self.output_buffer_depth == 0 {
            return config_err("temporal reuse and output buffer depth must be positive");
        }
        if self.filter_temporal_reuse > self.output_buffer_depth.max(UNLIMITED_SLOTS) {
            return config_err("temporal reuse exceeds the chunk-output buffer");
        }
        if self.input_slots() == 0 {
            return config_err("node buffers need at least one slot");
        }
        if self.features.hierarchical_buffering && self.shared_buffer_depth == 0 {
            return config_err("hierarchical buffering needs a shared buffer");
        }
        if self.mac_latency == 0 {
            return config_err("mac latency must be at least one cycle");
        }
        Ok(())
    }
}

/// Adder-tree latency: `ceil(log2(pes))` cycles.
pub fn reduce_latency(pes_per_node: usize) -> u64 {
    pes_per_node.next_power_of_two().trailing_zeros() as u64
}

/// Pairwise reduction of per-PE sub-chunk accumulators.
pub fn adder_tree_reduce(subchunk_accs: &[i32]) -> i32 {
    let mut level: Vec<i32> = subchunk_accs.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| p.iter().fold(0i32, |a, &b| a.wrapping_add(b)))
            .collect();
    }
    level.first().copied().unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferScheme {
    Flat,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferBudget {
    pub scheme: BufferScheme,
    pub per_pe_bytes: f64,
    pub per_fgr_bytes: u64,
    pub per_ifgc_bytes: u64,
    pub per_cluster_bytes: u64,
    pub total_bytes: u64,
}

pub const KB: f64 = 1024.0;
pub const MB: f64 = 1024.0 * 1024.0;

/// Byte budget for the configured buffering scheme. Output cells count one
/// byte each (post-conversion width).
pub fn buffer_accounting(config: &ArchConfig) -> BufferBudget {
    let chunk = config.chunk_size.get() as u64;
    let mask = config.chunk_size.mask_bytes() as u64;
    let pes = config.pes_per_node as u64;
    let fgrs = config.fgrs as u64;
    let ifgcs = config.ifgcs as u64;
    let clusters = config.clusters as u64;
    let total_pes = (config.total_macs()) as f64;
    if config.features.hierarchical_buffering {
        let sub = chunk / pes;
        let sub_mask = sub / 8;
        let shared = (mask + chunk) * config.shared_buffer_depth as u64;
        let per_node = ((mask + chunk) + (sub_mask + sub) * pes) * config.per_node_buffer_mult as u64;
        let outputs = (pes + 1) * config.output_buffer_depth as u64;
        let per_ifgc = shared + (per_node + outputs) * fgrs;
        let total = per_ifgc * ifgcs * clusters;
        BufferBudget {
            scheme: BufferScheme::Hierarchical,
            per_pe_bytes: total as f64 / total_pes,
            per_fgr_bytes: per_ifgc * ifgcs / fgrs,
            per_ifgc_bytes: per_ifgc,
            per_cluster_bytes: per_ifgc * ifgcs,
            total_bytes: total,
        }
    } else {
        let per_node = ((mask + chunk) * 2 + 1) * config.flat_buffer_slots as u64;
        let per_fgr = per_node * ifgcs;
        let total = per_fgr * fgrs * clusters;
        BufferBudget {
            scheme: BufferScheme::Flat,
            per_pe_bytes: total as f64 / total_pes,
            per_fgr_bytes: per_fgr,
            per_ifgc_bytes: per_fgr * fgrs / ifgcs,
            per_cluster_bytes: per_fgr * fgrs,
            total_bytes: total,
        }
    }
}

/// Position of one node in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub cluster: usize,
    pub fgr: usize,
    pub ifgc: usize,
}

/// Colored sub-chunk output accumulators of one node.
#[derive(Debug, Clone)]
pub struct ColorPool {
    depth: usize,
    slots: Vec<Option<ColorSlot>>,
    pub violations: u64,
    pub high_water: usize,
}

#[derive(Debug, Clone)]
struct ColorSlot {
    tag: u64,
    partials: Vec<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorGrant {
    Buffer(usize),
    Stall,
}

impl ColorPool {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            slots: vec![None; depth],
            violations: 0,
            high_water: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn live(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Tag width in bits for this many colors.
    pub fn tag_bits(&self) -> u32 {
        self.depth.next_power_of_two().trailing_zeros()
    }

    pub fn acquire(&mut self, input_tag: u64, pes: usize) -> ColorGrant {
        if let Some(i) = self.slot_of(input_tag) {
            return ColorGrant::Buffer(i);
        }
        match self.slots.iter().position(|s| s.is_none()) {
            Some(i) => {
                self.slots[i] = Some(ColorSlot {
                    tag: input_tag,
                    partials: vec![0; pes],
                });
                self.high_water = self.high_water.max(self.live());
                ColorGrant::Buffer(i)
            }
            None => ColorGrant::Stall,
        }
    }

    pub fn slot_of(&self, input_tag: u64) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| matches!(s, Some(c) if c.tag == input_tag))
    }

    /// Adds one PE's accumulator to a colored buffer, auditing the tag.
    pub fn contribute(&mut self, buffer: usize, input_tag: u64, pe: usize, value: i32) {
        match self.slots[buffer].as_mut() {
            Some(slot) if slot.tag == input_tag => {
                slot.partials[pe] = slot.partials[pe].wrapping_add(value);
            }
            _ => self.violations += 1,
        }
    }

    /// Frees the buffer and yields its per-PE accumulators for reduction.
    pub fn release(&mut self, buffer: usize) -> Vec<i32> {
        self.slots[buffer].take().map(|s| s.partials).unwrap_or_default()
    }
}

/// Grants a colored accumulator for `input_tag`, or a stall when every color
/// is live.
pub fn acquire_color(node: &mut NodeState, input_tag: u64) -> ColorGrant {
    let pes = node.pes;
    node.colors.acquire(input_tag, pes)
}

/// Buffer and color state of one node.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub pes: usize,
    pub input_slots: usize,
    pub filter_slots: usize,
    pub input_occupancy: usize,
    pub filter_occupancy: usize,
    pub input_high_water: usize,
    pub filter_high_water: usize,
    pub colors: ColorPool,
    pub pe_tags: Vec<Option<u64>>,
    pub current_filter: Option<usize>,
}

impl NodeState {
    pub fn new(id: NodeId, config: &ArchConfig) -> Self {
        Self {
            id,
            pes: config.pes_per_node,
            input_slots: config.input_slots(),
            filter_slots: config.filter_slots(),
            input_occupancy: 0,
            filter_occupancy: 0,
            input_high_water: 0,
            filter_high_water: 0,
            colors: ColorPool::new(config.color_depth()),
            pe_tags: vec![None; config.pes_per_node],
            current_filter: None,
        }
    }

    pub fn set_input_occupancy(&mut self, n: usize) {
        debug_assert!(n <= self.input_slots);
        self.input_occupancy = n;
        self.input_high_water = self.input_high_water.max(n);
    }

    pub fn set_filter_occupancy(&mut self, n: usize) {
        debug_assert!(n <= self.filter_slots);
        self.filter_occupancy = n;
        self.filter_high_water = self.filter_high_water.max(n);
    }
}

#[derive(Debug, Clone)]
pub struct ClusterGrid {
    pub clusters: usize,
    pub fgrs: usize,
    pub ifgcs: usize,
    pub pes_per_node: usize,
    pub nodes: Vec<NodeState>,
}

impl ClusterGrid {
    pub fn total_macs(&self) -> usize {
        self.nodes.len() * self.pes_per_node
    }

    #[inline]
    pub fn index(&self, id: NodeId) -> usize {
        (id.cluster * self.ifgcs + id.ifgc) * self.fgrs + id.fgr
    }
}

/// Nodes are laid out cluster-major, then IFGC, then FGR, so one IFGC is a
/// contiguous range.
pub fn build_grid(config: &ArchConfig) -> Result<ClusterGrid> {
    config.validate()?;
    let mut nodes = Vec::with_capacity(config.total_nodes());
    for cluster in 0..config.clusters {
        for ifgc in 0..config.ifgcs {
            for fgr in 0..config.fgrs {
                nodes.push(NodeState::new(NodeId { cluster, fgr, ifgc }, config));
            }
        }
    }
    Ok(ClusterGrid {
        clusters: config.clusters,
        fgrs: config.fgrs,
        ifgcs: config.ifgcs,
        pes_per_node: config.pes_per_node,
        nodes,
    })
}
