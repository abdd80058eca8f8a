//! Static dataflow: which node computes which (window, filter, chunk) step,
//! in what order, and which buffered items each step consumes.

use crate::arch::ArchConfig;
use crate::balance::{BalanceMode, BalancePlan};
use crate::error::Result;
use crate::tensor::{window_chunks, SparseChunk};

use super::Workload;

/// Chunked operands in im2col form.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub chunks_per_window: usize,
    pub windows_per_map: usize,
    /// `[global window][chunk]`, global window = image * windows_per_map + window.
    pub windows: Vec<Vec<SparseChunk>>,
    /// `[filter][chunk]`
    pub filters: Vec<Vec<SparseChunk>>,
}

impl Prepared {
    pub fn new(workload: &Workload) -> Result<Self> {
        let layer = &workload.layer;
        let dense = workload.dense_ifmaps()?;
        let chunk = workload.chunk_size();
        let mut windows = Vec::with_capacity(dense.len() * layer.windows_per_map());
        for map in &dense {
            for oy in 0..layer.out_h() {
                for ox in 0..layer.out_w() {
                    windows.push(window_chunks(map, layer, oy, ox, chunk));
                }
            }
        }
        let filters = workload.filters.iter().map(|f| f.chunks.clone()).collect();
        Ok(Self {
            chunks_per_window: layer.chunks_per_window(chunk),
            windows_per_map: layer.windows_per_map(),
            windows,
            filters,
        })
    }

    pub fn input_chunk_id(&self, window: usize, ci: usize) -> u64 {
        (ci * self.windows.len() + window) as u64
    }

    pub fn filter_chunk_id(&self, filter: usize, ci: usize) -> u64 {
        (self.windows.len() * self.chunks_per_window + filter * self.chunks_per_window + ci) as u64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub item: u32,
    pub unit: u32,
    pub window: u32,
    pub filter: u32,
    pub ci: u32,
    pub last_chunk: bool,
}

/// A buffered input chunk.
#[derive(Debug, Clone, Copy)]
pub struct Item {
    /// Residency key: the chunk within one tile pass.
    pub key: u64,
    pub chunk_id: u64,
    pub window: u32,
    pub ci: u32,
    pub last_step: u32,
    pub consumers: u32,
}

/// A buffered filter unit: the chunk `ci` of every filter on the node.
#[derive(Debug, Clone, Copy)]
pub struct Unit {
    pub key: u64,
    pub chunk_id: u64,
    pub filters: [u32; 2],
    pub nf: u8,
    pub ci: u32,
    pub last_step: u32,
    pub consumers: u32,
}

impl Unit {
    pub fn filters(&self) -> &[u32] {
        &self.filters[..self.nf as usize]
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeSched {
    pub steps: Vec<Step>,
    pub items: Vec<Item>,
    pub units: Vec<Unit>,
}

/// One broadcast sequence: items in order with the nodes that take them.
#[derive(Debug, Clone, Default)]
pub struct Broadcast {
    pub keys: Vec<u64>,
    pub consumers: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub nodes: Vec<NodeSched>,
    /// Per column (cluster * ifgcs + ifgc), input sequence.
    pub column_inputs: Vec<Broadcast>,
    /// Per row group (cluster * fgrs + fgr), filter sequence.
    pub row_filters: Vec<Broadcast>,
    pub tiles: usize,
}

/// Filters held by each row for tile `t` at window-group sequence `j`.
pub fn tile_rows(plan: &BalancePlan, n: usize, rows: usize, t: usize, j: usize) -> Vec<Vec<usize>> {
    match plan.mode {
        BalanceMode::SpartenGbs => plan
            .pairs
            .iter()
            .skip(t * rows)
            .take(rows)
            .map(|&(a, b)| b.map_or(vec![a], |b| vec![a, b]))
            .collect(),
        BalanceMode::GbsVariant => {
            let tile = &plan.sorted_filter_ids[(t * rows).min(n)..((t + 1) * rows).min(n)];
            plan.tile_assignment(tile, j).into_iter().map(|f| vec![f]).collect()
        }
        BalanceMode::None => ((t * rows).min(n)..((t + 1) * rows).min(n)).map(|f| vec![f]).collect(),
    }
}

pub fn tile_count(plan: &BalancePlan, n: usize, rows: usize) -> usize {
    match plan.mode {
        BalanceMode::SpartenGbs => plan.pairs.len().div_ceil(rows),
        _ => n.div_ceil(rows),
    }
}

/// Windows assigned to each column, striped in global window order.
pub fn column_windows(total_windows: usize, columns: usize) -> Vec<Vec<usize>> {
    let mut cols = vec![Vec::new(); columns];
    for w in 0..total_windows {
        cols[w % columns].push(w);
    }
    cols
}

/// Splits a column's windows into `groups` near-equal consecutive groups.
pub fn split_groups(windows: &[usize], groups: usize) -> Vec<&[usize]> {
    let len = windows.len();
    (0..groups)
        .map(|g| &windows[g * len / groups..(g + 1) * len / groups])
        .collect()
}

pub fn node_index(config: &ArchConfig, cluster: usize, fgr: usize, ifgc: usize) -> usize {
    (cluster * config.ifgcs + ifgc) * config.fgrs + fgr
}

pub fn build(prep: &Prepared, plan: &BalancePlan, n: usize, config: &ArchConfig) -> Schedule {
    let rows = config.fgrs;
    let columns = config.clusters * config.ifgcs;
    let c = prep.chunks_per_window;
    let tiles = tile_count(plan, n, rows);
    let cols = column_windows(prep.windows.len(), columns);
    let max_w = cols.iter().map(Vec::len).max().unwrap_or(0);
    let ngroups = max_w.div_ceil(config.filter_temporal_reuse).max(1);
    let input_chunks = (prep.windows.len() * c) as u64;

    let mut nodes = vec![NodeSched::default(); config.total_nodes()];
    let mut column_inputs = vec![Broadcast::default(); columns];
    let mut row_filters = vec![Broadcast::default(); config.clusters * rows];

    for cluster in 0..config.clusters {
        for t in 0..tiles {
            for g in 0..ngroups {
                let j = t * ngroups + g;
                let assign = tile_rows(plan, n, rows, t, j);
                let groups: Vec<&[usize]> = (0..config.ifgcs)
                    .map(|ifgc| split_groups(&cols[cluster * config.ifgcs + ifgc], ngroups)[g])
                    .collect();
                let active_cols: Vec<usize> = (0..config.ifgcs).filter(|&i| !groups[i].is_empty()).collect();
                for (r, filters) in assign.iter().enumerate() {
                    let rg = cluster * rows + r;
                    for ci in 0..c {
                        let key = ((j * n + filters[0]) * c + ci) as u64;
                        let consumers: Vec<u32> = active_cols
                            .iter()
                            .map(|&ifgc| node_index(config, cluster, r, ifgc) as u32)
                            .collect();
                        if !consumers.is_empty() {
                            row_filters[rg].keys.push(key);
                            row_filters[rg].consumers.push(consumers);
                        }
                    }
                }
                for &ifgc in &active_cols {
                    let q = cluster * config.ifgcs + ifgc;
                    let wins = groups[ifgc];
                    for ci in 0..c {
                        for &w in wins {
                            let chunk_id = prep.input_chunk_id(w, ci);
                            let key = t as u64 * input_chunks + chunk_id;
                            column_inputs[q].keys.push(key);
                            column_inputs[q]
                                .consumers
                                .push((0..assign.len()).map(|r| node_index(config, cluster, r, ifgc) as u32).collect());
                        }
                    }
                    for (r, filters) in assign.iter().enumerate() {
                        let node = &mut nodes[node_index(config, cluster, r, ifgc)];
                        let mut fs = [0u32; 2];
                        for (slot, &f) in filters.iter().enumerate() {
                            fs[slot] = f as u32;
                        }
                        for ci in 0..c {
                            let unit = node.units.len() as u32;
                            node.units.push(Unit {
                                key: ((j * n + filters[0]) * c + ci) as u64,
                                chunk_id: prep.filter_chunk_id(filters[0], ci),
                                filters: fs,
                                nf: filters.len() as u8,
                                ci: ci as u32,
                                last_step: 0,
                                consumers: active_cols.len() as u32,
                            });
                            for &w in wins {
                                let item = node.items.len() as u32;
                                let chunk_id = prep.input_chunk_id(w, ci);
                                node.items.push(Item {
                                    key: t as u64 * input_chunks + chunk_id,
                                    chunk_id,
                                    window: w as u32,
                                    ci: ci as u32,
                                    last_step: 0,
                                    consumers: assign.len() as u32,
                                });
                                for &f in filters {
                                    node.steps.push(Step {
                                        item,
                                        unit,
                                        window: w as u32,
                                        filter: f as u32,
                                        ci: ci as u32,
                                        last_chunk: ci + 1 == c,
                                    });
                                }
                                node.items[item as usize].last_step = node.steps.len() as u32 - 1;
                            }
                            node.units[unit as usize].last_step = node.steps.len() as u32 - 1;
                        }
                    }
                }
            }
        }
    }
    Schedule {
        nodes,
        column_inputs,
        row_filters,
        tiles,
    }
}
