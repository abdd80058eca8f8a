//! Load-balancing policies: offline filter ordering, alternating node
//! assignment, round-robin sub-chunk rotation and telescoping combine
//! schedules.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    /// Whole-filter density sort, no co-location, alternating node order.
    GbsVariant,
    /// Density sort plus co-location of (densest, sparsest) filter pairs.
    SpartenGbs,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub mode: BalanceMode,
    /// Filter ids in increasing whole-filter density (stable on ties).
    pub sorted_filter_ids: Vec<usize>,
    /// `[increasing, decreasing]` node-to-filter orders.
    pub orderings: [Vec<usize>; 2],
    /// Channel permutation to apply to the next layer's weights.
    pub next_layer_reorder: Vec<usize>,
    /// Co-located filter pairs `(densest, sparsest)`, only for `SpartenGbs`.
    pub pairs: Vec<(usize, Option<usize>)>,
}

pub fn greedy_balance(filter_densities: &[f64], mode: BalanceMode) -> BalancePlan {
    let n = filter_densities.len();
    let mut sorted: Vec<usize> = (0..n).collect();
    if mode != BalanceMode::None {
        // sort_by is stable, so equal densities keep index order
        sorted.sort_by(|&a, &b| filter_densities[a].total_cmp(&filter_densities[b]));
    }
    let reversed: Vec<usize> = sorted.iter().rev().copied().collect();
    let pairs = if mode == BalanceMode::SpartenGbs {
        (0..n.div_ceil(2))
            .map(|i| {
                let dense = sorted[n - 1 - i];
                let sparse = sorted[i];
                (dense, (sparse != dense).then_some(sparse))
            })
            .collect()
    } else {
        Vec::new()
    };
    BalancePlan {
        mode,
        next_layer_reorder: sorted.clone(),
        orderings: [sorted.clone(), reversed],
        sorted_filter_ids: sorted,
        pairs,
    }
}

impl BalancePlan {
    /// Whether consecutive inputs alternate between the two orderings.
    pub fn alternates(&self) -> bool {
        self.mode == BalanceMode::GbsVariant
    }

    pub fn permutation_id(&self, input_index: usize) -> usize {
        if self.alternates() {
            input_index % 2
        } else {
            0
        }
    }

    /// Node-to-filter assignment for one tile of sorted filters.
    pub fn tile_assignment(&self, tile: &[usize], input_index: usize) -> Vec<usize> {
        if self.permutation_id(input_index) == 0 {
            tile.to_vec()
        } else {
            tile.iter().rev().copied().collect()
        }
    }

    /// Applies the next-layer weight reorder: output channel `k` becomes
    /// input channel `k` of the next layer.
    pub fn reorder_channels<T: Copy>(&self, channels: &[T]) -> Vec<T> {
        self.next_layer_reorder.iter().map(|&c| channels[c]).collect()
    }
}

/// Node-to-filter map for input `input_index` and the ordering id used.
pub fn assignment_for_input(input_index: usize, plan: &BalancePlan) -> (Vec<usize>, usize) {
    let id = plan.permutation_id(input_index);
    (plan.orderings[id].clone(), id)
}

/// Values in node order under ordering `permutation_id`.
pub fn permute(channel_values: &[i32], permutation_id: usize, plan: &BalancePlan) -> Result<Vec<i32>> {
    let order = ordering(plan, permutation_id, channel_values.len())?;
    Ok(order.iter().map(|&f| channel_values[f]).collect())
}

/// Inverse of [`permute`]: node-ordered outputs back to filter order.
pub fn descramble(channel_values: &[i32], permutation_id: usize, plan: &BalancePlan) -> Result<Vec<i32>> {
    let order = ordering(plan, permutation_id, channel_values.len())?;
    let mut out = vec![0; channel_values.len()];
    for (node, &f) in order.iter().enumerate() {
        out[f] = channel_values[node];
    }
    Ok(out)
}

fn ordering(plan: &BalancePlan, id: usize, len: usize) -> Result<&[usize]> {
    let order = plan
        .orderings
        .get(id)
        .ok_or_else(|| SimError::Config(format!("permutation id {id} not in {{0, 1}}")))?;
    if order.len() != len {
        return Err(SimError::Dimension(format!(
            "{len} channels for a {} filter plan",
            order.len()
        )));
    }
    Ok(order)
}

/// Sub-chunk a PE handles for a given chunk: `(pe_id + chunk_index) mod pe_count`.
#[inline]
pub fn round_robin_subchunk(chunk_index: usize, pe_count: usize, pe_id: usize) -> usize {
    debug_assert!(pe_id < pe_count);
    (pe_id + chunk_index) % pe_count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelescopeSpec {
    Explicit(Vec<usize>),
    Geometric { fraction: f64, min_group: usize },
    /// The explicit 48/12/2/2 list for 64 requesters, geometric(0.75, 2) otherwise.
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelescopeSchedule {
    pub group_sizes: Vec<usize>,
}

impl TelescopeSchedule {
    pub fn requesters(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

pub const DEFAULT_64: [usize; 4] = [48, 12, 2, 2];

pub fn telescoping_schedule(n_requesters: usize, spec: &TelescopeSpec) -> Result<TelescopeSchedule> {
    if n_requesters == 0 {
        return config_err("telescoping needs at least one requester");
    }
    let group_sizes = match spec {
        TelescopeSpec::Explicit(list) => {
            if list.iter().sum::<usize>() != n_requesters || list.contains(&0) {
                return config_err(format!(
                    "schedule {list:?} does not partition {n_requesters} requesters"
                ));
            }
            if list.windows(2).any(|w| w[1] > w[0]) {
                return config_err(format!("schedule {list:?} is increasing"));
            }
            list.clone()
        }
        TelescopeSpec::Geometric { fraction, min_group } => {
            geometric(n_requesters, *fraction, *min_group)?
        }
        TelescopeSpec::Default => {
            if n_requesters == 64 {
                DEFAULT_64.to_vec()
            } else {
                geometric(n_requesters, 0.75, 2)?
            }
        }
    };
    Ok(TelescopeSchedule { group_sizes })
}

fn geometric(n: usize, f: f64, m: usize) -> Result<Vec<usize>> {
    if !(f > 0.0 && f < 1.0) || m == 0 {
        return config_err(format!("geometric schedule needs f in (0,1), m >= 1 (got {f}, {m})"));
    }
    let mut out = Vec::new();
    let mut remaining = n;
    while remaining > m {
        let g = ((f * remaining as f64).ceil() as usize).clamp(1, remaining);
        out.push(g);
        remaining -= g;
    }
    while remaining > 0 {
        let g = remaining.min(out.last().copied().unwrap_or(remaining));
        out.push(g);
        remaining -= g;
    }
    Ok(out)
}
