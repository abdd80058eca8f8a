//! Cache banks with round-robin arbitration, telescoping request combining
//! for input-map chunks, snarfing for filter chunks, and the bandwidth
//! counters they feed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::NodeId;
use crate::balance::{telescoping_schedule, TelescopeSchedule, TelescopeSpec};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Ifmap,
    Filter,
}

impl ChunkKind {
    pub fn index(self) -> usize {
        match self {
            ChunkKind::Ifmap => 0,
            ChunkKind::Filter => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRequest {
    pub requester: NodeId,
    /// Flat requester index used for round-robin tie breaking.
    pub requester_index: usize,
    pub kind: ChunkKind,
    pub chunk_id: u64,
    pub issue_cycle: u64,
    /// Opaque handle the issuer uses to route the response.
    pub ticket: usize,
}

/// Per-bank pending queues. One grant per bank per cycle; the bank is
/// `chunk_id mod banks`.
#[derive(Debug, Clone)]
pub struct BankArbiter {
    pending: Vec<Vec<FetchRequest>>,
    next_requester: Vec<usize>,
    requesters: usize,
    pub conflict_stall_cycles: u64,
    pub max_queue: usize,
    queued: usize,
}

impl BankArbiter {
    pub fn new(banks: usize, requesters: usize) -> Self {
        Self {
            pending: vec![Vec::new(); banks],
            next_requester: vec![0; banks],
            requesters: requesters.max(1),
            conflict_stall_cycles: 0,
            max_queue: 0,
            queued: 0,
        }
    }

    pub fn banks(&self) -> usize {
        self.pending.len()
    }

    pub fn bank_of(&self, chunk_id: u64) -> usize {
        (chunk_id % self.pending.len() as u64) as usize
    }

    pub fn push(&mut self, req: FetchRequest) {
        let b = self.bank_of(req.chunk_id);
        self.pending[b].push(req);
        self.queued += 1;
        self.max_queue = self.max_queue.max(self.pending[b].len());
    }

    pub fn is_idle(&self) -> bool {
        self.queued == 0
    }

    /// Grants at most one request per bank. Within a bank the requester
    /// closest at or after the bank's rotating pointer wins; every request
    /// left behind is one deferral.
    pub fn arbitrate(&mut self) -> Vec<FetchRequest> {
        let mut grants = Vec::new();
        if self.queued == 0 {
            return grants;
        }
        let n = self.requesters;
        for (b, queue) in self.pending.iter_mut().enumerate() {
            if queue.is_empty() {
                continue;
            }
            let ptr = self.next_requester[b];
            let (pos, _) = queue
                .iter()
                .enumerate()
                .min_by_key(|(i, r)| ((r.requester_index % n + n - ptr) % n, r.issue_cycle, *i))
                .expect("non-empty queue");
            let req = queue.remove(pos);
            self.next_requester[b] = (req.requester_index + 1) % n;
            self.conflict_stall_cycles += queue.len() as u64;
            self.queued -= 1;
            grants.push(req);
        }
        grants
    }
}

/// One cycle of arbitration over a fresh set of requests: grants and
/// deferrals.
pub fn bank_arbitrate(requests: Vec<FetchRequest>, banks: usize) -> (Vec<FetchRequest>, Vec<FetchRequest>) {
    let requesters = requests.iter().map(|r| r.requester_index + 1).max().unwrap_or(1);
    let mut arb = BankArbiter::new(banks, requesters);
    for r in requests {
        arb.push(r);
    }
    let grants = arb.arbitrate();
    let deferred = arb.pending.into_iter().flatten().collect();
    (grants, deferred)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CombineOutcome<M> {
    /// Waiting in open group `group`.
    Joined { group: usize },
    /// The request completed group `group`; one fetch serves `members`.
    Fired { group: usize, members: Vec<M> },
}

#[derive(Debug, Clone)]
struct ItemGroups<M> {
    consumers: usize,
    sizes: Vec<usize>,
    group: usize,
    accounted: usize,
    open: Vec<M>,
}

/// Telescoping combiner for one IFGC: a request counter and the group state
/// machine per in-flight chunk.
#[derive(Debug, Clone)]
pub struct CombinerState<M> {
    spec: TelescopeSpec,
    schedules: BTreeMap<usize, TelescopeSchedule>,
    items: BTreeMap<u64, ItemGroups<M>>,
    pub fired_groups: u64,
    pub force_closed_groups: u64,
}

impl<M> CombinerState<M> {
    pub fn new(spec: TelescopeSpec) -> Self {
        Self {
            spec,
            schedules: BTreeMap::new(),
            items: BTreeMap::new(),
            fired_groups: 0,
            force_closed_groups: 0,
        }
    }

    pub fn schedule(&mut self, consumers: usize) -> Result<&TelescopeSchedule> {
        if !self.schedules.contains_key(&consumers) {
            let s = telescoping_schedule(consumers, &self.spec)?;
            self.schedules.insert(consumers, s);
        }
        Ok(&self.schedules[&consumers])
    }

    /// Group sizes for `n` outstanding requesters. A restart after a
    /// force-close falls back to the default rule when an explicit list
    /// does not partition the remainder.
    fn sizes_for(&mut self, n: usize) -> Result<Vec<usize>> {
        match self.schedule(n) {
            Ok(s) => Ok(s.group_sizes.clone()),
            Err(_) => Ok(telescoping_schedule(n, &TelescopeSpec::Default)?.group_sizes),
        }
    }

    fn entry(&mut self, item: u64, consumers: usize) -> Result<&mut ItemGroups<M>> {
        if !self.items.contains_key(&item) {
            let sizes = self.schedule(consumers)?.group_sizes.clone();
            self.items.insert(
                item,
                ItemGroups { consumers, sizes, group: 0, accounted: 0, open: Vec::new() },
            );
        }
        Ok(self.items.get_mut(&item).expect("inserted"))
    }

    fn maybe_fire(&mut self, item: u64) -> Result<Option<(usize, Vec<M>)>> {
        let Some(e) = self.items.get_mut(&item) else {
            return Ok(None);
        };
        if e.open.is_empty() {
            self.retire(item);
            return Ok(None);
        }
        let group = e.group;
        let target = e.sizes.get(group).copied().unwrap_or(1);
        if e.open.len() >= target || e.accounted >= e.consumers {
            let members = std::mem::take(&mut e.open);
            e.group += 1;
            self.fired_groups += 1;
            self.retire(item);
            return Ok(Some((group, members)));
        }
        Ok(None)
    }

    fn retire(&mut self, item: u64) {
        if let Some(e) = self.items.get(&item) {
            if e.accounted >= e.consumers && e.open.is_empty() {
                self.items.remove(&item);
            }
        }
    }

    /// A request for `item` (needed by `consumers` nodes in total).
    pub fn request(&mut self, item: u64, consumers: usize, member: M) -> Result<CombineOutcome<M>> {
        let e = self.entry(item, consumers)?;
        e.accounted += 1;
        e.open.push(member);
        let group = e.group;
        match self.maybe_fire(item)? {
            Some((g, members)) => Ok(CombineOutcome::Fired { group: g, members }),
            None => Ok(CombineOutcome::Joined { group }),
        }
    }

    /// A consumer of `item` was served without joining (shared-buffer hit).
    /// May complete the open group when no further requesters remain.
    pub fn skip(&mut self, item: u64, consumers: usize) -> Result<Option<Vec<M>>> {
        self.entry(item, consumers)?.accounted += 1;
        Ok(self.maybe_fire(item)?.map(|(_, m)| m))
    }

    /// A response for `item` came back: the open group, if any, closes and
    /// its members are served by that response. The requesters still to
    /// come start a fresh schedule.
    pub fn response(&mut self, item: u64) -> Result<Vec<M>> {
        let (members, remaining) = match self.items.get_mut(&item) {
            Some(e) if !e.open.is_empty() => {
                (std::mem::take(&mut e.open), e.consumers - e.accounted)
            }
            _ => (Vec::new(), 0),
        };
        if !members.is_empty() {
            self.force_closed_groups += 1;
            if remaining > 0 {
                let sizes = self.sizes_for(remaining)?;
                let e = self.items.get_mut(&item).expect("entry exists");
                e.sizes = sizes;
                e.group = 0;
            }
        }
        self.retire(item);
        Ok(members)
    }

    pub fn open_groups(&self) -> usize {
        self.items.values().filter(|e| !e.open.is_empty()).count()
    }
}

/// What the snarf logic needs to know about one node of the FGR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnarfView {
    pub node: usize,
    pub free_slot: bool,
    /// Chunk id of the next filter chunk the node has not yet received or
    /// requested.
    pub next_needed: Option<u64>,
}

/// Nodes filled by one filter response: the requester plus every row peer
/// with a free slot whose next needed chunk is exactly this one.
pub fn snarf_filter_fill(requester: usize, chunk_id: u64, row: &[SnarfView], snarfing: bool) -> Vec<usize> {
    let mut fill = vec![requester];
    if snarfing {
        fill.extend(
            row.iter()
                .filter(|v| v.node != requester && v.free_slot && v.next_needed == Some(chunk_id))
                .map(|v| v.node),
        );
    }
    fill
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthStats {
    /// Cache fetches, indexed by [`ChunkKind::index`].
    pub fetches: [u64; 2],
    /// Distinct chunk residencies fetched at least once.
    pub unique: [u64; 2],
    pub refetches: [u64; 2],
    pub combined_requests: u64,
    pub snarfed_fills: u64,
    pub shared_buffer_hits: u64,
    pub broadcast_fills: u64,
    pub deliveries: u64,
    pub bank_conflict_stall_cycles: u64,
    pub bytes_transferred: u64,
}

impl BandwidthStats {
    pub fn total_fetches(&self) -> u64 {
        self.fetches.iter().sum()
    }

    pub fn total_refetches(&self) -> u64 {
        self.refetches.iter().sum()
    }

    /// Refetches per distinct chunk residency, over both kinds.
    pub fn refetches_per_chunk(&self) -> f64 {
        let unique: u64 = self.unique.iter().sum();
        if unique == 0 {
            0.0
        } else {
            self.total_refetches() as f64 / unique as f64
        }
    }

    pub fn refetches_per_chunk_of(&self, kind: ChunkKind) -> f64 {
        let k = kind.index();
        if self.unique[k] == 0 {
            0.0
        } else {
            self.refetches[k] as f64 / self.unique[k] as f64
        }
    }

    pub fn finalize(&mut self) {
        for k in 0..2 {
            self.refetches[k] = self.fetches[k] - self.unique[k];
        }
    }
}

/// Counts one cache transfer of `bytes` (mask plus occupied values).
pub fn record_transfer(stats: &mut BandwidthStats, kind: ChunkKind, bytes: u64) {
    if bytes == 0 {
        return;
    }
    stats.fetches[kind.index()] += 1;
    stats.bytes_transferred += bytes;
}
