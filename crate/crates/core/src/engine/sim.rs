//! Event-skipping global cycle loop for the node-based variants.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use crate::arch::{adder_tree_reduce, reduce_latency, ArchConfig, ColorGrant, ColorPool, Organization};
use crate::error::{Result, SimError};
use crate::interconnect::{
    record_transfer, BankArbiter, ChunkKind, CombineOutcome, CombinerState, FetchRequest,
};
use crate::tensor::ConvOutput;

use super::schedule::{self, NodeSched, Prepared, Schedule};
use super::{breakdown_attribution, OccupancyMarks, PeLedger, SimOutput, SimReport, Workload};

const NEVER: u64 = u64::MAX;

type Member = (u32, u32);

#[derive(Debug, Clone, Copy)]
enum Event {
    Arrive(usize),
    Hit { node: u32, idx: u32 },
    PeDone { node: u32, pe: u32 },
}

#[derive(Debug)]
struct Fetch {
    kind: ChunkKind,
    key: u64,
    column: usize,
    row_group: usize,
    members: Vec<Member>,
}

#[derive(Debug, Clone, Copy, Default)]
struct PeRt {
    next: usize,
    busy: bool,
    started: bool,
    buffer: usize,
    value: i32,
    ledger: PeLedger,
}

#[derive(Debug)]
struct NodeRt {
    column: usize,
    row_group: usize,
    in_req: usize,
    in_rel: usize,
    in_arrive: Vec<u64>,
    in_reqt: Vec<u64>,
    un_req: usize,
    un_rel: usize,
    un_arrive: Vec<u64>,
    un_reqt: Vec<u64>,
    done_upto: usize,
    step_left: Vec<u8>,
    colors: ColorPool,
    pes: Vec<PeRt>,
}

struct Sim<'a> {
    cfg: &'a ArchConfig,
    prep: &'a Prepared,
    sched: Schedule,
    nodes: Vec<NodeRt>,
    n_filters: usize,
    slots: usize,
    window: usize,
    two_sided: bool,
    inputs_broadcast: bool,
    filters_broadcast: bool,
    now: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    events: Vec<Event>,
    fetches: Vec<Fetch>,
    arbiter: BankArbiter,
    combiners: Vec<CombinerState<Member>>,
    shared: Vec<VecDeque<u64>>,
    snarf_wait: Vec<HashMap<u64, Vec<Member>>>,
    column_ptr: Vec<usize>,
    row_ptr: Vec<usize>,
    unique: [HashSet<u64>; 2],
    stats: crate::interconnect::BandwidthStats,
    touched: Vec<bool>,
    touched_list: Vec<usize>,
    raw: Vec<ConvOutput>,
    conv_free: Vec<u64>,
    /// Per column: output cells still pending for each (window, tile) vector.
    conv_pending: Vec<HashMap<u64, u32>>,
    occupancy: OccupancyMarks,
    remaining_nodes: usize,
}

pub fn run(workload: &Workload, prep: &Prepared, cfg: &ArchConfig) -> Result<SimOutput> {
    let plan = workload.plan_for(cfg.balance);
    let sched = schedule::build(prep, &plan, workload.layer.n, cfg);
    let org = cfg.variant.organization();
    let columns = cfg.clusters * cfg.ifgcs;
    let row_groups = cfg.clusters * cfg.fgrs;
    let mut nodes = Vec::with_capacity(sched.nodes.len());
    for cluster in 0..cfg.clusters {
        for ifgc in 0..cfg.ifgcs {
            for fgr in 0..cfg.fgrs {
                let ns = &sched.nodes[schedule::node_index(cfg, cluster, fgr, ifgc)];
                nodes.push(NodeRt {
                    column: cluster * cfg.ifgcs + ifgc,
                    row_group: cluster * cfg.fgrs + fgr,
                    in_req: 0,
                    in_rel: 0,
                    in_arrive: vec![NEVER; ns.items.len()],
                    in_reqt: vec![NEVER; ns.items.len()],
                    un_req: 0,
                    un_rel: 0,
                    un_arrive: vec![NEVER; ns.units.len()],
                    un_reqt: vec![NEVER; ns.units.len()],
                    done_upto: 0,
                    step_left: vec![cfg.pes_per_node as u8; ns.steps.len()],
                    colors: ColorPool::new(cfg.color_depth()),
                    pes: vec![PeRt::default(); cfg.pes_per_node],
                });
            }
        }
    }
    let mut conv_pending = vec![HashMap::new(); columns];
    for (ns, rt) in sched.nodes.iter().zip(&nodes) {
        for st in ns.steps.iter().filter(|s| s.last_chunk) {
            *conv_pending[rt.column].entry(ns.items[st.item as usize].key).or_insert(0) += 1;
        }
    }
    let remaining_nodes = sched.nodes.iter().filter(|n| !n.steps.is_empty()).count();
    let requesters = nodes.len() + columns + row_groups;
    let mut sim = Sim {
        cfg,
        prep,
        n_filters: workload.layer.n,
        slots: cfg.input_slots(),
        window: cfg.input_window(),
        two_sided: cfg.variant.is_two_sided(),
        inputs_broadcast: matches!(org, Organization::SmallClusters | Organization::Broadcast),
        filters_broadcast: org == Organization::Broadcast,
        now: 0,
        heap: BinaryHeap::new(),
        events: Vec::new(),
        fetches: Vec::new(),
        arbiter: BankArbiter::new(cfg.cache_banks, requesters),
        combiners: (0..columns).map(|_| CombinerState::new(cfg.telescope.clone())).collect(),
        shared: vec![VecDeque::new(); columns],
        snarf_wait: vec![HashMap::new(); row_groups],
        column_ptr: vec![0; columns],
        row_ptr: vec![0; row_groups],
        unique: [HashSet::new(), HashSet::new()],
        stats: Default::default(),
        touched: vec![false; nodes.len()],
        touched_list: Vec::new(),
        raw: vec![ConvOutput::zeros(workload.output_dims()); workload.layer.batch],
        conv_free: vec![0; columns],
        conv_pending,
        occupancy: OccupancyMarks::default(),
        remaining_nodes,
        sched,
        nodes,
    };
    sim.execute()?;
    Ok(sim.finish(workload))
}

impl Sim<'_> {
    fn push_event(&mut self, at: u64, ev: Event) {
        let seq = self.events.len() as u64;
        self.events.push(ev);
        self.heap.push(Reverse((at, seq)));
    }

    fn touch(&mut self, node: usize) {
        if !self.touched[node] {
            self.touched[node] = true;
            self.touched_list.push(node);
        }
    }

    fn execute(&mut self) -> Result<()> {
        for n in 0..self.nodes.len() {
            self.touch(n);
        }
        loop {
            while let Some(&Reverse((at, seq))) = self.heap.peek() {
                if at != self.now {
                    break;
                }
                self.heap.pop();
                match self.events[seq as usize] {
                    Event::Arrive(id) => self.arrive(id)?,
                    Event::Hit { node, idx } => self.deliver(node as usize, ChunkKind::Ifmap, idx as usize),
                    Event::PeDone { node, pe } => self.pe_done(node as usize, pe as usize),
                }
            }
            let touched = std::mem::take(&mut self.touched_list);
            for &n in &touched {
                self.issue_requests(n)?;
            }
            if self.inputs_broadcast {
                self.broadcast_inputs();
            }
            if self.filters_broadcast {
                self.broadcast_filters();
            }
            for g in self.arbiter.arbitrate() {
                let at = self.now + self.cfg.cache_latency;
                self.push_event(at, Event::Arrive(g.ticket));
            }
            for &n in &touched {
                self.touched[n] = false;
                self.start_pes(n);
            }
            if self.remaining_nodes == 0 && self.heap.is_empty() && self.arbiter.is_idle() {
                return Ok(());
            }
            let next = if !self.arbiter.is_idle() {
                Some(self.now + 1)
            } else {
                self.heap.peek().map(|r| r.0 .0)
            };
            match next {
                Some(t) => self.now = t,
                None => return Err(self.deadlock()),
            }
        }
    }

    fn deadlock(&self) -> SimError {
        let mut trace = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let s = &self.sched.nodes[i];
            if n.done_upto < s.steps.len() {
                trace.push_str(&format!(
                    "node {i}: step {}/{} items req {} rel {} units req {} rel {}; ",
                    n.done_upto,
                    s.steps.len(),
                    n.in_req,
                    n.in_rel,
                    n.un_req,
                    n.un_rel
                ));
                if trace.len() > 2000 {
                    break;
                }
            }
        }
        SimError::Deadlock { cycle: self.now, trace }
    }

    fn new_fetch(&mut self, kind: ChunkKind, node: usize, idx: usize, members: Vec<Member>, requester: usize) {
        let ns = &self.sched.nodes[node];
        let (key, chunk_id, bytes) = match kind {
            ChunkKind::Ifmap => {
                let it = ns.items[idx];
                let bytes = self.prep.windows[it.window as usize][it.ci as usize].transfer_bytes();
                (it.key, it.chunk_id, bytes)
            }
            ChunkKind::Filter => {
                let u = ns.units[idx];
                let bytes = u
                    .filters()
                    .iter()
                    .map(|&f| self.prep.filters[f as usize][u.ci as usize].transfer_bytes())
                    .sum();
                (u.key, u.chunk_id, bytes)
            }
        };
        record_transfer(&mut self.stats, kind, bytes as u64);
        if self.unique[kind.index()].insert(key) {
            self.stats.unique[kind.index()] += 1;
        }
        let rt = &self.nodes[node];
        let ticket = self.fetches.len();
        self.fetches.push(Fetch {
            kind,
            key,
            column: rt.column,
            row_group: rt.row_group,
            members,
        });
        self.arbiter.push(FetchRequest {
            requester: crate::arch::NodeId {
                cluster: rt.column / self.cfg.ifgcs,
                fgr: rt.row_group % self.cfg.fgrs,
                ifgc: rt.column % self.cfg.ifgcs,
            },
            requester_index: requester,
            kind,
            chunk_id,
            issue_cycle: self.now,
            ticket,
        });
    }

    fn deliver(&mut self, node: usize, kind: ChunkKind, idx: usize) {
        let rt = &mut self.nodes[node];
        match kind {
            ChunkKind::Ifmap => rt.in_arrive[idx] = self.now,
            ChunkKind::Filter => rt.un_arrive[idx] = self.now,
        }
        self.stats.deliveries += 1;
        self.touch(node);
    }

    fn arrive(&mut self, id: usize) -> Result<()> {
        let members = std::mem::take(&mut self.fetches[id].members);
        let (kind, key, column, rg) = {
            let f = &self.fetches[id];
            (f.kind, f.key, f.column, f.row_group)
        };
        if members.len() > 1 {
            match kind {
                ChunkKind::Ifmap if !self.inputs_broadcast => self.stats.combined_requests += members.len() as u64 - 1,
                _ => self.stats.broadcast_fills += members.len() as u64 - 1,
            }
        }
        for &(n, i) in &members {
            self.deliver(n as usize, kind, i as usize);
        }
        let f = self.cfg.features;
        match kind {
            ChunkKind::Ifmap if !self.inputs_broadcast => {
                if f.telescoping {
                    let riders = self.combiners[column].response(key)?;
                    self.stats.combined_requests += riders.len() as u64;
                    for (n, i) in riders {
                        self.deliver(n as usize, kind, i as usize);
                    }
                }
                if f.hierarchical_buffering {
                    let buf = &mut self.shared[column];
                    if !buf.contains(&key) {
                        if buf.len() == self.cfg.shared_buffer_depth {
                            buf.pop_front();
                        }
                        buf.push_back(key);
                        self.occupancy.shared_buffer_max = self.occupancy.shared_buffer_max.max(buf.len());
                    }
                }
            }
            ChunkKind::Filter if !self.filters_broadcast && f.snarfing => {
                let waiters = self.snarf_wait[rg].remove(&key).unwrap_or_default();
                self.stats.snarfed_fills += waiters.len() as u64;
                for (n, i) in waiters {
                    self.deliver(n as usize, kind, i as usize);
                }
                let cluster = rg / self.cfg.fgrs;
                let fgr = rg % self.cfg.fgrs;
                for ifgc in 0..self.cfg.ifgcs {
                    let n = schedule::node_index(self.cfg, cluster, fgr, ifgc);
                    let ns = &self.sched.nodes[n];
                    let rt = &self.nodes[n];
                    let eligible = rt.un_req < ns.units.len()
                        && ns.units[rt.un_req].key == key
                        && rt.un_req - rt.un_rel < self.slots;
                    if eligible {
                        let idx = self.reserve_unit(n);
                        self.stats.snarfed_fills += 1;
                        self.deliver(n, kind, idx);
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn reserve_item(&mut self, node: usize) -> usize {
        let rt = &mut self.nodes[node];
        let idx = rt.in_req;
        rt.in_req += 1;
        rt.in_reqt[idx] = self.now;
        self.occupancy.input_slots_max = self.occupancy.input_slots_max.max(rt.in_req - rt.in_rel);
        idx
    }

    fn reserve_unit(&mut self, node: usize) -> usize {
        let rt = &mut self.nodes[node];
        let idx = rt.un_req;
        rt.un_req += 1;
        rt.un_reqt[idx] = self.now;
        self.occupancy.filter_slots_max = self.occupancy.filter_slots_max.max(rt.un_req - rt.un_rel);
        idx
    }

    fn issue_requests(&mut self, node: usize) -> Result<()> {
        let f = self.cfg.features;
        if !self.inputs_broadcast {
            loop {
                let (ns, rt) = (&self.sched.nodes[node], &self.nodes[node]);
                if rt.in_req >= ns.items.len() || rt.in_req - rt.in_rel >= self.window {
                    break;
                }
                let item = ns.items[rt.in_req];
                let column = rt.column;
                let idx = self.reserve_item(node);
                let member = (node as u32, idx as u32);
                let consumers = item.consumers as usize;
                if f.hierarchical_buffering && self.shared[column].contains(&item.key) {
                    self.stats.shared_buffer_hits += 1;
                    let at = self.now + self.cfg.shared_buffer_latency;
                    self.push_event(at, Event::Hit { node: node as u32, idx: idx as u32 });
                    if f.telescoping {
                        if let Some(members) = self.combiners[column].skip(item.key, consumers)? {
                            let (ln, li) = members[members.len() - 1];
                            self.new_fetch(ChunkKind::Ifmap, ln as usize, li as usize, members, ln as usize);
                        }
                    }
                } else if f.telescoping {
                    if let CombineOutcome::Fired { members, .. } =
                        self.combiners[column].request(item.key, consumers, member)?
                    {
                        self.new_fetch(ChunkKind::Ifmap, node, idx, members, node);
                    }
                } else {
                    self.new_fetch(ChunkKind::Ifmap, node, idx, vec![member], node);
                }
            }
        }
        if !self.filters_broadcast {
            loop {
                let (ns, rt) = (&self.sched.nodes[node], &self.nodes[node]);
                if rt.un_req >= ns.units.len() || rt.un_req - rt.un_rel >= self.slots {
                    break;
                }
                let key = ns.units[rt.un_req].key;
                let rg = rt.row_group;
                let idx = self.reserve_unit(node);
                let member = (node as u32, idx as u32);
                if f.snarfing {
                    if let Some(w) = self.snarf_wait[rg].get_mut(&key) {
                        w.push(member);
                        continue;
                    }
                    self.snarf_wait[rg].insert(key, Vec::new());
                }
                self.new_fetch(ChunkKind::Filter, node, idx, vec![member], node);
            }
        }
        Ok(())
    }

    fn broadcast_inputs(&mut self) {
        let base = self.nodes.len();
        for q in 0..self.column_ptr.len() {
            loop {
                let seq = &self.sched.column_inputs[q];
                let p = self.column_ptr[q];
                if p >= seq.keys.len() {
                    break;
                }
                let key = seq.keys[p];
                let ready = seq.consumers[p].iter().all(|&n| {
                    let (ns, rt) = (&self.sched.nodes[n as usize], &self.nodes[n as usize]);
                    rt.in_req < ns.items.len() && ns.items[rt.in_req].key == key && rt.in_req - rt.in_rel < self.window
                });
                if !ready {
                    break;
                }
                let cons = seq.consumers[p].clone();
                let members: Vec<Member> = cons
                    .iter()
                    .map(|&n| (n, self.reserve_item(n as usize) as u32))
                    .collect();
                let (n0, i0) = members[0];
                self.new_fetch(ChunkKind::Ifmap, n0 as usize, i0 as usize, members, base + q);
                self.column_ptr[q] += 1;
            }
        }
    }

    fn broadcast_filters(&mut self) {
        let base = self.nodes.len() + self.column_ptr.len();
        for rg in 0..self.row_ptr.len() {
            loop {
                let seq = &self.sched.row_filters[rg];
                let p = self.row_ptr[rg];
                if p >= seq.keys.len() {
                    break;
                }
                let key = seq.keys[p];
                let ready = seq.consumers[p].iter().all(|&n| {
                    let (ns, rt) = (&self.sched.nodes[n as usize], &self.nodes[n as usize]);
                    rt.un_req < ns.units.len() && ns.units[rt.un_req].key == key && rt.un_req - rt.un_rel < self.slots
                });
                if !ready {
                    break;
                }
                let cons = seq.consumers[p].clone();
                let members: Vec<Member> = cons
                    .iter()
                    .map(|&n| (n, self.reserve_unit(n as usize) as u32))
                    .collect();
                let (n0, i0) = members[0];
                self.new_fetch(ChunkKind::Filter, n0 as usize, i0 as usize, members, base + rg);
                self.row_ptr[rg] += 1;
            }
        }
    }

    fn start_pes(&mut self, node: usize) {
        let cfg = self.cfg;
        let pes = cfg.pes_per_node;
        let width = cfg.subchunk_width();
        let now = self.now;
        let ns: &NodeSched = &self.sched.nodes[node];
        let rt = &mut self.nodes[node];
        for p in 0..pes {
            let pe = rt.pes[p];
            if pe.busy || pe.next >= ns.steps.len() {
                continue;
            }
            let s = pe.next;
            let step = ns.steps[s];
            let (ia, ua) = (rt.in_arrive[step.item as usize], rt.un_arrive[step.unit as usize]);
            if ia > now || ua > now {
                continue;
            }
            let buffer = match rt.colors.acquire(s as u64, pes) {
                ColorGrant::Buffer(b) => b,
                ColorGrant::Stall => continue,
            };
            let sc = if cfg.features.round_robin { (p + s) % pes } else { p };
            let lo = sc * width;
            let input = &self.prep.windows[step.window as usize][step.ci as usize];
            let filter = &self.prep.filters[step.filter as usize][step.ci as usize];
            let (value, matched) = input.sub_dot(filter, lo, width);
            let macs = if self.two_sided { matched } else { input.sub_nnz(lo, width) } as u64;

            let mut ledger = pe.ledger;
            let gap = now - ledger.last_end;
            let ready = ia.max(ua);
            let requested = if ia >= ua { rt.in_reqt[step.item as usize] } else { rt.un_reqt[step.unit as usize] };
            let bw = if ready > ledger.last_end {
                ready - requested.min(ready).max(ledger.last_end)
            } else {
                0
            };
            ledger.bandwidth += bw;
            ledger.barrier += gap - bw;
            let ramp = if pe.started && now == ledger.last_end { 0 } else { cfg.match_latency };
            let work = macs.max(1) * cfg.mac_latency;
            ledger.overhead += ramp + if macs == 0 { cfg.mac_latency } else { 0 };
            ledger.nonzero += matched as u64 * cfg.mac_latency;
            ledger.zero += (macs - matched as u64) * cfg.mac_latency;
            let end = now + ramp + work;
            ledger.last_end = end;
            rt.pes[p] = PeRt {
                next: s,
                busy: true,
                started: true,
                buffer,
                value,
                ledger,
            };
            let seq = self.events.len() as u64;
            self.events.push(Event::PeDone { node: node as u32, pe: p as u32 });
            self.heap.push(Reverse((end, seq)));
        }
    }

    fn pe_done(&mut self, node: usize, p: usize) {
        let now = self.now;
        let red = reduce_latency(self.cfg.pes_per_node);
        let n_filters = self.n_filters;
        let wpm = self.prep.windows_per_map;
        let ns = &self.sched.nodes[node];
        let rt = &mut self.nodes[node];
        let pe = &mut rt.pes[p];
        let s = pe.next;
        pe.busy = false;
        pe.next += 1;
        let (buffer, value) = (pe.buffer, pe.value);
        rt.colors.contribute(buffer, s as u64, p, value);
        rt.step_left[s] -= 1;
        while rt.done_upto < ns.steps.len() && rt.step_left[rt.done_upto] == 0 {
            let d = rt.done_upto;
            let step = ns.steps[d];
            let partials = match rt.colors.slot_of(d as u64) {
                Some(b) => rt.colors.release(b),
                None => Vec::new(),
            };
            let v = adder_tree_reduce(&partials);
            let w = step.window as usize;
            let out = &mut self.raw[w / wpm].values[(w % wpm) * n_filters + step.filter as usize];
            *out = out.wrapping_add(v);
            if step.last_chunk {
                let key = ns.items[step.item as usize].key;
                let pending = self.conv_pending[rt.column].get_mut(&key).expect("counted at start");
                *pending -= 1;
                if *pending == 0 {
                    let c = &mut self.conv_free[rt.column];
                    *c = (*c).max(now + red) + 1;
                }
            }
            rt.done_upto += 1;
        }
        let done = rt.done_upto;
        while rt.in_rel < rt.in_req && (ns.items[rt.in_rel].last_step as usize) < done {
            rt.in_rel += 1;
        }
        while rt.un_rel < rt.un_req && (ns.units[rt.un_rel].last_step as usize) < done {
            rt.un_rel += 1;
        }
        if done == ns.steps.len() && rt.pes.iter().all(|pe| !pe.busy) && !ns.steps.is_empty() {
            self.remaining_nodes -= 1;
        }
        self.touch(node);
    }

    fn finish(mut self, workload: &Workload) -> SimOutput {
        self.stats.finalize();
        self.stats.bank_conflict_stall_cycles = self.arbiter.conflict_stall_cycles;
        let ledgers: Vec<PeLedger> = self.nodes.iter().flat_map(|n| n.pes.iter().map(|p| p.ledger)).collect();
        let compute_end = ledgers.iter().map(|l| l.last_end).max().unwrap_or(0);
        let total = self.conv_free.iter().copied().max().unwrap_or(0).max(compute_end);
        let breakdown = breakdown_attribution(&ledgers, total);
        let macs: u64 = ledgers.iter().map(|l| (l.nonzero + l.zero) / self.cfg.mac_latency).sum();
        let matched: u64 = ledgers.iter().map(|l| l.nonzero / self.cfg.mac_latency).sum();
        self.occupancy.colors_max = self.nodes.iter().map(|n| n.colors.high_water).max().unwrap_or(0);
        let report = SimReport {
            variant: self.cfg.variant.name().to_string(),
            layer: workload.layer.name.clone(),
            total_cycles: total,
            breakdown,
            macs_executed: macs,
            matched_macs: matched,
            pes: self.cfg.total_macs(),
            stats: self.stats,
            column_finish: self.conv_free,
            occupancy: self.occupancy,
            color_violations: self.nodes.iter().map(|n| n.colors.violations).sum(),
        };
        SimOutput { report, raw: self.raw }
    }
}
