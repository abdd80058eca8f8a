mod common;

use proptest::prelude::*;
use sparsim::arch::{ColorGrant, ColorPool, NodeId};
use sparsim::balance::{descramble, greedy_balance, permute, telescoping_schedule, BalanceMode, TelescopeSpec};
use sparsim::engine::{breakdown_attribution, PeLedger};
use sparsim::interconnect::{BankArbiter, ChunkKind, CombineOutcome, CombinerState, FetchRequest};
use sparsim::tensor::{compress, decompress, sparse_chunk_dot, DenseTensor, Dims3, SparseChunk};
use sparsim::{simulate, ArchConfig, ChunkSize, Scale, Variant, Workload};

fn cells(len: usize) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop_oneof![3 => Just(0i8), 1 => any::<i8>()], len)
}

fn req(i: usize, chunk_id: u64) -> FetchRequest {
    FetchRequest {
        requester: NodeId { cluster: 0, fgr: 0, ifgc: 0 },
        requester_index: i,
        kind: ChunkKind::Ifmap,
        chunk_id,
        issue_cycle: 0,
        ticket: i,
    }
}

proptest! {
    #[test]
    fn compress_round_trips(h in 1usize..6, w in 1usize..6, d in 1usize..20, seed in any::<u64>()) {
        let len = h * w * d;
        let vals: Vec<i8> = (0..len).map(|i| if (seed >> (i % 64)) & 1 == 1 { (i as i8).wrapping_add(1) | 1 } else { 0 }).collect();
        let t = DenseTensor::from_values(Dims3::new(h, w, d), vals).unwrap();
        for cs in [32, 64, 128] {
            let s = compress(&t, ChunkSize::new(cs).unwrap());
            prop_assert_eq!(s.nnz(), t.nnz());
            prop_assert_eq!(decompress(&s).unwrap(), t.clone());
        }
    }

    #[test]
    fn chunk_dot_matches_dense(a in cells(128), b in cells(128)) {
        let cs = ChunkSize::default();
        let (ca, cb) = (SparseChunk::from_dense(&a, cs), SparseChunk::from_dense(&b, cs));
        let want: i32 = a.iter().zip(&b).map(|(&x, &y)| x as i32 * y as i32).sum();
        let matches = a.iter().zip(&b).filter(|(x, y)| **x != 0 && **y != 0).count() as u32;
        prop_assert_eq!(sparse_chunk_dot(&ca, &cb).unwrap(), (want, matches));
        let subs: (i32, u32) = (0..4).map(|p| ca.sub_dot(&cb, p * 32, 32)).fold((0, 0), |s, x| (s.0 + x.0, s.1 + x.1));
        prop_assert_eq!(subs, (want, matches));
    }

    #[test]
    fn descramble_inverts_permute(dens in prop::collection::vec(0.0f64..1.0, 1..40), input in 0usize..4) {
        let plan = greedy_balance(&dens, BalanceMode::GbsVariant);
        let vals: Vec<i32> = (0..dens.len() as i32).map(|x| x * 7 - 3).collect();
        let id = plan.permutation_id(input);
        let p = permute(&vals, id, &plan).unwrap();
        prop_assert_eq!(descramble(&p, id, &plan).unwrap(), vals);
    }

    #[test]
    fn telescope_partitions(n in 1usize..300, frac in 0.3f64..0.95, min in 1usize..6) {
        let s = telescoping_schedule(n, &TelescopeSpec::Geometric { fraction: frac, min_group: min }).unwrap();
        prop_assert_eq!(s.requesters(), n);
        prop_assert!(s.group_sizes.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.group_sizes.iter().all(|&g| g > 0));
    }

    /// Every requester is served exactly once, whatever the interleaving of
    /// requests and responses.
    #[test]
    fn combiner_serves_each_requester_once(n in 1usize..80, responses in prop::collection::vec(0usize..80, 0..6)) {
        let mut c = CombinerState::new(TelescopeSpec::Default);
        let mut served = vec![0u32; n];
        let mut pending_fetches = 0usize;
        for i in 0..n {
            if let CombineOutcome::Fired { members, .. } = c.request(5, n, i).unwrap() {
                pending_fetches += 1;
                for m in members { served[m] += 1; }
            }
            if responses.contains(&i) && pending_fetches > 0 {
                pending_fetches -= 1;
                for m in c.response(5).unwrap() { served[m] += 1; }
            }
        }
        prop_assert!(served.iter().all(|&s| s == 1), "{:?}", served);
        prop_assert_eq!(c.open_groups(), 0);
    }

    #[test]
    fn arbiter_is_work_conserving(banks in 1usize..9, ids in prop::collection::vec(0u64..64, 1..60)) {
        let mut arb = BankArbiter::new(banks, ids.len());
        for (i, &id) in ids.iter().enumerate() { arb.push(req(i, id)); }
        let mut granted = 0;
        let mut cycles = 0;
        while !arb.is_idle() {
            let g = arb.arbitrate();
            let mut seen: Vec<usize> = g.iter().map(|r| arb.bank_of(r.chunk_id)).collect();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), g.len());
            prop_assert!(!g.is_empty());
            granted += g.len();
            cycles += 1;
        }
        prop_assert_eq!(granted, ids.len());
        let worst = (0..banks).map(|b| ids.iter().filter(|&&id| id as usize % banks == b).count()).max().unwrap();
        prop_assert_eq!(cycles, worst);
    }

    #[test]
    fn attribution_sums(ledgers in prop::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50, 0u64..50), 1..16), tail in 0u64..20) {
        let trace: Vec<PeLedger> = ledgers.iter().map(|&(a, b, c, d, e)| PeLedger {
            nonzero: a, zero: b, barrier: c, bandwidth: d, overhead: e, last_end: a + b + c + d + e,
        }).collect();
        let end = trace.iter().map(|p| p.last_end).max().unwrap() + tail;
        let b = breakdown_attribution(&trace, end);
        prop_assert_eq!(b.total(), end * trace.len() as u64);
    }

    /// PEs finishing in random order never share an accumulator between tags.
    #[test]
    fn colors_never_merge_tags(depth in 1usize..6, order in prop::collection::vec(0usize..4, 1..200)) {
        let pes = 4;
        let mut pool = ColorPool::new(depth);
        let mut next = [0u64; 4];
        let mut live: Vec<(u64, usize, Vec<bool>)> = Vec::new();
        for &pe in &order {
            let tag = next[pe];
            let slot = match live.iter().find(|l| l.0 == tag) {
                Some(l) => l.1,
                None => match pool.acquire(tag, pes) {
                    ColorGrant::Buffer(s) => { live.push((tag, s, vec![false; pes])); s }
                    ColorGrant::Stall => continue,
                },
            };
            prop_assert!(live.iter().filter(|l| l.1 == slot).count() == 1);
            pool.contribute(slot, tag, pe, 1);
            next[pe] += 1;
            let l = live.iter_mut().find(|l| l.0 == tag).unwrap();
            l.2[pe] = true;
            if l.2.iter().all(|&d| d) {
                let sum: i32 = pool.release(slot).iter().sum();
                prop_assert_eq!(sum, pes as i32);
                live.retain(|l| l.0 != tag);
            }
        }
        prop_assert_eq!(pool.violations, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_matches_oracle(seed in any::<u64>()) {
        let l = common::random_layer(seed);
        let w = Workload::generate(&l, ChunkSize::default()).unwrap();
        let oracle = sparsim::tensor::dense_conv_oracle(&l, &l.generate_ifmaps().unwrap(), &l.generate_filters().unwrap()).unwrap();
        for v in [Variant::Sparten, Variant::Synchronous, Variant::Barista] {
            let out = simulate(&w, &ArchConfig::preset(v, Scale::Desk)).unwrap();
            prop_assert_eq!(&out.raw, &oracle);
        }
    }
}
