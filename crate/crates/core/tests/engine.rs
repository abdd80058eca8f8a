mod common;

use common::{random_layer, SPARSE_VARIANTS};
use sparsim::tensor::{dense_conv_oracle, DenseTensor, Dims3};
use sparsim::{simulate, ArchConfig, ChunkSize, LayerSpec, Scale, Variant, Workload};

fn desk(v: Variant) -> ArchConfig {
    ArchConfig::preset(v, Scale::Desk)
}

fn tiny(v: Variant) -> ArchConfig {
    let mut c = desk(v);
    c.clusters = 1;
    c.fgrs = 1;
    c.ifgcs = 1;
    c.pes_per_node = 1;
    c
}

/// Nonzero pairs counted straight from the dense tensors.
fn matched_pairs(l: &LayerSpec, ifmaps: &[DenseTensor], filters: &[DenseTensor]) -> u64 {
    let mut m = 0;
    for map in ifmaps {
        for oy in 0..l.out_h() {
            for ox in 0..l.out_w() {
                for f in filters {
                    for ky in 0..l.k {
                        for kx in 0..l.k {
                            for c in 0..l.d {
                                let a = map.at(oy * l.stride + ky, ox * l.stride + kx, c);
                                m += (a != 0 && f.at(ky, kx, c) != 0) as u64;
                            }
                        }
                    }
                }
            }
        }
    }
    m
}

#[test]
fn random_layers_match_oracle() {
    for seed in 0..12 {
        let l = random_layer(seed);
        let w = Workload::generate(&l, ChunkSize::default()).unwrap();
        let oracle = dense_conv_oracle(&l, &l.generate_ifmaps().unwrap(), &l.generate_filters().unwrap()).unwrap();
        for v in SPARSE_VARIANTS {
            let out = simulate(&w, &desk(v)).unwrap();
            assert_eq!(out.raw, oracle, "{v} on {l:?}");
        }
    }
}

#[test]
fn single_pe_single_chunk_closed_form() {
    let mut dims_in = vec![0i8; 2 * 2 * 8];
    let mut dims_f = vec![0i8; 2 * 2 * 8];
    for i in 0..32 {
        if i % 2 == 0 {
            dims_in[i] = 3;
        }
        if i % 3 == 0 {
            dims_f[i] = -2;
        }
    }
    let l = LayerSpec::new(2, 2, 8, 2, 1);
    let map = DenseTensor::from_values(Dims3::new(2, 2, 8), dims_in).unwrap();
    let f = DenseTensor::from_values(Dims3::new(2, 2, 8), dims_f).unwrap();
    let matches = matched_pairs(&l, std::slice::from_ref(&map), std::slice::from_ref(&f));
    assert_eq!(matches, 6);
    let w = Workload::from_dense(&l, &[map], &[f], ChunkSize::default()).unwrap();
    for v in [Variant::BaristaNoOpts, Variant::Barista] {
        let cfg = tiny(v);
        let r = simulate(&w, &cfg).unwrap().report;
        assert_eq!(r.total_cycles, cfg.cache_latency + cfg.match_latency + matches + 1, "{v}");
        assert_eq!(r.matched_macs, matches);
    }
}

#[test]
fn two_sided_macs_are_matched_pairs() {
    for seed in 20..26 {
        let l = random_layer(seed);
        let w = Workload::generate(&l, ChunkSize::default()).unwrap();
        let want = matched_pairs(&l, &l.generate_ifmaps().unwrap(), &l.generate_filters().unwrap());
        for v in [Variant::Sparten, Variant::Synchronous, Variant::BaristaNoOpts, Variant::Barista] {
            let r = simulate(&w, &desk(v)).unwrap().report;
            assert_eq!(r.macs_executed, want, "{v} seed {seed}");
        }
    }
}

#[test]
fn full_density_macs_are_dense_macs() {
    let mut l = LayerSpec::new(7, 6, 5, 3, 9);
    l.batch = 2;
    let w = Workload::generate(&l, ChunkSize::default()).unwrap();
    for v in [Variant::Sparten, Variant::Barista] {
        assert_eq!(simulate(&w, &desk(v)).unwrap().report.macs_executed, l.dense_macs());
    }
    assert_eq!(l.dense_macs(), 5 * 4 * 9 * 5 * 9 * 2);
}

#[test]
fn runs_are_deterministic() {
    let l = random_layer(99);
    let w = Workload::generate(&l, ChunkSize::default()).unwrap();
    for v in SPARSE_VARIANTS {
        let a = simulate(&w, &desk(v)).unwrap();
        let b = simulate(&w, &desk(v)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn breakdown_covers_every_pe_cycle() {
    for seed in 40..44 {
        let w = Workload::generate(&random_layer(seed), ChunkSize::default()).unwrap();
        for v in Variant::ALL {
            let r = simulate(&w, &desk(v)).unwrap().report;
            assert_eq!(r.breakdown.total(), r.total_cycles * r.pes as u64, "{v}");
        }
    }
}

#[test]
fn deliveries_cover_every_buffered_chunk() {
    let w = Workload::generate(&random_layer(7), ChunkSize::default()).unwrap();
    for v in [Variant::BaristaNoOpts, Variant::Barista] {
        let r = simulate(&w, &desk(v)).unwrap().report;
        assert!(r.stats.deliveries >= r.stats.unique.iter().sum::<u64>());
        assert_eq!(r.stats.refetches[0] + r.stats.unique[0], r.stats.fetches[0]);
        assert_eq!(r.color_violations, 0);
    }
}

#[test]
fn mismatched_chunk_size_is_rejected() {
    let l = LayerSpec::new(3, 3, 2, 1, 2);
    let w = Workload::generate(&l, ChunkSize::new(64).unwrap()).unwrap();
    assert!(simulate(&w, &desk(Variant::Barista)).is_err());
}

#[test]
fn ordering_holds_on_a_dense_layer() {
    let l = LayerSpec::new(8, 8, 32, 3, 32).with_densities(0.4, 0.4);
    let w = Workload::generate(&l, ChunkSize::default()).unwrap();
    let cyc = |v| simulate(&w, &desk(v)).unwrap().report.total_cycles;
    assert!(cyc(Variant::Ideal) <= cyc(Variant::Barista));
    assert!(cyc(Variant::Barista) <= cyc(Variant::BaristaNoOpts));
    assert!(cyc(Variant::Barista) <= cyc(Variant::Dense));
}
