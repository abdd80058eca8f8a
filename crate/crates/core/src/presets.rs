//! Benchmark presets: per-network densities with synthetic, desk-sized
//! conv shapes.
//!
//! Shapes are stand-ins: small spatial extents so every layer runs in well
//! under a second on the desk grid, with network-like channel counts (64 to
//! 512 cells per window once the kernel is unrolled) so chunks fill the way
//! they do on real layers. Window counts are multiples of eight. Every layer
//! uses a filter density spread of 0.5.

use crate::error::{config_err, Result};
use crate::tensor::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkPreset {
    pub name: &'static str,
    pub filter_density: f64,
    pub ifmap_density: f64,
    pub layers: usize,
}

pub const NETWORKS: [NetworkPreset; 5] = [
    NetworkPreset { name: "alexnet_like", filter_density: 0.368, ifmap_density: 0.473, layers: 5 },
    NetworkPreset { name: "resnet18_like", filter_density: 0.336, ifmap_density: 0.486, layers: 17 },
    NetworkPreset { name: "inception_v4_like", filter_density: 0.570, ifmap_density: 0.317, layers: 20 },
    NetworkPreset { name: "vggnet_like", filter_density: 0.334, ifmap_density: 0.446, layers: 13 },
    NetworkPreset { name: "resnet50_like", filter_density: 0.421, ifmap_density: 0.384, layers: 49 },
];

pub const BATCH: usize = 8;

/// `(h, d, k, stride, n)` with square maps.
type Shape = (usize, usize, usize, usize, usize);

fn shapes(name: &str) -> Option<Vec<Shape>> {
    let mut s: Vec<Shape> = Vec::new();
    match name {
        "alexnet_like" => {
            s.extend([(23, 3, 11, 4, 32), (10, 16, 5, 1, 48), (8, 48, 3, 1, 64), (8, 64, 3, 1, 64), (8, 64, 3, 1, 32)]);
        }
        "resnet18_like" => {
            s.push((19, 3, 7, 2, 16));
            for (h, c) in [(8, 64), (6, 96), (6, 128), (5, 128)] {
                s.extend([(h, c, 3, 1, c); 4]);
            }
        }
        "vggnet_like" => {
            s.extend([(10, 3, 3, 1, 32), (10, 32, 3, 1, 32)]);
            s.extend([(8, 32, 3, 1, 64), (8, 64, 3, 1, 64)]);
            s.extend([(6, 64, 3, 1, 96), (6, 96, 3, 1, 96), (6, 96, 3, 1, 96)]);
            s.extend([(5, 128, 3, 1, 128); 6]);
        }
        "inception_v4_like" => {
            for _ in 0..2 {
                s.extend([
                    (8, 64, 1, 1, 32),
                    (8, 64, 1, 1, 48),
                    (10, 48, 3, 1, 48),
                    (10, 48, 3, 1, 32),
                    (8, 64, 1, 1, 32),
                    (10, 32, 3, 1, 48),
                    (10, 48, 3, 1, 48),
                    (10, 48, 3, 1, 32),
                    (8, 64, 1, 1, 32),
                    (8, 128, 1, 1, 64),
                ]);
            }
        }
        "resnet50_like" => {
            s.push((19, 3, 7, 2, 16));
            for (blocks, c, out) in [(3, 64, 6), (4, 96, 5), (6, 128, 4), (3, 128, 3)] {
                for _ in 0..blocks {
                    s.extend([(out, 4 * c, 1, 1, c), (out + 2, c, 3, 1, c), (out, c, 1, 1, 4 * c)]);
                }
            }
        }
        _ => return None,
    }
    Some(s)
}

pub fn network(name: &str) -> Option<NetworkPreset> {
    NETWORKS.iter().copied().find(|n| n.name == name)
}

pub fn preset_names() -> Vec<&'static str> {
    NETWORKS.iter().map(|n| n.name).collect()
}

/// The preset's layers; layer `i` is seeded with `seed * 1000 + i`.
pub fn preset_layers(name: &str, seed: u64) -> Result<Vec<LayerSpec>> {
    let (Some(net), Some(shapes)) = (network(name), shapes(name)) else {
        return config_err(format!("unknown preset {name:?} (known: {})", preset_names().join(", ")));
    };
    Ok(shapes
        .into_iter()
        .enumerate()
        .map(|(i, (h, d, k, stride, n))| {
            let mut l = LayerSpec::new(h, h, d, k, n).with_densities(net.ifmap_density, net.filter_density);
            l.name = format!("{name}/{i}");
            l.stride = stride;
            l.batch = BATCH;
            l.filter_spread = 0.5;
            l.seed = seed.wrapping_mul(1000).wrapping_add(i as u64);
            l
        })
        .collect())
}
