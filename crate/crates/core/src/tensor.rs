//! Bitmask sparse tensors, synthetic workload generation and the timing-free
//! functional reference for convolution layers.
//!
//! Tensors are linearized row-major with channels innermost. A convolution
//! window is gathered in the same order (im2col), so a window vector and a
//! filter vector line up cell for cell and can be chunked identically.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result, SimError};

/// Height, width and depth of a 3-D tensor, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims3 {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl Dims3 {
    pub fn new(h: usize, w: usize, d: usize) -> Self {
        Self { h, w, d }
    }

    pub fn cells(&self) -> usize {
        self.h * self.w * self.d
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.w + x) * self.d + c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseTensor {
    pub dims: Dims3,
    pub values: Vec<i8>,
}

impl DenseTensor {
    pub fn zeros(dims: Dims3) -> Self {
        Self {
            dims,
            values: vec![0; dims.cells()],
        }
    }

    pub fn from_values(dims: Dims3, values: Vec<i8>) -> Result<Self> {
        if values.len() != dims.cells() {
            return Err(SimError::Dimension(format!(
                "{} values for {}x{}x{} tensor",
                values.len(),
                dims.h,
                dims.w,
                dims.d
            )));
        }
        Ok(Self { dims, values })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> i8 {
        self.values[self.dims.index(y, x, c)]
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn density(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.nnz() as f64 / self.values.len() as f64
        }
    }
}

/// Number of cells covered by one chunk mask. Powers of two from 8 to 128.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct ChunkSize(usize);

impl ChunkSize {
    pub const MAX: usize = 128;

    pub fn new(cells: usize) -> Result<Self> {
        if cells.is_power_of_two() && (8..=Self::MAX).contains(&cells) {
            Ok(Self(cells))
        } else {
            config_err(format!(
                "chunk size {cells} must be a power of two in 8..=128"
            ))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn mask_bytes(self) -> usize {
        self.0 / 8
    }
}

impl Default for ChunkSize {
    fn default() -> Self {
        Self(128)
    }
}

impl TryFrom<usize> for ChunkSize {
    type Error = SimError;
    fn try_from(v: usize) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ChunkSize> for usize {
    fn from(c: ChunkSize) -> usize {
        c.0
    }
}

#[inline]
fn low_bits(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

/// Fixed-width bitmask plus the packed nonzero values in position order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseChunk {
    pub size: ChunkSize,
    pub mask: u128,
    pub values: Vec<i8>,
}

impl SparseChunk {
    pub fn empty(size: ChunkSize) -> Self {
        Self {
            size,
            mask: 0,
            values: Vec::new(),
        }
    }

    /// Packs up to `size` cells; a shorter slice is zero-padded.
    pub fn from_dense(cells: &[i8], size: ChunkSize) -> Self {
        debug_assert!(cells.len() <= size.get());
        let mut mask = 0u128;
        let mut values = Vec::new();
        for (i, &v) in cells.iter().enumerate() {
            if v != 0 {
                mask |= 1u128 << i;
                values.push(v);
            }
        }
        Self { size, mask, values }
    }

    pub fn to_dense(&self) -> Result<Vec<i8>> {
        self.validate()?;
        let mut out = vec![0i8; self.size.get()];
        let mut m = self.mask;
        let mut k = 0;
        while m != 0 {
            let p = m.trailing_zeros() as usize;
            out[p] = self.values[k];
            k += 1;
            m &= m - 1;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask & !low_bits(self.size.get()) != 0 {
            return Err(SimError::Corruption(format!(
                "mask has bits beyond chunk size {}",
                self.size.get()
            )));
        }
        let pop = self.mask.count_ones() as usize;
        if pop != self.values.len() {
            return Err(SimError::Corruption(format!(
                "mask popcount {pop} but {} packed values",
                self.values.len()
            )));
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Packed value at linear position `p`, which must be set in the mask.
    #[inline]
    pub fn value_at(&self, p: u32) -> i8 {
        let rank = (self.mask & low_bits(p as usize)).count_ones() as usize;
        self.values[rank]
    }

    /// Nonzeros inside `[lo, lo + width)`.
    #[inline]
    pub fn sub_nnz(&self, lo: usize, width: usize) -> u32 {
        ((self.mask >> lo) & low_bits(width)).count_ones()
    }

    /// Dot product restricted to positions `[lo, lo + width)`: the work one
    /// PE does on one sub-chunk. Returns `(accumulator, matched positions)`.
    #[inline]
    pub fn sub_dot(&self, other: &SparseChunk, lo: usize, width: usize) -> (i32, u32) {
        let mut m = self.mask & other.mask & (low_bits(width) << lo);
        let matches = m.count_ones();
        let mut acc = 0i32;
        while m != 0 {
            let p = m.trailing_zeros();
            acc = acc.wrapping_add(self.value_at(p) as i32 * other.value_at(p) as i32);
            m &= m - 1;
        }
        (acc, matches)
    }

    /// Bytes on the wire: the full mask plus only the occupied value bytes.
    pub fn transfer_bytes(&self) -> usize {
        self.size.mask_bytes() + self.values.len()
    }

    /// Mask rendered one character per position, position 0 first.
    pub fn mask_string(&self) -> String {
        (0..self.size.get())
            .map(|i| if self.mask >> i & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

/// Matched-position dot product of two chunks: `(acc, match_count)`, where
/// `match_count = popcount(a.mask & b.mask)` is the number of MACs performed.
pub fn sparse_chunk_dot(a: &SparseChunk, b: &SparseChunk) -> Result<(i32, u32)> {
    if a.size != b.size {
        return Err(SimError::Dimension(format!(
            "chunk sizes differ: {} vs {}",
            a.size.get(),
            b.size.get()
        )));
    }
    Ok(a.sub_dot(b, 0, a.size.get()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseTensor {
    pub dims: Dims3,
    pub logical_length: usize,
    pub chunk_size: ChunkSize,
    pub chunks: Vec<SparseChunk>,
}

impl SparseTensor {
    pub fn nnz(&self) -> usize {
        self.chunks.iter().map(SparseChunk::nnz).sum()
    }

    pub fn density(&self) -> f64 {
        if self.logical_length == 0 {
            0.0
        } else {
            self.nnz() as f64 / self.logical_length as f64
        }
    }
}

fn chunk_vector(cells: &[i8], size: ChunkSize) -> Vec<SparseChunk> {
    cells
        .chunks(size.get())
        .map(|c| SparseChunk::from_dense(c, size))
        .collect()
}

pub fn compress(dense: &DenseTensor, chunk_size: ChunkSize) -> SparseTensor {
    SparseTensor {
        dims: dense.dims,
        logical_length: dense.values.len(),
        chunk_size,
        chunks: chunk_vector(&dense.values, chunk_size),
    }
}

pub fn decompress(sparse: &SparseTensor) -> Result<DenseTensor> {
    let cs = sparse.chunk_size.get();
    if sparse.logical_length != sparse.dims.cells()
        || sparse.chunks.len() != sparse.logical_length.div_ceil(cs)
    {
        return Err(SimError::Corruption(format!(
            "{} chunks cannot cover {} cells",
            sparse.chunks.len(),
            sparse.logical_length
        )));
    }
    let mut values = Vec::with_capacity(sparse.chunks.len() * cs);
    for chunk in &sparse.chunks {
        if chunk.size != sparse.chunk_size {
            return Err(SimError::Corruption("mixed chunk sizes".into()));
        }
        values.extend(chunk.to_dense()?);
    }
    if values[sparse.logical_length..].iter().any(|&v| v != 0) {
        return Err(SimError::Corruption("nonzero padding in last chunk".into()));
    }
    values.truncate(sparse.logical_length);
    DenseTensor::from_values(sparse.dims, values)
}

fn nonzero_value(rng: &mut impl Rng) -> i8 {
    // 255 choices: [-128, -1] and [1, 127]
    let v: i16 = rng.random_range(-128..=126);
    if v >= 0 {
        (v + 1) as i8
    } else {
        v as i8
    }
}

fn check_density(density: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&density) || density.is_nan() {
        return config_err(format!("density {density} outside [0, 1]"));
    }
    Ok(())
}

/// Exact-count target: `floor(density * cells)`, tolerant of representation
/// error in the product.
pub fn target_nonzeros(density: f64, cells: usize) -> usize {
    ((density * cells as f64) + 1e-9).floor().min(cells as f64) as usize
}

fn fill_random(cells: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<i8> {
    let count = target_nonzeros(density, cells);
    let mut values = vec![0i8; cells];
    let mut positions = sample(rng, cells, count).into_vec();
    positions.sort_unstable();
    for p in positions {
        values[p] = nonzero_value(rng);
    }
    values
}

/// Deterministic synthetic tensor with exactly `floor(density * cells)`
/// nonzeros at positions sampled without replacement.
pub fn generate_sparse(dims: Dims3, density: f64, seed: u64) -> Result<DenseTensor> {
    check_density(density)?;
    if dims.cells() == 0 {
        return config_err("tensor dimensions must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DenseTensor {
        dims,
        values: fill_random(dims.cells(), density, &mut rng),
    })
}

/// Shape, densities and seed of one convolution layer and its input batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub batch: usize,
    pub ifmap_density: f64,
    pub filter_density: f64,
    /// Relative spread of per-filter densities around `filter_density`:
    /// filter densities are evenly spaced over `target * (1 ± spread)`.
    #[serde(default = "default_spread")]
    pub filter_spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_spread() -> f64 {
    0.5
}

impl LayerSpec {
    pub fn new(h: usize, w: usize, d: usize, k: usize, n: usize) -> Self {
        Self {
            name: String::new(),
            h,
            w,
            d,
            k,
            n,
            stride: 1,
            batch: 1,
            ifmap_density: 1.0,
            filter_density: 1.0,
            filter_spread: 0.0,
            seed: 0,
        }
    }

    pub fn with_densities(mut self, ifmap: f64, filter: f64) -> Self {
        self.ifmap_density = ifmap;
        self.filter_density = filter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.d == 0 || self.k == 0 || self.n == 0 {
            return config_err("layer dimensions must be positive");
        }
        if self.k > self.h || self.k > self.w {
            return config_err(format!(
                "filter size {} exceeds input {}x{}",
                self.k, self.h, self.w
            ));
        }
        if self.stride == 0 || self.batch == 0 {
            return config_err("stride and batch must be at least 1");
        }
        check_density(self.ifmap_density)?;
        check_density(self.filter_density)?;
        if !(0.0..=1.0).contains(&self.filter_spread) {
            return config_err("filter_spread outside [0, 1]");
        }
        Ok(())
    }

    pub fn input_dims(&self) -> Dims3 {
        Dims3::new(self.h, self.w, self.d)
    }

    pub fn filter_dims(&self) -> Dims3 {
        Dims3::new(self.k, self.k, self.d)
    }

    pub fn out_h(&self) -> usize {
        (self.h - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.k) / self.stride + 1
    }

    pub fn windows_per_map(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn window_len(&self) -> usize {
        self.k * self.k * self.d
    }

    pub fn chunks_per_window(&self, chunk: ChunkSize) -> usize {
        self.window_len().div_ceil(chunk.get())
    }

    /// Dense multiply-adds: `h' * w' * k^2 * d * n * batch`.
    pub fn dense_macs(&self) -> u64 {
        (self.windows_per_map() * self.window_len() * self.n * self.batch) as u64
    }

    /// Per-filter target densities, evenly spaced over the configured spread
    /// and assigned to filters in a seed-dependent order.
    pub fn filter_densities(&self) -> Vec<f64> {
        let n = self.n;
        let mut levels: Vec<f64> = (0..n)
            .map(|i| {
                let u = if n == 1 {
                    0.0
                } else {
                    2.0 * i as f64 / (n - 1) as f64 - 1.0
                };
                (self.filter_density * (1.0 + self.filter_spread * u)).clamp(0.0, 1.0)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_f11e);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            levels.swap(i, j);
        }
        levels
    }

    pub fn generate_ifmaps(&self) -> Result<Vec<DenseTensor>> {
        self.validate()?;
        (0..self.batch)
            .map(|b| {
                generate_sparse(
                    self.input_dims(),
                    self.ifmap_density,
                    self.seed.wrapping_mul(1_000_003).wrapping_add(b as u64),
                )
            })
            .collect()
    }

    pub fn generate_filters(&self) -> Result<Vec<DenseTensor>> {
        self.validate()?;
        self.filter_densities()
            .into_iter()
            .enumerate()
            .map(|(f, dens)| {
                generate_sparse(
                    self.filter_dims(),
                    dens,
                    self.seed
                        .wrapping_mul(7_919)
                        .wrapping_add(0x00f1_17e5)
                        .wrapping_add(f as u64 * 104_729),
                )
            })
            .collect()
    }
}

/// Receptive field of output `(oy, ox)` gathered into an im2col vector.
pub fn im2col_window(ifmap: &DenseTensor, layer: &LayerSpec, oy: usize, ox: usize) -> Vec<i8> {
    let mut out = Vec::with_capacity(layer.window_len());
    let (y0, x0) = (oy * layer.stride, ox * layer.stride);
    for ky in 0..layer.k {
        for kx in 0..layer.k {
            let base = ifmap.dims.index(y0 + ky, x0 + kx, 0);
            out.extend_from_slice(&ifmap.values[base..base + layer.d]);
        }
    }
    out
}

pub fn window_chunks(
    ifmap: &DenseTensor,
    layer: &LayerSpec,
    oy: usize,
    ox: usize,
    chunk: ChunkSize,
) -> Vec<SparseChunk> {
    chunk_vector(&im2col_window(ifmap, layer, oy, ox), chunk)
}

pub fn filter_chunks(filter: &DenseTensor, chunk: ChunkSize) -> Vec<SparseChunk> {
    chunk_vector(&filter.values, chunk)
}

/// Chunk pairs `(ifmap_chunk_id, filter_chunk_id)` that together produce one
/// output cell. Ifmap ids are `window * chunks + c` for the window of
/// `out_pos` within one input map; filter ids are `filter_id * chunks + c`.
pub fn chunk_pairs_for_output_cell(
    layer: &LayerSpec,
    out_pos: (usize, usize),
    filter_id: usize,
    chunk: ChunkSize,
) -> Result<Vec<(usize, usize)>> {
    let (oy, ox) = out_pos;
    if oy >= layer.out_h() || ox >= layer.out_w() {
        return Err(SimError::OutOfRange(format!(
            "output ({oy}, {ox}) outside {}x{}",
            layer.out_h(),
            layer.out_w()
        )));
    }
    if filter_id >= layer.n {
        return Err(SimError::OutOfRange(format!(
            "filter {filter_id} of {}",
            layer.n
        )));
    }
    let c = layer.chunks_per_window(chunk);
    let window = oy * layer.out_w() + ox;
    Ok((0..c).map(|i| (window * c + i, filter_id * c + i)).collect())
}

/// 32-bit pre-activation outputs of one input map, `(h', w', n)` channel-minor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvOutput {
    pub dims: Dims3,
    pub values: Vec<i32>,
}

impl ConvOutput {
    pub fn zeros(dims: Dims3) -> Self {
        Self {
            dims,
            values: vec![0; dims.cells()],
        }
    }

    pub fn activated(&self) -> Vec<i8> {
        self.values.iter().map(|&v| relu_saturate(v)).collect()
    }
}

/// Ground-truth convolution by direct nested loops over the dense tensors.
pub fn dense_conv_oracle(
    layer: &LayerSpec,
    ifmaps: &[DenseTensor],
    filters: &[DenseTensor],
) -> Result<Vec<ConvOutput>> {
    layer.validate()?;
    if filters.len() != layer.n {
        return Err(SimError::Dimension(format!(
            "{} filters for n = {}",
            filters.len(),
            layer.n
        )));
    }
    if let Some(f) = filters.iter().find(|f| f.dims != layer.filter_dims()) {
        return Err(SimError::Dimension(format!(
            "filter dims {:?} != {:?}",
            f.dims,
            layer.filter_dims()
        )));
    }
    if let Some(m) = ifmaps.iter().find(|m| m.dims != layer.input_dims()) {
        return Err(SimError::Dimension(format!(
            "input dims {:?} != {:?}",
            m.dims,
            layer.input_dims()
        )));
    }
    let odims = Dims3::new(layer.out_h(), layer.out_w(), layer.n);
    let mut outs = Vec::with_capacity(ifmaps.len());
    for map in ifmaps {
        let mut out = ConvOutput::zeros(odims);
        for oy in 0..odims.h {
            for ox in 0..odims.w {
                for (f, filt) in filters.iter().enumerate() {
                    let mut acc = 0i32;
                    for ky in 0..layer.k {
                        for kx in 0..layer.k {
                            for c in 0..layer.d {
                                let a = map.at(oy * layer.stride + ky, ox * layer.stride + kx, c);
                                acc = acc.wrapping_add(a as i32 * filt.at(ky, kx, c) as i32);
                            }
                        }
                    }
                    out.values[odims.index(oy, ox, f)] = acc;
                }
            }
        }
        outs.push(out);
    }
    Ok(outs)
}

/// ReLU followed by saturation to the 8-bit range used between layers.
#[inline]
pub fn relu_saturate(v: i32) -> i8 {
    v.clamp(0, 127) as i8
}

/// Conversion-unit output path: ReLU, saturate, then re-compress.
pub fn relu_compress(outputs: &[i32], chunk_size: ChunkSize) -> Vec<SparseChunk> {
    let activated: Vec<i8> = outputs.iter().map(|&v| relu_saturate(v)).collect();
    if activated.is_empty() {
        return vec![SparseChunk::empty(chunk_size)];
    }
    chunk_vector(&activated, chunk_size)
}

/// Activated output map as a sparse tensor, the form handed to the next layer.
pub fn activate_output(out: &ConvOutput, chunk_size: ChunkSize) -> SparseTensor {
    SparseTensor {
        dims: out.dims,
        logical_length: out.values.len(),
        chunk_size,
        chunks: relu_compress(&out.values, chunk_size),
    }
}
