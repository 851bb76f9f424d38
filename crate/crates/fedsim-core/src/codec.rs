//! Update compression codecs with exact wire-byte accounting.
//!
//! Six schemes: `identity` (dense), `low_rank` (least-squares factors
//! against a seeded random basis, matrices only), `random_mask` (sparse,
//! deliberately unscaled and therefore biased), `subsample` (sparse,
//! rescaled by 1/s, unbiased), `quantize` (two-point stochastic rounding on
//! the vector's [min, max] range), and `rotate_quantize` (randomized
//! Hadamard rotation before quantizing, spreading outliers across
//! coordinates).
//!
//! Masks, bases, and rotation signs are never transmitted: the wire carries
//! only the (round, client) derivation inputs and both ends re-derive the
//! randomness from the shared run-level seed, so every round gets a fresh
//! mask at near-zero byte cost.
//!
//! Wire format (little-endian): a 16-byte header `{tag: u32, dim: u32,
//! n_examples: u32, reserved: u32}` where `tag = kind | bits << 8`, followed
//! by a scheme-specific payload. Reals are 8-byte IEEE-754; quantizer codes
//! are a `bits`-wide MSB-first bitstream padded to a byte boundary.

use crate::error::{Error, Result};
use crate::model::LayoutEntry;
use crate::param::ParamVector;
use crate::seeds;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const HEADER_BYTES: usize = 16;

const KIND_IDENTITY: u8 = 0;
const KIND_LOW_RANK: u8 = 1;
const KIND_RANDOM_MASK: u8 = 2;
const KIND_SUBSAMPLE: u8 = 3;
const KIND_QUANTIZE: u8 = 4;
const KIND_ROTATE_QUANTIZE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressionScheme {
    Identity,
    LowRank { rank: usize },
    RandomMask { keep_fraction: f64 },
    Subsample { keep_fraction: f64 },
    Quantize { bits: u8 },
    RotateQuantize { bits: u8 },
}

impl CompressionScheme {
    pub fn name(&self) -> &'static str {
        match self {
            CompressionScheme::Identity => "identity",
            CompressionScheme::LowRank { .. } => "low_rank",
            CompressionScheme::RandomMask { .. } => "random_mask",
            CompressionScheme::Subsample { .. } => "subsample",
            CompressionScheme::Quantize { .. } => "quantize",
            CompressionScheme::RotateQuantize { .. } => "rotate_quantize",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CompressionScheme::Identity => Ok(()),
            CompressionScheme::LowRank { rank } => {
                if rank == 0 {
                    return Err(Error::InvalidArgument("low_rank rank must be >= 1".into()));
                }
                Ok(())
            }
            CompressionScheme::RandomMask { keep_fraction }
            | CompressionScheme::Subsample { keep_fraction } => {
                if !(keep_fraction.is_finite() && keep_fraction > 0.0 && keep_fraction <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "keep_fraction must lie in (0, 1], got {keep_fraction}"
                    )));
                }
                Ok(())
            }
            CompressionScheme::Quantize { bits }
            | CompressionScheme::RotateQuantize { bits } => {
                if !(1..=8).contains(&bits) {
                    return Err(Error::InvalidArgument(format!(
                        "quantizer bits must lie in 1..=8, got {bits}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn kind(&self) -> u8 {
        match self {
            CompressionScheme::Identity => KIND_IDENTITY,
            CompressionScheme::LowRank { .. } => KIND_LOW_RANK,
            CompressionScheme::RandomMask { .. } => KIND_RANDOM_MASK,
            CompressionScheme::Subsample { .. } => KIND_SUBSAMPLE,
            CompressionScheme::Quantize { .. } => KIND_QUANTIZE,
            CompressionScheme::RotateQuantize { .. } => KIND_ROTATE_QUANTIZE,
        }
    }

    fn bits(&self) -> u8 {
        match *self {
            CompressionScheme::Quantize { bits } | CompressionScheme::RotateQuantize { bits } => {
                bits
            }
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct QuantBlock {
    min: f64,
    max: f64,
    /// Packed codes; empty for a constant vector (`min == max`).
    codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
enum LowRankBlock {
    /// Bias/vector entries travel uncompressed.
    Raw(Vec<f64>),
    /// `a` is the learned `rows x rank` factor; the `rank x cols` basis is
    /// re-derived from the seed at decode time.
    Factor { rank: u32, a: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Dense(Vec<f64>),
    LowRank {
        round: u32,
        client: u32,
        blocks: Vec<LowRankBlock>,
    },
    /// `scale` is `None` for random_mask (values land unscaled) and
    /// `Some(1/s)` for subsample.
    Sparse {
        round: u32,
        client: u32,
        kept: Vec<f64>,
        scale: Option<f64>,
    },
    Quant(QuantBlock),
    RotQuant {
        round: u32,
        client: u32,
        q: QuantBlock,
    },
}

/// A compressed client delta plus everything needed to account for and
/// reverse it. `run_seed` is shared out-of-band context (both ends of the
/// simulated link know the run seed); it is not part of the serialization.
#[derive(Debug, Clone)]
pub struct EncodedUpdate {
    scheme: CompressionScheme,
    dim: usize,
    n_examples: usize,
    run_seed: u64,
    payload: Payload,
}

impl EncodedUpdate {
    pub fn scheme(&self) -> CompressionScheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn wire_bytes(&self) -> usize {
        measure_bytes(self)
    }
}

/// Serialized size of a dense vector (the identity encoding); also the cost
/// of broadcasting the model downlink.
pub fn dense_wire_bytes(dim: usize) -> usize {
    HEADER_BYTES + 8 * dim
}

fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize + 7) / 8
}

/// Number of coordinates a sparsifier keeps: `ceil(s * dim)` computed with a
/// small epsilon so representation error in `s * dim` cannot bump an exact
/// product to the next integer, clamped to `1..=dim`.
fn keep_count(keep_fraction: f64, dim: usize) -> usize {
    let raw = (keep_fraction * dim as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, dim)
}

fn check_layout(layout: &[LayoutEntry], dim: usize) -> Result<()> {
    let mut expected = 0;
    for entry in layout {
        if entry.offset != expected {
            return Err(Error::InvalidArgument(format!(
                "layout entry `{}` at offset {} is not contiguous",
                entry.name, entry.offset
            )));
        }
        expected += entry.len();
    }
    if expected != dim {
        return Err(Error::DimMismatch {
            context: "layout extent",
            left: expected,
            right: dim,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------- bit packing

struct BitWriter {
    bits: u8,
    buf: Vec<u8>,
    acc: u64,
    pending: u32,
}

impl BitWriter {
    fn new(bits: u8, count: usize) -> Self {
        Self {
            bits,
            buf: Vec::with_capacity(packed_len(count, bits)),
            acc: 0,
            pending: 0,
        }
    }

    fn push(&mut self, code: u32) {
        self.acc = (self.acc << self.bits) | u64::from(code);
        self.pending += u32::from(self.bits);
        while self.pending >= 8 {
            self.pending -= 8;
            self.buf.push((self.acc >> self.pending) as u8);
            self.acc &= (1 << self.pending) - 1;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.pending > 0 {
            self.buf.push((self.acc << (8 - self.pending)) as u8);
        }
        self.buf
    }
}

struct BitReader<'a> {
    bits: u8,
    data: &'a [u8],
    cursor: usize,
    acc: u64,
    pending: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], bits: u8) -> Self {
        Self {
            bits,
            data,
            cursor: 0,
            acc: 0,
            pending: 0,
        }
    }

    fn next(&mut self) -> Option<u32> {
        while self.pending < u32::from(self.bits) {
            let byte = *self.data.get(self.cursor)?;
            self.cursor += 1;
            self.acc = (self.acc << 8) | u64::from(byte);
            self.pending += 8;
        }
        self.pending -= u32::from(self.bits);
        let code = (self.acc >> self.pending) as u32 & ((1 << self.bits) - 1);
        self.acc &= (1 << self.pending) - 1;
        Some(code)
    }
}

// ---------------------------------------------------------------- quantizer

/// Stochastic rounding onto `2^bits` evenly spaced levels covering
/// `[min, max]`: a value between two levels rounds up with probability equal
/// to its fractional position, making the decode unbiased.
fn quantize_block(values: &[f64], bits: u8, rng: &mut ChaCha8Rng) -> QuantBlock {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return QuantBlock {
            min,
            max,
            codes: Vec::new(),
        };
    }
    let top = (1u32 << bits) - 1;
    let mut writer = BitWriter::new(bits, values.len());
    for &v in values {
        let t = ((v - min) / (max - min) * f64::from(top)).clamp(0.0, f64::from(top));
        let lo = t.floor();
        let frac = t - lo;
        let u: f64 = rng.random();
        let code = (lo as u32 + u32::from(u < frac)).min(top);
        writer.push(code);
    }
    QuantBlock {
        min,
        max,
        codes: writer.finish(),
    }
}

/// Lattice endpoints decode to the stored bounds exactly; interior levels
/// are `min + code * step`.
fn dequantize_block(q: &QuantBlock, bits: u8, count: usize) -> Result<Vec<f64>> {
    if q.min == q.max {
        if !q.codes.is_empty() {
            return Err(Error::CorruptPayload(
                "constant quantize block carries codes".into(),
            ));
        }
        return Ok(vec![q.min; count]);
    }
    if q.codes.len() != packed_len(count, bits) {
        return Err(Error::CorruptPayload(format!(
            "quantize block holds {} code bytes, expected {}",
            q.codes.len(),
            packed_len(count, bits)
        )));
    }
    let top = (1u32 << bits) - 1;
    let step = (q.max - q.min) / f64::from(top);
    let mut reader = BitReader::new(&q.codes, bits);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let code = reader
            .next()
            .ok_or_else(|| Error::CorruptPayload("quantize codes truncated".into()))?;
        out.push(if code == 0 {
            q.min
        } else if code == top {
            q.max
        } else {
            q.min + f64::from(code) * step
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- rotation

fn padded_dim(dim: usize) -> usize {
    dim.next_power_of_two()
}

fn rotation_signs(p: usize, sign_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(sign_seed);
    (0..p)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// In-place unnormalized Walsh-Hadamard transform (`H * v`, length a power
/// of two). `H * H = n * I`, so applying it twice and dividing by `n`
/// recovers the input.
fn fwht(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        let mut i = 0;
        while i < n {
            for j in i..i + h {
                let a = v[j];
                let b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
            i += 2 * h;
        }
        h *= 2;
    }
}

/// Orthonormal randomized rotation `R x = (1/sqrt(p)) H D x` with `D` a
/// seeded random +/-1 diagonal; the input is zero-padded to the next power
/// of two. Preserves the Euclidean norm.
pub fn randomized_rotation(x: &[f64], sign_seed: u64) -> Vec<f64> {
    let p = padded_dim(x.len().max(1));
    let signs = rotation_signs(p, sign_seed);
    let mut y = vec![0.0; p];
    y[..x.len()].copy_from_slice(x);
    for (v, s) in y.iter_mut().zip(&signs) {
        *v *= s;
    }
    fwht(&mut y);
    let scale = 1.0 / (p as f64).sqrt();
    for v in y.iter_mut() {
        *v *= scale;
    }
    y
}

/// Inverse of [`randomized_rotation`]: `x = D (1/sqrt(p)) H y`, truncated
/// back to `out_dim` coordinates.
pub fn randomized_rotation_inverse(y: &[f64], sign_seed: u64, out_dim: usize) -> Vec<f64> {
    let p = y.len();
    debug_assert!(p.is_power_of_two());
    let signs = rotation_signs(p, sign_seed);
    let mut x = y.to_vec();
    fwht(&mut x);
    let scale = 1.0 / (p as f64).sqrt();
    for (v, s) in x.iter_mut().zip(&signs) {
        *v = *v * scale * s;
    }
    x.truncate(out_dim);
    x
}

// ---------------------------------------------------------------- low rank

/// Draw the shared `rank x cols` basis with N(0,1)/sqrt(rank) entries.
fn lowrank_basis(rng: &mut ChaCha8Rng, rank: usize, cols: usize) -> Vec<f64> {
    let scale = 1.0 / (rank as f64).sqrt();
    (0..rank * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Solve `A = argmin ||A B - W||_F` via the normal equations
/// `A = W B^T (B B^T)^{-1}`, one Cholesky solve per row of `W`.
fn lowrank_fit(w: &[f64], rows: usize, cols: usize, basis: &[f64], rank: usize) -> Result<Vec<f64>> {
    let mut gram = vec![0.0; rank * rank];
    for a in 0..rank {
        for b in 0..rank {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += basis[a * cols + c] * basis[b * cols + c];
            }
            gram[a * rank + b] = acc;
        }
    }
    let chol = cholesky(&gram, rank)?;
    let mut factors = vec![0.0; rows * rank];
    let mut rhs = vec![0.0; rank];
    for r in 0..rows {
        let wrow = &w[r * cols..(r + 1) * cols];
        for (a, slot) in rhs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += basis[a * cols + c] * wrow[c];
            }
            *slot = acc;
        }
        let solved = cholesky_solve(&chol, rank, &rhs);
        factors[r * rank..(r + 1) * rank].copy_from_slice(&solved);
    }
    Ok(factors)
}

fn cholesky(gram: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for k in 0..n {
        let mut diag = gram[k * n + k];
        for j in 0..k {
            diag -= l[k * n + j] * l[k * n + j];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return Err(Error::Numeric(
                "low-rank basis is numerically singular".into(),
            ));
        }
        l[k * n + k] = diag.sqrt();
        for i in k + 1..n {
            let mut acc = gram[i * n + k];
            for j in 0..k {
                acc -= l[i * n + j] * l[k * n + j];
            }
            l[i * n + k] = acc / l[k * n + k];
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= l[i * n + j] * z[j];
        }
        z[i] = acc / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = z[i];
        for j in i + 1..n {
            acc -= l[j * n + i] * x[j];
        }
        x[i] = acc / l[i * n + i];
    }
    x
}

// ---------------------------------------------------------------- encode

fn sparse_indices(run_seed: u64, label: &str, round: u32, client: u32, dim: usize, k: usize) -> Vec<usize> {
    let mut rng = seeds::stream(run_seed, label, &[u64::from(round), u64::from(client)]);
    let mut indices = rand::seq::index::sample(&mut rng, dim, k).into_vec();
    indices.sort_unstable();
    indices
}

/// Compress `delta` for the uplink. `round` and `client_id` individualize
/// the derived masks/bases/signs; `seed` is the run-level codec seed both
/// ends share; `n_examples` rides along for weighted aggregation.
pub fn encode(
    delta: &ParamVector,
    layout: &[LayoutEntry],
    scheme: CompressionScheme,
    round: u32,
    client_id: u32,
    seed: u64,
    n_examples: usize,
) -> Result<EncodedUpdate> {
    scheme.validate()?;
    let dim = delta.dim();
    if dim > u32::MAX as usize || n_examples > u32::MAX as usize {
        return Err(Error::InvalidArgument(
            "dim and n_examples must fit in 32 bits".into(),
        ));
    }
    let indices = |label: &str, k: usize| sparse_indices(seed, label, round, client_id, dim, k);

    let payload = match scheme {
        CompressionScheme::Identity => Payload::Dense(delta.values().to_vec()),
        CompressionScheme::LowRank { rank } => {
            check_layout(layout, dim)?;
            let mut rng =
                seeds::stream(seed, "lowrank", &[u64::from(round), u64::from(client_id)]);
            let mut blocks = Vec::with_capacity(layout.len());
            for entry in layout {
                let block = &delta.values()[entry.offset..entry.offset + entry.len()];
                if entry.is_matrix() {
                    let r = rank.min(entry.rows).min(entry.cols);
                    let basis = lowrank_basis(&mut rng, r, entry.cols);
                    let a = lowrank_fit(block, entry.rows, entry.cols, &basis, r)?;
                    blocks.push(LowRankBlock::Factor {
                        rank: r as u32,
                        a,
                    });
                } else {
                    blocks.push(LowRankBlock::Raw(block.to_vec()));
                }
            }
            Payload::LowRank {
                round,
                client: client_id,
                blocks,
            }
        }
        CompressionScheme::RandomMask { keep_fraction } => {
            let k = keep_count(keep_fraction, dim);
            let kept = indices("mask", k)
                .iter()
                .map(|&ix| delta.values()[ix])
                .collect();
            Payload::Sparse {
                round,
                client: client_id,
                kept,
                scale: None,
            }
        }
        CompressionScheme::Subsample { keep_fraction } => {
            let k = keep_count(keep_fraction, dim);
            let kept = indices("subsample", k)
                .iter()
                .map(|&ix| delta.values()[ix])
                .collect();
            Payload::Sparse {
                round,
                client: client_id,
                kept,
                scale: Some(1.0 / keep_fraction),
            }
        }
        CompressionScheme::Quantize { bits } => {
            let mut rng = seeds::stream(seed, "quant", &[u64::from(round), u64::from(client_id)]);
            Payload::Quant(quantize_block(delta.values(), bits, &mut rng))
        }
        CompressionScheme::RotateQuantize { bits } => {
            let sign_seed =
                seeds::derive_seed(seed, "rotate", &[u64::from(round), u64::from(client_id)]);
            let rotated = randomized_rotation(delta.values(), sign_seed);
            let mut rng = seeds::stream(seed, "quant", &[u64::from(round), u64::from(client_id)]);
            Payload::RotQuant {
                round,
                client: client_id,
                q: quantize_block(&rotated, bits, &mut rng),
            }
        }
    };

    Ok(EncodedUpdate {
        scheme,
        dim,
        n_examples,
        run_seed: seed,
        payload,
    })
}

// ---------------------------------------------------------------- decode

/// Reverse an encoding. Deterministic: the payload plus the shared run seed
/// fully determine the output.
pub fn decode(enc: &EncodedUpdate, layout: &[LayoutEntry]) -> Result<ParamVector> {
    let dim = enc.dim;
    let values = match (&enc.scheme, &enc.payload) {
        (CompressionScheme::Identity, Payload::Dense(values)) => {
            if values.len() != dim {
                return Err(Error::CorruptPayload(format!(
                    "dense payload of {} values for dim {dim}",
                    values.len()
                )));
            }
            values.clone()
        }
        (CompressionScheme::LowRank { .. }, Payload::LowRank { round, client, blocks }) => {
            check_layout(layout, dim)?;
            if blocks.len() != layout.len() {
                return Err(Error::CorruptPayload(format!(
                    "{} low-rank blocks for {} layout entries",
                    blocks.len(),
                    layout.len()
                )));
            }
            let mut rng =
                seeds::stream(enc.run_seed, "lowrank", &[u64::from(*round), u64::from(*client)]);
            let mut out = vec![0.0; dim];
            for (entry, block) in layout.iter().zip(blocks) {
                let slot = &mut out[entry.offset..entry.offset + entry.len()];
                match block {
                    LowRankBlock::Raw(values) => {
                        if entry.is_matrix() || values.len() != entry.len() {
                            return Err(Error::CorruptPayload(format!(
                                "raw block mismatch at entry `{}`",
                                entry.name
                            )));
                        }
                        slot.copy_from_slice(values);
                    }
                    LowRankBlock::Factor { rank, a } => {
                        let r = *rank as usize;
                        if !entry.is_matrix()
                            || r == 0
                            || r > entry.rows.min(entry.cols)
                            || a.len() != entry.rows * r
                        {
                            return Err(Error::CorruptPayload(format!(
                                "factor block mismatch at entry `{}`",
                                entry.name
                            )));
                        }
                        let basis = lowrank_basis(&mut rng, r, entry.cols);
                        for row in 0..entry.rows {
                            for c in 0..entry.cols {
                                let mut acc = 0.0;
                                for j in 0..r {
                                    acc += a[row * r + j] * basis[j * entry.cols + c];
                                }
                                slot[row * entry.cols + c] = acc;
                            }
                        }
                    }
                }
            }
            out
        }
        (
            CompressionScheme::RandomMask { .. } | CompressionScheme::Subsample { .. },
            Payload::Sparse {
                round,
                client,
                kept,
                scale,
            },
        ) => {
            if kept.is_empty() || kept.len() > dim {
                return Err(Error::CorruptPayload(format!(
                    "sparse payload keeps {} of {dim} values",
                    kept.len()
                )));
            }
            let label = if scale.is_some() { "subsample" } else { "mask" };
            let indices = sparse_indices(enc.run_seed, label, *round, *client, dim, kept.len());
            let mut out = vec![0.0; dim];
            let factor = scale.unwrap_or(1.0);
            for (&ix, &v) in indices.iter().zip(kept) {
                out[ix] = factor * v;
            }
            out
        }
        (CompressionScheme::Quantize { bits }, Payload::Quant(q)) => {
            dequantize_block(q, *bits, dim)?
        }
        (CompressionScheme::RotateQuantize { bits }, Payload::RotQuant { round, client, q }) => {
            let padded = padded_dim(dim);
            let rotated = dequantize_block(q, *bits, padded)?;
            let sign_seed = seeds::derive_seed(
                enc.run_seed,
                "rotate",
                &[u64::from(*round), u64::from(*client)],
            );
            randomized_rotation_inverse(&rotated, sign_seed, dim)
        }
        _ => {
            return Err(Error::CorruptPayload(
                "scheme tag does not match payload shape".into(),
            ))
        }
    };
    ParamVector::new(values)
}

// ---------------------------------------------------------------- wire form

/// Exact serialized length, computed arithmetically from the payload shape
/// (always equal to `to_bytes().len()`).
pub fn measure_bytes(enc: &EncodedUpdate) -> usize {
    HEADER_BYTES
        + match &enc.payload {
            Payload::Dense(values) => 8 * values.len(),
            Payload::LowRank { blocks, .. } => {
                // round + client + block count
                12 + blocks
                    .iter()
                    .map(|b| match b {
                        // kind byte + length + values
                        LowRankBlock::Raw(values) => 1 + 4 + 8 * values.len(),
                        // kind byte + rank + length + factors
                        LowRankBlock::Factor { a, .. } => 1 + 4 + 4 + 8 * a.len(),
                    })
                    .sum::<usize>()
            }
            Payload::Sparse { kept, scale, .. } => {
                // round + client + count, then the optional scale
                12 + if scale.is_some() { 8 } else { 0 } + 8 * kept.len()
            }
            Payload::Quant(q) => 16 + q.codes.len(),
            Payload::RotQuant { q, .. } => 8 + 16 + q.codes.len(),
        }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(Error::CorruptPayload(format!(
                "payload truncated at byte {}",
                self.at
            )));
        }
        let slice = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn done(&self) -> Result<()> {
        if self.at != self.data.len() {
            return Err(Error::CorruptPayload(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.at
            )));
        }
        Ok(())
    }
}

impl EncodedUpdate {
    /// Canonical serialization (see the module docs for the layout).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer {
            buf: Vec::with_capacity(measure_bytes(self)),
        };
        let tag = u32::from(self.scheme.kind()) | u32::from(self.scheme.bits()) << 8;
        w.u32(tag);
        w.u32(self.dim as u32);
        w.u32(self.n_examples as u32);
        w.u32(0);
        match &self.payload {
            Payload::Dense(values) => w.f64s(values),
            Payload::LowRank {
                round,
                client,
                blocks,
            } => {
                w.u32(*round);
                w.u32(*client);
                w.u32(blocks.len() as u32);
                for block in blocks {
                    match block {
                        LowRankBlock::Raw(values) => {
                            w.u8(0);
                            w.u32(values.len() as u32);
                            w.f64s(values);
                        }
                        LowRankBlock::Factor { rank, a } => {
                            w.u8(1);
                            w.u32(*rank);
                            w.u32(a.len() as u32);
                            w.f64s(a);
                        }
                    }
                }
            }
            Payload::Sparse {
                round,
                client,
                kept,
                scale,
            } => {
                w.u32(*round);
                w.u32(*client);
                w.u32(kept.len() as u32);
                if let Some(s) = scale {
                    w.f64(*s);
                }
                w.f64s(kept);
            }
            Payload::Quant(q) => {
                w.f64(q.min);
                w.f64(q.max);
                w.buf.extend_from_slice(&q.codes);
            }
            Payload::RotQuant { round, client, q } => {
                w.u32(*round);
                w.u32(*client);
                w.f64(q.min);
                w.f64(q.max);
                w.buf.extend_from_slice(&q.codes);
            }
        }
        debug_assert_eq!(w.buf.len(), measure_bytes(self));
        w.buf
    }

    /// Parse a serialized update. `run_seed` is the shared run-level codec
    /// seed the masks and bases derive from. On a parsed update the sparse
    /// `keep_fraction` and low-rank `rank` scheme fields are informational
    /// reconstructions; decoding uses only the payload.
    pub fn from_bytes(bytes: &[u8], run_seed: u64) -> Result<EncodedUpdate> {
        let mut r = Reader { data: bytes, at: 0 };
        let tag = r.u32()?;
        let kind = (tag & 0xFF) as u8;
        let bits = ((tag >> 8) & 0xFF) as u8;
        let dim = r.u32()? as usize;
        let n_examples = r.u32()? as usize;
        let _reserved = r.u32()?;
        if dim == 0 {
            return Err(Error::CorruptPayload("dim 0 in header".into()));
        }

        let (scheme, payload) = match kind {
            KIND_IDENTITY => (
                CompressionScheme::Identity,
                Payload::Dense(r.f64s(dim)?),
            ),
            KIND_LOW_RANK => {
                let round = r.u32()?;
                let client = r.u32()?;
                let count = r.u32()? as usize;
                let mut blocks = Vec::with_capacity(count);
                let mut max_rank = 1usize;
                for _ in 0..count {
                    match r.u8()? {
                        0 => {
                            let len = r.u32()? as usize;
                            blocks.push(LowRankBlock::Raw(r.f64s(len)?));
                        }
                        1 => {
                            let rank = r.u32()?;
                            let len = r.u32()? as usize;
                            if rank == 0 || len % rank as usize != 0 {
                                return Err(Error::CorruptPayload(
                                    "factor block with inconsistent rank".into(),
                                ));
                            }
                            max_rank = max_rank.max(rank as usize);
                            blocks.push(LowRankBlock::Factor {
                                rank,
                                a: r.f64s(len)?,
                            });
                        }
                        other => {
                            return Err(Error::CorruptPayload(format!(
                                "unknown low-rank block kind {other}"
                            )))
                        }
                    }
                }
                (
                    CompressionScheme::LowRank { rank: max_rank },
                    Payload::LowRank {
                        round,
                        client,
                        blocks,
                    },
                )
            }
            KIND_RANDOM_MASK | KIND_SUBSAMPLE => {
                let round = r.u32()?;
                let client = r.u32()?;
                let count = r.u32()? as usize;
                if count == 0 || count > dim {
                    return Err(Error::CorruptPayload(format!(
                        "sparse count {count} out of range for dim {dim}"
                    )));
                }
                let scale = if kind == KIND_SUBSAMPLE {
                    Some(r.f64()?)
                } else {
                    None
                };
                let kept = r.f64s(count)?;
                let fraction = count as f64 / dim as f64;
                let scheme = if kind == KIND_SUBSAMPLE {
                    CompressionScheme::Subsample {
                        keep_fraction: fraction,
                    }
                } else {
                    CompressionScheme::RandomMask {
                        keep_fraction: fraction,
                    }
                };
                (
                    scheme,
                    Payload::Sparse {
                        round,
                        client,
                        kept,
                        scale,
                    },
                )
            }
            KIND_QUANTIZE | KIND_ROTATE_QUANTIZE => {
                if !(1..=8).contains(&bits) {
                    return Err(Error::CorruptPayload(format!(
                        "quantizer bits {bits} out of range"
                    )));
                }
                let (round, client) = if kind == KIND_ROTATE_QUANTIZE {
                    (Some(r.u32()?), Some(r.u32()?))
                } else {
                    (None, None)
                };
                let min = r.f64()?;
                let max = r.f64()?;
                let count = if kind == KIND_ROTATE_QUANTIZE {
                    padded_dim(dim)
                } else {
                    dim
                };
                let codes = if min == max {
                    Vec::new()
                } else {
                    r.take(packed_len(count, bits))?.to_vec()
                };
                let q = QuantBlock { min, max, codes };
                if kind == KIND_ROTATE_QUANTIZE {
                    (
                        CompressionScheme::RotateQuantize { bits },
                        Payload::RotQuant {
                            round: round.unwrap(),
                            client: client.unwrap(),
                            q,
                        },
                    )
                } else {
                    (CompressionScheme::Quantize { bits }, Payload::Quant(q))
                }
            }
            other => {
                return Err(Error::CorruptPayload(format!(
                    "unknown scheme tag {other}"
                )))
            }
        };
        r.done()?;
        Ok(EncodedUpdate {
            scheme,
            dim,
            n_examples,
            run_seed,
            payload,
        })
    }
}
