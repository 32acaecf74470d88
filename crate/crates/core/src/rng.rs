//! Counter-based Gaussian streams.
//!
//! Every entry is a pure function of `(seed, stream, layer, row, col)`, so a
//! width-`m` network is the top-left block of any wider network built from
//! the same seed. Columns are paired: columns `2k` and `2k+1` share one
//! Box-Muller draw (cosine and sine branch).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Weight = 1,
    Bias = 2,
    Data = 3,
    Probe = 4,
    Shuffle = 5,
    MonteCarlo = 6,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn key(seed: u64, stream: Stream, layer: u64, row: u64, pair: u64) -> u64 {
    let mut h = mix(seed.wrapping_add(GOLDEN));
    h = mix(h ^ (stream as u64).wrapping_mul(GOLDEN));
    h = mix(h ^ layer.wrapping_mul(0xd6e8_feb8_6659_fd93));
    h = mix(h ^ row.wrapping_mul(0xa076_1d64_78bd_642f));
    mix(h ^ pair.wrapping_mul(0xe703_7ed1_a0b4_28db))
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    // (0, 1]: never zero, so the logarithm below is finite.
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn pair_at(seed: u64, stream: Stream, layer: u64, row: u64, pair: u64) -> (f64, f64) {
    let k = key(seed, stream, layer, row, pair);
    let u1 = unit_open(mix(k ^ 0x1));
    let u2 = unit_open(mix(k ^ 0x2));
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Standard normal entry `G(seed, stream, layer, row, col)`.
pub fn gaussian(seed: u64, stream: Stream, layer: u64, row: u64, col: u64) -> f64 {
    let (a, b) = pair_at(seed, stream, layer, row, col / 2);
    if col.is_multiple_of(2) {
        a
    } else {
        b
    }
}

/// Fills a `rows x cols` block in row-major order.
pub fn gaussian_block(seed: u64, stream: Stream, layer: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for (j, row) in out.chunks_mut(cols.max(1)).enumerate().take(rows) {
        for (k, pair) in row.chunks_mut(2).enumerate() {
            let (a, b) = pair_at(seed, stream, layer, j as u64, k as u64);
            pair[0] = a;
            if pair.len() == 2 {
                pair[1] = b;
            }
        }
    }
    out
}

/// A conventional sequential generator derived from a seed and a label,
/// for shuffles and Monte-Carlo blocks.
pub fn derived_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, stream, index, 0, 0))
}
