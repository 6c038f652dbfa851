//! Seed streams and point samplers.
//!
//! Every stochastic draw of a run flows from one root seed. A sub-stream is
//! addressed by `(purpose, index)` and seeded with a SplitMix64 hash of the
//! triple, so draws for different purposes never share generator state and any
//! step can be replayed in isolation.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Collocation = 2,
    DataBatch = 3,
    CollocBatch = 4,
    Interface = 5,
    Rar = 6,
    WarmStart = 7,
    Eval = 8,
}

pub fn derive_seed(root: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ purpose as u64) ^ index)
}

pub fn stream(root: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, index))
}

/// Axis-aligned box in normalized `(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x0: 0.0, x1: 1.0, t0: 0.0, t1: 1.0 };

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.t1 - self.t0)
    }
}

/// Latin hypercube sample: each axis cut into `n` strata, one point per
/// stratum per axis, strata paired by independent random permutations.
pub fn latin_hypercube<R: Rng>(n: usize, rect: &Rect, rng: &mut R) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("latin hypercube needs n >= 1".into()));
    }
    let mut out = Array2::zeros((n, 2));
    let bounds = [(rect.x0, rect.x1), (rect.t0, rect.t1)];
    for (axis, &(lo, hi)) in bounds.iter().enumerate() {
        let perm = index::sample(rng, n, n);
        for (i, stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            out[[i, axis]] = lo + (hi - lo) * (stratum as f64 + u) / n as f64;
        }
    }
    Ok(out)
}

pub fn uniform_points<R: Rng>(n: usize, rect: &Rect, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |(_, j)| {
        let u: f64 = rng.random();
        if j == 0 {
            rect.x0 + (rect.x1 - rect.x0) * u
        } else {
            rect.t0 + (rect.t1 - rect.t0) * u
        }
    })
}

/// `k` distinct indices below `n` (all of them, shuffled, when `k >= n`).
pub fn batch_indices<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, n, k.min(n)).into_vec()
}
