//! Counter-based random streams.
//!
//! Every draw is addressed by `(run_seed, iteration, purpose, attempt, index)`,
//! so a sample set can be regenerated point by point in any order and on any
//! number of threads.

use crate::model::{NominalDensity, ParamPoint};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Candidate points of the iteration's sample set (nominal draws for the
    /// plain method, acceptance-rejection candidates for the biased one).
    Sample,
    /// Trial points used to calibrate the threshold and region probability.
    Trial,
    /// Choice of snapshot parameters among the current samples.
    SnapshotPick,
    /// Reservoir retention of rejected candidates.
    Reservoir,
    /// Anything owned by a test or an external caller.
    Auxiliary(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Sample => 1,
            Purpose::Trial => 2,
            Purpose::SnapshotPick => 3,
            Purpose::Reservoir => 4,
            Purpose::Auxiliary(k) => 0x100 + k as u64,
        }
    }
}

#[inline]
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Identifies one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub run_seed: u64,
    pub iteration: u64,
    pub purpose: Purpose,
    pub attempt: u32,
}

impl StreamKey {
    pub fn new(run_seed: u64, iteration: usize, purpose: Purpose) -> Self {
        Self {
            run_seed,
            iteration: iteration as u64,
            purpose,
            attempt: 0,
        }
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    fn seed(&self) -> [u8; 32] {
        let mut h = splitmix(self.run_seed);
        h = splitmix(h ^ self.iteration);
        h = splitmix(h ^ self.purpose.code());
        h = splitmix(h ^ self.attempt as u64);
        let mut out = [0u8; 32];
        let mut s = h;
        for chunk in out.chunks_mut(8) {
            s = splitmix(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn stream(&self, dim: usize) -> PointStream {
        PointStream {
            rng: ChaCha8Rng::from_seed(self.seed()),
            dim,
        }
    }
}

/// Random access to the points of one stream.
#[derive(Debug, Clone)]
pub struct PointStream {
    rng: ChaCha8Rng,
    dim: usize,
}

#[inline]
fn open_unit(bits: u64) -> f64 {
    // 53 random bits centred in their cell: strictly inside (0, 1).
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl PointStream {
    /// Point number `index` of the open unit cube.
    pub fn unit(&mut self, index: u64) -> Vec<f64> {
        // Each coordinate consumes two 32-bit words.
        self.rng.set_word_pos(index as u128 * 2 * self.dim as u128);
        (0..self.dim).map(|_| open_unit(self.rng.next_u64())).collect()
    }

    pub fn point(&mut self, index: u64, density: &NominalDensity) -> ParamPoint {
        let u = self.unit(index);
        density.from_unit(&u)
    }

    /// A uniform scalar in `(0, 1)` at slot `index` (one per slot).
    pub fn scalar(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(index as u128 * 2);
        open_unit(self.rng.next_u64())
    }

    /// Draws `count` consecutive points starting at `start`.
    pub fn points(&mut self, start: u64, count: usize, density: &NominalDensity) -> Vec<ParamPoint> {
        (0..count as u64).map(|i| self.point(start + i, density)).collect()
    }
}

/// `count` nominal draws from the stream `key`.
pub fn nominal_points(key: StreamKey, count: usize, density: &NominalDensity) -> Vec<ParamPoint> {
    key.stream(density.dim()).points(0, count, density)
}

/// Uniform choice of `k` distinct indices from `0..n`, in ascending order.
pub fn choose_indices(key: StreamKey, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut s = key.stream(1);
    let mut idx: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates.
    for i in 0..k {
        let u = s.scalar(i as u64);
        let j = i + ((u * (n - i) as f64) as usize).min(n - i - 1);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

/// Uniform reservoir of fixed capacity over a stream of items.
#[derive(Debug, Clone)]
pub struct Reservoir<T> {
    capacity: usize,
    seen: u64,
    items: Vec<T>,
    stream: PointStream,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize, key: StreamKey) -> Self {
        Self {
            capacity,
            seen: 0,
            items: Vec::with_capacity(capacity),
            stream: key.stream(1),
        }
    }

    pub fn offer(&mut self, item: T) {
        let n = self.seen;
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else if self.capacity > 0 {
            let j = (self.stream.scalar(n) * (n + 1) as f64) as usize;
            if j < self.capacity {
                self.items[j] = item;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}
