//! Synthetic mini-batch streams.
//!
//! Every `(batch, rank)` slice has its own generator derived from the run
//! seed, so a PE can produce its share without coordinating with anyone and
//! the stream does not depend on how PEs are scheduled onto threads.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use wrs_core::{Item, Mode};

/// How item weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDist {
    /// Uniform on (0, 100].
    #[default]
    Uniform,
    /// Normal with standard deviation [`SKEW_SD`] and a mean that grows with
    /// both the batch index and the PE rank; non-positive draws are redrawn.
    SkewedNormal,
}

pub const SKEW_BASE_MEAN: f64 = 50.0;
pub const SKEW_BATCH_STEP: f64 = 5.0;
pub const SKEW_RANK_STEP: f64 = 2.0;
pub const SKEW_SD: f64 = 15.0;

/// Splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for an independent stream identified by `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(seed), |acc, &x| mix64(acc ^ mix64(x)))
}

const WORKLOAD_TAG: u64 = 0x776f_726b;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub p: usize,
    /// Items per PE per batch.
    pub b: usize,
    pub mode: Mode,
    pub weights: WeightDist,
    pub seed: u64,
}

impl Workload {
    /// Item id of the `j`-th item of PE `rank` in `batch`. Ids increase
    /// along each PE's stream and are unique across PEs.
    pub fn item_id(&self, batch: u64, rank: usize, j: usize) -> u64 {
        (batch * self.p as u64 + rank as u64) * self.b as u64 + j as u64
    }

    pub fn batch(&self, batch: u64, rank: usize) -> Vec<Item> {
        let mut out = Vec::with_capacity(self.b);
        self.fill_batch(batch, rank, &mut out);
        out
    }

    /// Replaces the contents of `out` with PE `rank`'s share of `batch`.
    pub fn fill_batch(&self, batch: u64, rank: usize, out: &mut Vec<Item>) {
        out.clear();
        let ids = (0..self.b).map(|j| self.item_id(batch, rank, j));
        if self.mode == Mode::Uniform {
            out.extend(ids.map(Item::unweighted));
            return;
        }
        let mut rng =
            StdRng::seed_from_u64(derive_seed(self.seed, &[WORKLOAD_TAG, batch, rank as u64]));
        match self.weights {
            WeightDist::Uniform => {
                out.extend(ids.map(|id| Item::new(100.0 * (1.0 - rng.random::<f64>()), id)));
            }
            WeightDist::SkewedNormal => {
                let mean =
                    SKEW_BASE_MEAN + SKEW_BATCH_STEP * batch as f64 + SKEW_RANK_STEP * rank as f64;
                let normal = Normal::new(mean, SKEW_SD).unwrap();
                out.extend(ids.map(|id| {
                    let w = loop {
                        let w = normal.sample(&mut rng);
                        if w > 0.0 {
                            break w;
                        }
                    };
                    Item::new(w, id)
                }));
            }
        }
    }
}
