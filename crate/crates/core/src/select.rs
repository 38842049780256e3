//! Distributed selection over the PEs' sorted local reservoirs.
//!
//! [`select_exact`] and [`select_range`] share one recursion. Each round
//! draws pivots as extreme elements of Bernoulli samples of the remaining
//! candidates, counts globally how many candidates lie at or below each pivot
//! with one all-reduce, and narrows every PE's rank window to the segment
//! that must contain the answer. Once few candidates remain they are gathered
//! to rank 0 and finished sequentially.
//!
//! [`select_gather`] is the centralized baseline: new candidates are shipped
//! to a coordinator that keeps the whole sample.

use alloc::vec::Vec;
use core::fmt;

use crate::comm::{CommError, Communicator, ReduceOp};
use crate::reservoir::{KeyedItem, Reservoir};
use crate::variates::{geometric_skip, UnitSource};

/// Requested global rank window `lower..=upper` (1-based) and pivot count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionSpec {
    pub lower: u64,
    pub upper: u64,
    pub pivots: usize,
}

impl SelectionSpec {
    pub fn exact(k: u64, pivots: usize) -> Self {
        SelectionSpec {
            lower: k,
            upper: k,
            pivots,
        }
    }

    pub fn range(lower: u64, upper: u64, pivots: usize) -> Self {
        SelectionSpec {
            lower,
            upper,
            pivots,
        }
    }

    fn validate(&self) -> Result<(), SelectError> {
        if self.lower == 0 || self.upper < self.lower || self.pivots == 0 {
            Err(SelectError::InvalidSpec)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionResult {
    /// The selected element.
    pub threshold: KeyedItem,
    /// Global number of elements `<=` the selected one.
    pub achieved_rank: u64,
    /// Recursion levels, including the sequential base case.
    pub rounds: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectError {
    /// Fewer candidates exist globally than the requested rank.
    Infeasible {
        requested: u64,
        available: u64,
    },
    InvalidSpec,
    Comm(CommError),
}

impl From<CommError> for SelectError {
    fn from(e: CommError) -> Self {
        SelectError::Comm(e)
    }
}

impl fmt::Display for SelectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectError::Infeasible {
                requested,
                available,
            } => {
                write!(
                    f,
                    "rank {requested} requested but only {available} candidates exist"
                )
            }
            SelectError::InvalidSpec => f.write_str("invalid selection spec"),
            SelectError::Comm(e) => write!(f, "communication failed: {e}"),
        }
    }
}

impl core::error::Error for SelectError {}

/// Tuning knobs for the pivot recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectOptions {
    /// Finish sequentially once at most `base_case_per_pivot * pivots`
    /// candidates remain.
    pub base_case_per_pivot: u64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            base_case_per_pivot: 64,
        }
    }
}

/// State of one PE at the start of a recursion level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTrace {
    /// Local candidate window, as 0-based ranks `lo..hi` into the reservoir.
    pub lo: usize,
    pub hi: usize,
    /// Global number of elements excluded below the window.
    pub below: u64,
    /// Global number of candidates.
    pub candidates: u64,
    /// Target ranks relative to the window.
    pub target_lower: u64,
    pub target_upper: u64,
}

/// Selects the element of exact global rank `k` (1-based) using `pivots`
/// pivots per round.
pub fn select_exact<C, U>(
    comm: &mut C,
    reservoir: &Reservoir,
    k: u64,
    pivots: usize,
    rng: &mut U,
) -> Result<SelectionResult, SelectError>
where
    C: Communicator,
    U: UnitSource,
{
    select_range(comm, reservoir, SelectionSpec::exact(k, pivots), rng)
}

/// Selects some element whose global rank lies in `spec.lower..=spec.upper`.
/// Stops as soon as a pivot lands inside the window.
pub fn select_range<C, U>(
    comm: &mut C,
    reservoir: &Reservoir,
    spec: SelectionSpec,
    rng: &mut U,
) -> Result<SelectionResult, SelectError>
where
    C: Communicator,
    U: UnitSource,
{
    select_with(
        comm,
        reservoir,
        spec,
        rng,
        SelectOptions::default(),
        None,
        None,
    )
}

/// Full-control entry point. `known_total`, if given, must equal the global
/// reservoir size (it saves one all-reduce); `trace` receives one entry per
/// recursion level.
pub fn select_with<C, U>(
    comm: &mut C,
    reservoir: &Reservoir,
    spec: SelectionSpec,
    rng: &mut U,
    options: SelectOptions,
    known_total: Option<u64>,
    mut trace: Option<&mut Vec<RoundTrace>>,
) -> Result<SelectionResult, SelectError>
where
    C: Communicator,
    U: UnitSource,
{
    spec.validate()?;
    let total = match known_total {
        Some(t) => t,
        None => comm.all_reduce(reservoir.len() as u64, ReduceOp::Sum)?,
    };
    if total < spec.lower {
        return Err(SelectError::Infeasible {
            requested: spec.lower,
            available: total,
        });
    }
    let d = spec.pivots;
    let cutoff = options.base_case_per_pivot.saturating_mul(d as u64);

    let (mut lo, mut hi) = (0usize, reservoir.len());
    let mut candidates = total;
    let mut below = 0u64;
    let (mut tl, mut th) = (spec.lower, spec.upper.min(total));
    let mut rounds = 0u32;

    loop {
        rounds += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(RoundTrace {
                lo,
                hi,
                below,
                candidates,
                target_lower: tl,
                target_upper: th,
            });
        }

        if candidates <= cutoff {
            let local: Vec<KeyedItem> = reservoir.iter_from(lo).take(hi - lo).collect();
            let all = comm.gather(0, local)?;
            let pick = (comm.rank() == 0).then(|| {
                let mut all = all;
                let idx = (tl - 1) as usize;
                *all.select_nth_unstable(idx).1
            });
            let threshold = comm.broadcast(0, pick)?;
            return Ok(SelectionResult {
                threshold,
                achieved_rank: below + tl,
                rounds,
            });
        }

        // Pivot sampling: the extreme element of a Bernoulli sample has
        // expected rank `target` counted from the sampled end.
        let m = (hi - lo) as u64;
        let target = tl + (th - tl) / 2;
        let from_top = target > candidates / 2;
        let q = if from_top {
            1.0 / (candidates - target + 1) as f64
        } else {
            1.0 / target as f64
        };
        let local: Vec<Option<KeyedItem>> = (0..d)
            .map(|_| {
                let skip = geometric_skip(rng, q);
                (skip < m).then(|| {
                    let idx = if from_top {
                        hi - 1 - skip as usize
                    } else {
                        lo + skip as usize
                    };
                    reservoir.nth(idx).expect("window inside reservoir")
                })
            })
            .collect();
        let op = if from_top {
            ReduceOp::Max
        } else {
            ReduceOp::Min
        };
        let sampled = comm.all_reduce(local, op)?;
        let mut pivots: Vec<KeyedItem> = sampled.into_iter().flatten().collect();
        if pivots.is_empty() {
            // Empty sample everywhere: the extreme candidate still makes
            // progress.
            let edge = (lo < hi).then(|| {
                let idx = if from_top { hi - 1 } else { lo };
                reservoir.nth(idx).expect("window inside reservoir")
            });
            let edge = comm.all_reduce(edge, op)?;
            pivots.push(edge.expect("non-empty candidate set"));
        }
        pivots.sort_unstable();
        pivots.dedup();

        let local_le: Vec<usize> = pivots
            .iter()
            .map(|p| reservoir.count_le(p).clamp(lo, hi))
            .collect();
        let counts: Vec<u64> = local_le.iter().map(|&c| (c - lo) as u64).collect();
        let counts = comm.all_reduce(counts, ReduceOp::Sum)?;

        if let Some(j) = counts.iter().position(|&c| c >= tl && c <= th) {
            return Ok(SelectionResult {
                threshold: pivots[j],
                achieved_rank: below + counts[j],
                rounds,
            });
        }

        // No pivot hit the window: keep the segment between the last pivot
        // below it and the first pivot above it, both exclusive.
        let j = counts.partition_point(|&c| c < tl);
        let (new_lo, base) = if j > 0 {
            (local_le[j - 1], counts[j - 1])
        } else {
            (lo, 0)
        };
        let (new_hi, top) = if j < pivots.len() {
            let lt = reservoir.rank_of(&pivots[j]).clamp(lo, hi);
            (lt, counts[j] - 1)
        } else {
            (hi, candidates)
        };
        lo = new_lo;
        hi = new_hi;
        below += base;
        candidates = top - base;
        tl -= base;
        th = (th - base).min(candidates);
    }
}

/// Centralized selection. Every PE ships `candidates` to `root`, which adds
/// them to the sample it keeps in `retained`, selects the k-th smallest with
/// quickselect, drops everything larger and broadcasts the result.
///
/// `retained` is only meaningful on the root; elsewhere it stays empty.
pub fn select_gather<C: Communicator>(
    comm: &mut C,
    retained: &mut Vec<KeyedItem>,
    candidates: Vec<KeyedItem>,
    k: u64,
    root: usize,
) -> Result<SelectionResult, SelectError> {
    if k == 0 {
        return Err(SelectError::InvalidSpec);
    }
    let gathered = comm.gather(root, candidates)?;
    let decision = if comm.rank() == root {
        retained.extend(gathered);
        let available = retained.len() as u64;
        let pick = (available >= k).then(|| {
            let idx = (k - 1) as usize;
            let kth = *retained.select_nth_unstable(idx).1;
            retained.truncate(idx + 1);
            kth
        });
        Some((pick, available))
    } else {
        None
    };
    let (pick, available) = comm.broadcast(root, decision)?;
    match pick {
        Some(threshold) => Ok(SelectionResult {
            threshold,
            achieved_rank: k,
            rounds: 1,
        }),
        None => Err(SelectError::Infeasible {
            requested: k,
            available,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::Single;
    use crate::variates::PeRng;
    use alloc::vec;

    fn reservoir(keys: &[f64]) -> Reservoir {
        keys.iter()
            .enumerate()
            .map(|(i, &k)| KeyedItem::new(k, 0, i as u64))
            .collect()
    }

    #[test]
    fn single_pe_equals_local_select() {
        let mut rng = PeRng::new(1, 0);
        let mut keys: Vec<f64> = (0..5_000).map(|_| rng.unit().get()).collect();
        let r = reservoir(&keys);
        keys.sort_by(f64::total_cmp);
        for k in [1u64, 2, 100, 2_500, 4_999, 5_000] {
            for d in [1, 8] {
                let res = select_exact(&mut Single::new(), &r, k, d, &mut rng).unwrap();
                assert_eq!(res.threshold.key, keys[k as usize - 1]);
                assert_eq!(res.achieved_rank, k);
                assert!(res.rounds >= 1);
            }
        }
    }

    #[test]
    fn range_within_bounds_single_pe() {
        let mut rng = PeRng::new(2, 0);
        let keys: Vec<f64> = (0..10_000).map(|_| rng.unit().get()).collect();
        let r = reservoir(&keys);
        for _ in 0..50 {
            let res = select_range(
                &mut Single::new(),
                &r,
                SelectionSpec::range(1_000, 2_000, 1),
                &mut rng,
            )
            .unwrap();
            assert!((1_000..=2_000).contains(&res.achieved_rank));
            assert_eq!(r.count_le(&res.threshold) as u64, res.achieved_rank);
        }
    }

    #[test]
    fn infeasible_and_invalid() {
        let r = reservoir(&[1.0, 2.0]);
        let mut rng = PeRng::new(3, 0);
        assert_eq!(
            select_exact(&mut Single::new(), &r, 3, 1, &mut rng),
            Err(SelectError::Infeasible {
                requested: 3,
                available: 2
            })
        );
        assert_eq!(
            select_exact(&mut Single::new(), &r, 0, 1, &mut rng),
            Err(SelectError::InvalidSpec)
        );
        assert_eq!(
            select_range(
                &mut Single::new(),
                &r,
                SelectionSpec::range(2, 1, 1),
                &mut rng
            ),
            Err(SelectError::InvalidSpec)
        );
    }

    #[test]
    fn trace_windows_keep_the_answer() {
        let mut rng = PeRng::new(4, 0);
        let keys: Vec<f64> = (0..20_000).map(|_| (rng.next_u64() % 500) as f64).collect();
        let r = reservoir(&keys);
        for k in [1u64, 77, 10_000, 19_999] {
            let mut trace = Vec::new();
            let res = select_with(
                &mut Single::new(),
                &r,
                SelectionSpec::exact(k, 1),
                &mut rng,
                SelectOptions::default(),
                None,
                Some(&mut trace),
            )
            .unwrap();
            let answer = r.select(k as usize).unwrap();
            assert_eq!(res.threshold, answer);
            assert_eq!(trace.len() as u32, res.rounds);
            for t in &trace {
                let pos = r.rank_of(&answer);
                assert!(t.lo <= pos && pos < t.hi, "{t:?}");
                assert_eq!(t.below, t.lo as u64);
            }
        }
    }

    #[test]
    fn gather_keeps_k_smallest() {
        let mut retained = vec![KeyedItem::new(5.0, 0, 0)];
        let cand = vec![KeyedItem::new(1.0, 0, 1), KeyedItem::new(3.0, 0, 2)];
        let res = select_gather(&mut Single::new(), &mut retained, cand, 2, 0).unwrap();
        assert_eq!(res.threshold.key, 3.0);
        assert_eq!(retained.len(), 2);
        let err = select_gather(&mut Single::new(), &mut retained, Vec::new(), 3, 0);
        assert_eq!(
            err,
            Err(SelectError::Infeasible {
                requested: 3,
                available: 2
            })
        );
    }
}
