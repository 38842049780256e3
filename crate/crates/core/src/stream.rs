//! The distributed mini-batch sampling engine.
//!
//! One [`Sampler`] lives on every PE. For each mini-batch the PEs
//!
//! 1. scan their local items against the shared threshold `T`, using skip
//!    values so that only items that will enter the reservoir get a key;
//! 2. agree on the global reservoir size with one all-reduce;
//! 3. if the sample overflowed, select the new threshold collectively and
//!    cut every local reservoir at it.
//!
//! Skip weight (or skip count) left over when a batch runs out is dropped:
//! every unit of weight has the same chance of spawning a candidate whenever
//! the scan starts, so no state needs to cross batch boundaries.

use alloc::vec::Vec;
use core::fmt;

use crate::comm::{CommError, Communicator, ReduceOp};
use crate::reservoir::{KeyedItem, Reservoir};
use crate::select::{self, SelectError, SelectOptions, SelectionSpec};
use crate::variates::{
    constrained_key, exponential_key, uniform_constrained_key, uniform_skip, unit_key,
    weighted_skip, PeRng, Threshold, UnitSource, Weight,
};

/// Items summed at once by the blocked skip scan.
pub const SKIP_BLOCK: usize = 32;

/// One stream element. `weight` is ignored in uniform mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub weight: f64,
    pub id: u64,
}

impl Item {
    pub fn new(weight: f64, id: u64) -> Self {
        Item { weight, id }
    }

    pub fn unweighted(id: u64) -> Self {
        Item { weight: 1.0, id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Weighted,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSize {
    /// Exactly `k` items once at least `k` were seen.
    Fixed(u64),
    /// Anywhere in `lower..=upper`; selection runs only once the sample
    /// outgrows `upper`.
    Range { lower: u64, upper: u64 },
}

impl SampleSize {
    /// The size local pruning must never go below.
    fn local_floor(self) -> u64 {
        match self {
            SampleSize::Fixed(k) => k,
            SampleSize::Range { upper, .. } => upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Decentralized selection with this many pivots per round.
    Pivots(usize),
    /// All new candidates go to a coordinator that keeps the sample.
    Gather { root: usize },
}

/// What to do with items whose weight is not positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPolicy {
    /// Fail the whole batch before any state changes.
    #[default]
    Reject,
    /// Drop offending items and continue.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub mode: Mode,
    pub size: SampleSize,
    pub selection: Selection,
    pub weight_policy: WeightPolicy,
    /// Sum weights [`SKIP_BLOCK`] items at a time when skipping.
    pub blocked_skip: bool,
    /// Use the local rank-k key as a provisional threshold while the global
    /// one is unset.
    pub local_threshold: bool,
    pub select_options: SelectOptions,
}

impl SamplerConfig {
    pub fn new(mode: Mode, size: SampleSize, selection: Selection) -> Self {
        SamplerConfig {
            mode,
            size,
            selection,
            weight_policy: WeightPolicy::Reject,
            blocked_skip: true,
            local_threshold: true,
            select_options: SelectOptions::default(),
        }
    }

    /// Weighted, fixed size `k`, single-pivot selection.
    pub fn weighted(k: u64) -> Self {
        Self::new(Mode::Weighted, SampleSize::Fixed(k), Selection::Pivots(1))
    }

    /// Uniform, fixed size `k`, single-pivot selection.
    pub fn uniform(k: u64) -> Self {
        Self::new(Mode::Uniform, SampleSize::Fixed(k), Selection::Pivots(1))
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_size(mut self, size: SampleSize) -> Self {
        self.size = size;
        self
    }

    pub fn with_weight_policy(mut self, policy: WeightPolicy) -> Self {
        self.weight_policy = policy;
        self
    }

    pub fn with_blocked_skip(mut self, on: bool) -> Self {
        self.blocked_skip = on;
        self
    }

    pub fn with_local_threshold(mut self, on: bool) -> Self {
        self.local_threshold = on;
        self
    }

    fn validate(&self) -> Result<(), StreamError> {
        match (self.size, self.selection) {
            (SampleSize::Fixed(0), _) => {
                Err(StreamError::InvalidConfig("sample size must be >= 1"))
            }
            (SampleSize::Range { lower, upper }, _) if lower == 0 || lower >= upper => Err(
                StreamError::InvalidConfig("size range needs 1 <= lower < upper"),
            ),
            (SampleSize::Range { .. }, Selection::Gather { .. }) => Err(
                StreamError::InvalidConfig("gather selection needs a fixed sample size"),
            ),
            (_, Selection::Pivots(0)) => {
                Err(StreamError::InvalidConfig("pivot count must be >= 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamError {
    InvalidWeight {
        index: usize,
        weight: f64,
    },
    /// Item ids must increase per PE so `(origin_pe, item_id)` stays unique.
    NonMonotonicId {
        previous: u64,
        next: u64,
    },
    InvalidConfig(&'static str),
    Select(SelectError),
    Comm(CommError),
}

impl From<SelectError> for StreamError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Comm(c) => StreamError::Comm(c),
            e => StreamError::Select(e),
        }
    }
}

impl From<CommError> for StreamError {
    fn from(e: CommError) -> Self {
        StreamError::Comm(e)
    }
}

impl fmt::Display for StreamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamError::InvalidWeight { index, weight } => {
                write!(f, "item {index} has invalid weight {weight}")
            }
            StreamError::NonMonotonicId { previous, next } => {
                write!(f, "item id {next} does not follow {previous}")
            }
            StreamError::InvalidConfig(msg) => write!(f, "invalid sampler config: {msg}"),
            StreamError::Select(e) => write!(f, "selection failed: {e}"),
            StreamError::Comm(e) => write!(f, "communication failed: {e}"),
        }
    }
}

impl core::error::Error for StreamError {}

/// Outcome of one mini-batch on one PE. Fields marked global are identical
/// on every PE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchReport {
    /// 0-based batch index.
    pub batch: u64,
    /// Local reservoir insertions, including items pruned again later.
    pub insertions: u64,
    /// Local items covered by the scan.
    pub scanned: u64,
    /// Local item weights read while scanning.
    pub weight_reads: u64,
    /// Global number of new candidates.
    pub candidates: u64,
    /// Global selection recursion depth (0 if no selection ran).
    pub rounds: u32,
    pub selected: bool,
    /// Global threshold after the batch.
    pub threshold: Threshold,
    /// Global sample size after the batch.
    pub sample_size: u64,
    /// Global number of items seen so far.
    pub seen: u64,
}

/// Running totals over all batches processed by one PE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Totals {
    pub batches: u64,
    pub insertions: u64,
    pub scanned: u64,
    pub weight_reads: u64,
    pub selections: u64,
    pub rounds: u64,
}

/// Per-PE sampling state.
#[derive(Debug, Clone)]
pub struct Sampler<U = PeRng> {
    config: SamplerConfig,
    rank: u32,
    rng: U,
    reservoir: Reservoir,
    /// The coordinator's sample in gather mode.
    retained: Vec<KeyedItem>,
    threshold: Threshold,
    sample_size: u64,
    seen: u64,
    last_id: Option<u64>,
    totals: Totals,
    scratch: Vec<Item>,
}

struct ScanStats {
    insertions: u64,
    weight_reads: u64,
}

impl<U: UnitSource> Sampler<U> {
    pub fn new(config: SamplerConfig, rank: usize, rng: U) -> Result<Self, StreamError> {
        config.validate()?;
        Ok(Sampler {
            config,
            rank: u32::try_from(rank)
                .map_err(|_| StreamError::InvalidConfig("rank exceeds u32"))?,
            rng,
            reservoir: Reservoir::new(),
            retained: Vec::new(),
            threshold: Threshold::UNSET,
            sample_size: 0,
            seen: 0,
            last_id: None,
            totals: Totals::default(),
            scratch: Vec::new(),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    /// Global sample size after the last batch.
    pub fn sample_size(&self) -> u64 {
        self.sample_size
    }

    /// Global number of items seen so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    /// This PE's local reservoir (its candidates for the current batch in
    /// gather mode).
    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    /// The coordinator's sample in gather mode; empty on other PEs.
    pub fn retained(&self) -> &[KeyedItem] {
        &self.retained
    }

    /// Replaces the threshold without touching the reservoir. Breaks the
    /// sampler's invariants; only for negative tests of validators.
    #[doc(hidden)]
    pub fn override_threshold(&mut self, t: Threshold) {
        self.threshold = t;
    }

    /// Processes this PE's share of one mini-batch. Collective: every PE of
    /// the group must call it, possibly with an empty batch.
    pub fn process_batch<C: Communicator>(
        &mut self,
        comm: &mut C,
        batch: &[Item],
    ) -> Result<BatchReport, StreamError> {
        self.check_ids(batch)?;
        let mut scratch = core::mem::take(&mut self.scratch);
        let items = match self.screen_weights(batch, &mut scratch) {
            Ok(true) => &scratch[..],
            Ok(false) => batch,
            Err(e) => {
                self.scratch = scratch;
                return Err(e);
            }
        };
        if let Some(last) = batch.last() {
            self.last_id = Some(last.id);
        }

        let stats = if self.threshold.is_set() {
            let t = self.threshold.value().unwrap();
            self.scan_thresholded(items, 0, t, None)
        } else {
            self.fill_unset(items)
        };
        let scanned = items.len() as u64;
        scratch.clear();
        self.scratch = scratch;

        let (rounds, selected, candidates, seen_batch) = match self.config.selection {
            Selection::Pivots(d) => self.finish_pivots(comm, d, stats.insertions, scanned)?,
            Selection::Gather { root } => {
                self.finish_gather(comm, root, stats.insertions, scanned)?
            }
        };
        self.seen += seen_batch;

        let report = BatchReport {
            batch: self.totals.batches,
            insertions: stats.insertions,
            scanned,
            weight_reads: stats.weight_reads,
            candidates,
            rounds,
            selected,
            threshold: self.threshold,
            sample_size: self.sample_size,
            seen: self.seen,
        };
        self.totals.batches += 1;
        self.totals.insertions += stats.insertions;
        self.totals.scanned += scanned;
        self.totals.weight_reads += stats.weight_reads;
        self.totals.rounds += u64::from(rounds);
        self.totals.selections += u64::from(selected);
        Ok(report)
    }

    /// Gathers the global sample at `root`, sorted by key. Other PEs get an
    /// empty vector. Collective.
    pub fn current_sample<C: Communicator>(
        &self,
        comm: &mut C,
        root: usize,
    ) -> Result<Vec<KeyedItem>, StreamError> {
        let local = match self.config.selection {
            Selection::Pivots(_) => self.reservoir.to_vec(),
            Selection::Gather { .. } => self.retained.clone(),
        };
        let mut all = comm.gather(root, local)?;
        all.sort_unstable();
        Ok(all)
    }

    fn check_ids(&self, batch: &[Item]) -> Result<(), StreamError> {
        if cfg!(debug_assertions) {
            let mut prev = self.last_id;
            for it in batch {
                if let Some(p) = prev {
                    if it.id <= p {
                        return Err(StreamError::NonMonotonicId {
                            previous: p,
                            next: it.id,
                        });
                    }
                }
                prev = Some(it.id);
            }
        }
        Ok(())
    }

    /// Returns `Ok(true)` if `scratch` holds a filtered copy to use instead.
    fn screen_weights(&self, batch: &[Item], scratch: &mut Vec<Item>) -> Result<bool, StreamError> {
        if self.config.mode == Mode::Uniform {
            return Ok(false);
        }
        let bad = |w: f64| !(w > 0.0 && w.is_finite());
        let Some(first) = batch.iter().position(|it| bad(it.weight)) else {
            return Ok(false);
        };
        match self.config.weight_policy {
            WeightPolicy::Reject => Err(StreamError::InvalidWeight {
                index: first,
                weight: batch[first].weight,
            }),
            WeightPolicy::Skip => {
                scratch.clear();
                scratch.extend(batch.iter().filter(|it| !bad(it.weight)));
                Ok(true)
            }
        }
    }

    fn fresh_key(&mut self, item: &Item) -> f64 {
        match self.config.mode {
            Mode::Weighted => exponential_key(&mut self.rng, Weight::new(item.weight).unwrap()),
            Mode::Uniform => unit_key(&mut self.rng),
        }
    }

    fn insert(&mut self, key: f64, item: &Item) {
        self.reservoir
            .insert(KeyedItem::new(key, self.rank, item.id));
    }

    /// Insertion while no global threshold exists. Every item is keyed,
    /// except that on large batches the key of local rank k becomes a
    /// provisional local threshold, refreshed whenever the reservoir grows
    /// past `max(1.1k, k + 250)`.
    fn fill_unset(&mut self, items: &[Item]) -> ScanStats {
        let k = self.config.size.local_floor() as usize;
        let kf = k as f64;
        let activate =
            self.config.local_threshold && items.len() as f64 >= (1.5 * kf).max(kf + 500.0);
        let mut stats = ScanStats {
            insertions: 0,
            weight_reads: 0,
        };
        let mut pos = 0;
        while pos < items.len() && (!activate || self.reservoir.len() < k) {
            let key = self.fresh_key(&items[pos]);
            self.insert(key, &items[pos]);
            pos += 1;
        }
        stats.insertions += pos as u64;
        if self.config.mode == Mode::Weighted {
            stats.weight_reads += pos as u64;
        }
        if pos < items.len() {
            let refresh_at = libm::ceil((1.1 * kf).max(kf + 250.0)) as usize;
            let local_t = self.reservoir.max().expect("reservoir holds k items").key;
            let more = self.scan_thresholded(items, pos, local_t, Some((k, refresh_at)));
            stats.insertions += more.insertions;
            stats.weight_reads += more.weight_reads;
        }
        stats
    }

    /// Skip-scan of `items[start..]` against threshold `t`. With `prune =
    /// Some((k, limit))` the reservoir is cut back to `k` items, and `t`
    /// lowered to the new local maximum, whenever it exceeds `limit`.
    fn scan_thresholded(
        &mut self,
        items: &[Item],
        start: usize,
        mut t: f64,
        prune: Option<(usize, usize)>,
    ) -> ScanStats {
        let mut stats = ScanStats {
            insertions: 0,
            weight_reads: 0,
        };
        let mut pos = start;
        while pos < items.len() {
            let Ok(threshold) = Threshold::new(t) else {
                break;
            };
            let hit = match self.config.mode {
                Mode::Weighted => {
                    let skip = weighted_skip(&mut self.rng, threshold).unwrap();
                    find_weight_hit(
                        &items[pos..],
                        skip,
                        self.config.blocked_skip,
                        &mut stats.weight_reads,
                    )
                }
                Mode::Uniform => {
                    let skip = uniform_skip(&mut self.rng, threshold).unwrap();
                    usize::try_from(skip)
                        .ok()
                        .filter(|&s| s < items.len() - pos)
                }
            };
            let Some(offset) = hit else { break };
            let j = pos + offset;
            let key = match self.config.mode {
                Mode::Weighted => constrained_key(
                    &mut self.rng,
                    Weight::new(items[j].weight).unwrap(),
                    threshold,
                )
                .unwrap(),
                Mode::Uniform => uniform_constrained_key(&mut self.rng, threshold).unwrap(),
            };
            self.insert(key, &items[j]);
            stats.insertions += 1;
            pos = j + 1;
            if let Some((k, limit)) = prune {
                if self.reservoir.len() > limit {
                    self.reservoir.truncate(k);
                    t = self.reservoir.max().unwrap().key;
                }
            }
        }
        stats
    }

    /// Size agreement and, if needed, decentralized selection. Returns
    /// (rounds, selected, global new candidates, global batch size).
    fn finish_pivots<C: Communicator>(
        &mut self,
        comm: &mut C,
        pivots: usize,
        insertions: u64,
        scanned: u64,
    ) -> Result<(u32, bool, u64, u64), StreamError> {
        let (total, (candidates, seen_batch)) = comm.all_reduce(
            (self.reservoir.len() as u64, (insertions, scanned)),
            ReduceOp::Sum,
        )?;
        let spec = match self.config.size {
            SampleSize::Fixed(k) if total >= k => Some(SelectionSpec::exact(k, pivots)),
            SampleSize::Range { lower, upper } if total > upper => {
                Some(SelectionSpec::range(lower, upper, pivots))
            }
            _ => None,
        };
        let Some(spec) = spec else {
            self.sample_size = total;
            return Ok((0, false, candidates, seen_batch));
        };
        let res = select::select_with(
            comm,
            &self.reservoir,
            spec,
            &mut self.rng,
            self.config.select_options,
            Some(total),
            None,
        )?;
        self.reservoir.truncate_after(&res.threshold);
        self.threshold = threshold_from_key(res.threshold.key);
        self.sample_size = res.achieved_rank;
        Ok((res.rounds, true, candidates, seen_batch))
    }

    fn finish_gather<C: Communicator>(
        &mut self,
        comm: &mut C,
        root: usize,
        insertions: u64,
        scanned: u64,
    ) -> Result<(u32, bool, u64, u64), StreamError> {
        let SampleSize::Fixed(k) = self.config.size else {
            unreachable!("validated")
        };
        let (candidates, seen_batch) = comm.all_reduce((insertions, scanned), ReduceOp::Sum)?;
        // First-batch candidates beyond the local k smallest can never make
        // the sample.
        self.reservoir.truncate(k as usize);
        let local = self.reservoir.to_vec();
        self.reservoir.clear();
        match select::select_gather(comm, &mut self.retained, local, k, root) {
            Ok(res) => {
                self.threshold = threshold_from_key(res.threshold.key);
                self.sample_size = k;
                Ok((res.rounds, true, candidates, seen_batch))
            }
            Err(SelectError::Infeasible { available, .. }) => {
                self.sample_size = available;
                Ok((1, false, candidates, seen_batch))
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// A selected key of exactly zero (u = 1 in `-ln u / w`) still has to yield
/// a positive threshold.
fn threshold_from_key(key: f64) -> Threshold {
    Threshold::new(key.max(f64::MIN_POSITIVE)).expect("finite key")
}

/// Position of the item at which the running weight sum first reaches
/// `skip`, or `None` if the slice runs out first.
///
/// With integral weights every partial sum is exact in double precision, so
/// both variants stop at the same item.
fn find_weight_hit(items: &[Item], skip: f64, blocked: bool, reads: &mut u64) -> Option<usize> {
    let mut acc = 0.0;
    let mut i = 0;
    if blocked {
        while i + SKIP_BLOCK <= items.len() {
            let block: f64 = items[i..i + SKIP_BLOCK].iter().map(|it| it.weight).sum();
            *reads += SKIP_BLOCK as u64;
            if acc + block < skip {
                acc += block;
                i += SKIP_BLOCK;
            } else {
                break;
            }
        }
    }
    while i < items.len() {
        acc += items[i].weight;
        *reads += 1;
        if acc >= skip {
            return Some(i);
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::Single;
    use crate::variates::Injected;
    use alloc::vec;

    fn items(weights: &[f64], first_id: u64) -> Vec<Item> {
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| Item::new(w, first_id + i as u64))
            .collect()
    }

    #[test]
    fn first_batch_keeps_k_smallest_keys() {
        let mut s = Sampler::new(SamplerConfig::weighted(2), 0, PeRng::new(1, 0)).unwrap();
        let mut c = Single::new();
        let r = s
            .process_batch(&mut c, &items(&[1.0, 1.0, 2.0], 0))
            .unwrap();
        assert_eq!(r.insertions, 3);
        assert_eq!(r.sample_size, 2);
        assert!(r.selected);
        let sample = s.current_sample(&mut c, 0).unwrap();
        assert_eq!(sample.len(), 2);
        assert_eq!(r.threshold.value(), Some(sample[1].key));
    }

    #[test]
    fn under_filled_stream_keeps_everything() {
        let mut s = Sampler::new(SamplerConfig::weighted(5), 0, PeRng::new(2, 0)).unwrap();
        let mut c = Single::new();
        let r = s
            .process_batch(&mut c, &items(&[1.0, 2.0, 3.0], 0))
            .unwrap();
        assert!(!r.threshold.is_set());
        assert_eq!(r.sample_size, 3);
        assert_eq!(s.current_sample(&mut c, 0).unwrap().len(), 3);
    }

    #[test]
    fn empty_batch_changes_nothing() {
        let mut s = Sampler::new(SamplerConfig::weighted(3), 0, PeRng::new(3, 0)).unwrap();
        let mut c = Single::new();
        s.process_batch(&mut c, &items(&[1.0; 10], 0)).unwrap();
        let before = s.current_sample(&mut c, 0).unwrap();
        let t = s.threshold();
        let r = s.process_batch(&mut c, &[]).unwrap();
        assert_eq!(r.candidates, 0);
        assert_eq!(r.threshold, t);
        assert_eq!(s.current_sample(&mut c, 0).unwrap(), before);
    }

    #[test]
    fn invalid_weights() {
        let mut s = Sampler::new(SamplerConfig::weighted(3), 0, PeRng::new(4, 0)).unwrap();
        let mut c = Single::new();
        let err = s
            .process_batch(&mut c, &items(&[1.0, -2.0, 3.0], 0))
            .unwrap_err();
        assert_eq!(
            err,
            StreamError::InvalidWeight {
                index: 1,
                weight: -2.0
            }
        );
        assert_eq!(s.reservoir().len(), 0);

        let cfg = SamplerConfig::weighted(3).with_weight_policy(WeightPolicy::Skip);
        let mut s = Sampler::new(cfg, 0, PeRng::new(4, 0)).unwrap();
        let r = s
            .process_batch(&mut c, &items(&[1.0, 0.0, f64::NAN, 3.0], 0))
            .unwrap();
        assert_eq!(r.insertions, 2);
        assert_eq!(r.scanned, 2);
    }

    #[test]
    fn ids_must_increase() {
        let mut s = Sampler::new(SamplerConfig::weighted(3), 0, PeRng::new(5, 0)).unwrap();
        let mut c = Single::new();
        s.process_batch(&mut c, &items(&[1.0, 1.0], 10)).unwrap();
        let err = s.process_batch(&mut c, &items(&[1.0], 5));
        if cfg!(debug_assertions) {
            assert_eq!(
                err,
                Err(StreamError::NonMonotonicId {
                    previous: 11,
                    next: 5
                })
            );
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            SamplerConfig::weighted(0),
            SamplerConfig::weighted(5).with_selection(Selection::Pivots(0)),
            SamplerConfig::weighted(5).with_size(SampleSize::Range { lower: 5, upper: 5 }),
            SamplerConfig::weighted(5)
                .with_size(SampleSize::Range { lower: 5, upper: 9 })
                .with_selection(Selection::Gather { root: 0 }),
        ];
        for cfg in bad {
            assert!(matches!(
                Sampler::new(cfg, 0, PeRng::new(0, 0)),
                Err(StreamError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn skip_scan_with_injected_deviates() {
        // T = 1, u = e^-2.5 → skip weight 2.5; weights 1,1,1,1: the third item
        // brings the running sum to 3 ≥ 2.5 and is inserted.
        let u = (-2.5f64).exp();
        let rng = Injected::new(&[u]).unwrap();
        let mut s = Sampler::new(SamplerConfig::weighted(1), 0, rng).unwrap();
        let mut reads = 0;
        assert_eq!(
            find_weight_hit(&items(&[1.0; 4], 0), 2.5, false, &mut reads),
            Some(2)
        );
        assert_eq!(reads, 3);
        s.override_threshold(Threshold::new(1.0).unwrap());
        let stats = s.scan_thresholded(&items(&[1.0; 4], 0), 0, 1.0, None);
        assert_eq!(stats.insertions, 1);
        assert_eq!(s.reservoir().min().unwrap().item_id, 2);
    }

    #[test]
    fn blocked_and_scalar_scans_agree_on_integer_weights() {
        let mut g = PeRng::new(6, 0);
        for round in 0..100 {
            let w: Vec<f64> = (0..2_000)
                .map(|_| (1 + g.next_u64() % (1 << 20)) as f64)
                .collect();
            let batch = items(&w, 0);
            let t = 1e-6 * (1 + round) as f64;
            let run = |blocked| {
                let cfg = SamplerConfig::weighted(10).with_blocked_skip(blocked);
                let mut s = Sampler::new(cfg, 0, PeRng::new(round, 1)).unwrap();
                s.scan_thresholded(&batch, 0, t, None);
                s.reservoir().iter().map(|x| x.item_id).collect::<Vec<_>>()
            };
            assert_eq!(run(true), run(false));
        }
    }

    #[test]
    fn uniform_scan_reads_no_weights() {
        let mut s = Sampler::new(SamplerConfig::uniform(10), 0, PeRng::new(7, 0)).unwrap();
        let mut c = Single::new();
        let mut id = 0;
        for _ in 0..5 {
            let batch: Vec<Item> = (0..5_000)
                .map(|_| {
                    id += 1;
                    Item::new(f64::NAN, id)
                })
                .collect();
            let r = s.process_batch(&mut c, &batch).unwrap();
            assert_eq!(r.weight_reads, 0);
        }
        assert_eq!(s.sample_size(), 10);
    }

    #[test]
    fn local_threshold_prunes_but_counts_insertions() {
        let k = 100u64;
        let mut c = Single::new();
        let batch = items(&vec![1.0; 5_000], 0);
        let mut on = Sampler::new(SamplerConfig::weighted(k), 0, PeRng::new(8, 0)).unwrap();
        let r_on = on.process_batch(&mut c, &batch).unwrap();
        let mut off = Sampler::new(
            SamplerConfig::weighted(k).with_local_threshold(false),
            0,
            PeRng::new(8, 0),
        )
        .unwrap();
        let r_off = off.process_batch(&mut c, &batch).unwrap();
        assert_eq!(r_off.insertions, 5_000);
        assert!(r_on.insertions < 2_000, "{}", r_on.insertions);
        assert!(r_on.insertions >= k);
        assert_eq!(r_on.sample_size, k);
        assert_eq!(r_off.sample_size, k);
    }

    #[test]
    fn variable_size_defers_selection() {
        let cfg = SamplerConfig::weighted(10).with_size(SampleSize::Range {
            lower: 10,
            upper: 20,
        });
        let mut s = Sampler::new(cfg, 0, PeRng::new(9, 0)).unwrap();
        let mut c = Single::new();
        let r = s.process_batch(&mut c, &items(&[1.0; 15], 0)).unwrap();
        assert!(!r.selected);
        assert_eq!(r.sample_size, 15);
        let r = s.process_batch(&mut c, &items(&[1.0; 100], 100)).unwrap();
        assert!(r.selected);
        assert!((10..=20).contains(&r.sample_size));
        assert_eq!(s.reservoir().len() as u64, r.sample_size);
    }

    #[test]
    fn gather_mode_keeps_sample_at_root() {
        let cfg = SamplerConfig::weighted(5).with_selection(Selection::Gather { root: 0 });
        let mut s = Sampler::new(cfg, 0, PeRng::new(10, 0)).unwrap();
        let mut c = Single::new();
        let r = s.process_batch(&mut c, &items(&[1.0; 3], 0)).unwrap();
        assert!(!r.threshold.is_set());
        assert_eq!(r.sample_size, 3);
        let r = s.process_batch(&mut c, &items(&[1.0; 50], 10)).unwrap();
        assert!(r.threshold.is_set());
        assert_eq!(s.retained().len(), 5);
        assert_eq!(s.reservoir().len(), 0);
        let sample = s.current_sample(&mut c, 0).unwrap();
        assert_eq!(r.threshold.value(), Some(sample[4].key));
    }
}
