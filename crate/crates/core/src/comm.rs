//! Collective communication over a group of `p` PEs.
//!
//! Algorithms are written against [`Communicator`]; this crate ships only the
//! trivial single-PE group [`Single`]. Communication cost is accounted in the
//! α/β model: each collective is one latency unit, and `words` accumulates the
//! message length ℓ a PE sends or receives (for a gather, the root's incoming
//! volume).

use alloc::vec::Vec;
use core::fmt;
use core::ops::Sub;

use crate::reservoir::KeyedItem;

/// A value that can travel through a collective.
pub trait Payload: Clone + Send + 'static {
    /// Length in 64-bit machine words.
    fn words(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Sum,
    Min,
    Max,
}

/// A payload with an associative, commutative combiner.
pub trait Reduce: Payload {
    /// Combines two contributions, or `None` if `op` is meaningless for the
    /// type or the shapes disagree.
    fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommError {
    /// PEs disagreed on the kind, root or payload type of the collective at
    /// position `seq`, or one PE left the group early.
    ProtocolViolation { seq: u64, detail: &'static str },
    /// `root` is not a rank of the group.
    RootOutOfRange { root: usize, size: usize },
    /// The root of a broadcast supplied no value.
    MissingRootValue,
    /// The reduction is undefined for these contributions.
    UnsupportedReduction,
}

impl fmt::Display for CommError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommError::ProtocolViolation { seq, detail } => {
                write!(f, "collective protocol violated at call {seq}: {detail}")
            }
            CommError::RootOutOfRange { root, size } => {
                write!(f, "root {root} outside a group of {size}")
            }
            CommError::MissingRootValue => f.write_str("broadcast root supplied no value"),
            CommError::UnsupportedReduction => f.write_str("reduction undefined for payload"),
        }
    }
}

impl core::error::Error for CommError {}

/// Per-PE collective counts and communicated volume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounters {
    pub broadcasts: u64,
    pub all_reduces: u64,
    pub gathers: u64,
    pub words: u64,
}

impl CommCounters {
    pub fn collectives(&self) -> u64 {
        self.broadcasts + self.all_reduces + self.gathers
    }
}

impl Sub for CommCounters {
    type Output = CommCounters;

    fn sub(self, rhs: CommCounters) -> CommCounters {
        CommCounters {
            broadcasts: self.broadcasts - rhs.broadcasts,
            all_reduces: self.all_reduces - rhs.all_reduces,
            gathers: self.gathers - rhs.gathers,
            words: self.words - rhs.words,
        }
    }
}

/// One PE's handle on a group. All PEs must issue the same sequence of
/// collectives (SPMD); implementations detect mismatches.
pub trait Communicator {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;

    /// Every PE receives the root's value. Non-root ranks pass `None`.
    fn broadcast<T: Payload>(&mut self, root: usize, value: Option<T>) -> Result<T, CommError>;

    /// Every PE receives `op` folded over all contributions in rank order.
    fn all_reduce<T: Reduce>(&mut self, value: T, op: ReduceOp) -> Result<T, CommError>;

    /// The root receives all contributions concatenated in rank order; the
    /// other PEs receive an empty vector.
    fn gather<T: Payload>(&mut self, root: usize, values: Vec<T>) -> Result<Vec<T>, CommError>;

    fn counters(&self) -> CommCounters;
}

impl<C: Communicator + ?Sized> Communicator for &mut C {
    fn rank(&self) -> usize {
        (**self).rank()
    }
    fn size(&self) -> usize {
        (**self).size()
    }
    fn broadcast<T: Payload>(&mut self, root: usize, value: Option<T>) -> Result<T, CommError> {
        (**self).broadcast(root, value)
    }
    fn all_reduce<T: Reduce>(&mut self, value: T, op: ReduceOp) -> Result<T, CommError> {
        (**self).all_reduce(value, op)
    }
    fn gather<T: Payload>(&mut self, root: usize, values: Vec<T>) -> Result<Vec<T>, CommError> {
        (**self).gather(root, values)
    }
    fn counters(&self) -> CommCounters {
        (**self).counters()
    }
}

/// The group of one PE. Collectives are identities and move no words.
#[derive(Debug, Default, Clone)]
pub struct Single {
    counters: CommCounters,
}

impl Single {
    pub fn new() -> Self {
        Single::default()
    }
}

impl Communicator for Single {
    fn rank(&self) -> usize {
        0
    }

    fn size(&self) -> usize {
        1
    }

    fn broadcast<T: Payload>(&mut self, root: usize, value: Option<T>) -> Result<T, CommError> {
        if root != 0 {
            return Err(CommError::RootOutOfRange { root, size: 1 });
        }
        self.counters.broadcasts += 1;
        value.ok_or(CommError::MissingRootValue)
    }

    fn all_reduce<T: Reduce>(&mut self, value: T, _op: ReduceOp) -> Result<T, CommError> {
        self.counters.all_reduces += 1;
        Ok(value)
    }

    fn gather<T: Payload>(&mut self, root: usize, values: Vec<T>) -> Result<Vec<T>, CommError> {
        if root != 0 {
            return Err(CommError::RootOutOfRange { root, size: 1 });
        }
        self.counters.gathers += 1;
        Ok(values)
    }

    fn counters(&self) -> CommCounters {
        self.counters
    }
}

macro_rules! scalar_payload {
    ($($t:ty),*) => {$(
        impl Payload for $t {
            fn words(&self) -> u64 {
                1
            }
        }
    )*};
}

scalar_payload!(u64, i64, u32, usize, bool);

impl Payload for f64 {
    fn words(&self) -> u64 {
        1
    }
}

macro_rules! integer_reduce {
    ($($t:ty),*) => {$(
        impl Reduce for $t {
            fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self> {
                Some(match op {
                    ReduceOp::Sum => acc + *next,
                    ReduceOp::Min => acc.min(*next),
                    ReduceOp::Max => acc.max(*next),
                })
            }
        }
    )*};
}

integer_reduce!(u64, i64, u32, usize);

impl Reduce for f64 {
    fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self> {
        Some(match op {
            ReduceOp::Sum => acc + *next,
            ReduceOp::Min => {
                if next.total_cmp(&acc).is_lt() {
                    *next
                } else {
                    acc
                }
            }
            ReduceOp::Max => {
                if next.total_cmp(&acc).is_gt() {
                    *next
                } else {
                    acc
                }
            }
        })
    }
}

impl Payload for KeyedItem {
    fn words(&self) -> u64 {
        3
    }
}

/// Min/max under the `(key, origin_pe, item_id)` order; sums are undefined.
impl Reduce for KeyedItem {
    fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self> {
        match op {
            ReduceOp::Sum => None,
            ReduceOp::Min => Some(acc.min(*next)),
            ReduceOp::Max => Some(acc.max(*next)),
        }
    }
}

impl<T: Payload> Payload for Option<T> {
    fn words(&self) -> u64 {
        self.as_ref().map_or(1, Payload::words)
    }
}

/// Absent contributions are neutral.
impl<T: Reduce> Reduce for Option<T> {
    fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self> {
        match (acc, next) {
            (None, None) => Some(None),
            (Some(a), None) => Some(Some(a)),
            (None, Some(b)) => Some(Some(b.clone())),
            (Some(a), Some(b)) => T::reduce(op, a, b).map(Some),
        }
    }
}

impl<T: Payload> Payload for Vec<T> {
    fn words(&self) -> u64 {
        self.iter().map(Payload::words).sum()
    }
}

/// Element-wise; all contributions must have the same length.
impl<T: Reduce> Reduce for Vec<T> {
    fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self> {
        if acc.len() != next.len() {
            return None;
        }
        acc.into_iter()
            .zip(next)
            .map(|(a, b)| T::reduce(op, a, b))
            .collect()
    }
}

impl<A: Payload, B: Payload> Payload for (A, B) {
    fn words(&self) -> u64 {
        self.0.words() + self.1.words()
    }
}

impl<A: Reduce, B: Reduce> Reduce for (A, B) {
    fn reduce(op: ReduceOp, acc: Self, next: &Self) -> Option<Self> {
        Some((
            A::reduce(op, acc.0, &next.0)?,
            B::reduce(op, acc.1, &next.1)?,
        ))
    }
}

/// Folds contributions in rank order. Shared by all implementations so
/// floating-point results are bit-identical across them.
pub fn fold_in_rank_order<'a, T: Reduce>(
    op: ReduceOp,
    mut values: impl Iterator<Item = &'a T>,
) -> Result<T, CommError> {
    let first = values
        .next()
        .ok_or(CommError::UnsupportedReduction)?
        .clone();
    values.try_fold(first, |acc, v| {
        T::reduce(op, acc, v).ok_or(CommError::UnsupportedReduction)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_is_identity() {
        let mut c = Single::new();
        assert_eq!(c.broadcast(0, Some(7u64)).unwrap(), 7);
        assert_eq!(c.all_reduce(3.5f64, ReduceOp::Sum).unwrap(), 3.5);
        assert_eq!(c.gather(0, vec![1u64, 2]).unwrap(), vec![1, 2]);
        assert_eq!(
            c.broadcast::<u64>(0, None),
            Err(CommError::MissingRootValue)
        );
        assert!(matches!(
            c.gather(1, vec![1u64]),
            Err(CommError::RootOutOfRange { .. })
        ));
        let k = c.counters();
        assert_eq!(
            (k.broadcasts, k.all_reduces, k.gathers, k.words),
            (2, 1, 1, 0)
        );
    }

    #[test]
    fn reductions() {
        let a = KeyedItem::new(1.0, 1, 0);
        let b = KeyedItem::new(1.0, 0, 5);
        assert_eq!(KeyedItem::reduce(ReduceOp::Min, a, &b), Some(b));
        assert_eq!(KeyedItem::reduce(ReduceOp::Sum, a, &b), None);
        let v = vec![Some(a), None];
        let w = vec![None, Some(b)];
        assert_eq!(
            Vec::reduce(ReduceOp::Max, v, &w),
            Some(vec![Some(a), Some(b)])
        );
        assert_eq!(
            Vec::<u64>::reduce(ReduceOp::Sum, vec![1], &vec![1, 2]),
            None
        );
        let xs = [1u64, 2, 3, 4];
        assert_eq!(fold_in_rank_order(ReduceOp::Sum, xs.iter()).unwrap(), 10);
        assert_eq!(fold_in_rank_order(ReduceOp::Max, xs.iter()).unwrap(), 4);
        assert_eq!((3u64, 1.5f64).words(), 2);
        assert_eq!(Some(a).words(), 3);
    }
}
