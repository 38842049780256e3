//! Randomness primitives: exponential keys, skip values and keys conditioned
//! on falling below the current threshold.
//!
//! Every operation draws its randomness through a [`UnitSource`], so tests can
//! inject fixed deviates and check closed-form results.

use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// A key: an exponential variate in weighted mode, a uniform one in uniform
/// mode. Smaller keys are more likely to be sampled.
pub type Key = f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariateError {
    /// Weight was zero, negative, NaN or infinite.
    InvalidWeight(f64),
    /// Threshold was unset or outside its valid range.
    InvalidThreshold,
}

impl fmt::Display for VariateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariateError::InvalidWeight(w) => write!(f, "invalid item weight {w}"),
            VariateError::InvalidThreshold => write!(f, "threshold is unset or out of range"),
        }
    }
}

impl core::error::Error for VariateError {}

/// Positive, finite item weight.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Weight(f64);

impl Weight {
    pub fn new(value: f64) -> Result<Self, VariateError> {
        if value > 0.0 && value.is_finite() {
            Ok(Weight(value))
        } else {
            Err(VariateError::InvalidWeight(value))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// A deviate from the half-open interval (0, 1]. Zero is excluded so that
/// `ln(u)` is always finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct UnitUniform(f64);

impl UnitUniform {
    /// Returns `None` unless `0 < value <= 1`.
    pub fn new(value: f64) -> Option<Self> {
        (value > 0.0 && value <= 1.0).then_some(UnitUniform(value))
    }

    /// Maps 64 random bits onto (0, 1] with 53 bits of resolution.
    #[inline]
    pub fn from_bits(bits: u64) -> Self {
        UnitUniform(((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// Source of unit deviates. Implemented by [`PeRng`] and by [`Injected`] for
/// tests.
pub trait UnitSource {
    fn unit(&mut self) -> UnitUniform;
}

impl<U: UnitSource + ?Sized> UnitSource for &mut U {
    #[inline]
    fn unit(&mut self) -> UnitUniform {
        (**self).unit()
    }
}

/// Per-PE generator. The same `(seed, stream)` pair always yields the same
/// sequence; different stream ids give independent ChaCha streams.
#[derive(Debug, Clone)]
pub struct PeRng {
    inner: ChaCha8Rng,
}

impl PeRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        PeRng { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl UnitSource for PeRng {
    #[inline]
    fn unit(&mut self) -> UnitUniform {
        UnitUniform::from_bits(self.inner.next_u64())
    }
}

/// Replays a fixed sequence of deviates, cycling when exhausted.
///
/// Values outside (0, 1] are rejected at construction.
#[derive(Debug, Clone)]
pub struct Injected {
    values: alloc::vec::Vec<f64>,
    next: usize,
}

impl Injected {
    pub fn new(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|&v| UnitUniform::new(v).is_none()) {
            return None;
        }
        Some(Injected {
            values: values.to_vec(),
            next: 0,
        })
    }
}

impl UnitSource for Injected {
    fn unit(&mut self) -> UnitUniform {
        let v = self.values[self.next];
        self.next = (self.next + 1) % self.values.len();
        UnitUniform(v)
    }
}

/// Global insertion cutoff. `UNSET` stands for "fewer than k items seen".
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Threshold(Option<f64>);

impl Threshold {
    pub const UNSET: Threshold = Threshold(None);

    pub fn new(value: f64) -> Result<Self, VariateError> {
        if value > 0.0 && value.is_finite() {
            Ok(Threshold(Some(value)))
        } else {
            Err(VariateError::InvalidThreshold)
        }
    }

    #[inline]
    pub fn value(self) -> Option<f64> {
        self.0
    }

    #[inline]
    pub fn is_set(self) -> bool {
        self.0.is_some()
    }

    fn require(self) -> Result<f64, VariateError> {
        self.0.ok_or(VariateError::InvalidThreshold)
    }
}

/// `-ln(u) / w`: an Exponential(rate = w) key.
#[inline]
pub fn exponential_key<U: UnitSource>(src: &mut U, w: Weight) -> Key {
    -libm::log(src.unit().get()) / w.get()
}

/// A uniform key for uniform mode while no threshold exists.
#[inline]
pub fn unit_key<U: UnitSource>(src: &mut U) -> Key {
    src.unit().get()
}

/// Amount of weight to skip before the next insertion: Exponential(rate = T).
#[inline]
pub fn weighted_skip<U: UnitSource>(src: &mut U, t: Threshold) -> Result<f64, VariateError> {
    let t = t.require()?;
    Ok(-libm::log(src.unit().get()) / t)
}

/// Key of an item known to fall below the threshold: Exponential(rate = w)
/// conditioned on being `< T`, via `-ln(rand[e^{-Tw}, 1]) / w`.
///
/// When `e^{-Tw}` underflows to zero the conditioning is vacuous (its
/// rejection probability is below machine epsilon) and the draw degrades to an
/// unconditioned key, still clamped below `T`. The result is always in
/// `[0, T)`.
#[inline]
pub fn constrained_key<U: UnitSource>(
    src: &mut U,
    w: Weight,
    t: Threshold,
) -> Result<Key, VariateError> {
    let t = t.require()?;
    let w = w.get();
    let lower = libm::exp(-t * w);
    let r = lower + src.unit().get() * (1.0 - lower);
    let key = -libm::log(r) / w;
    // r can round down onto `lower`, which would put the key on (or past) T.
    Ok(if key < t { key.max(0.0) } else { t.next_down() })
}

/// Number of failures before the first success of a Bernoulli(q) process,
/// `floor(ln(u) / ln(1 - q))`. Saturates at `u64::MAX`.
#[inline]
pub fn geometric_skip<U: UnitSource>(src: &mut U, q: f64) -> u64 {
    if q >= 1.0 {
        return 0;
    }
    let x = libm::floor(libm::log(src.unit().get()) / libm::log1p(-q));
    if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x as u64
    }
}

/// Items to jump over in uniform mode: Geometric(success probability T).
/// A threshold of 1 or more inserts every item.
#[inline]
pub fn uniform_skip<U: UnitSource>(src: &mut U, t: Threshold) -> Result<u64, VariateError> {
    let t = t.require()?;
    Ok(geometric_skip(src, t))
}

/// Key of an item inserted in uniform mode: uniform on (0, T].
#[inline]
pub fn uniform_constrained_key<U: UnitSource>(
    src: &mut U,
    t: Threshold,
) -> Result<Key, VariateError> {
    let t = t.require()?;
    Ok(src.unit().get() * t)
}
