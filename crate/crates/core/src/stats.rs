//! Descriptive statistics shared by the metric pipeline.
//!
//! Everything here is generic over [`Scalar`] so the same code serves `f64`
//! (the default used by the campaign outputs) and `f32`.

use std::cmp::Ordering;
use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating point scalar usable by the statistics and intensity helpers.
pub trait Scalar: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// Converts an `f64` literal, panicking only for values the type cannot hold.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean, `None` for an empty slice.
pub fn mean<F: Scalar>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(F::zero(), |acc, &x| acc + x);
    Some(sum / F::from_count(xs.len()))
}

/// Population variance (divides by `n`), computed in two passes.
pub fn population_variance<F: Scalar>(xs: &[F]) -> Option<F> {
    let mu = mean(xs)?;
    let ss = xs.iter().fold(F::zero(), |acc, &x| {
        let d = x - mu;
        acc + d * d
    });
    Some(ss / F::from_count(xs.len()))
}

pub fn population_std<F: Scalar>(xs: &[F]) -> Option<F> {
    population_variance(xs).map(Float::sqrt)
}

fn total_cmp<F: Scalar>(a: &F, b: &F) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Returns a sorted copy of `xs`.
pub fn sorted<F: Scalar>(xs: &[F]) -> Vec<F> {
    let mut v = xs.to_vec();
    v.sort_by(total_cmp);
    v
}

/// Nearest-rank percentile: the `ceil(pct/100 * n)`-th order statistic.
///
/// The rank is computed in integer arithmetic so that e.g. `pct = 95`,
/// `n = 100` selects exactly the 95th value. `pct` must lie in `1..=100`.
pub fn nearest_rank<F: Scalar>(xs: &[F], pct: u32) -> Option<F> {
    if xs.is_empty() || pct == 0 || pct > 100 {
        return None;
    }
    let rank = nearest_rank_index(xs.len(), pct);
    let v = sorted(xs);
    Some(v[rank - 1])
}

/// One-based rank used by [`nearest_rank`].
pub fn nearest_rank_index(n: usize, pct: u32) -> usize {
    let pct = pct as usize;
    ((pct * n).div_ceil(100)).clamp(1, n)
}

/// Lower median (nearest-rank 50th percentile).
pub fn median<F: Scalar>(xs: &[F]) -> Option<F> {
    nearest_rank(xs, 50)
}

/// Standard-score normaliser `z = (x - mean) / std_dev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore<F: Scalar> {
    pub mean: F,
    pub std_dev: F,
}

impl<F: Scalar> ZScore<F> {
    pub fn new(mean: F, std_dev: F) -> Self {
        Self { mean, std_dev }
    }

    /// Fits mean and population standard deviation to a baseline sample.
    pub fn fit(sample: &[F]) -> Option<Self> {
        Some(Self {
            mean: mean(sample)?,
            std_dev: population_std(sample)?,
        })
    }

    /// Plain `(x - mean) / std_dev`, no guard against a zero deviation.
    pub fn normalize(&self, x: F) -> F {
        (x - self.mean) / self.std_dev
    }

    pub fn denormalize(&self, z: F) -> F {
        z * self.std_dev + self.mean
    }

    pub fn is_degenerate(&self, eps: F) -> bool {
        self.std_dev < eps
    }

    /// Normalises with the degenerate-baseline convention: when the deviation
    /// is below `eps`, `x == mean` maps to 0 and anything else to ±infinity.
    pub fn normalize_guarded(&self, x: F, eps: F) -> F {
        if !self.is_degenerate(eps) {
            return self.normalize(x);
        }
        if x == self.mean {
            F::zero()
        } else if x > self.mean {
            F::infinity()
        } else {
            F::neg_infinity()
        }
    }

    pub fn normalize_all(&self, xs: &[F], eps: F) -> Vec<F> {
        xs.iter().map(|&x| self.normalize_guarded(x, eps)).collect()
    }
}
