//! Numerics on the probability simplex: normalization maps (softmax and
//! α-entmax), Tsallis entropies, label-style smoothing and norms.
//!
//! Every function here is pure and allocation-light; all are generic over
//! [`Scalar`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A point on the probability simplex: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ProbVector<T> {
    /// Validates `values` (length ≥ 2, entries ≥ 0, sum within tolerance of 1).
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "probability vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        if let Some((j, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(Error::invalid(format!("entry {j} is {v}, not a probability")));
        }
        let total: T = values.iter().copied().sum();
        if (total - T::one()).abs() > T::simplex_tolerance() {
            return Err(Error::invalid(format!("entries sum to {total}, not 1")));
        }
        Ok(Self { values })
    }

    /// Wraps values already known to be on the simplex (up to rounding).
    pub(crate) fn from_normalized(values: Vec<T>) -> Self {
        debug_assert!(values.len() >= 2);
        Self { values }
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("simplex dimension must be at least 2"));
        }
        let v = T::one() / T::from_usize(m).unwrap();
        Ok(Self { values: vec![v; m] })
    }

    pub fn one_hot(m: usize, index: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("simplex dimension must be at least 2"));
        }
        if index >= m {
            return Err(Error::IndexOutOfRange { index, len: m });
        }
        let mut values = vec![T::zero(); m];
        values[index] = T::one();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<T> {
        self.values
            .get(i)
            .copied()
            .ok_or(Error::IndexOutOfRange { index: i, len: self.values.len() })
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// Unnormalized log-preferences over `m` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    values: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("logits must be non-empty"));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("logit {j} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn max_of<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().fold(T::neg_infinity(), T::max)
}

fn min_of<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().fold(T::infinity(), T::min)
}

/// Softmax with max subtraction, so adding a constant to every logit leaves
/// the output unchanged.
pub fn softmax<T: Scalar>(z: &Logits<T>) -> Result<ProbVector<T>> {
    if z.len() < 2 {
        return Err(Error::invalid("softmax needs at least 2 logits"));
    }
    Ok(ProbVector::from_normalized(softmax_slice(z.values())))
}

pub(crate) fn softmax_slice<T: Scalar>(z: &[T]) -> Vec<T> {
    let mx = max_of(z);
    let mut out: Vec<T> = z.iter().map(|&v| (v - mx).exp()).collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `log softmax(z)`, finite for finite logits.
pub fn log_softmax<T: Scalar>(z: &Logits<T>) -> Vec<T> {
    log_softmax_slice(z.values())
}

pub(crate) fn log_softmax_slice<T: Scalar>(z: &[T]) -> Vec<T> {
    let mx = max_of(z);
    let lse = mx + z.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// α-entmax: `argmax_{p ∈ Δ} p·z + H_α(p)` for `α > 1`.
///
/// The solution has the closed form `p_j = [(α−1) z_j − τ]_+^{1/(α−1)}` for a
/// threshold `τ` fixed by the sum constraint. At `α = 2` (sparsemax) the
/// threshold is found exactly by sorting; otherwise by bisection on `τ`.
/// Entries outside the support are exactly zero.
pub fn entmax<T: Scalar>(z: &Logits<T>, alpha: T) -> Result<ProbVector<T>> {
    if !(alpha > T::one()) || !alpha.is_finite() {
        return Err(Error::ParameterDomain {
            name: "alpha",
            value: alpha.to_f64_lossy(),
            expected: "alpha > 1",
        });
    }
    if z.len() < 2 {
        return Err(Error::invalid("entmax needs at least 2 logits"));
    }
    if alpha == T::lit(2.0) {
        return Ok(ProbVector::from_normalized(sparsemax(z.values())));
    }
    Ok(ProbVector::from_normalized(entmax_bisect(z.values(), alpha)))
}

/// Sorting-threshold sparsemax (the `α = 2` case of entmax).
fn sparsemax<T: Scalar>(z: &[T]) -> Vec<T> {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite logits"));
    let mut cumsum = T::zero();
    let mut support = 0usize;
    let mut support_sum = T::zero();
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let kk = T::from_usize(k + 1).unwrap();
        if T::one() + kk * v > cumsum {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    let tau = (support_sum - T::one()) / T::from_usize(support).unwrap();
    z.iter().map(|&v| (v - tau).max(T::zero())).collect()
}

fn entmax_bisect<T: Scalar>(z: &[T], alpha: T) -> Vec<T> {
    let am1 = alpha - T::one();
    let inv = T::one() / am1;
    let scaled: Vec<T> = z.iter().map(|&v| am1 * v).collect();
    let eval = |tau: T| -> (Vec<T>, T) {
        let p: Vec<T> = scaled
            .iter()
            .map(|&s| {
                let d = s - tau;
                if d > T::zero() {
                    d.powf(inv)
                } else {
                    T::zero()
                }
            })
            .collect();
        let total = p.iter().copied().sum();
        (p, total)
    };

    // sum(tau) is non-increasing; sum(lo) >= 1 and sum(hi) = 0
    let mut lo = min_of(&scaled) - T::one();
    let mut hi = max_of(&scaled);
    let tol = T::entmax_tolerance();
    let (mut best, mut best_sum) = eval(lo);
    for _ in 0..200 {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        let (p, total) = eval(mid);
        if total >= T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
        if (total - T::one()).abs() <= (best_sum - T::one()).abs() {
            best = p;
            best_sum = total;
        }
    }
    // runs until the bracket collapses, which is well inside `tol`
    debug_assert!((best_sum - T::one()).abs() <= tol);
    for v in &mut best {
        *v /= best_sum;
    }
    best
}

/// Tsallis α-entropy; Shannon entropy at `α = 1` with `0·log 0 = 0`.
pub fn tsallis_entropy<T: Scalar>(p: &ProbVector<T>, alpha: T) -> Result<T> {
    if !(alpha >= T::one()) || !alpha.is_finite() {
        return Err(Error::ParameterDomain {
            name: "alpha",
            value: alpha.to_f64_lossy(),
            expected: "alpha >= 1",
        });
    }
    Ok(tsallis_unchecked(p.values(), alpha))
}

pub(crate) fn tsallis_unchecked<T: Scalar>(p: &[T], alpha: T) -> T {
    if alpha == T::one() {
        return -p
            .iter()
            .filter(|&&v| v > T::zero())
            .map(|&v| v * v.ln())
            .sum::<T>();
    }
    let s: T = p.iter().map(|&v| v - v.powf(alpha)).sum();
    s / (alpha * (alpha - T::one()))
}

/// `q^ε_i = (1−ε) q_i + ε/m`.
pub fn smooth_distribution<T: Scalar>(q: &ProbVector<T>, eps: T) -> Result<ProbVector<T>> {
    if !(eps >= T::zero() && eps <= T::one()) {
        return Err(Error::ParameterDomain {
            name: "eps",
            value: eps.to_f64_lossy(),
            expected: "0 <= eps <= 1",
        });
    }
    let m = T::from_usize(q.len()).unwrap();
    let floor = eps / m;
    Ok(ProbVector::from_normalized(
        q.values().iter().map(|&v| (T::one() - eps) * v + floor).collect(),
    ))
}

/// Euclidean norm, scaled by the largest magnitude to avoid under/overflow.
pub fn euclidean_norm<T: Scalar>(x: &[T]) -> T {
    let scale = x.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let s: T = x.iter().map(|&v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

/// `Σ_j p_j^α`.
pub fn power_sum<T: Scalar>(p: &[T], alpha: T) -> T {
    p.iter().map(|&v| v.powf(alpha)).sum()
}
