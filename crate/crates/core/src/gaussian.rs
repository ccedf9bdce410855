//! Closed-form algebra and divergences on diagonal Gaussians, plus the
//! ensemble-disagreement uncertainty measures built on them.
//!
//! Everything here treats covariances as diagonal, so all formulas reduce
//! to elementwise expressions and run in O(d).

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Variance-ratio floor/ceiling applied before any logarithm, so adversarial
/// inputs cannot overflow the divergence math. Normal-range inputs
/// (variances within ~1e-6 of each other in ratio) are never touched.
pub const RATIO_FLOOR: f64 = 1e-12;
pub const RATIO_CEIL: f64 = 1e12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a variance ratio was clamped since the last reset.
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

pub fn reset_clamp_events() {
    CLAMP_EVENTS.store(0, Ordering::Relaxed);
}

fn clamp_ratio<T: Scalar>(r: T) -> T {
    let lo = T::of(RATIO_FLOOR);
    let hi = T::of(RATIO_CEIL);
    if r < lo {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        lo
    } else if r > hi {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        hi
    } else {
        r
    }
}

/// Diagonal multivariate Gaussian N(mean, diag(var)).
///
/// Construction rejects non-positive or non-finite variances and
/// mismatched dimensions; all downstream math relies on these invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<T> {
    mean: Vec<T>,
    var: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParameter {
                name: "mean",
                reason: "dimension must be at least 1".into(),
            });
        }
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: var.len(),
            });
        }
        if !all_finite(&mean) {
            return Err(Error::NonFinite { context: "DiagGaussian mean" });
        }
        if !all_finite(&var) {
            return Err(Error::NonFinite { context: "DiagGaussian var" });
        }
        if var.iter().any(|v| *v <= T::zero()) {
            return Err(Error::InvalidParameter {
                name: "var",
                reason: "variances must be strictly positive".into(),
            });
        }
        Ok(Self { mean, var })
    }

    /// Convenience constructor for a 1-D Gaussian.
    pub fn scalar(mean: T, var: T) -> Result<Self> {
        Self::new(vec![mean], vec![var])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn var(&self) -> &[T] {
        &self.var
    }

    /// Draws one sample as mean + sqrt(var) * eps with eps ~ N(0, I).
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| m + v.sqrt() * T::standard_normal(rng))
            .collect()
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }
}

/// Ordered predictions of the E ensemble members at one (s, a) query.
#[derive(Debug, Clone)]
pub struct EnsemblePrediction<T> {
    members: Vec<DiagGaussian<T>>,
}

impl<T: Scalar> EnsemblePrediction<T> {
    pub fn new(members: Vec<DiagGaussian<T>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::EnsembleTooSmall { got: members.len() });
        }
        let d = members[0].dim();
        for m in &members[1..] {
            if m.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.dim() });
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[DiagGaussian<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn member(&self, e: usize) -> Result<&DiagGaussian<T>> {
        self.members.get(e).ok_or(Error::MemberIndex {
            index: e,
            len: self.members.len(),
        })
    }
}

/// Kullback-Leibler divergence D_KL(p || q) between diagonal Gaussians:
///
/// D_KL = 1/2 * sum_i [ ln(vq_i/vp_i) + vp_i/vq_i + (mp_i - mq_i)^2/vq_i - 1 ]
pub fn kl_divergence<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<T> {
    p.check_same_dim(q)?;
    let half = T::of(0.5);
    let mut acc = T::zero();
    for i in 0..p.dim() {
        let vp = p.var[i];
        let vq = q.var[i];
        let dm = p.mean[i] - q.mean[i];
        acc += clamp_ratio(vq / vp).ln() + vp / vq + dm * dm / vq - T::one();
    }
    // Exact zero for identical inputs; tiny negatives from rounding are floored.
    Ok((half * acc).max(T::zero()))
}

/// Gaussian with the averaged precision of `p` and `q` and the
/// precision-weighted mean (the skew-geometric mean at alpha = 1/2).
pub fn geometric_mean_gaussian<T: Scalar>(
    p: &DiagGaussian<T>,
    q: &DiagGaussian<T>,
) -> Result<DiagGaussian<T>> {
    p.check_same_dim(q)?;
    let half = T::of(0.5);
    let mut mean = Vec::with_capacity(p.dim());
    let mut var = Vec::with_capacity(p.dim());
    for i in 0..p.dim() {
        let prec = half / p.var[i] + half / q.var[i];
        let v = T::one() / prec;
        var.push(v);
        mean.push(v * (half * p.mean[i] / p.var[i] + half * q.mean[i] / q.var[i]));
    }
    DiagGaussian::new(mean, var)
}

/// Geometric Jensen-Shannon divergence:
/// D_GJS(p || q) = 1/2 D_KL(p || m) + 1/2 D_KL(q || m),
/// with m the geometric mean Gaussian of p and q. Symmetric, >= 0, and
/// 0 iff p = q.
pub fn gjs_divergence<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<T> {
    let m = geometric_mean_gaussian(p, q)?;
    let half = T::of(0.5);
    Ok(half * kl_divergence(p, &m)? + half * kl_divergence(q, &m)?)
}

/// Ensemble disagreement as the mean pairwise GJS divergence over the
/// E(E-1)/2 unordered member pairs.
pub fn u_gjs<T: Scalar>(pred: &EnsemblePrediction<T>) -> T {
    let e = pred.len();
    let mut acc = T::zero();
    for i in 1..e {
        for j in 0..i {
            acc += gjs_divergence(&pred.members[i], &pred.members[j])
                .expect("members share dimension by construction");
        }
    }
    let pairs = T::of((e * (e - 1)) as f64 / 2.0);
    acc / pairs
}

/// One-versus-rest uncertainty: KL between member `e` and the
/// moment-matched Gaussian of the remaining E-1 members.
pub fn u_ovr<T: Scalar>(pred: &EnsemblePrediction<T>, e: usize) -> Result<T> {
    let held_out = pred.member(e)?;
    let d = pred.dim();
    let n_rest = pred.len() - 1;
    let inv = T::one() / T::of(n_rest as f64);

    let mut rest_mean = vec![T::zero(); d];
    for (f, m) in pred.members.iter().enumerate() {
        if f == e {
            continue;
        }
        for (r, &mu) in rest_mean.iter_mut().zip(&m.mean) {
            *r += mu * inv;
        }
    }
    // Moment matching: averaged second moment minus squared mean, written in
    // the centered form so the result stays strictly positive.
    let mut rest_var = vec![T::zero(); d];
    for (f, m) in pred.members.iter().enumerate() {
        if f == e {
            continue;
        }
        for (i, rv) in rest_var.iter_mut().enumerate() {
            let dm = m.mean[i] - rest_mean[i];
            *rv += (m.var[i] + dm * dm) * inv;
        }
    }
    let rest = DiagGaussian::new(rest_mean, rest_var)?;
    kl_divergence(held_out, &rest)
}

/// Frobenius norm of the empirical covariance of the member means
/// (epistemic-only uncertainty; per-member variances are ignored).
///
/// Computed through the Gram matrix of centered means, so the d x d
/// covariance is never materialized.
pub fn u_mean_variance<T: Scalar>(pred: &EnsemblePrediction<T>) -> T {
    let e = pred.len();
    let d = pred.dim();
    let inv_e = T::one() / T::of(e as f64);

    let mut centroid = vec![T::zero(); d];
    for m in &pred.members {
        for (c, &mu) in centroid.iter_mut().zip(&m.mean) {
            *c += mu * inv_e;
        }
    }
    let centered: Vec<Vec<T>> = pred
        .members
        .iter()
        .map(|m| m.mean.iter().zip(&centroid).map(|(&x, &c)| x - c).collect())
        .collect();

    // ||C||_F^2 = (1/E^2) * sum_{e,f} (x_e . x_f)^2
    let dot = |a: &[T], b: &[T]| -> T {
        a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
    };
    let mut acc = T::zero();
    for i in 0..e {
        let dii = dot(&centered[i], &centered[i]);
        acc += dii * dii;
        for j in 0..i {
            let dij = dot(&centered[i], &centered[j]);
            acc += T::of(2.0) * dij * dij;
        }
    }
    (acc.max(T::zero())).sqrt() * inv_e
}

/// Hellinger distance between diagonal Gaussians, in [0, 1].
///
/// H^2 = 1 - BC with the Bhattacharyya coefficient
/// BC = prod_i sqrt(2 sp_i sq_i / (vp_i + vq_i)) * exp(-1/4 dm_i^2 / (vp_i + vq_i)).
pub fn hellinger_distance<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<T> {
    p.check_same_dim(q)?;
    let quarter = T::of(0.25);
    let mut log_bc = T::zero();
    for i in 0..p.dim() {
        let vp = p.var[i];
        let vq = q.var[i];
        let vsum = vp + vq;
        let dm = p.mean[i] - q.mean[i];
        let ratio = clamp_ratio(T::of(4.0) * vp * vq / (vsum * vsum));
        log_bc += quarter * ratio.ln() - quarter * dm * dm / vsum;
    }
    let h2 = (T::one() - log_bc.exp()).max(T::zero()).min(T::one());
    Ok(h2.sqrt())
}

/// Upper bound on the total variation distance: D_TV <= sqrt(2) * Hellinger.
pub fn tv_upper_bound<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<T> {
    Ok(T::of(std::f64::consts::SQRT_2) * hellinger_distance(p, q)?)
}
