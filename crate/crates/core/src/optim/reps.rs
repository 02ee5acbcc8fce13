//! Episodic REPS update of a diagonal Gaussian sampling distribution.
//!
//! Given samples and their costs, the update reweights samples with
//! `w_i ∝ exp(-c_i / η)` where the temperature η solves the dual of the
//! KL-constrained problem, then refits a diagonal Gaussian by weighted
//! maximum likelihood.

use serde::{Deserialize, Serialize};

use crate::dist::{kl_diag, DomainDistribution};
use crate::error::OptimError;

pub const ETA_MIN: f64 = 1e-8;
pub const ETA_MAX: f64 = 1e8;
pub const ETA_REL_TOL: f64 = 1e-10;
/// Lower bound on every refitted variance (normalized units).
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepsConfig {
    pub kl_bound: f64,
    pub samples_per_update: usize,
    pub updates_per_iteration: usize,
}

impl RepsConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.kl_bound > 0.0) || self.samples_per_update == 0 || self.updates_per_iteration == 0 {
            return Err(OptimError::InvalidArgument("REPS settings must be positive".into()));
        }
        Ok(())
    }
}

/// Sample weights of one REPS step.
#[derive(Debug, Clone, PartialEq)]
pub struct RepsWeights {
    pub eta: f64,
    /// Normalized weights; zero for non-finite costs.
    pub weights: Vec<f64>,
    /// KL(w ‖ uniform over the finite samples).
    pub kl: f64,
}

/// Outcome of [`reps_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct RepsStep {
    pub dist: DomainDistribution,
    /// `None` when every cost was non-finite and the update was skipped.
    pub weights: Option<RepsWeights>,
}

/// Dual objective g(η) = ηε + η ln mean_i exp(-(c_i - c_min)/η) - c_min
/// over the finite costs. Its derivative is ε - KL(w_η ‖ uniform).
pub fn reps_dual(costs: &[f64], eta: f64, kl_bound: f64) -> f64 {
    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    let c_min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let n = finite.len() as f64;
    let s: f64 = finite.iter().map(|c| (-(c - c_min) / eta).exp()).sum::<f64>() / n;
    eta * kl_bound + eta * s.ln() - c_min
}

/// Softmax weights at temperature `eta` and their KL to uniform.
pub fn weights_at(costs: &[f64], eta: f64) -> (Vec<f64>, f64) {
    let c_min = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs
        .iter()
        .map(|c| if c.is_finite() { (-(c - c_min) / eta).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    let n = costs.iter().filter(|c| c.is_finite()).count() as f64;
    let mut kl = 0.0;
    for v in &mut w {
        *v /= total;
        if *v > 0.0 {
            kl += *v * (n * *v).ln();
        }
    }
    (w, kl.max(0.0))
}

/// Solves the dual for η by bisection in log space on η ∈ [1e-8, 1e8].
///
/// The KL of the weights decreases monotonically in η, so the root of
/// g'(η) = ε - KL(η) is bracketed whenever KL(1e-8) > ε; otherwise the
/// constraint is inactive and the smallest temperature is returned.
pub fn reps_weights(costs: &[f64], kl_bound: f64) -> Option<RepsWeights> {
    if !costs.iter().any(|c| c.is_finite()) {
        return None;
    }
    let (w_lo, kl_lo) = weights_at(costs, ETA_MIN);
    if kl_lo <= kl_bound {
        return Some(RepsWeights {
            eta: ETA_MIN,
            weights: w_lo,
            kl: kl_lo,
        });
    }
    let (mut lo, mut hi) = (ETA_MIN.ln(), ETA_MAX.ln());
    // Relative tolerance on η is an absolute tolerance on ln η.
    while hi - lo > ETA_REL_TOL {
        let mid = 0.5 * (lo + hi);
        let (_, kl) = weights_at(costs, mid.exp());
        if kl > kl_bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = hi.exp();
    let (weights, kl) = weights_at(costs, eta);
    Some(RepsWeights { eta, weights, kl })
}

/// Weighted maximum-likelihood diagonal Gaussian with variance floor.
pub fn weighted_fit(samples: &[Vec<f64>], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = samples[0].len();
    let mut mean = vec![0.0; n];
    for (x, w) in samples.iter().zip(weights) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += w * v;
        }
    }
    let mut var = vec![0.0; n];
    for (x, w) in samples.iter().zip(weights) {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += w * (v - m) * (v - m);
        }
    }
    for v in &mut var {
        *v = v.max(VARIANCE_FLOOR);
    }
    (mean, var)
}

/// One REPS step on a diagonal Gaussian. The closed-form KL between the
/// returned and the old Gaussian never exceeds the bound.
pub fn reps_update(
    dist: &DomainDistribution,
    samples: &[Vec<f64>],
    costs: &[f64],
    config: &RepsConfig,
) -> Result<RepsStep, OptimError> {
    config.validate()?;
    if !matches!(dist, DomainDistribution::Gaussian { .. }) {
        return Err(OptimError::InvalidArgument("REPS updates a Gaussian".into()));
    }
    if samples.len() != costs.len() || samples.len() != config.samples_per_update {
        return Err(OptimError::InvalidArgument(format!(
            "expected {} samples and costs, got {} and {}",
            config.samples_per_update,
            samples.len(),
            costs.len()
        )));
    }
    if samples.iter().any(|s| s.len() != dist.dims()) {
        return Err(OptimError::InvalidArgument("sample dimension mismatch".into()));
    }
    let Some(w) = reps_weights(costs, config.kl_bound) else {
        log::warn!("REPS update skipped: all {} costs are non-finite", costs.len());
        return Ok(RepsStep {
            dist: dist.clone(),
            weights: None,
        });
    };
    let (old_m, old_v) = (dist.mean(), dist.variance());
    let fit_kl = |w: &[f64]| -> Result<(Vec<f64>, Vec<f64>, f64), OptimError> {
        let (m, v) = weighted_fit(samples, w);
        let kl = kl_diag(&m, &v, &old_m, &old_v)?;
        Ok((m, v, kl))
    };
    let (mut mean, mut var, kl) = fit_kl(&w.weights)?;
    let mut w = w;
    if kl > config.kl_bound {
        // With finite samples the refitted Gaussian can move further than the
        // weights' KL suggests. Raise η until the fitted Gaussian itself
        // respects the trust region; the upper end is kept feasible.
        let (mut lo, mut hi) = (w.eta.ln(), ETA_MAX.ln());
        let mut best = None;
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            let (ww, _) = weights_at(costs, mid.exp());
            let (m, v, k) = fit_kl(&ww)?;
            if k > config.kl_bound {
                lo = mid;
            } else {
                hi = mid;
                best = Some((ww, m, v));
            }
        }
        let (ww, m, v) = match best {
            Some(b) => b,
            None => {
                let (ww, _) = weights_at(costs, hi.exp());
                let (m, v, _) = fit_kl(&ww)?;
                (ww, m, v)
            }
        };
        let (_, kl_w) = weights_at(costs, hi.exp());
        w = RepsWeights {
            eta: hi.exp(),
            weights: ww,
            kl: kl_w,
        };
        mean = m;
        var = v;
    }
    let kl = kl_diag(&mean, &var, &old_m, &old_v)?;
    if kl > config.kl_bound {
        // Even near-uniform weights refit outside the trust region (few
        // samples in many dimensions). Move from the old Gaussian towards the
        // refit, in mean and log-variance, as far as the bound allows.
        let at = |a: f64| -> (Vec<f64>, Vec<f64>) {
            let m = old_m.iter().zip(&mean).map(|(o, n)| o + a * (n - o)).collect();
            let v = old_v
                .iter()
                .zip(&var)
                .map(|(o, n)| (o.ln() + a * (n.ln() - o.ln())).exp())
                .collect();
            (m, v)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let (m, v) = at(mid);
            if kl_diag(&m, &v, &old_m, &old_v)? <= config.kl_bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (mean, var) = at(lo);
    }
    Ok(RepsStep {
        dist: DomainDistribution::gaussian(mean, var)?,
        weights: Some(w),
    })
}
