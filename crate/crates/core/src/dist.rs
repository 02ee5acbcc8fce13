//! Normalized parameter spaces and source-domain distributions.
//!
//! Inference always happens in a normalized space where every physical
//! search interval is mapped affinely onto [0, 4]. Distributions are
//! diagonal Gaussians or axis-aligned uniforms over that space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::OptimError;

/// Upper end of the normalized range; the lower end is zero.
pub const NORMALIZED_MAX: f64 = 4.0;

/// Per-dimension physical bounds of the inferred parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub bounds: Vec<[f64; 2]>,
}

impl ParamSpace {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        ParamSpace { bounds }
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    /// z = 4 (ξ - lo) / (hi - lo), per dimension.
    pub fn normalize(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .zip(&self.bounds)
            .map(|(x, [lo, hi])| NORMALIZED_MAX * (x - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .map(|(z, [lo, hi])| lo + z * (hi - lo) / NORMALIZED_MAX)
            .collect()
    }

    /// Whether a normalized point lies inside [0, 4]^n.
    pub fn contains(z: &[f64]) -> bool {
        z.iter().all(|v| (0.0..=NORMALIZED_MAX).contains(v))
    }
}

/// Parametric source distribution p_φ(ξ) over the normalized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum DomainDistribution {
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl DomainDistribution {
    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self, OptimError> {
        let d = DomainDistribution::Gaussian { mean, var };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, OptimError> {
        let d = DomainDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    /// A Gaussian with zero variance is not allowed, so point masses are
    /// degenerate uniforms.
    pub fn point(z: Vec<f64>) -> Self {
        DomainDistribution::Uniform { lo: z.clone(), hi: z }
    }

    pub fn dims(&self) -> usize {
        match self {
            DomainDistribution::Gaussian { mean, .. } => mean.len(),
            DomainDistribution::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let invalid = |m: &str| Err(OptimError::InvalidArgument(m.to_string()));
        match self {
            DomainDistribution::Gaussian { mean, var } => {
                if mean.len() != var.len() {
                    return invalid("mean and variance dimensions differ");
                }
                if mean.iter().any(|m| !m.is_finite()) {
                    return invalid("non-finite mean");
                }
                if let Some(v) = var.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(OptimError::NonPositiveVariance(*v));
                }
            }
            DomainDistribution::Uniform { lo, hi } => {
                if lo.len() != hi.len() {
                    return invalid("bound dimensions differ");
                }
                for (l, h) in lo.iter().zip(hi) {
                    if !(l.is_finite() && h.is_finite()) {
                        return invalid("non-finite bound");
                    }
                    if l > h {
                        return invalid("uniform requires lo <= hi");
                    }
                    if *l < 0.0 || *h > NORMALIZED_MAX {
                        return invalid("uniform bounds must lie within [0, 4]");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            DomainDistribution::Gaussian { mean, .. } => mean.clone(),
            DomainDistribution::Uniform { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect()
            }
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        match self {
            DomainDistribution::Gaussian { var, .. } => var.clone(),
            DomainDistribution::Uniform { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| (h - l).powi(2) / 12.0).collect()
            }
        }
    }

    /// Draws one normalized vector; with `clamp`, coordinates are clipped to [0, 4].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, clamp: bool) -> Vec<f64> {
        self.sample_counted(rng, clamp).0
    }

    /// Like [`sample`](Self::sample), also reporting whether clipping changed the draw.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R, clamp: bool) -> (Vec<f64>, bool) {
        let mut z: Vec<f64> = match self {
            DomainDistribution::Gaussian { mean, var } => mean
                .iter()
                .zip(var)
                .map(|(m, v)| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + v.sqrt() * e
                })
                .collect(),
            DomainDistribution::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..*h) })
                .collect(),
        };
        let mut clipped = false;
        if clamp {
            for v in &mut z {
                let c = v.clamp(0.0, NORMALIZED_MAX);
                clipped |= c != *v;
                *v = c;
            }
        }
        (z, clipped)
    }
}

/// Conservative starting distribution: N(2·1, I) in normalized units.
pub fn prior(dims: usize) -> DomainDistribution {
    DomainDistribution::Gaussian {
        mean: vec![0.5 * NORMALIZED_MAX; dims],
        var: vec![1.0; dims],
    }
}

/// Clips every coordinate to [0, 4].
pub fn clamp_normalized(z: &mut [f64]) {
    for v in z {
        *v = v.clamp(0.0, NORMALIZED_MAX);
    }
}

/// KL(p ‖ q) between diagonal Gaussians given as (mean, variance) vectors.
pub fn kl_diag(pm: &[f64], pv: &[f64], qm: &[f64], qv: &[f64]) -> Result<f64, OptimError> {
    if pm.len() != qm.len() || pv.len() != pm.len() || qv.len() != qm.len() {
        return Err(OptimError::InvalidArgument("dimension mismatch".into()));
    }
    let mut kl = 0.0;
    for i in 0..pm.len() {
        if !(pv[i] > 0.0) {
            return Err(OptimError::NonPositiveVariance(pv[i]));
        }
        if !(qv[i] > 0.0) {
            return Err(OptimError::NonPositiveVariance(qv[i]));
        }
        let r = pv[i] / qv[i];
        let d = pm[i] - qm[i];
        kl += 0.5 * (r + d * d / qv[i] - 1.0 - r.ln());
    }
    Ok(kl.max(0.0))
}

/// KL(p ‖ q) for two Gaussian [`DomainDistribution`]s.
pub fn kl_gaussian(p: &DomainDistribution, q: &DomainDistribution) -> Result<f64, OptimError> {
    match (p, q) {
        (
            DomainDistribution::Gaussian { mean: pm, var: pv },
            DomainDistribution::Gaussian { mean: qm, var: qv },
        ) => kl_diag(pm, pv, qm, qv),
        _ => Err(OptimError::InvalidArgument(
            "KL is only defined here for Gaussian distributions".into(),
        )),
    }
}
