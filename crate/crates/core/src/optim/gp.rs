//! Exact Gaussian-process regression with a squared-exponential kernel and
//! expected-improvement acquisition for maximization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::OptimError;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Constant prior mean.
    pub mean: f64,
}

impl GpHyper {
    /// Fixed hyperparameters used by the BO loop: unit length-scales, signal
    /// variance equal to the sample variance of `y`, noise a fixed fraction
    /// of the signal, prior mean at the sample mean.
    pub fn from_data(dims: usize, y: &[f64], length_scale: f64, noise_ratio: f64) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let signal_var = if var > 1e-12 { var } else { 1.0 };
        GpHyper {
            length_scales: vec![length_scale; dims],
            signal_var,
            noise_var: noise_ratio * signal_var,
            mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub hyper: GpHyper,
    /// Jitter that was added on top of the noise to factorize.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn kernel(h: &GpHyper, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.length_scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    h.signal_var * (-0.5 * d2).exp()
}

/// Fits an exact GP. If the kernel matrix is numerically singular, jitter
/// of 1e-10 is added and raised tenfold up to 1e-6 before giving up.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<GpModel, OptimError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(OptimError::InvalidArgument(format!(
            "need matching non-empty inputs, got {} points and {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = hyper.length_scales.len();
    if x.iter().any(|p| p.len() != d) {
        return Err(OptimError::InvalidArgument("input dimension mismatch".into()));
    }
    if hyper.length_scales.iter().any(|l| !(*l > 0.0)) || !(hyper.signal_var > 0.0) || !(hyper.noise_var >= 0.0) {
        return Err(OptimError::InvalidArgument("GP hyperparameters must be positive".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::InvalidArgument("GP targets must be finite".into()));
    }
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel(&hyper, &x[i], &x[j]));
    let mut jitter = 0.0;
    let chol = loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += hyper.noise_var + jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            break c;
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_MAX * 1.0001 {
            return Err(OptimError::IllConditioned { jitter: JITTER_MAX });
        }
    };
    let resid = DVector::from_iterator(n, y.iter().map(|v| v - hyper.mean));
    let alpha = chol.solve(&resid);
    Ok(GpModel {
        x: x.to_vec(),
        y: y.to_vec(),
        hyper,
        jitter,
        chol,
        alpha,
    })
}

impl GpModel {
    /// Posterior mean and (non-negative) variance of the latent function.
    pub fn posterior(&self, p: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let ks = DVector::from_iterator(n, self.x.iter().map(|xi| kernel(&self.hyper, xi, p)));
        let mean = self.hyper.mean + ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular factor is invertible");
        let var = (self.hyper.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn best_observed(&self) -> f64 {
        self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn gp_posterior(model: &GpModel, p: &[f64]) -> (f64, f64) {
    model.posterior(p)
}

/// Closed-form expected improvement over `best_y` for maximization.
pub fn expected_improvement(model: &GpModel, p: &[f64], best_y: f64) -> f64 {
    let (mu, var) = model.posterior(p);
    ei_from_moments(mu, var, best_y)
}

fn ei_from_moments(mu: f64, var: f64, best_y: f64) -> f64 {
    let sd = var.sqrt();
    let gain = mu - best_y;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let std = Normal::standard();
    (gain * std.cdf(z) + sd * std.pdf(z)).max(0.0)
}

/// Maximizes EI inside `bounds` by compass pattern search from `starts`
/// uniformly drawn starting points; returns the best point found.
pub fn bo_suggest<R: Rng + ?Sized>(model: &GpModel, bounds: &[[f64; 2]], starts: usize, rng: &mut R) -> Vec<f64> {
    let best_y = model.best_observed();
    let ei = |p: &[f64]| expected_improvement(model, p, best_y);
    let d = bounds.len();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for _ in 0..starts.max(1) {
        let mut p: Vec<f64> = bounds.iter().map(|[lo, hi]| rng.random_range(*lo..=*hi)).collect();
        let mut f = ei(&p);
        let mut step: Vec<f64> = bounds.iter().map(|[lo, hi]| 0.1 * (hi - lo)).collect();
        let min_step: Vec<f64> = bounds.iter().map(|[lo, hi]| 1e-6 * (hi - lo)).collect();
        for _ in 0..400 {
            let mut improved = false;
            for i in 0..d {
                for dir in [1.0, -1.0] {
                    let mut q = p.clone();
                    q[i] = (q[i] + dir * step[i]).clamp(bounds[i][0], bounds[i][1]);
                    let fq = ei(&q);
                    if fq > f {
                        p = q;
                        f = fq;
                        improved = true;
                    }
                }
            }
            if !improved {
                for s in &mut step {
                    *s *= 0.5;
                }
                if step.iter().zip(&min_step).all(|(s, m)| s < m) {
                    break;
                }
            }
        }
        if f > best.0 {
            best = (f, p);
        }
    }
    best.1
}
