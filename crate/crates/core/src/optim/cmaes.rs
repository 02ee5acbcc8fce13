//! (μ/μ_w, λ)-CMA-ES with rank-one and rank-μ covariance updates.
//!
//! Parameter schedule follows Hansen's tutorial defaults. Box constraints are
//! handled by resampling out-of-box candidates up to 100 times and clamping
//! whatever is still outside afterwards.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::OptimError;
use crate::seed;

const MAX_RESAMPLES: usize = 100;

/// Search distribution of a running CMA-ES instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub lambda: usize,
}

impl CmaState {
    /// Per-coordinate variance σ²·diag(C).
    pub fn diag_variance(&self) -> Vec<f64> {
        (0..self.mean.len()).map(|i| self.sigma * self.sigma * self.cov[(i, i)]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CmaOptions {
    /// Population size; `None` uses 4 + ⌊3 ln n⌋.
    pub lambda: Option<usize>,
    pub max_evals: usize,
    pub bounds: Option<Vec<[f64; 2]>>,
    pub seed: u64,
    /// Stop once the best value drops below this.
    pub target: Option<f64>,
}

impl CmaOptions {
    pub fn new(max_evals: usize, seed: u64) -> Self {
        CmaOptions {
            lambda: None,
            max_evals,
            bounds: None,
            seed,
            target: None,
        }
    }
}

/// One line of the optimizer trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaTraceRow {
    pub generation: usize,
    pub evals: usize,
    pub best_f: f64,
    pub sigma: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CmaResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evals: usize,
    pub final_state: CmaState,
    pub trace: Vec<CmaTraceRow>,
}

pub fn default_lambda(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

struct Schedule {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Schedule {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Schedule {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c1,
            c_mu,
            chi_n,
        }
    }
}

/// Minimizes `objective` starting from `x0` with step size `sigma0`.
///
/// Generations run while a full population still fits into `max_evals`, so
/// the number of evaluations never exceeds the budget. Non-finite objective
/// values rank behind every finite one. Candidates of one generation are
/// evaluated in parallel; results are collected in sampling order so the
/// run is deterministic for a given seed.
pub fn cmaes_minimize<F>(
    objective: F,
    x0: &[f64],
    sigma0: f64,
    opts: &CmaOptions,
) -> Result<CmaResult, OptimError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(OptimError::InvalidArgument("empty starting point".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::InvalidArgument("x0 must be finite".into()));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(OptimError::InvalidArgument(format!("sigma0 must be positive, got {sigma0}")));
    }
    if let Some(b) = &opts.bounds {
        if b.len() != n || b.iter().any(|[lo, hi]| !(lo <= hi)) {
            return Err(OptimError::InvalidArgument("bounds must be n pairs with lo <= hi".into()));
        }
    }
    let lambda = opts.lambda.unwrap_or_else(|| default_lambda(n));
    if lambda < 2 {
        return Err(OptimError::InvalidArgument("lambda must be at least 2".into()));
    }
    let sch = Schedule::new(n, lambda);
    let mut rng = seed::rng(opts.seed, "cmaes", 0);

    let mut mean = DVector::from_column_slice(x0);
    if let Some(b) = &opts.bounds {
        clamp(mean.as_mut_slice(), b);
    }
    let mut st = CmaState {
        mean: mean.clone(),
        sigma: sigma0,
        cov: DMatrix::identity(n, n),
        p_sigma: DVector::zeros(n),
        p_c: DVector::zeros(n),
        generation: 0,
        lambda,
    };
    let mut best_x = st.mean.as_slice().to_vec();
    let mut best_f = f64::INFINITY;
    let mut evals = 0usize;
    let mut trace = Vec::new();

    while evals + lambda <= opts.max_evals {
        let (b, d) = eigen(&st.cov);
        let bd = &b * DMatrix::from_diagonal(&d);

        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut x = sample(&st, &bd, &mut rng);
            if let Some(bounds) = &opts.bounds {
                let mut tries = 1;
                while !inside(x.as_slice(), bounds) && tries < MAX_RESAMPLES {
                    x = sample(&st, &bd, &mut rng);
                    tries += 1;
                }
                clamp(x.as_mut_slice(), bounds);
            }
            xs.push(x);
        }
        let fs: Vec<f64> = xs
            .par_iter()
            .map(|x| {
                let f = objective(x.as_slice());
                if f.is_finite() {
                    f
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        evals += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| fs[i].total_cmp(&fs[j]));
        if fs[order[0]] < best_f {
            best_f = fs[order[0]];
            best_x = xs[order[0]].as_slice().to_vec();
        }

        let old_mean = st.mean.clone();
        let ys: Vec<DVector<f64>> = order[..sch.mu]
            .iter()
            .map(|&i| (&xs[i] - &old_mean) / st.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in sch.weights.iter().zip(&ys) {
            y_w += y * *w;
        }
        st.mean = &old_mean + &y_w * st.sigma;

        // C^{-1/2} = B D^{-1} Bᵀ
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        let cs = sch.c_sigma;
        st.p_sigma = &st.p_sigma * (1.0 - cs) + (&inv_sqrt * &y_w) * (cs * (2.0 - cs) * sch.mu_eff).sqrt();
        let g = (st.generation + 1) as f64;
        let ps_norm = st.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * g)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * sch.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        let cc = sch.c_c;
        st.p_c = &st.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * sch.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in sch.weights.iter().zip(&ys) {
            rank_mu += y * y.transpose() * *w;
        }
        let decay = 1.0 - sch.c1 - sch.c_mu + (1.0 - h) * sch.c1 * cc * (2.0 - cc);
        st.cov = &st.cov * decay + &st.p_c * st.p_c.transpose() * sch.c1 + rank_mu * sch.c_mu;
        st.cov = (&st.cov + st.cov.transpose()) * 0.5;

        st.sigma *= ((cs / sch.d_sigma) * (ps_norm / sch.chi_n - 1.0)).exp();
        st.generation += 1;

        trace.push(CmaTraceRow {
            generation: st.generation,
            evals,
            best_f,
            sigma: st.sigma,
            mean: st.mean.as_slice().to_vec(),
        });

        if opts.target.is_some_and(|t| best_f < t) {
            break;
        }
        // Numerical end of the road: the distribution has shrunk below
        // floating-point resolution of the mean.
        let spread = st.sigma * d.max();
        if !(spread > 1e-300) || !st.sigma.is_finite() {
            break;
        }
    }

    Ok(CmaResult {
        best_x,
        best_f,
        evals,
        final_state: st,
        trace,
    })
}

/// Eigen decomposition of a symmetric matrix, returning B and the square
/// roots of the (floored) eigenvalues.
fn eigen(cov: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(cov.clone());
    let floor = 1e-300_f64.max(eig.eigenvalues.max() * 1e-30);
    let d = eig.eigenvalues.map(|v| v.max(floor).sqrt());
    (eig.eigenvectors, d)
}

fn sample<R: Rng + ?Sized>(st: &CmaState, bd: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = st.mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &st.mean + bd * z * st.sigma
}

fn inside(x: &[f64], bounds: &[[f64; 2]]) -> bool {
    x.iter().zip(bounds).all(|(v, [lo, hi])| lo <= v && v <= hi)
}

fn clamp(x: &mut [f64], bounds: &[[f64; 2]]) {
    for (v, [lo, hi]) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_population_size() {
        assert_eq!(default_lambda(2), 6);
        assert_eq!(default_lambda(3), 7);
        assert_eq!(default_lambda(8), 10);
        assert_eq!(default_lambda(12), 11);
    }

    #[test]
    fn budget_of_one_population_runs_one_generation() {
        let opts = CmaOptions::new(10, 0);
        let r = cmaes_minimize(sphere, &[1.0; 8], 0.5, &opts).unwrap();
        assert_eq!(r.final_state.generation, 1);
        assert_eq!(r.evals, 10);
        let short = CmaOptions::new(9, 0);
        let r = cmaes_minimize(sphere, &[1.0; 8], 0.5, &short).unwrap();
        assert_eq!(r.evals, 0);
    }

    #[test]
    fn budget_is_never_exceeded() {
        for budget in [7, 50, 333] {
            let r = cmaes_minimize(sphere, &[3.0, -1.0, 2.0], 1.0, &CmaOptions::new(budget, 1)).unwrap();
            assert!(r.evals <= budget);
            assert!(r.evals + 7 > budget);
        }
    }

    #[test]
    fn non_finite_values_rank_last() {
        // NaN everywhere except near the origin still converges.
        let f = |x: &[f64]| if x[0] > 2.0 { f64::NAN } else { sphere(x) };
        let r = cmaes_minimize(f, &[1.5, 1.0], 1.0, &CmaOptions::new(3000, 2)).unwrap();
        assert!(r.best_f < 1e-8, "{}", r.best_f);
    }

    #[test]
    fn box_constraints_hold() {
        let bounds = vec![[1.0, 2.0], [-1.0, 0.5]];
        let opts = CmaOptions {
            bounds: Some(bounds.clone()),
            ..CmaOptions::new(600, 3)
        };
        let seen = std::sync::Mutex::new(Vec::new());
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            sphere(x)
        };
        let r = cmaes_minimize(f, &[1.5, 0.0], 1.0, &opts).unwrap();
        for x in seen.into_inner().unwrap() {
            assert!(inside(&x, &bounds), "{x:?}");
        }
        // Constrained optimum sits on the boundary at (1, 0).
        assert!((r.best_x[0] - 1.0).abs() < 1e-6 && r.best_x[1].abs() < 1e-2, "{:?}", r.best_x);
        assert!(r.best_f - 1.0 < 1e-4);
    }

    #[test]
    fn same_seed_same_run() {
        let a = cmaes_minimize(sphere, &[1.0, 2.0, 3.0], 0.3, &CmaOptions::new(500, 9)).unwrap();
        let b = cmaes_minimize(sphere, &[1.0, 2.0, 3.0], 0.3, &CmaOptions::new(500, 9)).unwrap();
        assert_eq!(a.best_x, b.best_x);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn invalid_arguments() {
        assert!(cmaes_minimize(sphere, &[f64::NAN], 1.0, &CmaOptions::new(10, 0)).is_err());
        assert!(cmaes_minimize(sphere, &[0.0], 0.0, &CmaOptions::new(10, 0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn covariance_stays_spd_and_best_is_monotone(
            seed in 0u64..1000,
            n in 2usize..6,
            scale in 0.1f64..100.0,
        ) {
            // Ill-conditioned ellipsoid.
            let f = move |x: &[f64]| {
                x.iter().enumerate().map(|(i, v)| scale.powf(i as f64 / (x.len() - 1) as f64) * v * v).sum::<f64>()
            };
            let r = cmaes_minimize(f, &vec![1.0; n], 0.5, &CmaOptions::new(1500, seed)).unwrap();
            let st = &r.final_state;
            prop_assert!((&st.cov - st.cov.transpose()).abs().max() < 1e-12);
            let eig = SymmetricEigen::new(st.cov.clone());
            prop_assert!(eig.eigenvalues.min() > 0.0);
            prop_assert!(st.sigma > 0.0);
            for w in r.trace.windows(2) {
                prop_assert!(w[1].best_f <= w[0].best_f);
            }
        }
    }
}
