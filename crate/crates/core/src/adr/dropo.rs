use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{dist_diagnostics, AdrContext, AdrOutcome, IterationResult};
use crate::config::Method;
use crate::dist::DomainDistribution;
use crate::envs::{EnvironmentSpec, SourceModel};
use crate::error::{Error, Result};
use crate::optim::{cmaes_minimize, CmaOptions};
use crate::seed;
use crate::trajectory::{Dataset, Transition};

/// Bounds of the log-variance search coordinates.
const LOG_VAR_BOUNDS: [f64; 2] = [-13.815_510_557_964_274, 1.386_294_361_119_890_6]; // ln 1e-6, ln 4

/// Below this many transitions there is no held-out split.
const MIN_SPLIT_TRANSITIONS: usize = 10;

/// Per-transition likelihood of a dataset under a parameter distribution,
/// with common random numbers: the standard normal draws behind the `K`
/// dynamics samples of transition `t` depend only on the seed and `t`, so
/// the objective is a deterministic function of the distribution.
pub struct DropoProblem<'a> {
    spec: &'a EnvironmentSpec,
    source: &'a SourceModel,
    transitions: Vec<&'a Transition>,
    k: usize,
    draws: Vec<f64>,
}

impl<'a> DropoProblem<'a> {
    pub fn new(
        spec: &'a EnvironmentSpec,
        source: &'a SourceModel,
        dataset: &'a Dataset,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Method {
                method: "dropo".into(),
                reason: format!("need at least 2 samples per transition for a variance, got {k}"),
            });
        }
        let n = source.dims();
        let transitions: Vec<&Transition> = dataset.transitions().collect();
        let mut draws = Vec::with_capacity(transitions.len() * k * n);
        for t in 0..transitions.len() {
            let mut rng = seed::rng(seed, "dropo-draws", t as u64);
            draws.extend((0..k * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        Ok(DropoProblem {
            spec,
            source,
            transitions,
            k,
            draws,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Summed Gaussian log-likelihood of the recorded next states of the
    /// transitions in `range`, each against the sample mean and sample
    /// variance (plus `epsilon`) of `K` one-step simulations from the
    /// recorded state.
    pub fn loglike(&self, mean: &[f64], var: &[f64], epsilon: f64, range: Range<usize>) -> f64 {
        let n = mean.len();
        let sd: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
        let per: Vec<f64> = range
            .into_par_iter()
            .map(|t| {
                let tr = self.transitions[t];
                let draws = &self.draws[t * self.k * n..(t + 1) * self.k * n];
                let mut next: Vec<Vec<f64>> = Vec::with_capacity(self.k);
                let mut z = vec![0.0; n];
                let mut action = tr.a.clone();
                for e in draws.chunks_exact(n) {
                    for d in 0..n {
                        z[d] = (mean[d] + sd[d] * e[d]).clamp(0.0, 4.0);
                    }
                    let xi = self.source.to_physical(&z);
                    let mut q = tr.s.clone();
                    let mut step = 0;
                    action.copy_from_slice(&tr.a);
                    if self.spec.step_in_place(&mut q, &mut step, &mut action, &xi.values).is_ok() {
                        next.push(q);
                    }
                }
                transition_loglike(&tr.s_next, &tr.s, &next, epsilon)
            })
            .collect();
        per.iter().sum()
    }
}

/// Log-density of `observed` under the diagonal Gaussian fitted to
/// `samples` with `epsilon` added to every variance. Deviations are taken
/// from the first sample so identical samples give exactly zero variance.
fn transition_loglike(observed: &[f64], fallback: &[f64], samples: &[Vec<f64>], epsilon: f64) -> f64 {
    let m = samples.len();
    let mut ll = 0.0;
    for d in 0..observed.len() {
        let (mu, v) = if m == 0 {
            (fallback[d], 0.0)
        } else {
            let x0 = samples[0][d];
            let mean_dev = samples.iter().map(|s| s[d] - x0).sum::<f64>() / m as f64;
            let v = if m > 1 {
                samples.iter().map(|s| (s[d] - x0 - mean_dev).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            (x0 + mean_dev, v)
        };
        let s2 = v + epsilon;
        ll -= 0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (observed[d] - mu).powi(2) / s2);
    }
    if ll.is_finite() {
        ll
    } else {
        -f64::MAX / 1e6
    }
}

/// Log-likelihood of every transition of `dataset` under the diagonal
/// Gaussian `(mean, var)` over normalized parameters.
#[allow(clippy::too_many_arguments)]
pub fn dropo_loglike(
    dataset: &Dataset,
    mean: &[f64],
    var: &[f64],
    spec: &EnvironmentSpec,
    source: &SourceModel,
    epsilon: f64,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Method {
            method: "dropo".into(),
            reason: format!("epsilon must be positive, got {epsilon}"),
        });
    }
    if mean.len() != source.dims() || var.len() != source.dims() {
        return Err(Error::Method {
            method: "dropo".into(),
            reason: format!("expected {} dimensions", source.dims()),
        });
    }
    let p = DropoProblem::new(spec, source, dataset, k, seed)?;
    Ok(p.loglike(mean, var, epsilon, 0..p.len()))
}

/// Offline DROPO. For every ε of the grid, CMA-ES maximizes the likelihood
/// of the leading transitions over per-dimension means and log-variances;
/// the ε whose fit best explains the held-out tail wins.
pub fn run_dropo(ctx: &AdrContext, dataset: &Dataset) -> Result<AdrOutcome> {
    let cfg = &ctx.methods.dropo;
    if cfg.epsilon_grid.is_empty() {
        return Err(Error::Method {
            method: "dropo".into(),
            reason: "empty epsilon grid".into(),
        });
    }
    let n = ctx.dims();
    let k_iter = dataset.len();
    let problem = DropoProblem::new(
        &ctx.spec,
        &ctx.source,
        dataset,
        cfg.samples_factor * n,
        seed::derive(ctx.seed, "dropo", 0),
    )?;
    let total = problem.len();
    if total == 0 {
        return Err(Error::Method {
            method: "dropo".into(),
            reason: "empty dataset".into(),
        });
    }
    let (train, held, grid) = if total < MIN_SPLIT_TRANSITIONS {
        log::warn!("dropo: only {total} transitions, no held-out split; using epsilon {}", cfg.epsilon_grid[0]);
        (0..total, None, &cfg.epsilon_grid[..1])
    } else {
        let n_held = ((total as f64 * cfg.holdout_fraction).round() as usize).clamp(1, total - 1);
        (0..total - n_held, Some(total - n_held..total), &cfg.epsilon_grid[..])
    };
    let n_train = train.len() as f64;

    let mut bounds = vec![[0.0, 4.0]; n];
    bounds.extend(std::iter::repeat_n(LOG_VAR_BOUNDS, n));
    let prior = ctx.prior();
    let x0: Vec<f64> = prior.mean().into_iter().chain(prior.variance().iter().map(|v| v.ln())).collect();

    let mut out = AdrOutcome::new(Method::Dropo);
    let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
    for (i, &eps) in grid.iter().enumerate() {
        let mut opts = CmaOptions::new(cfg.cma_budget, seed::derive(ctx.seed, "dropo-cma", (k_iter * 100 + i) as u64));
        opts.bounds = Some(bounds.clone());
        let objective = |phi: &[f64]| {
            let var: Vec<f64> = phi[n..].iter().map(|l| l.exp()).collect();
            -problem.loglike(&phi[..n], &var, eps, train.clone()) / n_train
        };
        let res = cmaes_minimize(objective, &x0, cfg.sigma0, &opts)?;
        let mean = res.best_x[..n].to_vec();
        let var: Vec<f64> = res.best_x[n..].iter().map(|l| l.exp()).collect();
        let score = match &held {
            Some(h) => problem.loglike(&mean, &var, eps, h.clone()) / h.len() as f64,
            None => -res.best_f,
        };
        out.trace.push(serde_json::json!({
            "iteration": k_iter,
            "epsilon": eps,
            "train_loglike": -res.best_f,
            "heldout_loglike": score,
            "evals": res.evals,
            "mean": mean,
            "var": var,
        }));
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, eps, mean, var));
        }
    }
    let (score, eps, mean, var) = best.expect("grid is non-empty");
    let dist = DomainDistribution::gaussian(mean, var)?;
    let report = ctx.train(&dist, "train-dropo", k_iter)?;
    let mut diagnostics = dist_diagnostics(&dist, &ctx.source, &ctx.spec);
    diagnostics.insert("epsilon".into(), eps);
    diagnostics.insert("heldout_loglike".into(), score);
    out.iterations.push(IterationResult {
        iteration: k_iter,
        distribution: dist,
        policy: report.policy,
        train_return: report.train_return,
        train_success: report.success,
        transitions_used: dataset.n_transitions(),
        target_return: None,
        diagnostics,
    });
    Ok(out)
}
