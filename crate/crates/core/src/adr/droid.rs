use super::{dist_diagnostics, penalized_total, AdrContext, AdrOutcome, IterationResult, MISSING_STEP_FACTOR};
use crate::config::Method;
use crate::dist::DomainDistribution;
use crate::envs::{DynamicsVector, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::optim::{cmaes_minimize, CmaOptions};
use crate::seed;
use crate::trajectory::Dataset;

/// Open-loop replay cost: every trajectory is restarted from its first
/// recorded state and driven by its recorded actions under `xi`; the cost is
/// the summed squared distance between simulated and recorded next-state
/// observations. A replay that diverges is charged for its remaining steps.
pub fn droid_cost(dataset: &Dataset, xi: &DynamicsVector, spec: &EnvironmentSpec) -> f64 {
    let obs_dim = spec.obs_dim();
    let mut sim_obs = vec![0.0; obs_dim];
    let mut rec_obs = vec![0.0; obs_dim];
    let mut action = vec![0.0; spec.action_dim()];
    let mut total = 0.0;
    for traj in &dataset.trajectories {
        let Some(q0) = traj.initial_state() else { continue };
        let mut q = q0.to_vec();
        let mut t = 0;
        let mut costs = Vec::with_capacity(traj.len());
        for tr in &traj.transitions {
            action.copy_from_slice(&tr.a);
            if spec.step_in_place(&mut q, &mut t, &mut action, &xi.values).is_err() {
                break;
            }
            spec.observe_into(&q, &mut sim_obs);
            spec.observe_into(&tr.s_next, &mut rec_obs);
            costs.push(sim_obs.iter().zip(&rec_obs).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        }
        let missing = traj.len() - costs.len();
        total += penalized_total(&costs, missing, MISSING_STEP_FACTOR, obs_dim as f64);
    }
    total.min(f64::MAX)
}

/// Offline DROID: CMA-ES on the replay cost from the prior mean. The
/// inferred distribution is the final search distribution, so it shrinks
/// as far as the optimizer converged.
pub fn run_droid(ctx: &AdrContext, dataset: &Dataset) -> Result<AdrOutcome> {
    if dataset.is_empty() || dataset.n_transitions() == 0 {
        return Err(Error::Method {
            method: "droid".into(),
            reason: "empty dataset".into(),
        });
    }
    let cfg = &ctx.methods.droid;
    let k = dataset.len();
    let n = ctx.dims();
    let mut opts = CmaOptions::new(cfg.cma_budget, seed::derive(ctx.seed, "droid-cma", k as u64));
    opts.bounds = Some(vec![[0.0, 4.0]; n]);
    let objective = |z: &[f64]| droid_cost(dataset, &ctx.source.to_physical(z), &ctx.spec);
    let res = cmaes_minimize(objective, &ctx.prior().mean(), cfg.sigma0, &opts)?;
    let mean: Vec<f64> = res.final_state.mean.iter().copied().collect();
    // An exactly zero variance is not a valid Gaussian; anything above it is kept as is.
    let var = res.final_state.diag_variance().into_iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
    let dist = DomainDistribution::gaussian(mean, var)?;

    let mut out = AdrOutcome::new(Method::Droid);
    for row in &res.trace {
        out.trace.push(serde_json::json!({
            "iteration": k,
            "generation": row.generation,
            "evals": row.evals,
            "best_cost": row.best_f,
            "sigma": row.sigma,
            "mean": row.mean,
        }));
    }
    let report = ctx.train(&dist, "train-droid", k)?;
    let mut diagnostics = dist_diagnostics(&dist, &ctx.source, &ctx.spec);
    diagnostics.insert("best_cost".into(), res.best_f);
    diagnostics.insert("cma_evals".into(), res.evals as f64);
    out.iterations.push(IterationResult {
        iteration: k,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BenchmarkConfig, Setting};
    use crate::envs::{EnvKind, RandomController};
    use crate::trajectory::CollectionStrategy;

    fn dataset(kind: EnvKind, setting: Setting) -> (AdrContext, Dataset) {
        let ctx = AdrContext::new(&BenchmarkConfig::default(), kind, setting, 2).unwrap();
        let mut d = Dataset::default();
        for k in 1..=2 {
            let mut c = RandomController::new(ctx.spec.action_bounds.clone(), k as u64);
            d.trajectories
                .push(ctx.target.collect(&mut c, 200, k as u64, CollectionStrategy::Random, k).unwrap());
        }
        (ctx, d)
    }

    #[test]
    fn ground_truth_replay_is_exact() {
        for kind in EnvKind::ALL {
            let (ctx, d) = dataset(kind, Setting::Vanilla);
            assert_eq!(droid_cost(&d, &ctx.spec.ground_truth, &ctx.spec), 0.0, "{kind}");
        }
    }

    #[test]
    fn heavier_pendulum_costs_more() {
        let (ctx, d) = dataset(EnvKind::Pendulum, Setting::Vanilla);
        let mut xi = ctx.spec.ground_truth.clone();
        xi.values[0] *= 1.5;
        let c = droid_cost(&d, &xi, &ctx.spec);
        assert!(c > 0.0);
        xi.values[0] *= 1.5;
        assert!(droid_cost(&d, &xi, &ctx.spec) > c);
    }

    #[test]
    fn divergent_parameters_are_penalized_finitely() {
        let (ctx, d) = dataset(EnvKind::Acrobot, Setting::Noisy);
        let mut xi = ctx.spec.ground_truth.clone();
        xi.values[4] = -1e300;
        let c = droid_cost(&d, &xi, &ctx.spec);
        assert!(c.is_finite() && c > 0.0);
    }
}
