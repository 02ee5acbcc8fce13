use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{dist_diagnostics, penalized_total, AdrContext, AdrOutcome, IterationResult, MISSING_STEP_FACTOR};
use crate::config::{Method, SimoptConfig};
use crate::dist::DomainDistribution;
use crate::envs::{Controller, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::optim::{reps_update, RepsConfig};
use crate::policy::{Policy, TrainingReport};
use crate::seed;
use crate::trajectory::{CollectionStrategy, Dataset, Trajectory};

/// Constants of the trajectory discrepancy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyWeights {
    pub l1: f64,
    pub l2: f64,
    pub missing_step_factor: f64,
}

impl Default for DiscrepancyWeights {
    fn default() -> Self {
        DiscrepancyWeights {
            l1: 1.0,
            l2: 1.0,
            missing_step_factor: MISSING_STEP_FACTOR,
        }
    }
}

impl From<&SimoptConfig> for DiscrepancyWeights {
    fn from(c: &SimoptConfig) -> Self {
        DiscrepancyWeights {
            l1: c.l1_weight,
            l2: c.l2_weight,
            missing_step_factor: c.missing_step_factor,
        }
    }
}

/// Weighted L1 + squared L2 distance between two observation sequences
/// that start from the same state. Steps the simulated sequence is missing
/// (early termination or divergence) are charged `missing_step_factor`
/// times the mean cost of the compared steps.
pub fn simopt_discrepancy(target: &[Vec<f64>], sim: &[Vec<f64>], weights: &DiscrepancyWeights) -> Result<f64> {
    if target.is_empty() || sim.is_empty() {
        return Err(Error::Method {
            method: "simopt".into(),
            reason: "cannot compare an empty trajectory".into(),
        });
    }
    let dim = target[0].len();
    let costs: Vec<f64> = target
        .iter()
        .zip(sim)
        .map(|(o_t, o_s)| {
            let (mut l1, mut l2) = (0.0, 0.0);
            for (a, b) in o_t.iter().zip(o_s) {
                let d = b - a;
                l1 += d.abs();
                l2 += d * d;
            }
            weights.l1 * l1 + weights.l2 * l2
        })
        .collect();
    let missing = target.len().saturating_sub(sim.len());
    let fallback = (weights.l1 + weights.l2) * dim as f64;
    Ok(penalized_total(&costs, missing, weights.missing_step_factor, fallback))
}

/// Observations of the recorded states `s_0, ..., s_L`.
fn recorded_observations(spec: &EnvironmentSpec, traj: &Trajectory) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = traj.transitions.iter().map(|tr| spec.observe(&tr.s)).collect();
    if let Some(last) = traj.transitions.last() {
        out.push(spec.observe(&last.s_next));
    }
    out
}

/// Closed-loop rollout of `policy` in simulation from `q0`, returning the
/// observations of at most `steps + 1` visited states.
fn simulated_observations(
    spec: &EnvironmentSpec,
    policy: &Policy,
    xi: &[f64],
    q0: &[f64],
    steps: usize,
) -> Vec<Vec<f64>> {
    let mut net = policy.runner();
    let mut q = q0.to_vec();
    let mut t = 0;
    let mut action = vec![0.0; spec.action_dim()];
    let mut out = Vec::with_capacity(steps + 1);
    out.push(spec.observe(&q));
    for _ in 0..steps {
        net.act(out.last().expect("non-empty"), &mut action);
        match spec.step_in_place(&mut q, &mut t, &mut action, xi) {
            Ok((_, done)) => {
                out.push(spec.observe(&q));
                if done {
                    break;
                }
            }
            Err(_) => break,
        }
    }
    out
}

struct Reference {
    obs: Vec<Vec<f64>>,
    q0: Vec<f64>,
    steps: usize,
}

impl Reference {
    fn new(spec: &EnvironmentSpec, traj: &Trajectory) -> Result<Self> {
        let q0 = traj.initial_state().ok_or_else(|| Error::Method {
            method: "simopt".into(),
            reason: format!("target trajectory {} is empty", traj.meta.iteration),
        })?;
        Ok(Reference {
            obs: recorded_observations(spec, traj),
            q0: q0.to_vec(),
            steps: traj.len(),
        })
    }
}

struct Round {
    dist: DomainDistribution,
    mean_cost: f64,
    min_cost: f64,
    kl: Option<f64>,
}

/// One REPS update: sample dynamics, roll the policy against every
/// reference trajectory, reweight on the summed discrepancy.
fn reps_round(
    ctx: &AdrContext,
    dist: &DomainDistribution,
    policy: &Policy,
    refs: &[Reference],
    reps: &RepsConfig,
    weights: &DiscrepancyWeights,
    rng_index: u64,
    label: &str,
) -> Result<Round> {
    let mut rng = seed::rng(ctx.seed, label, rng_index);
    let samples: Vec<Vec<f64>> = (0..reps.samples_per_update).map(|_| dist.sample(&mut rng, true)).collect();
    let costs: Vec<f64> = samples
        .par_iter()
        .map(|z| {
            let xi = ctx.source.to_physical(z).values;
            refs.iter()
                .map(|r| {
                    let sim = simulated_observations(&ctx.spec, policy, &xi, &r.q0, r.steps);
                    simopt_discrepancy(&r.obs, &sim, weights).expect("references are non-empty")
                })
                .sum::<f64>()
        })
        .collect();
    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    let mean_cost = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let min_cost = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let step = reps_update(dist, &samples, &costs, reps)?;
    Ok(Round {
        dist: step.dist,
        mean_cost,
        min_cost,
        kl: step.weights.map(|w| w.kl),
    })
}

fn trace_round(out: &mut AdrOutcome, iteration: usize, update: usize, round: &Round) {
    out.trace.push(serde_json::json!({
        "iteration": iteration,
        "update": update,
        "mean_discrepancy": round.mean_cost,
        "min_discrepancy": round.min_cost,
        "kl": round.kl,
        "distribution": round.dist,
    }));
}

/// Online SimOpt. Iteration `k` collects one target trajectory with the
/// policy of iteration `k - 1` (the prior-trained policy for `k = 1`),
/// performs the configured REPS updates against it, and trains a new
/// policy. Also returns the logged target trajectories.
pub fn run_simopt(ctx: &AdrContext, prior: &TrainingReport) -> Result<(AdrOutcome, Dataset)> {
    let cfg = &ctx.methods.simopt;
    let reps = cfg.reps();
    let weights = DiscrepancyWeights::from(cfg);
    let mut dist = ctx.prior();
    let mut policy = prior.policy.clone();
    let mut log = Dataset::default();
    let mut out = AdrOutcome::new(Method::Simopt);
    for k in 1..=ctx.protocol.iterations {
        let mut traj = ctx.target.collect(
            &mut policy.runner(),
            ctx.protocol.trajectory_len,
            ctx.collection_seed(k),
            CollectionStrategy::SimoptPolicy,
            k,
        )?;
        traj.meta.policy = Some(policy.digest());
        let refs = [Reference::new(&ctx.spec, &traj)?];
        log.trajectories.push(traj);

        let mut diagnostics = BTreeMap::new();
        for u in 0..reps.updates_per_iteration {
            let round = reps_round(ctx, &dist, &policy, &refs, &reps, &weights, (k * 1000 + u) as u64, "simopt-reps")?;
            if u == 0 {
                diagnostics.insert("discrepancy_first".to_string(), round.mean_cost);
            }
            diagnostics.insert("discrepancy_last".to_string(), round.mean_cost);
            trace_round(&mut out, k, u, &round);
            dist = round.dist;
        }
        let report = ctx.train(&dist, "train-simopt", k)?;
        policy = report.policy.clone();
        diagnostics.extend(dist_diagnostics(&dist, &ctx.source, &ctx.spec));
        out.iterations.push(IterationResult {
            iteration: k,
            distribution: dist.clone(),
            policy: report.policy,
            train_return: report.train_return,
            train_success: report.success,
            transitions_used: log.n_transitions(),
            target_return: None,
            diagnostics,
        });
    }
    Ok((out, log))
}

/// SimOpt with all REPS updates in a single iteration. The point for `k`
/// trajectories restarts from the prior and uses the first `k` trajectories
/// of `dataset`, all of which must come from the prior-trained policy.
pub fn run_simopt1(ctx: &AdrContext, prior_policy: &Policy, dataset: &Dataset) -> Result<AdrOutcome> {
    let cfg = &ctx.methods.simopt;
    let reps = RepsConfig {
        updates_per_iteration: cfg.single_iteration_updates,
        ..cfg.reps()
    };
    let weights = DiscrepancyWeights::from(cfg);
    let digest = prior_policy.digest();
    if let Some(t) = dataset.trajectories.iter().find(|t| t.meta.policy.as_deref() != Some(&digest)) {
        return Err(Error::Method {
            method: "simopt1".into(),
            reason: format!("trajectory {} was not collected by the prior-trained policy", t.meta.iteration),
        });
    }
    let mut out = AdrOutcome::new(Method::Simopt1);
    let refs = dataset
        .trajectories
        .iter()
        .map(|t| Reference::new(&ctx.spec, t))
        .collect::<Result<Vec<_>>>()?;
    for k in 1..=dataset.len().min(ctx.protocol.iterations) {
        let mut dist = ctx.prior();
        let mut diagnostics = BTreeMap::new();
        for u in 0..reps.updates_per_iteration {
            let round = reps_round(
                ctx,
                &dist,
                prior_policy,
                &refs[..k],
                &reps,
                &weights,
                (k * 1000 + u) as u64,
                "simopt1-reps",
            )?;
            if u == 0 {
                diagnostics.insert("discrepancy_first".to_string(), round.mean_cost / k as f64);
            }
            diagnostics.insert("discrepancy_last".to_string(), round.mean_cost / k as f64);
            trace_round(&mut out, k, u, &round);
            dist = round.dist;
        }
        let report = ctx.train(&dist, "train-simopt1", k)?;
        diagnostics.extend(dist_diagnostics(&dist, &ctx.source, &ctx.spec));
        out.iterations.push(IterationResult {
            iteration: k,
            distribution: dist,
            policy: report.policy,
            train_return: report.train_return,
            train_success: report.success,
            transitions_used: dataset.prefix(k).n_transitions(),
            target_return: None,
            diagnostics,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BenchmarkConfig, Setting};
    use crate::envs::{rollout, EnvKind};

    #[test]
    fn identical_sequences_cost_nothing() {
        let a = vec![vec![0.3, -1.0], vec![0.1, 2.0]];
        assert_eq!(simopt_discrepancy(&a, &a, &DiscrepancyWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn one_step_hand_value() {
        let c = simopt_discrepancy(&[vec![1.0]], &[vec![1.5]], &DiscrepancyWeights::default()).unwrap();
        assert!((c - 0.75).abs() < 1e-15);
    }

    #[test]
    fn missing_steps_are_charged() {
        let w = DiscrepancyWeights::default();
        let target = vec![vec![0.0], vec![1.0], vec![2.0]];
        let short = vec![vec![0.0], vec![1.5]];
        // compared steps cost 0 and 0.75, one step missing at 10 x 0.375
        let c = simopt_discrepancy(&target, &short, &w).unwrap();
        assert!((c - (0.75 + 3.75)).abs() < 1e-12);
        assert!(simopt_discrepancy(&target, &[], &w).is_err());
        assert!(simopt_discrepancy(&[], &short, &w).is_err());
    }

    #[test]
    fn diverging_dynamics_give_finite_costs() {
        let cfg = BenchmarkConfig::default();
        let spec = cfg.env_spec(EnvKind::Acrobot).unwrap();
        let policy = Policy::zeros(crate::policy::Architecture::Linear, &spec);
        let traj = rollout(&spec, &mut policy.runner(), &spec.ground_truth, 100, 0, 0.0)
            .unwrap()
            .trajectory;
        let r = Reference::new(&spec, &traj).unwrap();
        let mut xi = spec.ground_truth.values.clone();
        xi[0] = 1e-300;
        xi[4] = -1e300;
        let sim = simulated_observations(&spec, &policy, &xi, &r.q0, r.steps);
        let c = simopt_discrepancy(&r.obs, &sim, &DiscrepancyWeights::default()).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }

    #[test]
    fn ground_truth_replays_the_noiseless_target() {
        let cfg = BenchmarkConfig::default();
        let ctx = AdrContext::new(&cfg, EnvKind::Cartpole, Setting::Vanilla, 1).unwrap();
        let policy = Policy::zeros(ctx.arch.clone(), &ctx.spec);
        let traj = ctx
            .target
            .collect(&mut policy.runner(), 200, 5, CollectionStrategy::SimoptPolicy, 1)
            .unwrap();
        let r = Reference::new(&ctx.spec, &traj).unwrap();
        let sim = simulated_observations(&ctx.spec, &policy, &ctx.spec.ground_truth.values, &r.q0, r.steps);
        assert_eq!(simopt_discrepancy(&r.obs, &sim, &DiscrepancyWeights::default()).unwrap(), 0.0);
    }
}
