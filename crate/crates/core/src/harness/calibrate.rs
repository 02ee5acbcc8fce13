use serde::{Deserialize, Serialize};

use crate::config::BenchmarkConfig;
use crate::dist::DomainDistribution;
use crate::envs::EnvKind;
use crate::error::Result;
use crate::policy::{evaluate_policy, train_policy, Policy};
use crate::seed;

/// Fraction of the converged ground-truth return used as training threshold.
pub const THRESHOLD_FRACTION: f64 = 0.9;

/// Outcome of training on the exact target dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub env: EnvKind,
    pub seed: u64,
    pub generations: usize,
    /// Target return of the trained policy.
    pub converged_return: f64,
    /// Target return of the zero-action policy.
    pub zero_action_return: f64,
    /// Suggested `reward_threshold`.
    pub threshold: f64,
}

/// Trains for the full generation budget on the ground truth (no early
/// stop) and derives a threshold at 90% of the converged return. For
/// cost-style rewards the fraction is taken on the scale anchored at the
/// zero-action return.
pub fn calibrate_threshold(config: &BenchmarkConfig, env: EnvKind, seed_value: u64) -> Result<Calibration> {
    let spec = config.env_spec(env)?;
    let source = spec.full_source();
    let (mut trainer, arch) = config.trainer_for(env, seed::derive(seed_value, "calibrate", 0))?;
    trainer.reward_threshold = f64::INFINITY;
    let truth = DomainDistribution::point(source.project(&spec.ground_truth));
    let report = train_policy(&truth, &source, &spec, &arch, &trainer)?;
    let episodes = config.protocol.eval_episodes;
    let eval_seed = seed::derive(seed_value, "calibrate-eval", 0);
    let converged = evaluate_policy(&report.policy, &spec, &spec.ground_truth, 0.0, episodes, eval_seed)?;
    let zero = evaluate_policy(&Policy::zeros(arch, &spec), &spec, &spec.ground_truth, 0.0, episodes, eval_seed)?;
    let threshold = if env.negative_scale() {
        zero + THRESHOLD_FRACTION * (converged - zero)
    } else {
        THRESHOLD_FRACTION * converged
    };
    Ok(Calibration {
        env,
        seed: seed_value,
        generations: report.generations,
        converged_return: converged,
        zero_action_return: zero,
        threshold,
    })
}
