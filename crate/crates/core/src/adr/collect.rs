use super::AdrContext;
use crate::envs::RandomController;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::seed;
use crate::trajectory::{CollectionStrategy, Dataset};

/// Builds the dataset an offline method sees after `iterations` iterations.
///
/// `simopt-policy` takes the first `iterations` trajectories SimOpt logged;
/// the other strategies collect fresh target trajectories, one per
/// iteration, with the same reset seeds SimOpt uses.
pub fn collect_offline_dataset(
    ctx: &AdrContext,
    strategy: CollectionStrategy,
    iterations: usize,
    simopt_log: Option<&Dataset>,
    prior_policy: Option<&Policy>,
) -> Result<Dataset> {
    let fail = |reason: String| Error::Method {
        method: format!("{strategy} collection"),
        reason,
    };
    let len = ctx.protocol.trajectory_len;
    match strategy {
        CollectionStrategy::SimoptPolicy => {
            let log = simopt_log.ok_or_else(|| fail("needs a completed SimOpt run".into()))?;
            if log.len() < iterations {
                return Err(fail(format!(
                    "SimOpt logged {} trajectories, {iterations} requested",
                    log.len()
                )));
            }
            Ok(log.prefix(iterations))
        }
        CollectionStrategy::Random => {
            let mut out = Dataset::default();
            for k in 1..=iterations {
                let mut c = RandomController::new(
                    ctx.spec.action_bounds.clone(),
                    seed::derive(ctx.seed, "random-actions", k as u64),
                );
                out.trajectories
                    .push(ctx.target.collect(&mut c, len, ctx.collection_seed(k), strategy, k)?);
            }
            Ok(out)
        }
        CollectionStrategy::PriorPolicy => {
            let policy = prior_policy.ok_or_else(|| fail("needs the prior-trained policy".into()))?;
            let digest = policy.digest();
            let mut out = Dataset::default();
            for k in 1..=iterations {
                let mut traj = ctx
                    .target
                    .collect(&mut policy.runner(), len, ctx.collection_seed(k), strategy, k)?;
                traj.meta.policy = Some(digest.clone());
                out.trajectories.push(traj);
            }
            Ok(out)
        }
    }
}
