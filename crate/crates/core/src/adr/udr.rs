use rand::Rng;
use rayon::prelude::*;

use super::{AdrContext, AdrOutcome, MemberResult};
use crate::config::Method;
use crate::dist::DomainDistribution;
use crate::error::{Error, Result};
use crate::seed;

/// Random uniform bounds in the normalized space, `lo <= hi` per dimension.
pub fn sample_uniform_bounds<R: Rng + ?Sized>(rng: &mut R, dims: usize) -> DomainDistribution {
    let (mut lo, mut hi) = (Vec::with_capacity(dims), Vec::with_capacity(dims));
    for _ in 0..dims {
        let a = rng.random_range(0.0..=4.0);
        let b = rng.random_range(0.0..=4.0);
        lo.push(f64::min(a, b));
        hi.push(f64::max(a, b));
    }
    DomainDistribution::Uniform { lo, hi }
}

/// Trains one policy per random set of uniform bounds and evaluates each on
/// the target. Consumes no budgeted target transitions.
pub fn run_udr(ctx: &AdrContext, n_configs: usize) -> Result<AdrOutcome> {
    if n_configs == 0 {
        return Err(Error::Method {
            method: "udr".into(),
            reason: "n_configs must be at least 1".into(),
        });
    }
    let mut rng = seed::rng(ctx.seed, "udr-bounds", 0);
    let dists: Vec<_> = (0..n_configs).map(|_| sample_uniform_bounds(&mut rng, ctx.dims())).collect();
    let members = dists
        .into_par_iter()
        .enumerate()
        .map(|(i, dist)| {
            let report = ctx.train(&dist, "train-udr", i)?;
            let target_return = ctx.target.evaluate(
                &report.policy,
                ctx.protocol.eval_episodes,
                seed::derive(ctx.seed, "udr-eval", i as u64),
            )?;
            Ok(MemberResult {
                index: i,
                distribution: dist,
                policy: report.policy,
                train_return: report.train_return,
                train_success: report.success,
                target_return,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = AdrOutcome::new(Method::Udr);
    for m in &members {
        out.trace.push(serde_json::json!({
            "member": m.index,
            "distribution": m.distribution,
            "train_return": m.train_return,
            "target_return": m.target_return,
        }));
    }
    out.members = members;
    Ok(out)
}
