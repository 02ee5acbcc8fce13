use super::{dist_diagnostics, AdrContext, AdrOutcome, IterationResult};
use crate::config::Method;
use crate::dist::DomainDistribution;
use crate::error::{Error, Result};
use crate::harness::normalize_for;
use crate::optim::{bo_suggest, gp_fit, GpHyper};
use crate::policy::Policy;
use crate::seed;

/// BayRn refuses problems with this many inferred parameters or more: the
/// GP over `2n` bound coordinates stops being practical.
pub const BAYRN_MAX_DIMS: usize = 8;

struct Observation {
    x: Vec<f64>,
    y: f64,
    raw: f64,
    dist: DomainDistribution,
    policy: Policy,
    train_return: f64,
    success: bool,
}

fn bounds_vector(dist: &DomainDistribution) -> Result<Vec<f64>> {
    match dist {
        DomainDistribution::Uniform { lo, hi } => Ok(lo.iter().chain(hi).copied().collect()),
        DomainDistribution::Gaussian { .. } => Err(Error::Method {
            method: "bayrn".into(),
            reason: "initial observations must be uniform bounds".into(),
        }),
    }
}

fn bounds_dist(x: &[f64]) -> DomainDistribution {
    let n = x.len() / 2;
    let (lo, hi) = (0..n).map(|i| (x[i].min(x[n + i]), x[i].max(x[n + i]))).unzip();
    DomainDistribution::Uniform { lo, hi }
}

/// Bayesian optimization of uniform bounds on the target return, with the
/// UDR policies as initial design. Every iteration trains a policy on the
/// expected-improvement maximizer and evaluates it on the target, which is
/// charged as one trajectory of budget. Each reported point is the best
/// observation so far.
pub fn run_bayrn(ctx: &AdrContext, udr: &AdrOutcome, iterations: usize) -> Result<AdrOutcome> {
    let n = ctx.dims();
    if n >= BAYRN_MAX_DIMS {
        return Err(Error::Method {
            method: "bayrn".into(),
            reason: format!("{n} parameters: GP optimization over {} bounds does not scale", 2 * n),
        });
    }
    if udr.members.is_empty() {
        return Err(Error::Method {
            method: "bayrn".into(),
            reason: "needs the UDR results as initial observations".into(),
        });
    }
    let cfg = &ctx.methods.bayrn;
    let mut obs: Vec<Observation> = Vec::new();
    for m in &udr.members {
        obs.push(Observation {
            x: bounds_vector(&m.distribution)?,
            y: normalize_for(&ctx.spec, m.target_return)?,
            raw: m.target_return,
            dist: m.distribution.clone(),
            policy: m.policy.clone(),
            train_return: m.train_return,
            success: m.train_success,
        });
    }
    let space = vec![[0.0, 4.0]; 2 * n];
    let mut out = AdrOutcome::new(Method::Bayrn);
    for k in 1..=iterations {
        let xs: Vec<Vec<f64>> = obs.iter().map(|o| o.x.clone()).collect();
        let ys: Vec<f64> = obs.iter().map(|o| o.y).collect();
        let hyper = GpHyper::from_data(2 * n, &ys, cfg.length_scale, cfg.noise_ratio);
        let model = gp_fit(&xs, &ys, hyper)?;
        let mut rng = seed::rng(ctx.seed, "bayrn-bo", k as u64);
        let dist = bounds_dist(&bo_suggest(&model, &space, cfg.starts, &mut rng));
        let report = ctx.train(&dist, "train-bayrn", k)?;
        let raw = ctx.target.evaluate(
            &report.policy,
            cfg.eval_episodes,
            seed::derive(ctx.seed, "bayrn-eval", k as u64),
        )?;
        let y = normalize_for(&ctx.spec, raw)?;
        out.trace.push(serde_json::json!({
            "iteration": k,
            "suggested": dist,
            "normalized_return": y,
            "observations": obs.len() + 1,
            "gp_jitter": model.jitter,
        }));
        obs.push(Observation {
            x: bounds_vector(&dist)?,
            y,
            raw,
            dist,
            policy: report.policy,
            train_return: report.train_return,
            success: report.success,
        });
        let best = obs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.y.total_cmp(&b.1.y).then(b.0.cmp(&a.0)))
            .map(|(_, o)| o)
            .expect("non-empty");
        let mut diagnostics = dist_diagnostics(&best.dist, &ctx.source, &ctx.spec);
        diagnostics.insert("gp_observations".into(), obs.len() as f64);
        diagnostics.insert("suggestion_return".into(), y);
        out.iterations.push(IterationResult {
            iteration: k,
            distribution: best.dist.clone(),
            policy: best.policy.clone(),
            train_return: best.train_return,
            train_success: best.success,
            transitions_used: k * ctx.protocol.trajectory_len,
            target_return: Some(best.raw),
            diagnostics,
        });
    }
    Ok(out)
}
