//! Cross-entropy method over policy weights under domain randomization.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Architecture, Net, Policy};
use crate::dist::DomainDistribution;
use crate::envs::{episode_return, EnvironmentSpec, SourceModel};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub population: usize,
    pub elites: usize,
    pub episodes_per_candidate: usize,
    pub max_generations: usize,
    /// Undiscounted elite-mean return at which training stops.
    pub reward_threshold: f64,
    pub seed: u64,
    /// Initial per-weight standard deviation of the search distribution.
    pub init_std: f64,
    /// Extra exploration noise added to the refitted standard deviation,
    /// multiplied by `extra_std_decay` every generation.
    pub extra_std: f64,
    pub extra_std_decay: f64,
}

impl TrainerConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(format!(
                "need 0 < elites <= population, got {} and {}",
                self.elites, self.population
            ));
        }
        if self.episodes_per_candidate == 0 || self.max_generations == 0 {
            return Err("episodes_per_candidate and max_generations must be positive".into());
        }
        if !(self.init_std > 0.0) || !(self.extra_std >= 0.0) || !(self.extra_std_decay > 0.0) {
            return Err("trainer noise settings must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best discounted fitness seen so far.
    pub best_fitness: f64,
    pub elite_return: f64,
    /// Spread of per-context returns of the distribution mean.
    pub context_spread: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub policy: Policy,
    /// Undiscounted training return of the returned policy.
    pub train_return: f64,
    pub success: bool,
    pub generations: usize,
    pub episodes: usize,
    /// Fraction of sampled dynamics that had to be clamped into [0, 4].
    pub clamp_rate: f64,
    pub history: Vec<GenerationStats>,
}

struct Scored {
    fitness: f64,
    undiscounted: f64,
    per_context: Vec<f64>,
    all_diverged: bool,
}

/// Trains a policy maximizing the expected discounted return over dynamics
/// drawn from `dist` (normalized coordinates of `source`).
///
/// Each generation draws `episodes_per_candidate` dynamics/initial-state
/// pairs shared by the whole population, so candidates are ranked on common
/// random numbers. The first candidate of every generation is the current
/// distribution mean. Training stops once the elite mean undiscounted return
/// reaches the threshold; the top candidate of that generation is returned,
/// otherwise the best candidate ever seen.
pub fn train_policy(
    dist: &DomainDistribution,
    source: &SourceModel,
    spec: &EnvironmentSpec,
    arch: &Architecture,
    config: &TrainerConfig,
) -> Result<TrainingReport> {
    config.validate().map_err(Error::Training)?;
    dist.validate().map_err(Error::Optim)?;
    if dist.dims() != source.dims() {
        return Err(Error::Training(format!(
            "distribution has {} dims but the source model infers {}",
            dist.dims(),
            source.dims()
        )));
    }
    let n_w = arch.n_weights(spec.obs_dim(), spec.action_dim());
    let mut mu = vec![0.0; n_w];
    let mut sd = vec![config.init_std; n_w];
    let k = config.episodes_per_candidate;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut clamped = 0usize;
    let mut drawn = 0usize;
    let mut episodes = 0usize;
    let mut outcome = None;

    for generation in 0..config.max_generations {
        let mut rng = seed::rng(config.seed, "cem", generation as u64);
        let mut contexts = Vec::with_capacity(k);
        for _ in 0..k {
            let (z, was_clamped) = dist.sample_counted(&mut rng, true);
            clamped += usize::from(was_clamped);
            drawn += 1;
            let xi = source.to_physical(&z).values;
            let q0 = spec.reset(&mut rng).q;
            contexts.push((xi, q0));
        }
        let candidates: Vec<Vec<f64>> = (0..config.population)
            .map(|i| {
                if i == 0 {
                    mu.clone()
                } else {
                    mu.iter()
                        .zip(&sd)
                        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                }
            })
            .collect();

        let scored: Vec<Scored> = candidates
            .par_iter()
            .map(|w| {
                let mut net = Net::new(arch, spec.obs_dim(), &spec.action_bounds, w);
                let mut obs = vec![0.0; spec.obs_dim()];
                let mut act = vec![0.0; spec.action_dim()];
                let mut fit = 0.0;
                let mut und = 0.0;
                let mut per_context = Vec::with_capacity(k);
                let mut diverged = 0;
                for (xi, q0) in &contexts {
                    let r = episode_return(spec, &mut net, xi, q0, config.gamma, &mut obs, &mut act, None);
                    fit += r.discounted;
                    und += r.undiscounted;
                    per_context.push(r.discounted);
                    diverged += usize::from(r.diverged);
                }
                Scored {
                    fitness: fit / k as f64,
                    undiscounted: und / k as f64,
                    per_context,
                    all_diverged: diverged == k,
                }
            })
            .collect();
        episodes += config.population * k;

        if scored.iter().all(|s| s.all_diverged) {
            return Err(Error::Training(format!(
                "every candidate diverged in generation {generation} on {}",
                spec.name()
            )));
        }

        let mut order: Vec<usize> = (0..config.population).collect();
        order.sort_by(|&a, &b| scored[b].fitness.total_cmp(&scored[a].fitness));
        let elites = &order[..config.elites];
        let top = order[0];
        if best.as_ref().is_none_or(|(f, _, _)| scored[top].fitness > *f) {
            best = Some((scored[top].fitness, candidates[top].clone(), scored[top].undiscounted));
        }
        let elite_return = elites.iter().map(|&i| scored[i].undiscounted).sum::<f64>() / elites.len() as f64;
        let mean_ctx = &scored[0].per_context;
        let ctx_mean = mean_ctx.iter().sum::<f64>() / k as f64;
        let context_spread = (mean_ctx.iter().map(|v| (v - ctx_mean).powi(2)).sum::<f64>() / k as f64).sqrt();
        history.push(GenerationStats {
            generation,
            best_fitness: best.as_ref().map(|b| b.0).unwrap_or(f64::NEG_INFINITY),
            elite_return,
            context_spread,
        });
        log::debug!(
            "{} gen {generation}: elite return {elite_return:.2}, best fitness {:.2}",
            spec.name(),
            history.last().unwrap().best_fitness
        );

        if elite_return >= config.reward_threshold {
            outcome = Some((candidates[top].clone(), scored[top].undiscounted, true));
            break;
        }

        let extra = config.extra_std * config.extra_std_decay.powi(generation as i32);
        for j in 0..n_w {
            let m = elites.iter().map(|&i| candidates[i][j]).sum::<f64>() / elites.len() as f64;
            let v = elites.iter().map(|&i| (candidates[i][j] - m).powi(2)).sum::<f64>() / elites.len() as f64;
            mu[j] = m;
            sd[j] = (v + extra * extra).sqrt();
        }
    }

    let (weights, train_return, success) = match outcome {
        Some(o) => o,
        None => {
            let (_, w, r) = best.expect("at least one generation ran");
            (w, r, false)
        }
    };
    Ok(TrainingReport {
        policy: Policy::new(arch.clone(), spec.obs_dim(), spec.action_bounds.clone(), weights)?,
        train_return,
        success,
        generations: history.len(),
        episodes,
        clamp_rate: clamped as f64 / drawn.max(1) as f64,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BenchmarkConfig;
    use crate::dist::prior;
    use crate::envs::EnvKind;

    fn setup(kind: EnvKind) -> (EnvironmentSpec, SourceModel, TrainerConfig) {
        let c = BenchmarkConfig::default();
        let spec = c.env_spec(kind).unwrap();
        let source = spec.full_source();
        let (mut t, _) = c.trainer_for(kind, 11).unwrap();
        t.population = 8;
        t.elites = 2;
        t.episodes_per_candidate = 3;
        t.max_generations = 3;
        (spec, source, t)
    }

    #[test]
    fn episode_accounting() {
        let (spec, source, t) = setup(EnvKind::Pendulum);
        let r = train_policy(&prior(3), &source, &spec, &Architecture::Linear, &t).unwrap();
        assert_eq!(r.episodes, 8 * 3 * r.generations);
        assert_eq!(r.generations, 3);
        assert!(!r.success);
    }

    #[test]
    fn same_seed_same_weights() {
        let (spec, source, t) = setup(EnvKind::Cartpole);
        let arch = Architecture::Mlp { hidden: vec![8] };
        let a = train_policy(&prior(5), &source, &spec, &arch, &t).unwrap();
        let b = train_policy(&prior(5), &source, &spec, &arch, &t).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.train_return, b.train_return);
    }

    #[test]
    fn best_fitness_is_monotone() {
        let (spec, source, mut t) = setup(EnvKind::Acrobot);
        t.max_generations = 6;
        let r = train_policy(&prior(6), &source, &spec, &Architecture::Linear, &t).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness);
        }
    }

    #[test]
    fn point_mass_gives_zero_fitness_variance_across_draws() {
        let (spec, source, _) = setup(EnvKind::Cartpole);
        let point = DomainDistribution::point(source.project(&spec.ground_truth));
        let w: Vec<f64> = (0..6).map(|i| 0.4 * (i as f64).sin()).collect();
        let arch = Architecture::Linear;
        let q0 = spec.reset(&mut seed::rng(0, "q0", 0)).q;
        let returns = |d: &DomainDistribution| -> Vec<f64> {
            let mut rng = seed::rng(2, "draws", 0);
            (0..8)
                .map(|_| {
                    let xi = source.to_physical(&d.sample(&mut rng, true)).values;
                    let mut net = Net::new(&arch, 5, &spec.action_bounds, &w);
                    let (mut o, mut a) = (vec![0.0; 5], vec![0.0; 1]);
                    episode_return(&spec, &mut net, &xi, &q0, 0.99, &mut o, &mut a, None).discounted
                })
                .collect()
        };
        let at_point = returns(&point);
        assert!(at_point.iter().all(|r| *r == at_point[0]));
        let spread = returns(&prior(5));
        assert!(spread.iter().any(|r| *r != spread[0]));
    }

    #[test]
    fn reaching_the_threshold_stops_early() {
        let (mut spec, source, mut t) = setup(EnvKind::Cartpole);
        spec.reward_threshold = -1.0;
        t.reward_threshold = -1.0;
        t.max_generations = 50;
        let r = train_policy(&prior(5), &source, &spec, &Architecture::Linear, &t).unwrap();
        assert!(r.success);
        assert_eq!(r.generations, 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (spec, source, t) = setup(EnvKind::Pendulum);
        assert!(train_policy(&prior(2), &source, &spec, &Architecture::Linear, &t).is_err());
    }
}
