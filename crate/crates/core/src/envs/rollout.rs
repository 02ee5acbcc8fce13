use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DynamicsVector, EnvironmentSpec};
use crate::error::EnvError;
use crate::seed;
use crate::trajectory::{Trajectory, TrajectoryMeta, Transition};

/// Anything that maps an observation to an action.
pub trait Controller {
    fn act(&mut self, obs: &[f64], action: &mut [f64]);
}

/// Always outputs zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&mut self, _obs: &[f64], action: &mut [f64]) {
        action.fill(0.0);
    }
}

/// Uniformly random actions within the bounds.
#[derive(Debug, Clone)]
pub struct RandomController {
    rng: ChaCha8Rng,
    bounds: Vec<[f64; 2]>,
}

impl RandomController {
    pub fn new(bounds: Vec<[f64; 2]>, seed: u64) -> Self {
        RandomController {
            rng: seed::rng(seed, "random-actions", 0),
            bounds,
        }
    }
}

impl Controller for RandomController {
    fn act(&mut self, _obs: &[f64], action: &mut [f64]) {
        for (a, [lo, hi]) in action.iter_mut().zip(&self.bounds) {
            *a = self.rng.random_range(*lo..*hi);
        }
    }
}

/// Adapts a closure.
pub struct FnController<F>(pub F);

impl<F: FnMut(&[f64], &mut [f64])> Controller for FnController<F> {
    fn act(&mut self, obs: &[f64], action: &mut [f64]) {
        (self.0)(obs, action)
    }
}

/// A closed-loop episode together with the noiseless latent states.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// True latent states s_0..s_L; never part of a dataset.
    pub latent: Vec<Vec<f64>>,
}

/// Runs one closed-loop episode from `reset(seed)`.
///
/// Zero-mean Gaussian noise of the given variance is added to every
/// recorded state; the policy acts on the observation of the noisy state
/// while the simulator keeps evolving the true one. Non-finite dynamics
/// truncate the trajectory and flag it as diverged.
pub fn rollout<C: Controller + ?Sized>(
    spec: &EnvironmentSpec,
    controller: &mut C,
    xi: &DynamicsVector,
    max_steps: usize,
    seed: u64,
    noise_variance: f64,
) -> Result<Rollout, EnvError> {
    spec.check_xi(xi)?;
    if max_steps > spec.horizon {
        return Err(EnvError::InvalidSpec(format!(
            "max_steps {max_steps} exceeds horizon {}",
            spec.horizon
        )));
    }
    let mut reset_rng = seed::rng(seed, "reset", 0);
    let mut noise_rng = seed::rng(seed, "observation-noise", 0);
    let noise = Normal::new(0.0, noise_variance.sqrt())
        .map_err(|_| EnvError::InvalidSpec(format!("bad noise variance {noise_variance}")))?;
    let mut corrupt = |q: &[f64]| -> Vec<f64> {
        if noise_variance == 0.0 {
            q.to_vec()
        } else {
            q.iter().map(|v| v + noise.sample(&mut noise_rng)).collect()
        }
    };

    let mut state = spec.reset(&mut reset_rng);
    let mut latent = vec![state.q.clone()];
    let mut recorded = corrupt(&state.q);
    let mut obs = vec![0.0; spec.obs_dim()];
    let mut action = vec![0.0; spec.action_dim()];
    let mut transitions = Vec::with_capacity(max_steps);
    let mut diverged = false;

    for _ in 0..max_steps {
        spec.observe_into(&recorded, &mut obs);
        controller.act(&obs, &mut action);
        match spec.step_in_place(&mut state.q, &mut state.t, &mut action, &xi.values) {
            Ok((r, done)) => {
                let next = corrupt(&state.q);
                latent.push(state.q.clone());
                transitions.push(Transition {
                    s: std::mem::replace(&mut recorded, next.clone()),
                    a: action.clone(),
                    s_next: next,
                    r,
                    done,
                });
                if done {
                    break;
                }
            }
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }
    Ok(Rollout {
        trajectory: Trajectory {
            transitions,
            meta: TrajectoryMeta {
                strategy: None,
                iteration: 0,
                seed,
                noise_variance,
                policy: None,
            },
            diverged,
        },
        latent,
    })
}

/// Returns of one noiseless episode from a given initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeReturn {
    pub discounted: f64,
    pub undiscounted: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Optional observation noise for [`episode_return`]: standard deviation and
/// the stream the perturbations are drawn from.
pub(crate) type ObsNoise<'a> = Option<(f64, &'a mut ChaCha8Rng)>;

/// Runs a full-horizon episode without recording anything.
///
/// For cost-style environments an episode that ends early (failure box or
/// divergence) is charged its last per-step reward for every remaining step,
/// so terminating is never cheaper than staying alive. With `noise` the
/// controller sees observations of perturbed states.
#[allow(clippy::too_many_arguments)]
pub(crate) fn episode_return<C: Controller + ?Sized>(
    spec: &EnvironmentSpec,
    controller: &mut C,
    xi: &[f64],
    q0: &[f64],
    gamma: f64,
    obs: &mut [f64],
    action: &mut [f64],
    mut noise: ObsNoise<'_>,
) -> EpisodeReturn {
    let mut q = q0.to_vec();
    let mut seen = q.clone();
    let mut t = 0usize;
    let mut disc = 0.0;
    let mut undisc = 0.0;
    let mut g = 1.0;
    let mut last_r = 0.0;
    let mut early = false;
    let mut diverged = false;
    while t < spec.horizon {
        match noise.as_mut() {
            Some((sd, rng)) => {
                for (s, v) in seen.iter_mut().zip(&q) {
                    *s = v + *sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                spec.observe_into(&seen, obs);
            }
            None => spec.observe_into(&q, obs),
        }
        controller.act(obs, action);
        match spec.step_in_place(&mut q, &mut t, action, xi) {
            Ok((r, done)) => {
                disc += g * r;
                undisc += r;
                g *= gamma;
                last_r = r;
                if done {
                    early = t < spec.horizon;
                    break;
                }
            }
            Err(_) => {
                early = true;
                diverged = true;
                break;
            }
        }
    }
    let steps = t;
    if early && spec.kind.negative_scale() {
        let penalty = if last_r.is_finite() { last_r.min(0.0) } else { 0.0 };
        let remaining = spec.horizon - t;
        undisc += penalty * remaining as f64;
        // Σ_{k=t}^{T-1} γ^k
        disc += penalty * g * geometric_sum(gamma, remaining);
    }
    EpisodeReturn {
        discounted: disc,
        undiscounted: undisc,
        steps,
        diverged,
    }
}

fn geometric_sum(gamma: f64, n: usize) -> f64 {
    if (gamma - 1.0).abs() < 1e-15 {
        n as f64
    } else {
        (1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BenchmarkConfig;
    use crate::envs::EnvKind;

    fn spec(kind: EnvKind) -> EnvironmentSpec {
        BenchmarkConfig::default().env_spec(kind).unwrap()
    }

    #[test]
    fn rollout_respects_max_steps() {
        let s = spec(EnvKind::Pendulum);
        let mut c = RandomController::new(s.action_bounds.clone(), 1);
        let r = rollout(&s, &mut c, &s.ground_truth, 200, 4, 0.0).unwrap();
        assert!(r.trajectory.len() <= 200);
        assert_eq!(r.latent.len(), r.trajectory.len() + 1);
    }

    #[test]
    fn noiseless_rollout_records_true_states() {
        let s = spec(EnvKind::Cartpole);
        let mut c = RandomController::new(s.action_bounds.clone(), 2);
        let r = rollout(&s, &mut c, &s.ground_truth, 150, 4, 0.0).unwrap();
        for (tr, q) in r.trajectory.transitions.iter().zip(&r.latent) {
            assert_eq!(&tr.s, q);
        }
        assert_eq!(&r.trajectory.transitions.last().unwrap().s_next, r.latent.last().unwrap());
    }

    #[test]
    fn noise_leaves_latent_dynamics_untouched() {
        // Open-loop actions make the latent path independent of the noise.
        let s = spec(EnvKind::Pendulum);
        let mut a = RandomController::new(s.action_bounds.clone(), 8);
        let mut b = RandomController::new(s.action_bounds.clone(), 8);
        let clean = rollout(&s, &mut a, &s.ground_truth, 200, 4, 0.0).unwrap();
        let noisy = rollout(&s, &mut b, &s.ground_truth, 200, 4, 1e-3).unwrap();
        assert_eq!(clean.latent, noisy.latent);
        assert_ne!(clean.trajectory, noisy.trajectory);
    }

    #[test]
    fn rollout_beyond_horizon_is_rejected() {
        let s = spec(EnvKind::Pendulum);
        assert!(rollout(&s, &mut ZeroController, &s.ground_truth, s.horizon + 1, 0, 0.0).is_err());
    }

    #[test]
    fn diverging_dynamics_truncate_and_flag() {
        let s = spec(EnvKind::Pendulum);
        let xi = DynamicsVector::new(vec![1e-300, 1e-300, 0.0]);
        let mut c = FnController(|_: &[f64], a: &mut [f64]| a[0] = 2.0);
        let r = rollout(&s, &mut c, &xi, 200, 0, 0.0).unwrap();
        assert!(r.trajectory.diverged);
        assert!(r.trajectory.len() < 200);
    }

    #[test]
    fn early_failure_is_charged_for_cost_style_envs() {
        let s = spec(EnvKind::Pendulum);
        // A tiny, light pendulum spins up past the velocity limit quickly.
        let xi = [0.3, 0.3, 0.0];
        let mut c = FnController(|_: &[f64], a: &mut [f64]| a[0] = 2.0);
        let (mut obs, mut act) = (vec![0.0; 3], vec![0.0; 1]);
        let r = episode_return(&s, &mut c, &xi, &[std::f64::consts::PI, 0.0], 1.0, &mut obs, &mut act, None);
        assert!(r.steps < s.horizon);
        assert!((r.discounted - r.undiscounted).abs() < 1e-6 * r.undiscounted.abs());
        // The last step before the velocity limit already costs > 100.
        assert!(r.undiscounted < -100.0 * (s.horizon - r.steps) as f64);
    }
}
