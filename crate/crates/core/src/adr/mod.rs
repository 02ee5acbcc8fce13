//! Inference methods.
//!
//! Online methods (SimOpt, BayRn) interact with the target through
//! [`TargetDomain`]; offline methods (DROID, DROPO) only ever see a
//! [`Dataset`]. UDR is the non-adaptive baseline.

mod bayrn;
mod collect;
mod droid;
mod dropo;
mod simopt;
mod udr;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use bayrn::{run_bayrn, BAYRN_MAX_DIMS};
pub use collect::collect_offline_dataset;
pub use droid::{droid_cost, run_droid};
pub use dropo::{dropo_loglike, run_dropo, DropoProblem};
pub use simopt::{run_simopt, run_simopt1, simopt_discrepancy, DiscrepancyWeights};
pub use udr::{run_udr, sample_uniform_bounds};

use crate::config::{BenchmarkConfig, Method, MethodsConfig, ProtocolConfig, Setting};
use crate::dist::{prior, DomainDistribution};
use crate::envs::{rollout, Controller, DynamicsVector, EnvKind, EnvironmentSpec, SourceModel};
use crate::error::{Error, Result};
use crate::policy::{evaluate_policy, train_policy, Architecture, Policy, TrainerConfig, TrainingReport};
use crate::seed;
use crate::trajectory::{CollectionStrategy, Trajectory};

/// Default charge for a missing or diverged step, in units of the mean
/// cost of the completed ones.
pub const MISSING_STEP_FACTOR: f64 = 10.0;

/// The ground-truth system. Every interaction is counted.
#[derive(Debug)]
pub struct TargetDomain {
    spec: EnvironmentSpec,
    xi: DynamicsVector,
    noise_variance: f64,
    collections: AtomicUsize,
    transitions: AtomicUsize,
    evaluations: AtomicUsize,
}

/// Snapshot of the interaction counters of a [`TargetDomain`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCounters {
    /// Trajectories recorded for inference.
    pub collections: usize,
    pub transitions: usize,
    /// Evaluation episodes (BayRn objective and reporting).
    pub evaluation_episodes: usize,
}

impl TargetCounters {
    pub fn rollouts(&self) -> usize {
        self.collections + self.evaluation_episodes
    }
}

impl TargetDomain {
    pub fn new(spec: EnvironmentSpec, xi: DynamicsVector, noise_variance: f64) -> Result<Self> {
        spec.check_xi(&xi)?;
        if !(noise_variance >= 0.0) {
            return Err(Error::Config(format!("noise variance must be >= 0, got {noise_variance}")));
        }
        Ok(TargetDomain {
            spec,
            xi,
            noise_variance,
            collections: AtomicUsize::new(0),
            transitions: AtomicUsize::new(0),
            evaluations: AtomicUsize::new(0),
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn counters(&self) -> TargetCounters {
        TargetCounters {
            collections: self.collections.load(Ordering::SeqCst),
            transitions: self.transitions.load(Ordering::SeqCst),
            evaluation_episodes: self.evaluations.load(Ordering::SeqCst),
        }
    }

    /// Records one trajectory of at most `max_steps` transitions.
    pub fn collect<C: Controller + ?Sized>(
        &self,
        controller: &mut C,
        max_steps: usize,
        seed: u64,
        strategy: CollectionStrategy,
        iteration: usize,
    ) -> Result<Trajectory> {
        let mut traj = rollout(&self.spec, controller, &self.xi, max_steps, seed, self.noise_variance)?.trajectory;
        traj.meta.strategy = Some(strategy);
        traj.meta.iteration = iteration;
        self.collections.fetch_add(1, Ordering::SeqCst);
        self.transitions.fetch_add(traj.len(), Ordering::SeqCst);
        Ok(traj)
    }

    /// Mean undiscounted return over `episodes` full-horizon episodes.
    pub fn evaluate(&self, policy: &Policy, episodes: usize, seed: u64) -> Result<f64> {
        let r = evaluate_policy(policy, &self.spec, &self.xi, self.noise_variance, episodes, seed)?;
        self.evaluations.fetch_add(episodes, Ordering::SeqCst);
        Ok(r)
    }
}

/// Everything one benchmark cell (environment, setting, seed) needs.
#[derive(Debug)]
pub struct AdrContext {
    pub spec: EnvironmentSpec,
    pub setting: Setting,
    pub source: SourceModel,
    pub target: TargetDomain,
    pub trainer: TrainerConfig,
    pub arch: Architecture,
    pub protocol: ProtocolConfig,
    pub methods: MethodsConfig,
    pub seed: u64,
}

impl AdrContext {
    pub fn new(config: &BenchmarkConfig, env: EnvKind, setting: Setting, seed: u64) -> Result<Self> {
        let spec = config.env_spec(env)?;
        let (trainer, arch) = config.trainer_for(env, seed)?;
        let (source, noise) = match setting {
            Setting::Vanilla => (spec.full_source(), 0.0),
            Setting::Noisy => (spec.full_source(), spec.noise_variance),
            Setting::Unmodeled => (spec.make_unmodeled()?.1, 0.0),
        };
        let target = TargetDomain::new(spec.clone(), spec.ground_truth.clone(), noise)?;
        Ok(AdrContext {
            spec,
            setting,
            source,
            target,
            trainer,
            arch,
            protocol: config.protocol.clone(),
            methods: config.methods.clone(),
            seed,
        })
    }

    /// Number of inferred dynamics dimensions.
    pub fn dims(&self) -> usize {
        self.source.dims()
    }

    pub fn prior(&self) -> DomainDistribution {
        prior(self.dims())
    }

    /// Trains a policy on `dist` with a seed derived from `(label, index)`.
    pub fn train(&self, dist: &DomainDistribution, label: &str, index: usize) -> Result<TrainingReport> {
        let mut cfg = self.trainer.clone();
        cfg.seed = seed::derive(self.seed, label, index as u64);
        let report = train_policy(dist, &self.source, &self.spec, &self.arch, &cfg)?;
        if !report.success {
            log::info!(
                "{} {label}[{index}]: threshold not reached after {} generations (train return {:.1})",
                self.spec.name(),
                report.generations,
                report.train_return
            );
        }
        Ok(report)
    }

    /// Reporting evaluation on the target; every method sees the same
    /// episodes at a given iteration.
    pub fn evaluate(&self, policy: &Policy, iteration: usize) -> Result<f64> {
        self.target
            .evaluate(policy, self.protocol.eval_episodes, seed::derive(self.seed, "eval", iteration as u64))
    }

    /// Collection seed of the `iteration`-th target trajectory. Shared by
    /// every strategy so that the initial states line up.
    pub(crate) fn collection_seed(&self, iteration: usize) -> u64 {
        seed::derive(self.seed, "target-trajectory", iteration as u64)
    }
}

/// One point of an inference curve.
#[derive(Debug, Clone)]
pub struct IterationResult {
    pub iteration: usize,
    pub distribution: DomainDistribution,
    pub policy: Policy,
    pub train_return: f64,
    pub train_success: bool,
    /// Budgeted target transitions consumed up to this iteration.
    pub transitions_used: usize,
    /// Raw target return when the method itself selected on it (BayRn).
    pub target_return: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// One UDR policy.
#[derive(Debug, Clone)]
pub struct MemberResult {
    pub index: usize,
    pub distribution: DomainDistribution,
    pub policy: Policy,
    pub train_return: f64,
    pub train_success: bool,
    pub target_return: f64,
}

#[derive(Debug, Clone)]
pub struct AdrOutcome {
    pub method: Method,
    pub iterations: Vec<IterationResult>,
    pub members: Vec<MemberResult>,
    /// Free-form per-step log, written to `traces/`.
    pub trace: Vec<serde_json::Value>,
}

impl AdrOutcome {
    fn new(method: Method) -> Self {
        AdrOutcome {
            method,
            iterations: Vec::new(),
            members: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&IterationResult> {
        self.iterations.last()
    }
}

/// Total cost of a sequence of per-step costs of which the last `missing`
/// never happened: each missing step is charged `factor` times the mean
/// completed cost, or `factor * fallback` when nothing usable completed.
/// The result is always finite.
pub(crate) fn penalized_total(completed: &[f64], missing: usize, factor: f64, fallback: f64) -> f64 {
    let finite = completed.iter().all(|c| c.is_finite());
    let sum: f64 = if finite { completed.iter().sum() } else { f64::MAX };
    let total = if missing == 0 {
        sum
    } else {
        let mean = if completed.is_empty() || !finite { 0.0 } else { sum / completed.len() as f64 };
        let per_step = factor * if mean > 0.0 { mean } else { fallback };
        sum + per_step * missing as f64
    };
    if total.is_finite() {
        total
    } else {
        f64::MAX
    }
}

fn dist_diagnostics(dist: &DomainDistribution, source: &SourceModel, spec: &EnvironmentSpec) -> BTreeMap<String, f64> {
    let mut d = BTreeMap::new();
    let truth = source.project(&spec.ground_truth);
    let mean = dist.mean();
    let err = mean.iter().zip(&truth).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
    d.insert("max_mean_error".into(), err);
    d.insert("variance_trace".into(), dist.variance().iter().sum());
    d
}
