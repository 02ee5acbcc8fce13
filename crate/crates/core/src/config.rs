//! Benchmark configuration.
//!
//! The configuration is a TOML document. The shipped default lives in
//! `config/default.toml` and is compiled into the library, so every run can
//! snapshot the fully resolved configuration it used. Schema:
//!
//! | table | key | meaning |
//! |---|---|---|
//! | `[protocol]` | `environments`, `settings`, `methods` | grid axes |
//! | | `iterations`, `trajectory_len`, `budget` | per-cell target-data limits |
//! | | `seeds`, `eval_episodes`, `collection_strategy` | seeds, evaluation episodes per record, offline data source |
//! | `[trainer]` | `gamma`, `population`, `elites`, `episodes_per_candidate`, `max_generations` | cross-entropy trainer |
//! | | `init_std`, `extra_std`, `extra_std_decay`, `architecture`, `hidden` | search and policy shape |
//! | `[methods.udr]` | `n_configs` | random uniform-bound configurations |
//! | `[methods.bayrn]` | `eval_episodes`, `length_scale`, `noise_ratio`, `starts` | BO objective and surrogate |
//! | `[methods.simopt]` | `kl_bound`, `samples_per_update`, `updates_per_iteration`, `single_iteration_updates`, `l1_weight`, `l2_weight`, `missing_step_factor` | REPS loop and discrepancy |
//! | `[methods.droid]` | `cma_budget`, `sigma0` | replay regression |
//! | `[methods.dropo]` | `epsilon_grid`, `samples_factor`, `cma_budget`, `sigma0`, `holdout_fraction` | likelihood fit |
//! | `[envs.<name>]` | `dt`, `substeps`, `horizon`, `action_bounds`, `ground_truth`, `search_factors`, `unmodeled`, `noise_variance`, `reward_threshold`, `worst_return`, `trainer` | environment instance |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{DynamicsVector, EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::optim::reps::RepsConfig;
use crate::policy::{Architecture, TrainerConfig};
use crate::trajectory::CollectionStrategy;

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");

/// Target-domain condition of a benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Vanilla,
    Noisy,
    Unmodeled,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Vanilla, Setting::Noisy, Setting::Unmodeled];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Vanilla => "vanilla",
            Setting::Noisy => "noisy",
            Setting::Unmodeled => "unmodeled",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            crate::suggest::unknown("setting", s, &names)
        })
    }
}

/// Inference methods benchmarked by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Udr,
    Bayrn,
    Simopt,
    Simopt1,
    Droid,
    Dropo,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Udr,
        Method::Bayrn,
        Method::Simopt,
        Method::Simopt1,
        Method::Droid,
        Method::Dropo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Udr => "udr",
            Method::Bayrn => "bayrn",
            Method::Simopt => "simopt",
            Method::Simopt1 => "simopt1",
            Method::Droid => "droid",
            Method::Dropo => "dropo",
        }
    }

    pub fn is_offline(self) -> bool {
        matches!(self, Method::Droid | Method::Dropo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            crate::suggest::unknown("method", s, &names)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub environments: Vec<EnvKind>,
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    pub iterations: usize,
    pub trajectory_len: usize,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub collection_strategy: CollectionStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub gamma: f64,
    pub population: usize,
    pub elites: usize,
    pub episodes_per_candidate: usize,
    pub max_generations: usize,
    pub init_std: f64,
    pub extra_std: f64,
    pub extra_std_decay: f64,
    pub architecture: String,
    pub hidden: Vec<usize>,
}

/// Per-environment overrides of [`TrainerSection`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerOverrides {
    pub population: Option<usize>,
    pub elites: Option<usize>,
    pub episodes_per_candidate: Option<usize>,
    pub max_generations: Option<usize>,
    pub init_std: Option<f64>,
    pub architecture: Option<String>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UdrConfig {
    pub n_configs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayrnConfig {
    pub eval_episodes: usize,
    pub length_scale: f64,
    pub noise_ratio: f64,
    pub starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimoptConfig {
    pub kl_bound: f64,
    pub samples_per_update: usize,
    pub updates_per_iteration: usize,
    pub single_iteration_updates: usize,
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub missing_step_factor: f64,
}

impl SimoptConfig {
    pub fn reps(&self) -> RepsConfig {
        RepsConfig {
            kl_bound: self.kl_bound,
            samples_per_update: self.samples_per_update,
            updates_per_iteration: self.updates_per_iteration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroidConfig {
    pub cma_budget: usize,
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoConfig {
    pub epsilon_grid: Vec<f64>,
    pub samples_factor: usize,
    pub cma_budget: usize,
    pub sigma0: f64,
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodsConfig {
    pub udr: UdrConfig,
    pub bayrn: BayrnConfig,
    pub simopt: SimoptConfig,
    pub droid: DroidConfig,
    pub dropo: DropoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub action_bounds: Vec<[f64; 2]>,
    pub ground_truth: Vec<f64>,
    /// Search space per parameter as multiples of its ground truth.
    pub search_factors: [f64; 2],
    pub unmodeled: Vec<usize>,
    pub noise_variance: f64,
    pub reward_threshold: f64,
    pub worst_return: Option<f64>,
    #[serde(default)]
    pub trainer: TrainerOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub protocol: ProtocolConfig,
    pub trainer: TrainerSection,
    pub methods: MethodsConfig,
    pub envs: BTreeMap<EnvKind, EnvConfig>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig::from_toml(DEFAULT_CONFIG).expect("shipped default config is valid")
    }
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BenchmarkConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short stable hash of the resolved configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.protocol;
        if p.seeds.is_empty() {
            return bad("protocol.seeds must be non-empty".into());
        }
        if p.iterations == 0 || p.trajectory_len == 0 {
            return bad("protocol.iterations and trajectory_len must be positive".into());
        }
        if p.iterations * p.trajectory_len > p.budget {
            return bad(format!(
                "iterations x trajectory_len = {} exceeds the {}-transition budget",
                p.iterations * p.trajectory_len,
                p.budget
            ));
        }
        if p.eval_episodes == 0 {
            return bad("protocol.eval_episodes must be positive".into());
        }
        let t = &self.trainer;
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return bad("trainer.gamma must lie in (0, 1]".into());
        }
        if t.elites == 0 || t.elites > t.population {
            return bad("trainer.elites must satisfy 0 < elites <= population".into());
        }
        Architecture::parse(&t.architecture, &t.hidden).map_err(Error::Config)?;
        let s = &self.methods.simopt;
        if !(s.kl_bound > 0.0) || s.samples_per_update == 0 || s.updates_per_iteration == 0 {
            return bad("methods.simopt parameters must be positive".into());
        }
        if self.methods.dropo.epsilon_grid.is_empty()
            || self.methods.dropo.epsilon_grid.iter().any(|e| !(*e > 0.0))
        {
            return bad("methods.dropo.epsilon_grid must be non-empty and positive".into());
        }
        if self.methods.dropo.samples_factor == 0 {
            return bad("methods.dropo.samples_factor must be positive".into());
        }
        if self.methods.udr.n_configs == 0 {
            return bad("methods.udr.n_configs must be positive".into());
        }
        for kind in &p.environments {
            let spec = self.env_spec(*kind)?;
            if p.trajectory_len > spec.horizon {
                return bad(format!("{kind}: trajectory_len exceeds horizon"));
            }
        }
        Ok(())
    }

    pub fn env_config(&self, kind: EnvKind) -> Result<&EnvConfig> {
        self.envs
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("no [envs.{kind}] section")))
    }

    /// Instantiates the environment spec for `kind`.
    pub fn env_spec(&self, kind: EnvKind) -> Result<EnvironmentSpec> {
        let c = self.env_config(kind)?;
        let [flo, fhi] = c.search_factors;
        let spec = EnvironmentSpec {
            kind,
            dt: c.dt,
            substeps: c.substeps,
            horizon: c.horizon,
            action_bounds: c.action_bounds.clone(),
            ground_truth: DynamicsVector::new(c.ground_truth.clone()),
            search_space: c.ground_truth.iter().map(|g| [flo * g, fhi * g]).collect(),
            unmodeled_indices: c.unmodeled.clone(),
            noise_variance: c.noise_variance,
            reward_threshold: c.reward_threshold,
            worst_return: c.worst_return,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Trainer settings for `kind`, with per-environment overrides applied.
    pub fn trainer_for(&self, kind: EnvKind, seed: u64) -> Result<(TrainerConfig, Architecture)> {
        let c = self.env_config(kind)?;
        let t = &self.trainer;
        let o = &c.trainer;
        let arch_name = o.architecture.as_deref().unwrap_or(&t.architecture);
        let hidden = o.hidden.as_ref().unwrap_or(&t.hidden);
        let arch = Architecture::parse(arch_name, hidden).map_err(Error::Config)?;
        let cfg = TrainerConfig {
            gamma: t.gamma,
            population: o.population.unwrap_or(t.population),
            elites: o.elites.unwrap_or(t.elites),
            episodes_per_candidate: o.episodes_per_candidate.unwrap_or(t.episodes_per_candidate),
            max_generations: o.max_generations.unwrap_or(t.max_generations),
            reward_threshold: c.reward_threshold,
            seed,
            init_std: o.init_std.unwrap_or(t.init_std),
            extra_std: t.extra_std,
            extra_std_decay: t.extra_std_decay,
        };
        cfg.validate().map_err(Error::Config)?;
        Ok((cfg, arch))
    }
}
