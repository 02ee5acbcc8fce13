//! Target-domain transitions, trajectories and cumulative datasets.
//!
//! Datasets persist as line-delimited JSON, one transition per line, so
//! offline inference runs can be replayed and shared across methods:
//!
//! ```text
//! {"iteration":1,"t":0,"s":[..],"a":[..],"s_next":[..],"r":-9.8,"done":false,
//!  "diverged":false,"strategy":"simopt-policy","seed":42,"noise_variance":0.0}
//! ```
//!
//! Recorded states are latent simulator states (with observation noise when
//! the setting injects it), which is what allows replays to reset the
//! simulator anywhere along a trajectory.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a target trajectory was collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectionStrategy {
    /// Trajectories logged by the online SimOpt run (one per iteration).
    SimoptPolicy,
    /// Uniformly random actions within the action bounds.
    Random,
    /// A policy trained once on the prior source distribution.
    PriorPolicy,
}

impl CollectionStrategy {
    pub const ALL: [CollectionStrategy; 3] = [
        CollectionStrategy::SimoptPolicy,
        CollectionStrategy::Random,
        CollectionStrategy::PriorPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CollectionStrategy::SimoptPolicy => "simopt-policy",
            CollectionStrategy::Random => "random",
            CollectionStrategy::PriorPolicy => "prior-policy",
        }
    }
}

impl fmt::Display for CollectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CollectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            crate::suggest::unknown("strategy", s, &names)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// `None` for simulated rollouts that never enter a dataset.
    pub strategy: Option<CollectionStrategy>,
    /// 1-based collection iteration.
    pub iteration: usize,
    pub seed: u64,
    pub noise_variance: f64,
    /// Digest of the policy that collected the trajectory, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub meta: TrajectoryMeta,
    /// The simulation produced non-finite values and was truncated.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn initial_state(&self) -> Option<&[f64]> {
        self.transitions.first().map(|tr| tr.s.as_slice())
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|tr| tr.r).sum()
    }
}

/// Ordered, cumulative collection of target trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TransitionRecord {
    iteration: usize,
    t: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    s_next: Vec<f64>,
    r: f64,
    done: bool,
    diverged: bool,
    strategy: Option<CollectionStrategy>,
    seed: u64,
    noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
}

/// Problems found by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// 1-based line number in the serialized form, when applicable.
    pub line: Option<usize>,
    pub message: String,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Dataset { trajectories }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// The first `k` trajectories.
    pub fn prefix(&self, k: usize) -> Dataset {
        Dataset::new(self.trajectories[..k.min(self.len())].to_vec())
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for traj in &self.trajectories {
            for (t, tr) in traj.transitions.iter().enumerate() {
                let rec = TransitionRecord {
                    iteration: traj.meta.iteration,
                    t,
                    s: tr.s.clone(),
                    a: tr.a.clone(),
                    s_next: tr.s_next.clone(),
                    r: tr.r,
                    done: tr.done,
                    diverged: traj.diverged,
                    strategy: traj.meta.strategy,
                    seed: traj.meta.seed,
                    noise_variance: traj.meta.noise_variance,
                    policy: traj.meta.policy.clone(),
                };
                out.push_str(&serde_json::to_string(&rec).expect("transition serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// Parses the line-delimited form. Errors name the offending line.
    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Dataset> {
        let mut trajectories: Vec<Trajectory> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TransitionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
            let starts_new = rec.t == 0
                || trajectories
                    .last()
                    .is_none_or(|tr| tr.meta.iteration != rec.iteration);
            if starts_new {
                if rec.t != 0 {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: lineno,
                        message: format!("trajectory {} starts at t={}", rec.iteration, rec.t),
                    });
                }
                trajectories.push(Trajectory {
                    transitions: Vec::new(),
                    meta: TrajectoryMeta {
                        strategy: rec.strategy,
                        iteration: rec.iteration,
                        seed: rec.seed,
                        noise_variance: rec.noise_variance,
                        policy: rec.policy,
                    },
                    diverged: rec.diverged,
                });
            }
            let traj = trajectories.last_mut().expect("pushed above");
            if rec.t != traj.transitions.len() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: lineno,
                    message: format!(
                        "expected t={} in trajectory {}, found t={}",
                        traj.transitions.len(),
                        rec.iteration,
                        rec.t
                    ),
                });
            }
            traj.transitions.push(Transition {
                s: rec.s,
                a: rec.a,
                s_next: rec.s_next,
                r: rec.r,
                done: rec.done,
            });
        }
        Ok(Dataset { trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Dataset::from_jsonl(&text, path)
    }

    /// Re-checks protocol invariants: per-trajectory length limit, finite
    /// values, consistent dimensions, chained states and cumulative 1..k
    /// iteration indexing.
    pub fn validate(&self, max_len: usize) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut line = 0usize;
        let dims = self
            .transitions()
            .next()
            .map(|tr| (tr.s.len(), tr.a.len()));
        for (k, traj) in self.trajectories.iter().enumerate() {
            if traj.meta.iteration != k + 1 {
                issues.push(ValidationIssue {
                    line: Some(line + 1),
                    message: format!(
                        "trajectory #{} carries iteration {}, expected {}",
                        k + 1,
                        traj.meta.iteration,
                        k + 1
                    ),
                });
            }
            if traj.len() > max_len {
                issues.push(ValidationIssue {
                    line: Some(line + 1),
                    message: format!("trajectory {} has {} transitions > {max_len}", k + 1, traj.len()),
                });
            }
            for (t, tr) in traj.transitions.iter().enumerate() {
                line += 1;
                let finite = tr.s.iter().chain(&tr.a).chain(&tr.s_next).all(|v| v.is_finite())
                    && tr.r.is_finite();
                if !finite {
                    issues.push(ValidationIssue {
                        line: Some(line),
                        message: "non-finite value".into(),
                    });
                }
                if let Some((ds, da)) = dims {
                    if tr.s.len() != ds || tr.s_next.len() != ds || tr.a.len() != da {
                        issues.push(ValidationIssue {
                            line: Some(line),
                            message: "inconsistent dimensions".into(),
                        });
                    }
                }
                if t > 0 && traj.transitions[t - 1].s_next != tr.s {
                    issues.push(ValidationIssue {
                        line: Some(line),
                        message: "state does not continue the previous transition".into(),
                    });
                }
            }
        }
        issues
    }
}
