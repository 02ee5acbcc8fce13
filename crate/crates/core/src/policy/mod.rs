//! Deterministic tanh-squashed policies, the cross-entropy trainer used by
//! every method, and target/source evaluation.

mod cem;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Controller, DynamicsVector, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::seed;

pub use cem::{train_policy, GenerationStats, TrainerConfig, TrainingReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp { hidden: Vec<usize> },
}

impl Architecture {
    pub fn parse(name: &str, hidden: &[usize]) -> std::result::Result<Self, String> {
        match name {
            "linear" => Ok(Architecture::Linear),
            "mlp" if !hidden.is_empty() && hidden.iter().all(|h| *h > 0) => Ok(Architecture::Mlp {
                hidden: hidden.to_vec(),
            }),
            "mlp" => Err("mlp needs at least one non-empty hidden layer".into()),
            other => Err(crate::suggest::unknown("architecture", other, &["linear", "mlp"])),
        }
    }

    /// Layer widths from input to output.
    fn widths(&self, obs_dim: usize, act_dim: usize) -> Vec<usize> {
        let mut w = vec![obs_dim];
        if let Architecture::Mlp { hidden } = self {
            w.extend(hidden);
        }
        w.push(act_dim);
        w
    }

    pub fn n_weights(&self, obs_dim: usize, act_dim: usize) -> usize {
        self.widths(obs_dim, act_dim).windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp { hidden } => {
                let h: Vec<String> = hidden.iter().map(|v| v.to_string()).collect();
                write!(f, "mlp[{}]", h.join(","))
            }
        }
    }
}

/// Feed-forward network with tanh hidden units and a tanh output scaled to
/// the action bounds. Weights are stored layer by layer, each layer as a
/// row-major `out × in` matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub architecture: Architecture,
    pub obs_dim: usize,
    pub action_bounds: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl Policy {
    pub fn new(
        architecture: Architecture,
        obs_dim: usize,
        action_bounds: Vec<[f64; 2]>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let expected = architecture.n_weights(obs_dim, action_bounds.len());
        if weights.len() != expected {
            return Err(Error::Training(format!(
                "{architecture} policy for {obs_dim} -> {} needs {expected} weights, got {}",
                action_bounds.len(),
                weights.len()
            )));
        }
        Ok(Policy {
            architecture,
            obs_dim,
            action_bounds,
            weights,
        })
    }

    pub fn zeros(architecture: Architecture, spec: &EnvironmentSpec) -> Self {
        let n = architecture.n_weights(spec.obs_dim(), spec.action_dim());
        Policy::new(architecture, spec.obs_dim(), spec.action_bounds.clone(), vec![0.0; n])
            .expect("weight count matches by construction")
    }

    pub fn act_dim(&self) -> usize {
        self.action_bounds.len()
    }

    /// Deterministic bounded action.
    pub fn act(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.act_dim()];
        self.runner().act(obs, &mut out);
        out
    }

    /// Allocation-free controller for repeated evaluation.
    pub fn runner(&self) -> Net<'_> {
        Net::new(&self.architecture, self.obs_dim, &self.action_bounds, &self.weights)
    }

    /// Short content hash of the weights, used to tag collected data.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("policy serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Policy = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Policy::new(p.architecture, p.obs_dim, p.action_bounds, p.weights)
    }
}

/// A borrowed view of a weight vector that can act as a controller.
pub struct Net<'a> {
    widths: Vec<usize>,
    bounds: &'a [[f64; 2]],
    weights: &'a [f64],
    buf: [Vec<f64>; 2],
}

impl<'a> Net<'a> {
    pub fn new(arch: &Architecture, obs_dim: usize, bounds: &'a [[f64; 2]], weights: &'a [f64]) -> Self {
        let widths = arch.widths(obs_dim, bounds.len());
        debug_assert_eq!(weights.len(), arch.n_weights(obs_dim, bounds.len()));
        let widest = *widths.iter().max().unwrap_or(&1);
        Net {
            widths,
            bounds,
            weights,
            buf: [vec![0.0; widest], vec![0.0; widest]],
        }
    }
}

impl Controller for Net<'_> {
    fn act(&mut self, obs: &[f64], action: &mut [f64]) {
        let [a, b] = &mut self.buf;
        a[..obs.len()].copy_from_slice(obs);
        let (mut cur, mut next) = (a, b);
        let mut off = 0;
        let layers = self.widths.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.weights[off..off + n_in * n_out];
            let bias = &self.weights[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = bias[j] + row.iter().zip(&cur[..n_in]).map(|(x, y)| x * y).sum::<f64>();
                next[j] = z.tanh();
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (i, (out, [lo, hi])) in action.iter_mut().zip(self.bounds).enumerate() {
            *out = 0.5 * (lo + hi) + 0.5 * (hi - lo) * cur[i];
        }
    }
}

/// Mean undiscounted return of `policy` over `episodes` fresh episodes in
/// the domain with dynamics `xi`. With positive `noise_variance` the policy
/// observes Gaussian-perturbed states, as in the noisy target setting.
pub fn evaluate_policy(
    policy: &Policy,
    spec: &EnvironmentSpec,
    xi: &DynamicsVector,
    noise_variance: f64,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    Ok(evaluate_episodes(policy, spec, xi, noise_variance, episodes, seed)?
        .iter()
        .sum::<f64>()
        / episodes as f64)
}

/// Per-episode undiscounted returns; see [`evaluate_policy`].
pub fn evaluate_episodes(
    policy: &Policy,
    spec: &EnvironmentSpec,
    xi: &DynamicsVector,
    noise_variance: f64,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::Training("evaluation needs at least one episode".into()));
    }
    spec.check_xi(xi)?;
    if policy.obs_dim != spec.obs_dim() || policy.action_bounds != spec.action_bounds {
        return Err(Error::Training(format!("policy does not fit the {} interface", spec.name())));
    }
    let sd = noise_variance.sqrt();
    let mut net = policy.runner();
    let mut obs = vec![0.0; spec.obs_dim()];
    let mut act = vec![0.0; spec.action_dim()];
    Ok((0..episodes)
        .map(|k| {
            let mut reset = seed::rng(seed, "eval-reset", k as u64);
            let mut noise = seed::rng(seed, "eval-noise", k as u64);
            let q0 = spec.reset(&mut reset).q;
            let noise = (sd > 0.0).then_some((sd, &mut noise));
            crate::envs::episode_return(spec, &mut net, &xi.values, &q0, 1.0, &mut obs, &mut act, noise)
                .undiscounted
        })
        .collect())
}
