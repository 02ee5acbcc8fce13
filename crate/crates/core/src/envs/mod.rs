//! Parameterized swing-up environments.
//!
//! Three deterministic, closed-form systems ordered by difficulty: a torque
//! limited pendulum, a cart-pole with viscous friction and a fully actuated
//! two-link acrobot. All of them integrate with semi-implicit (symplectic)
//! Euler in momentum form over a fixed number of substeps, and expose the
//! full latent state so trajectories can be replayed from arbitrary
//! intermediate states.

pub mod dynamics;
mod rollout;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;

pub use rollout::{rollout, Controller, EpisodeReturn, FnController, RandomController, Rollout, ZeroController};
pub(crate) use rollout::episode_return;

/// Any joint or cart velocity above this magnitude terminates the episode.
pub const VELOCITY_LIMIT: f64 = 50.0;
/// Cart position limit for the cart-pole.
pub const CART_LIMIT: f64 = 5.0;
/// Half-width of the uniform initial-state perturbation around rest.
pub const RESET_SPREAD: f64 = 0.05;

/// Identifies one of the shipped environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pendulum,
    Cartpole,
    Acrobot,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Pendulum, EnvKind::Cartpole, EnvKind::Acrobot];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Cartpole => "cartpole",
            EnvKind::Acrobot => "acrobot",
        }
    }

    /// Observation dimension seen by policies.
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 3,
            EnvKind::Cartpole => 5,
            EnvKind::Acrobot => 6,
        }
    }

    /// Latent (simulator) state dimension.
    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 2,
            EnvKind::Cartpole | EnvKind::Acrobot => 4,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Pendulum | EnvKind::Cartpole => 1,
            EnvKind::Acrobot => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            EnvKind::Pendulum => &["mass", "length", "damping"],
            EnvKind::Cartpole => &[
                "cart_mass",
                "pole_mass",
                "pole_length",
                "cart_friction",
                "joint_friction",
            ],
            EnvKind::Acrobot => &[
                "link1_mass",
                "link2_mass",
                "link1_length",
                "link2_length",
                "joint1_damping",
                "joint2_damping",
            ],
        }
    }

    pub fn param_units(self) -> &'static [&'static str] {
        match self {
            EnvKind::Pendulum => &["kg", "m", "N*m*s"],
            EnvKind::Cartpole => &["kg", "kg", "m", "N*s/m", "N*m*s"],
            EnvKind::Acrobot => &["kg", "kg", "m", "m", "N*m*s", "N*m*s"],
        }
    }

    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    /// Latent rest configuration that resets perturb.
    pub fn rest_state(self) -> &'static [f64] {
        match self {
            EnvKind::Pendulum => &[PI, 0.0],
            EnvKind::Cartpole => &[0.0, PI, 0.0, 0.0],
            EnvKind::Acrobot => &[0.0, 0.0, 0.0, 0.0],
        }
    }

    /// Rewards are costs (negative scale) for the pendulum, bounded in [0, 1]
    /// per step otherwise.
    pub fn negative_scale(self) -> bool {
        matches!(self, EnvKind::Pendulum)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = EnvKind::ALL.iter().map(|k| k.name()).collect();
                crate::suggest::unknown("environment", s, &names)
            })
    }
}

/// Physical dynamics parameters ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DynamicsVector {
    pub values: Vec<f64>,
}

impl DynamicsVector {
    pub fn new(values: Vec<f64>) -> Self {
        DynamicsVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Latent simulator state plus the time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: Vec<f64>,
    pub t: usize,
}

/// Result of a single environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Full description of an environment instance: integration settings,
/// ground-truth dynamics, inference search space and protocol constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    pub dt: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub action_bounds: Vec<[f64; 2]>,
    pub ground_truth: DynamicsVector,
    pub search_space: Vec<[f64; 2]>,
    pub unmodeled_indices: Vec<usize>,
    pub noise_variance: f64,
    pub reward_threshold: f64,
    /// Return of the zero-action policy, the lower anchor used to normalize
    /// cost-style returns. Only required for negative-scale environments.
    pub worst_return: Option<f64>,
}

impl EnvironmentSpec {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    pub fn n_params(&self) -> usize {
        self.kind.n_params()
    }

    /// Checks the structural invariants of the spec.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidSpec(format!("{}: {msg}", self.name())));
        let n = self.n_params();
        if self.ground_truth.len() != n || self.search_space.len() != n {
            return bad(format!("expected {n} dynamics parameters"));
        }
        if self.action_bounds.len() != self.action_dim() {
            return bad(format!("expected {} action bounds", self.action_dim()));
        }
        if self.action_bounds.iter().any(|[lo, hi]| !(lo < hi)) {
            return bad("action bounds must satisfy lo < hi".into());
        }
        for (i, ([lo, hi], v)) in self.search_space.iter().zip(&self.ground_truth.values).enumerate() {
            if !(lo < hi) {
                return bad(format!("search space dim {i} must satisfy lo < hi"));
            }
            if !(lo < v && v < hi) {
                return bad(format!("ground truth dim {i} = {v} not strictly inside [{lo}, {hi}]"));
            }
        }
        if self.unmodeled_indices.len() >= n {
            return bad("at least one parameter must remain modeled".into());
        }
        if self.unmodeled_indices.iter().any(|&i| i >= n) {
            return bad("unmodeled index out of range".into());
        }
        if self.horizon < 200 {
            return bad("horizon must be at least 200".into());
        }
        if self.substeps == 0 || !(self.dt > 0.0) {
            return bad("dt must be positive and substeps >= 1".into());
        }
        if !(self.noise_variance >= 0.0) {
            return bad("noise variance must be non-negative".into());
        }
        if self.kind.negative_scale() && self.worst_return.is_none() {
            return bad("cost-style environments need a worst_return anchor".into());
        }
        Ok(())
    }

    pub fn clamp_action(&self, action: &mut [f64]) {
        for (a, [lo, hi]) in action.iter_mut().zip(&self.action_bounds) {
            *a = if a.is_nan() { 0.5 * (lo + hi) } else { a.clamp(*lo, *hi) };
        }
    }

    /// Maps a latent state to the observation vector given to policies.
    pub fn observe_into(&self, q: &[f64], obs: &mut [f64]) {
        match self.kind {
            EnvKind::Pendulum => {
                obs[0] = q[0].cos();
                obs[1] = q[0].sin();
                obs[2] = q[1];
            }
            EnvKind::Cartpole => {
                obs[0] = q[0];
                obs[1] = q[2];
                obs[2] = q[1].sin();
                obs[3] = q[1].cos();
                obs[4] = q[3];
            }
            EnvKind::Acrobot => {
                obs[0] = q[0].sin();
                obs[1] = q[0].cos();
                obs[2] = q[1].sin();
                obs[3] = q[1].cos();
                obs[4] = q[2];
                obs[5] = q[3];
            }
        }
    }

    pub fn observe(&self, q: &[f64]) -> Vec<f64> {
        let mut obs = vec![0.0; self.obs_dim()];
        self.observe_into(q, &mut obs);
        obs
    }

    /// Per-step reward for taking (already clamped) `action` in latent state `q`.
    pub fn reward(&self, q: &[f64], action: &[f64]) -> f64 {
        match self.kind {
            EnvKind::Pendulum => {
                let th = wrap_angle(q[0]);
                -(th * th + 0.1 * q[1] * q[1] + 0.001 * action[0] * action[0])
            }
            EnvKind::Cartpole => 0.5 * (1.0 + q[1].cos()),
            EnvKind::Acrobot => 0.25 * (2.0 - q[0].cos() - (q[0] + q[1]).cos()),
        }
    }

    /// Total mechanical energy of a latent state under `xi`.
    pub fn energy(&self, q: &[f64], xi: &DynamicsVector) -> f64 {
        let k = self.state_dim() / 2;
        let (pos, vel) = q.split_at(k);
        match self.kind {
            EnvKind::Pendulum => dynamics::pendulum_energy(pos, vel, &xi.values),
            EnvKind::Cartpole => dynamics::cartpole_energy(pos, vel, &xi.values),
            EnvKind::Acrobot => dynamics::acrobot_energy(pos, vel, &xi.values),
        }
    }

    /// Continuous-time generalized accelerations.
    pub fn accelerations(&self, q: &[f64], action: &[f64], xi: &[f64], out: &mut [f64]) {
        let k = self.state_dim() / 2;
        let (pos, vel) = q.split_at(k);
        match self.kind {
            EnvKind::Pendulum => dynamics::pendulum_accel(pos, vel, action, xi, out),
            EnvKind::Cartpole => dynamics::cartpole_accel(pos, vel, action, xi, out),
            EnvKind::Acrobot => dynamics::acrobot_accel(pos, vel, action, xi, out),
        }
    }

    /// Mass matrix, its gradient and the potential gradient at `pos`.
    pub fn mechanics(&self, pos: &[f64], xi: &[f64]) -> dynamics::Mechanics {
        match self.kind {
            EnvKind::Pendulum => dynamics::pendulum_mechanics(pos, xi),
            EnvKind::Cartpole => dynamics::cartpole_mechanics(pos, xi),
            EnvKind::Acrobot => dynamics::acrobot_mechanics(pos, xi),
        }
    }

    /// Actions mapped to generalized forces (the cart-pole pushes the cart,
    /// the other systems apply joint torques directly).
    fn generalized_forces(&self, action: &[f64]) -> [f64; 2] {
        match self.kind {
            EnvKind::Pendulum => [action[0], 0.0],
            EnvKind::Cartpole => [action[0], 0.0],
            EnvKind::Acrobot => [action[0], action[1]],
        }
    }

    /// Safety-box failure predicate.
    pub fn failed(&self, q: &[f64]) -> bool {
        let k = self.state_dim() / 2;
        if q[k..].iter().any(|v| v.abs() > VELOCITY_LIMIT) {
            return true;
        }
        self.kind == EnvKind::Cartpole && q[0].abs() > CART_LIMIT
    }

    /// Draws an initial state: rest configuration plus a small uniform
    /// perturbation on every coordinate.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let q = self
            .kind
            .rest_state()
            .iter()
            .map(|r| r + rng.random_range(-RESET_SPREAD..=RESET_SPREAD))
            .collect();
        EnvState { q, t: 0 }
    }

    /// Advances `q` in place by one control step. `action` is clamped to the
    /// action bounds before use. Returns `(reward, done)`.
    pub fn step_in_place(
        &self,
        q: &mut [f64],
        t: &mut usize,
        action: &mut [f64],
        xi: &[f64],
    ) -> Result<(f64, bool), EnvError> {
        self.clamp_action(action);
        let reward = self.reward(q, action);
        let k = self.state_dim() / 2;
        let h = self.dt / self.substeps as f64;
        let u = self.generalized_forces(action);
        let mech = |pos: &[f64]| self.mechanics(pos, xi);
        let (pos, vel) = q.split_at_mut(k);
        for _ in 0..self.substeps {
            dynamics::symplectic_euler_step(pos, vel, &u, h, &mech);
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite { what: "state", t: *t });
        }
        *t += 1;
        let done = *t >= self.horizon || self.failed(q);
        Ok((reward, done))
    }

    /// Pure single-step transition.
    pub fn step(
        &self,
        state: &EnvState,
        action: &[f64],
        xi: &DynamicsVector,
    ) -> Result<StepOutcome, EnvError> {
        self.check_state(&state.q)?;
        self.check_xi(xi)?;
        if action.len() != self.action_dim() {
            return Err(EnvError::DimensionMismatch {
                what: "action",
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let mut next = state.clone();
        let mut a = action.to_vec();
        let (reward, done) = self.step_in_place(&mut next.q, &mut next.t, &mut a, &xi.values)?;
        Ok(StepOutcome {
            state: next,
            reward,
            done,
        })
    }

    pub fn check_state(&self, q: &[f64]) -> Result<(), EnvError> {
        if q.len() != self.state_dim() {
            return Err(EnvError::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinite { what: "state", t: 0 });
        }
        Ok(())
    }

    pub fn check_xi(&self, xi: &DynamicsVector) -> Result<(), EnvError> {
        if xi.len() != self.n_params() {
            return Err(EnvError::DimensionMismatch {
                what: "dynamics parameters",
                expected: self.n_params(),
                got: xi.len(),
            });
        }
        if !xi.is_finite() {
            return Err(EnvError::NonFinite {
                what: "dynamics parameters",
                t: 0,
            });
        }
        Ok(())
    }

    /// Unmodeled-phenomena transform: the target keeps the ground truth while
    /// the source freezes every unmodeled parameter at 80% of its true value
    /// and drops it from the inference search space.
    pub fn make_unmodeled(&self) -> Result<(DynamicsVector, SourceModel), EnvError> {
        if self.unmodeled_indices.is_empty() {
            return Err(EnvError::NoUnmodeled(self.name().to_string()));
        }
        let frozen = self
            .unmodeled_indices
            .iter()
            .map(|&i| (i, UNMODELED_FACTOR * self.ground_truth.values[i]))
            .collect();
        Ok((self.ground_truth.clone(), SourceModel::new(self, frozen)))
    }

    /// Source model in which every parameter is inferred.
    pub fn full_source(&self) -> SourceModel {
        SourceModel::new(self, Vec::new())
    }
}

/// Unmodeled parameters are underestimated by this factor in the source.
pub const UNMODELED_FACTOR: f64 = 0.8;

/// Maps the (possibly reduced) inference space onto full physical parameter
/// vectors, filling frozen dimensions with their fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub n_full: usize,
    /// Indices (into the full vector) of the inferred parameters, ascending.
    pub modeled: Vec<usize>,
    /// `(index, value)` of parameters fixed in the source simulator.
    pub frozen: Vec<(usize, f64)>,
    /// Physical bounds of the inferred parameters.
    pub space: crate::dist::ParamSpace,
}

impl SourceModel {
    fn new(spec: &EnvironmentSpec, frozen: Vec<(usize, f64)>) -> Self {
        let modeled: Vec<usize> = (0..spec.n_params())
            .filter(|i| !frozen.iter().any(|(j, _)| j == i))
            .collect();
        let bounds = modeled.iter().map(|&i| spec.search_space[i]).collect();
        SourceModel {
            n_full: spec.n_params(),
            modeled,
            frozen,
            space: crate::dist::ParamSpace::new(bounds),
        }
    }

    /// Number of inferred dimensions.
    pub fn dims(&self) -> usize {
        self.modeled.len()
    }

    /// Builds the full physical vector from normalized inferred coordinates.
    pub fn to_physical(&self, z: &[f64]) -> DynamicsVector {
        let mut values = vec![0.0; self.n_full];
        let phys = self.space.denormalize(z);
        for (&i, v) in self.modeled.iter().zip(phys) {
            values[i] = v;
        }
        for &(i, v) in &self.frozen {
            values[i] = v;
        }
        DynamicsVector::new(values)
    }

    /// Normalized coordinates of the inferred dims of a full physical vector.
    pub fn project(&self, xi: &DynamicsVector) -> Vec<f64> {
        let phys: Vec<f64> = self.modeled.iter().map(|&i| xi.values[i]).collect();
        self.space.normalize(&phys)
    }
}

/// Stateful simulator handle supporting arbitrary state resets.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    spec: &'a EnvironmentSpec,
    xi: DynamicsVector,
    state: EnvState,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a EnvironmentSpec, xi: DynamicsVector) -> Result<Self, EnvError> {
        spec.check_xi(&xi)?;
        let state = EnvState {
            q: spec.kind.rest_state().to_vec(),
            t: 0,
        };
        Ok(Simulator { spec, xi, state })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        self.spec
    }

    pub fn xi(&self) -> &DynamicsVector {
        &self.xi
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &EnvState {
        self.state = self.spec.reset(rng);
        &self.state
    }

    /// Continues the simulation from exactly `state`.
    pub fn set_state(&mut self, state: &EnvState) -> Result<(), EnvError> {
        self.spec.check_state(&state.q)?;
        self.state.q.clear();
        self.state.q.extend_from_slice(&state.q);
        self.state.t = state.t;
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<(f64, bool), EnvError> {
        let mut a = action.to_vec();
        self.spec
            .step_in_place(&mut self.state.q, &mut self.state.t, &mut a, &self.xi.values)
    }
}

/// Wraps an angle to [-π, π).
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}
