//! Black-box optimizers shared by the inference methods.

pub mod cmaes;
pub mod gp;
pub mod reps;

pub use cmaes::{cmaes_minimize, CmaOptions, CmaResult, CmaState};
pub use gp::{bo_suggest, expected_improvement, gp_fit, gp_posterior, GpHyper, GpModel};
pub use reps::{reps_update, RepsConfig, RepsStep};
