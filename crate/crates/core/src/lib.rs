//! Online personalized optimization: a known time-varying objective plus an
//! unknown user utility learned from noisy, possibly intermittent feedback
//! with Gaussian-process upper confidence bounds, tracked by an inexact
//! projected-gradient solver.

pub mod agp;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod kernels;
mod linalg;
pub mod objectives;
pub mod regret;
pub mod solver;
pub mod ucb;

pub use error::{Error, Result};
pub use gp::{GpPosterior, Observation, SamplePath};
pub use kernels::{KernelFamily, KernelSpec};
pub use objectives::{Tick, TimeVaryingQuadratic, Trajectory};
pub use solver::{BoxDomain, SolverConfig, Smooth};
pub use ucb::ConfidenceParams;
