//! Fixtures shared by the benchmarks.

use agp_core::experiment::{ExperimentConfig, Scenario};
use agp_core::gp::{GpPosterior, Observation};
use agp_core::kernels::KernelSpec;

/// 1-D posterior with `n` noisy observations clustered the way a converging
/// run produces them.
pub fn clustered_posterior(n: usize) -> GpPosterior {
    let mut post = GpPosterior::new(KernelSpec::default(), 0.01, 1).expect("valid prior");
    for i in 0..n {
        let x = 0.7 + 0.05 * (i as f64 * 0.618).sin() / (1.0 + i as f64).sqrt();
        post.update(&Observation::new(vec![x], (3.0 * x).sin()))
            .expect("update succeeds");
    }
    post
}

/// Default platooning scenario with a shortened horizon.
pub fn scenario(horizon: u64, omega: f64) -> Scenario {
    let mut cfg = ExperimentConfig::default();
    cfg.horizon = horizon;
    cfg.runs = 1;
    cfg.objective.omega = omega;
    Scenario::new(cfg).expect("default scenario builds")
}
