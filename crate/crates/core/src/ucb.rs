//! Confidence schedule `β_n`, the UCB surrogate `Û_n = μ + √β σ`, and
//! empirical estimation of the sample-path derivative tail constants `a, b`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpPosterior, LatticeSampler};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::solver::BoxDomain;

/// Inputs to the `β_n` schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub delta: f64,
    /// Learning dimension.
    pub d: usize,
    pub a: f64,
    pub b: f64,
    /// Side length of the domain, `D ⊆ [0, r]^d`.
    pub r: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self {
            delta: 0.1,
            d: 1,
            a: 1.1,
            b: 2.0,
            r: 1.0,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.d == 0 {
            return Err(Error::invalid("learning dimension must be at least 1"));
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("r", self.r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if 4.0 * self.d as f64 * self.a / self.delta <= 1.0 {
            return Err(Error::invalid("4·d·a/δ must exceed 1 for the schedule to be defined"));
        }
        Ok(())
    }
}

/// `β_n = 2 log(2n²π²/(3δ)) + 2d log(d n² b r √log(4da/δ))`.
pub fn beta(n: u64, p: &ConfidenceParams) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("the data counter starts at 1"));
    }
    p.validate()?;
    let n2 = (n as f64) * (n as f64);
    let d = p.d as f64;
    let first_arg = 2.0 * n2 * PI * PI / (3.0 * p.delta);
    let second_arg = d * n2 * p.b * p.r * (4.0 * d * p.a / p.delta).ln().sqrt();
    if first_arg <= 1.0 || second_arg <= 1.0 {
        return Err(Error::invalid(format!(
            "β schedule undefined: log arguments {first_arg:e}, {second_arg:e} must exceed 1"
        )));
    }
    Ok(2.0 * first_arg.ln() + 2.0 * d * second_arg.ln())
}

/// `Û(x) = μ(x) + √β σ(x)`.
pub fn ucb_value(post: &GpPosterior, beta_n: f64, x: &[f64]) -> Result<f64> {
    let local = post.local(x)?;
    Ok(local.mean + beta_n.max(0.0).sqrt() * local.std())
}

/// `∇Û(x) = ∇μ(x) + √β ∇σ(x)`.
pub fn ucb_grad(post: &GpPosterior, beta_n: f64, x: &[f64]) -> Result<Vec<f64>> {
    let local = post.local(x)?;
    Ok(ucb_value_grad_from(&local, beta_n).1)
}

pub(crate) fn ucb_value_grad_from(local: &crate::gp::LocalPosterior, beta_n: f64) -> (f64, Vec<f64>) {
    let sb = beta_n.max(0.0).sqrt();
    let value = local.mean + sb * local.std();
    let grad = local
        .mean_grad
        .iter()
        .zip(local.std_grad())
        .map(|(m, s)| m + sb * s)
        .collect();
    (value, grad)
}

/// Exceedance levels `M` probed when estimating `a`.
pub fn exceedance_ladder() -> Vec<f64> {
    (1..=12).map(|i| 0.5 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRow {
    pub coordinate: usize,
    pub level: f64,
    pub frequency: f64,
    /// `exp(−(M/b)²)`.
    pub tail: f64,
    /// `frequency / tail`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbEstimate {
    pub a: f64,
    pub b: f64,
    pub table: Vec<ExceedanceRow>,
}

/// Estimates `(a, b)` with `P{sup_D |∂U/∂x_j| > M} ≤ a·exp(−(M/b)²)`.
///
/// `b = √(2/ℓ² + 2ε)` is set analytically; `a` is the smallest constant that
/// dominates the empirical exceedance frequencies of `n_paths` lattice draws
/// of each derivative process `GP(0, k'_j)` on the ladder of levels.
/// The returned `a` is the raw estimate; any safety inflation is up to the caller.
pub fn estimate_ab(
    kernel: &KernelSpec,
    domain: &BoxDomain,
    epsilon: f64,
    n_paths: usize,
    grid_resolution: usize,
    seed: u64,
) -> Result<AbEstimate> {
    if kernel.family != KernelFamily::SquaredExponential {
        return Err(Error::Unsupported("derivative kernel only available for squared-exponential".into()));
    }
    if n_paths < 100 {
        return Err(Error::invalid(format!("need at least 100 paths, got {n_paths}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let l2 = kernel.length_scale * kernel.length_scale;
    let b = (2.0 / l2 + 2.0 * epsilon).sqrt();
    let grid = domain.lattice(grid_resolution)?;
    let ladder = exceedance_ladder();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Vec::new();
    let mut a: f64 = 0.0;
    for j in 0..domain.dim() {
        let sampler = LatticeSampler::new(&grid, |x, y| {
            kernel
                .derivative_kernel(x, y, j)
                .expect("lattice points share the domain dimension")
        })?;
        let mut counts = vec![0usize; ladder.len()];
        for _ in 0..n_paths {
            let sup = sampler.draw(&mut rng).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (c, level) in counts.iter_mut().zip(&ladder) {
                if sup > *level {
                    *c += 1;
                }
            }
        }
        for (level, count) in ladder.iter().zip(counts) {
            let frequency = count as f64 / n_paths as f64;
            let tail = (-(level / b).powi(2)).exp();
            let ratio = frequency / tail;
            a = a.max(ratio);
            table.push(ExceedanceRow {
                coordinate: j,
                level: *level,
                frequency,
                tail,
                ratio,
            });
        }
    }
    Ok(AbEstimate { a, b, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Observation;
    use approx::assert_relative_eq;

    #[test]
    fn beta_reference_value() {
        // 2 ln(2π²/0.3) + 2 ln(2 √ln 44), evaluated independently
        let expected = 2.0 * (2.0 * PI * PI / 0.3f64).ln() + 2.0 * (2.0 * 44f64.ln().sqrt()).ln();
        let got = beta(1, &ConfidenceParams::default()).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-14);
        assert!((got - 11.090).abs() < 5e-4);
    }

    #[test]
    fn beta_is_monotone_in_n_and_d() {
        let p = ConfidenceParams::default();
        assert!(beta(2, &p).unwrap() > beta(1, &p).unwrap());
        let p2 = ConfidenceParams { d: 2, ..p };
        assert!(beta(1, &p2).unwrap() > beta(1, &p).unwrap());
    }

    #[test]
    fn beta_rejects_invalid_params() {
        let p = ConfidenceParams::default();
        assert!(beta(0, &p).is_err());
        assert!(beta(1, &ConfidenceParams { delta: 1.0, ..p }).is_err());
        assert!(beta(1, &ConfidenceParams { a: 0.01, delta: 0.5, ..p }).is_err());
        // tiny b·r makes the second log argument ≤ 1
        assert!(beta(1, &ConfidenceParams { b: 0.01, ..p }).is_err());
    }

    #[test]
    fn ucb_examples() {
        let k = KernelSpec::squared_exponential(1.0).unwrap();
        let prior = GpPosterior::new(k, 0.01, 1).unwrap();
        assert_eq!(ucb_value(&prior, 4.0, &[0.3]).unwrap(), 2.0);
        let mut post = prior.clone();
        post.update(&Observation::new(vec![0.2], 0.7)).unwrap();
        post.update(&Observation::new(vec![0.8], -0.1)).unwrap();
        let x = [0.55];
        assert_eq!(ucb_value(&post, 0.0, &x).unwrap(), post.local(&x).unwrap().mean);
        assert!(ucb_value(&post, 9.0, &x).unwrap() >= post.posterior_mean(&x).unwrap());
    }

    #[test]
    fn ab_analytic_b() {
        let k1 = KernelSpec::squared_exponential(1.0).unwrap();
        let est = estimate_ab(&k1, &BoxDomain::unit(1), 1.0, 100, 21, 0).unwrap();
        assert_eq!(est.b, 2.0);
        let k2 = KernelSpec::squared_exponential(2.0).unwrap();
        let est = estimate_ab(&k2, &BoxDomain::unit(1), 0.5, 100, 21, 0).unwrap();
        assert_relative_eq!(est.b, 1.5f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn ab_is_deterministic_and_dominates_table() {
        let k = KernelSpec::squared_exponential(1.0).unwrap();
        let d = BoxDomain::unit(1);
        let e1 = estimate_ab(&k, &d, 1.0, 300, 51, 9).unwrap();
        let e2 = estimate_ab(&k, &d, 1.0, 300, 51, 9).unwrap();
        assert_eq!(e1, e2);
        assert!(e1.table.iter().all(|r| r.frequency <= e1.a * r.tail + 1e-15));
        assert!(estimate_ab(&k, &d, 1.0, 99, 51, 9).is_err());
    }
}
