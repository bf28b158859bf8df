//! Known time-varying engineering objectives `V(x; t)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::solver::BoxDomain;

/// Resting target of every vehicle gap.
pub const TARGET_BASE: f64 = 0.33;
/// Oscillation amplitude of the target.
pub const TARGET_AMPLITUDE: f64 = 0.25;

/// Optimization counter `k` together with its wall-clock time `t_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub k: u64,
    pub t: f64,
}

impl Tick {
    /// Tick `k` with sampling period `dt`.
    pub fn at(k: u64, dt: f64) -> Self {
        Self { k, t: k as f64 * dt }
    }
}

/// Shape of the target over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    #[default]
    Periodic,
    /// Oscillation damped by `1/√k`.
    Vanishing,
}

/// `0.33 + 0.25 sin(πωt)` in every component.
pub fn target_trajectory(t: f64, omega: f64, dim: usize) -> Vec<f64> {
    vec![TARGET_BASE + TARGET_AMPLITUDE * (std::f64::consts::PI * omega * t).sin(); dim]
}

/// `0.33 + 0.25 sin(πωt)/√k` in every component.
pub fn vanishing_target(t: f64, omega: f64, k: u64, dim: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("vanishing target is indexed from k = 1"));
    }
    let damp = (k as f64).sqrt();
    Ok(vec![
        TARGET_BASE + TARGET_AMPLITUDE * (std::f64::consts::PI * omega * t).sin() / damp;
        dim
    ])
}

/// A known, time-varying, concave reward.
pub trait EngineeringObjective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], tick: Tick) -> f64;
    fn grad(&self, x: &[f64], tick: Tick) -> Vec<f64>;
    /// Weight `γ` of the user term in the composed objective.
    fn user_weight(&self) -> f64 {
        1.0
    }
}

/// Assumption constants of an objective over a domain and time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMetadata {
    /// Smoothness constant, `λ_max(Q)`.
    pub l: f64,
    /// `max ‖∇V‖_∞` over the domain and probed times.
    pub d_g: f64,
    /// `max_k Δ_k` over the probed times.
    pub delta: f64,
}

/// `V(x; t) = −½ (x − x̄(t))ᵀ Q (x − x̄(t))` with user weight `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingQuadratic {
    q: DMatrix<f64>,
    omega: f64,
    trajectory: Trajectory,
    gamma: f64,
}

impl TimeVaryingQuadratic {
    /// `q` is given row-major and must be symmetric positive definite.
    pub fn new(q: &[Vec<f64>], omega: f64, trajectory: Trajectory, gamma: f64) -> Result<Self> {
        let m = q.len();
        if m == 0 {
            return Err(Error::invalid("Q must be non-empty"));
        }
        for row in q {
            check_dim(m, row.len())?;
        }
        let q = DMatrix::from_fn(m, m, |i, j| q[i][j]);
        if (&q - q.transpose()).abs().max() > 1e-12 {
            return Err(Error::invalid("Q must be symmetric"));
        }
        if !(omega.is_finite()) {
            return Err(Error::invalid("omega must be finite"));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        let v = Self {
            q,
            omega,
            trajectory,
            gamma,
        };
        if v.lambda_min() <= 0.0 {
            return Err(Error::invalid("Q must be positive definite"));
        }
        Ok(v)
    }

    /// The coupled two-vehicle weights `[[1, 0.25], [0.25, 1]]`.
    pub fn platoon(omega: f64, trajectory: Trajectory) -> Self {
        Self::new(&default_q(2), omega, trajectory, 1.0).expect("default weights are valid")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn trajectory(&self) -> Trajectory {
        self.trajectory
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda_min(&self) -> f64 {
        self.q.symmetric_eigenvalues().min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.q.symmetric_eigenvalues().max()
    }

    /// `x̄(t_k)`.
    pub fn target(&self, tick: Tick) -> Vec<f64> {
        let m = self.q.nrows();
        match self.trajectory {
            Trajectory::Periodic => target_trajectory(tick.t, self.omega, m),
            Trajectory::Vanishing => {
                vanishing_target(tick.t, self.omega, tick.k.max(1), m).expect("k clamped to ≥ 1")
            }
        }
    }

    fn residual(&self, x: &[f64], target: &[f64]) -> Vec<f64> {
        x.iter().zip(target).map(|(a, b)| a - b).collect()
    }

    /// `Q (x − x̄)`.
    fn q_times(&self, r: &[f64]) -> Vec<f64> {
        let m = r.len();
        (0..m).map(|i| (0..m).map(|j| self.q[(i, j)] * r[j]).sum()).collect()
    }

    /// Value with an explicit target, used by oracles that cache `x̄`.
    pub fn value_with_target(&self, x: &[f64], target: &[f64]) -> f64 {
        let r = self.residual(x, target);
        let qr = self.q_times(&r);
        -0.5 * r.iter().zip(&qr).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn grad_with_target(&self, x: &[f64], target: &[f64]) -> Vec<f64> {
        let r = self.residual(x, target);
        self.q_times(&r).into_iter().map(|v| -v).collect()
    }

    /// `Δ_k = max_{x∈D} |V(x; t_k) − V(x; t_{k−1})|`.
    ///
    /// The difference is affine in `x` because `Q` is constant, so its
    /// extreme values are attained at corners of the box.
    pub fn drift(&self, domain: &BoxDomain, prev: Tick, curr: Tick) -> f64 {
        let a = self.target(prev);
        let b = self.target(curr);
        domain
            .corners()
            .iter()
            .map(|c| (self.value_with_target(c, &b) - self.value_with_target(c, &a)).abs())
            .fold(0.0, f64::max)
    }

    /// [`drift`](Self::drift) by exhaustive search over a lattice.
    pub fn drift_on_lattice(&self, domain: &BoxDomain, prev: Tick, curr: Tick, points_per_axis: usize) -> Result<f64> {
        let a = self.target(prev);
        let b = self.target(curr);
        Ok(domain
            .lattice(points_per_axis)?
            .iter()
            .map(|c| (self.value_with_target(c, &b) - self.value_with_target(c, &a)).abs())
            .fold(0.0, f64::max))
    }

    /// `L`, `D_g` and `Δ` over `domain` and consecutive pairs of `ticks`.
    pub fn metadata(&self, domain: &BoxDomain, ticks: &[Tick]) -> Result<ObjectiveMetadata> {
        check_dim(self.q.nrows(), domain.dim())?;
        if ticks.is_empty() {
            return Err(Error::invalid("metadata needs at least one tick"));
        }
        let corners = domain.corners();
        let mut d_g: f64 = 0.0;
        for &tick in ticks {
            let target = self.target(tick);
            for c in &corners {
                let g = self.grad_with_target(c, &target);
                d_g = g.iter().fold(d_g, |m, v| m.max(v.abs()));
            }
        }
        let delta = ticks
            .windows(2)
            .map(|w| self.drift(domain, w[0], w[1]))
            .fold(0.0, f64::max);
        Ok(ObjectiveMetadata {
            l: self.lambda_max(),
            d_g,
            delta,
        })
    }
}

/// Unit diagonal with 0.25 coupling between every pair of vehicles.
pub fn default_q(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.25 }).collect())
        .collect()
}

impl EngineeringObjective for TimeVaryingQuadratic {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn value(&self, x: &[f64], tick: Tick) -> f64 {
        self.value_with_target(x, &self.target(tick))
    }

    fn grad(&self, x: &[f64], tick: Tick) -> Vec<f64> {
        self.grad_with_target(x, &self.target(tick))
    }

    fn user_weight(&self) -> f64 {
        self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity(m: usize) -> Vec<Vec<f64>> {
        (0..m).map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect()).collect()
    }

    #[test]
    fn value_examples() {
        let v = TimeVaryingQuadratic::new(&identity(2), 0.0, Trajectory::Periodic, 1.0).unwrap();
        let tick = Tick::at(3, 0.1);
        let target = v.target(tick);
        assert_eq!(v.value(&target, tick), 0.0);
        assert!(v.grad(&target, tick).iter().all(|g| *g == 0.0));
        let x = [target[0] + 0.1, target[1]];
        assert_abs_diff_eq!(v.value(&x, tick), -0.005, epsilon = 1e-15);
    }

    #[test]
    fn trajectory_examples() {
        assert_eq!(target_trajectory(17.0, 0.0, 2), vec![0.33, 0.33]);
        assert_abs_diff_eq!(target_trajectory(1.25, 0.4, 1)[0], 0.58, epsilon = 1e-15);
        assert_eq!(target_trajectory(0.0, 0.3, 3), vec![0.33; 3]);
        assert_eq!(vanishing_target(0.7, 0.4, 1, 2).unwrap(), target_trajectory(0.7, 0.4, 2));
        assert!((vanishing_target(1.25, 0.4, 1_000_000, 1).unwrap()[0] - 0.33).abs() < 3e-4);
        assert!(vanishing_target(0.0, 0.4, 0, 1).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(TimeVaryingQuadratic::new(&[vec![1.0, 0.3], vec![0.2, 1.0]], 0.0, Trajectory::Periodic, 1.0).is_err());
        assert!(TimeVaryingQuadratic::new(&[vec![1.0, 2.0], vec![2.0, 1.0]], 0.0, Trajectory::Periodic, 1.0).is_err());
        assert!(TimeVaryingQuadratic::new(&identity(2), 0.0, Trajectory::Periodic, 0.0).is_err());
    }

    #[test]
    fn metadata_examples() {
        let v = TimeVaryingQuadratic::new(&identity(2), 0.0, Trajectory::Periodic, 1.0).unwrap();
        let ticks: Vec<Tick> = (1..50).map(|k| Tick::at(k, 0.1)).collect();
        let md = v.metadata(&BoxDomain::unit(2), &ticks).unwrap();
        assert_abs_diff_eq!(md.l, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(md.d_g, 0.67, epsilon = 1e-12);
        assert_eq!(md.delta, 0.0);

        let p = TimeVaryingQuadratic::platoon(0.0, Trajectory::Periodic);
        assert_abs_diff_eq!(p.lambda_max(), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p.lambda_min(), 0.75, epsilon = 1e-12);
    }
}
