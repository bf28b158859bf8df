//! Comparison algorithms: projected gradient on a one-fits-all synthetic
//! user model, and zeroth-order methods that difference consecutive feedback.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::agp::{FeedbackStream, LoopSetup, StepOutcome};
use crate::error::{Error, Result};
use crate::objectives::Tick;
use crate::solver::{run_inner, BoxDomain, FnSmooth, SolverConfig};
use crate::objectives::EngineeringObjective;

/// Decisions below this are clamped before evaluating log-normal users.
pub const MIN_DECISION: f64 = 1e-3;

/// Decision spreads below this suppress zeroth-order quotients.
pub const SPREAD_GUARD: f64 = 1e-4;

/// `exp(−ln²d/ξ²)/(ξd)` with `d` clamped to at least [`MIN_DECISION`].
pub fn lognormal_value(xi: f64, d: f64) -> f64 {
    let d = d.max(MIN_DECISION);
    let l = d.ln();
    (-(l * l) / (xi * xi)).exp() / (xi * d)
}

/// Derivative of [`lognormal_value`] at the clamped decision.
pub fn lognormal_grad(xi: f64, d: f64) -> f64 {
    let d = d.max(MIN_DECISION);
    -lognormal_value(xi, d) / d * (1.0 + 2.0 * d.ln() / (xi * xi))
}

/// Maximizer `exp(−ξ²/2)` of the log-normal profile.
pub fn lognormal_argmax(xi: f64) -> f64 {
    (-0.5 * xi * xi).exp()
}

/// The same log-normal shape assumed for every user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUserModel {
    pub xi: Vec<f64>,
}

impl SyntheticUserModel {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.is_empty() || xi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("shape parameters must be positive"));
        }
        Ok(Self { xi })
    }

    /// `ξ = 0.9` for each of `m` users.
    pub fn uniform(m: usize) -> Self {
        Self { xi: vec![0.9; m] }
    }

    fn check(d: f64) -> Result<f64> {
        let d = d.max(MIN_DECISION);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::invalid(format!("cannot evaluate the synthetic model at {d}")))
        }
    }

    pub fn value(&self, user: usize, d: f64) -> Result<f64> {
        Ok(lognormal_value(self.xi[user], Self::check(d)?))
    }

    pub fn grad(&self, user: usize, d: f64) -> Result<f64> {
        Ok(lognormal_grad(self.xi[user], Self::check(d)?))
    }
}

/// One tick of projected gradient on `V + γ Σ U_syn`; no feedback consumed.
pub fn synthetic_pgd_step(
    x: &[f64],
    objective: &dyn EngineeringObjective,
    model: &SyntheticUserModel,
    solver: &SolverConfig,
    domain: &BoxDomain,
    tick: Tick,
) -> Vec<f64> {
    let gamma = objective.user_weight();
    let phi = FnSmooth::new(
        domain.dim(),
        |x: &[f64]| {
            objective.value(x, tick)
                + gamma
                    * x.iter()
                        .zip(&model.xi)
                        .map(|(d, xi)| lognormal_value(*xi, *d))
                        .sum::<f64>()
        },
        |x: &[f64]| {
            let mut g = objective.grad(x, tick);
            for ((gi, d), xi) in g.iter_mut().zip(x).zip(&model.xi) {
                *gi += gamma * lognormal_grad(*xi, *d);
            }
            g
        },
    );
    run_inner(&phi, x, solver, domain)
}

/// Buffer length of a zeroth-order estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroOrder {
    TwoPoint,
    FourPoint,
}

impl ZeroOrder {
    pub fn points(self) -> usize {
        match self {
            Self::TwoPoint => 2,
            Self::FourPoint => 4,
        }
    }
}

/// Recent `(decision, feedback)` pairs per user.
#[derive(Debug, Clone)]
pub struct ZeroOrderState {
    order: ZeroOrder,
    buffers: Vec<VecDeque<(f64, f64)>>,
}

impl ZeroOrderState {
    pub fn new(order: ZeroOrder, users: usize) -> Self {
        Self {
            order,
            buffers: vec![VecDeque::with_capacity(order.points()); users],
        }
    }

    pub fn push(&mut self, user: usize, d: f64, y: f64) {
        let buf = &mut self.buffers[user];
        if buf.len() == self.order.points() {
            buf.pop_front();
        }
        buf.push_back((d, y));
    }

    pub fn is_full(&self, user: usize) -> bool {
        self.buffers[user].len() == self.order.points()
    }

    /// Slope estimate for `user`; 0 until the buffer is full or when the
    /// buffered decisions are closer than [`SPREAD_GUARD`].
    pub fn grad(&self, user: usize) -> f64 {
        if !self.is_full(user) {
            return 0.0;
        }
        let buf = &self.buffers[user];
        match self.order {
            ZeroOrder::TwoPoint => {
                let (d0, y0) = buf[0];
                let (d1, y1) = buf[1];
                if (d1 - d0).abs() < SPREAD_GUARD {
                    0.0
                } else {
                    (y1 - y0) / (d1 - d0)
                }
            }
            ZeroOrder::FourPoint => {
                let (lo, hi) = buf
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (d, _)| (a.min(*d), b.max(*d)));
                if hi - lo < SPREAD_GUARD {
                    return 0.0;
                }
                let n = buf.len() as f64;
                let dm = buf.iter().map(|p| p.0).sum::<f64>() / n;
                let ym = buf.iter().map(|p| p.1).sum::<f64>() / n;
                let sxy: f64 = buf.iter().map(|(d, y)| (d - dm) * (y - ym)).sum();
                let sxx: f64 = buf.iter().map(|(d, _)| (d - dm) * (d - dm)).sum();
                sxy / sxx
            }
        }
    }
}

/// Runs the synthetic-model baseline for `horizon` ticks.
pub fn run_synthetic(
    horizon: u64,
    seed: u64,
    setup: &LoopSetup<'_>,
    model: &SyntheticUserModel,
) -> Result<Vec<StepOutcome>> {
    setup.validate()?;
    if model.xi.len() != setup.users.len() {
        return Err(Error::invalid("synthetic model needs one shape per user"));
    }
    // The stream is consumed only to keep the feedback flags comparable.
    let mut stream = FeedbackStream::new(setup.users.schedule, setup.users.len(), seed);
    let mut x = setup.x0.clone();
    let mut log = Vec::with_capacity(horizon as usize);
    let mut n = 1;
    for k in 1..=horizon {
        let tick = Tick::at(k, setup.dt);
        x = synthetic_pgd_step(&x, setup.objective, model, &setup.solver, &setup.domain, tick);
        let feedback = stream.draw(k).feedback;
        log.push(StepOutcome {
            k,
            n,
            t: tick.t,
            x: x.clone(),
            feedback,
            y: Vec::new(),
            beta: 0.0,
        });
        if feedback {
            n += 1;
        }
    }
    Ok(log)
}

/// Runs a zeroth-order baseline; feedback must arrive every tick.
pub fn run_zero_order(horizon: u64, seed: u64, setup: &LoopSetup<'_>, order: ZeroOrder) -> Result<Vec<StepOutcome>> {
    setup.validate()?;
    if !setup.users.schedule.is_every_step() {
        return Err(Error::config(
            "schedule",
            "zeroth-order baselines need feedback at every step",
        ));
    }
    let m = setup.users.len();
    let mut stream = FeedbackStream::new(setup.users.schedule, m, seed);
    let mut state = ZeroOrderState::new(order, m);
    let gamma = setup.objective.user_weight();
    let mut x = setup.x0.clone();
    let mut log = Vec::with_capacity(horizon as usize);
    for k in 1..=horizon {
        let tick = Tick::at(k, setup.dt);
        let est: Vec<f64> = (0..m).map(|i| state.grad(i)).collect();
        let objective = setup.objective;
        let phi = FnSmooth::new(
            m,
            |x: &[f64]| objective.value(x, tick) + gamma * x.iter().zip(&est).map(|(a, b)| a * b).sum::<f64>(),
            |x: &[f64]| {
                let mut g = objective.grad(x, tick);
                for (gi, e) in g.iter_mut().zip(&est) {
                    *gi += gamma * e;
                }
                g
            },
        );
        x = run_inner(&phi, &x, &setup.solver, &setup.domain);
        let draw = stream.draw(k);
        let y: Vec<f64> = setup
            .users
            .per_user(&x)
            .iter()
            .zip(&draw.noise)
            .map(|(u, e)| u + setup.users.noise_std * e)
            .collect();
        for (i, (d, yi)) in x.iter().zip(&y).enumerate() {
            state.push(i, *d, *yi);
        }
        log.push(StepOutcome {
            k,
            n: k,
            t: tick.t,
            x: x.clone(),
            feedback: true,
            y,
            beta: 0.0,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lognormal_examples() {
        assert_abs_diff_eq!(lognormal_value(0.9, 1.0), 1.0 / 0.9, epsilon = 1e-15);
        for i in 0..200 {
            let d = 0.05 + 0.95 * i as f64 / 199.0;
            let h = 1e-6;
            let fd = (lognormal_value(0.9, d + h) - lognormal_value(0.9, d - h)) / (2.0 * h);
            assert!((fd - lognormal_grad(0.9, d)).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        assert_abs_diff_eq!(lognormal_grad(0.9, lognormal_argmax(0.9)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_order_examples() {
        let mut s = ZeroOrderState::new(ZeroOrder::TwoPoint, 1);
        s.push(0, 0.3, 0.6);
        assert_eq!(s.grad(0), 0.0);
        s.push(0, 0.5, 1.0);
        assert_abs_diff_eq!(s.grad(0), 2.0, epsilon = 1e-12);

        let mut s = ZeroOrderState::new(ZeroOrder::FourPoint, 1);
        for d in [0.1, 0.2, 0.4, 0.7] {
            s.push(0, d, 2.0 * d);
        }
        assert_abs_diff_eq!(s.grad(0), 2.0, epsilon = 1e-12);

        let mut s = ZeroOrderState::new(ZeroOrder::FourPoint, 1);
        for y in [0.1, 0.5, 0.2, 0.9] {
            s.push(0, 0.4, y);
        }
        assert_eq!(s.grad(0), 0.0);
    }

    #[test]
    fn synthetic_rejects_bad_shapes() {
        assert!(SyntheticUserModel::new(vec![]).is_err());
        assert!(SyntheticUserModel::new(vec![0.9, -1.0]).is_err());
        assert_eq!(SyntheticUserModel::uniform(2).value(0, 1.0).unwrap(), 1.0 / 0.9);
    }
}
