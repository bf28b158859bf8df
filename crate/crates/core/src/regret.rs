//! Regret accounting against a grid oracle, greedy information gain, the
//! computable part of the high-probability regret bound, and diagnostics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::agp::{Beliefs, UserModel};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, ProbeTracker};
use crate::kernels::KernelSpec;
use crate::objectives::{EngineeringObjective, Tick, TimeVaryingQuadratic};
use crate::solver::{maximize_on_box, polish, BoxDomain, Smooth};
use crate::ucb::{beta, ConfidenceParams};

/// `f(x; t) = V(x; t) + γ Σ U_i(x_i)` at a fixed tick.
pub struct TrueObjective<'a> {
    pub objective: &'a dyn EngineeringObjective,
    pub users: &'a UserModel,
    pub tick: Tick,
}

impl Smooth for TrueObjective<'_> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.objective.value(x, self.tick) + self.objective.user_weight() * self.users.total(x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let gamma = self.objective.user_weight();
        let mut g = self.objective.grad(x, self.tick);
        for (a, b) in g.iter_mut().zip(self.users.total_grad(x)) {
            *a += gamma * b;
        }
        g
    }
}

/// Maximum of `f` over the box: lattice search plus a projected-gradient polish.
pub fn oracle_opt<F: Smooth + ?Sized>(
    f: &F,
    domain: &BoxDomain,
    grid_resolution: usize,
    polish_steps: usize,
) -> Result<(Vec<f64>, f64)> {
    maximize_on_box(f, domain, grid_resolution, polish_steps)
}

/// Per-tick optima `(x*_k, f*_k)` for `k = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumTable {
    pub x_star: Vec<Vec<f64>>,
    pub f_star: Vec<f64>,
}

impl OptimumTable {
    /// Solves the oracle once per distinct target. For two or fewer users
    /// the lattice search reads user utilities from per-axis tables.
    pub fn compute(
        objective: &TimeVaryingQuadratic,
        users: &UserModel,
        domain: &BoxDomain,
        horizon: u64,
        dt: f64,
        grid_resolution: usize,
        polish_steps: usize,
    ) -> Result<Self> {
        let m = users.len();
        if m != domain.dim() || m != objective.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: m,
            });
        }
        let gamma = objective.gamma();
        let axes: Vec<Vec<f64>> = (0..m)
            .map(|i| crate::solver::linspace(domain.lo()[i], domain.hi()[i], grid_resolution))
            .collect();
        let tables: Vec<Vec<f64>> = axes
            .iter()
            .zip(&users.truths)
            .map(|(axis, u)| axis.iter().map(|d| gamma * u.value(*d)).collect())
            .collect();
        let mut cache: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
        let mut x_star = Vec::with_capacity(horizon as usize);
        let mut f_star = Vec::with_capacity(horizon as usize);
        for k in 1..=horizon {
            let tick = Tick::at(k, dt);
            let target = objective.target(tick);
            let key: Vec<u64> = target.iter().map(|v| v.to_bits()).collect();
            let entry = match cache.get(&key) {
                Some(e) => e.clone(),
                None => {
                    let f = TrueObjective {
                        objective,
                        users,
                        tick,
                    };
                    let e = if m <= 2 {
                        let (x0, f0) = lattice_argmax(objective, &target, &axes, &tables);
                        polish(&f, domain, x0, f0, polish_steps)
                    } else {
                        oracle_opt(&f, domain, grid_resolution, polish_steps)?
                    };
                    cache.insert(key, e.clone());
                    e
                }
            };
            x_star.push(entry.0);
            f_star.push(entry.1);
        }
        Ok(Self { x_star, f_star })
    }

    /// Optimum at tick `k` (1-based).
    pub fn at(&self, k: u64) -> (&[f64], f64) {
        let i = (k - 1) as usize;
        (&self.x_star[i], self.f_star[i])
    }

    pub fn len(&self) -> usize {
        self.f_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_star.is_empty()
    }
}

fn lattice_argmax(
    objective: &TimeVaryingQuadratic,
    target: &[f64],
    axes: &[Vec<f64>],
    tables: &[Vec<f64>],
) -> (Vec<f64>, f64) {
    let q = objective.q();
    if axes.len() == 1 {
        let (i, f) = axes[0]
            .iter()
            .zip(&tables[0])
            .map(|(d, u)| {
                let r = d - target[0];
                -0.5 * q[(0, 0)] * r * r + u
            })
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        return (vec![axes[0][i]], f);
    }
    let (q00, q01, q11) = (q[(0, 0)], q[(0, 1)], q[(1, 1)]);
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, (a, ua)) in axes[0].iter().zip(&tables[0]).enumerate() {
        let ra = a - target[0];
        let base = -0.5 * q00 * ra * ra + ua;
        for (j, (b, ub)) in axes[1].iter().zip(&tables[1]).enumerate() {
            let rb = b - target[1];
            let v = base - q01 * ra * rb - 0.5 * q11 * rb * rb + ub;
            if v > best.2 {
                best = (i, j, v);
            }
        }
    }
    (vec![axes[0][best.0], axes[1][best.1]], best.2)
}

/// Instantaneous, cumulative and average regret of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub f_star: Vec<f64>,
    pub f_x: Vec<f64>,
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `r = f* − f(x)` and extends the running sum left to right.
    pub fn push(&mut self, f_star: f64, f_x: f64) {
        let r = f_star - f_x;
        let cum = self.cumulative.last().copied().unwrap_or(0.0) + r;
        self.f_star.push(f_star);
        self.f_x.push(f_x);
        self.instant.push(r);
        self.cumulative.push(cum);
    }

    pub fn len(&self) -> usize {
        self.instant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instant.is_empty()
    }

    /// `R_T`.
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// `R_T / T` for every prefix.
    pub fn average(&self) -> Vec<f64> {
        self.cumulative
            .iter()
            .enumerate()
            .map(|(i, c)| c / (i + 1) as f64)
            .collect()
    }
}

/// Relative posterior variance below which greedy selection stops refining.
const EXHAUSTED_VARIANCE: f64 = 1e-12;

/// Greedy estimate of `γ_t` for `t = 1..=horizon`: each step observes the
/// lattice point of largest posterior variance (without repeats) and adds
/// `½ log(1 + σ⁻² σ²_{t−1}(x_t))`.
pub fn info_gain_greedy(
    kernel: &KernelSpec,
    domain: &BoxDomain,
    grid_resolution: usize,
    horizon: usize,
    noise_std: f64,
) -> Result<Vec<f64>> {
    kernel.validate()?;
    if !(noise_std > 0.0) {
        return Err(Error::invalid("noise_std must be positive"));
    }
    let grid = domain.lattice(grid_resolution)?;
    let n = grid.len();
    if horizon > n {
        return Err(Error::invalid(format!(
            "horizon {horizon} exceeds the {n} lattice points"
        )));
    }
    let s2 = noise_std * noise_std;
    let mut var = vec![kernel.diag(); n];
    let mut chosen = vec![false; n];
    // columns[t][j] = Σ_{t}(j, p_t) / √(σ²_t(p_t) + σ²)
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut gains = Vec::with_capacity(horizon);
    let mut total = 0.0;
    for t in 0..horizon {
        let vmax = (0..n).filter(|j| !chosen[*j]).map(|j| var[j]).fold(0.0, f64::max);
        if vmax <= EXHAUSTED_VARIANCE * kernel.diag() {
            // Remaining variance is at rounding level: every further increment
            // is at most ½ log(1 + σ⁻² vmax), which is used for the rest.
            let inc = 0.5 * (1.0 + vmax / s2).ln();
            for _ in t..horizon {
                total += inc;
                gains.push(total);
            }
            break;
        }
        let p = (0..n)
            .filter(|j| !chosen[*j])
            .fold((usize::MAX, f64::NEG_INFINITY), |best, j| if var[j] > best.1 { (j, var[j]) } else { best })
            .0;
        chosen[p] = true;
        let vp = var[p].max(0.0);
        total += 0.5 * (1.0 + vp / s2).ln();
        gains.push(total);
        let scale = (vp + s2).sqrt();
        let col: Vec<f64> = (0..n)
            .map(|j| {
                let mut c = kernel.eval_unchecked(&grid[j], &grid[p]);
                for prev in &columns {
                    c -= prev[j] * prev[p];
                }
                c / scale
            })
            .collect();
        for (v, c) in var.iter_mut().zip(&col) {
            *v = (*v - c * c).max(0.0);
        }
        columns.push(col);
    }
    Ok(gains)
}

/// Computable ingredients of the regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub horizon: u64,
    pub delta: f64,
    /// Feedback noise standard deviation.
    pub sigma: f64,
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub l: f64,
    pub d_g: f64,
    /// Drift bound `Δ`.
    pub drift: f64,
    pub eta: f64,
    pub gamma_t: f64,
}

impl BoundInputs {
    pub fn confidence(&self) -> ConfidenceParams {
        ConfidenceParams {
            delta: self.delta,
            d: self.d,
            a: self.a,
            b: self.b,
            r: self.r,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("η must lie in [0, 1), got {}", self.eta)));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("l", self.l),
            ("d_g", self.d_g),
            ("drift", self.drift),
            ("gamma_t", self.gamma_t),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.sigma == 0.0 {
            return Err(Error::invalid("sigma must be positive"));
        }
        self.confidence().validate()
    }
}

/// `C₁ = 8 / log(1 + σ⁻¹)`.
pub fn c1(sigma: f64) -> f64 {
    8.0 / (1.0 + 1.0 / sigma).ln()
}

/// `C₂ = 2D_g/(b√log(2da/δ)) + 2L/(2db² log(2da/δ)) + 2`.
pub fn c2(b: &BoundInputs) -> Result<f64> {
    let d = b.d as f64;
    let lg = (2.0 * d * b.a / b.delta).ln();
    if lg <= 0.0 {
        return Err(Error::invalid("2da/δ must exceed 1"));
    }
    Ok(2.0 * b.d_g / (b.b * lg.sqrt()) + 2.0 * b.l / (2.0 * d * b.b * b.b * lg) + 2.0)
}

/// `G_T ≤ 2ΔηT/(1 − η)`.
pub fn g_t(drift: f64, eta: f64, horizon: u64) -> f64 {
    2.0 * drift * eta * horizon as f64 / (1.0 - eta)
}

/// Breakdown of [`theoretical_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub beta_t: f64,
    pub learning: f64,
    pub c2: f64,
    pub g_t: f64,
    pub total: f64,
}

/// `√(C₁ T β_T γ_T) + C₂ + G_T`; the solver-inexactness term has no
/// computable constant and is left out.
pub fn theoretical_bound(b: &BoundInputs) -> Result<BoundTerms> {
    b.validate()?;
    let beta_t = beta(b.horizon, &b.confidence())?;
    let learning = (c1(b.sigma) * b.horizon as f64 * beta_t * b.gamma_t).sqrt();
    let c2 = c2(b)?;
    let g = g_t(b.drift, b.eta, b.horizon);
    Ok(BoundTerms {
        beta_t,
        learning,
        c2,
        g_t: g,
        total: learning + c2 + g,
    })
}

/// Bound when between `p` and `q ≥ p` solver steps separate consecutive
/// feedback: `η → η^p` and `Δ → Δ(1 − η^q)/(1 − η)`.
pub fn theoretical_bound_intermittent(b: &BoundInputs, p: u32, q: u32) -> Result<BoundTerms> {
    if p == 0 || q < p {
        return Err(Error::invalid(format!("need 1 ≤ p ≤ q, got p = {p}, q = {q}")));
    }
    b.validate()?;
    let drift = if b.eta == 0.0 {
        b.drift
    } else {
        b.drift * (1.0 - b.eta.powi(q as i32)) / (1.0 - b.eta)
    };
    theoretical_bound(&BoundInputs {
        eta: b.eta.powi(p as i32),
        drift,
        ..*b
    })
}

/// `ℓ_n = max_P |Û_n − Û_{n−1}|` for 1-D posteriors on a probe set.
pub fn learning_rate_error(
    post_prev: &GpPosterior,
    beta_prev: f64,
    post_curr: &GpPosterior,
    beta_curr: f64,
    probes: &[Vec<f64>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in probes {
        let a = post_prev.posterior_mean(p)? + beta_prev.sqrt() * post_prev.posterior_std(p)?;
        let b = post_curr.posterior_mean(p)? + beta_curr.sqrt() * post_curr.posterior_std(p)?;
        worst = worst.max((b - a).abs());
    }
    Ok(worst)
}

/// Tracks `ℓ_n` along a run with separable beliefs, probing each user's
/// coordinate on its own 1-D grid. Over the product grid the largest change
/// of `Σ_i Û_i` is attained by combining per-user extremes.
pub struct LearningRateTracker {
    trackers: Vec<ProbeTracker>,
    previous: Vec<Vec<f64>>,
    seen: usize,
    params: ConfidenceParams,
    pub history: Vec<f64>,
}

impl LearningRateTracker {
    pub fn new(kernel: &KernelSpec, domain: &BoxDomain, probes_per_axis: usize, params: ConfidenceParams) -> Self {
        let trackers: Vec<ProbeTracker> = (0..domain.dim())
            .map(|i| {
                let probes = crate::solver::linspace(domain.lo()[i], domain.hi()[i], probes_per_axis)
                    .into_iter()
                    .map(|v| vec![v])
                    .collect();
                ProbeTracker::new(kernel, probes)
            })
            .collect();
        let b1 = beta(1, &params).expect("validated confidence parameters");
        let previous = trackers
            .iter()
            .map(|t| t.vars().iter().map(|v| b1.sqrt() * v.sqrt()).collect())
            .collect();
        Self {
            trackers,
            previous,
            seen: 0,
            params,
            history: Vec::new(),
        }
    }

    /// Records `ℓ` whenever `beliefs` gained data since the last call.
    pub fn observe(&mut self, beliefs: &Beliefs) -> Result<()> {
        let Beliefs::Separable(posts) = beliefs else {
            return Err(Error::Unsupported("learning-rate tracking needs separable beliefs".into()));
        };
        let n = posts.first().map_or(0, GpPosterior::len);
        if n == self.seen {
            return Ok(());
        }
        self.seen = n;
        let sb = beta(n as u64 + 1, &self.params)?.sqrt();
        let (mut hi, mut lo) = (0.0, 0.0);
        for ((tracker, post), prev) in self.trackers.iter_mut().zip(posts).zip(self.previous.iter_mut()) {
            tracker.sync(post);
            let mut dmax = f64::NEG_INFINITY;
            let mut dmin = f64::INFINITY;
            for ((m, v), old) in tracker.means().iter().zip(tracker.vars()).zip(prev.iter_mut()) {
                let u = m + sb * v.sqrt();
                dmax = dmax.max(u - *old);
                dmin = dmin.min(u - *old);
                *old = u;
            }
            hi += dmax;
            lo += dmin;
        }
        self.history.push(f64::max(hi, -lo).max(0.0));
        Ok(())
    }

    /// Partial sums `Σ_{j ≤ n} ℓ_j`.
    pub fn partial_sums(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect()
    }
}

/// Normalizes each user's satisfaction by their attainable maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct UcNormalizer {
    pub maxima: Vec<f64>,
}

impl UcNormalizer {
    /// Per-user maxima by a line search with `resolution` points per axis and
    /// a gradient polish.
    pub fn new(users: &UserModel, domain: &BoxDomain, resolution: usize) -> Result<Self> {
        let mut maxima = Vec::with_capacity(users.len());
        for (i, u) in users.truths.iter().enumerate() {
            let axis = domain.axis(i);
            let f = crate::solver::FnSmooth::new(1, |x: &[f64]| u.value(x[0]), |x: &[f64]| vec![u.grad(x[0])]);
            let (_, best) = maximize_on_box(&f, &axis, resolution, 50)?;
            if !(best > 0.0) {
                return Err(Error::Degenerate(format!(
                    "user {i} has non-positive maximum {best}; satisfaction ratio undefined"
                )));
            }
            maxima.push(best);
        }
        Ok(Self { maxima })
    }

    /// `UC_i = U_i(x_i) / max U_i`.
    pub fn uc(&self, users: &UserModel, x: &[f64]) -> Vec<f64> {
        users
            .per_user(x)
            .iter()
            .zip(&self.maxima)
            .map(|(u, m)| u / m)
            .collect()
    }
}

/// Trailing mean over `window` samples (shorter windows at the start).
pub fn rolling_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, v) in series.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// `c·√(T (log T)²)/T` with `c` fixed so the curve passes through
/// `(t0, value0)`.
pub fn reference_rate(horizons: &[u64], t0: u64, value0: f64) -> Result<Vec<f64>> {
    let shape = |t: u64| {
        let t = t as f64;
        (t * t.ln().powi(2)).sqrt() / t
    };
    let s0 = shape(t0);
    if t0 < 2 || s0 <= 0.0 {
        return Err(Error::invalid("anchor horizon must be at least 2"));
    }
    let c = value0 / s0;
    Ok(horizons.iter().map(|t| c * shape(*t)).collect())
}

/// Mean over the last quarter of `|UC_1 − UC_2|` per step, from per-step
/// satisfaction rows.
pub fn uc_spread_tail(uc: &[Vec<f64>]) -> f64 {
    let start = uc.len() - uc.len() / 4;
    let tail = &uc[start.min(uc.len().saturating_sub(1))..];
    tail.iter()
        .map(|row| {
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .sum::<f64>()
        / tail.len() as f64
}

/// Mean satisfaction over users and the last quarter of steps.
pub fn uc_mean_tail(uc: &[Vec<f64>]) -> f64 {
    let start = uc.len() - uc.len() / 4;
    let tail = &uc[start.min(uc.len().saturating_sub(1))..];
    tail.iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .sum::<f64>()
        / tail.len() as f64
}
