//! Box projection, projected-gradient ascent and PL-inequality diagnostics.
//!
//! All routines maximize. A map `M` is one projected-gradient ascent step
//! `x ← Π_D[x + α ∇φ(x)]`; an inner solve composes it `N_s` times.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::invalid("box domain must have at least one dimension"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::invalid(format!("box bounds invalid on axis {i}: [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Largest side length, the `r` of `D ⊆ [0, r]^d` after translation.
    pub fn side(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    /// Restriction to a single axis, as a one-dimensional box.
    pub fn axis(&self, i: usize) -> BoxDomain {
        BoxDomain {
            lo: vec![self.lo[i]],
            hi: vec![self.hi[i]],
        }
    }

    pub fn project_in_place(&self, y: &mut [f64]) {
        for ((v, l), h) in y.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                    .collect()
            })
            .collect()
    }

    /// Regular lattice with `points_per_axis` nodes per axis, ends included.
    /// The last axis varies fastest.
    pub fn lattice(&self, points_per_axis: usize) -> Result<Vec<Vec<f64>>> {
        if points_per_axis < 2 {
            return Err(Error::invalid("lattice needs at least 2 points per axis"));
        }
        let d = self.dim();
        let total = points_per_axis
            .checked_pow(d as u32)
            .ok_or_else(|| Error::invalid("lattice too large"))?;
        let axes: Vec<Vec<f64>> = (0..d).map(|i| linspace(self.lo[i], self.hi[i], points_per_axis)).collect();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; d];
            for i in (0..d).rev() {
                p[i] = axes[i][rem % points_per_axis];
                rem /= points_per_axis;
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l })
            .collect()
    }
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + step * i as f64 })
        .collect()
}

/// Euclidean projection onto the box.
pub fn project(domain: &BoxDomain, y: &[f64]) -> Vec<f64> {
    domain.project(y)
}

/// Step size and number of inner steps per outer tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    pub ns_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            ns_steps: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.alpha)));
        }
        if self.ns_steps == 0 {
            return Err(Error::invalid("at least one inner step is required"));
        }
        Ok(())
    }
}

/// A differentiable function to be maximized.
pub trait Smooth {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// Adapter turning a pair of closures into a [`Smooth`].
pub struct FnSmooth<V, G> {
    dim: usize,
    value: V,
    grad: G,
}

impl<V, G> FnSmooth<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub fn new(dim: usize, value: V, grad: G) -> Self {
        Self { dim, value, grad }
    }
}

impl<V, G> Smooth for FnSmooth<V, G>
where
    V: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }
}

/// One projected-gradient ascent step.
pub fn pgd_step<F: Smooth + ?Sized>(phi: &F, x: &[f64], alpha: f64, domain: &BoxDomain) -> Vec<f64> {
    let g = phi.grad(x);
    let mut y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + alpha * gi).collect();
    domain.project_in_place(&mut y);
    y
}

/// `N_s` composed projected-gradient steps from `x0`.
pub fn run_inner<F: Smooth + ?Sized>(phi: &F, x0: &[f64], cfg: &SolverConfig, domain: &BoxDomain) -> Vec<f64> {
    let mut x = x0.to_vec();
    for _ in 0..cfg.ns_steps {
        x = pgd_step(phi, &x, cfg.alpha, domain);
    }
    x
}

/// Proximal-gradient PL measure
/// `D(x, c) = −2c · min_{y∈D} { −∇φ(x)ᵀ(y − x) + (c/2)‖y − x‖² }`.
///
/// The inner problem is separable over the box, so its minimizer is
/// `Π_D[x + ∇φ(x)/c]`.
pub fn pl_gap<F: Smooth + ?Sized>(phi: &F, x: &[f64], c: f64, domain: &BoxDomain) -> f64 {
    let g = phi.grad(x);
    pl_gap_from_grad(&g, x, c, domain)
}

pub(crate) fn pl_gap_from_grad(g: &[f64], x: &[f64], c: f64, domain: &BoxDomain) -> f64 {
    let mut obj = 0.0;
    for (i, (xi, gi)) in x.iter().zip(g).enumerate() {
        let yi = (xi + gi / c).clamp(domain.lo[i], domain.hi[i]);
        let s = yi - xi;
        obj += -gi * s + 0.5 * c * s * s;
    }
    (-2.0 * c * obj).max(0.0)
}

/// Empirical PL constant with the contraction factor it induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlEstimate {
    pub kappa: f64,
    pub points_used: usize,
}

impl PlEstimate {
    /// Per-step contraction `η = 1 − ακ̂` of the optimality gap.
    pub fn eta(&self, alpha: f64) -> f64 {
        1.0 - alpha * self.kappa
    }
}

const PL_GAP_FLOOR: f64 = 1e-9;

/// `κ̂ = min ½·D(x, c) / (φ* − φ(x))` over the given points, skipping points
/// whose optimality gap is below `1e-9`.
pub fn estimate_pl_kappa_at<F: Smooth + ?Sized>(
    phi: &F,
    points: &[Vec<f64>],
    c: f64,
    domain: &BoxDomain,
    phi_star: f64,
) -> Result<PlEstimate> {
    let mut kappa = f64::INFINITY;
    let mut used = 0;
    for x in points {
        let gap = phi_star - phi.value(x);
        if gap < PL_GAP_FLOOR {
            continue;
        }
        let ratio = 0.5 * pl_gap(phi, x, c, domain) / gap;
        kappa = kappa.min(ratio);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every sampled point is within 1e-9 of the optimum; PL constant undefined".into(),
        ));
    }
    Ok(PlEstimate {
        kappa,
        points_used: used,
    })
}

/// [`estimate_pl_kappa_at`] on `samples` uniform draws from the box.
pub fn estimate_pl_kappa<F: Smooth + ?Sized>(
    phi: &F,
    domain: &BoxDomain,
    c: f64,
    samples: usize,
    seed: u64,
    phi_star: f64,
) -> Result<PlEstimate> {
    if !(c > 0.0) {
        return Err(Error::invalid("PL constant c must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples).map(|_| domain.sample_uniform(&mut rng)).collect();
    estimate_pl_kappa_at(phi, &points, c, domain, phi_star)
}

/// Global maximum by lattice search followed by a backtracking
/// projected-gradient polish from the best node.
pub fn maximize_on_box<F: Smooth + ?Sized>(
    phi: &F,
    domain: &BoxDomain,
    points_per_axis: usize,
    polish_steps: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut best_x = domain.center();
    let mut best = f64::NEG_INFINITY;
    for p in domain.lattice(points_per_axis)? {
        let v = phi.value(&p);
        if v > best {
            best = v;
            best_x = p;
        }
    }
    Ok(polish(phi, domain, best_x, best, polish_steps))
}

/// Monotone projected-gradient ascent with step halving; never returns a
/// point worse than the start.
pub(crate) fn polish<F: Smooth + ?Sized>(
    phi: &F,
    domain: &BoxDomain,
    mut x: Vec<f64>,
    mut fx: f64,
    steps: usize,
) -> (Vec<f64>, f64) {
    let mut step = 0.1;
    for _ in 0..steps {
        let g = phi.grad(&x);
        let mut improved = false;
        for _ in 0..40 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            domain.project_in_place(&mut y);
            let fy = phi.value(&y);
            if fy > fx {
                x = y;
                fx = fy;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, fx)
}

/// Largest absolute Hessian eigenvalue of `phi` over a probe lattice,
/// from central differences of the gradient with spacing `h`.
pub fn curvature_bound<F: Smooth + ?Sized>(
    phi: &F,
    domain: &BoxDomain,
    probes_per_axis: usize,
    h: f64,
) -> Result<f64> {
    let d = domain.dim();
    let mut worst: f64 = 0.0;
    for p in domain.lattice(probes_per_axis)? {
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            let mut xp = p.clone();
            let mut xm = p.clone();
            xp[i] += h;
            xm[i] -= h;
            let gp = phi.grad(&xp);
            let gm = phi.grad(&xm);
            for j in 0..d {
                hess[(i, j)] = (gp[j] - gm[j]) / (2.0 * h);
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        worst = eig.eigenvalues.iter().fold(worst, |acc, v| acc.max(v.abs()));
    }
    Ok(worst)
}
