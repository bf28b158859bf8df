//! Gaussian-process posterior with incremental Cholesky updates.
//!
//! The factor `L` of `K_n + σ²I` grows by one row per observation, which
//! keeps an update at `O(n²)`. Besides `L` we keep the whitened targets
//! `z = L⁻¹ y`, so that with `v = L⁻¹ k_n(x)`:
//!
//! ```text
//! μ_n(x)  = vᵀ z
//! σ_n²(x) = k(x, x) − vᵀ v
//! ```

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{dot, PackedLower};
use crate::solver::BoxDomain;

/// Floor applied to `σ_n(x)` before dividing by it in the std gradient.
pub const STD_FLOOR: f64 = 1e-9;

/// Diagonal jitter used when factorizing lattice Gram matrices.
pub const LATTICE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// Posterior quantities at a single point, computed in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPosterior {
    pub mean: f64,
    pub var: f64,
    pub mean_grad: Vec<f64>,
    pub var_grad: Vec<f64>,
}

impl LocalPosterior {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    /// `∇σ = ∇σ² / (2σ)` with `σ` floored at [`STD_FLOOR`].
    pub fn std_grad(&self) -> Vec<f64> {
        let s = self.std().max(STD_FLOOR);
        self.var_grad.iter().map(|g| g / (2.0 * s)).collect()
    }
}

/// GP posterior conditioned on noisy observations `y_i = U(x_i) + ε_i`.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: KernelSpec,
    noise_variance: f64,
    dim: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    factor: PackedLower,
    whitened: Vec<f64>,
    weights: OnceLock<Vec<f64>>,
    // bumped whenever the factor is rebuilt rather than extended
    generation: u64,
    // L⁻¹ [k_n(x), ∂k_n(x)] at the most recent input, reused by `local`
    last_solve: Option<Vec<Vec<f64>>>,
}

impl GpPosterior {
    /// Prior `GP(0, k)` with Gaussian noise variance `σ²`.
    pub fn new(kernel: KernelSpec, noise_variance: f64, dim: usize) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        Ok(Self {
            kernel,
            noise_variance,
            dim,
            inputs: Vec::new(),
            outputs: Vec::new(),
            factor: PackedLower::default(),
            whitened: Vec::new(),
            weights: OnceLock::new(),
            generation: 0,
            last_solve: None,
        })
    }

    /// Fits on a batch by factorizing the full Gram matrix once.
    pub fn from_observations(
        kernel: KernelSpec,
        noise_variance: f64,
        dim: usize,
        observations: &[Observation],
    ) -> Result<Self> {
        let mut post = Self::new(kernel, noise_variance, dim)?;
        for o in observations {
            check_dim(dim, o.x.len())?;
            post.inputs.extend_from_slice(&o.x);
            post.outputs.push(o.y);
        }
        post.refactorize(0.0)?;
        Ok(post)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of conditioning observations.
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.len())
            .map(|i| Observation::new(self.input(i).to_vec(), self.outputs[i]))
            .collect()
    }

    /// Conditions on one more observation in place.
    pub fn update(&mut self, obs: &Observation) -> Result<()> {
        check_dim(self.dim, obs.x.len())?;
        let n = self.len();
        let mut rhs = self.cross_rhs(&obs.x);
        self.factor.forward_solve_many(&mut rhs);
        let row = &rhs[0];
        let schur = self.kernel.diag() + self.noise_variance - dot(row, row);

        self.inputs.extend_from_slice(&obs.x);
        self.outputs.push(obs.y);
        self.weights = OnceLock::new();

        if schur > 0.0 && schur.is_finite() {
            let diag = schur.sqrt();
            let z = (obs.y - dot(row, &self.whitened)) / diag;
            let mut full = row.clone();
            full.push(diag);
            self.factor.push_row(&full);
            self.whitened.push(z);
            // Complete the cached solves with the entry for the new row.
            let mut g = vec![0.0; self.dim];
            let k = self.kernel.grad_x_into(&obs.x, &obs.x, &mut g);
            for (b, c) in rhs.iter_mut().zip(std::iter::once(k).chain(g)) {
                b.push(c);
            }
            self.factor.forward_step_many(n, &mut rhs);
            self.last_solve = Some(rhs);
            Ok(())
        } else {
            // Rank-one extension lost positivity to rounding; rebuild from scratch.
            self.refactorize(LATTICE_JITTER)
        }
    }

    // [k_n(x), ∂k_n(x)/∂x_1, …, ∂k_n(x)/∂x_d] over the current inputs.
    fn cross_rhs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let (n, d) = (self.len(), self.dim);
        let mut rhs = vec![vec![0.0; n]; d + 1];
        let mut g = vec![0.0; d];
        for i in 0..n {
            rhs[0][i] = self.kernel.grad_x_into(x, self.input(i), &mut g);
            for j in 0..d {
                rhs[1 + j][i] = g[j];
            }
        }
        rhs
    }

    /// Value-style update: returns the posterior conditioned on one more point.
    pub fn with_observation(&self, obs: &Observation) -> Result<Self> {
        let mut next = self.clone();
        next.update(obs)?;
        Ok(next)
    }

    fn refactorize(&mut self, jitter: f64) -> Result<()> {
        let n = self.len();
        let factor = PackedLower::cholesky(n, |i, j| {
            let k = self.kernel.eval_unchecked(self.input(i), self.input(j));
            if i == j {
                k + self.noise_variance + jitter
            } else {
                k
            }
        })
        .map_err(|e| Error::Numerical(format!("GP factorization failed with {n} observations: {e}")))?;
        let mut z = self.outputs.clone();
        factor.forward_solve(&mut z);
        self.factor = factor;
        self.whitened = z;
        self.weights = OnceLock::new();
        self.last_solve = None;
        self.generation += 1;
        Ok(())
    }

    /// Solution `w` of `(K_n + σ²I) w = y_n`.
    pub fn weights(&self) -> &[f64] {
        self.weights.get_or_init(|| {
            let mut w = self.whitened.clone();
            self.factor.backward_solve(&mut w);
            w
        })
    }

    /// Lower-triangular factor of `K_n + σ²I` as a dense matrix.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if j <= i { self.factor.row(i)[j] } else { 0.0 })
    }

    /// `k_n(x) = [k(x_1, x), …, k(x_n, x)]`.
    pub fn cross_kernel(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.kernel.eval_unchecked(self.input(i), x)).collect()
    }

    /// Posterior mean `μ_n(x) = k_n(x)ᵀ (K_n + σ²I)⁻¹ y_n`.
    pub fn posterior_mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        if self.is_empty() {
            return Ok(0.0);
        }
        Ok(dot(&self.cross_kernel(x), self.weights()))
    }

    /// Posterior variance `σ_n²(x)`, clamped to `[0, k(x, x)]`.
    pub fn posterior_var(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let prior = self.kernel.diag();
        if self.is_empty() {
            return Ok(prior);
        }
        let mut v = self.cross_kernel(x);
        self.factor.forward_solve(&mut v);
        Ok((prior - dot(&v, &v)).clamp(0.0, prior))
    }

    pub fn posterior_std(&self, x: &[f64]) -> Result<f64> {
        Ok(self.posterior_var(x)?.sqrt())
    }

    /// Mean, variance and their gradients at `x` with one sweep over the factor.
    pub fn local(&self, x: &[f64]) -> Result<LocalPosterior> {
        check_dim(self.dim, x.len())?;
        let d = self.dim;
        let prior = self.kernel.diag();
        let n = self.len();
        if n == 0 {
            return Ok(LocalPosterior {
                mean: 0.0,
                var: prior,
                mean_grad: vec![0.0; d],
                var_grad: vec![0.0; d],
            });
        }
        let cached = match &self.last_solve {
            Some(c) if self.input(n - 1) == x => Some(c),
            _ => None,
        };
        let fresh;
        let rhs = match cached {
            Some(c) => c,
            None => {
                let mut r = self.cross_rhs(x);
                self.factor.forward_solve_many(&mut r);
                fresh = r;
                &fresh
            }
        };
        let v = &rhs[0];
        let mean = dot(v, &self.whitened);
        let var = (prior - dot(v, v)).clamp(0.0, prior);
        let mean_grad = rhs[1..].iter().map(|u| dot(u, &self.whitened)).collect();
        let var_grad = rhs[1..].iter().map(|u| -2.0 * dot(v, u)).collect();
        Ok(LocalPosterior {
            mean,
            var,
            mean_grad,
            var_grad,
        })
    }

    pub fn posterior_mean_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.local(x)?.mean_grad)
    }

    pub fn posterior_std_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.local(x)?.std_grad())
    }
}

/// Posterior mean and variance on a fixed probe set, maintained incrementally
/// as the tracked posterior grows. Each new observation costs `O(n·|P|)`.
#[derive(Debug, Clone)]
pub struct ProbeTracker {
    probes: Vec<Vec<f64>>,
    // rows of L⁻¹ K(A_n, P)
    rows: Vec<Vec<f64>>,
    means: Vec<f64>,
    vars: Vec<f64>,
    generation: u64,
}

impl ProbeTracker {
    pub fn new(kernel: &KernelSpec, probes: Vec<Vec<f64>>) -> Self {
        let p = probes.len();
        Self {
            probes,
            rows: Vec::new(),
            means: vec![0.0; p],
            vars: vec![kernel.diag(); p],
            generation: 0,
        }
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    /// Absorbs any observations the posterior gained since the last sync.
    pub fn sync(&mut self, post: &GpPosterior) {
        let prior = post.kernel.diag();
        if self.generation != post.generation {
            self.rows.clear();
            self.means.iter_mut().for_each(|m| *m = 0.0);
            self.vars.iter_mut().for_each(|v| *v = prior);
            self.generation = post.generation;
        }
        while self.rows.len() < post.len() {
            let r = self.rows.len();
            let lrow = post.factor.row(r);
            let xr = post.input(r);
            let zr = post.whitened[r];
            let mut new_row = Vec::with_capacity(self.probes.len());
            for (p, probe) in self.probes.iter().enumerate() {
                let mut s = post.kernel.eval_unchecked(xr, probe);
                for (q, prev) in self.rows.iter().enumerate() {
                    s -= lrow[q] * prev[p];
                }
                let v = s / lrow[r];
                self.means[p] += v * zr;
                self.vars[p] = (self.vars[p] - v * v).clamp(0.0, prior);
                new_row.push(v);
            }
            self.rows.push(new_row);
        }
    }
}

/// A draw from a zero-mean GP over a box, exact on a lattice and extended
/// off-lattice by noise-free conditioning on the lattice values.
#[derive(Debug, Clone)]
pub struct SamplePath {
    kernel: KernelSpec,
    domain: BoxDomain,
    grid: Vec<Vec<f64>>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl SamplePath {
    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.grid
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * self.kernel.eval_unchecked(x, g))
            .sum()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        for (node, w) in self.grid.iter().zip(&self.weights) {
            self.kernel.grad_x_into(x, node, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += w * gi;
            }
        }
        out
    }
}

/// Factor of a lattice Gram matrix, used to draw joint Gaussian vectors.
pub(crate) struct LatticeSampler {
    factor: PackedLower,
}

impl LatticeSampler {
    /// Factorizes `[cov(g_i, g_j)] + jitter·I`, raising the jitter tenfold
    /// (up to 1e-8) if the factorization breaks down.
    pub fn new(points: &[Vec<f64>], cov: impl Fn(&[f64], &[f64]) -> f64) -> Result<Self> {
        let n = points.len();
        let mut jitter = LATTICE_JITTER;
        loop {
            match PackedLower::cholesky(n, |i, j| {
                let c = cov(&points[i], &points[j]);
                if i == j {
                    c + jitter
                } else {
                    c
                }
            }) {
                Ok(factor) => return Ok(Self { factor }),
                Err(e) if jitter >= 1e-8 => {
                    return Err(Error::Numerical(format!(
                        "lattice Gram matrix not positive definite even with jitter {jitter:e}: {e}"
                    )))
                }
                Err(_) => jitter *= 10.0,
            }
        }
    }

    pub fn standard_normals(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.factor.len()).map(|_| StandardNormal.sample(rng)).collect()
    }

    /// `L z` for a standard-normal `z`.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = self.standard_normals(rng);
        self.factor.mul_vec(&z)
    }
}

/// Draws GP sample paths over a fixed lattice, factorizing the Gram matrix once.
///
/// With `L Lᵀ = K + jitter·I` and `z ~ N(0, I)`, a path is
/// `U(x) = k(x, G)ᵀ w` where `w = L⁻ᵀ z`. This is the noise-free conditional
/// mean given the lattice draw `L z`; lattice values are stored as `U`
/// evaluated at the nodes, which differ from `L z` by `jitter · w`.
pub struct PathSampler {
    kernel: KernelSpec,
    domain: BoxDomain,
    grid: Vec<Vec<f64>>,
    // Gram matrix of the lattice, row-major
    gram: Vec<f64>,
    sampler: LatticeSampler,
}

impl PathSampler {
    /// Lattice with `grid_resolution` nodes per axis over `domain` (dimension ≤ 2).
    pub fn new(kernel: KernelSpec, domain: &BoxDomain, grid_resolution: usize) -> Result<Self> {
        kernel.validate()?;
        if domain.dim() > 2 {
            return Err(Error::Unsupported(format!(
                "lattice sample paths support dimension ≤ 2, got {}",
                domain.dim()
            )));
        }
        let grid = domain.lattice(grid_resolution)?;
        let sampler = LatticeSampler::new(&grid, |a, b| kernel.eval_unchecked(a, b))?;
        let gram = grid
            .iter()
            .flat_map(|a| grid.iter().map(|b| kernel.eval_unchecked(a, b)))
            .collect();
        Ok(Self {
            kernel,
            domain: domain.clone(),
            grid,
            gram,
            sampler,
        })
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    /// Path values at the lattice nodes for `seed`, without building the path.
    pub fn lattice_draw(&self, seed: u64) -> Vec<f64> {
        let w = self.weights(seed);
        self.node_values(&w)
    }

    /// The path for `seed`.
    pub fn path(&self, seed: u64) -> SamplePath {
        let w = self.weights(seed);
        SamplePath {
            kernel: self.kernel,
            domain: self.domain.clone(),
            grid: self.grid.clone(),
            values: self.node_values(&w),
            weights: w,
        }
    }

    // The lattice draw is L z with L Lᵀ = K + jI; conditioning on it gives
    // interpolation weights (K + jI)⁻¹ L z = L⁻ᵀ z.
    fn weights(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = self.sampler.standard_normals(&mut rng);
        self.sampler.factor.backward_solve(&mut w);
        w
    }

    // Interpolant at the nodes, K w; equal to L z up to a jitter-sized term.
    fn node_values(&self, w: &[f64]) -> Vec<f64> {
        self.gram.chunks_exact(w.len()).map(|row| dot(row, w)).collect()
    }
}

/// Draws a GP sample path over `domain` (dimension ≤ 2) on a lattice with
/// `grid_resolution` nodes per axis. See [`PathSampler`].
pub fn sample_path(kernel: KernelSpec, domain: &BoxDomain, grid_resolution: usize, seed: u64) -> Result<SamplePath> {
    Ok(PathSampler::new(kernel, domain, grid_resolution)?.path(seed))
}

/// Among the paths for seeds `first_seed..first_seed + candidates` whose
/// lattice draw passes `admissible`, returns the seed closest in squared
/// error to `profile`, skipping seeds listed in `exclude`.
pub fn closest_path_seed(
    sampler: &PathSampler,
    profile: impl Fn(&[f64]) -> f64,
    admissible: impl Fn(&[f64]) -> bool,
    first_seed: u64,
    candidates: u64,
    exclude: &[u64],
) -> Result<u64> {
    let target: Vec<f64> = sampler.grid().iter().map(|g| profile(g)).collect();
    let mut best = None;
    for seed in first_seed..first_seed.saturating_add(candidates) {
        if exclude.contains(&seed) {
            continue;
        }
        let draw = sampler.lattice_draw(seed);
        if !admissible(&draw) {
            continue;
        }
        let err: f64 = draw
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((seed, err));
        }
    }
    best.map(|(s, _)| s)
        .ok_or_else(|| Error::invalid("no admissible candidate among the seeds searched"))
}
