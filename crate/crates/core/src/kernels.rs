//! Stationary covariance functions.
//!
//! Only the squared-exponential family ships. The family is an enum so that
//! Matérn variants can be added without touching the GP code, which only
//! needs `eval`, `grad_x` and (for derivative processes) `derivative_kernel`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
}

/// A stationary kernel `k(x, x')` with a shared length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub length_scale: f64,
    #[serde(default = "default_output_variance")]
    pub output_variance: f64,
}

fn default_output_variance() -> f64 {
    1.0
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            length_scale: 1.0,
            output_variance: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, length_scale: f64, output_variance: f64) -> Result<Self> {
        let spec = Self {
            family,
            length_scale,
            output_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(length_scale: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, length_scale, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(Error::invalid(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.output_variance > 0.0 && self.output_variance <= 1.0) {
            return Err(Error::invalid(format!(
                "output variance must lie in (0, 1], got {}",
                self.output_variance
            )));
        }
        Ok(())
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn from_sq_dist(&self, sq_dist: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                let l2 = self.length_scale * self.length_scale;
                self.output_variance * (-0.5 * sq_dist / l2).exp()
            }
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.from_sq_dist(sq_dist(x, y))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Prior variance `k(x, x)`.
    #[inline]
    pub fn diag(&self) -> f64 {
        self.output_variance
    }

    /// Writes `∂k(x, y)/∂x` into `out` and returns `k(x, y)`.
    #[inline]
    pub(crate) fn grad_x_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                let l2 = self.length_scale * self.length_scale;
                let k = self.eval_unchecked(x, y);
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = -(a - b) / l2 * k;
                }
                k
            }
        }
    }

    /// Gradient of `k(x, x')` with respect to its first argument.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), y.len())?;
        let mut out = vec![0.0; x.len()];
        self.grad_x_into(x, y, &mut out);
        Ok(out)
    }

    /// Covariance of the `j`-th partial-derivative process,
    /// `∂²k(x, x') / ∂x_j ∂x'_j`.
    pub fn derivative_kernel(&self, x: &[f64], y: &[f64], j: usize) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        if j >= x.len() {
            return Err(Error::invalid(format!(
                "coordinate index {j} out of range for dimension {}",
                x.len()
            )));
        }
        match self.family {
            KernelFamily::SquaredExponential => {
                let l2 = self.length_scale * self.length_scale;
                let diff = x[j] - y[j];
                Ok(self.eval_unchecked(x, y) * (1.0 - diff * diff / l2) / l2)
            }
        }
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(l).unwrap()
    }

    #[test]
    fn eval_examples() {
        let k = se(1.0);
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 1.0);
        // exp(-1/2) to full double precision
        assert_relative_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.606_530_659_712_633_4, max_relative = 1e-15);
        assert_relative_eq!(k.eval(&[0.0, 0.0], &[0.6, 0.8]).unwrap(), 0.606_530_659_712_633_4, max_relative = 1e-15);
        assert!(k.eval(&[0.0], &[10.0]).unwrap() < 1e-20);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = se(1.0);
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(k.grad_x(&[0.0, 1.0], &[0.0]).is_err());
        assert!(k.derivative_kernel(&[0.0], &[0.0], 1).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelSpec::squared_exponential(0.0).is_err());
        assert!(KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.5).is_err());
        assert!(KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 0.0).is_err());
    }

    #[test]
    fn grad_examples() {
        let k = se(1.0);
        assert_eq!(k.grad_x(&[0.4, 0.1], &[0.4, 0.1]).unwrap(), vec![0.0, 0.0]);
        let g = k.grad_x(&[0.0], &[1.0]).unwrap()[0];
        assert_relative_eq!(g, 0.606_530_659_712_633_4, max_relative = 1e-15);
        let h = 1e-5;
        let fd = (k.eval(&[h], &[1.0]).unwrap() - k.eval(&[-h], &[1.0]).unwrap()) / (2.0 * h);
        assert_relative_eq!(g, fd, max_relative = 1e-9);
    }

    #[test]
    fn grad_is_antisymmetric_in_arguments() {
        let k = se(0.7);
        let x = [0.2, 0.9];
        let y = [0.5, 0.1];
        let gx = k.grad_x(&x, &y).unwrap();
        // gradient with respect to the second argument, via symmetry k(x,y) = k(y,x)
        let gy = k.grad_x(&y, &x).unwrap();
        for (a, b) in gx.iter().zip(&gy) {
            assert_relative_eq!(*a, -*b, max_relative = 1e-15);
        }
    }

    #[test]
    fn derivative_kernel_examples() {
        assert_eq!(se(1.0).derivative_kernel(&[0.5], &[0.5], 0).unwrap(), 1.0);
        assert_eq!(se(2.0).derivative_kernel(&[0.5], &[0.5], 0).unwrap(), 0.25);
        assert_eq!(se(1.0).derivative_kernel(&[1.0, 0.2], &[0.0, 0.2], 0).unwrap(), 0.0);
        let scaled = KernelSpec::new(KernelFamily::SquaredExponential, 0.5, 0.3).unwrap();
        assert_eq!(scaled.derivative_kernel(&[0.1, 0.1], &[0.1, 0.1], 1).unwrap(), 0.3 / 0.25);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = se(0.8);
        let h = 1e-5;
        for _ in 0..100 {
            let d = rng.random_range(1..=2);
            let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            let g = k.grad_x(&x, &y).unwrap();
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (k.eval(&xp, &y).unwrap() - k.eval(&xm, &y).unwrap()) / (2.0 * h);
                let err = (g[j] - fd).abs() / g[j].abs().max(1e-3);
                assert!(err <= 1e-6, "relative error {err}");
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = se(1.0);
        for d in 1..=2 {
            let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
            let gram = nalgebra::DMatrix::from_fn(30, 30, |i, j| k.eval(&pts[i], &pts[j]).unwrap());
            let eig = gram.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-8));
        }
    }
}
