//! Packed lower-triangular factors and the few kernels the GP needs.

use crate::error::{Error, Result};

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Lower-triangular matrix stored row by row; row `i` holds `i + 1` entries.
#[derive(Debug, Clone, Default)]
pub(crate) struct PackedLower {
    n: usize,
    data: Vec<f64>,
}

impl PackedLower {
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n + 1);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    /// Cholesky factor of the symmetric matrix given by `entry(i, j)`, `j ≤ i`.
    pub fn cholesky(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut l = PackedLower {
            n: 0,
            data: Vec::with_capacity(n * (n + 1) / 2),
        };
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            row.clear();
            for j in 0..i {
                let s = entry(i, j) - dot(&row[..j], &l.row(j)[..j]);
                row.push(s / l.row(j)[j]);
            }
            let s = entry(i, i) - dot(&row, &row);
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Numerical(format!(
                    "Cholesky breakdown at pivot {i} of {n}: Schur complement {s:e}"
                )));
            }
            row.push(s.sqrt());
            l.push_row(&row);
        }
        Ok(l)
    }

    /// Solves `L x = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let r = self.row(i);
            b[i] = (b[i] - dot(&r[..i], &b[..i])) / r[i];
        }
    }

    /// Solves `L x = b` for several right-hand sides in one sweep over `L`.
    pub fn forward_solve_many(&self, bs: &mut [Vec<f64>]) {
        for i in 0..self.n {
            self.forward_step_many(i, bs);
        }
    }

    /// Row `i` of [`forward_solve_many`](Self::forward_solve_many), assuming
    /// entries `..i` of every right-hand side are already solved.
    #[inline]
    pub fn forward_step_many(&self, i: usize, bs: &mut [Vec<f64>]) {
        let r = self.row(i);
        for b in bs.iter_mut() {
            b[i] = (b[i] - dot(&r[..i], &b[..i])) / r[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_solve(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let r = self.row(i);
            let xi = b[i] / r[i];
            b[i] = xi;
            for (bj, lij) in b[..i].iter_mut().zip(&r[..i]) {
                *bj -= lij * xi;
            }
        }
    }

    /// `L z`.
    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), &z[..=i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves() {
        let m = [[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = PackedLower::cholesky(3, |i, j| m[i][j]).unwrap();
        let b = [1.0, -2.0, 0.5];
        let mut x = b.to_vec();
        l.forward_solve(&mut x);
        l.backward_solve(&mut x);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| m[i][j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
        assert!(PackedLower::cholesky(2, |i, j| if i == j { -1.0 } else { 0.0 }).is_err());
    }
}
