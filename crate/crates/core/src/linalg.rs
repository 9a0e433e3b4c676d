//! Small dense symmetric solves used by the regression trainer.

use crate::float::Float;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("system is singular or not positive definite (pivot {pivot} at column {col})")]
    SingularSystem { col: usize, pivot: f64 },
    #[error("dimension mismatch: matrix {n}x{n}, rhs {rhs}")]
    DimensionMismatch { n: usize, rhs: usize },
}

/// Row-major dense symmetric matrix with a right-hand side solver.
///
/// Sized for normal equations (dimension <= ~10); no blocking or pivoting
/// beyond what Cholesky needs for an SPD input.
#[derive(Debug, Clone)]
pub struct SymMatrix<F> {
    n: usize,
    data: Vec<F>,
}

impl<F: Float> SymMatrix<F> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![F::zero(); n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.n + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.n + c] = v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.n + c] += v;
    }

    /// Add `lambda` to every diagonal entry.
    pub fn add_diag(&mut self, lambda: F) {
        for i in 0..self.n {
            self.data[i * self.n + i] += lambda;
        }
    }

    pub fn mul_vec(&self, x: &[F]) -> Vec<F> {
        let mut y = vec![F::zero(); self.n];
        for r in 0..self.n {
            let row = &self.data[r * self.n..(r + 1) * self.n];
            y[r] = row.iter().zip(x).map(|(a, b)| *a * *b).sum();
        }
        y
    }

    fn cholesky(&self) -> Result<Vec<F>, LinalgError> {
        let n = self.n;
        let mut l = vec![F::zero(); n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= F::zero() || !d.is_finite() {
                return Err(LinalgError::SingularSystem {
                    col: j,
                    pivot: d.to_f64().unwrap_or(f64::NAN),
                });
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        Ok(l)
    }

    fn solve_with_factor(&self, l: &[F], b: &[F]) -> Vec<F> {
        let n = self.n;
        // forward: L z = b
        let mut z = vec![F::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * z[k];
            }
            z[i] = s / l[i * n + i];
        }
        // backward: L^T x = z
        let mut x = vec![F::zero(); n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        x
    }

    /// Solve `A x = b` for SPD `A` via Cholesky plus one round of iterative
    /// refinement (keeps the normal-equation residual near machine level).
    pub fn solve_spd(&self, b: &[F]) -> Result<Vec<F>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch { n: self.n, rhs: b.len() });
        }
        let l = self.cholesky()?;
        let mut x = self.solve_with_factor(&l, b);
        let ax = self.mul_vec(&x);
        let r: Vec<F> = ax.iter().zip(b).map(|(a, bi)| *a - *bi).collect();
        let dx = self.solve_with_factor(&l, &r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi -= *di;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_identity() {
        let mut a = SymMatrix::<f64>::zeros(3);
        a.add_diag(1.0);
        let x = a.solve_spd(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn solves_known_spd_system() {
        // A = [[4,2],[2,3]], b = [10, 9] -> x = [1.5, 2]
        let mut a = SymMatrix::<f64>::zeros(2);
        a.set(0, 0, 4.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 3.0);
        let x = a.solve_spd(&[10.0, 9.0]).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let mut a = SymMatrix::<f64>::zeros(2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 1.0);
        assert!(matches!(a.solve_spd(&[1.0, 1.0]), Err(LinalgError::SingularSystem { .. })));
    }

    #[test]
    fn residual_stays_small_after_refinement() {
        // Mildly ill-conditioned 4x4 built from a known solution.
        let n = 4;
        let mut a = SymMatrix::<f64>::zeros(n);
        let scales = [1.0, 10.0, 100.0, 1000.0];
        for i in 0..n {
            for j in 0..n {
                let v = if i == j { scales[i] } else { 1.0 / (1.0 + (i + j) as f64) };
                a.set(i, j, v);
            }
        }
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let b = a.mul_vec(&x_true);
        let x = a.solve_spd(&b).unwrap();
        let ax = a.mul_vec(&x);
        let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!(res < 1e-10, "residual {res}");
    }
}
