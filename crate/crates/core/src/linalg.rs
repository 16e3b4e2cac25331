//! Small dense linear algebra: cyclic Jacobi eigen-decomposition of
//! symmetric matrices and a Gaussian-elimination solver.

use crate::error::{FirlError, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = SquareMatrix::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j) * self.get(i, j);
                }
            }
        }
        s.sqrt()
    }
}

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Cyclic Jacobi: every sweep rotates away each off-diagonal pair (p, q) in
/// row order. Stops once the off-diagonal Frobenius norm is below
/// `tol * max(1, |A|_F)`.
pub fn symmetric_eigenvalues(a: &SquareMatrix, tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    let n = a.size();
    let mut m = a.clone();
    let scale = m.data.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut sweeps = 0;
    loop {
        let off = m.off_diagonal_norm();
        if off <= tol * scale {
            break;
        }
        if sweeps == max_sweeps {
            return Err(FirlError::NoConvergence { sweeps, residual: off });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
        sweeps += 1;
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.size();
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap();
        if m.get(pivot, col).abs() < 1e-300 {
            return Err(FirlError::Config("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m.get(col, k);
                m.set(col, k, m.get(pivot, k));
                m.set(pivot, k, tmp);
            }
            x.swap(col, pivot);
        }
        for r in (col + 1)..n {
            let f = m.get(r, col) / m.get(col, col);
            for k in col..n {
                m.set(r, k, m.get(r, k) - f * m.get(col, k));
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in (col + 1)..n {
            s -= m.get(col, k) * x[k];
        }
        x[col] = s / m.get(col, col);
    }
    Ok(x)
}
