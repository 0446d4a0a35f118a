//! One-sided Jacobi singular value decomposition.
//!
//! Orthogonalizes the columns of the (possibly transposed) input with
//! cyclic Jacobi rotations until every pairwise projection falls below
//! `1e-12 * ||m||_F` and every pairwise cosine below 1e-11; the second
//! bound keeps U orthonormal to 1e-9 even for columns with tiny
//! singular values. The result is a thin SVD `m = U diag(sigma) V^T`
//! with `r = min(M, N)`, singular values descending, and a fixed sign
//! convention (largest-magnitude entry of each U column is positive) so
//! equal inputs always produce bitwise-equal factors.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const CONV_TOL: f64 = 1e-12;
const COS_TOL: f64 = 1e-11;
const MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    u: Matrix,
    sigma: Vec<f64>,
    v: Matrix,
}

impl SvdFactors {
    /// Left singular vectors, `M x r`.
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    /// Singular values, descending, length `r = min(M, N)`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Right singular vectors, `N x r`.
    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn rank_capacity(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> usize {
        self.u.rows()
    }

    pub fn cols(&self) -> usize {
        self.v.rows()
    }

    /// Rebuild from raw parts, validating dimensions only.
    pub fn from_parts(u: Matrix, sigma: Vec<f64>, v: Matrix) -> Result<Self> {
        if u.cols() != sigma.len() || v.cols() != sigma.len() {
            return Err(Error::Shape(format!(
                "factor widths disagree: U {}x{}, sigma {}, V {}x{}",
                u.rows(),
                u.cols(),
                sigma.len(),
                v.rows(),
                v.cols()
            )));
        }
        Ok(Self { u, sigma, v })
    }

    /// `U diag(values) V^T` for arbitrary per-direction values.
    pub fn compose(&self, values: &[f64]) -> Result<Matrix> {
        if values.len() != self.sigma.len() {
            return Err(Error::Shape(format!(
                "expected {} singular values, got {}",
                self.sigma.len(),
                values.len()
            )));
        }
        let (m, n, r) = (self.u.rows(), self.v.rows(), self.sigma.len());
        let mut out = Matrix::zeros(m, n);
        for k in 0..r {
            let s = values[k];
            if s == 0.0 {
                continue;
            }
            for row in 0..m {
                let us = self.u.get(row, k) * s;
                if us == 0.0 {
                    continue;
                }
                let dst = &mut out.data_mut()[row * n..(row + 1) * n];
                for (col, d) in dst.iter_mut().enumerate() {
                    *d += us * self.v.get(col, k);
                }
            }
        }
        Ok(out)
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        self.compose(&self.sigma).expect("sigma length matches by construction")
    }
}

/// Thin SVD of `m`, deterministic for equal inputs.
pub fn svd_decompose(m: &Matrix) -> Result<SvdFactors> {
    if !m.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    if m.rows() >= m.cols() {
        let (u, sigma, v) = one_sided_jacobi(m);
        SvdFactors::from_parts(u, sigma, v)
    } else {
        // Decompose the transpose and swap the roles of U and V.
        let (v, sigma, u) = one_sided_jacobi(&m.transpose());
        SvdFactors::from_parts(u, sigma, v)
    }
}

/// Core routine: requires `rows >= cols`, returns (U M x n, sigma, V n x n).
fn one_sided_jacobi(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let rows = m.rows();
    let n = m.cols();
    let fro = m.frobenius_norm();
    let tol = CONV_TOL * fro;

    // Work on columns: b[j] is the j-th column of the iterated matrix.
    let mut b: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    app += b[p][i] * b[p][i];
                    aqq += b[q][i] * b[q][i];
                    apq += b[p][i] * b[q][i];
                }
                // Skip only when the projection is below the absolute
                // threshold AND the column cosine is already tiny; the
                // cosine bound protects small-sigma directions.
                let np = app.sqrt();
                let nq = aqq.sqrt();
                if np == 0.0 || nq == 0.0 {
                    continue;
                }
                if apq.abs() <= (tol * np.max(nq)).min(COS_TOL * np * nq) {
                    continue;
                }
                let zeta = (aqq - app) / (2.0 * apq);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let bp = b[p][i];
                    let bq = b[q][i];
                    b[p][i] = c * bp - s * bq;
                    b[q][i] = s * bp + c * bq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
                rotated = true;
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = b
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    // Stable descending order; ties keep original column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    let b: Vec<Vec<f64>> = order.iter().map(|&i| std::mem::take(&mut b[i])).collect();
    let v: Vec<Vec<f64>> = order.iter().map(|&i| std::mem::take(&mut v[i])).collect();
    sigma = order.iter().map(|&i| sigma[i]).collect();

    // Normalize U columns; complete an orthonormal basis where sigma
    // vanished so U^T U = I holds even for rank-deficient input.
    let zero_cut = fro * 1e-290;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (j, col) in b.into_iter().enumerate() {
        if sigma[j] > zero_cut && sigma[j] > 0.0 {
            u_cols.push(col.iter().map(|x| x / sigma[j]).collect());
        } else {
            sigma[j] = 0.0;
            u_cols.push(complete_column(rows, &u_cols));
        }
    }

    // Sign convention: largest-magnitude entry of each U column positive.
    let mut v = v;
    for j in 0..n {
        let mut idx = 0;
        let mut best = 0.0f64;
        for (i, &x) in u_cols[j].iter().enumerate() {
            if x.abs() > best {
                best = x.abs();
                idx = i;
            }
        }
        if u_cols[j][idx] < 0.0 {
            for x in &mut u_cols[j] {
                *x = -*x;
            }
            for x in &mut v[j] {
                *x = -*x;
            }
        }
    }

    let mut u_mat = Matrix::zeros(rows, n);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            u_mat.set(i, j, x);
        }
    }
    let mut v_mat = Matrix::zeros(n, n);
    for (j, col) in v.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            v_mat.set(i, j, x);
        }
    }
    (u_mat, sigma, v_mat)
}

/// Deterministic unit vector orthogonal to all columns fixed so far.
fn complete_column(rows: usize, fixed: &[Vec<f64>]) -> Vec<f64> {
    for basis in 0..rows {
        let mut w = vec![0.0; rows];
        w[basis] = 1.0;
        for col in fixed {
            let dot: f64 = col.iter().zip(&w).map(|(a, b)| a * b).sum();
            for (wi, ci) in w.iter_mut().zip(col) {
                *wi -= dot * ci;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            return w.into_iter().map(|x| x / norm).collect();
        }
    }
    unreachable!("fewer than `rows` columns are ever fixed");
}
