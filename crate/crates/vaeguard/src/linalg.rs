//! Small dense matrices and the symmetric eigensolver behind the Fréchet
//! distance and PCA. Row-major f64, sizes here top out around 64x64.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dims");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *out.at_mut(c, r) = self.at(r, c);
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    /// Column means.
    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        for m in means.iter_mut() {
            *m /= self.rows as f64;
        }
        means
    }

    /// Rows minus their column means.
    pub fn centered(&self) -> Mat {
        let means = self.col_means();
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
            for (v, m) in row.iter_mut().zip(means.iter()) {
                *v -= m;
            }
        }
        out
    }

    /// Sample covariance (divides by N-1), of rows-as-observations.
    pub fn covariance(&self) -> Mat {
        assert!(self.rows >= 2, "covariance needs at least 2 rows");
        let c = self.centered();
        let mut cov = c.transpose().matmul(&c);
        cov.scale(1.0 / (self.rows as f64 - 1.0));
        cov
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    pub fn add_diag(&mut self, eps: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            *self.at_mut(i, i) += eps;
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors-as-columns), sorted descending.
/// Deterministic: fixed sweep order, fixed sign convention.
pub fn sym_eig(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Metric(format!(
            "sym_eig expects square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let mut m = a.clone();
    // symmetrize against accumulated asymmetry in the caller
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (m.at(r, c) + m.at(c, r));
            *m.at_mut(r, c) = avg;
            *m.at_mut(c, r) = avg;
        }
    }
    let mut v = Mat::identity(n);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m.at(r, c) * m.at(r, c);
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.trace().abs()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/cols p, q
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (m.at(i, i), i)).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let eigvals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut eigvecs = Mat::zeros(n, n);
    for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
        // sign convention: largest-magnitude component nonnegative
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for r in 0..n {
            let a = v.at(r, old_col).abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        let flip = if v.at(best, old_col) < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            *eigvecs.at_mut(r, new_col) = flip * v.at(r, old_col);
        }
    }
    Ok((eigvals, eigvecs))
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues slightly
/// negative from roundoff (within `tol`) clamp to zero; anything lower errors.
pub fn psd_sqrt(a: &Mat, tol: f64) -> Result<Mat> {
    let (vals, vecs) = sym_eig(a)?;
    let mut roots = Vec::with_capacity(vals.len());
    for &l in &vals {
        if l < -tol {
            return Err(Error::Metric(format!(
                "matrix not PSD: eigenvalue {l:.3e} below -{tol:.1e}"
            )));
        }
        roots.push(l.max(0.0).sqrt());
    }
    // V * diag(sqrt) * V^T
    let n = a.rows;
    let mut scaled = vecs.clone();
    for r in 0..n {
        for c in 0..n {
            *scaled.at_mut(r, c) *= roots[c];
        }
    }
    Ok(scaled.matmul(&vecs.transpose()))
}
