//! Small dense and banded linear-algebra helpers.
//!
//! The Gaussian family stores the precision matrix as `P = Rᵀ R` with `R`
//! lower triangular and positive diagonal. Note the transpose is on the
//! left: this is the reverse of the usual `L Lᵀ` Cholesky convention, and
//! the factorization below runs from the last row upward accordingly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Length of the half-vectorization of a `d x d` triangular matrix.
pub fn vech_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index of entry `(i, j)`, `j <= i`, in the row-major lower-triangle layout
/// `(0,0), (1,0), (1,1), (2,0), ...` used for all `vech` vectors in this crate.
pub fn vech_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Expands a row-major lower-triangle vector into a dense lower-triangular matrix.
pub fn vech_to_lower(d: usize, v: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), vech_len(d));
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            m[(i, j)] = v[vech_index(i, j)];
        }
    }
    m
}

/// Collects the lower triangle of a matrix into the row-major `vech` layout.
pub fn lower_to_vech(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut v = vec![0.0; vech_len(d)];
    for i in 0..d {
        for j in 0..=i {
            v[vech_index(i, j)] = m[(i, j)];
        }
    }
    v
}

/// Factors a symmetric positive definite `P` as `P = Rᵀ R` with `R` lower
/// triangular and positive diagonal ("reverse Cholesky").
///
/// Since `P_ij = sum_{k >= max(i,j)} R_ki R_kj`, the factor is determined
/// bottom row first.
pub fn reverse_cholesky(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = p.nrows();
    if p.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "reverse_cholesky",
            expected: d,
            got: p.ncols(),
        });
    }
    let mut r = DMatrix::zeros(d, d);
    for i in (0..d).rev() {
        // Diagonal entry: P_ii = R_ii^2 + sum_{k > i} R_ki^2.
        let mut s = p[(i, i)];
        for k in (i + 1)..d {
            s -= r[(k, i)] * r[(k, i)];
        }
        if !(s > 0.0) {
            return Err(Error::Factorization(format!(
                "matrix not positive definite at pivot {i} (residual {s:.3e})"
            )));
        }
        let rii = s.sqrt();
        r[(i, i)] = rii;
        // Remaining entries of row i: P_ij = R_ii R_ij + sum_{k > i} R_ki R_kj.
        for j in 0..i {
            let mut s = p[(i, j)];
            for k in (i + 1)..d {
                s -= r[(k, i)] * r[(k, j)];
            }
            r[(i, j)] = s / rii;
        }
    }
    Ok(r)
}

/// Inverts a lower-triangular matrix by forward substitution per column.
pub fn invert_lower_triangular(r: &DMatrix<f64>) -> DMatrix<f64> {
    let d = r.nrows();
    let mut inv = DMatrix::zeros(d, d);
    for col in 0..d {
        // Solve R x = e_col.
        for i in col..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= r[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / r[(i, i)];
        }
    }
    inv
}

/// Solves `A x = b` for symmetric positive definite `A` via Cholesky.
/// Also returns a cheap condition estimate, the squared ratio of the
/// extreme diagonal entries of the Cholesky factor.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solve("matrix not positive definite".into()))?;
    let l = chol.l();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0_f64;
    for i in 0..l.nrows() {
        dmin = dmin.min(l[(i, i)]);
        dmax = dmax.max(l[(i, i)]);
    }
    let cond = (dmax / dmin) * (dmax / dmin);
    Ok((chol.solve(b), cond))
}

/// Symmetric banded matrix in lower-band storage, used by the finite element
/// solver. Entry `(i, j)` with `0 <= i - j <= bandwidth` lives at
/// `data[(i - j) * n + j]`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    pub n: usize,
    pub bandwidth: usize,
    pub data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            data: vec![0.0; (bandwidth + 1) * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bandwidth {
            0.0
        } else {
            self.data[(hi - lo) * self.n + lo]
        }
    }

    /// Adds `v` to entry `(i, j)` (and by symmetry `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.bandwidth, "entry outside band");
        self.data[(hi - lo) * self.n + lo] += v;
    }

    /// `self += c * other`; both operands must share n and bandwidth.
    pub fn axpy(&mut self, c: f64, other: &BandedSpd) {
        debug_assert_eq!(self.n, other.n);
        debug_assert_eq!(self.bandwidth, other.bandwidth);
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    /// Enforces `x[k] = value` while keeping the system symmetric: moves the
    /// column into the right-hand side, zeroes row/column `k` and pins the
    /// diagonal to 1.
    pub fn set_dirichlet(&mut self, rhs: &mut [f64], k: usize, value: f64) {
        let w = self.bandwidth;
        let lo = k.saturating_sub(w);
        let hi = (k + w).min(self.n - 1);
        for i in lo..=hi {
            if i == k {
                continue;
            }
            let a_ik = self.get(i, k);
            if a_ik != 0.0 {
                rhs[i] -= a_ik * value;
            }
            let (hi2, lo2) = if i >= k { (i, k) } else { (k, i) };
            self.data[(hi2 - lo2) * self.n + lo2] = 0.0;
        }
        self.data[k] = 1.0; // diagonal slot (0 * n + k)
        rhs[k] = value;
    }

    /// In-place banded Cholesky `A = L Lᵀ`.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let n = self.n;
        let w = self.bandwidth;
        for j in 0..n {
            let start = j.saturating_sub(w);
            let mut s = self.data[j]; // (j, j)
            for k in start..j {
                let ljk = self.data[(j - k) * n + k];
                s -= ljk * ljk;
            }
            if !(s > 0.0) {
                return Err(Error::Factorization(format!(
                    "banded matrix not positive definite at pivot {j}"
                )));
            }
            let ljj = s.sqrt();
            self.data[j] = ljj;
            let iend = (j + w).min(n - 1);
            for i in (j + 1)..=iend {
                let kstart = i.saturating_sub(w).max(start);
                let mut s = self.data[(i - j) * n + j];
                for k in kstart..j {
                    s -= self.data[(i - k) * n + k] * self.data[(j - k) * n + k];
                }
                self.data[(i - j) * n + j] = s / ljj;
            }
        }
        Ok(BandedCholesky(self))
    }
}

/// Banded Cholesky factor; solves by forward/back substitution.
pub struct BandedCholesky(BandedSpd);

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = &self.0;
        let (n, w) = (m.n, m.bandwidth);
        let mut x = b.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(w);
            let mut s = x[i];
            for k in start..i {
                s -= m.data[(i - k) * n + k] * x[k];
            }
            x[i] = s / m.data[i];
        }
        for i in (0..n).rev() {
            let iend = (i + w).min(n - 1);
            let mut s = x[i];
            for k in (i + 1)..=iend {
                s -= m.data[(k - i) * n + i] * x[k];
            }
            x[i] = s / m.data[i];
        }
        x
    }
}
