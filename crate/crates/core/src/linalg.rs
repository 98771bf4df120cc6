//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor, or an error naming `what`.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Solve `Lᵀ x = z` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut x = z.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve `L Lᵀ x = rhs`.
pub fn cholesky_solve(l: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut y = rhs.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    solve_lower_transpose(l, &y)
}

/// Inverse of `L Lᵀ`.
pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    (&inv + inv.transpose()) * 0.5
}

pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Ridge least squares `(AᵀA + λI)⁻¹ Aᵀy` from accumulated cross products.
pub fn ridge_solve(ata: &DMatrix<f64>, aty: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let n = ata.nrows();
    let m = ata + DMatrix::<f64>::identity(n, n) * lambda;
    let chol = m.cholesky()?;
    Some(chol.solve(&DVector::from_column_slice(aty)).iter().cloned().collect())
}

/// Add `w · a aᵀ` to `m`.
pub fn add_outer(m: &mut DMatrix<f64>, a: &[f64], w: f64) {
    for i in 0..a.len() {
        for j in 0..a.len() {
            m[(i, j)] += w * a[i] * a[j];
        }
    }
}

/// Largest dimension handled by [`Small`].
pub const SMALL_MAX: usize = 6;

/// Stack-allocated symmetric matrix for per-subject random-effect algebra.
#[derive(Debug, Clone, Copy)]
pub struct Small {
    n: usize,
    a: [f64; SMALL_MAX * SMALL_MAX],
}

impl Small {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= SMALL_MAX, "dimension {n} exceeds {SMALL_MAX}");
        Self { n, a: [0.0; SMALL_MAX * SMALL_MAX] }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut s = Self::zeros(m.nrows());
        for i in 0..s.n {
            for j in 0..s.n {
                s.a[i * SMALL_MAX + j] = m[(i, j)];
            }
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * SMALL_MAX + j]
    }

    /// `self + other * w`.
    pub fn add_scaled(&self, other: &Small, w: f64) -> Small {
        let mut out = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                out.a[i * SMALL_MAX + j] += w * other.a[i * SMALL_MAX + j];
            }
        }
        out
    }

    pub fn add_outer(&mut self, v: &[f64], w: f64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.a[i * SMALL_MAX + j] += w * v[i] * v[j];
            }
        }
    }

    /// Lower Cholesky factor; `None` unless positive definite.
    pub fn cholesky(&self) -> Option<Small> {
        let n = self.n;
        let mut l = Small::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l.a[j * SMALL_MAX + j] = d;
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.a[i * SMALL_MAX + j] = s / d;
            }
        }
        Some(l)
    }

    /// For a lower factor `L`, solve `Lᵀ x = z` in place.
    pub fn solve_lower_transpose(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in i + 1..self.n {
                s -= self.get(k, i) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
    }

    /// For a lower factor `L`, solve `L x = z` in place.
    pub fn solve_lower(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.get(i, k) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
    }

    /// For a lower factor `L`, `Σ log L_ii`.
    pub fn log_diag_sum(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).ln()).sum()
    }
}
