//! Small dense symmetric linear algebra.
//!
//! Everything here works on symmetric matrices of desk-scale size. The
//! eigendecomposition is a cyclic Jacobi iteration; the pseudo-inverse, the
//! definiteness test and the range-inclusion test are all built on top of it.

use nalgebra::{DMatrix, DVector};

/// Eigenvalues with `|λ| <= RANK_TOL * max|λ|` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Absolute slack for `min_eig >= 0` style tests.
pub const PSD_TOL: f64 = 1e-10;
/// Absolute bound on `‖(I - M M†) H‖_max` for range inclusion.
pub const RANGE_TOL: f64 = 1e-9;
/// Relative tolerance for input symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-12;

const JACOBI_OFF_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition `M = V diag(values) V'` of a symmetric matrix.
///
/// Eigenvalues are sorted ascending and the columns of `vectors` follow the
/// same order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Rebuilds `V f(Λ) V'` for a spectral function `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let p = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..p {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm falls below
/// `1e-13 * ‖M‖_F`. The input is symmetrized first, so slightly asymmetric
/// matrices are accepted.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymEigen {
    assert!(m.is_square(), "sym_eigen needs a square matrix");
    let p = m.nrows();
    let mut a = symmetrize(m);
    let mut v = DMatrix::<f64>::identity(p, p);
    let scale = a.norm();
    let target = JACOBI_OFF_TOL * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                let theta = (a[(j, j)] - a[(i, i)]) / (2.0 * aij);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, i, j, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    SymEigen { values, vectors }
}

fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    let p = a.nrows();
    for k in 0..p {
        let aki = a[(k, i)];
        let akj = a[(k, j)];
        a[(k, i)] = c * aki - s * akj;
        a[(k, j)] = s * aki + c * akj;
    }
    for k in 0..p {
        let aik = a[(i, k)];
        let ajk = a[(j, k)];
        a[(i, k)] = c * aik - s * ajk;
        a[(j, k)] = s * aik + c * ajk;
    }
    // the rotation zeroes (i, j) analytically
    a[(i, j)] = 0.0;
    a[(j, i)] = 0.0;
    for k in 0..p {
        let vki = v[(k, i)];
        let vkj = v[(k, j)];
        v[(k, i)] = c * vki - s * vkj;
        v[(k, j)] = s * vki + c * vkj;
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let p = a.nrows();
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `max |M - M'|` over all entries.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    max_abs(&(m - m.transpose()))
}

/// True when `m` is symmetric within [`SYMMETRY_TOL`] relative to its max-norm.
pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && asymmetry(m) <= SYMMETRY_TOL * max_abs(m)
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = sym_eigen(m);
    let cutoff = RANK_TOL * eig.max_abs();
    eig.map(|l| if l.abs() > cutoff { 1.0 / l } else { 0.0 })
}

/// Inverse of a symmetric matrix, or `None` when it is singular beyond
/// [`RANK_TOL`].
pub fn inverse_checked(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let eig = sym_eigen(m);
    let cutoff = RANK_TOL * eig.max_abs();
    if eig.max_abs() == 0.0 || eig.values.iter().any(|l| l.abs() <= cutoff) {
        return None;
    }
    Some(eig.map(|l| 1.0 / l))
}

/// Numerical rank under the [`RANK_TOL`] cutoff.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let eig = sym_eigen(m);
    let cutoff = RANK_TOL * eig.max_abs();
    eig.values.iter().filter(|l| l.abs() > cutoff && **l != 0.0).count()
}

/// Outcome of a definiteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdVerdict {
    pub min_eig: f64,
    pub is_psd: bool,
    pub margin: f64,
    /// `min_eig >= margin - PSD_TOL`.
    pub meets_margin: bool,
}

impl PsdVerdict {
    pub fn is_pd_with_margin(&self, alpha: f64) -> bool {
        self.min_eig >= alpha - PSD_TOL
    }
}

pub fn psd_check(m: &DMatrix<f64>, margin: f64) -> PsdVerdict {
    let min_eig = if m.nrows() == 0 {
        f64::INFINITY
    } else {
        sym_eigen(m).min()
    };
    PsdVerdict {
        min_eig,
        is_psd: min_eig >= -PSD_TOL,
        margin,
        meets_margin: min_eig >= margin - PSD_TOL,
    }
}

/// Result of `R(H) ⊆ R(M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCheck {
    pub included: bool,
    pub residual: f64,
}

/// Tests `R(H) ⊆ R(M)` for symmetric `M` through `‖(I - M M†) H‖_max`.
pub fn range_included(h: &DMatrix<f64>, m: &DMatrix<f64>) -> RangeCheck {
    assert_eq!(h.nrows(), m.nrows(), "range_included: row mismatch");
    let p = m.nrows();
    let projector = DMatrix::<f64>::identity(p, p) - m * pinv(m);
    let residual = max_abs(&(projector * h));
    RangeCheck {
        included: residual <= RANGE_TOL,
        residual,
    }
}

/// Vector variant of [`range_included`].
pub fn vector_in_range(v: &DVector<f64>, m: &DMatrix<f64>) -> RangeCheck {
    let h = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    range_included(&h, m)
}
