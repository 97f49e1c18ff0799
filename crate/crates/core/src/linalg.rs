//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Above this 2-norm condition number J is Tikhonov-damped before solving.
pub const COND_DAMPING_THRESHOLD: f64 = 1e12;
/// Relative size of the Tikhonov ridge, as a multiple of the 2-norm of J.
pub const DAMPING_FACTOR: f64 = 1e-8;

/// 2-norm condition number from the singular values. Infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max.is_finite()) || min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0_f64, f64::max)
}

/// Inverse of a general square matrix with condition monitoring.
#[derive(Debug, Clone)]
pub struct MonitoredInverse {
    pub inverse: DMatrix<f64>,
    /// Condition number of the matrix before any damping.
    pub cond: f64,
    pub damped: bool,
}

/// Inverts `m`; when its condition number exceeds [`COND_DAMPING_THRESHOLD`] a
/// ridge of `DAMPING_FACTOR * ||m||` is added to the diagonal first.
pub fn monitored_inverse(m: &DMatrix<f64>) -> Result<MonitoredInverse> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!("cannot invert a {}x{} matrix", n, m.ncols())));
    }
    if n == 0 {
        return Ok(MonitoredInverse { inverse: DMatrix::zeros(0, 0), cond: 1.0, damped: false });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJ { cond: f64::INFINITY });
    }
    let cond = condition_number(m);
    let mut work = m.clone();
    let damped = cond > COND_DAMPING_THRESHOLD;
    if damped {
        let ridge = DAMPING_FACTOR * spectral_norm(m);
        for i in 0..n {
            work[(i, i)] += ridge;
        }
        if condition_number(&work) > 1e16 {
            return Err(Error::SingularJ { cond });
        }
    }
    let inverse = work.lu().try_inverse().ok_or(Error::SingularJ { cond })?;
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularJ { cond });
    }
    Ok(MonitoredInverse { inverse, cond, damped })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky. `None` when not PD.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(m);
    sym.cholesky().map(|c| c.inverse())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Symmetric positive semidefinite check through the smallest eigenvalue.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if !is_symmetric(m, 1e-10) {
        return false;
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let scale = eig.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    eig.iter().all(|&v| v >= -tol * scale)
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Places `block` into `target` at (`row`, `col`).
pub fn set_block(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    target.view_mut((row, col), (block.nrows(), block.ncols())).copy_from(block);
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
