//! Empirical-likelihood inner problem: Lagrange multipliers η solving
//! `Σ_i ψ_i / (1 + ηᵀψ_i) = 0`, weights `p_i = 1 / (n (1 + ηᵀψ_i))` and the
//! profile penalty `Σ_i log(1 + ηᵀψ_i)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy)]
pub struct ElOptions {
    pub max_iter: usize,
    /// Residual tolerance as a multiple of n.
    pub tol: f64,
    pub armijo: f64,
    pub min_step: f64,
}

impl Default for ElOptions {
    fn default() -> Self {
        ElOptions { max_iter: 50, tol: 1e-9, armijo: 1e-4, min_step: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct ElSolution {
    pub eta: DVector<f64>,
    pub weights: Vec<f64>,
    pub penalty: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Dual objective `−Σ log*(1 + ηᵀψ_i)` after each accepted step, starting at η = 0.
    /// Non-increasing up to rounding.
    pub trace: Vec<f64>,
}

/// log with its quadratic continuation below `eps`, plus first and second derivatives.
fn log_star(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), 1.0 / z, -1.0 / (z * z))
    } else {
        let r = z / eps;
        (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, (2.0 - r) / eps, -1.0 / (eps * eps))
    }
}

fn objective(psi: &DMatrix<f64>, eta: &DVector<f64>, eps: f64) -> f64 {
    let z = psi * eta;
    -linalg::compensated_sum(z.iter().map(|v| log_star(1.0 + v, eps).0))
}

fn newton_system(psi: &DMatrix<f64>, eta: &DVector<f64>, eps: f64) -> (DVector<f64>, DMatrix<f64>, bool) {
    let r = psi.ncols();
    let z = psi * eta;
    let mut grad = DVector::zeros(r);
    let mut hess = DMatrix::zeros(r, r);
    let mut all_inside = true;
    for i in 0..psi.nrows() {
        let zi = 1.0 + z[i];
        let (_, d1, d2) = log_star(zi, eps);
        all_inside &= zi >= eps;
        let row = psi.row(i).transpose();
        grad.axpy(d1, &row, 1.0);
        hess.ger(-d2, &row, &row, 1.0);
    }
    (grad, hess, all_inside)
}

fn newton_step(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Result<DVector<f64>> {
    let singular = || Error::SingularHessian { cond: linalg::condition_number(hess) };
    let chol = linalg::symmetrize(hess).cholesky().ok_or_else(singular)?;
    let step = chol.solve(grad);
    if step.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(step)
}

/// Solves for the Lagrange multipliers by damped Newton from η = 0.
pub fn solve_eta(psi: &DMatrix<f64>) -> Result<ElSolution> {
    solve_eta_with(psi, &ElOptions::default())
}

pub fn solve_eta_with(psi: &DMatrix<f64>, opts: &ElOptions) -> Result<ElSolution> {
    let n = psi.nrows();
    let r = psi.ncols();
    if n == 0 {
        return Err(Error::Dimension("empirical likelihood needs at least one row".into()));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite constraint matrix".into()));
    }
    let nf = n as f64;
    if r == 0 {
        return Ok(ElSolution {
            eta: DVector::zeros(0),
            weights: vec![1.0 / nf; n],
            penalty: 0.0,
            converged: true,
            iterations: 0,
            trace: vec![0.0],
        });
    }
    let eps = 1.0 / nf;
    let tol = opts.tol * nf;
    let mut eta = DVector::zeros(r);
    let mut f = objective(psi, &eta, eps);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let (grad, hess, all_inside) = newton_system(psi, &eta, eps);
        let res = linalg::max_abs(&grad);
        if res <= tol && all_inside {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let step = newton_step(&grad, &hess)?;
        let slope = grad.dot(&step);
        // near the optimum the objective change drops below rounding; fall back to residual decrease
        let flat = 64.0 * f64::EPSILON * (1.0 + f.abs());
        let full = &eta + &step;
        let f_full = objective(psi, &full, eps);
        if f_full <= f + flat {
            let (g_full, _, inside) = newton_system(psi, &full, eps);
            if inside && linalg::max_abs(&g_full) < 0.5 * res {
                iterations += 1;
                eta = full;
                f = f_full;
                trace.push(f);
                continue;
            }
        }
        let mut t = 1.0;
        let accepted = loop {
            let cand = &eta + &step * t;
            let fc = objective(psi, &cand, eps);
            if fc <= f - opts.armijo * t * slope {
                break Some((cand, fc));
            }
            t *= 0.5;
            if t < opts.min_step {
                break None;
            }
        };
        iterations += 1;
        match accepted {
            Some((cand, fc)) => {
                eta = cand;
                f = fc;
                trace.push(f);
            }
            None => return Err(Error::HullViolation { residual: res / nf, iterations, context: None }),
        }
    }

    if converged {
        // full Newton steps tighten Σp = 1 well below the residual tolerance
        for _ in 0..2 {
            let (grad, hess, _) = newton_system(psi, &eta, eps);
            let res = linalg::max_abs(&grad);
            if res == 0.0 {
                break;
            }
            let Ok(step) = newton_step(&grad, &hess) else { break };
            let cand = &eta + step;
            let (g2, _, inside) = newton_system(psi, &cand, eps);
            if !inside || linalg::max_abs(&g2) >= res {
                break;
            }
            eta = cand;
        }
    }

    let z = psi * &eta;
    let weights: Vec<f64> = z.iter().map(|v| 1.0 / (nf * (1.0 + v))).collect();
    let total = linalg::compensated_sum(weights.iter().copied());
    let residual = {
        let mut g = DVector::zeros(r);
        for i in 0..n {
            g.axpy(weights[i], &psi.row(i).transpose(), 1.0);
        }
        linalg::max_abs(&g)
    };
    let inside = z.iter().all(|v| 1.0 + v >= eps);
    // an unbounded dual (0 outside the hull) drives the residual to zero while Σp collapses
    if !converged || !inside || (total - 1.0).abs() > 1e-6 {
        return Err(Error::HullViolation { residual, iterations, context: None });
    }
    let penalty = linalg::compensated_sum(z.iter().map(|v| (1.0 + v).ln()));
    Ok(ElSolution { eta, weights, penalty, converged, iterations, trace })
}

/// Σ log(1 + η̂ᵀψ_i) at the solution of [`solve_eta`].
pub fn profile_penalty(psi: &DMatrix<f64>) -> Result<f64> {
    Ok(solve_eta(psi)?.penalty)
}
