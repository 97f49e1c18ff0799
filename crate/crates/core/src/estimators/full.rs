//! Fully iterated CMLE: quasi-Newton over (β, φ, θ) with the empirical-likelihood
//! multipliers profiled out at every evaluation.

use nalgebra::{DMatrix, DVector};

use super::fast::{note_damping, prepare, variance_at, Prepared, Stage};
use super::jsigma::{blocks_from_evaluation, kappa_v_inverse};
use super::mle::{fit_mle, loglik_parts, MleFit};
use super::{FitOptions, FitResult, Method};
use crate::aggregates::{evaluate, ConstraintSet};
use crate::data::Dataset;
use crate::el;
use crate::error::{Error, Result};
use crate::model::{Law, OutcomeFamily};

pub const MAX_ITER: usize = 500;
pub const GRAD_TOL: f64 = 1e-10;

/// Negative scaled profile log-likelihood
/// `F(u) = −n⁻¹ Σ log f + ½ (φ̃ − φ)ᵀ K (φ̃ − φ) + n⁻¹ Σ log(1 + η̂ᵀψ_i)`.
pub(crate) struct Profile<'a> {
    pub cs: &'a ConstraintSet,
    pub law: Law,
    pub data: &'a Dataset,
    pub k: DMatrix<f64>,
    pub phi_tilde: Vec<f64>,
}

pub(crate) struct Point {
    pub value: f64,
    pub grad: DVector<f64>,
    pub eta: DVector<f64>,
}

impl Profile<'_> {
    fn split<'u>(&self, u: &'u [f64]) -> (&'u [f64], &'u [f64], &'u [f64]) {
        let d = self.cs.n_covariates + 1;
        let q = self.cs.phi_dim();
        (&u[..d], &u[d..d + q], &u[d + q..])
    }

    pub fn eval(&self, u: &[f64]) -> Result<Point> {
        let (beta, phi, theta) = self.split(u);
        let n = self.data.n() as f64;
        let (ll, score, _) = loglik_parts(&self.law, beta, self.data);
        let ev = evaluate(self.cs, self.law, beta, phi, theta, self.data, true)?;
        let sol = el::solve_eta(&ev.psi)?;
        let c: Vec<f64> = sol.weights.iter().map(|p| p * n).collect();
        let jac = ev.jacobians(self.cs, self.data, Some(&c));
        let diff = DVector::from_iterator(phi.len(), self.phi_tilde.iter().zip(phi).map(|(a, b)| a - b));
        let kd = &self.k * &diff;
        let value = -ll / n + 0.5 * diff.dot(&kd) + sol.penalty / n;
        let g_beta = -score / n + &jac.d_beta * &sol.eta;
        let g_phi = -kd + &jac.d_phi * &sol.eta;
        let g_theta = &jac.d_theta * &sol.eta;
        let grad = DVector::from_iterator(u.len(), g_beta.iter().chain(g_phi.iter()).chain(g_theta.iter()).copied());
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain("non-finite profile objective".into()));
        }
        Ok(Point { value, grad, eta: sol.eta })
    }
}

fn describe(u: &[f64]) -> String {
    let parts: Vec<String> = u.iter().map(|v| format!("{v:.6}")).collect();
    format!("(β, φ, θ) = [{}]", parts.join(", "))
}

/// BFGS with backtracking; points where the inner problem has no solution are
/// treated as outside the domain.
pub(crate) fn minimize(profile: &Profile, start: Vec<f64>) -> Result<(Vec<f64>, Point, usize)> {
    let m = start.len();
    let mut u = DVector::from_vec(start);
    let mut cur = profile.eval(u.as_slice()).map_err(|e| match e {
        Error::HullViolation { residual, iterations, .. } => {
            Error::HullViolation { residual, iterations, context: Some(describe(u.as_slice())) }
        }
        other => other,
    })?;
    let mut hinv = DMatrix::identity(m, m);
    let mut fresh = true;
    for it in 0..MAX_ITER {
        let gmax = cur.grad.amax();
        if gmax <= GRAD_TOL {
            return Ok((u.as_slice().to_vec(), cur, it));
        }
        let mut dir = -&hinv * &cur.grad;
        let mut slope = cur.grad.dot(&dir);
        if slope >= 0.0 {
            hinv = DMatrix::identity(m, m);
            fresh = true;
            dir = -cur.grad.clone();
            slope = cur.grad.dot(&dir);
        }
        let flat = 64.0 * f64::EPSILON * (1.0 + cur.value.abs());
        let mut t = 1.0;
        let accepted = loop {
            let cand = &u + &dir * t;
            if let Ok(p) = profile.eval(cand.as_slice()) {
                if p.value <= cur.value + 1e-4 * t * slope || (p.value <= cur.value + flat && p.grad.amax() < gmax) {
                    break Some((cand, p));
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                break None;
            }
        };
        let Some((cand, next)) = accepted else {
            if !fresh {
                hinv = DMatrix::identity(m, m);
                fresh = true;
                continue;
            }
            // the objective is flat to rounding; accept a gradient already near the floor
            if gmax <= 1e3 * GRAD_TOL {
                return Ok((u.as_slice().to_vec(), cur, it));
            }
            return Err(Error::NonConvergence { what: format!("constrained likelihood at {}", describe(u.as_slice())), iterations: it });
        };
        let s = &cand - &u;
        let y = &next.grad - &cur.grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        u = cand;
        cur = next;
    }
    if cur.grad.amax() <= 1e3 * GRAD_TOL {
        return Ok((u.as_slice().to_vec(), cur, MAX_ITER));
    }
    Err(Error::NonConvergence { what: "constrained likelihood".into(), iterations: MAX_ITER })
}

pub fn fit_cmle_full(cs: &ConstraintSet, family: &OutcomeFamily, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let mle = fit_mle(family, data)?;
    fit_cmle_full_with_mle(cs, &mle, data, opts)
}

/// Starts from (β̃, φ̃, θ̃) and keeps the MLE dispersion and the working V fixed.
pub fn fit_cmle_full_with_mle(cs: &ConstraintSet, mle: &MleFit, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let p = match prepare(cs, mle, data, opts)? {
        Stage::Mle(fit) => return Ok(*fit),
        Stage::Ready(p) => *p,
    };
    let Prepared { cs, law, phi_tilde, gmm, kappa, v, mut diagnostics } = p;
    let profile = Profile { cs: &cs, law, data, k: kappa_v_inverse(&v, &kappa)?, phi_tilde: phi_tilde.clone() };
    let start: Vec<f64> = mle.beta().iter().chain(&phi_tilde).chain(&gmm.theta).copied().collect();
    let (u, point, iterations) = minimize(&profile, start)?;
    diagnostics.iterations = iterations;
    let d = cs.n_covariates + 1;
    let q = cs.phi_dim();
    let (beta, rest) = u.split_at(d);
    let (phi, theta) = rest.split_at(q);

    let ev = evaluate(&cs, law, beta, phi, theta, data, true)?;
    let blocks = blocks_from_evaluation(&cs, &law, beta, &ev, data, &kappa, &v)?;
    let var = variance_at(&law, beta, &ev, data, &blocks)?;
    note_damping(&mut diagnostics, &var.j_inverse);
    diagnostics.plugin_se = var.plugin_se;

    let out = FitResult {
        method: Method::CmleFull,
        beta_hat: beta.to_vec(),
        dispersion: law.family.has_dispersion().then_some(law.dispersion),
        phi_hat: phi.to_vec(),
        theta_hat: theta.to_vec(),
        eta_hat: point.eta.iter().copied().collect(),
        covariance: var.covariance,
        se_beta: Vec::new(),
        ci_beta: Vec::new(),
        alpha: opts.alpha,
        chi2_radius: 0.0,
        kappa,
        relative_efficiency: Vec::new(),
        mle_beta: Vec::new(),
        mle_se: Vec::new(),
        diagnostics,
    };
    Ok(out.finish_with_mle(mle))
}
