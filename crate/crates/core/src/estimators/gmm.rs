//! Initial shift parameters θ̃ minimizing ‖Σ_i ψ(X_i; β̃, φ̃, θ)‖².

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregates::{evaluate, ratio_mass, ConstraintSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Family, Law};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions { restarts: 4, seed: 0x6a09_e667, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub theta: Vec<f64>,
    /// ‖Σ_i ψ_i‖² at θ̃
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Problem<'a> {
    cs: &'a ConstraintSet,
    law: Law,
    beta: &'a [f64],
    phi: &'a [f64],
    data: &'a Dataset,
    /// Upper bound on the linear outcome tilt (gamma rate positivity).
    upper: Option<f64>,
}

impl Problem<'_> {
    /// Mass-normalized moment ḡ(θ)/M(θ) and its transposed Jacobian (s × r).
    /// Normalizing keeps the search away from tilts that shrink every row to zero.
    fn moments(&self, theta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let eval = evaluate(self.cs, self.law, self.beta, self.phi, theta, self.data, true)?;
        let g = DVector::from_vec(eval.mean());
        let jac = eval.jacobians(self.cs, self.data, None);
        let (m, dm) = ratio_mass(self.cs, self.law, self.beta, theta, self.data)?;
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::TiltInfeasible(format!("density-ratio mass {m} at θ = {theta:?}")));
        }
        let dm = DVector::from_vec(dm);
        let gt = jac.d_theta / m - &dm * g.transpose() / (m * m);
        Ok((g / m, gt))
    }

    fn project(&self, theta: &mut [f64]) {
        if let Some(ub) = self.upper {
            let k = self.cs.shift.x_dim();
            theta[k] = theta[k].min(ub);
        }
    }

    fn levenberg_marquardt(&self, start: Vec<f64>, max_iter: usize) -> Option<(Vec<f64>, f64, usize, bool)> {
        let mut theta = start;
        self.project(&mut theta);
        let (mut g, mut gt) = self.moments(&theta).ok()?;
        let mut obj = g.norm_squared();
        let mut lambda = 1e-3;
        let s = theta.len();
        for it in 1..=max_iter {
            if obj == 0.0 {
                return Some((theta, obj, it, true));
            }
            let grad = &gt * &g;
            let a = &gt * gt.transpose();
            let mut accepted = None;
            while lambda < 1e16 {
                let mut m = a.clone();
                for i in 0..s {
                    m[(i, i)] += lambda * a[(i, i)].max(1e-12);
                }
                let Some(chol) = m.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&(-&grad));
                let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
                self.project(&mut cand);
                match self.moments(&cand) {
                    Ok((gc, gtc)) if gc.norm_squared() < obj => {
                        accepted = Some((cand, gc, gtc, step.amax()));
                        lambda = (lambda / 10.0).max(1e-12);
                        break;
                    }
                    _ => lambda *= 10.0,
                }
            }
            let Some((cand, gc, gtc, step)) = accepted else {
                // no descent direction left: θ is stationary to working precision
                return Some((theta, obj, it, true));
            };
            let scale = 1.0 + cand.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            theta = cand;
            g = gc;
            gt = gtc;
            obj = g.norm_squared();
            if step <= 1e-14 * scale {
                return Some((theta, obj, it, true));
            }
        }
        Some((theta, obj, max_iter, false))
    }
}

/// Smallest gamma rate over the IPD when the outcome tilt is linear.
fn gamma_tilt_bound(cs: &ConstraintSet, law: &Law, beta: &[f64], data: &Dataset) -> Option<f64> {
    if law.family != Family::GammaLog || cs.shift.y_dim() != 1 {
        return None;
    }
    let min_rate = (0..data.n())
        .map(|i| {
            let x = data.row(i);
            law.gamma_rate(beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
        })
        .fold(f64::INFINITY, f64::min);
    Some(min_rate * (1.0 - 1e-6))
}

/// Gauss–Newton (Levenberg–Marquardt) from θ = 0 plus random restarts; keeps
/// the start with the smallest objective.
pub fn init_theta_gmm(
    cs: &ConstraintSet,
    law: Law,
    beta: &[f64],
    phi: &[f64],
    data: &Dataset,
    opts: &GmmOptions,
) -> Result<GmmFit> {
    let s = cs.theta_dim();
    let r = cs.psi_dim();
    let n = data.n() as f64;
    if s == 0 {
        let eval = evaluate(cs, law, beta, phi, &[], data, false)?;
        let g = DVector::from_vec(eval.mean());
        return Ok(GmmFit { theta: Vec::new(), objective: n * n * g.norm_squared(), iterations: 0, converged: true });
    }
    if r < s {
        return Err(Error::Identification(format!(
            "{r} constraints cannot identify {s} shift parameters (need dim(ψ) > dim(θ))"
        )));
    }
    let problem = Problem { cs, law, beta, phi, data, upper: gamma_tilt_bound(cs, &law, beta, data) };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![0.0; s]];
    for _ in 0..opts.restarts {
        starts.push((0..s).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    let mut total_iter = 0;
    for start in starts {
        if let Some(run) = problem.levenberg_marquardt(start, opts.max_iter) {
            total_iter += run.2;
            if best.as_ref().is_none_or(|b| run.1 < b.1) {
                best = Some(run);
            }
        }
    }
    let (theta, _, _, converged) = best.ok_or_else(|| Error::NonConvergence {
        what: "GMM initializer (no feasible start)".into(),
        iterations: total_iter,
    })?;
    let raw = DVector::from_vec(evaluate(cs, law, beta, phi, &theta, data, false)?.mean());
    Ok(GmmFit { theta, objective: n * n * raw.norm_squared(), iterations: total_iter, converged })
}
