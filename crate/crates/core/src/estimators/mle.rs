//! Unconstrained maximum likelihood on the IPD alone.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::digamma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{design_row, Family, Law, LinearPredictorParams, OutcomeFamily, ShapeHandling};

pub const MAX_ITER: usize = 100;
/// Linear predictors beyond this magnitude signal a diverging logistic fit.
const SEPARATION_ETA: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub family: OutcomeFamily,
    pub params: LinearPredictorParams,
    pub loglik: f64,
    /// Inverse observed information for β.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
    /// Zero residual variance (exact fit); covariance is then zero.
    pub degenerate: bool,
}

impl MleFit {
    pub fn beta(&self) -> &[f64] {
        self.params.beta.as_slice()
    }

    pub fn se(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn law(&self) -> Result<Law> {
        if self.degenerate {
            return Err(Error::Domain("the MLE is degenerate (zero residual variance)".into()));
        }
        self.family.law(&self.params)
    }
}

fn design(data: &Dataset) -> DMatrix<f64> {
    let d = data.p + 1;
    DMatrix::from_fn(data.n(), d, |i, j| if j == 0 { 1.0 } else { data.row(i)[j - 1] })
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < x.ncols() {
        return Err(Error::RankDeficient);
    }
    let r = x.clone().qr().r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 || diag.iter().any(|&v| v <= 1e-10 * max) {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

/// Σ log f, Σ score and Σ Hessian at β for a fixed law.
pub(crate) fn loglik_parts(law: &Law, beta: &[f64], data: &Dataset) -> (f64, DVector<f64>, DMatrix<f64>) {
    let d = beta.len();
    let mut ll = 0.0;
    let mut g = DVector::zeros(d);
    let mut h = DMatrix::zeros(d, d);
    for i in 0..data.n() {
        let x = data.row(i);
        let eta = beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        let y = data.y[i];
        ll += law.log_density_unchecked(y, eta);
        let xt = design_row(x);
        g.axpy(law.score_eta(y, eta), &xt, 1.0);
        h.ger(law.hess_eta(y, eta), &xt, &xt, 1.0);
    }
    (ll, g, h)
}

fn check_support(law: &Law, data: &Dataset) -> Result<()> {
    for (i, &y) in data.y.iter().enumerate() {
        law.check_support(y).map_err(|e| Error::Domain(format!("row {}: {e}", i + 1)))?;
    }
    Ok(())
}

fn information_inverse(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let info = -h;
    crate::linalg::spd_inverse(&info).ok_or(Error::SingularHessian { cond: crate::linalg::condition_number(&info) })
}

fn fit_gaussian(family: OutcomeFamily, data: &Dataset, x: &DMatrix<f64>) -> Result<MleFit> {
    let y = DVector::from_column_slice(&data.y);
    let qr = x.clone().qr();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let d = x.ncols();
    let beta = qr.r().solve_upper_triangular(&qty.rows(0, d).into_owned()).ok_or(Error::RankDeficient)?;
    let resid = &y - x * &beta;
    let n = data.n() as f64;
    let sigma = (resid.norm_squared() / n).sqrt();
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt().max(1.0);
    if sigma <= 1e-12 * scale {
        return Ok(MleFit {
            family,
            params: LinearPredictorParams { beta, sigma: Some(0.0), nu: None },
            loglik: f64::INFINITY,
            covariance: DMatrix::zeros(x.ncols(), x.ncols()),
            iterations: 1,
            degenerate: true,
        });
    }
    let law = Law::new(Family::Gaussian, sigma)?;
    let (loglik, _, h) = loglik_parts(&law, beta.as_slice(), data);
    Ok(MleFit {
        family,
        params: LinearPredictorParams { beta, sigma: Some(sigma), nu: None },
        loglik,
        covariance: information_inverse(&h)?,
        iterations: 1,
        degenerate: false,
    })
}

/// Damped Newton on β for a fixed dispersion.
fn newton(law: &Law, data: &Dataset, start: Vec<f64>) -> Result<(Vec<f64>, usize)> {
    let mut beta = start;
    let (mut ll, _, _) = loglik_parts(law, &beta, data);
    for it in 1..=MAX_ITER {
        let (_, g, h) = loglik_parts(law, &beta, data);
        let info = -&h;
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&g),
            None if law.family == Family::BernoulliLogit => {
                return Err(Error::Separation("information matrix became singular".into()))
            }
            None => return Err(Error::SingularHessian { cond: crate::linalg::condition_number(&info) }),
        };
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let (lc, _, _) = loglik_parts(law, &cand, data);
            if lc.is_finite() && lc >= ll - 1e-12 * ll.abs().max(1.0) {
                accepted = Some((cand, lc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, lc)) = accepted else {
            return Err(Error::NonConvergence { what: "maximum likelihood line search".into(), iterations: it });
        };
        let change = step.amax() * t;
        beta = cand;
        ll = lc;
        if law.family == Family::BernoulliLogit {
            let max_eta = (0..data.n())
                .map(|i| {
                    let x = data.row(i);
                    (beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()).abs()
                })
                .fold(0.0, f64::max);
            if max_eta > SEPARATION_ETA {
                return Err(Error::Separation(format!("linear predictor reached {max_eta:.1}; the outcome is separable")));
            }
        }
        if change <= 1e-10 * (1.0 + beta.iter().fold(0.0_f64, |m, b| m.max(b.abs()))) {
            return Ok((beta, it));
        }
    }
    Err(Error::NonConvergence { what: "maximum likelihood".into(), iterations: MAX_ITER })
}

/// Solves log ν − ψ(ν) = D for the gamma shape by bisection on log ν.
fn gamma_shape(dev: f64) -> f64 {
    let (mut lo, mut hi) = (-20.0_f64, 30.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let nu = mid.exp();
        if nu.ln() - digamma(nu) > dev {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Maximizes Σ log f(Y_i | X_i; β) over β, with σ (gaussian) and ν (gamma,
/// unless known) estimated jointly.
pub fn fit_mle(family: &OutcomeFamily, data: &Dataset) -> Result<MleFit> {
    let x = design(data);
    check_rank(&x)?;
    let n = data.n() as f64;
    let ybar = data.y.iter().sum::<f64>() / n;
    let d = data.p + 1;
    let start = |intercept: f64| {
        let mut b = vec![0.0; d];
        b[0] = intercept;
        b
    };
    match family.family {
        Family::Gaussian => fit_gaussian(*family, data, &x),
        Family::BernoulliLogit => {
            let law = Law::new(Family::BernoulliLogit, 1.0)?;
            check_support(&law, data)?;
            if ybar == 0.0 || ybar == 1.0 {
                return Err(Error::Separation("the outcome takes a single value".into()));
            }
            let (beta, iterations) = newton(&law, data, start((ybar / (1.0 - ybar)).ln()))?;
            finish(*family, law, data, beta, iterations, None)
        }
        Family::PoissonLog => {
            let law = Law::new(Family::PoissonLog, 1.0)?;
            check_support(&law, data)?;
            if ybar == 0.0 {
                return Err(Error::Separation("all counts are zero".into()));
            }
            let (beta, iterations) = newton(&law, data, start(ybar.ln()))?;
            finish(*family, law, data, beta, iterations, None)
        }
        Family::GammaLog => {
            let unit = Law::new(Family::GammaLog, 1.0)?;
            check_support(&unit, data)?;
            // the β score is proportional to ν, so β̂ does not depend on the shape
            let (beta, iterations) = newton(&unit, data, start(ybar.ln()))?;
            let nu = match family.shape {
                ShapeHandling::Known(nu) => nu,
                ShapeHandling::Estimate => {
                    let dev = (0..data.n())
                        .map(|i| {
                            let x = data.row(i);
                            let eta = beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                            let r = data.y[i] / eta.exp();
                            r - r.ln() - 1.0
                        })
                        .sum::<f64>()
                        / n;
                    if dev <= 1e-14 {
                        let params = LinearPredictorParams { beta: DVector::from_vec(beta), sigma: None, nu: Some(f64::INFINITY) };
                        return Ok(MleFit {
                            family: *family,
                            params,
                            loglik: f64::INFINITY,
                            covariance: DMatrix::zeros(d, d),
                            iterations,
                            degenerate: true,
                        });
                    }
                    gamma_shape(dev)
                }
            };
            let law = Law::new(Family::GammaLog, nu)?;
            finish(*family, law, data, beta, iterations, Some(nu))
        }
    }
}

fn finish(family: OutcomeFamily, law: Law, data: &Dataset, beta: Vec<f64>, iterations: usize, nu: Option<f64>) -> Result<MleFit> {
    let (loglik, _, h) = loglik_parts(&law, &beta, data);
    Ok(MleFit {
        family,
        params: LinearPredictorParams { beta: DVector::from_vec(beta), sigma: None, nu },
        loglik,
        covariance: information_inverse(&h)?,
        iterations,
        degenerate: false,
    })
}
