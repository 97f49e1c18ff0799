//! Per-family conditional laws of Y evaluated at a scalar linear predictor.
//!
//! Everything the constraint system needs from the outcome model depends on a
//! covariate vector only through the linear predictor `eta = x̃ᵀβ`, so the
//! family services below are functions of `eta` and the fixed dispersion.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Poisson as PoissonDist, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::{checked_gamma_lr, checked_gamma_ur, ln_gamma};

use super::Family;
use crate::error::{Error, Result};
use crate::quadrature::{Hint, Quadrature};

/// Cap applied to the argument of `exp` on log-link evaluations.
pub const EXP_CAP: f64 = 700.0;

pub(crate) fn exp_capped(x: f64) -> f64 {
    x.min(EXP_CAP).exp()
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn std_normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Φ(z)
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Φ(b) − Φ(a) without cancellation in the upper tail.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

fn gamma_lower(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        checked_gamma_lr(a, x).unwrap_or(f64::NAN)
    }
}

fn gamma_upper(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        checked_gamma_ur(a, x).unwrap_or(f64::NAN)
    }
}

/// Exponential tilt of a law at a fixed linear predictor: the tilted law is
/// the same family at `eta_star`, and `log_norm` is log ∫ f(y) e^{θy} dy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub eta_star: f64,
    pub log_norm: f64,
    pub deta_star_deta: f64,
    pub deta_star_dtheta: f64,
    pub dlog_norm_deta: f64,
    pub dlog_norm_dtheta: f64,
}

/// The conditional distribution Y | eta for one family with its dispersion fixed
/// (σ for gaussian, shape ν for gamma, unused otherwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Law {
    pub family: Family,
    pub dispersion: f64,
}

impl Law {
    pub fn new(family: Family, dispersion: f64) -> Result<Law> {
        match family {
            Family::Gaussian | Family::GammaLog => {
                if !(dispersion > 0.0 && dispersion.is_finite()) {
                    return Err(Error::Domain(format!(
                        "{} requires a positive {} (got {dispersion})",
                        family.name(),
                        if family == Family::Gaussian { "sigma" } else { "shape nu" }
                    )));
                }
            }
            _ => {}
        }
        Ok(Law { family, dispersion })
    }

    pub fn check_support(&self, y: f64) -> Result<()> {
        let ok = match self.family {
            Family::Gaussian => y.is_finite(),
            Family::BernoulliLogit => y == 0.0 || y == 1.0,
            Family::PoissonLog => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            Family::GammaLog => y > 0.0 && y.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("y = {y} is outside the {} support", self.family.name())))
        }
    }

    /// Gamma rate λ = ν exp(−η).
    pub fn gamma_rate(&self, eta: f64) -> f64 {
        self.dispersion * exp_capped(-eta)
    }

    pub fn log_density(&self, y: f64, eta: f64) -> Result<f64> {
        self.check_support(y)?;
        Ok(self.log_density_unchecked(y, eta))
    }

    pub(crate) fn log_density_unchecked(&self, y: f64, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => {
                let s = self.dispersion;
                let r = (y - eta) / s;
                -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * r * r
            }
            Family::BernoulliLogit => y * eta - softplus(eta),
            Family::PoissonLog => y * eta - exp_capped(eta) - ln_gamma(y + 1.0),
            Family::GammaLog => {
                let nu = self.dispersion;
                let log_rate = nu.ln() - eta;
                nu * log_rate - ln_gamma(nu) + (nu - 1.0) * y.ln() - log_rate.min(EXP_CAP).exp() * y
            }
        }
    }

    /// f(y | eta); zero outside the support.
    pub fn density(&self, y: f64, eta: f64) -> f64 {
        if self.check_support(y).is_err() {
            return 0.0;
        }
        self.log_density_unchecked(y, eta).exp()
    }

    /// ∂ log f / ∂eta
    pub fn score_eta(&self, y: f64, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => (y - eta) / (self.dispersion * self.dispersion),
            Family::BernoulliLogit => y - expit(eta),
            Family::PoissonLog => y - exp_capped(eta),
            Family::GammaLog => self.gamma_rate(eta) * y - self.dispersion,
        }
    }

    /// ∂² log f / ∂eta²
    pub fn hess_eta(&self, y: f64, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => -1.0 / (self.dispersion * self.dispersion),
            Family::BernoulliLogit => {
                let p = expit(eta);
                -p * (1.0 - p)
            }
            Family::PoissonLog => -exp_capped(eta),
            Family::GammaLog => -self.gamma_rate(eta) * y,
        }
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => eta,
            Family::BernoulliLogit => expit(eta),
            Family::PoissonLog | Family::GammaLog => exp_capped(eta),
        }
    }

    pub fn mean_deriv(&self, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => 1.0,
            Family::BernoulliLogit => {
                let p = expit(eta);
                p * (1.0 - p)
            }
            Family::PoissonLog | Family::GammaLog => exp_capped(eta),
        }
    }

    pub fn variance(&self, eta: f64) -> f64 {
        match self.family {
            Family::Gaussian => self.dispersion * self.dispersion,
            Family::BernoulliLogit => {
                let p = expit(eta);
                p * (1.0 - p)
            }
            Family::PoissonLog => exp_capped(eta),
            Family::GammaLog => {
                let m = exp_capped(eta);
                m * m / self.dispersion
            }
        }
    }

    /// P(lo < Y ≤ hi | eta) and its derivative in eta, in closed form.
    pub fn interval(&self, eta: f64, lo: f64, hi: f64) -> Result<(f64, f64)> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Domain(format!("interval requires lo < hi (got ({lo}, {hi}])")));
        }
        Ok(match self.family {
            Family::Gaussian => {
                let s = self.dispersion;
                let za = (lo - eta) / s;
                let zb = (hi - eta) / s;
                let p = normal_mass(za, zb).clamp(0.0, 1.0);
                (p, (std_normal_pdf(za) - std_normal_pdf(zb)) / s)
            }
            Family::BernoulliLogit => {
                let p1 = expit(eta);
                let v = p1 * (1.0 - p1);
                let mut p = 0.0;
                let mut d = 0.0;
                if lo < 0.0 && 0.0 <= hi {
                    p += 1.0 - p1;
                    d -= v;
                }
                if lo < 1.0 && 1.0 <= hi {
                    p += p1;
                    d += v;
                }
                (p, d)
            }
            Family::PoissonLog => {
                let lambda = exp_capped(eta);
                // cumulative counts at the floor of each bound
                let k_lo = if lo < 0.0 { None } else { Some(lo.floor()) };
                let k_hi = if hi < 0.0 { None } else { Some(hi.floor()) };
                let cdf = |k: Option<f64>| match k {
                    None => 0.0,
                    Some(k) if k.is_infinite() => 1.0,
                    Some(k) => gamma_upper(k + 1.0, lambda),
                };
                let sf = |k: Option<f64>| match k {
                    None => 1.0,
                    Some(k) if k.is_infinite() => 0.0,
                    Some(k) => gamma_lower(k + 1.0, lambda),
                };
                let pmf = |k: Option<f64>| match k {
                    None => 0.0,
                    Some(k) if k.is_infinite() => 0.0,
                    Some(k) => (k * lambda.ln() - lambda - ln_gamma(k + 1.0)).exp(),
                };
                let upper_tail = matches!(k_lo, Some(k) if k >= lambda);
                let p = if upper_tail { sf(k_lo) - sf(k_hi) } else { cdf(k_hi) - cdf(k_lo) };
                let d = lambda * (pmf(k_lo) - pmf(k_hi));
                (p.clamp(0.0, 1.0), d)
            }
            Family::GammaLog => {
                let nu = self.dispersion;
                let rate = self.gamma_rate(eta);
                let xa = (rate * lo).max(0.0);
                let xb = if hi.is_infinite() { f64::INFINITY } else { (rate * hi).max(0.0) };
                let p = if xa > nu { gamma_upper(nu, xa) - gamma_upper(nu, xb) } else { gamma_lower(nu, xb) - gamma_lower(nu, xa) };
                // dF(y)/deta = −(λy)^ν e^{−λy} / Γ(ν)
                let kernel = |x: f64| {
                    if x <= 0.0 || x.is_infinite() {
                        0.0
                    } else {
                        (nu * x.ln() - x - ln_gamma(nu)).exp()
                    }
                };
                (p.clamp(0.0, 1.0), kernel(xa) - kernel(xb))
            }
        })
    }

    /// Closed-form exponential tilt by e^{θy}.
    ///
    /// The Poisson tilt multiplies the rate by e^{+θ}; that is the sign that
    /// reproduces ∫ f(y) e^{θy} dy = exp{λ(e^θ − 1)}.
    pub fn tilt(&self, eta: f64, theta: f64) -> Result<Tilt> {
        if !theta.is_finite() {
            return Err(Error::TiltInfeasible(format!("non-finite tilt {theta}")));
        }
        Ok(match self.family {
            Family::BernoulliLogit => {
                let es = eta + theta;
                Tilt {
                    eta_star: es,
                    log_norm: softplus(es) - softplus(eta),
                    deta_star_deta: 1.0,
                    deta_star_dtheta: 1.0,
                    dlog_norm_deta: expit(es) - expit(eta),
                    dlog_norm_dtheta: expit(es),
                }
            }
            Family::PoissonLog => {
                let lambda = exp_capped(eta);
                let a = lambda * theta.exp_m1();
                Tilt {
                    eta_star: eta + theta,
                    log_norm: a,
                    deta_star_deta: 1.0,
                    deta_star_dtheta: 1.0,
                    dlog_norm_deta: a,
                    dlog_norm_dtheta: exp_capped(eta + theta),
                }
            }
            Family::Gaussian => {
                let s2 = self.dispersion * self.dispersion;
                Tilt {
                    eta_star: eta + s2 * theta,
                    log_norm: eta * theta + 0.5 * s2 * theta * theta,
                    deta_star_deta: 1.0,
                    deta_star_dtheta: s2,
                    dlog_norm_deta: theta,
                    dlog_norm_dtheta: eta + s2 * theta,
                }
            }
            Family::GammaLog => {
                let nu = self.dispersion;
                let rate = self.gamma_rate(eta);
                let tilted = rate - theta;
                if !(tilted > 0.0) {
                    return Err(Error::TiltInfeasible(format!(
                        "gamma tilt θ = {theta} must stay below the rate λ = {rate}"
                    )));
                }
                Tilt {
                    eta_star: if theta == 0.0 { eta } else { nu.ln() - tilted.ln() },
                    log_norm: nu * (rate.ln() - tilted.ln()),
                    deta_star_deta: rate / tilted,
                    deta_star_dtheta: 1.0 / tilted,
                    dlog_norm_deta: nu * theta / tilted,
                    dlog_norm_dtheta: nu / tilted,
                }
            }
        })
    }

    /// Location/scale hint for integrating over the outcome.
    pub fn hint(&self, eta: f64) -> Hint {
        let m = self.mean(eta);
        let sd = self.variance(eta).sqrt();
        Hint { center: m, scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 } }
    }

    /// ∫_{(lo, hi]} g(y) f(y | eta) dy for a vector-valued `g`, by summation on
    /// discrete supports and adaptive quadrature otherwise.
    pub fn expect<G>(&self, eta: f64, lo: f64, hi: f64, dim: usize, quad: &Quadrature, mut g: G) -> Result<Vec<f64>>
    where
        G: FnMut(f64, &mut [f64]),
    {
        if lo >= hi {
            return Err(Error::Domain(format!("interval requires lo < hi (got ({lo}, {hi}])")));
        }
        let mut scratch = vec![0.0; dim];
        match self.family {
            Family::BernoulliLogit => {
                let mut acc = vec![0.0; dim];
                for y in [0.0, 1.0] {
                    if lo < y && y <= hi {
                        let w = self.density(y, eta);
                        g(y, &mut scratch);
                        for (a, s) in acc.iter_mut().zip(&scratch) {
                            *a += w * s;
                        }
                    }
                }
                Ok(acc)
            }
            Family::PoissonLog => {
                let mut acc = vec![0.0; dim];
                let start = if lo < 0.0 { 0.0 } else { lo.floor() + 1.0 };
                let lambda = exp_capped(eta);
                let mut k = start;
                let mut quiet = 0;
                let mut steps = 0usize;
                while k <= hi {
                    let w = self.density(k, eta);
                    g(k, &mut scratch);
                    let mut biggest = 0.0_f64;
                    for (a, s) in acc.iter_mut().zip(&scratch) {
                        let t = w * s;
                        *a += t;
                        biggest = biggest.max(t.abs());
                    }
                    let norm = acc.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    if k > lambda && biggest <= 1e-17 * norm.max(1e-300) {
                        quiet += 1;
                        if quiet >= 10 {
                            break;
                        }
                    } else {
                        quiet = 0;
                    }
                    k += 1.0;
                    steps += 1;
                    if steps > 1_000_000 {
                        return Err(Error::NonConvergence { what: "poisson summation".into(), iterations: steps });
                    }
                }
                Ok(acc)
            }
            Family::Gaussian | Family::GammaLog => {
                let lo = if self.family == Family::GammaLog { lo.max(0.0) } else { lo };
                if lo >= hi {
                    return Ok(vec![0.0; dim]);
                }
                let law = *self;
                quad.integrate(dim, lo, hi, self.hint(eta), |y, out| {
                    let w = law.density(y, eta);
                    if w == 0.0 {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        return;
                    }
                    g(y, out);
                    out.iter_mut().for_each(|v| *v *= w);
                })
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        match self.family {
            Family::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                eta + self.dispersion * z
            }
            Family::BernoulliLogit => {
                let u: f64 = rng.random();
                if u < expit(eta) {
                    1.0
                } else {
                    0.0
                }
            }
            Family::PoissonLog => {
                let lambda = exp_capped(eta);
                if lambda <= 0.0 {
                    return 0.0;
                }
                PoissonDist::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0)
            }
            Family::GammaLog => {
                let rate = self.gamma_rate(eta);
                GammaDist::new(self.dispersion, 1.0 / rate).map(|d| d.sample(rng)).unwrap_or(f64::NAN)
            }
        }
    }
}
