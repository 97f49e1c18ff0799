//! Density-ratio shift between the individual-level and aggregate populations.
//!
//! Covariate shift uses `w_X(x) = exp{Σ_j θ_j x_{h_j}}`; prior probability shift
//! uses `w_Y(y) = exp{Σ_j θ_j y^j}` for `j = 1..=s`. The shift parameter vector is
//! laid out as the covariate block followed by the outcome block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, Law};
use crate::quadrature::Quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    #[default]
    None,
    Covariate,
    PriorProbability,
    Both,
}

impl ShiftMode {
    pub fn covariate(&self) -> bool {
        matches!(self, ShiftMode::Covariate | ShiftMode::Both)
    }

    pub fn outcome(&self) -> bool {
        matches!(self, ShiftMode::PriorProbability | ShiftMode::Both)
    }

    pub fn parse(s: &str) -> Result<ShiftMode> {
        match s {
            "none" => Ok(ShiftMode::None),
            "covariate" => Ok(ShiftMode::Covariate),
            "prior_probability" | "prior" | "pps" => Ok(ShiftMode::PriorProbability),
            "both" => Ok(ShiftMode::Both),
            other => Err(Error::Config(format!("unknown shift mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ShiftSpec {
    pub mode: ShiftMode,
    /// Covariate indices entering `h(x)`.
    #[serde(default)]
    pub h_x: Vec<usize>,
    /// Polynomial degree `s` of `h(y)`.
    #[serde(default)]
    pub degree: usize,
}

impl ShiftSpec {
    pub fn none() -> Self {
        ShiftSpec::default()
    }

    pub fn covariate(h_x: Vec<usize>) -> Self {
        ShiftSpec { mode: ShiftMode::Covariate, h_x, degree: 0 }
    }

    pub fn prior_probability(degree: usize) -> Self {
        ShiftSpec { mode: ShiftMode::PriorProbability, h_x: Vec::new(), degree }
    }

    pub fn validate(&self, n_covariates: usize) -> Result<()> {
        if self.mode.covariate() {
            if self.h_x.is_empty() {
                return Err(Error::Config("covariate shift requires at least one basis covariate".into()));
            }
            if let Some(&j) = self.h_x.iter().find(|&&j| j >= n_covariates) {
                return Err(Error::Config(format!("shift basis covariate index {j} out of range")));
            }
        }
        if self.mode.outcome() && self.degree == 0 {
            return Err(Error::Config("prior probability shift requires degree s >= 1".into()));
        }
        Ok(())
    }

    pub fn x_dim(&self) -> usize {
        if self.mode.covariate() {
            self.h_x.len()
        } else {
            0
        }
    }

    pub fn y_dim(&self) -> usize {
        if self.mode.outcome() {
            self.degree
        } else {
            0
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.x_dim() + self.y_dim()
    }

    pub fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.x_dim())
    }

    /// log w_X(x; θ), exactly linear in θ.
    pub fn log_w_x(&self, theta: &[f64], x: &[f64]) -> f64 {
        if !self.mode.covariate() {
            return 0.0;
        }
        self.h_x.iter().zip(theta).map(|(&j, t)| t * x[j]).sum()
    }

    pub fn w_x(&self, theta: &[f64], x: &[f64]) -> f64 {
        if !self.mode.covariate() {
            return 1.0;
        }
        self.log_w_x(theta, x).exp()
    }

    /// h(x) for the covariate block.
    pub fn h_x_values(&self, x: &[f64]) -> Vec<f64> {
        if !self.mode.covariate() {
            return Vec::new();
        }
        self.h_x.iter().map(|&j| x[j]).collect()
    }

    /// log w_Y(y; θ) for the outcome block.
    pub fn log_w_y(&self, theta: &[f64], y: f64) -> f64 {
        if !self.mode.outcome() {
            return 0.0;
        }
        log_poly(self.split(theta).1, y)
    }

    pub fn w_y(&self, theta: &[f64], y: f64) -> f64 {
        self.log_w_y(theta, y).exp()
    }

    pub fn outcome_tilt(&self, law: Law, theta: &[f64]) -> Result<OutcomeTilt> {
        let theta_y = if self.mode.outcome() { self.split(theta).1.to_vec() } else { Vec::new() };
        OutcomeTilt::new(law, theta_y)
    }
}

/// Σ_j θ_j y^j, j = 1..=s
fn log_poly(theta_y: &[f64], y: f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = 1.0;
    for t in theta_y {
        pow *= y;
        acc += t * pow;
    }
    acc
}

/// A value with its derivatives in the linear predictor and the outcome tilt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Deriv {
    pub v: f64,
    pub d_eta: f64,
    pub d_theta: Vec<f64>,
}

/// Outcome integrals for one covariate row:
/// `m0 = ∫ w_Y f`, `m1 = ∫ y w_Y f` and `cells[k] = ∫_{cell k} w_Y f`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMoments {
    pub m0: Deriv,
    pub m1: Deriv,
    pub cells: Vec<Deriv>,
}

/// The outcome law tilted by `w_Y`: same-family closed forms for `s = 1`,
/// adaptive quadrature or summation otherwise.
#[derive(Debug, Clone)]
pub struct OutcomeTilt {
    pub law: Law,
    pub theta_y: Vec<f64>,
    pub quad: Quadrature,
}

impl OutcomeTilt {
    pub fn new(law: Law, theta_y: Vec<f64>) -> Result<OutcomeTilt> {
        if theta_y.iter().any(|t| !t.is_finite()) {
            return Err(Error::TiltInfeasible("non-finite tilt parameter".into()));
        }
        Ok(OutcomeTilt { law, theta_y, quad: Quadrature::default() })
    }

    pub fn degree(&self) -> usize {
        self.theta_y.len()
    }

    fn highest_nonzero(&self) -> Option<(usize, f64)> {
        self.theta_y.iter().enumerate().rev().find(|(_, t)| **t != 0.0).map(|(j, t)| (j + 1, *t))
    }

    /// Checks that ∫ w_Y f dy is finite at the given linear predictor.
    pub fn check_feasible(&self, eta: f64) -> Result<()> {
        let Some((j, t)) = self.highest_nonzero() else { return Ok(()) };
        let ok = match self.law.family {
            Family::BernoulliLogit => true,
            Family::Gaussian => {
                if j >= 3 {
                    j % 2 == 0 && t < 0.0
                } else if j == 2 {
                    t < 0.5 / (self.law.dispersion * self.law.dispersion)
                } else {
                    true
                }
            }
            Family::PoissonLog => j == 1 || t < 0.0,
            Family::GammaLog => {
                if j >= 2 {
                    t < 0.0
                } else {
                    t < self.law.gamma_rate(eta)
                }
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::TiltInfeasible(format!(
                "outcome tilt {:?} is not integrable for the {} family at linear predictor {eta}",
                self.theta_y,
                self.law.family.name()
            )))
        }
    }

    /// Moments and cell masses with derivatives, for cells `(lo, hi]`.
    pub fn moments(&self, eta: f64, cells: &[(f64, f64)]) -> Result<RowMoments> {
        match self.degree() {
            0 => self.untilted(eta, cells),
            1 => self.linear(eta, cells),
            _ => self.polynomial(eta, cells),
        }
    }

    fn untilted(&self, eta: f64, cells: &[(f64, f64)]) -> Result<RowMoments> {
        let law = &self.law;
        let mut out = Vec::with_capacity(cells.len());
        for &(lo, hi) in cells {
            let (p, dp) = law.interval(eta, lo, hi)?;
            out.push(Deriv { v: p, d_eta: dp, d_theta: Vec::new() });
        }
        Ok(RowMoments {
            m0: Deriv { v: 1.0, d_eta: 0.0, d_theta: Vec::new() },
            m1: Deriv { v: law.mean(eta), d_eta: law.mean_deriv(eta), d_theta: Vec::new() },
            cells: out,
        })
    }

    fn linear(&self, eta: f64, cells: &[(f64, f64)]) -> Result<RowMoments> {
        let law = &self.law;
        let t = law.tilt(eta, self.theta_y[0])?;
        let e = t.log_norm.exp();
        if !e.is_finite() {
            return Err(Error::TiltInfeasible(format!("tilt normalizer overflows at linear predictor {eta}")));
        }
        // g(η, θ) = e^A · q(η*): ∂g = e^A (q ∂A + q' ∂η*)
        let combine = |q: f64, dq: f64| Deriv {
            v: e * q,
            d_eta: e * (q * t.dlog_norm_deta + dq * t.deta_star_deta),
            d_theta: vec![e * (q * t.dlog_norm_dtheta + dq * t.deta_star_dtheta)],
        };
        let m0 = combine(1.0, 0.0);
        let m1 = combine(law.mean(t.eta_star), law.mean_deriv(t.eta_star));
        let mut out = Vec::with_capacity(cells.len());
        for &(lo, hi) in cells {
            let (p, dp) = law.interval(t.eta_star, lo, hi)?;
            out.push(combine(p, dp));
        }
        Ok(RowMoments { m0, m1, cells: out })
    }

    fn polynomial(&self, eta: f64, cells: &[(f64, f64)]) -> Result<RowMoments> {
        self.check_feasible(eta)?;
        let s = self.degree();
        let law = self.law;
        // pieces between consecutive breakpoints
        let mut cuts: Vec<f64> = cells.iter().flat_map(|&(a, b)| [a, b]).filter(|v| v.is_finite()).collect();
        for &(a, b) in cells {
            if !(a < b) {
                return Err(Error::Domain(format!("cell requires lo < hi (got ({a}, {b}])")));
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut bounds = vec![f64::NEG_INFINITY];
        bounds.extend(cuts);
        bounds.push(f64::INFINITY);

        // layout per piece: [w·(1, sc, y^1..y^s), w·y·(1, sc, y^1..y^s)]
        let width = 2 + s;
        let dim = 2 * width;
        let theta = &self.theta_y;
        let mut pieces = Vec::with_capacity(bounds.len() - 1);
        for k in 0..bounds.len() - 1 {
            let (lo, hi) = (bounds[k], bounds[k + 1]);
            let v = law.expect(eta, lo, hi, dim, &self.quad, |y, out| {
                let w = log_poly(theta, y).exp();
                let sc = law.score_eta(y, eta);
                out[0] = w;
                out[1] = w * sc;
                let mut pow = 1.0;
                for j in 0..s {
                    pow *= y;
                    out[2 + j] = w * pow;
                }
                for j in 0..width {
                    out[width + j] = out[j] * y;
                }
            })?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::TiltInfeasible(format!("outcome tilt integral diverges at linear predictor {eta}")));
            }
            pieces.push((lo, hi, v));
        }
        let deriv = |acc: &[f64], offset: usize| Deriv {
            v: acc[offset],
            d_eta: acc[offset + 1],
            d_theta: acc[offset + 2..offset + 2 + s].to_vec(),
        };
        let mut total = vec![0.0; dim];
        for (_, _, v) in &pieces {
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
        }
        let mut out = Vec::with_capacity(cells.len());
        for &(a, b) in cells {
            let mut acc = vec![0.0; width];
            for (lo, hi, v) in &pieces {
                if *lo >= a && *hi <= b {
                    for (t, x) in acc.iter_mut().zip(&v[..width]) {
                        *t += x;
                    }
                }
            }
            out.push(deriv(&acc, 0));
        }
        Ok(RowMoments { m0: deriv(&total, 0), m1: deriv(&total, width), cells: out })
    }

    /// E*[Y | x] under the tilted law.
    pub fn tilted_mean(&self, eta: f64) -> Result<f64> {
        let m = self.moments(eta, &[])?;
        Ok(m.m1.v / m.m0.v)
    }

    /// log ∫ w_Y(y) f(y|x) dy
    pub fn log_scaling(&self, eta: f64) -> Result<f64> {
        Ok(self.moments(eta, &[])?.m0.v.ln())
    }

    /// Draws from f*(y | x) ∝ w_Y(y) f(y | x).
    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<f64> {
        match self.degree() {
            0 => Ok(self.law.sample(eta, rng)),
            1 => {
                let t = self.law.tilt(eta, self.theta_y[0])?;
                Ok(self.law.sample(t.eta_star, rng))
            }
            _ => self.sample_inverse_cdf(eta, rng),
        }
    }

    fn sample_inverse_cdf<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<f64> {
        let total = self.moments(eta, &[])?.m0.v;
        let u: f64 = rng.random::<f64>() * total;
        let theta = &self.theta_y;
        match self.law.family {
            Family::BernoulliLogit | Family::PoissonLog => {
                let mut acc = 0.0;
                let mut k = 0.0;
                loop {
                    acc += self.law.density(k, eta) * log_poly(theta, k).exp();
                    if acc >= u || k > 1e7 || (self.law.family == Family::BernoulliLogit && k >= 1.0) {
                        return Ok(k);
                    }
                    k += 1.0;
                }
            }
            Family::Gaussian | Family::GammaLog => {
                let mass_below = |t: f64| -> Result<f64> { Ok(self.moments(eta, &[(f64::NEG_INFINITY, t)])?.cells[0].v) };
                let hint = self.law.hint(eta);
                let mut lo = if self.law.family == Family::GammaLog { 0.0 } else { hint.center - hint.scale };
                let mut hi = hint.center + hint.scale;
                while self.law.family == Family::Gaussian && mass_below(lo)? > u {
                    lo -= 2.0 * (hi - lo);
                }
                while mass_below(hi)? < u {
                    hi += 2.0 * (hi - lo);
                }
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if mass_below(mid)? < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
                        break;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}
