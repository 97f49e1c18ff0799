//! Parametric outcome families f(y | x; β) with scores, Hessians, conditional
//! moments, interval probabilities and exponentially tilted counterparts.

mod law;

pub use law::{Law, Tilt, EXP_CAP};
pub(crate) use law::expit;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    BernoulliLogit,
    PoissonLog,
    GammaLog,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::BernoulliLogit => "bernoulli_logit",
            Family::PoissonLog => "poisson_log",
            Family::GammaLog => "gamma_log",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        match s {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "bernoulli_logit" | "bernoulli" | "logit" => Ok(Family::BernoulliLogit),
            "poisson_log" | "poisson" => Ok(Family::PoissonLog),
            "gamma_log" | "gamma" => Ok(Family::GammaLog),
            other => Err(Error::Parse(format!("unknown family '{other}'"))),
        }
    }

    pub fn has_dispersion(&self) -> bool {
        matches!(self, Family::Gaussian | Family::GammaLog)
    }
}

/// How the gamma shape ν is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeHandling {
    /// Profile maximum likelihood jointly with β.
    Estimate,
    Known(f64),
}

/// An outcome family together with its dispersion handling. The gaussian σ is
/// always estimated jointly with β by maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFamily {
    pub family: Family,
    pub shape: ShapeHandling,
}

impl OutcomeFamily {
    pub fn new(family: Family) -> Self {
        OutcomeFamily { family, shape: ShapeHandling::Estimate }
    }

    pub fn gamma_with_shape(nu: f64) -> Self {
        OutcomeFamily { family: Family::GammaLog, shape: ShapeHandling::Known(nu) }
    }

    /// Binds the family to concrete parameters.
    pub fn law(&self, params: &LinearPredictorParams) -> Result<Law> {
        let dispersion = match self.family {
            Family::Gaussian => params
                .sigma
                .ok_or_else(|| Error::Domain("gaussian family requires sigma".into()))?,
            Family::GammaLog => match (params.nu, self.shape) {
                (Some(nu), _) => nu,
                (None, ShapeHandling::Known(nu)) => nu,
                (None, ShapeHandling::Estimate) => {
                    return Err(Error::Domain("gamma family requires a shape nu".into()))
                }
            },
            _ => 1.0,
        };
        Law::new(self.family, dispersion)
    }
}

/// Coefficients β (intercept first) plus the dispersion of the family.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictorParams {
    pub beta: DVector<f64>,
    pub sigma: Option<f64>,
    pub nu: Option<f64>,
}

impl LinearPredictorParams {
    pub fn new(beta: Vec<f64>) -> Self {
        LinearPredictorParams { beta: DVector::from_vec(beta), sigma: None, nu: None }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// x̃ᵀβ with x̃ = (1, xᵀ)ᵀ.
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() + 1 != self.beta.len() {
            return Err(Error::Dimension(format!(
                "beta has length {} but the covariate vector has {} entries",
                self.beta.len(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite covariate".into()));
        }
        Ok(self.eta_unchecked(x))
    }

    pub(crate) fn eta_unchecked(&self, x: &[f64]) -> f64 {
        let b = self.beta.as_slice();
        b[0] + b[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// x̃ = (1, xᵀ)ᵀ
pub fn design_row(x: &[f64]) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + 1);
    v[0] = 1.0;
    v.as_mut_slice()[1..].copy_from_slice(x);
    v
}

pub fn log_density(family: &OutcomeFamily, params: &LinearPredictorParams, y: f64, x: &[f64]) -> Result<f64> {
    let law = family.law(params)?;
    law.log_density(y, params.linear_predictor(x)?)
}

/// ∂ log f(y|x;β) / ∂β
pub fn score(family: &OutcomeFamily, params: &LinearPredictorParams, y: f64, x: &[f64]) -> Result<DVector<f64>> {
    let law = family.law(params)?;
    let eta = params.linear_predictor(x)?;
    law.check_support(y)?;
    Ok(design_row(x) * law.score_eta(y, eta))
}

/// ∂² log f(y|x;β) / ∂β∂βᵀ
pub fn hessian(family: &OutcomeFamily, params: &LinearPredictorParams, y: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let law = family.law(params)?;
    let eta = params.linear_predictor(x)?;
    law.check_support(y)?;
    let xt = design_row(x);
    Ok(&xt * xt.transpose() * law.hess_eta(y, eta))
}

pub fn conditional_mean(family: &OutcomeFamily, params: &LinearPredictorParams, x: &[f64]) -> Result<f64> {
    let law = family.law(params)?;
    Ok(law.mean(params.linear_predictor(x)?))
}

/// P(lo < Y ≤ hi | x; β)
pub fn interval_probability(
    family: &OutcomeFamily,
    params: &LinearPredictorParams,
    x: &[f64],
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let law = family.law(params)?;
    law.interval(params.linear_predictor(x)?, lo, hi).map(|(p, _)| p)
}

/// f*(y|x) ∝ f(y|x;β) e^{θ* y}, represented in the same family.
#[derive(Debug, Clone)]
pub struct TiltedFamily {
    pub law: Law,
    pub params: LinearPredictorParams,
    pub theta: f64,
}

impl TiltedFamily {
    /// Linear predictor of the tilted law at x.
    pub fn eta_star(&self, x: &[f64]) -> Result<f64> {
        Ok(self.law.tilt(self.params.linear_predictor(x)?, self.theta)?.eta_star)
    }

    /// x ↦ log ∫ f(y|x;β) e^{θ* y} dy
    pub fn log_normalizer(&self, x: &[f64]) -> Result<f64> {
        Ok(self.law.tilt(self.params.linear_predictor(x)?, self.theta)?.log_norm)
    }

    /// Tilted parameters when the tilt is an intercept shift (all families except
    /// gamma, whose tilted rate is not log-linear in x unless θ* = 0).
    pub fn tilted_params(&self) -> Option<LinearPredictorParams> {
        if self.theta == 0.0 {
            return Some(self.params.clone());
        }
        let shift = match self.law.family {
            Family::Gaussian => self.law.dispersion * self.law.dispersion * self.theta,
            Family::BernoulliLogit | Family::PoissonLog => self.theta,
            Family::GammaLog => return None,
        };
        let mut p = self.params.clone();
        p.beta[0] += shift;
        Some(p)
    }
}

pub fn tilted_family(family: &OutcomeFamily, params: &LinearPredictorParams, theta_star: f64) -> Result<TiltedFamily> {
    Ok(TiltedFamily { law: family.law(params)?, params: params.clone(), theta: theta_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{Hint, Quadrature};
    use proptest::prelude::*;

    fn gauss() -> OutcomeFamily {
        OutcomeFamily::new(Family::Gaussian)
    }

    #[test]
    fn gaussian_zero_residual_log_density() {
        let p = LinearPredictorParams::new(vec![0.5, -0.5, 0.5]).with_sigma(1.0);
        let v = log_density(&gauss(), &p, 1.0, &[0.0, 1.0]).unwrap();
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_zero_coefficients() {
        let p = LinearPredictorParams::new(vec![0.0, 0.0, 0.0]);
        let fam = OutcomeFamily::new(Family::BernoulliLogit);
        let v = log_density(&fam, &p, 1.0, &[3.0, -2.0]).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert!((conditional_mean(&fam, &LinearPredictorParams::new(vec![0.0, 0.0]), &[0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_log_density_matches_reference() {
        // reference value from a 30-digit evaluation of ν ln λ − lnΓ(ν) + (ν−1) ln y − λy
        let p = LinearPredictorParams::new(vec![0.3, 0.2]).with_nu(2.0);
        let fam = OutcomeFamily::new(Family::GammaLog);
        let v = log_density(&fam, &p, 1.5, &[1.0]).unwrap();
        assert!((v - (-1.027_832_509_909_845_3)).abs() < 1e-13, "{v}");
        // the density integrates to one
        let law = fam.law(&p).unwrap();
        let total = Quadrature::default()
            .integrate_scalar(0.0, f64::INFINITY, Hint { center: 1.6, scale: 1.0 }, |y| law.density(y, 0.5))
            .unwrap();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn conditional_means() {
        let p = LinearPredictorParams::new(vec![0.5, -0.5, 0.5]).with_sigma(1.0);
        assert!((conditional_mean(&gauss(), &p, &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        let p = LinearPredictorParams::new(vec![1.0, -1.0]);
        let v = conditional_mean(&OutcomeFamily::new(Family::PoissonLog), &p, &[2.0]).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn support_and_parameter_errors() {
        let p = LinearPredictorParams::new(vec![0.0, 0.0]);
        assert!(log_density(&OutcomeFamily::new(Family::BernoulliLogit), &p, 0.5, &[1.0]).is_err());
        assert!(log_density(&OutcomeFamily::new(Family::PoissonLog), &p, 1.5, &[1.0]).is_err());
        assert!(log_density(&OutcomeFamily::new(Family::PoissonLog), &p, -1.0, &[1.0]).is_err());
        let pg = p.clone().with_nu(2.0);
        assert!(log_density(&OutcomeFamily::new(Family::GammaLog), &pg, 0.0, &[1.0]).is_err());
        let ps = p.clone().with_sigma(0.0);
        assert!(matches!(log_density(&gauss(), &ps, 0.0, &[1.0]), Err(Error::Domain(_))));
        let pn = p.with_nu(-1.0);
        assert!(log_density(&OutcomeFamily::new(Family::GammaLog), &pn, 1.0, &[1.0]).is_err());
    }

    #[test]
    fn gaussian_interval_examples() {
        let p = LinearPredictorParams::new(vec![0.0, 0.0]).with_sigma(1.0);
        let all = interval_probability(&gauss(), &p, &[0.3], f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!(all, 1.0);
        let half = interval_probability(&gauss(), &p, &[0.3], f64::NEG_INFINITY, 0.0).unwrap();
        assert!((half - 0.5).abs() < 1e-15);
        assert!(interval_probability(&gauss(), &p, &[0.3], 1.0, 1.0).is_err());
        assert!(interval_probability(&gauss(), &p, &[0.3], 2.0, 1.0).is_err());
    }

    #[test]
    fn gamma_interval_against_quadrature() {
        // ν = 2, λ = 1: closed form 2/e − 3/e², and adaptive quadrature of the density
        let law = Law::new(Family::GammaLog, 2.0).unwrap();
        let eta = 2f64.ln(); // λ = ν e^{−η} = 1
        let (p, _) = law.interval(eta, 1.0, 2.0).unwrap();
        let exact = 2.0 * (-1f64).exp() - 3.0 * (-2f64).exp();
        assert!((p - exact).abs() / exact < 1e-10);
        let q = Quadrature { abs_tol: 1e-14, rel_tol: 1e-14, max_intervals: 4000 };
        let quad = q.integrate_scalar(1.0, 2.0, Hint::default(), |y| law.density(y, eta)).unwrap();
        assert!((p - quad).abs() / quad < 1e-10);
    }

    #[test]
    fn tilt_examples() {
        // θ* = 0 keeps the parameters bit-identical and the normalizer zero
        for fam in [Family::Gaussian, Family::BernoulliLogit, Family::PoissonLog, Family::GammaLog] {
            let p = LinearPredictorParams::new(vec![0.2, -0.3]).with_sigma(1.3).with_nu(2.5);
            let t = tilted_family(&OutcomeFamily::new(fam), &p, 0.0).unwrap();
            assert_eq!(t.log_normalizer(&[0.7]).unwrap(), 0.0);
            if fam != Family::GammaLog {
                assert_eq!(t.tilted_params().unwrap(), p);
            }
            let law = t.law;
            let eta = p.linear_predictor(&[0.7]).unwrap();
            assert_eq!(law.tilt(eta, 0.0).unwrap().eta_star.to_bits(), eta.to_bits());
        }
        // gaussian μ = 0.5, σ = 1, θ* = 0.5: mean 1.0, normalizer e^{0.375}
        let law = Law::new(Family::Gaussian, 1.0).unwrap();
        let t = law.tilt(0.5, 0.5).unwrap();
        assert!((t.eta_star - 1.0).abs() < 1e-15);
        let quad = Quadrature::default()
            .integrate_scalar(f64::NEG_INFINITY, f64::INFINITY, law.hint(0.5), |y| (0.5 * y + law.log_density(y, 0.5).unwrap()).exp())
            .unwrap();
        assert!((t.log_norm.exp() - quad).abs() / quad < 1e-8);
        assert!((quad - 1.454_991_414_618_201_3).abs() < 1e-9);
        // bernoulli at x̃ᵀβ = 0, θ* = 1
        let law = Law::new(Family::BernoulliLogit, 1.0).unwrap();
        let t = law.tilt(0.0, 1.0).unwrap();
        assert!((expit(t.eta_star) - expit(1.0)).abs() < 1e-15);
        assert!((t.log_norm.exp() - (1.0 + 1f64.exp()) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn poisson_tilt_sign_matches_direct_summation() {
        let law = Law::new(Family::PoissonLog, 1.0).unwrap();
        let (eta, theta) = (0.4, 0.3);
        let t = law.tilt(eta, theta).unwrap();
        let sum: f64 = (0..200).map(|k| law.density(k as f64, eta) * (theta * k as f64).exp()).sum();
        assert!((t.log_norm.exp() - sum).abs() / sum < 1e-12);
        // tilted mean is λ e^{+θ}
        let mean: f64 = (0..200).map(|k| k as f64 * law.density(k as f64, eta) * (theta * k as f64).exp()).sum::<f64>() / sum;
        assert!((law.mean(t.eta_star) - mean).abs() < 1e-12);
    }

    #[test]
    fn gamma_tilt_infeasible() {
        let law = Law::new(Family::GammaLog, 2.0).unwrap();
        let rate = law.gamma_rate(0.0);
        assert!(matches!(law.tilt(0.0, rate + 0.1), Err(Error::TiltInfeasible(_))));
        assert!(law.tilt(0.0, rate - 0.1).is_ok());
    }

    fn all_laws() -> Vec<Law> {
        vec![
            Law::new(Family::Gaussian, 1.3).unwrap(),
            Law::new(Family::BernoulliLogit, 1.0).unwrap(),
            Law::new(Family::PoissonLog, 1.0).unwrap(),
            Law::new(Family::GammaLog, 2.5).unwrap(),
        ]
    }

    #[test]
    fn densities_integrate_to_one() {
        let q = Quadrature::default();
        for law in all_laws() {
            for k in 0..20 {
                let eta = -1.5 + 0.15 * k as f64;
                let v = law
                    .expect(eta, f64::NEG_INFINITY, f64::INFINITY, 1, &q, |_, out| out[0] = 1.0)
                    .unwrap()[0];
                assert!((v - 1.0).abs() < 1e-9, "{:?} eta {eta}: {v}", law.family);
            }
        }
    }

    #[test]
    fn score_and_hessian_match_finite_differences() {
        let x = [0.4, -1.1];
        let fams = [
            (OutcomeFamily::new(Family::Gaussian), 0.7),
            (OutcomeFamily::new(Family::BernoulliLogit), 1.0),
            (OutcomeFamily::new(Family::PoissonLog), 2.0),
            (OutcomeFamily::new(Family::GammaLog), 1.7),
        ];
        for (fam, y) in fams {
            let base = LinearPredictorParams::new(vec![0.3, -0.2, 0.5]).with_sigma(0.8).with_nu(1.9);
            let s = score(&fam, &base, y, &x).unwrap();
            let h = hessian(&fam, &base, y, &x).unwrap();
            for j in 0..3 {
                let step = 1e-6 * base.beta[j].abs().max(1.0);
                let mut up = base.clone();
                up.beta[j] += step;
                let mut dn = base.clone();
                dn.beta[j] -= step;
                let fd = (log_density(&fam, &up, y, &x).unwrap() - log_density(&fam, &dn, y, &x).unwrap()) / (2.0 * step);
                assert!((fd - s[j]).abs() <= 1e-6 * s[j].abs().max(1.0), "{:?} score {j}", fam.family);
                let su = score(&fam, &up, y, &x).unwrap();
                let sd = score(&fam, &dn, y, &x).unwrap();
                for i in 0..3 {
                    let fdh = (su[i] - sd[i]) / (2.0 * step);
                    assert!((fdh - h[(i, j)]).abs() <= 1e-6 * h[(i, j)].abs().max(1.0), "{:?} hess", fam.family);
                }
            }
        }
    }

    #[test]
    fn interval_derivative_matches_finite_differences() {
        let cells = [(f64::NEG_INFINITY, 0.3), (0.3, 2.0), (2.0, f64::INFINITY), (0.5, 4.5)];
        for law in all_laws() {
            for &(lo, hi) in &cells {
                for eta in [-0.7, 0.1, 0.9] {
                    let (_, d) = law.interval(eta, lo, hi).unwrap();
                    let h = 1e-6;
                    let fd = (law.interval(eta + h, lo, hi).unwrap().0 - law.interval(eta - h, lo, hi).unwrap().0) / (2.0 * h);
                    assert!((fd - d).abs() < 1e-7, "{:?} ({lo},{hi}] eta {eta}: {fd} vs {d}", law.family);
                }
            }
        }
    }

    #[test]
    fn tilt_derivatives_match_finite_differences() {
        for law in all_laws() {
            let (eta, theta) = (0.3, 0.2);
            let t = law.tilt(eta, theta).unwrap();
            let h = 1e-6;
            let te = |e: f64, th: f64| law.tilt(e, th).unwrap();
            let d_eta = |f: fn(&Tilt) -> f64| (f(&te(eta + h, theta)) - f(&te(eta - h, theta))) / (2.0 * h);
            let d_th = |f: fn(&Tilt) -> f64| (f(&te(eta, theta + h)) - f(&te(eta, theta - h))) / (2.0 * h);
            assert!((d_eta(|t| t.eta_star) - t.deta_star_deta).abs() < 1e-7);
            assert!((d_th(|t| t.eta_star) - t.deta_star_dtheta).abs() < 1e-7);
            assert!((d_eta(|t| t.log_norm) - t.dlog_norm_deta).abs() < 1e-7);
            assert!((d_th(|t| t.log_norm) - t.dlog_norm_dtheta).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn interval_probability_is_monotone_and_additive(eta in -2.0f64..2.0, c1 in -3.0f64..0.0, w1 in 0.01f64..2.0, w2 in 0.01f64..2.0, idx in 0usize..4) {
            let law = all_laws()[idx];
            let c2 = c1 + w1;
            let c3 = c2 + w2;
            let cuts = [f64::NEG_INFINITY, c1, c2, c3, f64::INFINITY];
            let mut total = 0.0;
            let mut prev = 0.0;
            for k in 0..4 {
                let p = law.interval(eta, cuts[k], cuts[k + 1]).unwrap().0;
                prop_assert!(p >= 0.0);
                total += p;
                let cum = law.interval(eta, f64::NEG_INFINITY, cuts[k + 1]).unwrap().0;
                prop_assert!(cum + 1e-15 >= prev);
                prev = cum;
            }
            prop_assert!((total - 1.0).abs() < 1e-12, "total {}", total);
        }
    }
}
