//! MLE, GMM start for the shift parameters, one-step and fully iterated CMLE,
//! sandwich variance and confidence sets.

pub mod fast;
pub mod full;
pub mod gmm;
pub mod jsigma;
pub mod mle;
pub mod working_v;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub use fast::{fit_cmle_fast, fit_cmle_fast_with_mle};
pub use full::{fit_cmle_full, fit_cmle_full_with_mle};
pub use gmm::{init_theta_gmm, GmmFit, GmmOptions};
pub use jsigma::{assemble_j_sigma, JSigmaBlocks};
pub use mle::{fit_mle, MleFit};
pub use working_v::VPolicy;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mle,
    CmleFast,
    CmleFull,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Mle => "mle",
            Method::CmleFast => "cmle_fast",
            Method::CmleFull => "cmle_full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// dim(ψ) = dim(θ): the update is identically zero.
    ExactlyIdentified,
    /// J was ridge-damped before inversion.
    JDamped { cond: f64 },
    /// |Δβ_j| exceeds three MLE standard errors.
    UnstableUpdate { coefficient: usize, ratio: f64 },
    GmmNotConverged { objective: f64 },
    /// Constraint rows that vanish on the IPD were dropped.
    ExcludedConstraints { rows: Vec<usize> },
}

impl Warning {
    /// Signals the near-singular-J instability.
    pub fn is_instability(&self) -> bool {
        matches!(self, Warning::JDamped { .. } | Warning::UnstableUpdate { .. })
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::ExactlyIdentified => write!(f, "exactly identified (dim ψ = dim θ); the one-step update is zero"),
            Warning::JDamped { cond } => write!(f, "J is nearly singular (condition number {cond:.3e}); damped inverse used"),
            Warning::UnstableUpdate { coefficient, ratio } => {
                write!(f, "update of coefficient {coefficient} is {ratio:.1} MLE standard errors")
            }
            Warning::GmmNotConverged { objective } => write!(f, "GMM start did not converge (objective {objective:.3e})"),
            Warning::ExcludedConstraints { rows } => write!(f, "constraint rows {rows:?} vanish on the IPD and were dropped"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub cond_j: f64,
    pub damped: bool,
    /// Constraint rows (indices into the declared system) dropped before fitting.
    pub excluded_constraints: Vec<usize>,
    pub warnings: Vec<Warning>,
    /// Disagreement between the two routes to the one-step update.
    pub route_gap: f64,
    pub gmm_objective: f64,
    pub cond_psi: f64,
    /// β standard errors from the block-diagonal Σ plug-in.
    pub plugin_se: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub beta_hat: Vec<f64>,
    /// σ (gaussian) or ν (gamma), held at the MLE.
    pub dispersion: Option<f64>,
    pub phi_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub eta_hat: Vec<f64>,
    /// Covariance of (β, φ, θ, η).
    pub covariance: DMatrix<f64>,
    pub se_beta: Vec<f64>,
    pub ci_beta: Vec<[f64; 2]>,
    pub alpha: f64,
    /// χ²_d(1 − α), the radius of the ellipsoidal confidence set for β.
    pub chi2_radius: f64,
    pub kappa: Vec<f64>,
    pub relative_efficiency: Vec<f64>,
    pub mle_beta: Vec<f64>,
    pub mle_se: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub alpha: f64,
    pub v_policy: VPolicy,
    pub n_override: Option<u64>,
    pub gmm: GmmOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { alpha: 0.05, v_policy: VPolicy::Auto, n_override: None, gmm: GmmOptions::default() }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

pub(crate) fn wald(beta: &[f64], se: &[f64], alpha: f64) -> (Vec<[f64; 2]>, f64) {
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let ci = beta.iter().zip(se).map(|(b, s)| [b - z * s, b + z * s]).collect();
    let chi2 = ChiSquared::new(beta.len() as f64).expect("positive degrees of freedom").inverse_cdf(1.0 - alpha);
    (ci, chi2)
}

fn diag_sqrt(m: &DMatrix<f64>, d: usize) -> Vec<f64> {
    (0..d).map(|j| m[(j, j)].max(0.0).sqrt()).collect()
}

impl FitResult {
    /// The MLE in the common result shape; relative efficiencies are 1.
    pub fn from_mle(mle: &MleFit, alpha: f64) -> Result<FitResult> {
        check_alpha(alpha)?;
        let d = mle.params.dim();
        let se = diag_sqrt(&mle.covariance, d);
        let (ci, chi2) = wald(mle.beta(), &se, alpha);
        Ok(FitResult {
            method: Method::Mle,
            beta_hat: mle.beta().to_vec(),
            dispersion: mle.params.sigma.or(mle.params.nu),
            phi_hat: Vec::new(),
            theta_hat: Vec::new(),
            eta_hat: Vec::new(),
            covariance: mle.covariance.clone(),
            se_beta: se.clone(),
            ci_beta: ci,
            alpha,
            chi2_radius: chi2,
            kappa: Vec::new(),
            relative_efficiency: vec![1.0; d],
            mle_beta: mle.beta().to_vec(),
            mle_se: se,
            diagnostics: Diagnostics { cond_j: 1.0, cond_psi: 1.0, ..Default::default() },
        })
    }

    pub fn beta_covariance(&self) -> DMatrix<f64> {
        let d = self.beta_hat.len();
        self.covariance.view((0, 0), (d, d)).into_owned()
    }

    /// Whether `beta` lies in the χ²_d ellipsoid around β̂.
    pub fn ellipsoid_contains(&self, beta: &[f64]) -> Option<bool> {
        let inv = crate::linalg::spd_inverse(&self.beta_covariance())?;
        let diff = nalgebra::DVector::from_iterator(beta.len(), self.beta_hat.iter().zip(beta).map(|(a, b)| a - b));
        Some((diff.transpose() * inv * &diff)[(0, 0)] <= self.chi2_radius)
    }

    pub(crate) fn finish_with_mle(mut self, mle: &MleFit) -> FitResult {
        let d = self.beta_hat.len();
        self.se_beta = diag_sqrt(&self.covariance, d);
        let (ci, chi2) = wald(&self.beta_hat, &self.se_beta, self.alpha);
        self.ci_beta = ci;
        self.chi2_radius = chi2;
        self.mle_beta = mle.beta().to_vec();
        self.mle_se = diag_sqrt(&mle.covariance, d);
        self.relative_efficiency =
            self.mle_se.iter().zip(&self.se_beta).map(|(m, s)| if *s > 0.0 { (m * m) / (s * s) } else { f64::NAN }).collect();
        self
    }
}
