//! Non-iterative one-step CMLE.

use nalgebra::DMatrix;

use super::gmm::{init_theta_gmm, GmmFit};
use super::jsigma::{blocks_from_evaluation, kappa, one_step, sandwich, score_outer, JSigmaBlocks};
use super::mle::{fit_mle, MleFit};
use super::working_v::working_v;
use super::{check_alpha, Diagnostics, FitOptions, FitResult, Method, Warning};
use crate::aggregates::{check_redundancy, evaluate, zero_columns, ConstraintSet, Evaluation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, MonitoredInverse};
use crate::model::{Law, OutcomeFamily};

/// Everything the fast and full estimators share before their own steps.
pub(crate) struct Prepared {
    pub cs: ConstraintSet,
    pub law: Law,
    pub phi_tilde: Vec<f64>,
    pub gmm: GmmFit,
    pub kappa: Vec<f64>,
    pub v: DMatrix<f64>,
    pub diagnostics: Diagnostics,
}

pub(crate) enum Stage {
    /// No usable constraints: the MLE is the answer.
    Mle(Box<FitResult>),
    Ready(Box<Prepared>),
}

pub(crate) fn prepare(cs: &ConstraintSet, mle: &MleFit, data: &Dataset, opts: &FitOptions) -> Result<Stage> {
    check_alpha(opts.alpha)?;
    let as_mle = |diagnostics: Diagnostics| -> Result<Stage> {
        let mut out = FitResult::from_mle(mle, opts.alpha)?;
        out.diagnostics = diagnostics;
        Ok(Stage::Mle(Box::new(out)))
    };
    let mut diagnostics = Diagnostics { cond_j: 1.0, cond_psi: 1.0, ..Default::default() };
    if cs.phi_dim() == 0 {
        return as_mle(diagnostics);
    }
    let law = mle.law()?;
    let beta = mle.beta();
    let zero_theta = vec![0.0; cs.theta_dim()];
    let psi0 = evaluate(cs, law, beta, &cs.phi_tilde(), &zero_theta, data, false)?.psi;
    let excluded = zero_columns(&psi0);
    let (cs, psi0) = if excluded.is_empty() {
        (cs.clone(), psi0)
    } else {
        let active: Vec<usize> = (0..cs.psi_dim()).filter(|k| !excluded.contains(k)).collect();
        diagnostics.warnings.push(Warning::ExcludedConstraints { rows: excluded.clone() });
        diagnostics.excluded_constraints = excluded;
        if active.is_empty() {
            return as_mle(diagnostics);
        }
        let psi = psi0.select_columns(&active);
        (cs.restrict(&active)?, psi)
    };
    let (r, s) = (cs.psi_dim(), cs.theta_dim());
    if r < s {
        return Err(Error::Identification(format!(
            "{r} usable constraints cannot identify {s} shift parameters (need dim(ψ) > dim(θ))"
        )));
    }
    if r == s {
        diagnostics.warnings.push(Warning::ExactlyIdentified);
    }
    let all: Vec<usize> = (0..r).collect();
    diagnostics.cond_psi = check_redundancy(&psi0, &all)?;
    let kappa = kappa(&cs, data.n(), opts.n_override)?;
    let phi_tilde = cs.phi_tilde();
    let gmm = init_theta_gmm(&cs, law, beta, &phi_tilde, data, &opts.gmm)?;
    diagnostics.gmm_objective = gmm.objective;
    if !gmm.converged {
        diagnostics.warnings.push(Warning::GmmNotConverged { objective: gmm.objective });
    }
    let v = working_v(&cs, &gmm.theta, data, opts.v_policy)?;
    Ok(Stage::Ready(Box::new(Prepared { cs, law, phi_tilde, gmm, kappa, v, diagnostics })))
}

/// Sandwich covariance at a fitted point and the diagnostics that go with it.
pub(crate) struct Variance {
    pub covariance: DMatrix<f64>,
    pub plugin_se: Vec<f64>,
    pub j_inverse: MonitoredInverse,
}

pub(crate) fn variance_at(law: &Law, beta: &[f64], eval: &Evaluation, data: &Dataset, blocks: &JSigmaBlocks) -> Result<Variance> {
    let d = beta.len();
    let j_inverse = linalg::monitored_inverse(&blocks.j())?;
    let sigma = score_outer(law, beta, eval, data, blocks);
    let covariance = sandwich(&j_inverse.inverse, &sigma, data.n());
    let plugin = sandwich(&j_inverse.inverse, &blocks.sigma_plugin(), data.n());
    let plugin_se = (0..d).map(|j| plugin[(j, j)].max(0.0).sqrt()).collect();
    Ok(Variance { covariance, plugin_se, j_inverse })
}

pub(crate) fn note_damping(diagnostics: &mut Diagnostics, inv: &MonitoredInverse) {
    diagnostics.cond_j = inv.cond;
    if inv.damped {
        diagnostics.damped = true;
        if !diagnostics.warnings.iter().any(|w| matches!(w, Warning::JDamped { .. })) {
            diagnostics.warnings.push(Warning::JDamped { cond: inv.cond });
        }
    }
}

/// One-step CMLE starting from a fresh MLE.
pub fn fit_cmle_fast(cs: &ConstraintSet, family: &OutcomeFamily, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let mle = fit_mle(family, data)?;
    fit_cmle_fast_with_mle(cs, &mle, data, opts)
}

/// `β̂ = β̃ + H̃⁻¹ Ψ̇̃β z_η` where `J̃ z = (0, 0, 0, −ψ̄)` at (β̃, φ̃, θ̃), with φ and θ
/// held at (φ̃, θ̃); the sandwich is re-evaluated at β̂.
pub fn fit_cmle_fast_with_mle(cs: &ConstraintSet, mle: &MleFit, data: &Dataset, opts: &FitOptions) -> Result<FitResult> {
    let p = match prepare(cs, mle, data, opts)? {
        Stage::Mle(fit) => return Ok(*fit),
        Stage::Ready(p) => *p,
    };
    let Prepared { cs, law, phi_tilde, gmm, kappa, v, mut diagnostics } = p;
    let beta_tilde = mle.beta();
    let theta = &gmm.theta;
    let eval = evaluate(&cs, law, beta_tilde, &phi_tilde, theta, data, true)?;
    let blocks = blocks_from_evaluation(&cs, &law, beta_tilde, &eval, data, &kappa, &v)?;
    let step = one_step(&blocks, &eval.mean())?;
    note_damping(&mut diagnostics, &step.j_inverse);
    diagnostics.route_gap = step.route_gap;
    let mle_se = mle.se();
    for (j, (dj, se)) in step.delta.iter().zip(&mle_se).enumerate() {
        if se.is_finite() && *se > 0.0 && dj.abs() > 3.0 * se {
            diagnostics.warnings.push(Warning::UnstableUpdate { coefficient: j, ratio: dj.abs() / se });
        }
    }
    let beta_hat: Vec<f64> = beta_tilde.iter().zip(step.delta.iter()).map(|(b, dlt)| b + dlt).collect();

    let eval_hat = evaluate(&cs, law, &beta_hat, &phi_tilde, theta, data, true)?;
    let blocks_hat = blocks_from_evaluation(&cs, &law, &beta_hat, &eval_hat, data, &kappa, &v)?;
    let var = variance_at(&law, &beta_hat, &eval_hat, data, &blocks_hat)?;
    note_damping(&mut diagnostics, &var.j_inverse);
    diagnostics.plugin_se = var.plugin_se;

    let (d, q, s, r) = blocks.dims();
    let e = d + q + s;
    let out = FitResult {
        method: Method::CmleFast,
        beta_hat,
        dispersion: law.family.has_dispersion().then_some(law.dispersion),
        phi_hat: phi_tilde,
        theta_hat: gmm.theta,
        eta_hat: step.z.rows(e, r).iter().copied().collect(),
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
