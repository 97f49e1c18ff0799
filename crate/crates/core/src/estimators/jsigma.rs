//! Blocks of the J and Σ matrices and the one-step update they induce.
//!
//! Parameters are ordered (β, φ, θ, η) with dimensions (d, q, s, r):
//!
//! ```text
//! J = [ -H      0     0    Ψ̇β ]      Σ = [ -H   0   0   0    ]
//!     [  0      K     0    Ψ̇φ ]          [  0   K   0   0    ]
//!     [  0      0     0    Ψ̇θ ]          [  0   0   0   0    ]
//!     [ Ψ̇βᵀ   Ψ̇φᵀ  Ψ̇θᵀ  -Eψψᵀ ]          [  0   0   0   Eψψᵀ ]
//! ```
//!
//! where `K = κ^{1/2} V⁻¹ κ^{1/2}` with κ the diagonal of per-component N/n.

use nalgebra::{DMatrix, DVector};

use crate::aggregates::{ConstraintSet, Evaluation};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, MonitoredInverse};
use crate::model::Law;

use super::mle::loglik_parts;

#[derive(Debug, Clone, PartialEq)]
pub struct JSigmaBlocks {
    /// Average Hessian of log f, d × d (negative definite).
    pub h_beta: DMatrix<f64>,
    /// κ^{1/2} V⁻¹ κ^{1/2}, q × q
    pub kappa_sigma_inv: DMatrix<f64>,
    /// n⁻¹ Σ ψ_i ψ_iᵀ, r × r
    pub psi_outer: DMatrix<f64>,
    pub psi_dot_beta: DMatrix<f64>,
    pub psi_dot_phi: DMatrix<f64>,
    pub psi_dot_theta: DMatrix<f64>,
}

impl JSigmaBlocks {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.h_beta.nrows(), self.kappa_sigma_inv.nrows(), self.psi_dot_theta.nrows(), self.psi_outer.nrows())
    }

    pub fn total_dim(&self) -> usize {
        let (d, q, s, r) = self.dims();
        d + q + s + r
    }

    pub fn j(&self) -> DMatrix<f64> {
        let (d, q, s, r) = self.dims();
        let m = d + q + s + r;
        let e = d + q + s;
        let mut j = DMatrix::zeros(m, m);
        linalg::set_block(&mut j, 0, 0, &(-&self.h_beta));
        linalg::set_block(&mut j, d, d, &self.kappa_sigma_inv);
        linalg::set_block(&mut j, 0, e, &self.psi_dot_beta);
        linalg::set_block(&mut j, d, e, &self.psi_dot_phi);
        linalg::set_block(&mut j, d + q, e, &self.psi_dot_theta);
        linalg::set_block(&mut j, e, 0, &self.psi_dot_beta.transpose());
        linalg::set_block(&mut j, e, d, &self.psi_dot_phi.transpose());
        linalg::set_block(&mut j, e, d + q, &self.psi_dot_theta.transpose());
        linalg::set_block(&mut j, e, e, &(-&self.psi_outer));
        j
    }

    /// Block-diagonal Σ with a zero θ block.
    pub fn sigma_plugin(&self) -> DMatrix<f64> {
        let (d, q, s, r) = self.dims();
        let m = d + q + s + r;
        let mut sig = DMatrix::zeros(m, m);
        linalg::set_block(&mut sig, 0, 0, &(-&self.h_beta));
        linalg::set_block(&mut sig, d, d, &self.kappa_sigma_inv);
        linalg::set_block(&mut sig, d + q + s, d + q + s, &self.psi_outer);
        sig
    }
}

/// Per-φ-component κ = N/n.
pub fn kappa(cs: &ConstraintSet, n: usize, n_override: Option<u64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(cs.phi_dim());
    for s in &cs.summaries {
        let big_n = n_override.or(s.n).ok_or_else(|| {
            Error::Config(format!(
                "summary {} has no AD sample size; supply one (or an override) to fit",
                s.label.as_deref().unwrap_or(s.kind.name())
            ))
        })?;
        if big_n == 0 {
            return Err(Error::Config("AD sample size must be positive".into()));
        }
        out.extend(std::iter::repeat_n(big_n as f64 / n as f64, s.dim()));
    }
    Ok(out)
}

/// κ^{1/2} V⁻¹ κ^{1/2}; errors unless V is symmetric positive definite.
pub fn kappa_v_inverse(v: &DMatrix<f64>, kappa: &[f64]) -> Result<DMatrix<f64>> {
    if v.nrows() != kappa.len() || v.ncols() != kappa.len() {
        return Err(Error::Dimension(format!("working variance is {}x{}, expected {}", v.nrows(), v.ncols(), kappa.len())));
    }
    let vinv = linalg::spd_inverse(&linalg::symmetrize(v))
        .ok_or_else(|| Error::Config("working variance V is not positive definite".into()))?;
    Ok(DMatrix::from_fn(kappa.len(), kappa.len(), |i, j| kappa[i].sqrt() * vinv[(i, j)] * kappa[j].sqrt()))
}

/// Average Hessian n⁻¹ Σ ∂² log f / ∂β².
pub fn average_hessian(law: &Law, beta: &[f64], data: &Dataset) -> DMatrix<f64> {
    loglik_parts(law, beta, data).2 / data.n() as f64
}

/// Assembles the blocks from an evaluation of ψ (with derivatives) at the same point.
pub fn blocks_from_evaluation(
    cs: &ConstraintSet,
    law: &Law,
    beta: &[f64],
    eval: &Evaluation,
    data: &Dataset,
    kappa: &[f64],
    v: &DMatrix<f64>,
) -> Result<JSigmaBlocks> {
    let jac = eval.jacobians(cs, data, None);
    Ok(JSigmaBlocks {
        h_beta: average_hessian(law, beta, data),
        kappa_sigma_inv: kappa_v_inverse(v, kappa)?,
        psi_outer: eval.outer(),
        psi_dot_beta: jac.d_beta,
        psi_dot_phi: jac.d_phi,
        psi_dot_theta: jac.d_theta,
    })
}

/// Empirical plug-ins of the J and Σ blocks at (β, φ, θ).
#[allow(clippy::too_many_arguments)]
pub fn assemble_j_sigma(
    cs: &ConstraintSet,
    law: &Law,
    beta: &[f64],
    phi: &[f64],
    theta: &[f64],
    data: &Dataset,
    kappa: &[f64],
    v: &DMatrix<f64>,
) -> Result<JSigmaBlocks> {
    let eval = crate::aggregates::evaluate(cs, *law, beta, phi, theta, data, true)?;
    blocks_from_evaluation(cs, law, beta, &eval, data, kappa, v)
}

/// Result of solving `J z = (0, 0, 0, −ψ̄)`.
#[derive(Debug, Clone)]
pub struct OneStep {
    /// H⁻¹ Ψ̇β z_η
    pub delta: DVector<f64>,
    pub z: DVector<f64>,
    pub j_inverse: MonitoredInverse,
    /// max |z_β − H⁻¹ Ψ̇β z_η|, zero up to rounding.
    pub route_gap: f64,
}

pub fn one_step(blocks: &JSigmaBlocks, psi_mean: &[f64]) -> Result<OneStep> {
    let (d, q, s, r) = blocks.dims();
    if psi_mean.len() != r {
        return Err(Error::Dimension(format!("ψ̄ has length {}, expected {r}", psi_mean.len())));
    }
    let j_inverse = linalg::monitored_inverse(&blocks.j())?;
    let mut b = DVector::zeros(d + q + s + r);
    for k in 0..r {
        b[d + q + s + k] = -psi_mean[k];
    }
    let z = &j_inverse.inverse * &b;
    let z_eta = z.rows(d + q + s, r).into_owned();
    let rhs = &blocks.psi_dot_beta * &z_eta;
    let h = &blocks.h_beta;
    let delta = h
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or(Error::SingularHessian { cond: linalg::condition_number(h) })?;
    let route_gap = (z.rows(0, d) - &delta).amax();
    Ok(OneStep { delta, z, j_inverse, route_gap })
}

/// n⁻¹ Σ S_i S_iᵀ for the per-observation score S_i = (s_i, 0, 0, −ψ_i), plus the
/// AD information `K` in the φ block.
pub fn score_outer(law: &Law, beta: &[f64], eval: &Evaluation, data: &Dataset, blocks: &JSigmaBlocks) -> DMatrix<f64> {
    let (d, q, s, r) = blocks.dims();
    let m = d + q + s + r;
    let e = d + q + s;
    let n = data.n();
    let mut acc = DMatrix::zeros(m, m);
    let mut si = DVector::zeros(m);
    for i in 0..n {
        let x = data.row(i);
        let eta = beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        let g = law.score_eta(data.y[i], eta);
        si[0] = g;
        for j in 1..d {
            si[j] = g * x[j - 1];
        }
        for k in 0..r {
            si[e + k] = -eval.psi[(i, k)];
        }
        acc.ger(1.0, &si, &si, 1.0);
    }
    acc /= n as f64;
    let ad = &blocks.kappa_sigma_inv;
    for i in 0..q {
        for j in 0..q {
            acc[(d + i, d + j)] += ad[(i, j)];
        }
    }
    acc
}

/// J⁻¹ Σ J⁻ᵀ / n
pub fn sandwich(j_inverse: &DMatrix<f64>, sigma: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    linalg::symmetrize(&(j_inverse * sigma * j_inverse.transpose() / n as f64))
}
