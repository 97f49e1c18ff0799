use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::Standardization;
use crate::error::{Error, Result};
use crate::estimators::{FitResult, Warning};
use crate::simulation::SimReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleBlock {
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsDoc {
    #[serde(rename = "cond_J")]
    pub cond_j: f64,
    pub eta: Vec<f64>,
    pub excluded_constraints: Vec<usize>,
    pub damped: bool,
    pub warnings: Vec<Warning>,
    pub route_gap: f64,
    pub gmm_objective: f64,
    pub cond_psi: f64,
    pub plugin_se: Vec<f64>,
    pub iterations: usize,
}

/// The machine-readable result of `fit`. Always carries the MLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub method: String,
    pub family: String,
    pub n_ipd: usize,
    pub coefficients: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<[f64; 2]>,
    pub re_vs_mle: Vec<f64>,
    pub alpha: f64,
    pub chi2_radius: f64,
    pub dispersion: Option<f64>,
    pub covariance_beta: Vec<Vec<f64>>,
    pub mle: MleBlock,
    pub constraints: Vec<String>,
    pub phi_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Outcome transform applied before fitting; coefficients are on that scale.
    pub standardization: Option<Standardization>,
    pub diagnostics: DiagnosticsDoc,
}

impl FitDocument {
    pub fn new(
        fit: &FitResult,
        family: &str,
        n_ipd: usize,
        covariates: &[String],
        constraints: Vec<String>,
        standardization: Option<Standardization>,
    ) -> FitDocument {
        let d = fit.beta_hat.len();
        let mut coefficients = vec!["(intercept)".to_string()];
        coefficients.extend(covariates.iter().cloned());
        let cov = fit.beta_covariance();
        let z = if fit.mle_se.is_empty() { 0.0 } else { (fit.ci_beta[0][1] - fit.beta_hat[0]) / fit.se_beta[0] };
        let mle_ci = fit.mle_beta.iter().zip(&fit.mle_se).map(|(b, s)| [b - z * s, b + z * s]).collect();
        let g = &fit.diagnostics;
        FitDocument {
            method: fit.method.name().into(),
            family: family.into(),
            n_ipd,
            coefficients,
            estimates: fit.beta_hat.clone(),
            se: fit.se_beta.clone(),
            ci: fit.ci_beta.clone(),
            re_vs_mle: fit.relative_efficiency.clone(),
            alpha: fit.alpha,
            chi2_radius: fit.chi2_radius,
            dispersion: fit.dispersion,
            covariance_beta: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
            mle: MleBlock { estimates: fit.mle_beta.clone(), se: fit.mle_se.clone(), ci: mle_ci },
            constraints,
            phi_hat: fit.phi_hat.clone(),
            theta_hat: fit.theta_hat.clone(),
            kappa: fit.kappa.clone(),
            standardization,
            diagnostics: DiagnosticsDoc {
                cond_j: g.cond_j,
                eta: fit.eta_hat.clone(),
                excluded_constraints: g.excluded_constraints.clone(),
                damped: g.damped,
                warnings: g.warnings.clone(),
                route_gap: g.route_gap,
                gmm_objective: g.gmm_objective,
                cond_psi: g.cond_psi,
                plugin_se: g.plugin_se.clone(),
                iterations: g.iterations,
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// One row per coefficient.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["coefficient", "estimate", "se", "ci_lo", "ci_hi", "re_vs_mle", "mle_estimate", "mle_se"])
            .map_err(io)?;
        for j in 0..self.estimates.len() {
            w.write_record([
                self.coefficients[j].clone(),
                self.estimates[j].to_string(),
                self.se[j].to_string(),
                self.ci[j][0].to_string(),
                self.ci[j][1].to_string(),
                self.re_vs_mle[j].to_string(),
                self.mle.estimates[j].to_string(),
                self.mle.se[j].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row per (n, menu, coefficient).
pub fn write_sim_csv<W: Write>(report: &SimReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in &report.rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sim_json(report: &SimReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))
}

/// Per-replication records, one JSON object per line.
pub fn write_replications<W: Write>(report: &SimReport, mut writer: W) -> Result<()> {
    for rec in &report.replications {
        let line = serde_json::to_string(rec).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::estimators::fit_mle;
    use crate::model::{Family, OutcomeFamily};

    fn doc() -> FitDocument {
        let d = Dataset::from_rows(vec![0.1, 1.2, 1.9, 3.2, 3.8], &[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let mle = fit_mle(&OutcomeFamily::new(Family::Gaussian), &d).unwrap();
        let fit = FitResult::from_mle(&mle, 0.05).unwrap();
        FitDocument::new(&fit, "gaussian", 5, &d.names, Vec::new(), None)
    }

    #[test]
    fn mle_document_is_self_consistent() {
        let d = doc();
        assert_eq!(d.method, "mle");
        assert_eq!(d.coefficients, vec!["(intercept)", "x1"]);
        assert_eq!(d.re_vs_mle, vec![1.0, 1.0]);
        assert_eq!(d.mle.estimates, d.estimates);
        assert_eq!(d.mle.ci, d.ci);
        let back: FitDocument = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
        assert!(d.to_json().unwrap().contains("\"cond_J\""));
    }

    #[test]
    fn csv_has_a_row_per_coefficient() {
        let mut buf = Vec::new();
        doc().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("coefficient,estimate,se"));
    }
}
