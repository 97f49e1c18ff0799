//! Working covariance V of √N(φ̃ − φ).
//!
//! The plug-in is the covariance of the influence functions of the summary
//! estimators in the AD population, estimated from the IPD reweighted by the
//! fitted density ratio w_X(x; θ̃) w_Y(y; θ̃). For a subgroup mean this is the
//! conditional variance over the subgroup divided by the subgroup mass.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::aggregates::{ConstraintSet, SummaryKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VPolicy {
    /// Reported blocks where present, plug-in elsewhere.
    #[default]
    Auto,
    /// Reported blocks only; every summary must carry one.
    Reported,
    Plugin,
}

impl VPolicy {
    pub fn parse(s: &str) -> Result<VPolicy> {
        match s {
            "auto" => Ok(VPolicy::Auto),
            "reported" => Ok(VPolicy::Reported),
            "plugin" => Ok(VPolicy::Plugin),
            other => Err(Error::Config(format!("unknown V policy '{other}' (auto | reported | plugin)"))),
        }
    }
}

/// Normalized density-ratio weights of the IPD rows.
fn ratio_weights(cs: &ConstraintSet, theta: &[f64], data: &Dataset) -> Vec<f64> {
    let logs: Vec<f64> = (0..data.n())
        .map(|i| cs.shift.log_w_x(theta, data.row(i)) + cs.shift.log_w_y(theta, data.y[i]))
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total = linalg::compensated_sum(w.iter().copied());
    w.into_iter().map(|v| v / total).collect()
}

/// Influence-function covariance of all summaries under the AD population.
pub fn plugin_v(cs: &ConstraintSet, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    let n = data.n();
    let q = cs.phi_dim();
    let w = ratio_weights(cs, theta, data);
    let mut inf = DMatrix::zeros(n, q);
    for (k, s) in cs.summaries.iter().enumerate() {
        let o = cs.offset(k);
        let member: Vec<bool> = (0..n)
            .map(|i| match s.kind {
                SummaryKind::CovariateMeanGivenOutcome => {
                    let (lo, hi) = s.subgroup.as_ref().and_then(|g| g.outcome).expect("validated");
                    lo < data.y[i] && data.y[i] <= hi
                }
                _ => s.subgroup.as_ref().is_none_or(|g| g.contains_x(data.row(i))),
            })
            .collect();
        let mass = linalg::compensated_sum((0..n).filter(|&i| member[i]).map(|i| w[i]));
        if mass <= 0.0 {
            return Err(Error::EmptyCell(format!(
                "no IPD rows fall in the subgroup of summary {}; supply its variance",
                s.label.as_deref().unwrap_or(s.kind.name())
            )));
        }
        for t in 0..s.dim() {
            let val = |i: usize| if s.kind.is_outcome_mean() { data.y[i] } else { data.row(i)[s.targets[t]] };
            let centre = linalg::compensated_sum((0..n).filter(|&i| member[i]).map(|i| w[i] * val(i))) / mass;
            for i in 0..n {
                if member[i] {
                    inf[(i, o + t)] = (val(i) - centre) / mass;
                }
            }
        }
    }
    let mut v = DMatrix::zeros(q, q);
    for i in 0..n {
        let row = inf.row(i);
        for a in 0..q {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..q {
                v[(a, b)] += w[i] * row[a] * row[b];
            }
        }
    }
    // summaries with different AD sample sizes come from different samples
    let owners = cs.owners();
    for a in 0..q {
        for b in 0..q {
            if cs.summaries[owners[a]].n != cs.summaries[owners[b]].n {
                v[(a, b)] = 0.0;
            }
        }
    }
    Ok(linalg::symmetrize(&v))
}

/// V under the chosen policy.
pub fn working_v(cs: &ConstraintSet, theta: &[f64], data: &Dataset, policy: VPolicy) -> Result<DMatrix<f64>> {
    let q = cs.phi_dim();
    let all_reported = cs.summaries.iter().all(|s| s.variance.is_some());
    let mut v = match policy {
        VPolicy::Reported if !all_reported => {
            return Err(Error::Config("V policy 'reported' needs a variance block on every summary".into()))
        }
        VPolicy::Reported => DMatrix::zeros(q, q),
        VPolicy::Auto if all_reported => DMatrix::zeros(q, q),
        VPolicy::Auto | VPolicy::Plugin => plugin_v(cs, theta, data)?,
    };
    if policy != VPolicy::Plugin {
        for (k, s) in cs.summaries.iter().enumerate() {
            let Some(block) = &s.variance else { continue };
            let o = cs.offset(k);
            let m = s.dim();
            for a in 0..q {
                for b in o..o + m {
                    v[(a, b)] = 0.0;
                    v[(b, a)] = 0.0;
                }
            }
            linalg::set_block(&mut v, o, o, block);
        }
    }
    Ok(v)
}
