use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gen_ad_population, gen_ipd, menu_summaries, Menu, SimDesign};
use crate::aggregates::ConstraintSet;
use crate::error::{Error, Result};
use crate::estimators::{fit_cmle_fast_with_mle, fit_mle, FitOptions, FitResult};
use crate::linalg::compensated_sum;
use crate::model::{Family, OutcomeFamily};
use crate::parallel;

const COEFFICIENTS: [&str; 3] = ["beta0", "beta1", "beta2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MenuOutcome {
    Ok {
        beta: Vec<f64>,
        se: Vec<f64>,
        covered: Vec<bool>,
        /// J damping or an unstable update was flagged.
        unstable: bool,
    },
    Failed {
        error: String,
        unstable: bool,
    },
}

impl MenuOutcome {
    fn unstable(&self) -> bool {
        match self {
            MenuOutcome::Ok { unstable, .. } | MenuOutcome::Failed { unstable, .. } => *unstable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub n: usize,
    pub rep: usize,
    /// MLE estimate and standard errors, absent when the MLE failed.
    pub mle: Option<(Vec<f64>, Vec<f64>)>,
    pub menus: Vec<(Menu, MenuOutcome)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub design: String,
    pub n: usize,
    pub menu: String,
    pub coefficient: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    /// Var(MLE) / Var(CMLE) over the successful replications.
    pub re: f64,
    pub coverage: f64,
    pub mle_bias: f64,
    pub mle_sd: f64,
    pub mle_coverage: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub warning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub design: String,
    pub seed: u64,
    pub reps: usize,
    pub n: Vec<usize>,
    pub n_ad: usize,
    pub truth_beta: Vec<f64>,
    pub truth_sigma: f64,
    pub truth_theta: Vec<f64>,
    pub alpha: f64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub meta: SimMeta,
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub replications: Vec<RepRecord>,
}

impl SimReport {
    pub fn row(&self, n: usize, menu: Menu, coefficient: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.n == n && r.menu == menu.name() && r.coefficient == COEFFICIENTS[coefficient])
    }
}

fn covered(fit: &FitResult, truth: &[f64]) -> Vec<bool> {
    fit.ci_beta.iter().zip(truth).map(|(ci, t)| ci[0] <= *t && *t <= ci[1]).collect()
}

fn one_replication(design: &SimDesign, n: usize, sweep: usize, rep: usize) -> RepRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(((sweep as u64) << 40) | rep as u64);
    let ipd = gen_ipd(design, n, &mut rng);
    let ad = gen_ad_population(design, design.n_ad, &mut rng);
    let opts = FitOptions { alpha: design.alpha, v_policy: design.v_policy, ..Default::default() };
    let truth = design.beta;
    let mle = match fit_mle(&OutcomeFamily::new(Family::Gaussian), &ipd) {
        Ok(m) => m,
        Err(e) => {
            let failed = MenuOutcome::Failed { error: format!("MLE: {e}"), unstable: false };
            return RepRecord { n, rep, mle: None, menus: design.menus.iter().map(|m| (*m, failed.clone())).collect() };
        }
    };
    let mle_fit = FitResult::from_mle(&mle, design.alpha).expect("alpha validated");
    let menus = design
        .menus
        .iter()
        .map(|&menu| {
            let attempt = menu_summaries(design, menu, &ad)
                .and_then(|s| ConstraintSet::new(s, design.dgp.shift_spec(), 2))
                .and_then(|cs| fit_cmle_fast_with_mle(&cs, &mle, &ipd, &opts));
            let outcome = match attempt {
                Ok(fit) => MenuOutcome::Ok {
                    covered: covered(&fit, &truth),
                    unstable: fit.diagnostics.warnings.iter().any(|w| w.is_instability()),
                    beta: fit.beta_hat,
                    se: fit.se_beta,
                },
                Err(e) => MenuOutcome::Failed { unstable: matches!(e, Error::SingularJ { .. }), error: e.to_string() },
            };
            (menu, outcome)
        })
        .collect();
    RepRecord { n, rep, mle: Some((mle_fit.beta_hat, mle_fit.se_beta)), menus }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    compensated_sum(v.iter().copied()) / v.len() as f64
}

/// Sample standard deviation (divisor m − 1).
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (compensated_sum(v.iter().map(|x| (x - m) * (x - m))) / (v.len() - 1) as f64).sqrt()
}

fn summarize(design: &SimDesign, n: usize, records: &[RepRecord], k: usize, menu: Menu) -> Result<Vec<ReportRow>> {
    let total = records.len();
    let mut n_failed = 0;
    let mut n_unstable = 0;
    let mut est = [Vec::new(), Vec::new(), Vec::new()];
    let mut ses = [Vec::new(), Vec::new(), Vec::new()];
    let mut cov = [0usize; 3];
    let mut mle_est = [Vec::new(), Vec::new(), Vec::new()];
    let mut mle_cov = [0usize; 3];
    let z = {
        use statrs::distribution::{ContinuousCDF, Normal};
        Normal::standard().inverse_cdf(1.0 - design.alpha / 2.0)
    };
    for rec in records {
        let outcome = &rec.menus[k].1;
        if outcome.unstable() {
            n_unstable += 1;
        }
        let (MenuOutcome::Ok { beta, se, covered, .. }, Some((mb, ms))) = (outcome, &rec.mle) else {
            n_failed += 1;
            continue;
        };
        for j in 0..3 {
            est[j].push(beta[j]);
            ses[j].push(se[j]);
            cov[j] += covered[j] as usize;
            mle_est[j].push(mb[j]);
            let t = design.beta[j];
            mle_cov[j] += ((mb[j] - t).abs() <= z * ms[j]) as usize;
        }
    }
    let budget = design.failure_budget_pct / 100.0 * total as f64;
    if n_failed as f64 > budget {
        return Err(Error::ReplicationBudget { failed: n_failed, total, budget_pct: design.failure_budget_pct });
    }
    let ok = total - n_failed;
    Ok((0..3)
        .map(|j| {
            let t = design.beta[j];
            let s = sd(&est[j]);
            let ms = sd(&mle_est[j]);
            ReportRow {
                design: design.dgp.name().into(),
                n,
                menu: menu.name().into(),
                coefficient: COEFFICIENTS[j].into(),
                truth: t,
                bias: mean(&est[j]) - t,
                sd: s,
                mean_se: mean(&ses[j]),
                re: (ms * ms) / (s * s),
                coverage: cov[j] as f64 / ok.max(1) as f64,
                mle_bias: mean(&mle_est[j]) - t,
                mle_sd: ms,
                mle_coverage: mle_cov[j] as f64 / ok.max(1) as f64,
                n_ok: ok,
                n_failed,
                warning_rate: n_unstable as f64 / total as f64,
            }
        })
        .collect())
}

/// Runs every replication (in parallel when enabled) and aggregates in
/// replication order, so the report depends only on the design.
pub fn run_replications(design: &SimDesign) -> Result<SimReport> {
    design.validate()?;
    let mut rows = Vec::new();
    let mut replications = Vec::new();
    for (sweep, &n) in design.n.iter().enumerate() {
        let records = parallel::map_tasks(design.reps, |rep| one_replication(design, n, sweep, rep));
        for (k, &menu) in design.menus.iter().enumerate() {
            rows.extend(summarize(design, n, &records, k, menu)?);
        }
        replications.extend(records);
    }
    let meta = SimMeta {
        design: design.dgp.name().into(),
        seed: design.seed,
        reps: design.reps,
        n: design.n.clone(),
        n_ad: design.n_ad,
        truth_beta: design.beta.to_vec(),
        truth_sigma: design.sigma,
        truth_theta: design.theta.clone(),
        alpha: design.alpha,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    Ok(SimReport { meta, rows, replications })
}
