//! Simulation designs: the two-covariate gaussian DGP, exactly tilted AD
//! populations, AD menus and the replication engine.

mod engine;

pub use engine::{run_replications, MenuOutcome, RepRecord, ReportRow, SimReport};

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregates::{AdSummary, SubgroupPredicate};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::VPolicy;
use crate::model::expit;
use crate::shift::ShiftSpec;

pub const P_X2: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    NoShift,
    CovariateShift,
    PriorProbShift,
}

impl Dgp {
    pub fn name(&self) -> &'static str {
        match self {
            Dgp::NoShift => "no_shift",
            Dgp::CovariateShift => "covariate_shift",
            Dgp::PriorProbShift => "prior_prob_shift",
        }
    }

    pub fn parse(s: &str) -> Result<Dgp> {
        match s {
            "no_shift" => Ok(Dgp::NoShift),
            "covariate_shift" => Ok(Dgp::CovariateShift),
            "prior_prob_shift" => Ok(Dgp::PriorProbShift),
            other => Err(Error::Config(format!(
                "unknown design '{other}' (no_shift | covariate_shift | prior_prob_shift)"
            ))),
        }
    }

    pub fn theta_dim(&self) -> usize {
        match self {
            Dgp::NoShift => 0,
            Dgp::CovariateShift => 2,
            Dgp::PriorProbShift => 1,
        }
    }

    /// The density-ratio model fitted for this design.
    pub fn shift_spec(&self) -> ShiftSpec {
        match self {
            Dgp::NoShift => ShiftSpec::none(),
            Dgp::CovariateShift => ShiftSpec::covariate(vec![0, 1]),
            Dgp::PriorProbShift => ShiftSpec::prior_probability(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Menu {
    PhiY,
    PhiX,
    PhiXyMedian,
    PhiXyQuartile,
    PhiYx1,
    PhiYx2,
    PhiYx3,
}

impl Menu {
    pub const ALL: [Menu; 7] =
        [Menu::PhiY, Menu::PhiX, Menu::PhiXyMedian, Menu::PhiXyQuartile, Menu::PhiYx1, Menu::PhiYx2, Menu::PhiYx3];

    pub fn name(&self) -> &'static str {
        match self {
            Menu::PhiY => "phi_y",
            Menu::PhiX => "phi_x",
            Menu::PhiXyMedian => "phi_xy_median",
            Menu::PhiXyQuartile => "phi_xy_quartile",
            Menu::PhiYx1 => "phi_yx_1",
            Menu::PhiYx2 => "phi_yx_2",
            Menu::PhiYx3 => "phi_yx_3",
        }
    }

    pub fn parse(s: &str) -> Result<Menu> {
        Menu::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown AD menu '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub dgp: Dgp,
    pub beta: [f64; 3],
    pub sigma: f64,
    pub theta: Vec<f64>,
    /// IPD sample sizes; one block of replications per entry.
    pub n: Vec<usize>,
    pub n_ad: usize,
    pub reps: usize,
    pub seed: u64,
    pub menus: Vec<Menu>,
    pub alpha: f64,
    pub failure_budget_pct: f64,
    pub v_policy: VPolicy,
}

impl SimDesign {
    /// Defaults: β = (0.5, −0.5, 0.5), σ = 1, shift truths 0.5, N = 1000, 1000 replications.
    pub fn standard(dgp: Dgp) -> SimDesign {
        SimDesign {
            dgp,
            beta: [0.5, -0.5, 0.5],
            sigma: 1.0,
            theta: vec![0.5; dgp.theta_dim()],
            n: vec![400],
            n_ad: 1000,
            reps: 1000,
            seed: 20_240_601,
            menus: Menu::ALL.to_vec(),
            alpha: 0.05,
            failure_budget_pct: 2.0,
            v_policy: VPolicy::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.theta.len() != self.dgp.theta_dim() {
            return bad(format!("{} needs {} shift parameters, got {}", self.dgp.name(), self.dgp.theta_dim(), self.theta.len()));
        }
        if self.beta.iter().chain(&self.theta).any(|v| !v.is_finite()) {
            return bad("truth values must be finite".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 10) {
            return bad("every IPD sample size must be at least 10".into());
        }
        if self.n_ad < 8 {
            return bad("AD sample size must be at least 8".into());
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if self.menus.is_empty() {
            return bad("the AD menu list is empty".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..=100.0).contains(&self.failure_budget_pct) {
            return bad("failure_budget_pct must lie in [0, 100]".into());
        }
        Ok(())
    }

    fn mu(&self, x: &[f64]) -> f64 {
        self.beta[0] + self.beta[1] * x[0] + self.beta[2] * x[1]
    }
}

fn draw_rows<R: Rng + ?Sized>(design: &SimDesign, n: usize, x1_mean: f64, p2: f64, y_shift: f64, rng: &mut R) -> Dataset {
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let b = Bernoulli::new(p2).expect("probability in [0, 1]");
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = x1_mean + z.sample(rng);
        let x2 = if b.sample(rng) { 1.0 } else { 0.0 };
        y.push(design.mu(&[x1, x2]) + y_shift + design.sigma * z.sample(rng));
        x.push(x1);
        x.push(x2);
    }
    Dataset::new(y, x, 2, vec!["x1".into(), "x2".into()]).expect("consistent dimensions")
}

/// X₁ ~ N(0, 1), X₂ ~ Bernoulli(0.6), Y | X ~ N(β₀ + β₁X₁ + β₂X₂, σ²).
pub fn gen_ipd<R: Rng + ?Sized>(design: &SimDesign, n: usize, rng: &mut R) -> Dataset {
    draw_rows(design, n, 0.0, P_X2, 0.0, rng)
}

/// Bernoulli(p) reweighted by e^{t x}.
fn tilted_bernoulli(p: f64, t: f64) -> f64 {
    expit((p / (1.0 - p)).ln() + t)
}

/// Exact draws from the shifted AD population.
///
/// Covariate shift tilts G by e^{θ₁x₁ + θ₂x₂}, which moves X₁ to N(θ₁, 1) and
/// reweights X₂. Prior probability shift tilts the joint law by e^{θy}; the
/// covariate marginal becomes G tilted by e^{θμ(x)} and Y | X ~ N(μ + θσ², σ²).
pub fn gen_ad_population<R: Rng + ?Sized>(design: &SimDesign, n: usize, rng: &mut R) -> Dataset {
    match design.dgp {
        Dgp::NoShift => draw_rows(design, n, 0.0, P_X2, 0.0, rng),
        Dgp::CovariateShift => {
            let (t1, t2) = (design.theta[0], design.theta[1]);
            draw_rows(design, n, t1, tilted_bernoulli(P_X2, t2), 0.0, rng)
        }
        Dgp::PriorProbShift => {
            let t = design.theta[0];
            let s2 = design.sigma * design.sigma;
            draw_rows(design, n, t * design.beta[1], tilted_bernoulli(P_X2, t * design.beta[2]), t * s2, rng)
        }
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n − 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_of<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        None
    } else {
        Some(crate::linalg::compensated_sum(v.iter().copied()) / v.len() as f64)
    }
}

fn empty(label: &str) -> Error {
    Error::EmptyCell(format!("AD sample has no rows in {label}"))
}

fn labelled(mut s: AdSummary, label: String) -> AdSummary {
    s.label = Some(label);
    s
}

/// Empirical summaries of one menu entry; cut points are sample quantiles of the AD outcome.
pub fn compute_ad(menu: Menu, ad: &Dataset) -> Result<Vec<AdSummary>> {
    if ad.n() == 0 {
        return Err(Error::EmptyCell("empty AD sample".into()));
    }
    let big_n = ad.n() as u64;
    let covariate_means = |rows: &[usize], label: String| -> Result<AdSummary> {
        let m1 = mean_of(rows.iter().map(|&i| ad.row(i)[0])).ok_or_else(|| empty(&label))?;
        let m2 = mean_of(rows.iter().map(|&i| ad.row(i)[1])).ok_or_else(|| empty(&label))?;
        Ok(labelled(AdSummary::covariate_mean(vec![0, 1], vec![m1, m2], big_n), label))
    };
    let all: Vec<usize> = (0..ad.n()).collect();
    let outcome_given = |g: SubgroupPredicate, label: &str| -> Result<AdSummary> {
        let v = mean_of((0..ad.n()).filter(|&i| g.contains_x(ad.row(i))).map(|i| ad.y[i])).ok_or_else(|| empty(label))?;
        Ok(labelled(AdSummary::outcome_mean_given(g, v, big_n), label.into()))
    };
    let stratified = |probs: &[f64]| -> Result<Vec<AdSummary>> {
        let mut sorted = ad.y.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let cuts: Vec<f64> = probs.iter().map(|&p| quantile(&sorted, p)).collect();
        let cells = crate::aggregates::partition_cells(&cuts)?;
        cells
            .iter()
            .map(|&(lo, hi)| {
                let rows: Vec<usize> = all.iter().copied().filter(|&i| lo < ad.y[i] && ad.y[i] <= hi).collect();
                let base = covariate_means(&rows, format!("x|y in ({lo}, {hi}]"))?;
                let mut s = AdSummary::covariate_mean_given_outcome(lo, hi, vec![0, 1], base.value, big_n);
                s.label = base.label;
                Ok(s)
            })
            .collect()
    };
    let band = || SubgroupPredicate::covariate_interval(0, -1.0, 1.0);
    let x2 = |v: f64| SubgroupPredicate::categories(1, vec![v]);
    match menu {
        Menu::PhiY => {
            let v = mean_of(ad.y.iter().copied()).expect("non-empty");
            Ok(vec![labelled(AdSummary::outcome_mean(v, big_n), "y".into())])
        }
        Menu::PhiX => Ok(vec![covariate_means(&all, "x".into())?]),
        Menu::PhiXyMedian => stratified(&[0.5]),
        Menu::PhiXyQuartile => stratified(&[0.25, 0.5, 0.75]),
        Menu::PhiYx1 => Ok(vec![outcome_given(band(), "y|-1<x1<=1")?]),
        Menu::PhiYx2 => Ok(vec![outcome_given(band(), "y|-1<x1<=1")?, outcome_given(x2(1.0), "y|x2=1")?]),
        Menu::PhiYx3 => Ok(vec![
            outcome_given(band(), "y|-1<x1<=1")?,
            outcome_given(x2(1.0), "y|x2=1")?,
            outcome_given(x2(0.0), "y|x2=0")?,
        ]),
    }
}

/// The summaries fitted for a menu. Under shift the outcome-mean menus are
/// paired with the covariate means φ^X, which identify the shift parameters;
/// outcome-stratified covariate means already imply φ^X.
pub fn menu_summaries(design: &SimDesign, menu: Menu, ad: &Dataset) -> Result<Vec<AdSummary>> {
    let mut out = compute_ad(menu, ad)?;
    let outcome_means = matches!(menu, Menu::PhiY | Menu::PhiYx1 | Menu::PhiYx2 | Menu::PhiYx3);
    if design.dgp != Dgp::NoShift && outcome_means {
        out.extend(compute_ad(Menu::PhiX, ad)?);
    }
    Ok(out)
}
