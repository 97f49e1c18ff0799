//! Aggregate summaries and the model-integrated constraint system
//! `ψ(x; β, φ, θ) = w_X(x) I(x ∈ Ω) ∫ φ(y, x) w_Y(y) f(y | x; β) dy`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Law;
use crate::parallel;
use crate::shift::{Deriv, OutcomeTilt, RowMoments, ShiftSpec};

/// Condition number of the normalized ψᵀψ/n above which constraints are rejected.
pub const REDUNDANCY_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    MarginalOutcomeMean,
    MarginalCovariateMean,
    OutcomeMeanGivenCovariates,
    CovariateMeanGivenOutcome,
}

impl SummaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            SummaryKind::MarginalOutcomeMean => "marginal_outcome_mean",
            SummaryKind::MarginalCovariateMean => "marginal_covariate_mean",
            SummaryKind::OutcomeMeanGivenCovariates => "outcome_mean_given_covariates",
            SummaryKind::CovariateMeanGivenOutcome => "covariate_mean_given_outcome",
        }
    }

    pub fn parse(s: &str) -> Result<SummaryKind> {
        match s {
            "marginal_outcome_mean" => Ok(SummaryKind::MarginalOutcomeMean),
            "marginal_covariate_mean" => Ok(SummaryKind::MarginalCovariateMean),
            "outcome_mean_given_covariates" => Ok(SummaryKind::OutcomeMeanGivenCovariates),
            "covariate_mean_given_outcome" => Ok(SummaryKind::CovariateMeanGivenOutcome),
            other => Err(Error::InvalidSummary(format!("unknown summary kind '{other}'"))),
        }
    }

    pub fn is_outcome_mean(&self) -> bool {
        matches!(self, SummaryKind::MarginalOutcomeMean | SummaryKind::OutcomeMeanGivenCovariates)
    }
}

/// One covariate condition of a subgroup.
#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    /// lo < x_j ≤ hi
    Interval { covariate: usize, lo: f64, hi: f64 },
    /// x_j ∈ values
    Categories { covariate: usize, values: Vec<f64> },
}

impl Clause {
    pub fn covariate(&self) -> usize {
        match self {
            Clause::Interval { covariate, .. } | Clause::Categories { covariate, .. } => *covariate,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Clause::Interval { covariate, lo, hi } => {
                let v = x[*covariate];
                *lo < v && v <= *hi
            }
            Clause::Categories { covariate, values } => values.contains(&x[*covariate]),
        }
    }
}

/// Conjunction of covariate clauses, optionally with an outcome interval `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubgroupPredicate {
    pub clauses: Vec<Clause>,
    pub outcome: Option<(f64, f64)>,
}

impl SubgroupPredicate {
    pub fn outcome_interval(lo: f64, hi: f64) -> Self {
        SubgroupPredicate { clauses: Vec::new(), outcome: Some((lo, hi)) }
    }

    pub fn covariate_interval(covariate: usize, lo: f64, hi: f64) -> Self {
        SubgroupPredicate { clauses: vec![Clause::Interval { covariate, lo, hi }], outcome: None }
    }

    pub fn categories(covariate: usize, values: Vec<f64>) -> Self {
        SubgroupPredicate { clauses: vec![Clause::Categories { covariate, values }], outcome: None }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for c in &self.clauses {
            if c.covariate() >= p {
                return Err(Error::InvalidSummary(format!("subgroup covariate index {} out of range", c.covariate())));
            }
            match c {
                Clause::Interval { lo, hi, .. } => {
                    if lo.is_nan() || hi.is_nan() || lo >= hi {
                        return Err(Error::InvalidSummary(format!("subgroup interval requires lo < hi (got ({lo}, {hi}])")));
                    }
                }
                Clause::Categories { values, .. } => {
                    if values.is_empty() {
                        return Err(Error::InvalidSummary("subgroup category set is empty".into()));
                    }
                }
            }
        }
        if let Some((lo, hi)) = self.outcome {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::InvalidSummary(format!("outcome interval requires lo < hi (got ({lo}, {hi}])")));
            }
        }
        Ok(())
    }

    pub fn contains_x(&self, x: &[f64]) -> bool {
        self.clauses.iter().all(|c| c.contains(x))
    }
}

/// Cells `(c_{k-1}, c_k]` of the partition of ℝ by strictly increasing finite cut points.
pub fn partition_cells(cuts: &[f64]) -> Result<Vec<(f64, f64)>> {
    if cuts.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidSummary("outcome cut points must be finite".into()));
    }
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSummary("outcome cut points must be strictly increasing".into()));
    }
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend_from_slice(cuts);
    bounds.push(f64::INFINITY);
    Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
}

/// Checks that cells are disjoint and cover the real line.
pub fn validate_partition(cells: &[(f64, f64)]) -> Result<()> {
    let mut sorted = cells.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let ok = !sorted.is_empty()
        && sorted[0].0 == f64::NEG_INFINITY
        && sorted[sorted.len() - 1].1 == f64::INFINITY
        && sorted.iter().all(|c| c.0 < c.1)
        && sorted.windows(2).all(|w| w[0].1 == w[1].0);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidSummary("outcome cells do not form a partition of the real line".into()))
    }
}

/// One reported aggregate statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct AdSummary {
    pub kind: SummaryKind,
    pub subgroup: Option<SubgroupPredicate>,
    /// Covariate indices whose means are reported (covariate-mean kinds).
    pub targets: Vec<usize>,
    pub value: Vec<f64>,
    /// AD sample size behind this summary.
    pub n: Option<u64>,
    /// Asymptotic covariance of √N(φ̃ − φ) for this block.
    pub variance: Option<DMatrix<f64>>,
    pub label: Option<String>,
}

impl AdSummary {
    pub fn outcome_mean(value: f64, n: u64) -> Self {
        AdSummary {
            kind: SummaryKind::MarginalOutcomeMean,
            subgroup: None,
            targets: Vec::new(),
            value: vec![value],
            n: Some(n),
            variance: None,
            label: None,
        }
    }

    pub fn covariate_mean(targets: Vec<usize>, value: Vec<f64>, n: u64) -> Self {
        AdSummary {
            kind: SummaryKind::MarginalCovariateMean,
            subgroup: None,
            targets,
            value,
            n: Some(n),
            variance: None,
            label: None,
        }
    }

    pub fn outcome_mean_given(subgroup: SubgroupPredicate, value: f64, n: u64) -> Self {
        AdSummary {
            kind: SummaryKind::OutcomeMeanGivenCovariates,
            subgroup: Some(subgroup),
            targets: Vec::new(),
            value: vec![value],
            n: Some(n),
            variance: None,
            label: None,
        }
    }

    pub fn covariate_mean_given_outcome(lo: f64, hi: f64, targets: Vec<usize>, value: Vec<f64>, n: u64) -> Self {
        AdSummary {
            kind: SummaryKind::CovariateMeanGivenOutcome,
            subgroup: Some(SubgroupPredicate::outcome_interval(lo, hi)),
            targets,
            value,
            n: Some(n),
            variance: None,
            label: None,
        }
    }

    pub fn with_variance(mut self, v: DMatrix<f64>) -> Self {
        self.variance = Some(v);
        self
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let sub = self.subgroup.as_ref();
        let has_cov = sub.is_some_and(|s| !s.clauses.is_empty());
        let has_out = sub.is_some_and(|s| s.outcome.is_some());
        let name = self.kind.name();
        match self.kind {
            SummaryKind::MarginalOutcomeMean | SummaryKind::MarginalCovariateMean => {
                if has_cov || has_out {
                    return Err(Error::InvalidSummary(format!("{name} takes no subgroup")));
                }
            }
            SummaryKind::OutcomeMeanGivenCovariates => {
                if !has_cov {
                    return Err(Error::InvalidSummary(format!("{name} requires a covariate subgroup")));
                }
                if has_out {
                    return Err(Error::InvalidSummary(format!("{name} cannot condition on the outcome")));
                }
            }
            SummaryKind::CovariateMeanGivenOutcome => {
                if !has_out {
                    return Err(Error::InvalidSummary(format!("{name} requires an outcome interval")));
                }
            }
        }
        if let Some(s) = sub {
            s.validate(p)?;
        }
        if self.kind.is_outcome_mean() {
            if !self.targets.is_empty() {
                return Err(Error::InvalidSummary(format!("{name} takes no target covariates")));
            }
            if self.value.len() != 1 {
                return Err(Error::InvalidSummary(format!("{name} has exactly one value (got {})", self.value.len())));
            }
        } else {
            if self.targets.is_empty() {
                return Err(Error::InvalidSummary(format!("{name} requires target covariates")));
            }
            if let Some(&j) = self.targets.iter().find(|&&j| j >= p) {
                return Err(Error::InvalidSummary(format!("target covariate index {j} out of range")));
            }
            if self.value.len() != self.targets.len() {
                return Err(Error::InvalidSummary(format!(
                    "{name} has {} values for {} target covariates",
                    self.value.len(),
                    self.targets.len()
                )));
            }
        }
        if self.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSummary("non-finite summary value".into()));
        }
        if self.n == Some(0) {
            return Err(Error::InvalidSummary("AD sample size must be positive".into()));
        }
        if let Some(v) = &self.variance {
            let q = self.dim();
            if v.nrows() != q || v.ncols() != q {
                return Err(Error::InvalidSummary(format!("variance block must be {q}x{q}")));
            }
            if !linalg::is_symmetric(v, 1e-10) || !linalg::is_psd(v, 1e-12) {
                return Err(Error::InvalidSummary("variance block must be symmetric positive semidefinite".into()));
            }
        }
        Ok(())
    }

    fn covariate_indicator(&self, x: &[f64]) -> bool {
        self.subgroup.as_ref().is_none_or(|s| s.contains_x(x))
    }
}

/// The stacked constraint system. Constraint rows and φ components are in
/// one-to-one correspondence, so `r = q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub summaries: Vec<AdSummary>,
    pub shift: ShiftSpec,
    pub n_covariates: usize,
    offsets: Vec<usize>,
    cells: Vec<(f64, f64)>,
    cell_of: Vec<Option<usize>>,
}

impl ConstraintSet {
    pub fn new(summaries: Vec<AdSummary>, shift: ShiftSpec, n_covariates: usize) -> Result<ConstraintSet> {
        shift.validate(n_covariates)?;
        let mut offsets = Vec::with_capacity(summaries.len() + 1);
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let mut cell_of = Vec::with_capacity(summaries.len());
        let mut off = 0;
        for s in &summaries {
            s.validate(n_covariates)?;
            offsets.push(off);
            off += s.dim();
            let cell = match (s.kind, s.subgroup.as_ref().and_then(|g| g.outcome)) {
                (SummaryKind::CovariateMeanGivenOutcome, Some(c)) => Some(match cells.iter().position(|&k| k == c) {
                    Some(i) => i,
                    None => {
                        cells.push(c);
                        cells.len() - 1
                    }
                }),
                _ => None,
            };
            cell_of.push(cell);
        }
        offsets.push(off);
        Ok(ConstraintSet { summaries, shift, n_covariates, offsets, cells, cell_of })
    }

    pub fn empty(n_covariates: usize) -> ConstraintSet {
        ConstraintSet::new(Vec::new(), ShiftSpec::none(), n_covariates).expect("empty set is valid")
    }

    pub fn phi_dim(&self) -> usize {
        self.offsets[self.summaries.len()]
    }

    pub fn psi_dim(&self) -> usize {
        self.phi_dim()
    }

    pub fn theta_dim(&self) -> usize {
        self.shift.theta_dim()
    }

    /// r > s, required for the one-step update to differ from the MLE.
    pub fn identified(&self) -> bool {
        self.psi_dim() > self.theta_dim()
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Reported values φ̃ stacked in declaration order.
    pub fn phi_tilde(&self) -> Vec<f64> {
        self.summaries.iter().flat_map(|s| s.value.iter().copied()).collect()
    }

    /// Index of the summary owning each constraint row.
    pub fn owners(&self) -> Vec<usize> {
        self.summaries.iter().enumerate().flat_map(|(k, s)| std::iter::repeat_n(k, s.dim())).collect()
    }

    /// Keeps only the listed constraint rows (and their φ components), which must
    /// be whole summaries or single components of covariate-mean summaries.
    pub fn restrict(&self, rows: &[usize]) -> Result<ConstraintSet> {
        let mut keep: Vec<AdSummary> = Vec::new();
        for (k, s) in self.summaries.iter().enumerate() {
            let local: Vec<usize> = (0..s.dim()).filter(|j| rows.contains(&(self.offsets[k] + j))).collect();
            if local.is_empty() {
                continue;
            }
            let mut t = s.clone();
            if local.len() != s.dim() {
                t.targets = local.iter().map(|&j| s.targets[j]).collect();
                t.value = local.iter().map(|&j| s.value[j]).collect();
                t.variance = s.variance.as_ref().map(|v| v.select_rows(&local).select_columns(&local));
            }
            keep.push(t);
        }
        ConstraintSet::new(keep, self.shift.clone(), self.n_covariates)
    }

    fn needs_outcome(&self) -> bool {
        self.summaries.iter().any(|s| s.kind != SummaryKind::MarginalCovariateMean) || self.shift.mode.outcome()
    }
}

/// Per-row constraint values and the raw derivative pieces from which the
/// Jacobian blocks are assembled.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// n × r
    pub psi: DMatrix<f64>,
    /// ∂ψ_ik/∂η_i, n × r
    pub d_eta: DMatrix<f64>,
    /// ∂ψ_ik/∂φ_k, n × r (the φ-derivative is diagonal)
    pub d_phi: DMatrix<f64>,
    /// ∂ψ_ik/∂θ_{y,j}, n × (r·s_y), row-major by (k, j)
    pub d_theta_y: DMatrix<f64>,
    with_jac: bool,
}

/// Averaged derivative blocks in the orientation used by J: each is (param dim) × r.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub d_beta: DMatrix<f64>,
    pub d_phi: DMatrix<f64>,
    pub d_theta: DMatrix<f64>,
}

struct RowOut {
    psi: Vec<f64>,
    d_eta: Vec<f64>,
    d_phi: Vec<f64>,
    d_theta_y: Vec<f64>,
}

fn eta_of(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

fn check_point(cs: &ConstraintSet, beta: &[f64], phi: &[f64], theta: &[f64]) -> Result<()> {
    if beta.len() != cs.n_covariates + 1 {
        return Err(Error::Dimension(format!("beta has length {}, expected {}", beta.len(), cs.n_covariates + 1)));
    }
    if phi.len() != cs.phi_dim() {
        return Err(Error::Dimension(format!("phi has length {}, expected {}", phi.len(), cs.phi_dim())));
    }
    if theta.len() != cs.theta_dim() {
        return Err(Error::Dimension(format!("theta has length {}, expected {}", theta.len(), cs.theta_dim())));
    }
    Ok(())
}

fn row_terms(
    cs: &ConstraintSet,
    tilt: &OutcomeTilt,
    beta: &[f64],
    phi: &[f64],
    theta: &[f64],
    x: &[f64],
    with_jac: bool,
) -> Result<RowOut> {
    let r = cs.psi_dim();
    let sy = cs.shift.y_dim();
    let mut out = RowOut {
        psi: vec![0.0; r],
        d_eta: if with_jac { vec![0.0; r] } else { Vec::new() },
        d_phi: if with_jac { vec![0.0; r] } else { Vec::new() },
        d_theta_y: if with_jac { vec![0.0; r * sy] } else { Vec::new() },
    };
    let eta = eta_of(beta, x);
    let wx = cs.shift.w_x(theta, x);
    let moments = if cs.needs_outcome() {
        tilt.moments(eta, &cs.cells)?
    } else {
        let one = Deriv { v: 1.0, d_eta: 0.0, d_theta: vec![0.0; sy] };
        RowMoments { m0: one.clone(), m1: one, cells: Vec::new() }
    };
    for (k, s) in cs.summaries.iter().enumerate() {
        if !s.covariate_indicator(x) {
            continue;
        }
        let o = cs.offsets[k];
        match s.kind {
            SummaryKind::MarginalOutcomeMean | SummaryKind::OutcomeMeanGivenCovariates => {
                let f = phi[o];
                let (m0, m1) = (&moments.m0, &moments.m1);
                out.psi[o] = wx * (m1.v - f * m0.v);
                if with_jac {
                    out.d_eta[o] = wx * (m1.d_eta - f * m0.d_eta);
                    out.d_phi[o] = -wx * m0.v;
                    for j in 0..sy {
                        out.d_theta_y[o * sy + j] = wx * (m1.d_theta[j] - f * m0.d_theta[j]);
                    }
                }
            }
            SummaryKind::CovariateMeanGivenOutcome | SummaryKind::MarginalCovariateMean => {
                let mass = match cs.cell_of[k] {
                    Some(c) => &moments.cells[c],
                    None => &moments.m0,
                };
                for (t, &j) in s.targets.iter().enumerate() {
                    let dev = x[j] - phi[o + t];
                    out.psi[o + t] = wx * dev * mass.v;
                    if with_jac {
                        out.d_eta[o + t] = wx * dev * mass.d_eta;
                        out.d_phi[o + t] = -wx * mass.v;
                        for jj in 0..sy {
                            out.d_theta_y[(o + t) * sy + jj] = wx * dev * mass.d_theta[jj];
                        }
                    }
                }
            }
        }
    }
    if out.psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite constraint value at linear predictor {eta}")));
    }
    Ok(out)
}

/// Constraint contribution of a single summary at one covariate row.
pub fn psi_row(
    summary: &AdSummary,
    shift: &ShiftSpec,
    law: Law,
    beta: &[f64],
    phi_block: &[f64],
    theta: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    let cs = ConstraintSet::new(vec![summary.clone()], shift.clone(), x.len())?;
    check_point(&cs, beta, phi_block, theta)?;
    let tilt = shift.outcome_tilt(law, theta)?;
    Ok(row_terms(&cs, &tilt, beta, phi_block, theta, x, false)?.psi)
}

/// Evaluates ψ (and optionally its derivative pieces) on every row of `data`.
pub fn evaluate(
    cs: &ConstraintSet,
    law: Law,
    beta: &[f64],
    phi: &[f64],
    theta: &[f64],
    data: &Dataset,
    with_jac: bool,
) -> Result<Evaluation> {
    check_point(cs, beta, phi, theta)?;
    if data.p != cs.n_covariates {
        return Err(Error::Dimension(format!(
            "data has {} covariates, constraints expect {}",
            data.p, cs.n_covariates
        )));
    }
    let n = data.n();
    let r = cs.psi_dim();
    let sy = cs.shift.y_dim();
    let tilt = cs.shift.outcome_tilt(law, theta)?;
    let rows = parallel::map_indexed(n, |i| row_terms(cs, &tilt, beta, phi, theta, data.row(i), with_jac));
    let mut psi = DMatrix::zeros(n, r);
    let (jr, jt) = if with_jac { (n, n) } else { (0, 0) };
    let mut d_eta = DMatrix::zeros(jr, r);
    let mut d_phi = DMatrix::zeros(jr, r);
    let mut d_theta_y = DMatrix::zeros(jt, r * sy);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for k in 0..r {
            psi[(i, k)] = row.psi[k];
        }
        if with_jac {
            for k in 0..r {
                d_eta[(i, k)] = row.d_eta[k];
                d_phi[(i, k)] = row.d_phi[k];
            }
            for k in 0..r * sy {
                d_theta_y[(i, k)] = row.d_theta_y[k];
            }
        }
    }
    Ok(Evaluation { psi, d_eta, d_phi, d_theta_y, with_jac })
}

impl Evaluation {
    /// Weighted averages `n⁻¹ Σ_i c_i ∂ψ_i/∂(β, φ, θ)` with unit weights when `weights` is `None`.
    pub fn jacobians(&self, cs: &ConstraintSet, data: &Dataset, weights: Option<&[f64]>) -> Jacobians {
        assert!(self.with_jac, "evaluation was computed without derivatives");
        let n = data.n();
        let r = cs.psi_dim();
        let d = cs.n_covariates + 1;
        let q = cs.phi_dim();
        let sx = cs.shift.x_dim();
        let sy = cs.shift.y_dim();
        let nf = n.max(1) as f64;
        let mut d_beta = DMatrix::zeros(d, r);
        let mut d_phi = DMatrix::zeros(q, r);
        let mut d_theta = DMatrix::zeros(sx + sy, r);
        for i in 0..n {
            let c = weights.map_or(1.0, |w| w[i]);
            if c == 0.0 {
                continue;
            }
            let x = data.row(i);
            for k in 0..r {
                let de = c * self.d_eta[(i, k)];
                if de != 0.0 {
                    d_beta[(0, k)] += de;
                    for j in 0..d - 1 {
                        d_beta[(j + 1, k)] += de * x[j];
                    }
                }
                d_phi[(k, k)] += c * self.d_phi[(i, k)];
                let p = c * self.psi[(i, k)];
                for (j, &h) in cs.shift.h_x.iter().take(sx).enumerate() {
                    d_theta[(j, k)] += p * x[h];
                }
                for j in 0..sy {
                    d_theta[(sx + j, k)] += c * self.d_theta_y[(i, k * sy + j)];
                }
            }
        }
        Jacobians { d_beta: d_beta / nf, d_phi: d_phi / nf, d_theta: d_theta / nf }
    }

    /// Column means of ψ.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.psi.nrows().max(1) as f64;
        (0..self.psi.ncols()).map(|k| linalg::compensated_sum(self.psi.column(k).iter().copied()) / n).collect()
    }

    /// n⁻¹ Σ ψ_i ψ_iᵀ
    pub fn outer(&self) -> DMatrix<f64> {
        let n = self.psi.nrows().max(1) as f64;
        self.psi.transpose() * &self.psi / n
    }
}

/// n × r matrix of constraint values, rows in data order, columns in declaration order.
pub fn stack_psi(
    cs: &ConstraintSet,
    law: Law,
    beta: &[f64],
    phi: &[f64],
    theta: &[f64],
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    Ok(evaluate(cs, law, beta, phi, theta, data, false)?.psi)
}

/// Averaged Jacobian blocks (∂ψ/∂β, ∂ψ/∂φ, ∂ψ/∂θ), each (param dim) × r.
pub fn jacobians(
    cs: &ConstraintSet,
    law: Law,
    beta: &[f64],
    phi: &[f64],
    theta: &[f64],
    data: &Dataset,
) -> Result<Jacobians> {
    Ok(evaluate(cs, law, beta, phi, theta, data, true)?.jacobians(cs, data, None))
}

/// Mean density-ratio mass `M(θ) = n⁻¹ Σ_i w_X(x_i) ∫ w_Y f(y | x_i) dy` and its θ-gradient.
pub fn ratio_mass(cs: &ConstraintSet, law: Law, beta: &[f64], theta: &[f64], data: &Dataset) -> Result<(f64, Vec<f64>)> {
    let sx = cs.shift.x_dim();
    let sy = cs.shift.y_dim();
    let tilt = cs.shift.outcome_tilt(law, theta)?;
    let rows = parallel::map_indexed(data.n(), |i| -> Result<(f64, Vec<f64>)> {
        let x = data.row(i);
        let wx = cs.shift.w_x(theta, x);
        let m0 = if sy > 0 { tilt.moments(eta_of(beta, x), &[])?.m0 } else { Deriv { v: 1.0, d_eta: 0.0, d_theta: Vec::new() } };
        let mut g: Vec<f64> = cs.shift.h_x_values(x).iter().map(|h| wx * m0.v * h).collect();
        g.extend(m0.d_theta.iter().map(|d| wx * d));
        Ok((wx * m0.v, g))
    });
    let n = data.n().max(1) as f64;
    let mut total = Vec::with_capacity(rows.len());
    let mut grad = vec![Vec::with_capacity(rows.len()); sx + sy];
    for row in rows {
        let (m, g) = row?;
        total.push(m);
        for (acc, v) in grad.iter_mut().zip(g) {
            acc.push(v);
        }
    }
    Ok((linalg::compensated_sum(total) / n, grad.into_iter().map(|g| linalg::compensated_sum(g) / n).collect()))
}

/// Constraint columns that vanish on every row.
pub fn zero_columns(psi: &DMatrix<f64>) -> Vec<usize> {
    (0..psi.ncols()).filter(|&k| psi.column(k).iter().all(|v| *v == 0.0)).collect()
}

/// Condition number of the column-normalized ψᵀψ/n over the `active` columns;
/// errors when it exceeds [`REDUNDANCY_LIMIT`].
pub fn check_redundancy(psi: &DMatrix<f64>, active: &[usize]) -> Result<f64> {
    if active.is_empty() {
        return Ok(1.0);
    }
    let sub = psi.select_columns(active);
    let n = sub.nrows().max(1) as f64;
    let g = sub.transpose() * &sub / n;
    let scale: Vec<f64> = (0..g.nrows()).map(|k| g[(k, k)].sqrt()).collect();
    let mut c = g.clone();
    for i in 0..c.nrows() {
        for j in 0..c.ncols() {
            c[(i, j)] = if scale[i] > 0.0 && scale[j] > 0.0 { g[(i, j)] / (scale[i] * scale[j]) } else { 0.0 };
        }
    }
    let cond = linalg::condition_number(&c);
    if cond > REDUNDANCY_LIMIT {
        Err(Error::Redundancy { cond, limit: REDUNDANCY_LIMIT })
    } else {
        Ok(cond)
    }
}
