//! Aggregate-data files: a JSON array of summaries.
//!
//! ```json
//! [{"kind": "covariate_mean_given_outcome",
//!   "label": "median:low",
//!   "subgroup": {"outcome": {"lo": null, "hi": 48.0}},
//!   "covariates": ["gender", "college"],
//!   "value": [0.38, 0.43],
//!   "n": 4052,
//!   "variance": null}]
//! ```
//!
//! Covariate clauses are `{"name": .., "lo": .., "hi": ..}` for `lo < x ≤ hi`
//! or `{"name": .., "values": [..]}` for a category set. A null bound is
//! infinite.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::aggregates::{AdSummary, Clause, SubgroupPredicate, SummaryKind};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSummary {
    kind: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    subgroup: Option<RawSubgroup>,
    #[serde(default)]
    covariates: Vec<String>,
    value: Vec<f64>,
    #[serde(default)]
    n: Option<u64>,
    #[serde(default)]
    variance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubgroup {
    #[serde(default)]
    covariates: Vec<RawClause>,
    #[serde(default)]
    outcome: Option<RawInterval>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClause {
    name: String,
    #[serde(default)]
    lo: Option<f64>,
    #[serde(default)]
    hi: Option<f64>,
    #[serde(default)]
    values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterval {
    lo: Option<f64>,
    hi: Option<f64>,
}

fn bounds(lo: Option<f64>, hi: Option<f64>) -> (f64, f64) {
    (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY))
}

fn resolve(name: &str, columns: &[String], at: usize) -> Result<usize> {
    columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::Parse(format!("summary {at}: unknown covariate '{name}' (have: {})", columns.join(", "))))
}

fn convert(raw: RawSummary, columns: &[String], at: usize) -> Result<AdSummary> {
    let kind = SummaryKind::parse(&raw.kind).map_err(|e| Error::Parse(format!("summary {at}: {e}")))?;
    let subgroup = raw
        .subgroup
        .map(|s| -> Result<SubgroupPredicate> {
            let clauses = s
                .covariates
                .into_iter()
                .map(|c| {
                    let covariate = resolve(&c.name, columns, at)?;
                    match (c.values, c.lo, c.hi) {
                        (Some(values), None, None) => Ok(Clause::Categories { covariate, values }),
                        (None, lo, hi) => {
                            let (lo, hi) = bounds(lo, hi);
                            Ok(Clause::Interval { covariate, lo, hi })
                        }
                        _ => Err(Error::InvalidSummary(format!(
                            "summary {at}: clause on '{}' mixes an interval with a category set",
                            c.name
                        ))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SubgroupPredicate { clauses, outcome: s.outcome.map(|o| bounds(o.lo, o.hi)) })
        })
        .transpose()?;
    let targets = raw.covariates.iter().map(|c| resolve(c, columns, at)).collect::<Result<Vec<_>>>()?;
    let variance = match raw.variance {
        None => None,
        Some(rows) => {
            let q = rows.len();
            if rows.iter().any(|r| r.len() != q) {
                return Err(Error::InvalidSummary(format!("summary {at}: variance must be a square matrix")));
            }
            Some(DMatrix::from_fn(q, q, |i, j| rows[i][j]))
        }
    };
    let s = AdSummary { kind, subgroup, targets, value: raw.value, n: raw.n, variance, label: raw.label };
    s.validate(columns.len()).map_err(|e| match e {
        Error::InvalidSummary(m) => Error::InvalidSummary(format!("summary {at}: {m}")),
        other => other,
    })?;
    Ok(s)
}

/// Parses and validates an AD document against the IPD covariate names.
/// Blank input is an empty list.
pub fn parse_ad_str(text: &str, columns: &[String]) -> Result<Vec<AdSummary>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<RawSummary> = serde_json::from_str(text).map_err(|e| Error::Parse(format!("AD JSON: {e}")))?;
    raw.into_iter().enumerate().map(|(i, r)| convert(r, columns, i)).collect()
}

pub fn parse_ad_file(path: &Path, columns: &[String]) -> Result<Vec<AdSummary>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_ad_str(&text, columns)
}

fn bound(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn name(columns: &[String], j: usize) -> Result<&str> {
    columns.get(j).map(String::as_str).ok_or_else(|| Error::Dimension(format!("covariate index {j} has no name")))
}

fn summary_value(s: &AdSummary, columns: &[String]) -> Result<Value> {
    let subgroup = match &s.subgroup {
        None => Value::Null,
        Some(sub) => {
            let clauses = sub
                .clauses
                .iter()
                .map(|c| {
                    Ok(match c {
                        Clause::Interval { covariate, lo, hi } => {
                            json!({"name": name(columns, *covariate)?, "lo": bound(*lo), "hi": bound(*hi)})
                        }
                        Clause::Categories { covariate, values } => {
                            json!({"name": name(columns, *covariate)?, "values": values})
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let outcome = sub.outcome.map_or(Value::Null, |(lo, hi)| json!({"lo": bound(lo), "hi": bound(hi)}));
            json!({"covariates": clauses, "outcome": outcome})
        }
    };
    let targets = s.targets.iter().map(|&j| name(columns, j)).collect::<Result<Vec<_>>>()?;
    let variance = s.variance.as_ref().map_or(Value::Null, |v| {
        json!((0..v.nrows()).map(|i| (0..v.ncols()).map(|j| v[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>())
    });
    let mut obj = json!({
        "kind": s.kind.name(),
        "subgroup": subgroup,
        "covariates": targets,
        "value": s.value,
        "n": s.n,
        "variance": variance,
    });
    if let Some(l) = &s.label {
        obj["label"] = json!(l);
    }
    Ok(obj)
}

/// Serializes summaries in the format read by [`parse_ad_str`].
pub fn emit_ad(summaries: &[AdSummary], columns: &[String]) -> Result<String> {
    let items = summaries.iter().map(|s| summary_value(s, columns)).collect::<Result<Vec<_>>>()?;
    serde_json::to_string_pretty(&items).map_err(|e| Error::Io(e.to_string()))
}
