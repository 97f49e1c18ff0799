//! The library side of the command-line front end.

use std::path::{Path, PathBuf};

use super::ad_json::parse_ad_file;
use super::config::{select_summaries, FitConfig, OutputFormat, ShiftConfig, StandardizeSetting, Standardization};
use super::csv_data::Table;
use super::report::{sim_json, write_replications, write_sim_csv, FitDocument};
use crate::aggregates::{AdSummary, ConstraintSet};
use crate::error::{Error, Result};
use crate::estimators::{fit_cmle_fast_with_mle, fit_cmle_full_with_mle, fit_mle, FitOptions, FitResult, Method};
use crate::model::{Family, OutcomeFamily};
use crate::simulation::{run_replications, SimDesign, SimReport};

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub data: PathBuf,
    pub ad: Option<PathBuf>,
    pub family: OutcomeFamily,
    pub outcome: String,
    /// Empty means every column except the outcome.
    pub covariates: Vec<String>,
    pub standardize: StandardizeSetting,
    pub shift: ShiftConfig,
    pub method: Method,
    pub options: FitOptions,
    pub select: Vec<String>,
    pub output: OutputFormat,
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "mle" => Ok(Method::Mle),
        "fast" | "cmle_fast" | "one_step" => Ok(Method::CmleFast),
        "full" | "cmle_full" => Ok(Method::CmleFull),
        other => Err(Error::Config(format!("unknown method '{other}' (mle | fast | full)"))),
    }
}

impl FitRequest {
    /// Resolves a config file; command-line flags are applied on top by the caller.
    pub fn from_config(cfg: &FitConfig) -> Result<FitRequest> {
        let family = cfg.family()?;
        let family = match (family, cfg.gamma_shape) {
            (Family::GammaLog, Some(nu)) => OutcomeFamily::gamma_with_shape(nu),
            (_, Some(_)) => return Err(Error::Config("gamma_shape applies to the gamma family only".into())),
            (f, None) => OutcomeFamily::new(f),
        };
        Ok(FitRequest {
            data: cfg.data.clone().ok_or_else(|| Error::Config("no IPD file given".into()))?,
            ad: cfg.ad.clone(),
            family,
            outcome: cfg.outcome.clone().ok_or_else(|| Error::Config("no outcome column given".into()))?,
            covariates: cfg.covariates.clone(),
            standardize: cfg.standardize.clone(),
            shift: cfg.shift.clone(),
            method: cfg.method.as_deref().map_or(Ok(Method::CmleFast), parse_method)?,
            options: FitOptions {
                alpha: cfg.alpha.unwrap_or(0.05),
                v_policy: cfg.v_policy()?,
                n_override: cfg.n_override,
                ..Default::default()
            },
            select: cfg.select.clone(),
            output: cfg.output()?,
        })
    }
}

fn constraint_label(s: &AdSummary) -> String {
    s.label.clone().unwrap_or_else(|| s.kind.name().to_string())
}

pub fn run_fit(req: &FitRequest) -> Result<FitDocument> {
    let table = Table::from_path(&req.data)?;
    let covariates = if req.covariates.is_empty() {
        table.headers.iter().filter(|h| **h != req.outcome).cloned().collect()
    } else {
        req.covariates.clone()
    };
    let mut data = table.dataset(&req.outcome, &covariates)?;
    let standardization = match &req.standardize {
        StandardizeSetting::Toggle(false) => None,
        StandardizeSetting::Toggle(true) => Some(Standardization::from_data(&data)?),
        StandardizeSetting::Fixed(s) => Some(Standardization::new(s.center, s.scale)?),
    };
    if standardization.is_some() && req.family.family != Family::Gaussian {
        return Err(Error::Config("outcome standardization applies to the gaussian family only".into()));
    }
    let mut summaries = match (&req.ad, req.method) {
        (_, Method::Mle) | (None, _) => Vec::new(),
        (Some(path), _) => select_summaries(parse_ad_file(path, &data.names)?, &req.select),
    };
    if let Some(st) = standardization {
        st.apply_data(&mut data);
        st.apply_summaries(&mut summaries);
    }
    let shift = req.shift.resolve(&data.names)?;
    let labels = summaries.iter().map(constraint_label).collect();
    let cs = ConstraintSet::new(summaries, shift, data.p)?;
    let mle = fit_mle(&req.family, &data)?;
    let fit = match req.method {
        Method::Mle => FitResult::from_mle(&mle, req.options.alpha)?,
        Method::CmleFast => fit_cmle_fast_with_mle(&cs, &mle, &data, &req.options)?,
        Method::CmleFull => fit_cmle_full_with_mle(&cs, &mle, &data, &req.options)?,
    };
    let labels = if fit.method == Method::Mle { Vec::new() } else { labels };
    Ok(FitDocument::new(&fit, req.family.family.name(), data.n(), &data.names, labels, standardization))
}

/// Parses an AD file and returns one description line per summary.
pub fn validate_ad(path: &Path, columns: &[String]) -> Result<Vec<String>> {
    let summaries = parse_ad_file(path, columns)?;
    Ok(summaries
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = s.n.map_or("-".to_string(), |n| n.to_string());
            let var = if s.variance.is_some() { "reported" } else { "-" };
            format!("{i}\t{}\t{}\tdim={}\tn={n}\tvariance={var}", s.kind.name(), constraint_label(s), s.dim())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulateOutput {
    /// Directory for report.csv, report.json and optionally replications.jsonl.
    pub dir: Option<PathBuf>,
    pub dump_replications: bool,
}

/// Runs a design and writes the report. Without an output directory the CSV
/// goes to stdout.
pub fn run_simulate(design: &SimDesign, threads: Option<usize>, out: &SimulateOutput) -> Result<SimReport> {
    let report = crate::parallel::with_threads(threads, || run_replications(design))?;
    match &out.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
            let create = |name: &str| {
                let p = dir.join(name);
                std::fs::File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
            };
            write_sim_csv(&report, create("report.csv")?)?;
            std::fs::write(dir.join("report.json"), sim_json(&report)? + "\n")?;
            if out.dump_replications {
                write_replications(&report, std::io::BufWriter::new(create("replications.jsonl")?))?;
            }
        }
        None => write_sim_csv(&report, std::io::stdout().lock())?,
    }
    Ok(report)
}
