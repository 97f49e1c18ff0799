use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregates::AdSummary;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::VPolicy;
use crate::model::Family;
use crate::shift::{ShiftMode, ShiftSpec};
use crate::simulation::{Dgp, Menu, SimDesign};

/// Outcome transform `ỹ = (y − center) / scale` for gaussian fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn new(center: f64, scale: f64) -> Result<Standardization> {
        if !center.is_finite() || !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("standardization needs a finite center and positive scale (got {center}, {scale})")));
        }
        Ok(Standardization { center, scale })
    }

    /// Sample mean and standard deviation of the outcome.
    pub fn from_data(data: &Dataset) -> Result<Standardization> {
        let n = data.n();
        if n < 2 {
            return Err(Error::Config("standardization needs at least two rows".into()));
        }
        let m = crate::linalg::compensated_sum(data.y.iter().copied()) / n as f64;
        let ss = crate::linalg::compensated_sum(data.y.iter().map(|y| (y - m) * (y - m)));
        Standardization::new(m, (ss / (n - 1) as f64).sqrt())
    }

    fn map(&self, y: f64) -> f64 {
        if y.is_finite() {
            (y - self.center) / self.scale
        } else {
            y
        }
    }

    pub fn apply_data(&self, data: &mut Dataset) {
        for y in &mut data.y {
            *y = self.map(*y);
        }
    }

    /// Rescales outcome means, their variances and outcome cut points.
    pub fn apply_summaries(&self, summaries: &mut [AdSummary]) {
        for s in summaries {
            if s.kind.is_outcome_mean() {
                for v in &mut s.value {
                    *v = self.map(*v);
                }
                if let Some(v) = &mut s.variance {
                    *v /= self.scale * self.scale;
                }
            }
            if let Some((lo, hi)) = s.subgroup.as_mut().and_then(|g| g.outcome.as_mut()) {
                *lo = self.map(*lo);
                *hi = self.map(*hi);
            }
        }
    }

    /// Coefficients on the original outcome scale.
    pub fn back_transform(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().enumerate().map(|(j, b)| b * self.scale + if j == 0 { self.center } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StandardizeSetting {
    /// `true` uses the IPD outcome mean and standard deviation.
    Toggle(bool),
    Fixed(Standardization),
}

impl Default for StandardizeSetting {
    fn default() -> Self {
        StandardizeSetting::Toggle(false)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    #[serde(default)]
    pub mode: Option<String>,
    /// Covariate names entering h(x).
    #[serde(default)]
    pub h_x: Vec<String>,
    #[serde(default)]
    pub degree: Option<usize>,
}

impl ShiftConfig {
    pub fn resolve(&self, columns: &[String]) -> Result<ShiftSpec> {
        let mode = self.mode.as_deref().map(ShiftMode::parse).transpose()?.unwrap_or_default();
        let h_x = if mode.covariate() {
            if self.h_x.is_empty() {
                (0..columns.len()).collect()
            } else {
                self.h_x
                    .iter()
                    .map(|h| columns.iter().position(|c| c == h).ok_or_else(|| Error::Config(format!("shift covariate '{h}' is not a covariate"))))
                    .collect::<Result<Vec<_>>>()?
            }
        } else {
            Vec::new()
        };
        let degree = if mode.outcome() { self.degree.unwrap_or(1) } else { 0 };
        let spec = ShiftSpec { mode, h_x, degree };
        spec.validate(columns.len())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<OutputFormat> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Config(format!("unknown output format '{other}' (json | csv)"))),
        }
    }
}

/// `fit` settings read from TOML. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub family: Option<String>,
    pub outcome: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub data: Option<PathBuf>,
    pub ad: Option<PathBuf>,
    #[serde(default)]
    pub standardize: StandardizeSetting,
    #[serde(default)]
    pub shift: ShiftConfig,
    pub n_override: Option<u64>,
    pub v_policy: Option<String>,
    pub alpha: Option<f64>,
    pub method: Option<String>,
    pub gamma_shape: Option<f64>,
    pub output: Option<String>,
    /// Keep only summaries whose label starts with one of these prefixes.
    #[serde(default)]
    pub select: Vec<String>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn toml_error(path: &Path, e: toml::de::Error) -> Error {
    Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end()))
}

impl FitConfig {
    pub fn from_toml(text: &str) -> Result<FitConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<FitConfig> {
        let mut cfg: FitConfig = toml::from_str(&read(path)?).map_err(|e| toml_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data, &mut cfg.ad].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn family(&self) -> Result<Family> {
        self.family.as_deref().map_or(Ok(Family::Gaussian), Family::parse)
    }

    pub fn v_policy(&self) -> Result<VPolicy> {
        self.v_policy.as_deref().map_or(Ok(VPolicy::Auto), VPolicy::parse)
    }

    pub fn output(&self) -> Result<OutputFormat> {
        self.output.as_deref().map_or(Ok(OutputFormat::Json), OutputFormat::parse)
    }
}

/// Drops summaries not matching any label prefix; an empty selection keeps all.
pub fn select_summaries(summaries: Vec<AdSummary>, prefixes: &[String]) -> Vec<AdSummary> {
    if prefixes.is_empty() {
        return summaries;
    }
    summaries
        .into_iter()
        .filter(|s| s.label.as_deref().is_some_and(|l| prefixes.iter().any(|p| l.starts_with(p.as_str()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<usize> {
        match self {
            OneOrMany::One(n) => vec![n],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub beta: Option<[f64; 3]>,
    pub sigma: Option<f64>,
    pub theta: Option<Vec<f64>>,
}

/// Simulation design file. Unset keys take the defaults of the chosen DGP.
///
/// ```toml
/// dgp = "prior_prob_shift"
/// n = [400, 800]
/// n_ad = 1000
/// reps = 300
/// seed = 7
/// menu = ["phi_y", "phi_x"]
/// [truth]
/// theta = [0.5]
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub dgp: String,
    pub n: Option<OneOrMany>,
    pub n_ad: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub menu: Option<Vec<String>>,
    #[serde(default)]
    pub truth: TruthConfig,
    pub alpha: Option<f64>,
    pub failure_budget_pct: Option<f64>,
    pub v_policy: Option<String>,
}

impl DesignConfig {
    pub fn from_toml(text: &str) -> Result<DesignConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<DesignConfig> {
        toml::from_str(&read(path)?).map_err(|e| toml_error(path, e))
    }

    pub fn design(self) -> Result<SimDesign> {
        let dgp = Dgp::parse(&self.dgp)?;
        let mut d = SimDesign::standard(dgp);
        if let Some(n) = self.n {
            d.n = n.into_vec();
        }
        if let Some(v) = self.n_ad {
            d.n_ad = v;
        }
        if let Some(v) = self.reps {
            d.reps = v;
        }
        if let Some(v) = self.seed {
            d.seed = v;
        }
        if let Some(m) = self.menu {
            d.menus = m.iter().map(|s| Menu::parse(s)).collect::<Result<Vec<_>>>()?;
        }
        if let Some(b) = self.truth.beta {
            d.beta = b;
        }
        if let Some(s) = self.truth.sigma {
            d.sigma = s;
        }
        if let Some(t) = self.truth.theta {
            d.theta = t;
        }
        if let Some(a) = self.alpha {
            d.alpha = a;
        }
        if let Some(b) = self.failure_budget_pct {
            d.failure_budget_pct = b;
        }
        if let Some(v) = self.v_policy {
            d.v_policy = VPolicy::parse(&v)?;
        }
        d.validate()?;
        Ok(d)
    }
}
