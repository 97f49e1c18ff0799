use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adfuse::error::{Error, Result};
use adfuse::estimators::Method;
use adfuse::io::commands::{run_fit, run_simulate, validate_ad, FitRequest, SimulateOutput};
use adfuse::io::config::{ShiftConfig, StandardizeSetting};
use adfuse::io::{DesignConfig, FitConfig, OutputFormat, Standardization, Table};
use adfuse::simulation::{Dgp, Menu, SimDesign};

/// Regression with individual-level data fused with aggregate summary statistics.
///
/// Exit codes: 0 ok, 2 parse or configuration error, 3 identification,
/// 4 convex-hull violation, 5 singular J, 6 replication failure budget exceeded.
#[derive(Parser)]
#[command(name = "adfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the MLE and a constrained estimator to an IPD CSV and an AD JSON file.
    Fit(FitArgs),
    /// Run a Monte Carlo design and write a CSV/JSON report.
    Simulate(SimulateArgs),
    /// Parse and validate an AD JSON file.
    ValidateAd(ValidateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// TOML fit configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// IPD CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// AD JSON file (array of summaries).
    #[arg(long)]
    ad: Option<PathBuf>,
    /// gaussian | bernoulli_logit | poisson_log | gamma_log
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    /// Comma-separated covariate columns (default: all but the outcome).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// fast (one-step) | full (iterated)
    #[arg(long)]
    method: Option<String>,
    /// Ignore the AD and report the MLE.
    #[arg(long)]
    mle_only: bool,
    /// none | covariate | prior_probability | both
    #[arg(long)]
    shift: Option<String>,
    /// Comma-separated covariates entering the covariate-shift ratio.
    #[arg(long, value_delimiter = ',')]
    shift_covariates: Option<Vec<String>>,
    /// Polynomial degree of the outcome-shift ratio.
    #[arg(long)]
    shift_degree: Option<usize>,
    /// Standardize the outcome by its IPD mean and SD.
    #[arg(long, conflicts_with = "standardize_with")]
    standardize: bool,
    /// Standardize the outcome with fixed constants CENTER,SCALE.
    #[arg(long, value_delimiter = ',', value_name = "CENTER,SCALE")]
    standardize_with: Option<Vec<f64>>,
    /// AD sample size used when summaries do not report one.
    #[arg(long)]
    n_override: Option<u64>,
    /// auto | reported | plugin
    #[arg(long)]
    v_policy: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Known gamma shape.
    #[arg(long)]
    gamma_shape: Option<f64>,
    /// Keep summaries whose label starts with one of these prefixes.
    #[arg(long, value_delimiter = ',')]
    select: Option<Vec<String>>,
    /// json | csv
    #[arg(long)]
    format: Option<String>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// no_shift | covariate_shift | prior_prob_shift
    #[arg(long, required_unless_present = "config")]
    design: Option<String>,
    /// TOML design file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// IPD sample sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    n_ad: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated menu entries.
    #[arg(long, value_delimiter = ',')]
    menu: Option<Vec<String>>,
    /// Output directory (default: CSV on stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-replication records.
    #[arg(long, requires = "out")]
    dump_reps: bool,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    ad: PathBuf,
    /// Covariate names, comma-separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "data")]
    columns: Option<Vec<String>>,
    /// Take covariate names from this CSV header instead.
    #[arg(long, conflicts_with = "columns")]
    data: Option<PathBuf>,
    /// Outcome column to leave out of the CSV header.
    #[arg(long, requires = "data")]
    outcome: Option<String>,
}

fn fit(args: FitArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => FitConfig::from_path(p)?,
        None => FitConfig::default(),
    };
    macro_rules! take {
        ($($field:ident),*) => {$( if args.$field.is_some() { cfg.$field = args.$field.clone(); } )*};
    }
    take!(data, ad, family, outcome, method, n_override, v_policy, alpha, gamma_shape);
    if let Some(c) = &args.covariates {
        cfg.covariates = c.clone();
    }
    if let Some(s) = &args.select {
        cfg.select = s.clone();
    }
    if let Some(f) = &args.format {
        cfg.output = Some(f.clone());
    }
    if args.shift.is_some() || args.shift_covariates.is_some() || args.shift_degree.is_some() {
        cfg.shift = ShiftConfig {
            mode: args.shift.clone().or(cfg.shift.mode),
            h_x: args.shift_covariates.clone().unwrap_or(cfg.shift.h_x),
            degree: args.shift_degree.or(cfg.shift.degree),
        };
    }
    if args.standardize {
        cfg.standardize = StandardizeSetting::Toggle(true);
    }
    if let Some(c) = &args.standardize_with {
        if c.len() != 2 {
            return Err(Error::Config("--standardize-with takes CENTER,SCALE".into()));
        }
        cfg.standardize = StandardizeSetting::Fixed(Standardization::new(c[0], c[1])?);
    }
    let mut req = FitRequest::from_config(&cfg)?;
    if args.mle_only {
        req.method = Method::Mle;
    }
    let doc = adfuse::parallel::with_threads(args.threads, || run_fit(&req))?;
    let mut text = Vec::new();
    match req.output {
        OutputFormat::Json => {
            text.extend(doc.to_json()?.into_bytes());
            text.push(b'\n');
        }
        OutputFormat::Csv => doc.write_csv(&mut text)?,
    }
    write_out(args.out.as_deref(), &text)
}

fn write_out(path: Option<&std::path::Path>, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => Ok(std::io::stdout().lock().write_all(bytes)?),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut design = match (&args.config, &args.design) {
        (Some(p), _) => {
            let mut c = DesignConfig::from_path(p)?;
            if let Some(d) = &args.design {
                c.dgp = d.clone();
            }
            c.design()?
        }
        (None, Some(d)) => SimDesign::standard(Dgp::parse(d)?),
        (None, None) => return Err(Error::Config("either --design or --config is required".into())),
    };
    if let Some(n) = args.n {
        design.n = n;
    }
    if let Some(v) = args.n_ad {
        design.n_ad = v;
    }
    if let Some(v) = args.reps {
        design.reps = v;
    }
    if let Some(v) = args.seed {
        design.seed = v;
    }
    if let Some(m) = &args.menu {
        design.menus = m.iter().map(|s| Menu::parse(s)).collect::<Result<Vec<_>>>()?;
    }
    design.validate()?;
    let out = SimulateOutput { dir: args.out, dump_replications: args.dump_reps };
    run_simulate(&design, args.threads, &out).map(|_| ())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let columns = match (args.columns, &args.data) {
        (Some(c), _) => c,
        (None, Some(p)) => {
            let t = Table::from_path(p)?;
            t.headers.into_iter().filter(|h| Some(h) != args.outcome.as_ref()).collect()
        }
        (None, None) => unreachable!("clap requires one of --columns or --data"),
    };
    let lines = validate_ad(&args.ad, &columns)?;
    println!("{} summaries", lines.len());
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::ValidateAd(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
