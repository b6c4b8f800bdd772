//! Command-line front end.
//!
//! Options can also come from a `key=value` file given with `--config`, one option per line
//! using the long flag names; flags on the command line win.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use changeplane_core::inference::{estimate_sigma2, wald_report, InferenceConfig};
use changeplane_core::model::ModelFit;
use changeplane_core::optimize::OptimizerSettings;
use changeplane_core::simlab::{simulate_replicate, Example, Fitter, SigmaKind, SimDesign, Truth};
use changeplane_core::tuning::{Criterion, LambdaChoice, TuningGrid};
use changeplane_core::{fit_mcpl, fit_scpl, McplConfig, PenaltySpec, ScplConfig};

use crate::error::{AppError, ExitCode};
use crate::io::{equal_weight_z, load_csv, standardize, Roles, INTERCEPT_NAME};
use crate::mc::{run_parallel, thread_count};
use crate::report::{
    fit_report, labels_csv, mc_params_csv, mc_report, nmi_csv, parse_report, render_fit, render_mc, to_json,
    FitContext, SavedReport,
};

#[derive(Debug, Parser)]
#[command(name = "changeplane", version, about = "Multi-threshold change-plane regression")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a change-plane model to a CSV file and write a JSON report and group labels.
    Fit(FitArgs),
    /// Generate a dataset from one of the built-in simulation designs.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study of a built-in design.
    Mc(McArgs),
    /// Render a saved JSON report as text tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    Scad,
    Mcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Bic,
    Gcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Several parallel planes `z'theta = a_k` (no intercept in `z`).
    Multi,
    /// One plane `(1, z)'theta = 0`.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    Identity,
    Toeplitz,
    Equicorrelation,
}

impl From<SigmaArg> for SigmaKind {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::Identity => SigmaKind::Identity,
            SigmaArg::Toeplitz => SigmaKind::Toeplitz,
            SigmaArg::Equicorrelation => SigmaKind::Equicorrelation,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// `key=value` option file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON report path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Group label CSV path; defaults to the report path with a `.labels.csv` suffix.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    pub y: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long)]
    pub x: Option<String>,
    /// Comma-separated grouping columns.
    #[arg(long)]
    pub z: Option<String>,
    #[arg(long, value_enum, default_value_t = PenaltyArg::Scad)]
    pub penalty: PenaltyArg,
    /// Fixed regularization level for the coefficient fit.
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Comma-separated candidate levels for the coefficient fit.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
    pub criterion: CriterionArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Multi)]
    pub mode: ModeArg,
    /// Segment length of the splitting stage.
    #[arg(long)]
    pub m: Option<usize>,
    /// Smoothing bandwidth.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Center and scale covariates and grouping columns before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Add standard errors and p-values.
    #[arg(long)]
    pub inference: bool,
    /// Replace the grouping columns by their row mean.
    #[arg(long)]
    pub equal_weight_z: bool,
    /// Do not prepend a constant column to the covariates.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub example: u8,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Covariate count as in the design menu (6 for Example 1; 5 or 20 otherwise).
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_enum, default_value_t = SigmaArg::Identity)]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replicate number within the seed's stream.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    /// CSV path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub example: u8,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_enum, default_value_t = SigmaArg::Identity)]
    pub sigma: SigmaArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, value_enum, default_value_t = PenaltyArg::Scad)]
    pub penalty: PenaltyArg,
    /// JSON report path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-parameter summary CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-replicate NMI CSV.
    #[arg(long)]
    pub nmi_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    /// Text output path; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

const SUBCOMMANDS: [&str; 4] = ["fit", "simulate", "mc", "report"];

/// Parses a `key=value` file into long flags. Blank lines and `#` comments are skipped;
/// `true`/`false` values toggle switches.
pub fn config_file_args(text: &str) -> Result<Vec<String>, AppError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| AppError::Config {
            line: k + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(AppError::Config {
                line: k + 1,
                message: format!("invalid key {key:?}"),
            });
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_owned());
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Splices options from the `--config` file right after the subcommand, leaving out those the
/// command line sets itself.
fn expand_args(args: Vec<String>) -> Result<Vec<String>, AppError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|source| AppError::Read { path, source })?;
    let extra = config_file_args(&text)?;
    let pos = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .ok_or_else(|| AppError::Usage("--config needs a subcommand".into()))?;
    // Flags given on the command line replace their config file entries.
    let given: Vec<&str> = args[pos + 1..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let mut out = args[..=pos].to_vec();
    let mut skip = false;
    for item in extra {
        if let Some(key) = item.strip_prefix("--") {
            skip = given.contains(&key);
        }
        if !skip {
            out.push(item);
        }
    }
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|v| v.trim().to_owned())
        .filter(|v| !v.is_empty())
        .collect()
}

fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, AppError> {
    v.clone()
        .ok_or_else(|| AppError::Usage(format!("missing required option --{flag}")))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), AppError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| AppError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|source| AppError::Write {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}

fn penalty_template(p: PenaltyArg) -> PenaltySpec {
    match p {
        PenaltyArg::Scad => PenaltySpec::scad(0.0),
        PenaltyArg::Mcp => PenaltySpec::mcp(0.0),
    }
    .expect("zero level is valid")
}

fn criterion(c: CriterionArg) -> Criterion {
    match c {
        CriterionArg::Bic => Criterion::Bic,
        CriterionArg::Gcv => Criterion::Gcv,
    }
}

fn lambda_choice(args: &FitArgs) -> Result<LambdaChoice, AppError> {
    let crit = criterion(args.criterion);
    if let Some(l) = args.lambda {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(AppError::Usage(format!(
                "--lambda must be a nonnegative number, got {l}"
            )));
        }
        return Ok(LambdaChoice::Fixed(l));
    }
    if let Some(g) = &args.lambda_grid {
        let values = split_list(g)
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| AppError::Usage(format!("--lambda-grid: cannot parse {v:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let grid = TuningGrid::new(values, crit).map_err(|e| AppError::Usage(e.to_string()))?;
        return Ok(LambdaChoice::Grid(grid));
    }
    Ok(LambdaChoice::Auto(crit))
}

fn default_p(example: Example) -> usize {
    match example {
        Example::One => 6,
        _ => 5,
    }
}

fn design(example: u8, n: usize, p: Option<usize>, sigma: SigmaArg, seed: u64) -> Result<SimDesign, AppError> {
    let ex = Example::from_number(example).map_err(|e| AppError::Usage(e.to_string()))?;
    let p = p.unwrap_or_else(|| default_p(ex));
    SimDesign::new(ex, n, p, sigma.into(), seed).map_err(|e| AppError::Usage(e.to_string()))
}

fn run_fit(args: &FitArgs) -> Result<(), AppError> {
    let input = require(&args.input, "input")?;
    let roles = Roles {
        y: require(&args.y, "y")?,
        x: args.x.as_deref().map(split_list).unwrap_or_default(),
        z: split_list(&require(&args.z, "z")?),
        intercept: !args.no_intercept,
    };
    if let Some(h) = args.h {
        if !(h > 0.0) || !h.is_finite() {
            return Err(AppError::Usage(format!("--h must be positive, got {h}")));
        }
    }
    let choice = lambda_choice(args)?;
    let loaded = load_csv(&input, &roles)?;
    let (raw, z_names) = if args.equal_weight_z {
        (
            equal_weight_z(&loaded.data),
            vec![format!("mean({})", loaded.z_names.join(","))],
        )
    } else {
        (loaded.data.clone(), loaded.z_names.clone())
    };
    let (data, scaling) = if args.standardize {
        let (d, s) = standardize(&raw, &loaded.x_names, &z_names)?;
        (d, Some(s))
    } else {
        (raw.clone(), None)
    };
    let template = penalty_template(args.penalty);
    let settings = OptimizerSettings {
        seed: args.seed,
        ..OptimizerSettings::default()
    };
    let (fit, fit_data, raw_fit_data, theta_names) = match args.mode {
        ModeArg::Single => {
            let aug = data.with_z_intercept();
            let config = ScplConfig {
                penalty: template,
                lambda: choice,
                bandwidth: args.h,
                settings,
                theta0: None,
            };
            let mut names = vec![INTERCEPT_NAME.to_owned()];
            names.extend(z_names.iter().cloned());
            (fit_scpl(&aug, &config)?, aug, raw.with_z_intercept(), names)
        }
        ModeArg::Multi => {
            let config = McplConfig {
                penalty: template,
                refine_lambda: choice,
                m: args.m,
                bandwidth: args.h,
                settings,
                ..McplConfig::default()
            };
            (fit_mcpl(&data, &config)?, data.clone(), raw.clone(), z_names.clone())
        }
    };

    let inference = if args.inference && fit.nonzero_count() > 0 {
        let cfg = InferenceConfig::for_fit(&fit, &template)?;
        let report = wald_report(&fit, &fit_data, &cfg);
        match report {
            Ok(r) => Some((r, estimate_sigma2(&fit, &fit_data)?, fit.nonzero_count())),
            Err(changeplane_core::Error::InvalidInput(msg)) if !fit.converged => {
                eprintln!("inference skipped: {msg}");
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    let original: Option<ModelFit> = match &scaling {
        Some(s) => Some(s.back_map(&fit, &raw_fit_data)?),
        None => None,
    };
    let ctx = FitContext {
        x_names: &loaded.x_names,
        theta_names: &theta_names,
        standardized: scaling.is_some(),
        inference: inference.as_ref().map(|(r, s2, df)| (r, *s2, *df)),
        original: original.as_ref(),
    };
    let report = fit_report(&fit, fit_data.n(), fit_data.d(), &ctx);
    write_out(args.output.as_deref(), &to_json(&report)?)?;
    let labels_path = args.labels.clone().or_else(|| {
        args.output.as_ref().map(|o| {
            let stem = o.with_extension("");
            PathBuf::from(format!("{}.labels.csv", stem.display()))
        })
    });
    if let Some(p) = labels_path {
        write_out(Some(&p), &labels_csv(&fit.labels))?;
    }
    if !fit.converged {
        return Err(AppError::NotConverged);
    }
    Ok(())
}

/// Writes `y`, the non-intercept covariates `x1..` and the true group label.
pub fn simulated_csv(design: &SimDesign, rep: u64) -> Result<String, AppError> {
    let (data, _truth, labels) = simulate_replicate(design, rep)?;
    let p = data.p();
    let mut out = String::from("y");
    for j in 1..p {
        out.push_str(&format!(",x{j}"));
    }
    out.push_str(",group\n");
    for i in 0..data.n() {
        out.push_str(&format!("{}", data.y[i]));
        for j in 1..p {
            out.push_str(&format!(",{}", data.x[(i, j)]));
        }
        out.push_str(&format!(",{}\n", labels[i]));
    }
    Ok(out)
}

fn run_simulate(args: &SimulateArgs) -> Result<(), AppError> {
    let d = design(args.example, args.n, args.p, args.sigma, args.seed)?;
    write_out(args.output.as_deref(), &simulated_csv(&d, args.rep)?)
}

fn run_mc(args: &McArgs) -> Result<(), AppError> {
    let d = design(args.example, args.n, args.p, args.sigma, args.seed)?;
    if args.replicates == 0 {
        return Err(AppError::Usage("--replicates must be at least 1".into()));
    }
    let fitter = match Fitter::for_example(d.example) {
        Fitter::Single(c) => Fitter::Single(ScplConfig {
            penalty: penalty_template(args.penalty),
            ..c
        }),
        Fitter::Multi(c) => Fitter::Multi(McplConfig {
            penalty: penalty_template(args.penalty),
            ..c
        }),
    };
    let report = run_parallel(&d, args.replicates, &fitter, thread_count())?;
    let true_s = Truth::for_design(&d).s();
    let json = mc_report(&report, true_s);
    write_out(args.output.as_deref(), &to_json(&json)?)?;
    if let Some(p) = &args.csv {
        write_out(Some(p), &mc_params_csv(&json))?;
    }
    if let Some(p) = &args.nmi_csv {
        write_out(Some(p), &nmi_csv(&report.nmi_values))?;
    }
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<(), AppError> {
    let text = fs::read_to_string(&args.input).map_err(|source| AppError::Read {
        path: args.input.clone(),
        source,
    })?;
    let rendered = match parse_report(&text)? {
        SavedReport::Fit(r) => render_fit(&r),
        SavedReport::Mc(r) => render_mc(&r),
    };
    write_out(args.output.as_deref(), &rendered)
}

pub fn run(config: &RunConfig) -> Result<(), AppError> {
    match &config.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Mc(a) => run_mc(a),
        Command::Report(a) => run_report(a),
    }
}

/// Parses arguments (program name first), runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let args = match expand_args(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code() as i32;
        }
    };
    let config = match RunConfig::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::Success,
                _ => ExitCode::Usage,
            };
            let _ = e.print();
            return code as i32;
        }
    };
    match run(&config) {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as i32
        }
    }
}
