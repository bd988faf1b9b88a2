//! Command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 estimation failure, 3 simulation cap.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::data::{load_long_csv, LoadOptions, LongitudinalSample};
use crate::derived::{reference_times, DerivedReport, DerivedValue};
use crate::error::{LbgmError, Result};
use crate::estimator::{fit, read_parameter_table, write_parameter_table, FitOptions, FitResult, FitStatus};
use crate::model::ModelSpec;
use crate::simstudy::{run_study, SimulationDesign, StudyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ESTIMATION: i32 = 2;
pub const EXIT_SIM_CAP: i32 = 3;

pub const PARAMS_FILE: &str = "params.csv";
pub const DERIVED_FILE: &str = "derived.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPLICATIONS_FILE: &str = "replications.csv";

#[derive(Debug, Parser)]
#[command(name = "lbgm", version, about = "Latent basis growth models with individual measurement occasions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to long-format data.
    Fit(FitArgs),
    /// Run a Monte Carlo study from a design file.
    Simulate(SimulateArgs),
    /// Print a summary of the outputs written by `fit`.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restarts from perturbed starting values after a failed optimizer run.
    #[arg(long)]
    pub retries: Option<usize>,
    /// TOML file supplying defaults for the options above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// Long-format CSV with columns id,outcome,wave,time,value.
    #[arg(long)]
    pub data: PathBuf,
    /// Model specification (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Values treated as missing, comma separated (for example -9,-99).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub drop_values: Vec<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Clone)]
pub struct SimulateArgs {
    /// Simulation design (TOML).
    #[arg(long)]
    pub design: PathBuf,
    /// Number of converged replications to collect.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Run replications on a single thread.
    #[arg(long)]
    pub serial: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args, Clone)]
pub struct ReportArgs {
    /// Directory holding the outputs of `fit`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options resolved from flags over an optional config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub retries: Option<usize>,
    pub reps: Option<usize>,
    #[serde(default)]
    pub drop_values: Vec<f64>,
}

pub const DEFAULT_SEED: u64 = 20_240_501;
pub const DEFAULT_REPS: usize = 100;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LbgmError::io(path, e))?;
        toml::from_str(&text).map_err(|e| LbgmError::Config(e.to_string()))
    }

    fn resolve(common: &CommonArgs) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if common.out.is_some() {
            cfg.out = common.out.clone();
        }
        cfg.seed = common.seed.or(cfg.seed);
        cfg.retries = common.retries.or(cfg.retries);
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn fit_options(&self) -> FitOptions {
        let mut o = FitOptions {
            rng_seed: self.seed(),
            ..FitOptions::default()
        };
        if let Some(r) = self.retries {
            o.max_retries = r;
        }
        o
    }
}

/// Parse arguments (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => match cli.command {
            Command::Fit(a) => cmd_fit(&a),
            Command::Simulate(a) => cmd_simulate(&a),
            Command::Report(a) => cmd_report(&a),
        },
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).map_err(|e| LbgmError::io(dir, e))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| LbgmError::io(path, e))
}

fn input_error(e: &LbgmError) -> i32 {
    eprintln!("error: {e}");
    EXIT_INPUT
}

fn is_input_error(e: &LbgmError) -> bool {
    matches!(
        e,
        LbgmError::Io { .. }
            | LbgmError::Csv(_)
            | LbgmError::MissingColumn(_)
            | LbgmError::NonNumeric { .. }
            | LbgmError::BadWave { .. }
            | LbgmError::DuplicateRow { .. }
            | LbgmError::NonMonotoneTime { .. }
            | LbgmError::Invalid(_)
            | LbgmError::UnknownOutcome(_)
            | LbgmError::Spec(_)
            | LbgmError::FixedIntervalUnobservable { .. }
            | LbgmError::Design(_)
            | LbgmError::Config(_)
    )
}

/// Model-implied mean curve of every outcome on its reference times, followed by
/// the observed points: `kind,outcome,id,wave,time,value`.
pub fn write_trajectories<W: Write>(fit: &FitResult, sample: &LongitudinalSample, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["kind", "outcome", "id", "wave", "time", "value"])?;
    for (u, o) in fit.spec.outcomes.iter().enumerate() {
        let times = reference_times(fit, u)?;
        let rs = &fit.layout.rates[u];
        let first = rs.groups[0][0];
        let last = *rs.groups.last().unwrap().last().unwrap() + 1;
        let p = &fit.estimates.outcomes[u];
        let mut level = p.mu_eta0;
        for w in first..=last {
            if w > first {
                level += p.mu_eta1 * p.gamma[w - 1] * (times[w] - times[w - 1]);
            }
            wtr.write_record([
                "implied".to_string(),
                o.label.clone(),
                String::new(),
                (w + 1).to_string(),
                times[w].to_string(),
                level.to_string(),
            ])?;
        }
    }
    for o in &fit.spec.outcomes {
        let k = sample.outcome_index(&o.label).expect("fitted outcome present");
        for ind in sample.individuals() {
            for obs in &ind.series[k].observations {
                wtr.write_record([
                    "observed".to_string(),
                    o.label.clone(),
                    ind.id.clone(),
                    obs.wave.to_string(),
                    obs.time.to_string(),
                    obs.value.to_string(),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| LbgmError::io("<csv writer>", e))?;
    Ok(())
}

fn write_fit_outputs(fit: &FitResult, sample: &LongitudinalSample, dir: &Path) -> Result<()> {
    write_parameter_table(fit, create(dir, PARAMS_FILE)?)?;
    DerivedReport::from_fit(fit)?.write_csv(create(dir, DERIVED_FILE)?)?;
    write_trajectories(fit, sample, create(dir, TRAJECTORY_FILE)?)
}

pub fn cmd_fit(args: &FitArgs) -> i32 {
    let cfg = match RunConfig::resolve(&args.common) {
        Ok(c) => c,
        Err(e) => return input_error(&e),
    };
    let mut drop_values = cfg.drop_values.clone();
    drop_values.extend(&args.drop_values);
    let load = LoadOptions {
        drop_values,
        ..LoadOptions::default()
    };
    let sample = match load_long_csv(&args.data, &load) {
        Ok(s) => s,
        Err(e) => return input_error(&e),
    };
    let spec = match fs::read_to_string(&args.spec)
        .map_err(|e| LbgmError::io(&args.spec, e))
        .and_then(|t| ModelSpec::from_toml_str(&t))
    {
        Ok(s) => s,
        Err(e) => return input_error(&e),
    };
    let result = match fit(&sample, &spec, &cfg.fit_options()) {
        Ok(r) => r,
        Err(e) if is_input_error(&e) => return input_error(&e),
        Err(e) => {
            eprintln!("estimation failed: {e}");
            return EXIT_ESTIMATION;
        }
    };
    let dir = cfg.out_dir();
    if let Err(e) = write_fit_outputs(&result, &sample, &dir) {
        return input_error(&e);
    }
    println!(
        "status: {}  deviance: {:.6}  n: {}  iterations: {}  runs: {}",
        result.status.as_str(),
        result.deviance,
        result.n_used,
        result.iterations,
        result.attempts
    );
    if sample.dropped_rows() > 0 {
        println!("rows dropped as missing: {}", sample.dropped_rows());
    }
    if result.vcov.is_none() {
        eprintln!("warning: standard errors unavailable (Hessian not positive definite)");
    }
    match result.status {
        FitStatus::Converged => EXIT_OK,
        FitStatus::BoundaryPSD => {
            eprintln!("warning: a covariance block is at the boundary of positive semi-definiteness");
            EXIT_OK
        }
        FitStatus::RetriesExhausted => {
            eprintln!("estimation failed: no optimizer run converged; outputs hold the best run");
            EXIT_ESTIMATION
        }
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let cfg = match RunConfig::resolve(&args.common) {
        Ok(c) => c,
        Err(e) => return input_error(&e),
    };
    let design = match SimulationDesign::load(&args.design) {
        Ok(d) => d,
        Err(e) => return input_error(&e),
    };
    let reps = args.reps.or(cfg.reps).unwrap_or(DEFAULT_REPS);
    let options = StudyOptions {
        fit: cfg.fit_options(),
        parallel: !args.serial,
        ..StudyOptions::new(reps, cfg.seed())
    };
    let result = match run_study(&design, &options) {
        Ok(r) => r,
        Err(e) => return input_error(&e),
    };
    let dir = cfg.out_dir();
    let written = create(&dir, METRICS_FILE)
        .and_then(|w| result.report.write_csv(w))
        .and_then(|_| create(&dir, REPLICATIONS_FILE))
        .and_then(|w| result.write_replications_csv(w));
    if let Err(e) = written {
        return input_error(&e);
    }
    let r = &result.report;
    println!(
        "convergence rate: {:.4} ({} of {} attempts)",
        r.convergence_rate, r.converged, r.attempted
    );
    if r.cap_reached {
        eprintln!(
            "attempt cap reached with {} of {} converged replications; outputs are partial",
            r.converged, reps
        );
        return EXIT_SIM_CAP;
    }
    EXIT_OK
}

fn format_cell(v: Option<&DerivedValue>) -> (String, String) {
    match v {
        None => ("---".into(), "---".into()),
        Some(d) => match d.se {
            None => (format!("{:.3} (unavailable)", d.estimate), "unavailable".into()),
            Some(se) => (format!("{:.3} ({:.3})", d.estimate, se), format_p(d.pvalue)),
        },
    }
}

fn format_p(p: Option<f64>) -> String {
    match p {
        None => "---".into(),
        Some(p) => {
            let star = if p < 0.05 { "*" } else { "" };
            if p < 0.0001 {
                format!("<0.0001{star}")
            } else {
                format!("{p:.4}{star}")
            }
        }
    }
}

/// Text rendering of a derived report, one block per panel.
pub fn render_report(report: &DerivedReport) -> String {
    let mut groups = report.outcomes.clone();
    if report.has_cross {
        groups.push("Covariance".into());
    }
    let mut out = String::new();
    let mut panel = "";
    for row in &report.rows {
        if row.panel != panel {
            panel = &row.panel;
            out.push('\n');
            let mut head = format!("{:<22}", panel);
            for g in &groups {
                head.push_str(&format!(" | {:>24} {:>12}", format!("{g} Estimate (SE)"), "P value"));
            }
            out.push_str(&head);
            out.push('\n');
            out.push_str(&"-".repeat(head.chars().count()));
            out.push('\n');
        }
        let mut line = format!("{:<22}", row.quantity);
        for c in &row.cells {
            let (est, p) = format_cell(c.as_ref());
            line.push_str(&format!(" | {est:>24} {p:>12}"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("\n* significant at the 0.05 level; --- not available in the model\n");
    out
}

pub fn cmd_report(args: &ReportArgs) -> i32 {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let open = |name: &str| {
        let path = dir.join(name);
        File::open(&path).map_err(|e| LbgmError::io(path, e))
    };
    let params = match open(PARAMS_FILE).and_then(read_parameter_table) {
        Ok(p) => p,
        Err(e) => return input_error(&e),
    };
    let report = match open(DERIVED_FILE).and_then(DerivedReport::read_csv) {
        Ok(r) => r,
        Err(e) => return input_error(&e),
    };
    let mut text = String::from("Parameters\n");
    for p in &params {
        let se = p.se.map(|s| format!("{s:.4}")).unwrap_or_else(|| "unavailable".into());
        text.push_str(&format!(
            "  {:<20} {:>12.4}  se {:>12}  p {:>10}\n",
            p.parameter,
            p.estimate,
            se,
            if p.se.is_some() { format_p(p.pvalue) } else { "unavailable".into() }
        ));
    }
    text.push_str(&render_report(&report));
    print!("{text}");
    EXIT_OK
}
