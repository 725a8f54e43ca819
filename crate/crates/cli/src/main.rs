//! Command-line front end: fit estimators on CSV data, run Monte Carlo
//! studies, query the estimand oracle, and export scenario datasets.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 data error,
//! 4 model-fitting or solver failure, 5 resampling-failure ceiling.

use clap::{Args, Parser, Subcommand};
use msm_aipw::estimator::{
    bootstrap_se, fit_aipw, fit_ipw, fit_naive_cox, risk_contrasts, NuisanceSpec, PropensitySpec,
    RiskContrast, SurvivalSpec,
};
use msm_aipw::nuisance::ClipConfig;
use msm_aipw::numerics::Z_975;
use msm_aipw::oracle::{beta_of_t, beta_star, lambda_star, PotentialOutcomeLaw};
use msm_aipw::sim::{run_monte_carlo, EstimatorKind, ScenarioConfig, ScenarioFamily};
use msm_aipw::{load_dataset, Dataset, Error};
use serde::Serialize;
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "msm-aipw",
    version,
    about = "Causal log hazard ratio estimation for censored survival data",
    propagate_version = true
)]
struct Cli {
    /// Worker threads (default: all cores; env MSM_AIPW_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an estimator to a CSV dataset (columns time,event,treatment,z1..zp).
    Fit(FitArgs),
    /// Run a Monte Carlo study over a built-in scenario.
    Simulate(SimulateArgs),
    /// Solve for the population estimand of an analytic potential-outcome law.
    Oracle(OracleArgs),
    /// Generate one scenario dataset and write it as CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV file.
    data: PathBuf,
    /// Estimator: aipw, ipw, naive-cox, or full-data.
    #[arg(long, default_value = "aipw")]
    estimator: EstimatorKind,
    /// Cross-fitting folds for the augmented estimator (1 = none).
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Observation window end; later times are administratively censored.
    #[arg(long)]
    tau: f64,
    /// Propensity clip bounds LO,HI.
    #[arg(long, value_name = "LO,HI", default_value = "0.1,0.9")]
    clip_ps: String,
    /// Survival curve floor.
    #[arg(long, value_name = "FLOOR", default_value_t = 0.05)]
    clip_surv: f64,
    /// Bootstrap replicates for a resampling SE (omit to skip).
    #[arg(long, value_name = "B")]
    bootstrap: Option<usize>,
    /// Seed for fold assignment and the bootstrap.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Times for marginal risk contrasts (aipw only), comma separated.
    #[arg(long, value_name = "T1,T2,...")]
    risk_times: Option<String>,
    /// Replace fitted nuisances with the identity: constant propensity 1/2
    /// and unit survival curves (diagnostic; makes ipw match naive-cox).
    #[arg(long)]
    identity_weights: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario family: main or supplementary.
    #[arg(long)]
    family: ScenarioFamily,
    /// Scenario number 1-4.
    #[arg(long)]
    scenario: u8,
    /// Subjects per replicate.
    #[arg(long)]
    n: usize,
    /// Monte Carlo replicates.
    #[arg(long)]
    reps: usize,
    /// Master seed; replicate streams derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cross-fitting folds for the augmented estimator.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Propensity clip bounds LO,HI.
    #[arg(long, value_name = "LO,HI", default_value = "0.1,0.9")]
    clip_ps: String,
    /// Survival curve floor.
    #[arg(long, value_name = "FLOOR", default_value_t = 0.05)]
    clip_surv: f64,
    /// Bootstrap replicates per dataset (omit to skip the bootstrap).
    #[arg(long, value_name = "B")]
    bootstrap: Option<usize>,
    /// Write the JSON report here; the text table then goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Law descriptor: inline JSON (starts with '{') or a path to a JSON
    /// file, e.g. {"family":"proportional-hazards-exponential","rate0":1.0,"log_hr":-1.0}.
    #[arg(long)]
    law: String,
    /// Observation window end.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Evaluation times for the hazard-ratio and baseline curves,
    /// comma separated (default: 100 evenly spaced points).
    #[arg(long, value_name = "T1,T2,...")]
    times: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario family: main or supplementary.
    #[arg(long)]
    family: ScenarioFamily,
    /// Scenario number 1-4.
    #[arg(long)]
    scenario: u8,
    /// Sample size.
    #[arg(long)]
    n: usize,
    /// Seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    init_threads(cli.threads);
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Nuisance(_) | Error::Solver(_) => 4,
        Error::ReplicateCeiling { .. } => 5,
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("MSM_AIPW_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        // A second pool build in-process is harmless; first builder wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn parse_clip(ps: &str, surv_floor: f64) -> Result<ClipConfig, Error> {
    let parts: Vec<&str> = ps.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::config(format!(
            "--clip-ps expects LO,HI, got `{ps}`"
        )));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid clip bound `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid clip bound `{}`", parts[1])))?;
    let clip = ClipConfig {
        ps_lo: lo,
        ps_hi: hi,
        surv_floor,
    };
    clip.validate()?;
    Ok(clip)
}

fn parse_times(list: &str) -> Result<Vec<f64>, Error> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("invalid time `{s}`")))
        })
        .collect()
}

/// Write a line to stdout, treating a closed pipe as a clean stop rather
/// than an error (so `msm-aipw ... | head` exits quietly).
fn print_stdout(text: &str) -> Result<(), Error> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let done = writeln!(lock, "{text}").and_then(|_| lock.flush());
    match done {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => other.map_err(Error::from),
    }
}

fn write_json<T: Serialize>(value: &T, output: Option<&PathBuf>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("cannot serialize report: {e}")))?;
    match output {
        Some(path) => {
            std::fs::write(path, text + "\n")?;
            Ok(())
        }
        None => print_stdout(&text),
    }
}

#[derive(Serialize)]
struct FitReport {
    estimator: String,
    beta_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    u_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    se_model: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    se_boot: Option<f64>,
    /// Wald interval from the model SE when available, else bootstrap.
    ci: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    risk_contrasts: Option<Vec<RiskContrast>>,
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    let clip = parse_clip(&args.clip_ps, args.clip_surv)?;
    if args.folds == 0 {
        return Err(Error::config("--folds must be at least 1"));
    }
    let risk_times = args.risk_times.as_deref().map(parse_times).transpose()?;
    if risk_times.is_some() && args.estimator != EstimatorKind::Aipw {
        return Err(Error::config(
            "risk contrasts require the aipw estimator (they use its baseline)",
        ));
    }
    if args.estimator == EstimatorKind::FullData {
        return Err(Error::config(
            "the full-data estimator needs both potential outcomes and exists only inside simulate",
        ));
    }
    let data = load_dataset(&args.data, args.tau)?;

    let spec = if args.identity_weights {
        NuisanceSpec {
            propensity: PropensitySpec::Constant(0.5),
            survival: SurvivalSpec::One,
            censoring: SurvivalSpec::One,
            clip: ClipConfig::disabled(),
        }
    } else {
        NuisanceSpec::working_models(clip)
    };

    let mut report = match args.estimator {
        EstimatorKind::Aipw => {
            let fit = fit_aipw(&data, &spec, args.folds, args.seed)?;
            let contrasts = risk_times
                .as_deref()
                .map(|ts| risk_contrasts(&fit.lambda_hat, fit.beta_hat, ts, data.tau()))
                .transpose()?;
            FitReport {
                estimator: args.estimator.to_string(),
                beta_hat: fit.beta_hat,
                u_residual: Some(fit.u_residual),
                se_model: Some(fit.se_model),
                se_boot: None,
                ci: Some(fit.ci),
                risk_contrasts: contrasts,
            }
        }
        EstimatorKind::Ipw => {
            let nuis = spec.fit(&data)?;
            let fit = fit_ipw(&data, &nuis)?;
            FitReport {
                estimator: args.estimator.to_string(),
                beta_hat: fit.beta_hat,
                u_residual: None,
                se_model: None,
                se_boot: None,
                ci: None,
                risk_contrasts: None,
            }
        }
        EstimatorKind::NaiveCox => {
            let fit = fit_naive_cox(&data)?;
            FitReport {
                estimator: args.estimator.to_string(),
                beta_hat: fit.beta_hat,
                u_residual: None,
                se_model: Some(fit.se_model),
                se_boot: None,
                ci: Some(fit.ci),
                risk_contrasts: None,
            }
        }
        EstimatorKind::FullData => unreachable!("rejected above"),
    };

    if let Some(b) = args.bootstrap {
        let estimator = args.estimator;
        let folds = args.folds;
        let spec_ref = &spec;
        let boot = bootstrap_se(&data, b, args.seed, move |d: &Dataset| match estimator {
            EstimatorKind::Aipw => fit_aipw(d, spec_ref, folds, args.seed).map(|f| f.beta_hat),
            EstimatorKind::Ipw => {
                let nb = spec_ref.fit(d)?;
                fit_ipw(d, &nb).map(|f| f.beta_hat)
            }
            EstimatorKind::NaiveCox => fit_naive_cox(d).map(|f| f.beta_hat),
            EstimatorKind::FullData => unreachable!("rejected above"),
        })?;
        report.se_boot = Some(boot.se);
        if report.ci.is_none() {
            report.ci = Some([
                report.beta_hat - Z_975 * boot.se,
                report.beta_hat + Z_975 * boot.se,
            ]);
        }
    }

    write_json(&report, args.output.as_ref())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let clip = parse_clip(&args.clip_ps, args.clip_surv)?;
    if args.folds == 0 {
        return Err(Error::config("--folds must be at least 1"));
    }
    let mut cfg = ScenarioConfig::standard(args.family, args.scenario, args.n, args.reps, args.seed);
    cfg.folds = args.folds;
    cfg.clip = clip;
    cfg.bootstrap_b = args.bootstrap;
    let report = run_monte_carlo(&cfg)?;
    match &args.output {
        Some(path) => {
            write_json(&report, Some(path))?;
            print_stdout(&report.to_string())?;
        }
        None => write_json(&report, None)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    beta_star: f64,
    h_residual: f64,
    beta_of_t: Vec<[f64; 2]>,
    lambda_star: Vec<[f64; 2]>,
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Error> {
    let text = if args.law.trim_start().starts_with('{') {
        args.law.clone()
    } else {
        std::fs::read_to_string(&args.law)
            .map_err(|e| Error::config(format!("cannot read law descriptor {}: {e}", args.law)))?
    };
    let law: PotentialOutcomeLaw = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("malformed law descriptor: {e}")))?;
    law.validate()?;

    let times = match args.times.as_deref() {
        Some(list) => parse_times(list)?,
        // Default grid starts off zero: the pointwise ratio can be
        // undefined at t = 0 for laws with vanishing density there.
        None => (1..=100).map(|i| args.tau * i as f64 / 100.0).collect(),
    };
    let solution = beta_star(&law, args.tau)?;
    let curve: Vec<[f64; 2]> = times.iter().map(|&t| [t, beta_of_t(&law, t)]).collect();
    let baseline = lambda_star(&law, args.tau, solution.beta_star, &times)?
        .into_iter()
        .map(|(t, v)| [t, v])
        .collect();
    let report = OracleReport {
        beta_star: solution.beta_star,
        h_residual: solution.h_residual,
        beta_of_t: curve,
        lambda_star: baseline,
    };
    write_json(&report, args.output.as_ref())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let sample = msm_aipw::sim::generate(args.family, args.n, args.scenario, args.seed)?;
    match &args.output {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            sample.data.write_csv(file)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let done = sample
                .data
                .write_csv(&mut lock)
                .and_then(|_| lock.flush().map_err(Error::from));
            if let Err(Error::Io(e)) = &done {
                if e.kind() == std::io::ErrorKind::BrokenPipe {
                    std::process::exit(0);
                }
            }
            done?;
        }
    }
    Ok(())
}
