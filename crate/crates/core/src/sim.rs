//! Scenario generators with potential-outcome bookkeeping and the Monte
//! Carlo harness.
//!
//! Two families are built in. The `main` family has three confounders
//! driven by a shared uniform variable; both potential outcome times are
//! marginally exponential with a constant log hazard ratio of -1, so the
//! target is known exactly. The `supplementary` family has one uniform
//! confounder and a time-varying conditional effect, so the target comes
//! from the numerical solver in [`crate::oracle`]. Within each family,
//! scenarios 1-4 cross a correct/incorrect treatment model with a
//! correct/incorrect censoring model relative to the default working
//! models.

use crate::data::{Dataset, SurvivalRecord};
use crate::error::Error;
use crate::estimator::{
    bootstrap_se, fit_aipw, fit_full_data, fit_ipw, fit_naive_cox, NuisanceSpec,
};
use crate::nuisance::ClipConfig;
use crate::numerics::{expit, Z_975};
use crate::oracle::{beta_star, PotentialOutcomeLaw};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;

/// Which scenario family to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioFamily {
    Main,
    Supplementary,
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioFamily::Main => write!(f, "main"),
            ScenarioFamily::Supplementary => write!(f, "supplementary"),
        }
    }
}

impl std::str::FromStr for ScenarioFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(ScenarioFamily::Main),
            "supplementary" | "supp" => Ok(ScenarioFamily::Supplementary),
            other => Err(Error::config(format!(
                "unknown scenario family `{other}` (expected main or supplementary)"
            ))),
        }
    }
}

/// Estimators the Monte Carlo harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Aipw,
    Ipw,
    NaiveCox,
    FullData,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Aipw => write!(f, "aipw"),
            EstimatorKind::Ipw => write!(f, "ipw"),
            EstimatorKind::NaiveCox => write!(f, "naive-cox"),
            EstimatorKind::FullData => write!(f, "full-data"),
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aipw" => Ok(EstimatorKind::Aipw),
            "ipw" => Ok(EstimatorKind::Ipw),
            "naive" | "naive-cox" => Ok(EstimatorKind::NaiveCox),
            "full" | "full-data" => Ok(EstimatorKind::FullData),
            other => Err(Error::config(format!(
                "unknown estimator `{other}` (expected aipw, ipw, naive-cox, or full-data)"
            ))),
        }
    }
}

/// One generated dataset plus the potential outcome times behind it.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub data: Dataset,
    pub t0: Vec<f64>,
    pub t1: Vec<f64>,
}

/// Observed-data composition of a sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SampleRates {
    pub treated: f64,
    pub event: f64,
    /// Censored strictly inside the window.
    pub loss_to_follow_up: f64,
    /// Censored exactly at the window end.
    pub administrative: f64,
}

/// Empirical composition of a generated sample.
pub fn sample_rates(sample: &GeneratedSample) -> SampleRates {
    let n = sample.data.n() as f64;
    let tau = sample.data.tau();
    let mut treated = 0.0;
    let mut event = 0.0;
    let mut ltfu = 0.0;
    let mut admin = 0.0;
    for r in sample.data.records() {
        if r.a {
            treated += 1.0;
        }
        if r.delta {
            event += 1.0;
        } else if r.x < tau {
            ltfu += 1.0;
        } else {
            admin += 1.0;
        }
    }
    SampleRates {
        treated: treated / n,
        event: event / n,
        loss_to_follow_up: ltfu / n,
        administrative: admin / n,
    }
}

fn check_scenario(scenario: u8) -> Result<()> {
    if !(1..=4).contains(&scenario) {
        return Err(Error::config(format!(
            "scenario must be 1..4, got {scenario}"
        )));
    }
    Ok(())
}

/// Guarded draw for `-ln(U)` with `U ~ Uniform(0, 1)`.
fn neg_log_uniform(rng: &mut ChaCha12Rng) -> f64 {
    -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln()
}

/// Generate from the three-confounder family (window `tau = 1`).
///
/// Scenarios: 1 = correct treatment and censoring models, 2 = piecewise
/// treatment assignment (logistic model misspecified), 3 = non-hazard
/// censoring in the control arm (censoring model misspecified),
/// 4 = both misspecified.
pub fn generate_main(n: usize, scenario: u8, seed: u64) -> Result<GeneratedSample> {
    check_scenario(scenario)?;
    if n == 0 {
        return Err(Error::config("sample size must be positive"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut t0s = Vec::with_capacity(n);
    let mut t1s = Vec::with_capacity(n);
    for _ in 0..n {
        let u1: f64 = rng.gen_range(-1.0..1.0);
        let u2: f64 = rng.gen_range(-1.0..1.0);
        let u3: f64 = rng.gen_range(-1.0..1.0);
        let z1 = 0.5 * u1 + u3;
        let z2 = u1 + 1.5 * u1 * u1 - 0.5;
        let z3 = u1 + u2;
        let t0 = -(0.5 * u1 + 0.5).max(f64::MIN_POSITIVE).ln();
        let t1 = t0 * std::f64::consts::E;
        let neg_log_eps = neg_log_uniform(&mut rng);
        let (c0, c1) = if scenario <= 2 {
            (
                neg_log_eps * (0.5 - z2 + 0.5 * z3).exp(),
                neg_log_eps * (1.0 - z2 + 0.5 * z3).exp(),
            )
        } else {
            // The control arm is censored uniformly (no hazard model holds);
            // the treated arm keeps a covariate-dependent scale.
            let eps = (-neg_log_eps).exp();
            (1.05 * eps, neg_log_eps * (3.3 + 3.5 * z3).exp())
        };
        let logit = if scenario == 1 || scenario == 3 {
            -0.5 * z1 + 0.5 * z2 + 0.5 * z3
        } else if z2 < -0.5 || z2 >= 0.5 {
            -3.0
        } else {
            3.0
        };
        let a = rng.gen::<f64>() < expit(logit);
        let t = if a { t1 } else { t0 };
        let c = if a { c1 } else { c0 };
        let x = t.min(c);
        let delta = t <= c;
        records.push(SurvivalRecord::new(x, delta, a, vec![z1, z2, z3]));
        t0s.push(t0);
        t1s.push(t1);
    }
    Ok(GeneratedSample {
        data: Dataset::new(records, 1.0)?,
        t0: t0s,
        t1: t1s,
    })
}

/// Generate from the one-confounder family (window `tau = 1`).
///
/// Scenarios 1-2 have a conditional proportional-hazards outcome; 3-4 mix
/// a conditional-hazard branch with a uniform branch on the sign of `z`.
/// Odd scenarios keep both treatment and censoring working models correct;
/// even scenarios misspecify both.
pub fn generate_supp(n: usize, scenario: u8, seed: u64) -> Result<GeneratedSample> {
    check_scenario(scenario)?;
    if n == 0 {
        return Err(Error::config("sample size must be positive"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut t0s = Vec::with_capacity(n);
    let mut t1s = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let neg_log_t = neg_log_uniform(&mut rng);
        let neg_log_c = neg_log_uniform(&mut rng);
        let (t0, t1) = if scenario <= 2 {
            (
                neg_log_t / (2.0 - 2.0 * z).exp(),
                neg_log_t / (2.0 - 1.12 - 2.0 * z).exp(),
            )
        } else if z <= 0.0 {
            (
                neg_log_t / (5.0 + 2.5 * z).exp(),
                neg_log_t / (5.0 - 3.4 + 2.5 * z).exp(),
            )
        } else {
            let tu = 1.05 * (-neg_log_t).exp();
            (tu, tu)
        };
        let (c0, c1) = if scenario == 1 || scenario == 3 {
            (
                neg_log_c / (3.5 - 2.5 * z).exp(),
                neg_log_c / (3.5 - 2.0 - 2.5 * z).exp(),
            )
        } else if z <= 0.0 {
            (
                neg_log_c / (3.5 - 0.5 * z).exp(),
                neg_log_c / (3.5 - 3.0 - 0.5 * z).exp(),
            )
        } else {
            let cu = 1.05 * (-neg_log_c).exp();
            (cu, cu)
        };
        let logit = if scenario == 1 || scenario == 3 {
            2.0 * z
        } else if z < -1.0 / 3.0 || z >= 1.0 / 3.0 {
            2.0
        } else {
            -2.0
        };
        let a = rng.gen::<f64>() < expit(logit);
        let t = if a { t1 } else { t0 };
        let c = if a { c1 } else { c0 };
        records.push(SurvivalRecord::new(t.min(c), t <= c, a, vec![z]));
        t0s.push(t0);
        t1s.push(t1);
    }
    Ok(GeneratedSample {
        data: Dataset::new(records, 1.0)?,
        t0: t0s,
        t1: t1s,
    })
}

/// Generate from either family.
pub fn generate(
    family: ScenarioFamily,
    n: usize,
    scenario: u8,
    seed: u64,
) -> Result<GeneratedSample> {
    match family {
        ScenarioFamily::Main => generate_main(n, scenario, seed),
        ScenarioFamily::Supplementary => generate_supp(n, scenario, seed),
    }
}

/// Marginal potential-outcome law of a family (shared by all its
/// scenarios within the relevant pair).
pub fn family_law(family: ScenarioFamily, scenario: u8) -> Result<PotentialOutcomeLaw> {
    check_scenario(scenario)?;
    Ok(match family {
        ScenarioFamily::Main => PotentialOutcomeLaw::ProportionalHazardsExponential {
            rate0: 1.0,
            log_hr: -1.0,
        },
        ScenarioFamily::Supplementary if scenario <= 2 => {
            PotentialOutcomeLaw::ConditionalCoxUniformZ {
                c0: 2.0,
                c_a: -1.12,
                c_z: -2.0,
            }
        }
        ScenarioFamily::Supplementary => PotentialOutcomeLaw::MixtureCoxUniform {
            c0: 5.0,
            c_a: -3.4,
            c_z: 2.5,
            upper: 1.05,
        },
    })
}

/// True time-averaged log hazard ratio for a scenario over `tau = 1`.
///
/// The three-confounder family has a constant ratio of -1 by construction;
/// the one-confounder family's value is solved numerically.
pub fn scenario_truth(family: ScenarioFamily, scenario: u8) -> Result<f64> {
    match family {
        ScenarioFamily::Main => {
            check_scenario(scenario)?;
            Ok(-1.0)
        }
        ScenarioFamily::Supplementary => {
            Ok(beta_star(&family_law(family, scenario)?, 1.0)?.beta_star)
        }
    }
}

/// Ceiling on the failed-replicate fraction, in percent.
pub const MC_FAILURE_CEILING: u8 = 10;

/// Monte Carlo study configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioConfig {
    pub family: ScenarioFamily,
    pub scenario: u8,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Cross-fitting folds for the augmented estimator.
    pub folds: usize,
    pub clip: ClipConfig,
    /// Bootstrap replicates per dataset; `None` skips the bootstrap.
    pub bootstrap_b: Option<usize>,
}

impl ScenarioConfig {
    /// All four estimators, five folds, default clipping, no bootstrap.
    pub fn standard(
        family: ScenarioFamily,
        scenario: u8,
        n: usize,
        replications: usize,
        seed: u64,
    ) -> Self {
        ScenarioConfig {
            family,
            scenario,
            n,
            replications,
            seed,
            estimators: vec![
                EstimatorKind::Aipw,
                EstimatorKind::Ipw,
                EstimatorKind::NaiveCox,
                EstimatorKind::FullData,
            ],
            folds: 5,
            clip: ClipConfig::default(),
            bootstrap_b: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ReplicateRecord {
    beta: f64,
    model_se: Option<f64>,
    boot_se: Option<f64>,
}

/// Aggregate over replicates for one estimator.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean_beta: f64,
    pub bias: f64,
    pub sd: f64,
    pub mean_model_se: Option<f64>,
    /// Fraction of Wald intervals (model SE) covering the truth.
    pub coverage_model: Option<f64>,
    pub mean_boot_se: Option<f64>,
    pub coverage_boot: Option<f64>,
}

/// Monte Carlo study output.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub family: ScenarioFamily,
    pub scenario: u8,
    pub n: usize,
    pub replications: usize,
    pub used: usize,
    pub failed: usize,
    pub truth: f64,
    pub seed: u64,
    pub estimators: Vec<EstimatorSummary>,
    /// Simulation margin of error for a 95% nominal coverage estimate.
    pub coverage_margin: f64,
}

impl fmt::Display for MonteCarloReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "family={} scenario={} n={} reps={} (used {}, failed {}) truth={:+.4}",
            self.family, self.scenario, self.n, self.replications, self.used, self.failed,
            self.truth
        )?;
        writeln!(
            f,
            "{:<10} {:>8} {:>8} {:>8} {:>6} {:>8} {:>6}",
            "estimator", "bias", "sd", "mean-se", "cov", "boot-se", "b-cov"
        )?;
        let opt = |v: Option<f64>, w: usize, prec: usize| -> String {
            match v {
                Some(x) => format!("{x:>w$.prec$}"),
                None => format!("{:>w$}", "-"),
            }
        };
        for s in &self.estimators {
            writeln!(
                f,
                "{:<10} {:>+8.3} {:>8.3} {} {} {} {}",
                s.estimator.to_string(),
                s.bias,
                s.sd,
                opt(s.mean_model_se, 8, 3),
                opt(s.coverage_model, 6, 3),
                opt(s.mean_boot_se, 8, 3),
                opt(s.coverage_boot, 6, 3),
            )?;
        }
        write!(
            f,
            "coverage margin of error ±{:.4} at 95% nominal ({} used replicates)",
            self.coverage_margin, self.used
        )
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    seed ^ (stream.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Run a Monte Carlo study. Replicates run in parallel with
/// per-replicate deterministic random streams, so reports do not depend
/// on thread scheduling.
pub fn run_monte_carlo(config: &ScenarioConfig) -> Result<MonteCarloReport> {
    if config.replications == 0 {
        return Err(Error::config("replications must be positive"));
    }
    if config.estimators.is_empty() {
        return Err(Error::config("no estimators configured"));
    }
    config.clip.validate()?;
    let truth = scenario_truth(config.family, config.scenario)?;
    let spec = NuisanceSpec::working_models(config.clip);

    let results: Vec<Result<Vec<ReplicateRecord>>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = mix_seed(config.seed, rep as u64);
            let sample = generate(config.family, config.n, config.scenario, rep_seed)?;
            let mut out = Vec::with_capacity(config.estimators.len());
            for est in &config.estimators {
                let rec = match est {
                    EstimatorKind::Aipw => {
                        let fit =
                            fit_aipw(&sample.data, &spec, config.folds, mix_seed(rep_seed, 0xF0))?;
                        let boot_se = match config.bootstrap_b {
                            Some(b) => Some(
                                bootstrap_se(&sample.data, b, mix_seed(rep_seed, 0xB0), |d| {
                                    fit_aipw(d, &spec, config.folds, mix_seed(rep_seed, 0xF1))
                                        .map(|f| f.beta_hat)
                                })?
                                .se,
                            ),
                            None => None,
                        };
                        ReplicateRecord {
                            beta: fit.beta_hat,
                            model_se: Some(fit.se_model),
                            boot_se,
                        }
                    }
                    EstimatorKind::Ipw => {
                        let nuis = spec.fit(&sample.data)?;
                        let fit = fit_ipw(&sample.data, &nuis)?;
                        let boot_se = match config.bootstrap_b {
                            Some(b) => Some(
                                bootstrap_se(&sample.data, b, mix_seed(rep_seed, 0xB1), |d| {
                                    let nb = spec.fit(d)?;
                                    fit_ipw(d, &nb).map(|f| f.beta_hat)
                                })?
                                .se,
                            ),
                            None => None,
                        };
                        ReplicateRecord {
                            beta: fit.beta_hat,
                            model_se: None,
                            boot_se,
                        }
                    }
                    EstimatorKind::NaiveCox => {
                        let fit = fit_naive_cox(&sample.data)?;
                        ReplicateRecord {
                            beta: fit.beta_hat,
                            model_se: Some(fit.se_model),
                            boot_se: None,
                        }
                    }
                    EstimatorKind::FullData => {
                        let fit = fit_full_data(&sample.t0, &sample.t1, sample.data.tau())?;
                        ReplicateRecord {
                            beta: fit.beta_hat,
                            model_se: Some(fit.se_cluster),
                            boot_se: None,
                        }
                    }
                };
                out.push(rec);
            }
            Ok(out)
        })
        .collect();

    let mut good: Vec<Vec<ReplicateRecord>> = Vec::with_capacity(config.replications);
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(v) => good.push(v),
            Err(_) => failed += 1,
        }
    }
    if failed * 100 > config.replications * MC_FAILURE_CEILING as usize {
        return Err(Error::ReplicateCeiling {
            failed,
            total: config.replications,
            ceiling_percent: MC_FAILURE_CEILING,
        });
    }
    let used = good.len();
    if used < 2 {
        return Err(Error::solver("too few successful replicates to summarize"));
    }

    let mut summaries = Vec::with_capacity(config.estimators.len());
    for (j, est) in config.estimators.iter().enumerate() {
        let betas: Vec<f64> = good.iter().map(|g| g[j].beta).collect();
        let mean = betas.iter().sum::<f64>() / used as f64;
        let var = betas.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
            / (used - 1) as f64;
        let mean_opt = |get: &dyn Fn(&ReplicateRecord) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = good.iter().filter_map(|g| get(&g[j])).collect();
            (vals.len() == used).then(|| vals.iter().sum::<f64>() / used as f64)
        };
        let cover = |get: &dyn Fn(&ReplicateRecord) -> Option<f64>| -> Option<f64> {
            let mut hits = 0usize;
            let mut tot = 0usize;
            for g in &good {
                if let Some(se) = get(&g[j]) {
                    tot += 1;
                    if (g[j].beta - truth).abs() <= Z_975 * se {
                        hits += 1;
                    }
                }
            }
            (tot == used).then(|| hits as f64 / tot as f64)
        };
        summaries.push(EstimatorSummary {
            estimator: *est,
            mean_beta: mean,
            bias: mean - truth,
            sd: var.sqrt(),
            mean_model_se: mean_opt(&|r| r.model_se),
            coverage_model: cover(&|r| r.model_se),
            mean_boot_se: mean_opt(&|r| r.boot_se),
            coverage_boot: cover(&|r| r.boot_se),
        });
    }

    Ok(MonteCarloReport {
        family: config.family,
        scenario: config.scenario,
        n: config.n,
        replications: config.replications,
        used,
        failed,
        truth,
        seed: config.seed,
        estimators: summaries,
        coverage_margin: Z_975 * (0.95 * 0.05 / used as f64).sqrt(),
    })
}
