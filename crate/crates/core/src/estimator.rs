//! Estimators of the time-averaged treatment log hazard ratio.
//!
//! The headline estimator solves a cross-fitted augmented estimating
//! equation built from the score ingredients in [`crate::scores`]; it is
//! consistent when either the outcome working model or the pair of
//! treatment and censoring working models is correctly specified.
//! Companions: an inverse-weighted partial-likelihood fit, the unadjusted
//! partial-likelihood fit, and an infeasible fit on both potential outcome
//! times used as a benchmark in simulations.

use crate::data::{assign_folds, Dataset};
use crate::error::Error;
use crate::numerics::{solve_expanding, StepFunction, Z_975};
use crate::nuisance::{
    fit_cox_working, fit_kaplan_meier, fit_logistic, AnalyticSurvival, ClipConfig,
    NuisanceTriple, PropensityKind, SurvivalKind, Target,
};
use crate::scores::{
    aggregate_scores, build_time_grid_multi, compute_subject_scores, FoldAggregates, TimeGrid,
    DENOMINATOR_GUARD,
};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Recipe for fitting one nuisance component of the treatment model.
#[derive(Debug, Clone)]
pub enum PropensitySpec {
    /// Logistic regression of treatment on covariates.
    Logistic,
    /// Fixed treatment probability (no fitting).
    Constant(f64),
}

/// Recipe for fitting one survival-type nuisance component.
#[derive(Debug, Clone)]
pub enum SurvivalSpec {
    /// Proportional-hazards working model on `(a, z)`.
    Cox,
    /// Marginal Kaplan-Meier curve, ignoring treatment and covariates.
    KaplanMeier,
    /// Identically one inside the window.
    One,
    /// A fixed analytic law (no fitting).
    Analytic(AnalyticSurvival),
}

/// How to produce the nuisance triple from a training sample.
#[derive(Debug, Clone)]
pub struct NuisanceSpec {
    pub propensity: PropensitySpec,
    pub survival: SurvivalSpec,
    pub censoring: SurvivalSpec,
    pub clip: ClipConfig,
}

impl NuisanceSpec {
    /// The default data-driven recipe: logistic treatment model and Cox
    /// working models for both survival components.
    pub fn working_models(clip: ClipConfig) -> Self {
        NuisanceSpec {
            propensity: PropensitySpec::Logistic,
            survival: SurvivalSpec::Cox,
            censoring: SurvivalSpec::Cox,
            clip,
        }
    }

    fn fit_survival(spec: &SurvivalSpec, train: &Dataset, target: Target) -> Result<SurvivalKind> {
        Ok(match spec {
            SurvivalSpec::Cox => SurvivalKind::Cox(fit_cox_working(train, target)?),
            SurvivalSpec::KaplanMeier => {
                SurvivalKind::KaplanMeier(fit_kaplan_meier(train, target)?)
            }
            SurvivalSpec::One => SurvivalKind::One,
            SurvivalSpec::Analytic(a) => SurvivalKind::Analytic(a.clone()),
        })
    }

    /// Fit all three components on a training sample.
    pub fn fit(&self, train: &Dataset) -> Result<NuisanceTriple> {
        self.clip.validate()?;
        let propensity = match &self.propensity {
            PropensitySpec::Logistic => PropensityKind::Logistic(fit_logistic(train)?),
            PropensitySpec::Constant(c) => {
                if !(0.0 < *c && *c < 1.0) {
                    return Err(Error::config(format!(
                        "constant propensity must lie in (0, 1), got {c}"
                    )));
                }
                PropensityKind::Constant(*c)
            }
        };
        Ok(NuisanceTriple {
            propensity,
            survival: Self::fit_survival(&self.survival, train, Target::Event)?,
            censoring: Self::fit_survival(&self.censoring, train, Target::Censoring)?,
            clip: self.clip,
        })
    }
}

fn guard_denominator(s0: f64) -> f64 {
    if s0.abs() < DENOMINATOR_GUARD {
        DENOMINATOR_GUARD
    } else {
        s0
    }
}

/// Cross-fitted estimating function: the mean over folds of
/// `d1 - sum_t abar(t; beta) n0(t)` with fold-level means.
pub fn u_function(folds: &[FoldAggregates], beta: f64) -> f64 {
    let mut total = 0.0;
    for fold in folds {
        let at = aggregate_scores(fold, beta);
        let mut um = fold.d1_mean();
        for g in 0..at.abar.len() {
            um -= at.abar[g] * fold.n0_mean(g);
        }
        total += um;
    }
    total / folds.len() as f64
}

/// Derivative of [`u_function`] in `beta`:
/// `-1/k sum_m sum_t v_m(t; beta) n0_m(t)`.
pub fn u_derivative(folds: &[FoldAggregates], beta: f64) -> f64 {
    let mut total = 0.0;
    for fold in folds {
        let at = aggregate_scores(fold, beta);
        for g in 0..at.v.len() {
            total -= at.v[g] * fold.n0_mean(g);
        }
    }
    total / folds.len() as f64
}

/// Solve `u_function = 0` by bracketed root finding, expanding the initial
/// bracket `[-20, 20]` geometrically up to `[-50, 50]`.
pub fn solve_beta(folds: &[FoldAggregates]) -> Result<f64> {
    let f = |b: f64| u_function(folds, b);
    solve_expanding(&f, -20.0, 20.0, -50.0, 50.0, 1e-12, 200)
}

/// Fold-level cumulative baseline hazard at `beta`:
/// running sum of `n0(t) / s0(t; beta)` over the grid.
pub fn lambda_tilde(fold: &FoldAggregates, grid: &TimeGrid, beta: f64) -> StepFunction {
    let at = aggregate_scores(fold, beta);
    let mut cum = 0.0;
    let values: Vec<f64> = (0..grid.len())
        .map(|g| {
            cum += fold.n0_mean(g) / guard_denominator(at.s0[g]);
            cum
        })
        .collect();
    StepFunction::new(grid.times().to_vec(), values, 0.0)
}

/// Run diagnostics recorded by [`fit_aipw`].
#[derive(Debug, Clone, Serialize)]
pub struct AipwDiagnostics {
    pub grid_len: usize,
    pub fold_sizes: Vec<usize>,
    /// Grid times where a risk-set denominator needed the numeric guard,
    /// evaluated at the solution.
    pub guarded_denominators: usize,
}

/// Augmented cross-fitted estimate with a plug-in standard error.
#[derive(Debug, Clone, Serialize)]
pub struct AipwFit {
    pub beta_hat: f64,
    /// Estimating-function value at the solution (a root-quality check).
    pub u_residual: f64,
    pub se_model: f64,
    /// Wald 95% interval from the model standard error.
    pub ci: [f64; 2],
    /// Averaged fold-level cumulative baseline hazard at the solution.
    pub lambda_hat: StepFunction,
    pub diagnostics: AipwDiagnostics,
}

/// Fit the augmented cross-fitted estimator.
///
/// `k = 1` trains the nuisances on the full sample and evaluates on the
/// same sample (no cross-fitting). For `k > 1` the nuisances for each fold
/// are trained on its complement; every complement must contain both
/// treatment arms.
pub fn fit_aipw(data: &Dataset, spec: &NuisanceSpec, k: usize, seed: u64) -> Result<AipwFit> {
    let folds = assign_folds(data.n(), k, seed)?;
    let mut triples = Vec::with_capacity(k);
    for m in 0..k {
        let train = data.subset(&folds.complement_indices(m))?;
        if !train.has_both_arms() {
            return Err(Error::data(format!(
                "training complement of fold {m} lacks both treatment arms"
            )));
        }
        triples.push(spec.fit(&train)?);
    }
    let grid = build_time_grid_multi(data, triples.iter())?;
    let glen = grid.len();

    let mut aggs = Vec::with_capacity(k);
    for (m, triple) in triples.iter().enumerate() {
        let gn = triple.on_grid(grid.times());
        let mut agg = FoldAggregates::new(glen);
        for i in folds.fold_indices(m) {
            let sc = compute_subject_scores(&data.records()[i], &gn, data.tau());
            agg.add(&sc);
        }
        aggs.push(agg);
    }

    let beta_hat = solve_beta(&aggs)?;
    let eb = beta_hat.exp();

    // Second pass: baseline hazard, variance denominator, and per-subject
    // influence terms at the solution.
    let mut lambda_vals = vec![0.0; glen];
    let mut den_total = 0.0;
    let mut psi_sq = 0.0;
    let mut guarded = 0;
    for (m, triple) in triples.iter().enumerate() {
        let at = aggregate_scores(&aggs[m], beta_hat);
        guarded += at.guarded;
        let mut dlam = vec![0.0; glen];
        let mut cum = 0.0;
        for g in 0..glen {
            dlam[g] = aggs[m].n0_mean(g) / guard_denominator(at.s0[g]);
            cum += dlam[g];
            lambda_vals[g] += cum / k as f64;
            den_total += at.v[g] * aggs[m].n0[g];
        }
        let gn = triple.on_grid(grid.times());
        for i in folds.fold_indices(m) {
            let sc = compute_subject_scores(&data.records()[i], &gn, data.tau());
            let eba = if sc.a { eb } else { 1.0 };
            let mut d2 = 0.0;
            let mut abar_d1 = 0.0;
            for g in 0..glen {
                let gamma0 = eba * sc.u[g] + sc.k0[g] + eb * sc.k1[g];
                let gamma1 = if sc.a {
                    eb * (sc.u[g] + sc.k1[g])
                } else {
                    eb * sc.k1[g]
                };
                let d1 = sc.dn0[g] - gamma0 * dlam[g];
                d2 += sc.dn1[g] - gamma1 * dlam[g];
                abar_d1 += at.abar[g] * d1;
            }
            let psi = d2 - abar_d1;
            psi_sq += psi * psi;
        }
    }
    if den_total == 0.0 {
        return Err(Error::solver("degenerate variance: zero curvature"));
    }
    let se_model = psi_sq.sqrt() / den_total.abs();

    Ok(AipwFit {
        beta_hat,
        u_residual: u_function(&aggs, beta_hat),
        se_model,
        ci: [beta_hat - Z_975 * se_model, beta_hat + Z_975 * se_model],
        lambda_hat: StepFunction::new(grid.times().to_vec(), lambda_vals, 0.0),
        diagnostics: AipwDiagnostics {
            grid_len: glen,
            fold_sizes: (0..k).map(|m| folds.fold_indices(m).len()).collect(),
            guarded_denominators: guarded,
        },
    })
}

// ----- scalar partial-likelihood machinery (naive, weighted, stacked) -----

struct ScalarCoxSolution {
    beta: f64,
    /// Observed information at the solution (unit scale).
    info: f64,
    event_times: Vec<f64>,
    abar: Vec<f64>,
    /// Breslow baseline increments at the event times.
    dlam0: Vec<f64>,
}

enum CoxWeights {
    Unit,
    /// `w_i(t_e) = inv_pi[i] / max(floor, exp(-lam0[e] * risk[i]))`.
    Ipcw {
        inv_pi: Vec<f64>,
        lam0: Vec<f64>,
        risk: Vec<f64>,
        floor: f64,
    },
}

impl CoxWeights {
    #[inline]
    fn at(&self, i: usize, e: usize) -> f64 {
        match self {
            CoxWeights::Unit => 1.0,
            CoxWeights::Ipcw {
                inv_pi,
                lam0,
                risk,
                floor,
            } => {
                let sc = (-lam0[e] * risk[i]).exp().clamp(*floor, 1.0);
                inv_pi[i] / sc
            }
        }
    }
}

/// Newton solve of the weighted partial-likelihood score for a single
/// binary covariate, with Breslow handling of ties.
fn solve_scalar_cox(
    x: &[f64],
    delta: &[bool],
    a: &[bool],
    weights: &CoxWeights,
) -> Result<ScalarCoxSolution> {
    let n = x.len();
    let mut event_times: Vec<f64> = x
        .iter()
        .zip(delta)
        .filter(|(_, &d)| d)
        .map(|(&t, _)| t)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.is_empty() {
        return Err(Error::data("no events inside the observation window"));
    }

    let ne = event_times.len();
    let mut beta = 0.0f64;

    // Per-event-time sums at a given beta. Weights vary over time, so the
    // risk sums are recomputed per event time.
    let eval = |beta: f64| -> (f64, f64, f64, Vec<f64>, Vec<f64>) {
        let eb = beta.exp();
        let mut ll = 0.0;
        let mut score = 0.0;
        let mut info = 0.0;
        let mut abar = vec![0.0; ne];
        let mut s0w = vec![0.0; ne];
        for e in 0..ne {
            let t = event_times[e];
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            let mut dw = 0.0;
            let mut dwa = 0.0;
            for i in 0..n {
                if x[i] >= t {
                    let w = weights.at(i, e);
                    let r = if a[i] { w * eb } else { w };
                    s0 += r;
                    if a[i] {
                        s1 += r;
                    }
                }
                if delta[i] && x[i] == t {
                    let w = weights.at(i, e);
                    dw += w;
                    if a[i] {
                        dwa += w;
                    }
                }
            }
            let ab = s1 / s0;
            abar[e] = ab;
            s0w[e] = s0;
            ll += dwa * beta - dw * s0.ln();
            score += dwa - dw * ab;
            info += dw * (ab - ab * ab);
        }
        (ll, score, info, abar, s0w)
    };

    let (mut ll, mut score, mut info, mut abar, mut s0w) = eval(beta);
    let mut converged = false;
    for _ in 0..100 {
        if score.abs() <= 1e-8 {
            converged = true;
            break;
        }
        if info <= 0.0 {
            return Err(Error::solver("flat partial likelihood for treatment"));
        }
        let step = score / info;
        let mut scale = 1.0;
        loop {
            let cand = beta + scale * step;
            let (cll, cs, ci, cab, cs0) = eval(cand);
            // Relative tolerance so float noise at large n cannot stall.
            if cll >= ll - 1e-10 * (1.0 + ll.abs()) || scale < 1e-8 {
                beta = cand;
                ll = cll;
                score = cs;
                info = ci;
                abar = cab;
                s0w = cs0;
                break;
            }
            scale *= 0.5;
        }
        if beta.abs() > 30.0 {
            return Err(Error::solver(
                "partial-likelihood estimate diverges: arms separate in time",
            ));
        }
    }
    if !converged && score.abs() > 1e-8 {
        return Err(Error::solver("partial-likelihood fit did not converge"));
    }

    // Breslow increments d_e / s0w(t_e) with the same weights.
    let mut dlam0 = vec![0.0; ne];
    for e in 0..ne {
        let mut dw = 0.0;
        for i in 0..n {
            if delta[i] && x[i] == event_times[e] {
                dw += weights.at(i, e);
            }
        }
        dlam0[e] = dw / s0w[e];
    }

    Ok(ScalarCoxSolution {
        beta,
        info,
        event_times,
        abar,
        dlam0,
    })
}

/// Unadjusted proportional-hazards fit of the observed data on treatment
/// alone, with the inverse-information standard error.
#[derive(Debug, Clone, Serialize)]
pub struct NaiveCoxFit {
    pub beta_hat: f64,
    pub se_model: f64,
    pub ci: [f64; 2],
}

pub fn fit_naive_cox(data: &Dataset) -> Result<NaiveCoxFit> {
    if !data.has_both_arms() {
        return Err(Error::data("single-arm dataset"));
    }
    let x: Vec<f64> = data.records().iter().map(|r| r.x).collect();
    let delta: Vec<bool> = data.records().iter().map(|r| r.delta).collect();
    let a: Vec<bool> = data.records().iter().map(|r| r.a).collect();
    let sol = solve_scalar_cox(&x, &delta, &a, &CoxWeights::Unit)?;
    let se = 1.0 / sol.info.sqrt();
    Ok(NaiveCoxFit {
        beta_hat: sol.beta,
        se_model: se,
        ci: [sol.beta - Z_975 * se, sol.beta + Z_975 * se],
    })
}

/// Inverse-weighted partial-likelihood fit: each subject is weighted by
/// `1 / {pi(A | z) S_c(t; A, z)}` from the supplied nuisance triple.
#[derive(Debug, Clone, Serialize)]
pub struct IpwFit {
    pub beta_hat: f64,
    /// Smallest and largest subject weight encountered at event times.
    pub weight_range: [f64; 2],
}

pub fn fit_ipw(data: &Dataset, nuis: &NuisanceTriple) -> Result<IpwFit> {
    if !data.has_both_arms() {
        return Err(Error::data("single-arm dataset"));
    }
    let n = data.n();
    let x: Vec<f64> = data.records().iter().map(|r| r.x).collect();
    let delta: Vec<bool> = data.records().iter().map(|r| r.delta).collect();
    let a: Vec<bool> = data.records().iter().map(|r| r.a).collect();

    let mut event_times: Vec<f64> = x
        .iter()
        .zip(&delta)
        .filter(|(_, &d)| d)
        .map(|(&t, _)| t)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    if event_times.is_empty() {
        return Err(Error::data("no events inside the observation window"));
    }

    let inv_pi: Vec<f64> = data
        .records()
        .iter()
        .map(|r| 1.0 / nuis.propensity_observed(r.a, &r.z))
        .collect();
    // Express the censoring curve as exp(-lam0 * risk) per subject, which
    // covers the proportional-hazards, marginal, and identity cases.
    let (lam0, risk) = match &nuis.censoring {
        SurvivalKind::Cox(m) => {
            let lam0 = m.baseline_at(&event_times);
            let risk: Vec<f64> = data
                .records()
                .iter()
                .map(|r| m.linear_predictor(r.a, &r.z).exp())
                .collect();
            (lam0, risk)
        }
        SurvivalKind::KaplanMeier(m) => {
            let lam0: Vec<f64> = event_times
                .iter()
                .map(|&t| -m.curve.value(t).max(1e-300).ln())
                .collect();
            (lam0, vec![1.0; n])
        }
        SurvivalKind::One => (vec![0.0; event_times.len()], vec![1.0; n]),
        SurvivalKind::Analytic(_) => {
            return Err(Error::config(
                "inverse weighting requires a fitted censoring curve",
            ))
        }
    };
    let weights = CoxWeights::Ipcw {
        inv_pi,
        lam0,
        risk,
        floor: nuis.clip.surv_floor,
    };
    let sol = solve_scalar_cox(&x, &delta, &a, &weights)?;

    let mut wmin = f64::INFINITY;
    let mut wmax = 0.0f64;
    for e in 0..sol.event_times.len() {
        for i in 0..n {
            if x[i] >= sol.event_times[e] {
                let w = weights.at(i, e);
                wmin = wmin.min(w);
                wmax = wmax.max(w);
            }
        }
    }
    Ok(IpwFit {
        beta_hat: sol.beta,
        weight_range: [wmin, wmax],
    })
}

/// Benchmark fit on both potential outcome times per subject (infeasible
/// with observed data; used by simulations).
#[derive(Debug, Clone, Serialize)]
pub struct FullDataFit {
    pub beta_hat: f64,
    /// Sandwich standard error clustered on subject (each subject
    /// contributes a row per arm).
    pub se_cluster: f64,
    pub ci: [f64; 2],
}

pub fn fit_full_data(t0: &[f64], t1: &[f64], tau: f64) -> Result<FullDataFit> {
    if t0.len() != t1.len() {
        return Err(Error::data("potential outcome arrays differ in length"));
    }
    let n = t0.len();
    if n == 0 {
        return Err(Error::data("dataset has no records"));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::data("tau must be positive and finite"));
    }
    let mut x = Vec::with_capacity(2 * n);
    let mut delta = Vec::with_capacity(2 * n);
    let mut a = Vec::with_capacity(2 * n);
    for i in 0..n {
        for (t, arm) in [(t0[i], false), (t1[i], true)] {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::data(format!(
                    "negative potential outcome time for subject {i}"
                )));
            }
            x.push(t.min(tau));
            delta.push(t <= tau);
            a.push(arm);
        }
    }
    let sol = solve_scalar_cox(&x, &delta, &a, &CoxWeights::Unit)?;

    // Score residual per row, then cluster rows by subject.
    let ne = sol.event_times.len();
    let mut cum_dlam = vec![0.0; ne];
    let mut cum_abar_dlam = vec![0.0; ne];
    let mut run_d = 0.0;
    let mut run_ad = 0.0;
    for e in 0..ne {
        run_d += sol.dlam0[e];
        run_ad += sol.abar[e] * sol.dlam0[e];
        cum_dlam[e] = run_d;
        cum_abar_dlam[e] = run_ad;
    }
    let eb = sol.beta.exp();
    let row_residual = |j: usize| -> f64 {
        let aj = a[j] as u8 as f64;
        let e_obs = sol.event_times.partition_point(|&t| t <= x[j]);
        let (l, m) = if e_obs == 0 {
            (0.0, 0.0)
        } else {
            (cum_dlam[e_obs - 1], cum_abar_dlam[e_obs - 1])
        };
        let jump = if delta[j] {
            let e = sol.event_times.partition_point(|&t| t < x[j]);
            aj - sol.abar[e]
        } else {
            0.0
        };
        let rj = if a[j] { eb } else { 1.0 };
        jump - rj * (aj * l - m)
    };
    let mut meat = 0.0;
    for i in 0..n {
        let psi = row_residual(2 * i) + row_residual(2 * i + 1);
        meat += psi * psi;
    }
    let se = meat.sqrt() / sol.info;
    Ok(FullDataFit {
        beta_hat: sol.beta,
        se_cluster: se,
        ci: [sol.beta - Z_975 * se, sol.beta + Z_975 * se],
    })
}

/// Nonparametric bootstrap summary for a scalar estimator.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub se: f64,
    /// Successful replicates entering the standard deviation.
    pub used: usize,
    /// Dropped replicates (single-arm resamples or failed fits).
    pub failed: usize,
}

/// Ceiling on the dropped-replicate fraction, in percent.
pub const BOOTSTRAP_FAILURE_CEILING: u8 = 20;

/// Resample subjects with replacement `b` times, refit, and report the
/// standard deviation of the refitted estimates.
///
/// Single-arm resamples and failed refits are dropped and counted; if more
/// than [`BOOTSTRAP_FAILURE_CEILING`] percent are dropped, the whole
/// bootstrap errors out.
pub fn bootstrap_se<F>(data: &Dataset, b: usize, seed: u64, fit: F) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::config("bootstrap needs at least 2 replicates"));
    }
    let n = data.n();
    let results: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha12Rng::seed_from_u64(
                seed ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let resample = match data.subset(&indices) {
                Ok(d) => d,
                Err(_) => return None,
            };
            if !resample.has_both_arms() {
                return None;
            }
            fit(&resample).ok()
        })
        .collect();
    let betas: Vec<f64> = results.iter().filter_map(|r| *r).collect();
    let failed = b - betas.len();
    if failed * 100 > b * BOOTSTRAP_FAILURE_CEILING as usize {
        return Err(Error::ReplicateCeiling {
            failed,
            total: b,
            ceiling_percent: BOOTSTRAP_FAILURE_CEILING,
        });
    }
    let mean = betas.iter().sum::<f64>() / betas.len() as f64;
    let var = betas.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (betas.len() - 1) as f64;
    Ok(BootstrapSummary {
        se: var.sqrt(),
        used: betas.len(),
        failed,
    })
}

/// Absolute risks and their ratio at one time point, derived from the
/// fitted baseline hazard and log hazard ratio.
#[derive(Debug, Clone, Serialize)]
pub struct RiskContrast {
    pub time: f64,
    pub risk0: f64,
    pub risk1: f64,
    pub relative_risk: f64,
}

/// Evaluate `risk_a(t) = 1 - exp(-Lambda(t) exp(beta a))` at the requested
/// times. The ratio is defined as 1 when both risks are zero.
pub fn risk_contrasts(
    lambda: &StepFunction,
    beta: f64,
    times: &[f64],
    tau: f64,
) -> Result<Vec<RiskContrast>> {
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=tau).contains(&t) {
            return Err(Error::config(format!(
                "risk time {t} outside the observation window [0, {tau}]"
            )));
        }
        let lam = lambda.value(t);
        let risk0 = 1.0 - (-lam).exp();
        let risk1 = 1.0 - (-lam * beta.exp()).exp();
        let relative_risk = if risk0 == 0.0 && risk1 == 0.0 {
            1.0
        } else {
            risk1 / risk0
        };
        out.push(RiskContrast {
            time: t,
            risk0,
            risk1,
            relative_risk,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use crate::nuisance::identity_nuisance;
    use crate::scores::build_time_grid;
    use approx::assert_abs_diff_eq;

    fn dataset(rows: Vec<(f64, bool, bool, Vec<f64>)>, tau: f64) -> Dataset {
        let records = rows
            .into_iter()
            .map(|(x, d, a, z)| SurvivalRecord::new(x, d, a, z))
            .collect();
        Dataset::new(records, tau).unwrap()
    }

    fn identity_aggregates(ds: &Dataset, c: f64) -> (Vec<FoldAggregates>, TimeGrid) {
        let tri = identity_nuisance(c).unwrap();
        let grid = build_time_grid(ds, &tri).unwrap();
        let gn = tri.on_grid(grid.times());
        let mut agg = FoldAggregates::new(grid.len());
        for r in ds.records() {
            agg.add(&compute_subject_scores(r, &gn, ds.tau()));
        }
        (vec![agg], grid)
    }

    #[test]
    fn single_subject_identity_baseline_is_one() {
        let ds = dataset(vec![(1.0, true, true, vec![])], 1.0);
        let (aggs, grid) = identity_aggregates(&ds, 0.5);
        let lt = lambda_tilde(&aggs[0], &grid, 0.0);
        assert_abs_diff_eq!(lt.value(1.0), 1.0, epsilon = 1e-12);
        assert_eq!(lt.value(0.5), 0.0);
    }

    #[test]
    fn symmetric_sample_solves_to_zero() {
        // Mirror-image arms: swapping labels maps the sample to itself, so
        // the solution must sit at zero.
        let ds = dataset(
            vec![
                (0.3, true, true, vec![]),
                (0.3, true, false, vec![]),
                (0.7, true, true, vec![]),
                (0.7, true, false, vec![]),
                (0.9, false, true, vec![]),
                (0.9, false, false, vec![]),
            ],
            1.0,
        );
        let (aggs, _) = identity_aggregates(&ds, 0.5);
        let beta = solve_beta(&aggs).unwrap();
        assert_abs_diff_eq!(beta, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn label_swap_antisymmetry_of_u() {
        let rows = vec![
            (0.2, true, true, vec![]),
            (0.4, false, false, vec![]),
            (0.5, true, false, vec![]),
            (0.8, true, true, vec![]),
            (0.9, false, true, vec![]),
        ];
        let ds = dataset(rows.clone(), 1.0);
        let swapped = dataset(
            rows.into_iter().map(|(x, d, a, z)| (x, d, !a, z)).collect(),
            1.0,
        );
        let (aggs, _) = identity_aggregates(&ds, 0.5);
        let (aggs_sw, _) = identity_aggregates(&swapped, 0.5);
        for beta in [-0.7, 0.0, 0.4, 1.3] {
            assert_abs_diff_eq!(
                u_function(&aggs, beta),
                -u_function(&aggs_sw, -beta),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn u_derivative_matches_finite_differences() {
        let ds = dataset(
            vec![
                (0.2, true, true, vec![]),
                (0.5, true, false, vec![]),
                (0.6, false, true, vec![]),
                (0.8, true, false, vec![]),
            ],
            1.0,
        );
        let (aggs, _) = identity_aggregates(&ds, 0.4);
        for beta in [-0.5, 0.1, 0.9] {
            let h = 1e-6;
            let fd = (u_function(&aggs, beta + h) - u_function(&aggs, beta - h)) / (2.0 * h);
            assert_abs_diff_eq!(u_derivative(&aggs, beta), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn naive_cox_matches_hand_solution() {
        // Events at 0.1 (control), 0.2 (treated), 0.3 (control): the score
        // equation reduces to exp(2 beta) = 2.
        let ds = dataset(
            vec![
                (0.1, true, false, vec![]),
                (0.2, true, true, vec![]),
                (0.3, true, false, vec![]),
            ],
            1.0,
        );
        let fit = fit_naive_cox(&ds).unwrap();
        assert_abs_diff_eq!(fit.beta_hat, 0.5 * 2.0f64.ln(), epsilon = 1e-7);
        assert!(fit.se_model > 0.0);
        assert!(fit.ci[0] < fit.beta_hat && fit.beta_hat < fit.ci[1]);
    }

    #[test]
    fn identity_weights_reduce_ipw_to_naive() {
        let ds = dataset(
            vec![
                (0.15, true, true, vec![]),
                (0.3, true, false, vec![]),
                (0.45, false, true, vec![]),
                (0.6, true, false, vec![]),
                (0.75, true, true, vec![]),
            ],
            1.0,
        );
        let tri = identity_nuisance(0.5).unwrap();
        let ipw = fit_ipw(&ds, &tri).unwrap();
        let naive = fit_naive_cox(&ds).unwrap();
        assert_abs_diff_eq!(ipw.beta_hat, naive.beta_hat, epsilon = 1e-9);
        assert_abs_diff_eq!(ipw.weight_range[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ipw.weight_range[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn full_data_fit_recovers_proportional_hazards_truth() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 20_000;
        let beta_true: f64 = -0.8;
        let mut t0 = Vec::with_capacity(n);
        let mut t1 = Vec::with_capacity(n);
        for _ in 0..n {
            t0.push(-rng.gen::<f64>().ln());
            t1.push(-rng.gen::<f64>().ln() / beta_true.exp());
        }
        let fit = fit_full_data(&t0, &t1, 1.0).unwrap();
        assert!((fit.beta_hat - beta_true).abs() < 0.05, "{}", fit.beta_hat);
        assert!(fit.se_cluster > 0.0 && fit.se_cluster < 0.1);
    }

    #[test]
    fn bootstrap_is_deterministic_and_counts_failures() {
        let ds = dataset(
            vec![
                (0.2, true, true, vec![]),
                (0.3, true, false, vec![]),
                (0.5, true, true, vec![]),
                (0.6, true, false, vec![]),
                (0.7, false, true, vec![]),
                (0.9, true, false, vec![]),
            ],
            1.0,
        );
        let fit = |d: &Dataset| fit_naive_cox(d).map(|f| f.beta_hat);
        let b1 = bootstrap_se(&ds, 40, 7, fit).unwrap();
        let b2 = bootstrap_se(&ds, 40, 7, fit).unwrap();
        assert_eq!(b1.se, b2.se);
        assert_eq!(b1.used + b1.failed, 40);
        assert!(b1.se > 0.0);

        let always_fail = |_: &Dataset| -> Result<f64> { Err(Error::solver("boom")) };
        let err = bootstrap_se(&ds, 10, 3, always_fail).unwrap_err();
        match err {
            Error::ReplicateCeiling { failed, total, .. } => {
                assert_eq!(failed, 10);
                assert_eq!(total, 10);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn risk_contrasts_handle_zero_and_reject_outside_window() {
        let lambda = StepFunction::new(vec![0.5], vec![0.2], 0.0);
        let out = risk_contrasts(&lambda, 0.7, &[0.1, 0.8], 1.0).unwrap();
        assert_eq!(out[0].risk0, 0.0);
        assert_eq!(out[0].risk1, 0.0);
        assert_eq!(out[0].relative_risk, 1.0);
        assert_abs_diff_eq!(out[1].risk0, 1.0 - (-0.2f64).exp(), epsilon = 1e-12);
        assert!(out[1].relative_risk > 1.0);
        assert!(risk_contrasts(&lambda, 0.7, &[1.5], 1.0).is_err());
    }

    #[test]
    fn aipw_identity_fixed_nuisance_runs_end_to_end() {
        let ds = dataset(
            vec![
                (0.1, true, false, vec![]),
                (0.2, true, true, vec![]),
                (0.3, true, false, vec![]),
                (0.4, true, true, vec![]),
                (0.55, false, false, vec![]),
                (0.7, true, true, vec![]),
                (0.85, true, false, vec![]),
                (0.95, false, true, vec![]),
            ],
            1.0,
        );
        let spec = NuisanceSpec {
            propensity: PropensitySpec::Constant(0.5),
            survival: SurvivalSpec::One,
            censoring: SurvivalSpec::One,
            clip: ClipConfig::disabled(),
        };
        let fit1 = fit_aipw(&ds, &spec, 1, 11).unwrap();
        assert!(fit1.beta_hat.is_finite());
        assert!(fit1.se_model > 0.0);
        let fit2 = fit_aipw(&ds, &spec, 2, 11).unwrap();
        assert!(fit2.beta_hat.is_finite());
        assert_eq!(fit1.diagnostics.fold_sizes, vec![8]);
        assert_eq!(fit2.diagnostics.fold_sizes, vec![4, 4]);
    }

    #[test]
    fn aipw_with_working_models_on_generated_data() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 400;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let z = rng.gen_range(-1.0..1.0f64);
            let pi = crate::numerics::expit(0.8 * z);
            let a = rng.gen::<f64>() < pi;
            let t: f64 = -rng.gen::<f64>().ln() / (0.5 * (a as u8 as f64) + 0.7 * z).exp();
            let c: f64 = -rng.gen::<f64>().ln() / 0.4;
            rows.push((t.min(c), t <= c, a, vec![z]));
        }
        let ds = dataset(rows, 1.5);
        let spec = NuisanceSpec::working_models(ClipConfig::default());
        let fit = fit_aipw(&ds, &spec, 3, 5).unwrap();
        assert!(fit.beta_hat.is_finite());
        assert!(fit.se_model > 0.0);
        assert!(fit.lambda_hat.value(1.5) > 0.0);
        // Same seed, same answer.
        let again = fit_aipw(&ds, &spec, 3, 5).unwrap();
        assert_eq!(fit.beta_hat, again.beta_hat);
        assert_eq!(fit.se_model, again.se_model);
    }
}
