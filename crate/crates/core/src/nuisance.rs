//! Working models for the three nuisance functions: the propensity
//! `pi(z) = P(A = 1 | Z = z)`, conditional event survival `S(t; a, z)`, and
//! conditional censoring survival `S_c(t; a, z)`.
//!
//! Built-ins: logistic regression (IRLS) for the propensity and Cox
//! proportional hazards with a Breslow baseline for the survival pair.
//! Degenerate fits for checks and misspecification studies: a constant
//! propensity, a marginal Kaplan–Meier curve, the identically-one survival
//! function, and an analytic (closure-backed) survival law.

use crate::data::{Dataset, SurvivalRecord};
use crate::error::Error;
use crate::numerics::{cholesky_solve, expit, StepFunction};
use crate::Result;
use serde::Serialize;
use std::sync::Arc;

/// Clipping bounds applied to every nuisance evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipConfig {
    /// Lower bound for the treatment probability.
    pub ps_lo: f64,
    /// Upper bound for the treatment probability.
    pub ps_hi: f64,
    /// Floor for both survival functions.
    pub surv_floor: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            ps_lo: 0.1,
            ps_hi: 0.9,
            surv_floor: 0.05,
        }
    }
}

impl ClipConfig {
    /// No-op clipping (raw model output passes through).
    pub fn disabled() -> Self {
        ClipConfig {
            ps_lo: 0.0,
            ps_hi: 1.0,
            surv_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ps_lo)
            || !(0.0..=1.0).contains(&self.ps_hi)
            || self.ps_lo >= self.ps_hi
        {
            return Err(Error::config(format!(
                "propensity clip [{}, {}] is not a subinterval of [0, 1]",
                self.ps_lo, self.ps_hi
            )));
        }
        if !(0.0..1.0).contains(&self.surv_floor) {
            return Err(Error::config(format!(
                "survival clip floor {} must lie in [0, 1)",
                self.surv_floor
            )));
        }
        Ok(())
    }
}

/// Fitted logistic propensity model with coefficients for `(1, z)`.
#[derive(Debug, Clone, Serialize)]
pub struct PropensityModel {
    pub gamma: Vec<f64>,
}

impl PropensityModel {
    /// Raw (unclipped) predicted treatment probability.
    pub fn prob(&self, z: &[f64]) -> f64 {
        let mut eta = self.gamma[0];
        for (g, v) in self.gamma[1..].iter().zip(z) {
            eta += g * v;
        }
        expit(eta)
    }
}

/// Which conditional distribution a survival working model targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Target {
    Event,
    Censoring,
}

impl Target {
    /// Whether a record counts as a target event.
    ///
    /// Subjects observed to the end of the window (`x = tau`, no event)
    /// are administratively censored at a fixed, known time: they count
    /// as censoring events for no model. The censoring target is the
    /// loss-to-follow-up hazard inside the window only.
    fn indicator(self, rec: &SurvivalRecord, tau: f64) -> bool {
        match self {
            Target::Event => rec.delta,
            Target::Censoring => !rec.delta && rec.x < tau,
        }
    }
}

/// Cox proportional hazards working model on covariates `(a, z)` with a
/// Breslow baseline.
///
/// Covariate columns that are constant in the training sample carry no
/// partial-likelihood information (any coefficient is absorbed into the
/// baseline), so they are dropped from the fit and recorded in
/// `dropped_columns`; predictions are invariant to this gauge choice.
#[derive(Debug, Clone, Serialize)]
pub struct CoxWorkingModel {
    /// Coefficients for the retained columns of `(a, z1..zp)`.
    pub theta: Vec<f64>,
    /// Indices into `(a, z1..zp)` retained by the fit.
    pub retained_columns: Vec<usize>,
    /// Indices dropped as constant in the training sample.
    pub dropped_columns: Vec<usize>,
    /// Breslow cumulative baseline hazard.
    pub baseline: StepFunction,
    pub target: Target,
}

impl CoxWorkingModel {
    /// Linear predictor `theta' (a, z)` over the retained columns.
    pub fn linear_predictor(&self, a: bool, z: &[f64]) -> f64 {
        let full_col = |j: usize| -> f64 {
            if j == 0 {
                if a {
                    1.0
                } else {
                    0.0
                }
            } else {
                z[j - 1]
            }
        };
        self.retained_columns
            .iter()
            .zip(&self.theta)
            .map(|(&j, th)| th * full_col(j))
            .sum()
    }

    /// Cumulative baseline hazard at the grid times.
    pub fn baseline_at(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.baseline.value(t)).collect()
    }
}

/// Maximize the logistic log-likelihood of `A | Z` by iteratively
/// reweighted least squares with step-halving.
///
/// Converges when the score max-norm drops to `1e-10`; declares separation
/// when the coefficient norm passes 30, naming the dominant direction.
pub fn fit_logistic(data: &Dataset) -> Result<PropensityModel> {
    if !data.has_both_arms() {
        return Err(Error::nuisance(
            "logistic fit requires both treatment arms",
        ));
    }
    let n = data.n();
    let p = data.p();
    let q = p + 1;
    let design = |i: usize, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            data.records()[i].z[j - 1]
        }
    };
    let y: Vec<f64> = data.records().iter().map(|r| r.a_f64()).collect();

    let loglik = |gamma: &[f64]| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let mut eta = 0.0;
            for j in 0..q {
                eta += gamma[j] * design(i, j);
            }
            // log C(eta) with C the logistic CDF: y*eta - log(1 + e^eta)
            let log1pe = if eta > 30.0 {
                eta
            } else {
                (1.0 + eta.exp()).ln()
            };
            ll += y[i] * eta - log1pe;
        }
        ll
    };

    let mut gamma = vec![0.0; q];
    let mut ll = loglik(&gamma);
    for _ in 0..100 {
        // Score and expected information at the current coefficients.
        let mut grad = vec![0.0; q];
        let mut info = vec![0.0; q * q];
        for i in 0..n {
            let mut eta = 0.0;
            for j in 0..q {
                eta += gamma[j] * design(i, j);
            }
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            let resid = y[i] - mu;
            for j in 0..q {
                let xj = design(i, j);
                grad[j] += resid * xj;
                for l in j..q {
                    info[j * q + l] += w * xj * design(i, l);
                }
            }
        }
        for j in 0..q {
            for l in 0..j {
                info[j * q + l] = info[l * q + j];
            }
        }
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= 1e-10 {
            return Ok(PropensityModel { gamma });
        }
        let mut step = grad.clone();
        let mut fac = info.clone();
        cholesky_solve(&mut fac, &mut step, q)
            .map_err(|_| Error::nuisance("design matrix is rank deficient"))?;
        // Step-halving keeps the likelihood nondecreasing.
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = gamma
                .iter()
                .zip(&step)
                .map(|(g, s)| g + scale * s)
                .collect();
            let cand_ll = loglik(&cand);
            // The tolerance scales with |ll| so float noise in a large-n
            // log-likelihood cannot stall the search.
            if cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) || scale < 1e-8 {
                gamma = cand;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 30.0 {
            let (jmax, _) = gamma
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            let dir = if jmax == 0 {
                "intercept".to_string()
            } else {
                format!("z{jmax}")
            };
            return Err(Error::nuisance(format!(
                "separation detected: coefficient for {dir} diverges"
            )));
        }
    }
    Err(Error::nuisance("logistic fit did not converge"))
}

/// Fit a Cox working model for the target distribution on covariates
/// `(a, z)` by Newton–Raphson on the Breslow partial likelihood.
pub fn fit_cox_working(data: &Dataset, target: Target) -> Result<CoxWorkingModel> {
    let n = data.n();
    let p = data.p();
    let n_events = data
        .records()
        .iter()
        .filter(|r| target.indicator(r, data.tau()))
        .count();
    if n_events == 0 {
        return Err(Error::nuisance("no target events"));
    }

    // Full covariate row (a, z1..zp); constant columns are dropped.
    let full_q = p + 1;
    let full_col = |i: usize, j: usize| -> f64 {
        let r = &data.records()[i];
        if j == 0 {
            r.a_f64()
        } else {
            r.z[j - 1]
        }
    };
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..full_q {
        let first = full_col(0, j);
        if (1..n).any(|i| full_col(i, j) != first) {
            retained.push(j);
        } else {
            dropped.push(j);
        }
    }
    let q = retained.len();
    let cov = |i: usize, jj: usize| -> f64 { full_col(i, retained[jj]) };

    // Ascending time order; risk sums accumulate from the largest time down.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        data.records()[i]
            .x
            .total_cmp(&data.records()[j].x)
            .then(i.cmp(&j))
    });

    let mut theta = vec![0.0; q];
    let mut converged = q == 0;
    if q > 0 {
        for _ in 0..100 {
            let (ll, grad, info) = cox_score(data, target, &order, &theta, q, &cov);
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax <= 1e-8 {
                converged = true;
                break;
            }
            let mut step = grad.clone();
            let mut fac = info.clone();
            cholesky_solve(&mut fac, &mut step, q)
                .map_err(|_| Error::nuisance("collinear covariates in Cox fit"))?;
            let mut scale = 1.0;
            loop {
                let cand: Vec<f64> = theta
                    .iter()
                    .zip(&step)
                    .map(|(t, s)| t + scale * s)
                    .collect();
                let (cand_ll, _, _) = cox_score(data, target, &order, &cand, q, &cov);
                // Relative tolerance: float noise in a large-n partial
                // likelihood must not stall the search.
                if cand_ll >= ll - 1e-10 * (1.0 + ll.abs()) || scale < 1e-8 {
                    theta = cand;
                    break;
                }
                scale *= 0.5;
            }
            let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm > 30.0 {
                return Err(Error::nuisance(
                    "monotone partial likelihood: coefficients diverge",
                ));
            }
        }
        if !converged {
            return Err(Error::nuisance("Cox fit did not converge"));
        }
    }

    // Breslow baseline: jump d_j / sum_{at risk} exp(theta'x) at each
    // distinct target-event time, scanning from the largest time down so
    // the risk set accumulates incrementally.
    let mut jump_times = Vec::new();
    let mut jumps = Vec::new();
    let mut risk_sum = 0.0;
    let mut idx = n;
    let mut i = n;
    while i > 0 {
        let t = data.records()[order[i - 1]].x;
        while idx > 0 && data.records()[order[idx - 1]].x >= t {
            idx -= 1;
            let mut lp = 0.0;
            for jj in 0..q {
                lp += theta[jj] * cov(order[idx], jj);
            }
            risk_sum += lp.exp();
        }
        let mut first = i;
        let mut d = 0.0;
        while first > 0 && data.records()[order[first - 1]].x == t {
            if target.indicator(&data.records()[order[first - 1]], data.tau()) {
                d += 1.0;
            }
            first -= 1;
        }
        if d > 0.0 {
            jump_times.push(t);
            jumps.push(d / risk_sum);
        }
        i = first;
    }
    jump_times.reverse();
    jumps.reverse();
    let baseline = StepFunction::from_increments(jump_times, &jumps);

    Ok(CoxWorkingModel {
        theta,
        retained_columns: retained,
        dropped_columns: dropped,
        baseline,
        target,
    })
}

/// Breslow partial log-likelihood, score, and expected information.
fn cox_score(
    data: &Dataset,
    target: Target,
    order: &[usize],
    theta: &[f64],
    q: usize,
    cov: &dyn Fn(usize, usize) -> f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = order.len();
    let mut ll = 0.0;
    let mut grad = vec![0.0; q];
    let mut info = vec![0.0; q * q];
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; q];
    let mut s2 = vec![0.0; q * q];
    let mut idx = n;
    let mut i = n;
    while i > 0 {
        let t = data.records()[order[i - 1]].x;
        while idx > 0 && data.records()[order[idx - 1]].x >= t {
            idx -= 1;
            let s = order[idx];
            let mut lp = 0.0;
            for jj in 0..q {
                lp += theta[jj] * cov(s, jj);
            }
            let w = lp.exp();
            s0 += w;
            for jj in 0..q {
                let xj = cov(s, jj);
                s1[jj] += w * xj;
                for ll2 in jj..q {
                    s2[jj * q + ll2] += w * xj * cov(s, ll2);
                }
            }
        }
        // Tie block [first, i) shares the risk sums at time t.
        let mut first = i;
        while first > 0 && data.records()[order[first - 1]].x == t {
            first -= 1;
        }
        for &s in &order[first..i] {
            let r = &data.records()[s];
            if target.indicator(r, data.tau()) {
                let mut lp = 0.0;
                for jj in 0..q {
                    lp += theta[jj] * cov(s, jj);
                }
                ll += lp - s0.ln();
                for jj in 0..q {
                    let ratio_j = s1[jj] / s0;
                    grad[jj] += cov(s, jj) - ratio_j;
                    for ll2 in jj..q {
                        info[jj * q + ll2] += s2[jj * q + ll2] / s0 - ratio_j * s1[ll2] / s0;
                    }
                }
            }
        }
        i = first;
    }
    for jj in 0..q {
        for ll2 in 0..jj {
            info[jj * q + ll2] = info[ll2 * q + jj];
        }
    }
    (ll, grad, info)
}

/// Marginal survival curve (covariate-free), from the Kaplan–Meier
/// estimator of the target distribution.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalSurvival {
    pub curve: StepFunction,
    pub target: Target,
}

/// Kaplan–Meier estimate of the target survival function, ignoring
/// covariates and treatment.
pub fn fit_kaplan_meier(data: &Dataset, target: Target) -> Result<MarginalSurvival> {
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| data.records()[i].x.total_cmp(&data.records()[j].x));
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = data.records()[order[i]].x;
        let mut d = 0.0;
        let mut j = i;
        while j < n && data.records()[order[j]].x == t {
            if target.indicator(&data.records()[order[j]], data.tau()) {
                d += 1.0;
            }
            j += 1;
        }
        let at_risk = (n - i) as f64;
        if d > 0.0 {
            surv *= 1.0 - d / at_risk;
            times.push(t);
            values.push(surv);
        }
        i = j;
    }
    Ok(MarginalSurvival {
        curve: StepFunction::new(times, values, 1.0),
        target,
    })
}

/// Analytic conditional survival, used to inject a known truth.
#[derive(Clone)]
pub struct AnalyticSurvival {
    pub label: String,
    pub f: Arc<dyn Fn(f64, bool, &[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for AnalyticSurvival {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "AnalyticSurvival({})", self.label)
    }
}

/// Propensity component of a [`NuisanceTriple`].
#[derive(Debug, Clone)]
pub enum PropensityKind {
    Logistic(PropensityModel),
    Constant(f64),
}

/// Survival component (event or censoring) of a [`NuisanceTriple`].
#[derive(Debug, Clone)]
pub enum SurvivalKind {
    Cox(CoxWorkingModel),
    KaplanMeier(MarginalSurvival),
    /// Identically one (no event mass inside the window).
    One,
    Analytic(AnalyticSurvival),
}

/// The three fitted nuisance functions plus the clipping rules under which
/// they are evaluated.
#[derive(Debug, Clone)]
pub struct NuisanceTriple {
    pub propensity: PropensityKind,
    pub survival: SurvivalKind,
    pub censoring: SurvivalKind,
    pub clip: ClipConfig,
}

impl NuisanceTriple {
    /// Clipped treatment probability.
    pub fn propensity(&self, z: &[f64]) -> f64 {
        let raw = match &self.propensity {
            PropensityKind::Logistic(m) => m.prob(z),
            PropensityKind::Constant(c) => *c,
        };
        raw.clamp(self.clip.ps_lo, self.clip.ps_hi)
    }

    /// Clipped probability of the observed treatment:
    /// `pi_tilde(a, z) = pi(z)^a (1 - pi(z))^(1-a)`.
    pub fn propensity_observed(&self, a: bool, z: &[f64]) -> f64 {
        let pi = self.propensity(z);
        if a {
            pi
        } else {
            1.0 - pi
        }
    }

    /// Precompute grid-level state for fast per-subject evaluation.
    pub fn on_grid<'t>(&'t self, grid: &[f64]) -> GridNuisance<'t> {
        GridNuisance {
            triple: self,
            s_state: SurvGridState::new(&self.survival, grid),
            sc_state: SurvGridState::new(&self.censoring, grid),
            grid: grid.to_vec(),
        }
    }
}

/// Construct the identity nuisance fixture: `pi = c`, `S = 1`, `S_c = 1`,
/// with clipping disabled so the constants pass through untouched.
pub fn identity_nuisance(c: f64) -> Result<NuisanceTriple> {
    if !(0.0 < c && c < 1.0) {
        return Err(Error::config(format!(
            "identity propensity must lie in (0, 1), got {c}"
        )));
    }
    Ok(NuisanceTriple {
        propensity: PropensityKind::Constant(c),
        survival: SurvivalKind::One,
        censoring: SurvivalKind::One,
        clip: ClipConfig::disabled(),
    })
}

/// Clipped propensity prediction for a bare model (spec-shaped helper).
pub fn predict_propensity(model: &PropensityModel, z: &[f64], clip: (f64, f64)) -> f64 {
    model.prob(z).clamp(clip.0, clip.1)
}

/// Clipped conditional survival curve on a grid (spec-shaped helper).
pub fn predict_conditional_survival(
    model: &CoxWorkingModel,
    grid: &[f64],
    a: bool,
    z: &[f64],
    clip_floor: f64,
) -> StepFunction {
    let lam0 = model.baseline_at(grid);
    let r = model.linear_predictor(a, z).exp();
    let values: Vec<f64> = lam0
        .iter()
        .map(|l0| (-l0 * r).exp().clamp(clip_floor, 1.0))
        .collect();
    StepFunction::new(grid.to_vec(), values, 1.0)
}

enum SurvGridState {
    Cox { lambda0: Vec<f64>, arm_scale: [f64; 2] },
    Shared(Vec<f64>),
    One,
    Analytic,
}

impl SurvGridState {
    fn new(kind: &SurvivalKind, grid: &[f64]) -> SurvGridState {
        match kind {
            SurvivalKind::Cox(m) => {
                // The treatment coefficient (column 0) contributes a fixed
                // per-arm factor; covariates enter per subject.
                let mut arm_scale = [0.0, 0.0];
                for (jj, &j) in m.retained_columns.iter().enumerate() {
                    if j == 0 {
                        arm_scale[1] = m.theta[jj];
                    }
                }
                SurvGridState::Cox {
                    lambda0: m.baseline_at(grid),
                    arm_scale,
                }
            }
            SurvivalKind::KaplanMeier(m) => {
                SurvGridState::Shared(grid.iter().map(|&t| m.curve.value(t)).collect())
            }
            SurvivalKind::One => SurvGridState::One,
            SurvivalKind::Analytic(_) => SurvGridState::Analytic,
        }
    }
}

/// A nuisance triple bound to a fixed evaluation grid, exposing clipped
/// per-subject survival rows without materializing the full sample.
pub struct GridNuisance<'t> {
    triple: &'t NuisanceTriple,
    s_state: SurvGridState,
    sc_state: SurvGridState,
    grid: Vec<f64>,
}

impl<'t> GridNuisance<'t> {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn clip(&self) -> &ClipConfig {
        &self.triple.clip
    }

    pub fn propensity(&self, z: &[f64]) -> f64 {
        self.triple.propensity(z)
    }

    pub fn propensity_observed(&self, a: bool, z: &[f64]) -> f64 {
        self.triple.propensity_observed(a, z)
    }

    /// Fill `out[g] = clipped S(grid[g]; a, z)`.
    pub fn fill_survival(&self, a: bool, z: &[f64], out: &mut [f64]) {
        fill_surv_row(
            &self.triple.survival,
            &self.s_state,
            &self.grid,
            a,
            z,
            self.triple.clip.surv_floor,
            out,
        );
    }

    /// Fill `out[g] = clipped S_c(grid[g]; a, z)`.
    pub fn fill_censoring(&self, a: bool, z: &[f64], out: &mut [f64]) {
        fill_surv_row(
            &self.triple.censoring,
            &self.sc_state,
            &self.grid,
            a,
            z,
            self.triple.clip.surv_floor,
            out,
        );
    }
}

fn fill_surv_row(
    kind: &SurvivalKind,
    state: &SurvGridState,
    grid: &[f64],
    a: bool,
    z: &[f64],
    floor: f64,
    out: &mut [f64],
) {
    match (kind, state) {
        (SurvivalKind::Cox(m), SurvGridState::Cox { lambda0, arm_scale }) => {
            let mut lp = arm_scale[a as usize];
            for (jj, &j) in m.retained_columns.iter().enumerate() {
                if j > 0 {
                    lp += m.theta[jj] * z[j - 1];
                }
            }
            let r = lp.exp();
            for (o, l0) in out.iter_mut().zip(lambda0) {
                *o = (-l0 * r).exp().clamp(floor, 1.0);
            }
        }
        (_, SurvGridState::Shared(row)) => {
            for (o, v) in out.iter_mut().zip(row) {
                *o = v.clamp(floor, 1.0);
            }
        }
        (_, SurvGridState::One) => out.fill(1.0),
        (SurvivalKind::Analytic(ana), SurvGridState::Analytic) => {
            for (o, &t) in out.iter_mut().zip(grid) {
                *o = (ana.f)(t, a, z).clamp(floor, 1.0);
            }
        }
        _ => unreachable!("survival kind and grid state always match"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn dataset(rows: Vec<(f64, bool, bool, Vec<f64>)>, tau: f64) -> Dataset {
        let records = rows
            .into_iter()
            .map(|(x, d, a, z)| SurvivalRecord::new(x, d, a, z))
            .collect();
        Dataset::new(records, tau).unwrap()
    }

    #[test]
    fn balanced_no_covariate_logistic_gives_half() {
        let rows = (0..10)
            .map(|i| (1.0, false, i % 2 == 1, vec![]))
            .collect();
        let ds = dataset(rows, 2.0);
        let m = fit_logistic(&ds).unwrap();
        assert_abs_diff_eq!(m.gamma[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.prob(&[]), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn logistic_recovers_generating_coefficients() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eta = 0.5 * z[0] - 0.5 * z[1] - 0.5 * z[2];
            let a = rng.gen::<f64>() < expit(eta);
            rows.push((1.0, false, a, z));
        }
        // Keep both arms guaranteed.
        rows[0].2 = true;
        rows[1].2 = false;
        let ds = dataset(rows, 2.0);
        let m = fit_logistic(&ds).unwrap();
        let want = [0.0, 0.5, -0.5, -0.5];
        for (g, w) in m.gamma.iter().zip(want) {
            assert!((g - w).abs() < 0.05, "gamma {g} vs {w}");
        }
    }

    #[test]
    fn logistic_detects_separation() {
        // Large enough that the score stays above tolerance until the
        // coefficient norm crosses the separation threshold.
        let rows: Vec<_> = (0..4000)
            .map(|i| {
                let z = if i % 2 == 0 { 1.0 } else { -1.0 };
                (1.0, false, z > 0.0, vec![z])
            })
            .collect();
        let ds = dataset(rows, 2.0);
        let err = fit_logistic(&ds).unwrap_err();
        assert!(err.to_string().contains("separation"));
    }

    #[test]
    fn logistic_order_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut rows: Vec<_> = (0..500)
            .map(|_| {
                let z = vec![rng.gen_range(-1.0..1.0f64)];
                let a = rng.gen::<f64>() < expit(0.7 * z[0]);
                (rng.gen_range(0.1..2.0), rng.gen::<bool>(), a, z)
            })
            .collect();
        rows[0].2 = true;
        rows[1].2 = false;
        let ds1 = dataset(rows.clone(), 2.0);
        rows.reverse();
        let ds2 = dataset(rows, 2.0);
        let m1 = fit_logistic(&ds1).unwrap();
        let m2 = fit_logistic(&ds2).unwrap();
        for (a, b) in m1.gamma.iter().zip(&m2.gamma) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_subject_breslow_jump_is_one() {
        let ds = dataset(vec![(1.0, true, true, vec![])], 2.0);
        let m = fit_cox_working(&ds, Target::Event).unwrap();
        assert!(m.theta.is_empty());
        assert_abs_diff_eq!(m.baseline.value(1.0), 1.0, epsilon = 1e-12);
        assert_eq!(m.baseline.value(0.5), 0.0);
    }

    #[test]
    fn cox_recovers_generating_coefficients() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 100_000;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let z = rng.gen_range(-1.0..1.0f64);
            let a = i % 2 == 0;
            let rate = (2.0 - 1.12 * (a as i32 as f64) - 2.0 * z).exp();
            let t: f64 = -rng.gen::<f64>().ln() / rate;
            rows.push((t, true, a, vec![z]));
        }
        let ds = dataset(rows, 1e6);
        let m = fit_cox_working(&ds, Target::Event).unwrap();
        assert_eq!(m.retained_columns, vec![0, 1]);
        assert!((m.theta[0] + 1.12).abs() < 0.05, "theta_a {}", m.theta[0]);
        assert!((m.theta[1] + 2.0).abs() < 0.05, "theta_z {}", m.theta[1]);
    }

    #[test]
    fn cox_score_zero_at_solution() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        for i in 0..200 {
            let z = rng.gen_range(-1.0..1.0f64);
            let a = i % 2 == 0;
            let rate = (0.3 * (a as i32 as f64) + 0.8 * z).exp();
            let t: f64 = -rng.gen::<f64>().ln() / rate;
            let c: f64 = rng.gen_range(0.2..2.0);
            rows.push((t.min(c), t <= c, a, vec![z]));
        }
        let ds = dataset(rows, 10.0);
        let m = fit_cox_working(&ds, Target::Event).unwrap();
        let mut order: Vec<usize> = (0..ds.n()).collect();
        order.sort_by(|&i, &j| ds.records()[i].x.total_cmp(&ds.records()[j].x));
        let cov = |i: usize, jj: usize| -> f64 {
            let r = &ds.records()[i];
            if m.retained_columns[jj] == 0 {
                r.a_f64()
            } else {
                r.z[m.retained_columns[jj] - 1]
            }
        };
        let (_, grad, _) = cox_score(&ds, Target::Event, &order, &m.theta, m.theta.len(), &cov);
        for g in grad {
            assert!(g.abs() <= 1e-8, "score component {g}");
        }
    }

    #[test]
    fn breslow_with_zero_covariates_matches_nelson_aalen() {
        // With no covariates the Breslow baseline is the Nelson-Aalen
        // estimator: jumps d_j / r_j at event times.
        let ds = dataset(
            vec![
                (0.3, true, true, vec![]),
                (0.5, false, false, vec![]),
                (0.7, true, true, vec![]),
                (0.9, true, false, vec![]),
            ],
            1.0,
        );
        // Force theta = 0 by making `a` constant: use a single-arm variant.
        let one_arm = dataset(
            vec![
                (0.3, true, true, vec![]),
                (0.5, false, true, vec![]),
                (0.7, true, true, vec![]),
                (0.9, true, true, vec![]),
            ],
            1.0,
        );
        let m = fit_cox_working(&one_arm, Target::Event).unwrap();
        assert!(m.theta.is_empty());
        assert_abs_diff_eq!(m.baseline.value(0.3), 1.0 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.baseline.value(0.7), 0.25 + 1.0 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.baseline.value(0.95), 0.75 + 1.0, epsilon = 1e-12);
        let _ = ds;
    }

    #[test]
    fn cox_rejects_no_target_events() {
        let ds = dataset(
            vec![(0.5, true, true, vec![]), (0.6, true, false, vec![])],
            1.0,
        );
        let err = fit_cox_working(&ds, Target::Censoring).unwrap_err();
        assert!(err.to_string().contains("no target events"));
    }

    #[test]
    fn label_swap_symmetry_of_working_models() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut rows = Vec::new();
        for i in 0..300 {
            let z = rng.gen_range(-1.0..1.0f64);
            let a = i % 3 == 0;
            let rate = (0.5 * (a as i32 as f64) - 0.7 * z).exp();
            let t: f64 = -rng.gen::<f64>().ln() / rate;
            rows.push((t.min(1.5), t <= 1.5, a, vec![z]));
        }
        let ds = dataset(rows.clone(), 2.0);
        let swapped = dataset(
            rows.into_iter().map(|(x, d, a, z)| (x, d, !a, z)).collect(),
            2.0,
        );
        let pi = fit_logistic(&ds).unwrap();
        let pi_sw = fit_logistic(&swapped).unwrap();
        for z in [-0.8, -0.2, 0.4, 0.9] {
            assert_abs_diff_eq!(pi.prob(&[z]), 1.0 - pi_sw.prob(&[z]), epsilon = 1e-6);
        }
        let s = fit_cox_working(&ds, Target::Event).unwrap();
        let s_sw = fit_cox_working(&swapped, Target::Event).unwrap();
        let grid = [0.2, 0.6, 1.0];
        for z in [-0.5, 0.3] {
            let c1 = predict_conditional_survival(&s, &grid, true, &[z], 0.0);
            let c2 = predict_conditional_survival(&s_sw, &grid, false, &[z], 0.0);
            for (&t, _) in grid.iter().zip(0..) {
                assert_abs_diff_eq!(c1.value(t), c2.value(t), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn propensity_clipping_bounds_apply() {
        let m = PropensityModel {
            gamma: vec![3.5],
        };
        let raw = m.prob(&[]);
        assert!(raw > 0.9);
        assert_abs_diff_eq!(predict_propensity(&m, &[], (0.1, 0.9)), 0.9);
        assert_abs_diff_eq!(predict_propensity(&m, &[], (0.0, 1.0)), raw);
    }

    #[test]
    fn survival_prediction_starts_at_one_and_respects_floor() {
        // Events interleave across arms and covariate signs so the
        // partial-likelihood maximum is interior.
        let ds = dataset(
            vec![
                (0.1, true, true, vec![0.3]),
                (0.15, true, false, vec![-0.2]),
                (0.3, true, false, vec![0.4]),
                (0.35, true, true, vec![-0.1]),
                (0.5, true, true, vec![0.2]),
                (0.55, true, false, vec![-0.4]),
                (0.7, false, true, vec![0.1]),
                (0.9, false, false, vec![-0.3]),
            ],
            1.0,
        );
        let m = fit_cox_working(&ds, Target::Event).unwrap();
        let grid = [0.2, 0.4, 0.6, 0.8];
        let s = predict_conditional_survival(&m, &grid, true, &[0.0], 0.05);
        assert_eq!(s.value(0.0), 1.0);
        assert!(s.values().iter().all(|&v| (0.05..=1.0).contains(&v)));
        let mut prev = 1.0;
        for &v in s.values() {
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn null_coefficient_prediction_reduces_to_baseline() {
        let one_arm = dataset(
            vec![(0.5, true, true, vec![]), (0.9, true, true, vec![])],
            1.0,
        );
        let m = fit_cox_working(&one_arm, Target::Event).unwrap();
        let grid = [0.5, 0.9];
        let s = predict_conditional_survival(&m, &grid, true, &[], 0.0);
        for &t in &grid {
            assert_abs_diff_eq!(
                s.value(t),
                (-m.baseline.value(t)).exp(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn kaplan_meier_matches_hand_computation() {
        let ds = dataset(
            vec![
                (0.2, true, true, vec![]),
                (0.4, false, false, vec![]),
                (0.6, true, true, vec![]),
                (0.8, true, false, vec![]),
            ],
            1.0,
        );
        let km = fit_kaplan_meier(&ds, Target::Event).unwrap();
        assert_abs_diff_eq!(km.curve.value(0.2), 0.75, epsilon = 1e-12);
        // At 0.6: risk set {0.6, 0.8}, survival 0.75 * (1 - 1/2).
        assert_abs_diff_eq!(km.curve.value(0.7), 0.375, epsilon = 1e-12);
    }

    #[test]
    fn identity_nuisance_is_constant_and_unclipped() {
        let tri = identity_nuisance(0.5).unwrap();
        assert_abs_diff_eq!(tri.propensity(&[1.0, -1.0]), 0.5);
        let g = tri.on_grid(&[0.2, 0.8]);
        let mut row = [0.0; 2];
        g.fill_survival(true, &[0.3], &mut row);
        assert_eq!(row, [1.0, 1.0]);
        g.fill_censoring(false, &[0.3], &mut row);
        assert_eq!(row, [1.0, 1.0]);
        assert!(identity_nuisance(1.0).is_err());
        assert!(identity_nuisance(0.0).is_err());
    }

    #[test]
    fn grid_nuisance_matches_pointwise_prediction() {
        let ds = dataset(
            vec![
                (0.1, true, true, vec![0.3]),
                (0.15, true, false, vec![-0.2]),
                (0.3, true, false, vec![0.4]),
                (0.35, true, true, vec![-0.1]),
                (0.5, true, true, vec![0.2]),
                (0.55, true, false, vec![-0.4]),
                (0.7, false, true, vec![0.1]),
                (0.9, false, false, vec![-0.3]),
            ],
            1.0,
        );
        let triple = NuisanceTriple {
            propensity: PropensityKind::Constant(0.4),
            survival: SurvivalKind::Cox(fit_cox_working(&ds, Target::Event).unwrap()),
            censoring: SurvivalKind::KaplanMeier(
                fit_kaplan_meier(&ds, Target::Censoring).unwrap(),
            ),
            clip: ClipConfig::default(),
        };
        let grid = [0.2, 0.4, 0.7, 0.9];
        let g = triple.on_grid(&grid);
        let mut row = [0.0; 4];
        g.fill_survival(true, &[0.1], &mut row);
        if let SurvivalKind::Cox(m) = &triple.survival {
            let direct = predict_conditional_survival(m, &grid, true, &[0.1], 0.05);
            for (i, &t) in grid.iter().enumerate() {
                assert_abs_diff_eq!(row[i], direct.value(t), epsilon = 1e-12);
            }
        }
    }
}
