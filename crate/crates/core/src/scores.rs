//! Discrete augmented score terms evaluated on a shared time grid.
//!
//! Every estimator-side quantity is a sum over a finite grid of time points:
//! the union of observed event times, observed censoring times, and the jump
//! times of the fitted survival and censoring curves, restricted to
//! `(0, tau]`. On that grid each subject contributes increment processes
//! `dn0`, `dn1` (augmented counting-process increments for treatment powers
//! 0 and 1) and at-risk processes built from `u`, `k0`, `k1` that assemble
//! into the weighted risk-set averages entering the estimating equation.

use crate::data::{Dataset, SurvivalRecord};
use crate::error::Error;
use crate::nuisance::{GridNuisance, NuisanceTriple, SurvivalKind};
use crate::Result;

/// Guard added to risk-set denominators before division.
pub const DENOMINATOR_GUARD: f64 = 1e-8;

/// Sorted, de-duplicated evaluation times in `(0, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the exact grid time `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&u| u < t);
        (i < self.times.len() && self.times[i] == t).then_some(i)
    }
}

fn survival_jump_times(kind: &SurvivalKind) -> &[f64] {
    match kind {
        SurvivalKind::Cox(m) => m.baseline.times(),
        SurvivalKind::KaplanMeier(m) => m.curve.times(),
        SurvivalKind::One | SurvivalKind::Analytic(_) => &[],
    }
}

/// Union of event times, censoring times, and fitted-curve jump times,
/// restricted to `(0, tau]`.
pub fn build_time_grid(data: &Dataset, nuis: &NuisanceTriple) -> Result<TimeGrid> {
    build_time_grid_multi(data, std::iter::once(nuis))
}

/// Grid shared across several nuisance triples (one per training fold):
/// the union of the data times and every triple's jump times in `(0, tau]`.
pub fn build_time_grid_multi<'a>(
    data: &Dataset,
    nuis: impl IntoIterator<Item = &'a NuisanceTriple>,
) -> Result<TimeGrid> {
    let tau = data.tau();
    let mut times: Vec<f64> = Vec::with_capacity(2 * data.n());
    for r in data.records() {
        if r.x > 0.0 && r.x <= tau {
            times.push(r.x);
        }
    }
    for triple in nuis {
        for t in survival_jump_times(&triple.survival)
            .iter()
            .chain(survival_jump_times(&triple.censoring))
        {
            if *t > 0.0 && *t <= tau {
                times.push(*t);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        return Err(Error::data(
            "empty time grid: no event, censoring, or model jump times in (0, tau]",
        ));
    }
    Ok(TimeGrid { times })
}

/// One subject's score ingredients on the grid.
///
/// `dn0`/`dn1` are the augmented counting increments; `u` is the inverse
/// weighted at-risk residual for the observed arm; `k0`/`k1` are the
/// augmentation curves for each arm; `j0`/`j1` the cumulative censoring
/// martingale transforms.
#[derive(Debug, Clone)]
pub struct SubjectScores {
    pub dn0: Vec<f64>,
    pub dn1: Vec<f64>,
    pub u: Vec<f64>,
    pub k0: Vec<f64>,
    pub k1: Vec<f64>,
    pub j0: Vec<f64>,
    pub j1: Vec<f64>,
    pub a: bool,
}

impl SubjectScores {
    /// At-risk contribution for treatment power 0 at `beta`:
    /// `exp(beta a_i) u + k0 + exp(beta) k1`.
    pub fn gamma0(&self, g: usize, beta: f64) -> f64 {
        let eb = beta.exp();
        let eba = if self.a { eb } else { 1.0 };
        eba * self.u[g] + self.k0[g] + eb * self.k1[g]
    }

    /// At-risk contribution for treatment power 1 at `beta`:
    /// `a_i exp(beta) u + exp(beta) k1`.
    pub fn gamma1(&self, g: usize, beta: f64) -> f64 {
        let eb = beta.exp();
        let first = if self.a { eb * self.u[g] } else { 0.0 };
        first + eb * self.k1[g]
    }
}

/// Censoring-martingale increments for one subject against one arm's
/// fitted censoring curve: `1{x = u, censored} - 1{x >= u} dLambda_c(u)`,
/// with `dLambda_c = -d log S_c` taken after clipping.
///
/// Reaching the end of the window without an event is administrative,
/// not loss to follow-up, so `x = tau` never counts as a censoring event
/// (matching the censoring working-model convention).
pub fn censoring_martingale_increments(
    rec: &SurvivalRecord,
    grid: &[f64],
    sc_row: &[f64],
    tau: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    let mut prev_log = 0.0;
    for (g, (&t, &sc)) in grid.iter().zip(sc_row).enumerate() {
        let lsc = sc.ln();
        let dlam = prev_log - lsc;
        prev_log = lsc;
        let censored_here = !rec.delta && rec.x == t && rec.x < tau;
        let at_risk = rec.x >= t;
        out[g] = (censored_here as u8 as f64) - (at_risk as u8 as f64) * dlam;
    }
    out
}

/// Evaluate one subject's score ingredients against nuisances bound to a
/// grid. Runs in O(grid) time and memory.
pub fn compute_subject_scores(
    rec: &SurvivalRecord,
    gn: &GridNuisance<'_>,
    tau: f64,
) -> SubjectScores {
    let grid = gn.grid();
    let glen = grid.len();
    let pi = gn.propensity(&rec.z);
    let pi_obs = if rec.a { pi } else { 1.0 - pi };
    let w1 = if rec.a { 1.0 / pi } else { 0.0 };
    let w0 = if rec.a { 0.0 } else { 1.0 / (1.0 - pi) };

    let mut s0 = vec![0.0; glen];
    let mut s1 = vec![0.0; glen];
    let mut sc0 = vec![0.0; glen];
    let mut sc1 = vec![0.0; glen];
    gn.fill_survival(false, &rec.z, &mut s0);
    gn.fill_survival(true, &rec.z, &mut s1);
    gn.fill_censoring(false, &rec.z, &mut sc0);
    gn.fill_censoring(true, &rec.z, &mut sc1);

    let mut j0 = vec![0.0; glen];
    let mut j1 = vec![0.0; glen];
    for (j, s, sc) in [(&mut j0, &s0, &sc0), (&mut j1, &s1, &sc1)] {
        let dmc = censoring_martingale_increments(rec, grid, sc, tau);
        let mut cum = 0.0;
        for g in 0..glen {
            cum += dmc[g] / (s[g] * sc[g]);
            j[g] = cum;
        }
    }

    let x_idx = grid.partition_point(|&t| t < rec.x);
    let x_on_grid = x_idx < glen && grid[x_idx] == rec.x;

    let mut dn0 = vec![0.0; glen];
    let mut dn1 = vec![0.0; glen];
    let mut u = vec![0.0; glen];
    let mut k0 = vec![0.0; glen];
    let mut k1 = vec![0.0; glen];
    let mut prev = [1.0, 1.0];
    for g in 0..glen {
        let ds = [s0[g] - prev[0], s1[g] - prev[1]];
        prev = [s0[g], s1[g]];
        let (s_obs, sc_obs, ds_obs) = if rec.a {
            (s1[g], sc1[g], ds[1])
        } else {
            (s0[g], sc0[g], ds[0])
        };
        let dn = (rec.delta && x_on_grid && g == x_idx) as u8 as f64;
        let first = dn / (pi_obs * sc_obs) + ds_obs / pi_obs;
        let aug0 = (1.0 + w0 * j0[g]) * ds[0];
        let aug1 = (1.0 + w1 * j1[g]) * ds[1];
        dn0[g] = first - aug0 - aug1;
        dn1[g] = if rec.a { first } else { 0.0 } - aug1;
        let y = (rec.x >= grid[g]) as u8 as f64;
        u[g] = y / (pi_obs * sc_obs) - s_obs / pi_obs;
        k0[g] = (1.0 + w0 * j0[g]) * s0[g];
        k1[g] = (1.0 + w1 * j1[g]) * s1[g];
    }

    SubjectScores {
        dn0,
        dn1,
        u,
        k0,
        k1,
        j0,
        j1,
        a: rec.a,
    }
}

/// Per-fold sums of subject scores, closed under addition so the full pass
/// streams one subject at a time.
#[derive(Debug, Clone)]
pub struct FoldAggregates {
    /// Sum over fold subjects of `(1 - a_i) u_i + k0_i` at each grid time.
    pub p0: Vec<f64>,
    /// Sum over fold subjects of `a_i u_i + k1_i` at each grid time.
    pub p1: Vec<f64>,
    /// Sum of `dn0` at each grid time.
    pub n0: Vec<f64>,
    /// Sum over subjects and grid times of `dn1`.
    pub d1: f64,
    pub count: usize,
}

impl FoldAggregates {
    pub fn new(glen: usize) -> Self {
        FoldAggregates {
            p0: vec![0.0; glen],
            p1: vec![0.0; glen],
            n0: vec![0.0; glen],
            d1: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, sc: &SubjectScores) {
        let a = sc.a as u8 as f64;
        for g in 0..self.p0.len() {
            self.p0[g] += (1.0 - a) * sc.u[g] + sc.k0[g];
            self.p1[g] += a * sc.u[g] + sc.k1[g];
            self.n0[g] += sc.dn0[g];
            self.d1 += sc.dn1[g];
        }
        self.count += 1;
    }

    /// Fold-mean of `p0` at a grid time.
    pub fn p0_mean(&self, g: usize) -> f64 {
        self.p0[g] / self.count as f64
    }

    pub fn p1_mean(&self, g: usize) -> f64 {
        self.p1[g] / self.count as f64
    }

    pub fn n0_mean(&self, g: usize) -> f64 {
        self.n0[g] / self.count as f64
    }

    pub fn d1_mean(&self) -> f64 {
        self.d1 / self.count as f64
    }
}

/// Risk-set averages at a fixed `beta`, assembled from fold aggregates.
#[derive(Debug, Clone)]
pub struct AggregatedScores {
    /// Mean at-risk total `s0 = p0 + exp(beta) p1`.
    pub s0: Vec<f64>,
    /// Mean treated at-risk total `s1 = exp(beta) p1`.
    pub s1: Vec<f64>,
    /// Weighted risk-set treatment average `s1 / s0`.
    pub abar: Vec<f64>,
    /// Risk-set treatment variance `abar (1 - abar)` analogue.
    pub v: Vec<f64>,
    /// Number of grid times where the denominator guard was binding.
    pub guarded: usize,
}

/// Assemble risk-set averages from fold aggregates at `beta`, guarding
/// denominators below [`DENOMINATOR_GUARD`].
pub fn aggregate_scores(fold: &FoldAggregates, beta: f64) -> AggregatedScores {
    let eb = beta.exp();
    let glen = fold.p0.len();
    let mut s0 = vec![0.0; glen];
    let mut s1 = vec![0.0; glen];
    let mut abar = vec![0.0; glen];
    let mut v = vec![0.0; glen];
    let mut guarded = 0;
    for g in 0..glen {
        let p0 = fold.p0_mean(g);
        let p1 = fold.p1_mean(g);
        s0[g] = p0 + eb * p1;
        s1[g] = eb * p1;
        let den = if s0[g].abs() < DENOMINATOR_GUARD {
            guarded += 1;
            DENOMINATOR_GUARD
        } else {
            s0[g]
        };
        abar[g] = s1[g] / den;
        v[g] = abar[g] - abar[g] * abar[g];
    }
    AggregatedScores {
        s0,
        s1,
        abar,
        v,
        guarded,
    }
}

/// Compute scores for every listed subject and fold them into aggregates.
pub fn accumulate_fold(
    data: &Dataset,
    indices: &[usize],
    gn: &GridNuisance<'_>,
) -> FoldAggregates {
    let mut agg = FoldAggregates::new(gn.grid().len());
    for &i in indices {
        let sc = compute_subject_scores(&data.records()[i], gn, data.tau());
        agg.add(&sc);
    }
    agg
}
