//! Numerical evaluation of the population target: given the marginal laws
//! of the two potential outcome times, the time-averaged log hazard ratio
//! `beta*` is the root of
//!
//! ```text
//! h(beta) = F1(tau) - \int_0^tau E(beta, t) {f0(t) + f1(t)} dt,
//! E(beta, t) = e^beta S1(t) / {S0(t) + e^beta S1(t)},
//! ```
//!
//! where `S_a`, `f_a`, `F_a` are the arm-`a` survival, density, and
//! distribution functions. `h` is strictly decreasing, so the root is
//! unique whenever both arms carry event mass inside the window. The
//! companion baseline is
//! `Lambda*(t) = \int_0^t {f0 + f1} / {S0 + e^{beta*} S1}`.
//!
//! Both the event-mass term and the integral term are evaluated with the
//! same midpoint rule on the same panels, so laws with a constant log
//! hazard ratio solve to machine precision.

use crate::error::Error;
use crate::numerics::solve_expanding;
use crate::Result;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use std::sync::OnceLock;

/// Marginal potential-outcome laws `T(0), T(1)` available to the solver.
///
/// The serialized form is a tagged object, e.g.
/// `{"family": "proportional-hazards-exponential", "rate0": 1.0, "log_hr": -1.0}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialOutcomeLaw {
    /// Constant-rate arms `S_a(t) = exp(-t rate0 exp(log_hr a))`: the log
    /// hazard ratio is constant, so the target equals `log_hr` exactly.
    ProportionalHazardsExponential { rate0: f64, log_hr: f64 },
    /// `log T(a) ~ Normal(mu[a], sigma[a])`.
    Lognormal { mu: [f64; 2], sigma: [f64; 2] },
    /// `T(a) ~ Uniform(0, upper[a])`.
    Uniform { upper: [f64; 2] },
    /// Location-shift model on the log scale: `log T(a) = gamma a + eps`
    /// with `P(eps > x) = (1 + rho e^x)^(-1/rho)`; `rho = 0` is the
    /// extreme-value limit. The infinite-horizon target is
    /// `-gamma / (rho + 1)`.
    LogisticAft { gamma: f64, rho: f64 },
    /// Conditional hazard `exp(c0 + c_a a + c_z z)` with `z ~ Uniform(-1, 1)`,
    /// marginalized numerically.
    ConditionalCoxUniformZ { c0: f64, c_a: f64, c_z: f64 },
    /// Half/half mixture on the sign of `z ~ Uniform(-1, 1)`: conditional
    /// hazard `exp(c0 + c_a a + c_z z)` when `z <= 0`, and
    /// `T ~ Uniform(0, upper)` free of `a` and `z` when `z > 0`.
    MixtureCoxUniform {
        c0: f64,
        c_a: f64,
        c_z: f64,
        upper: f64,
    },
}

const GAUSS_NODES: usize = 64;

/// Gauss-Legendre nodes and weights on [-1, 1], computed once by Newton
/// iteration on the Legendre recurrence.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static CELL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let n = GAUSS_NODES;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            loop {
                // Legendre P_n(x) and its derivative by recurrence.
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let w = 2.0 / ((1.0 - x * x) * dp * dp);
                    nodes[i] = -x;
                    nodes[n - 1 - i] = x;
                    weights[i] = w;
                    weights[n - 1 - i] = w;
                    break;
                }
            }
        }
        (nodes, weights)
    })
}

/// Average `g(z)` over `z ~ Uniform(lo, hi)`.
fn uniform_average(lo: f64, hi: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let c = 0.5 * (hi - lo);
    let m = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * g(m + c * x);
    }
    // Gauss weights sum to 2; averaging removes the interval length.
    acc * 0.5
}

impl PotentialOutcomeLaw {
    /// Marginal survival `P(T(a) > t)`.
    pub fn survival(&self, a: bool, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let af = a as u8 as f64;
        match self {
            PotentialOutcomeLaw::ProportionalHazardsExponential { rate0, log_hr } => {
                (-t * rate0 * (log_hr * af).exp()).exp()
            }
            PotentialOutcomeLaw::Lognormal { mu, sigma } => {
                let nd = Normal::new(0.0, 1.0).expect("unit normal");
                1.0 - nd.cdf((t.ln() - mu[a as usize]) / sigma[a as usize])
            }
            PotentialOutcomeLaw::Uniform { upper } => (1.0 - t / upper[a as usize]).max(0.0),
            PotentialOutcomeLaw::LogisticAft { gamma, rho } => {
                let x = t * (-gamma * af).exp();
                if *rho == 0.0 {
                    (-x).exp()
                } else {
                    (1.0 + rho * x).powf(-1.0 / rho)
                }
            }
            PotentialOutcomeLaw::ConditionalCoxUniformZ { c0, c_a, c_z } => {
                uniform_average(-1.0, 1.0, |z| (-t * (c0 + c_a * af + c_z * z).exp()).exp())
            }
            PotentialOutcomeLaw::MixtureCoxUniform {
                c0,
                c_a,
                c_z,
                upper,
            } => {
                let cox = uniform_average(-1.0, 0.0, |z| {
                    (-t * (c0 + c_a * af + c_z * z).exp()).exp()
                });
                let unif = (1.0 - t / upper).max(0.0);
                0.5 * cox + 0.5 * unif
            }
        }
    }

    /// Marginal density `f_a(t)`.
    pub fn density(&self, a: bool, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let af = a as u8 as f64;
        match self {
            PotentialOutcomeLaw::ProportionalHazardsExponential { rate0, log_hr } => {
                let rate = rate0 * (log_hr * af).exp();
                rate * (-t * rate).exp()
            }
            PotentialOutcomeLaw::Lognormal { mu, sigma } => {
                let nd = Normal::new(0.0, 1.0).expect("unit normal");
                let s = sigma[a as usize];
                nd.pdf((t.ln() - mu[a as usize]) / s) / (t * s)
            }
            PotentialOutcomeLaw::Uniform { upper } => {
                let b = upper[a as usize];
                if t < b {
                    1.0 / b
                } else {
                    0.0
                }
            }
            PotentialOutcomeLaw::LogisticAft { gamma, rho } => {
                let r = (-gamma * af).exp();
                let x = t * r;
                if *rho == 0.0 {
                    r * (-x).exp()
                } else {
                    r * (1.0 + rho * x).powf(-1.0 / rho - 1.0)
                }
            }
            PotentialOutcomeLaw::ConditionalCoxUniformZ { c0, c_a, c_z } => {
                uniform_average(-1.0, 1.0, |z| {
                    let rate = (c0 + c_a * af + c_z * z).exp();
                    rate * (-t * rate).exp()
                })
            }
            PotentialOutcomeLaw::MixtureCoxUniform {
                c0,
                c_a,
                c_z,
                upper,
            } => {
                let cox = uniform_average(-1.0, 0.0, |z| {
                    let rate = (c0 + c_a * af + c_z * z).exp();
                    rate * (-t * rate).exp()
                });
                let unif = if t < *upper { 1.0 / upper } else { 0.0 };
                0.5 * cox + 0.5 * unif
            }
        }
    }

    /// Marginal hazard `f_a(t) / S_a(t)`.
    pub fn hazard(&self, a: bool, t: f64) -> f64 {
        self.density(a, t) / self.survival(a, t)
    }

    /// Times in `(0, infinity)` where a density or survival piece changes
    /// regime; quadrature panels never straddle them.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            PotentialOutcomeLaw::Uniform { upper } => vec![upper[0], upper[1]],
            PotentialOutcomeLaw::MixtureCoxUniform { upper, .. } => vec![*upper],
            _ => Vec::new(),
        }
    }

    /// Whether the law has a polynomial tail that calls for log-spaced
    /// panels over long horizons.
    fn heavy_tail(&self) -> bool {
        matches!(self, PotentialOutcomeLaw::LogisticAft { rho, .. } if *rho > 0.0)
    }

    /// Reject parameter values outside each family's domain.
    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64], what: &str| -> Result<()> {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("{what} must be finite")));
            }
            Ok(())
        };
        match self {
            PotentialOutcomeLaw::ProportionalHazardsExponential { rate0, log_hr } => {
                finite(&[*rate0, *log_hr], "hazard parameters")?;
                if *rate0 <= 0.0 {
                    return Err(Error::config("baseline rate must be positive"));
                }
            }
            PotentialOutcomeLaw::Lognormal { mu, sigma } => {
                finite(&[mu[0], mu[1], sigma[0], sigma[1]], "lognormal parameters")?;
                if sigma.iter().any(|s| *s <= 0.0) {
                    return Err(Error::config("lognormal sigma must be positive"));
                }
            }
            PotentialOutcomeLaw::Uniform { upper } => {
                finite(&[upper[0], upper[1]], "uniform bounds")?;
                if upper.iter().any(|u| *u <= 0.0) {
                    return Err(Error::config("uniform upper bound must be positive"));
                }
            }
            PotentialOutcomeLaw::LogisticAft { gamma, rho } => {
                finite(&[*gamma, *rho], "location-shift parameters")?;
                if *rho < 0.0 {
                    return Err(Error::config("tail parameter rho must be nonnegative"));
                }
            }
            PotentialOutcomeLaw::ConditionalCoxUniformZ { c0, c_a, c_z } => {
                finite(&[*c0, *c_a, *c_z], "conditional hazard coefficients")?;
            }
            PotentialOutcomeLaw::MixtureCoxUniform { c0, c_a, c_z, upper } => {
                finite(&[*c0, *c_a, *c_z, *upper], "mixture parameters")?;
                if *upper <= 0.0 {
                    return Err(Error::config("mixture upper bound must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Total number of quadrature panels used on `[0, tau]`.
pub const QUADRATURE_PANELS: usize = 20_000;

/// Panel edges on `[0, tau]`: uniform by default, split at law
/// breakpoints; heavy-tailed laws over long horizons get a uniform block
/// on `[0, 1]` plus geometrically spaced panels on `[1, tau]`.
fn panel_edges(law: &PotentialOutcomeLaw, tau: f64) -> Vec<f64> {
    let n = QUADRATURE_PANELS;
    if law.heavy_tail() && tau > 10.0 {
        let n1 = n / 2;
        let n2 = n - n1;
        let mut edges = Vec::with_capacity(n + 1);
        for i in 0..=n1 {
            edges.push(i as f64 / n1 as f64);
        }
        let l = tau.ln();
        for i in 1..=n2 {
            edges.push((l * i as f64 / n2 as f64).exp());
        }
        return edges;
    }
    let mut cuts: Vec<f64> = law
        .breakpoints()
        .into_iter()
        .filter(|b| *b > 0.0 && *b < tau)
        .collect();
    cuts.push(0.0);
    cuts.push(tau);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(n + cuts.len());
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let m = (((hi - lo) / tau * n as f64).ceil() as usize).max(1);
        for i in 0..m {
            edges.push(lo + (hi - lo) * i as f64 / m as f64);
        }
    }
    edges.push(tau);
    edges
}

/// Law ingredients pre-evaluated at panel midpoints, so the root search
/// costs one pass per iteration.
struct PanelCache {
    mids: Vec<f64>,
    widths: Vec<f64>,
    s0: Vec<f64>,
    s1: Vec<f64>,
    fsum: Vec<f64>,
    f1: Vec<f64>,
}

fn build_cache(law: &PotentialOutcomeLaw, tau: f64) -> PanelCache {
    let edges = panel_edges(law, tau);
    let m = edges.len() - 1;
    let mut cache = PanelCache {
        mids: Vec::with_capacity(m),
        widths: Vec::with_capacity(m),
        s0: Vec::with_capacity(m),
        s1: Vec::with_capacity(m),
        fsum: Vec::with_capacity(m),
        f1: Vec::with_capacity(m),
    };
    for seg in edges.windows(2) {
        let w = seg[1] - seg[0];
        if w <= 0.0 {
            continue;
        }
        let t = 0.5 * (seg[0] + seg[1]);
        let f0 = law.density(false, t);
        let f1 = law.density(true, t);
        cache.mids.push(t);
        cache.widths.push(w);
        cache.s0.push(law.survival(false, t));
        cache.s1.push(law.survival(true, t));
        cache.fsum.push(f0 + f1);
        cache.f1.push(f1);
    }
    cache
}

/// The weighted risk-set fraction `E(beta, t)`, guarded against a vanishing
/// denominator deep in the tail.
fn script_e(beta: f64, s0: f64, s1: f64) -> f64 {
    let eb = beta.exp();
    let den = s0 + eb * s1;
    if den > 0.0 {
        eb * s1 / den
    } else {
        0.0
    }
}

fn h_on_cache(cache: &PanelCache, beta: f64) -> f64 {
    let mut h = 0.0;
    for i in 0..cache.mids.len() {
        let e = script_e(beta, cache.s0[i], cache.s1[i]);
        h += (cache.f1[i] - e * cache.fsum[i]) * cache.widths[i];
    }
    h
}

/// The defining residual `h(beta)` for a law over `[0, tau]`.
pub fn h_function(law: &PotentialOutcomeLaw, tau: f64, beta: f64) -> f64 {
    h_on_cache(&build_cache(law, tau), beta)
}

/// Solved population target.
#[derive(Debug, Clone, Serialize)]
pub struct EstimandSolution {
    pub beta_star: f64,
    /// Residual of the defining equation at the reported root.
    pub h_residual: f64,
}

/// Solve `h(beta) = 0` for the law over `[0, tau]`.
pub fn beta_star(law: &PotentialOutcomeLaw, tau: f64) -> Result<EstimandSolution> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config("tau must be positive and finite"));
    }
    law.validate()?;
    let cache = build_cache(law, tau);
    let f = |b: f64| h_on_cache(&cache, b);
    let root = solve_expanding(&f, -20.0, 20.0, -50.0, 50.0, 1e-12, 200)?;
    Ok(EstimandSolution {
        beta_star: root,
        h_residual: f(root),
    })
}

/// Pointwise log hazard ratio of the marginal laws,
/// `log{f1(t)/S1(t)} - log{f0(t)/S0(t)}`.
pub fn beta_of_t(law: &PotentialOutcomeLaw, t: f64) -> f64 {
    law.hazard(true, t).ln() - law.hazard(false, t).ln()
}

/// Companion cumulative baseline `Lambda*` at the requested times, using
/// the solved `beta_star`.
pub fn lambda_star(
    law: &PotentialOutcomeLaw,
    tau: f64,
    beta_star: f64,
    times: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let eb = beta_star.exp();
    let cache = build_cache(law, tau);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=tau).contains(&t) {
            return Err(Error::config(format!(
                "baseline time {t} outside the window [0, {tau}]"
            )));
        }
        let mut acc = 0.0;
        for i in 0..cache.mids.len() {
            let lo = cache.mids[i] - 0.5 * cache.widths[i];
            if lo >= t {
                break;
            }
            let hi = cache.mids[i] + 0.5 * cache.widths[i];
            let integrand = |u: f64| {
                let s0 = law.survival(false, u);
                let s1 = law.survival(true, u);
                let den = s0 + eb * s1;
                if den > 0.0 {
                    (law.density(false, u) + law.density(true, u)) / den
                } else {
                    0.0
                }
            };
            if hi <= t {
                acc += integrand(cache.mids[i]) * cache.widths[i];
            } else {
                acc += integrand(0.5 * (lo + t)) * (t - lo);
            }
        }
        out.push((t, acc));
    }
    Ok(out)
}
