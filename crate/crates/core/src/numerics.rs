//! Shared numerical kernels: scalar root finding, small dense linear solves,
//! and right-continuous step functions.

use crate::error::Error;
use crate::Result;
use serde::Serialize;

/// 97.5% standard normal quantile, used for 95% confidence intervals.
pub const Z_975: f64 = 1.959963984540054;

/// Logistic function, numerically safe at both tails.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Find a root of `f` inside `[a, b]` by Brent's method.
///
/// Requires a sign change over the bracket. Converges to `xtol` absolute
/// precision in the argument or errors after `maxiter` iterations.
pub fn brent_root<F: Fn(f64) -> f64>(
    f: &F,
    mut a: f64,
    mut b: f64,
    xtol: f64,
    maxiter: usize,
) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::solver(format!(
            "no sign change on bracket [{a}, {b}]"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..maxiter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation (secant when only two points).
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b);
    }
    Err(Error::solver("root finder exceeded iteration budget"))
}

/// Root of `f` on an expanding bracket.
///
/// Starts from `[lo, hi]`; if the function does not change sign, both ends
/// grow geometrically (factor 1.5) until they reach `[max_lo, max_hi]`.
/// Errors if no sign change exists even on the widest bracket.
pub fn solve_expanding<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    max_lo: f64,
    max_hi: f64,
    xtol: f64,
    maxiter: usize,
) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    loop {
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        if fa.signum() != fb.signum() {
            return brent_root(f, a, b, xtol, maxiter);
        }
        if a <= max_lo && b >= max_hi {
            return Err(Error::solver(
                "estimating equation has no root in range",
            ));
        }
        a = (a * 1.5).max(max_lo);
        b = (b * 1.5).min(max_hi);
    }
}

/// Solve the symmetric positive definite system `A x = b` in place by
/// Cholesky factorization. `a` is row-major `p x p`; on success `b` holds
/// the solution.
pub fn cholesky_solve(a: &mut [f64], b: &mut [f64], p: usize) -> Result<()> {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);
    // Factor A = L L^T, storing L in the lower triangle.
    for j in 0..p {
        let mut diag = a[j * p + j];
        for k in 0..j {
            diag -= a[j * p + k] * a[j * p + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::solver("matrix is not positive definite"));
        }
        let ljj = diag.sqrt();
        a[j * p + j] = ljj;
        for i in (j + 1)..p {
            let mut v = a[i * p + j];
            for k in 0..j {
                v -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = v / ljj;
        }
    }
    // Forward substitution L y = b.
    for i in 0..p {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * p + k] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    // Back substitution L^T x = y.
    for i in (0..p).rev() {
        let mut v = b[i];
        for k in (i + 1)..p {
            v -= a[k * p + i] * b[k];
        }
        b[i] = v / a[i * p + i];
    }
    Ok(())
}

/// Invert a symmetric positive definite `p x p` matrix (row-major) via
/// Cholesky, returning the inverse. Used for small information matrices.
pub fn spd_inverse(a: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    for col in 0..p {
        let mut fac = a.to_vec();
        let mut e = vec![0.0; p];
        e[col] = 1.0;
        cholesky_solve(&mut fac, &mut e, p)?;
        for row in 0..p {
            inv[row * p + col] = e[row];
        }
    }
    Ok(inv)
}

/// A right-continuous step function on `[0, ∞)`.
///
/// `value(t)` equals `initial` for `t` strictly before the first jump time
/// and `values[i]` for the largest `times[i] <= t`. Jump times are strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    initial: f64,
}

impl StepFunction {
    /// Build from sorted times and post-jump values.
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Self {
        debug_assert_eq!(times.len(), values.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        StepFunction {
            times,
            values,
            initial,
        }
    }

    /// Build a cumulative function from per-time increments, starting at 0.
    pub fn from_increments(times: Vec<f64>, increments: &[f64]) -> Self {
        let mut acc = 0.0;
        let values = increments
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect();
        StepFunction::new(times, values, 0.0)
    }

    /// The identically-zero function.
    pub fn zero() -> Self {
        StepFunction::new(Vec::new(), Vec::new(), 0.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u <= t);
        if idx == 0 {
            self.initial
        } else {
            self.values[idx - 1]
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_nondecreasing(&self) -> bool {
        let mut prev = self.initial;
        self.values.iter().all(|&v| {
            let ok = v >= prev;
            prev = v;
            ok
        })
    }

    /// Pairs `(t, value)` for serialization.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brent_linear_root_at_zero() {
        let root = brent_root(&|x: f64| -x, -20.0, 20.0, 1e-12, 200).unwrap();
        assert_abs_diff_eq!(root, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn brent_shifted_tanh_root() {
        let f = |x: f64| (1.3 - x).tanh();
        let root = brent_root(&f, -20.0, 20.0, 1e-12, 200).unwrap();
        assert_abs_diff_eq!(root, 1.3, epsilon = 1e-8);
    }

    #[test]
    fn expanding_solver_reports_rootless_function() {
        let err = solve_expanding(&|x: f64| 1.0 + x * x, -20.0, 20.0, -50.0, 50.0, 1e-12, 200)
            .unwrap_err();
        assert!(err.to_string().contains("no root"));
    }

    #[test]
    fn expanding_solver_reaches_root_outside_initial_bracket() {
        let f = |x: f64| x - 30.0;
        let root = solve_expanding(&f, -20.0, 20.0, -50.0, 50.0, 1e-12, 200).unwrap();
        assert_abs_diff_eq!(root, 30.0, epsilon = 1e-8);
    }

    #[test]
    fn cholesky_solves_small_system() {
        // A = [[4,2],[2,3]], b = [2,1] -> x = [1/2, 0]
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        let mut b = vec![2.0, 1.0];
        cholesky_solve(&mut a, &mut b, 2).unwrap();
        assert_abs_diff_eq!(b[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        let mut b = vec![1.0, 1.0];
        assert!(cholesky_solve(&mut a, &mut b, 2).is_err());
    }

    #[test]
    fn spd_inverse_matches_hand_inverse() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let inv = spd_inverse(&a, 2).unwrap();
        // det = 8, inverse = [[3,-2],[-2,4]]/8
        assert_abs_diff_eq!(inv[0], 3.0 / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[1], -2.0 / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(inv[3], 4.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn step_function_right_continuous_lookup() {
        let s = StepFunction::new(vec![1.0, 2.0], vec![0.5, 0.2], 1.0);
        assert_eq!(s.value(0.0), 1.0);
        assert_eq!(s.value(0.999), 1.0);
        assert_eq!(s.value(1.0), 0.5);
        assert_eq!(s.value(1.5), 0.5);
        assert_eq!(s.value(2.0), 0.2);
        assert_eq!(s.value(9.0), 0.2);
    }

    #[test]
    fn step_function_from_increments_accumulates() {
        let s = StepFunction::from_increments(vec![1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]);
        assert_abs_diff_eq!(s.value(2.5), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.value(3.0), 0.6, epsilon = 1e-15);
        assert!(s.is_nondecreasing());
    }

    #[test]
    fn expit_is_safe_at_tails() {
        assert_eq!(expit(1000.0), 1.0);
        assert_eq!(expit(-1000.0), 0.0);
        assert_abs_diff_eq!(expit(0.0), 0.5, epsilon = 1e-15);
    }
}
