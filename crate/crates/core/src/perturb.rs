//! Perturbation functions `phi: R+ -> R+` and their iterated compositions.
//!
//! A map `T` with `d(Tx, Ty) <= phi(d(x, y))` in both directions is a
//! phi-isometry. Everything downstream (midpoint bounds, simulators) is
//! parametrized by one of the forms here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{self, QuadratureError, QuadratureOptions};

/// Values above this are treated as overflow by [`iterate`].
pub const DEFAULT_CEILING: f64 = 1e300;
/// Maximum number of explicit compositions for kinds without a closed form.
pub const DEFAULT_ITERATION_CAP: u128 = 1 << 20;
/// Relative slack used by [`check_halving`].
pub const HALVING_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("argument must be non-negative, got {0}")]
    NegativeInput(f64),
    #[error("argument must be finite, got {0}")]
    NonFinite(f64),
    #[error("iterated value exceeded the ceiling {ceiling:e} after {steps} compositions")]
    PositiveOverflow { ceiling: f64, steps: u128 },
    #[error("{requested} compositions requested, cap is {cap}")]
    CapExceeded { requested: u128, cap: u128 },
    #[error("phi(x) - x vanishes at x = {0}")]
    EpsVanishes(f64),
    #[error("invalid perturbation function: {0}")]
    Invalid(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// A non-decreasing perturbation function with a tagged analytic form.
///
/// JSON form: `{"kind": "affine", "m": 1.1, "l": 0.0}`; tabulated knots are
/// `[t, value]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationFunction {
    Identity,
    /// `phi(t) = m t + l`.
    Affine {
        m: f64,
        l: f64,
    },
    /// `phi(t) = t + c t^alpha`.
    AdditivePower {
        alpha: f64,
        c: f64,
    },
    /// Piecewise-linear interpolation through `knots`.
    Tabulated {
        knots: Vec<(f64, f64)>,
    },
}

impl PerturbationFunction {
    pub fn affine(m: f64, l: f64) -> Result<Self, PerturbError> {
        let phi = Self::Affine { m, l };
        phi.validate()?;
        Ok(phi)
    }

    pub fn additive_power(alpha: f64, c: f64) -> Result<Self, PerturbError> {
        let phi = Self::AdditivePower { alpha, c };
        phi.validate()?;
        Ok(phi)
    }

    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self, PerturbError> {
        let phi = Self::Tabulated { knots };
        phi.validate()?;
        Ok(phi)
    }

    /// Checks parameter ranges. Deserialized values should be passed through
    /// this before use.
    pub fn validate(&self) -> Result<(), PerturbError> {
        match self {
            Self::Identity => Ok(()),
            Self::Affine { m, l } => {
                if !(m.is_finite() && *m >= 0.0 && l.is_finite() && *l >= 0.0) {
                    return Err(PerturbError::Invalid(format!(
                        "affine needs finite m >= 0 and l >= 0, got m={m}, l={l}"
                    )));
                }
                Ok(())
            }
            Self::AdditivePower { alpha, c } => {
                if !((0.0..1.0).contains(alpha) && c.is_finite() && *c > 0.0) {
                    return Err(PerturbError::Invalid(format!(
                        "additive power needs alpha in [0, 1) and c > 0, got alpha={alpha}, c={c}"
                    )));
                }
                Ok(())
            }
            Self::Tabulated { knots } => {
                if knots.is_empty() {
                    return Err(PerturbError::Invalid("tabulated needs at least one knot".into()));
                }
                for &(t, v) in knots {
                    if !(t.is_finite() && v.is_finite() && t >= 0.0 && v >= 0.0) {
                        return Err(PerturbError::Invalid(format!(
                            "knot ({t}, {v}) must be finite and non-negative"
                        )));
                    }
                }
                for w in knots.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(PerturbError::Invalid("knot abscissae must increase".into()));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(PerturbError::Invalid("knot values must not decrease".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluates `phi(t)`.
    pub fn eval(&self, t: f64) -> Result<f64, PerturbError> {
        if !t.is_finite() {
            return Err(PerturbError::NonFinite(t));
        }
        if t < 0.0 {
            return Err(PerturbError::NegativeInput(t));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self {
            Self::Identity => t,
            Self::Affine { m, l } => m * t + l,
            Self::AdditivePower { alpha, c } => t + c * t.powf(*alpha),
            Self::Tabulated { knots } => eval_tabulated(knots, t),
        }
    }

    /// `phi(t) - t`, the additive perturbation.
    pub fn excess(&self, t: f64) -> f64 {
        self.eval_unchecked(t) - t
    }

    /// Abscissae where the function is not smooth (for quadrature splitting).
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Self::Tabulated { knots } => knots.iter().map(|k| k.0).collect(),
            _ => Vec::new(),
        }
    }

    /// Whether [`iterate`] uses a closed form for any composition count.
    pub fn has_closed_form(&self) -> bool {
        matches!(self, Self::Identity | Self::Affine { .. })
    }

    /// An affine pair `(m, l)` with `phi(t) <= m t + l` for all `t >= 0`,
    /// when one is available.
    pub fn affine_majorant(&self) -> Option<(f64, f64)> {
        match self {
            Self::Identity => Some((1.0, 0.0)),
            Self::Affine { m, l } => Some((*m, *l)),
            // t^alpha <= 1 + t on t >= 0 (alpha < 1)
            Self::AdditivePower { c, .. } => Some((1.0 + c, *c)),
            Self::Tabulated { knots } => {
                // slopes of every segment plus both extrapolations
                let (s_left, s_right) = end_slopes(knots);
                let mut slope = s_left.max(s_right);
                for w in knots.windows(2) {
                    slope = slope.max((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
                }
                let offset = knots
                    .iter()
                    .map(|&(t, v)| v - slope * t)
                    .fold(eval_tabulated(knots, 0.0), f64::max);
                Some((slope, offset.max(0.0)))
            }
        }
    }
}

fn end_slopes(knots: &[(f64, f64)]) -> (f64, f64) {
    if knots.len() < 2 {
        return (1.0, 1.0);
    }
    let n = knots.len();
    let left = (knots[1].1 - knots[0].1) / (knots[1].0 - knots[0].0);
    let right = (knots[n - 1].1 - knots[n - 2].1) / (knots[n - 1].0 - knots[n - 2].0);
    (left, right.max(1.0))
}

fn eval_tabulated(knots: &[(f64, f64)], t: f64) -> f64 {
    let (s_left, s_right) = end_slopes(knots);
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if t <= first.0 {
        return (first.1 - s_left * (first.0 - t)).max(0.0);
    }
    if t >= last.0 {
        return last.1 + s_right * (t - last.0);
    }
    let idx = knots.partition_point(|k| k.0 <= t);
    let (t0, v0) = knots[idx - 1];
    let (t1, v1) = knots[idx];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Knobs for [`iterate_with`].
#[derive(Debug, Clone, Copy)]
pub struct IterateOptions {
    pub cap: u128,
    pub ceiling: f64,
}

impl Default for IterateOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_ITERATION_CAP,
            ceiling: DEFAULT_CEILING,
        }
    }
}

/// `phi` composed `m` times, evaluated at `t`.
pub fn iterate(phi: &PerturbationFunction, m: u128, t: f64) -> Result<f64, PerturbError> {
    iterate_with(phi, m, t, IterateOptions::default())
}

pub fn iterate_with(phi: &PerturbationFunction, m: u128, t: f64, opts: IterateOptions) -> Result<f64, PerturbError> {
    let mut value = phi.eval(t)?;
    if m == 0 {
        return Ok(t);
    }
    let overflow = |steps| PerturbError::PositiveOverflow {
        ceiling: opts.ceiling,
        steps,
    };
    match phi {
        PerturbationFunction::Identity => Ok(t),
        PerturbationFunction::Affine { m: slope, l } => {
            let v = affine_closed_form(*slope, *l, m, t);
            if v.is_finite() && v <= opts.ceiling {
                Ok(v)
            } else {
                Err(overflow(m))
            }
        }
        _ => {
            if m > opts.cap {
                return Err(PerturbError::CapExceeded {
                    requested: m,
                    cap: opts.cap,
                });
            }
            for step in 1..m {
                if !(value <= opts.ceiling) {
                    return Err(overflow(step));
                }
                value = phi.eval_unchecked(value);
            }
            if value.is_finite() && value <= opts.ceiling {
                Ok(value)
            } else {
                Err(overflow(m))
            }
        }
    }
}

/// `(m t + l)` composed `count` times: `m^count t + l (m^count - 1)/(m - 1)`.
fn affine_closed_form(slope: f64, l: f64, count: u128, t: f64) -> f64 {
    let n = count as f64;
    if slope == 1.0 {
        return t + n * l;
    }
    if slope == 0.0 {
        return l;
    }
    let log_m = slope.ln();
    let power = (n * log_m).exp();
    // expm1 keeps the geometric sum accurate when slope is close to 1
    let geometric = (n * log_m).exp_m1() / (slope - 1.0);
    power * t + l * geometric
}

/// Outcome of [`check_halving`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalvingCheck {
    pub holds: bool,
    pub first_violation: Option<f64>,
}

/// Tests `phi(t)/2 <= phi(t/2)` at every grid point, with relative slack
/// [`HALVING_TOL`].
pub fn check_halving(phi: &PerturbationFunction, grid: &[f64]) -> HalvingCheck {
    check_halving_tol(phi, grid, HALVING_TOL)
}

pub fn check_halving_tol(phi: &PerturbationFunction, grid: &[f64], tol: f64) -> HalvingCheck {
    for &t in grid {
        if !(t.is_finite() && t >= 0.0) {
            continue;
        }
        let full = phi.eval_unchecked(t);
        let half = phi.eval_unchecked(t / 2.0);
        if full / 2.0 > half + tol * full.abs().max(1.0) {
            return HalvingCheck {
                holds: false,
                first_violation: Some(t),
            };
        }
    }
    HalvingCheck {
        holds: true,
        first_violation: None,
    }
}

/// Geometric grid of `count` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && count >= 1);
    if count == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
}

/// Default grid for halving checks: 1e-6 .. 1e9, 40 points per decade.
pub fn default_halving_grid() -> Vec<f64> {
    geometric_grid(1e-6, 1e9, 601)
}

/// Result of [`integral_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralCheck {
    pub integral_value: f64,
    pub abs_error: f64,
    pub upper_limit: f64,
    pub bound: u64,
    pub pass: bool,
}

/// Slack added to `n` when deciding pass/fail.
pub const INTEGRAL_PASS_SLACK: f64 = 1e-6;
const EPS_GRID_POINTS: usize = 513;

/// Integrates `1/(phi(x) - x)` from `t` to `phi^n(t)` and compares with `n`.
pub fn integral_bound_check(phi: &PerturbationFunction, t: f64, n: u64) -> Result<IntegralCheck, PerturbError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(if t.is_finite() {
            PerturbError::NegativeInput(t)
        } else {
            PerturbError::NonFinite(t)
        });
    }
    let upper = iterate(phi, u128::from(n), t)?;

    // positivity of phi(x) - x on a grid plus every orbit point
    let mut probes: Vec<f64> = (0..EPS_GRID_POINTS)
        .map(|i| t + (upper - t) * i as f64 / (EPS_GRID_POINTS - 1) as f64)
        .collect();
    let mut x = t;
    for _ in 0..n.min(1 << 16) {
        probes.push(x);
        x = phi.eval_unchecked(x);
    }
    probes.extend(phi.kinks().into_iter().filter(|&k| k >= t && k <= upper));
    if let Some(&bad) = probes.iter().find(|&&x| !(phi.excess(x) > 0.0)) {
        return Err(PerturbError::EpsVanishes(bad));
    }

    // split at orbit points: each piece then integrates to at most one unit
    let mut breaks = phi.kinks();
    let mut x = t;
    for _ in 0..n.min(4096) {
        x = phi.eval_unchecked(x);
        breaks.push(x);
    }
    let result = quadrature::integrate(
        |x| 1.0 / phi.excess(x),
        t,
        upper,
        &breaks,
        QuadratureOptions {
            abs_tol: 1e-8,
            max_intervals: 1 << 14,
        },
    )?;
    Ok(IntegralCheck {
        integral_value: result.value,
        abs_error: result.abs_error,
        upper_limit: upper,
        bound: n,
        pass: result.value <= n as f64 + INTEGRAL_PASS_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn eval_examples() {
        assert_eq!(PerturbationFunction::affine(1.0, 1.0).unwrap().eval(5.0).unwrap(), 6.0);
        assert_eq!(PerturbationFunction::Identity.eval(7.3).unwrap(), 7.3);
        assert_eq!(
            PerturbationFunction::additive_power(0.5, 1.0)
                .unwrap()
                .eval(4.0)
                .unwrap(),
            6.0
        );
    }

    #[test]
    fn eval_rejects_bad_input() {
        let phi = PerturbationFunction::Identity;
        assert_eq!(phi.eval(-1.0), Err(PerturbError::NegativeInput(-1.0)));
        assert!(matches!(phi.eval(f64::NAN), Err(PerturbError::NonFinite(_))));
        assert!(matches!(phi.eval(f64::INFINITY), Err(PerturbError::NonFinite(_))));
    }

    #[test]
    fn validation() {
        assert!(PerturbationFunction::affine(-1.0, 0.0).is_err());
        assert!(PerturbationFunction::additive_power(1.0, 1.0).is_err());
        assert!(PerturbationFunction::additive_power(0.5, 0.0).is_err());
        assert!(PerturbationFunction::tabulated(vec![]).is_err());
        assert!(PerturbationFunction::tabulated(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(PerturbationFunction::tabulated(vec![(1.0, 2.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn tabulated_interpolation_and_extrapolation() {
        let phi = PerturbationFunction::tabulated(vec![(1.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_eq!(phi.eval(2.0).unwrap(), 2.5);
        // last segment slope 0.5 is floored at 1
        assert_eq!(phi.eval(5.0).unwrap(), 5.0);
        // first segment slope 0.5 to the left
        assert_eq!(phi.eval(0.0).unwrap(), 1.5);
        let single = PerturbationFunction::tabulated(vec![(2.0, 3.0)]).unwrap();
        assert_eq!(single.eval(4.0).unwrap(), 5.0);
        assert_eq!(single.eval(0.5).unwrap(), 1.5);
    }

    #[test]
    fn iterate_zero_is_identity() {
        for phi in [
            PerturbationFunction::Identity,
            PerturbationFunction::affine(2.0, 3.0).unwrap(),
            PerturbationFunction::additive_power(0.3, 2.0).unwrap(),
        ] {
            assert_eq!(iterate(&phi, 0, 4.25).unwrap(), 4.25);
        }
    }

    #[test]
    fn iterate_affine_unit_slope() {
        let phi = PerturbationFunction::affine(1.0, 1.0).unwrap();
        let closed = iterate(&phi, 31, 32.0).unwrap();
        let mut looped = 32.0;
        for _ in 0..31 {
            looped = phi.eval(looped).unwrap();
        }
        assert_eq!(closed, 63.0);
        assert_eq!(looped, 63.0);
    }

    #[test]
    fn iterate_affine_geometric() {
        let phi = PerturbationFunction::affine(1.1, 0.0).unwrap();
        let mut looped = 12.5;
        for _ in 0..7 {
            looped *= 1.1;
        }
        let closed = iterate(&phi, 7, 12.5).unwrap();
        assert!(close(closed, looped, 1e-13));
        assert!((closed - 24.358_963_8).abs() < 1e-6);
    }

    #[test]
    fn iterate_affine_huge_counts() {
        let phi = PerturbationFunction::affine(1.0, 1e-12).unwrap();
        let v = iterate(&phi, 1u128 << 63, 1.0).unwrap();
        assert!(close(v, 1.0 + 2f64.powi(63) * 1e-12, 1e-12));
        let steep = PerturbationFunction::affine(2.0, 0.0).unwrap();
        assert!(matches!(
            iterate(&steep, 2000, 1.0),
            Err(PerturbError::PositiveOverflow { .. })
        ));
    }

    #[test]
    fn iterate_loop_cap_and_overflow() {
        let phi = PerturbationFunction::additive_power(0.5, 1.0).unwrap();
        assert!(matches!(
            iterate(&phi, (1 << 20) + 1, 1.0),
            Err(PerturbError::CapExceeded { .. })
        ));
        let opts = IterateOptions {
            cap: 1 << 20,
            ceiling: 100.0,
        };
        assert!(matches!(
            iterate_with(&phi, 1000, 1.0, opts),
            Err(PerturbError::PositiveOverflow { .. })
        ));
    }

    #[test]
    fn halving_examples() {
        let grid = geometric_grid(1e-3, 1e6, 200);
        assert!(check_halving(&PerturbationFunction::affine(1.3, 2.0).unwrap(), &grid).holds);
        assert!(check_halving(&PerturbationFunction::Identity, &grid).holds);
        let bad = PerturbationFunction::tabulated(vec![(1.0, 1.0), (2.0, 10.0)]).unwrap();
        let check = check_halving(&bad, &[0.5, 2.0, 4.0]);
        assert!(!check.holds);
        assert_eq!(check.first_violation, Some(2.0));
    }

    #[test]
    fn integral_constant_excess_is_exact() {
        let phi = PerturbationFunction::affine(1.0, 2.0).unwrap();
        let r = integral_bound_check(&phi, 1.0, 5).unwrap();
        assert!((r.integral_value - 5.0).abs() < 1e-9);
        assert!(r.pass);
    }

    #[test]
    fn integral_affine_matches_log_formula() {
        // 1/(0.05 x + 0.5) integrates to ln(eps(u)/eps(t)) / 0.05
        let phi = PerturbationFunction::affine(1.05, 0.5).unwrap();
        let r = integral_bound_check(&phi, 1.0, 10).unwrap();
        let mut u: f64 = 1.0;
        for _ in 0..10 {
            u = 1.05 * u + 0.5;
        }
        let exact = ((0.05 * u + 0.5) / (0.05 + 0.5)).ln() / 0.05;
        assert!((r.integral_value - exact).abs() < 1e-8);
        assert!(r.pass && r.integral_value <= 10.0);
    }

    #[test]
    fn integral_additive_power() {
        // antiderivative of x^-1/2 is 2 sqrt(x)
        let phi = PerturbationFunction::additive_power(0.5, 1.0).unwrap();
        let r = integral_bound_check(&phi, 1.0, 8).unwrap();
        let exact = 2.0 * (r.upper_limit.sqrt() - 1.0);
        assert!((r.integral_value - exact).abs() < 1e-8);
        assert!(r.pass);
    }

    #[test]
    fn integral_rejects_vanishing_excess() {
        let err = integral_bound_check(&PerturbationFunction::Identity, 1.0, 3).unwrap_err();
        assert!(matches!(err, PerturbError::EpsVanishes(_)));
        let shrinking = PerturbationFunction::affine(0.5, 0.0).unwrap();
        assert!(matches!(
            integral_bound_check(&shrinking, 1.0, 3),
            Err(PerturbError::EpsVanishes(_))
        ));
    }

    #[test]
    fn json_shape() {
        let phi = PerturbationFunction::tabulated(vec![(0.0, 1.0), (2.0, 4.0)]).unwrap();
        let s = serde_json::to_string(&phi).unwrap();
        assert_eq!(s, r#"{"kind":"tabulated","knots":[[0.0,1.0],[2.0,4.0]]}"#);
        let back: PerturbationFunction = serde_json::from_str(r#"{"kind":"affine","m":1.1,"l":0.5}"#).unwrap();
        assert_eq!(back, PerturbationFunction::Affine { m: 1.1, l: 0.5 });
        let id: PerturbationFunction = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(id, PerturbationFunction::Identity);
    }

    #[test]
    fn affine_majorant_dominates() {
        let grid = geometric_grid(1e-4, 1e6, 300);
        for phi in [
            PerturbationFunction::additive_power(0.3, 2.0).unwrap(),
            PerturbationFunction::tabulated(vec![(1.0, 2.0), (2.0, 5.0), (4.0, 6.0)]).unwrap(),
        ] {
            let (m, l) = phi.affine_majorant().unwrap();
            for &t in &grid {
                assert!(phi.eval(t).unwrap() <= m * t + l + 1e-9 * t.max(1.0));
            }
        }
    }
}
