//! Midpoint-deviation bounds for phi-isometries.
//!
//! The central estimate is `|T((a+b)/2) - (Ta+Tb)/2| <= phi^(k-1)(d/k)` for
//! every dyadic `k = 2^(n+1)`, where `d = |a - b|`. [`optimize_bound`] scans
//! the depth `n`; the remaining functions are closed-form majorants used as
//! reference values and as fallbacks when explicit iteration is too long.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::perturb::{self, PerturbError, PerturbationFunction};

pub const DEFAULT_N_MAX: u32 = 64;
/// Upper end of the regime where the `3 eps d + 4 L / eps` estimate applies.
pub const BILIP_EPS_LIMIT: f64 = 0.2;
/// Largest dyadic exponent considered by [`power_alpha_bound`].
const POWER_MAX_EXP: u32 = 65;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("phi(t)/2 <= phi(t/2) fails at t = {0}")]
    HalvingViolated(f64),
    #[error("{name} = {value} is outside its admissible range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("distance must be finite and positive, got {0}")]
    InvalidDistance(f64),
}

fn check_distance(d: f64) -> Result<(), BoundsError> {
    if d.is_finite() && d > 0.0 {
        Ok(())
    } else {
        Err(BoundsError::InvalidDistance(d))
    }
}

/// How the value at the chosen depth was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    ExactIterate,
    AffineClosedForm,
    ExpMajorant,
    PowerMajorant,
    Trivial,
}

/// One entry of the depth scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthValue {
    pub n: u32,
    #[serde(serialize_with = "finite_or_overflow")]
    pub value: f64,
    pub method: BoundMethod,
}

/// Serializes non-finite values as the string `"overflow"`.
pub fn finite_or_overflow<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("overflow")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MidpointBoundReport {
    pub d: f64,
    pub n_star: u32,
    /// `2^(n_star + 1)`.
    pub k: u128,
    pub bound: f64,
    pub method: BoundMethod,
    pub corollary_values: BTreeMap<String, f64>,
    /// Depths whose exact value was unavailable (overflow or iteration cap).
    pub skipped_depths: Vec<u32>,
    pub profile: Vec<DepthValue>,
}

/// `phi^(2^(n+1) - 1)(d / 2^(n+1))`.
///
/// Depths that cannot be evaluated exactly (iteration cap, overflow) return
/// `f64::INFINITY`.
pub fn theorem_bound(phi: &PerturbationFunction, d: f64, n: u32) -> f64 {
    let k = dyadic(n);
    let start = d / k as f64;
    match perturb::iterate(phi, k - 1, start) {
        Ok(v) => v,
        Err(PerturbError::CapExceeded { .. } | PerturbError::PositiveOverflow { .. }) => f64::INFINITY,
        Err(_) => f64::NAN,
    }
}

/// [`theorem_bound`] after verifying the halving hypothesis on `grid`.
pub fn theorem_bound_checked(phi: &PerturbationFunction, d: f64, n: u32, grid: &[f64]) -> Result<f64, BoundsError> {
    check_distance(d)?;
    let check = perturb::check_halving(phi, grid);
    if let Some(t) = check.first_violation {
        return Err(BoundsError::HalvingViolated(t));
    }
    Ok(theorem_bound(phi, d, n))
}

/// `phi(d/2)`, the depth-zero estimate.
pub fn trivial_bound(phi: &PerturbationFunction, d: f64) -> f64 {
    phi.eval_unchecked(d / 2.0)
}

fn dyadic(n: u32) -> u128 {
    1u128 << (n + 1)
}

/// Value at depth `n` for `optimize_bound`: exact when feasible, otherwise the
/// best available majorant of `phi^(k-1)(d/k)`.
fn depth_value(phi: &PerturbationFunction, d: f64, n: u32) -> DepthValue {
    let k = dyadic(n);
    let exact_method = if phi.has_closed_form() {
        BoundMethod::AffineClosedForm
    } else {
        BoundMethod::ExactIterate
    };
    let exact = perturb::iterate(phi, k - 1, d / k as f64);
    match exact {
        Ok(value) => DepthValue {
            n,
            value,
            method: exact_method,
        },
        Err(PerturbError::CapExceeded { .. }) => match phi {
            PerturbationFunction::AdditivePower { alpha, c } => DepthValue {
                n,
                value: power_majorant(*alpha, *c, d, (k - 1) as f64, k as f64),
                method: BoundMethod::PowerMajorant,
            },
            _ => {
                let (m, l) = phi.affine_majorant().unwrap_or((f64::INFINITY, f64::INFINITY));
                let eps = m.max(1.0) - 1.0;
                let value = if eps == 0.0 {
                    d / k as f64 + (k - 1) as f64 * l
                } else {
                    exp_majorant_unchecked(eps, l, d, k as f64)
                };
                DepthValue {
                    n,
                    value,
                    method: BoundMethod::ExpMajorant,
                }
            }
        },
        Err(_) => DepthValue {
            n,
            value: f64::INFINITY,
            method: exact_method,
        },
    }
}

/// Minimizes the depth-`n` estimate over `n = 0..=n_max` by exhaustive scan.
pub fn optimize_bound(phi: &PerturbationFunction, d: f64, n_max: u32) -> MidpointBoundReport {
    let n_max = n_max.min(120);
    let profile: Vec<DepthValue> = (0..=n_max).map(|n| depth_value(phi, d, n)).collect();

    let mut best: Option<&DepthValue> = None;
    let mut skipped = Vec::new();
    for entry in &profile {
        if !entry.value.is_finite() || matches!(entry.method, BoundMethod::ExpMajorant | BoundMethod::PowerMajorant) {
            skipped.push(entry.n);
        }
        if entry.value.is_finite() && best.is_none_or(|b| entry.value < b.value) {
            best = Some(entry);
        }
    }

    let trivial = trivial_bound(phi, d);
    let (n_star, bound, method) = match best {
        Some(b) if b.n > 0 => (b.n, b.value, b.method),
        Some(b) => (0, b.value, BoundMethod::Trivial),
        None => (0, trivial, BoundMethod::Trivial),
    };

    MidpointBoundReport {
        d,
        n_star,
        k: dyadic(n_star),
        bound,
        method,
        corollary_values: corollary_values(phi, d),
        skipped_depths: skipped,
        profile,
    }
}

/// [`optimize_bound`] after verifying the halving hypothesis on `grid`.
pub fn optimize_bound_checked(
    phi: &PerturbationFunction,
    d: f64,
    n_max: u32,
    grid: &[f64],
) -> Result<MidpointBoundReport, BoundsError> {
    check_distance(d)?;
    if let Some(t) = perturb::check_halving(phi, grid).first_violation {
        return Err(BoundsError::HalvingViolated(t));
    }
    Ok(optimize_bound(phi, d, n_max))
}

fn corollary_values(phi: &PerturbationFunction, d: f64) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    out.insert("trivial".to_string(), trivial_bound(phi, d));
    match *phi {
        PerturbationFunction::Affine { m: 1.0, l } => {
            let (hu, _) = hyers_ulam_bound(l, d);
            out.insert("hyers_ulam".into(), hu);
            if d >= 1.0 {
                out.insert("hyers_ulam_majorant".into(), hyers_ulam_majorant(l, d));
            }
        }
        PerturbationFunction::Affine { m, l } if m > 1.0 => {
            let eps = m - 1.0;
            out.insert("bilip".into(), bilip_bound(eps, l, d));
            if let Ok(k) = dyadic_k_for_eps(eps) {
                out.insert("exp_majorant".into(), exp_majorant_unchecked(eps, l, d, k as f64));
            }
        }
        PerturbationFunction::AdditivePower { alpha, c } => {
            let (v, _) = power_alpha_bound_scaled(alpha, c, d);
            out.insert("power_alpha".into(), v);
        }
        _ => {}
    }
    out.retain(|_, v| v.is_finite());
    out
}

/// Depth schedule `n = max(0, floor(log2 sqrt d) - 1)` and the resulting
/// value `d / 2^(n+1) + (2^(n+1) - 1) L` for `phi(t) = t + L`.
pub fn hyers_ulam_bound(l: f64, d: f64) -> (f64, u32) {
    let exponent = (0.5 * d.log2()).floor() - 1.0;
    let n = if exponent.is_finite() && exponent > 0.0 {
        exponent.min(120.0) as u32
    } else {
        0
    };
    let k = dyadic(n) as f64;
    (d / k + (k - 1.0) * l, n)
}

/// `(2 + L) sqrt(d) + (1 + L)`: an explicit `A sqrt(d) + B` majorant of
/// [`hyers_ulam_bound`], valid for `d >= 1`.
pub fn hyers_ulam_majorant(l: f64, d: f64) -> f64 {
    (2.0 + l) * d.sqrt() + (1.0 + l)
}

/// Bound for `phi(t) = (1 + eps) t + L`: `3 eps d + 4 L / eps` when
/// `eps < 0.2`, else `(1 + eps) d / 2 + L / 2`.
pub fn bilip_bound(eps: f64, l: f64, d: f64) -> f64 {
    if eps < BILIP_EPS_LIMIT {
        3.0 * eps * d + 4.0 * l / eps
    } else {
        (1.0 + eps) / 2.0 * d + l / 2.0
    }
}

/// `e^(eps k) d / k + (e^(eps k) - 1) L / eps`, which dominates
/// `phi^k(d/k)` for `phi(t) = (1 + eps) t + L`.
pub fn exp_majorant(eps: f64, l: f64, d: f64, k: u128) -> Result<f64, BoundsError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BoundsError::OutOfRange {
            name: "eps",
            value: eps,
            range: "(0, inf)",
        });
    }
    if k == 0 {
        return Err(BoundsError::OutOfRange {
            name: "k",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    Ok(exp_majorant_unchecked(eps, l, d, k as f64))
}

fn exp_majorant_unchecked(eps: f64, l: f64, d: f64, k: f64) -> f64 {
    let growth = (eps * k).exp();
    growth * d / k + (eps * k).exp_m1() * l / eps
}

/// Dyadic `k = 2^(n+1)` with integer `n` in
/// `[log2(1/eps) - 1.5, log2(1/eps) - 0.5]`, so that `k` lies within a
/// factor `sqrt 2` of `1/eps`.
pub fn dyadic_k_for_eps(eps: f64) -> Result<u128, BoundsError> {
    if !(eps > 0.0 && eps < BILIP_EPS_LIMIT) {
        return Err(BoundsError::OutOfRange {
            name: "eps",
            value: eps,
            range: "(0, 0.2)",
        });
    }
    let center = (1.0 / eps).log2();
    let lo = (center - 1.5).ceil().max(0.0) as u32;
    let hi = (center - 0.5).floor().max(0.0) as u32;
    let target = 1.0 / eps;
    let n = (lo..=hi.max(lo))
        .min_by(|&a, &b| {
            let da = (dyadic(a) as f64 - target).abs();
            let db = (dyadic(b) as f64 - target).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(lo);
    Ok(dyadic(n))
}

/// `3 eps d + 34 (xi_e + xi_f) / eps` for maps between `xi`-dense sets.
pub fn net_bound(eps: f64, xi_e: f64, xi_f: f64, d: f64) -> Result<f64, BoundsError> {
    if !(eps > 0.0 && eps < BILIP_EPS_LIMIT) {
        return Err(BoundsError::OutOfRange {
            name: "eps",
            value: eps,
            range: "(0, 0.2)",
        });
    }
    Ok(3.0 * eps * d + 34.0 * (xi_e + xi_f) / eps)
}

/// Majorant of `phi^(steps)(d/k)` for `phi(t) = t + c t^alpha`, obtained by
/// inverting `int 1/(c x^alpha) dx <= steps`.
fn power_majorant(alpha: f64, c: f64, d: f64, steps: f64, k: f64) -> f64 {
    let beta = 1.0 - alpha;
    ((d / k).powf(beta) + c * beta * steps).powf(1.0 / beta)
}

/// Minimizes `((d/k)^(1-alpha) + (1-alpha) k)^(1/(1-alpha))` over dyadic
/// `k = 2^j`, `1 <= j <= 65`. Grows like `d^(1/(2-alpha))`.
pub fn power_alpha_bound(alpha: f64, d: f64) -> Result<(f64, u128), BoundsError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(BoundsError::OutOfRange {
            name: "alpha",
            value: alpha,
            range: "[0, 1)",
        });
    }
    check_distance(d)?;
    Ok(power_alpha_bound_scaled(alpha, 1.0, d))
}

pub(crate) fn power_alpha_bound_scaled(alpha: f64, c: f64, d: f64) -> (f64, u128) {
    (1..=POWER_MAX_EXP)
        .map(|j| {
            let k = 1u128 << j;
            (power_majorant(alpha, c, d, k as f64, k as f64), k)
        })
        .fold((f64::INFINITY, 2), |best, cur| if cur.0 < best.0 { cur } else { best })
}
