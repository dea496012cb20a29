//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string: either the
//! result object or `{"error": "..."}`. Keeping the boundary stringly typed
//! means the same functions are exercised by native tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use isobound::banach_stone::{self, RecoveredIsometry, RecoveryDiagnostics, StabilityReport};
use isobound::bounds::{self, BoundMethod};
use isobound::keps::{self, KepsInstance};
use isobound::perturb::{self, PerturbationFunction};
use isobound::spaces;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

const MAX_POINTS: u32 = 2000;
const MAX_DIM: u32 = 256;
const MAX_BUDGET: u32 = 200_000;
const CURVE_SAMPLES: usize = 400;

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    let out = match r {
        Ok(v) => serde_json::to_string(&v),
        Err(error) => serde_json::to_string(&ErrorBody { error }),
    };
    out.unwrap_or_else(|e| format!(r#"{{"error":"serialization failed: {e}"}}"#))
}

// JSON has no infinities; the page treats null as "no value".
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
pub struct ProfileRow {
    pub d: f64,
    pub bound: Option<f64>,
    pub n_star: u32,
    pub method: BoundMethod,
    pub trivial: Option<f64>,
    /// `(2+L)sqrt(d) + (1+L)` when `M = 1`, `3 eps d + 4L/eps` when `M - 1 < 0.2`.
    pub reference: Option<f64>,
}

#[derive(Serialize)]
pub struct Profile {
    pub m: f64,
    pub l: f64,
    pub reference_label: &'static str,
    pub rows: Vec<ProfileRow>,
}

/// Optimized midpoint bound for `phi(t) = M t + L` on a geometric `d` grid.
pub fn bound_profile_value(m: f64, l: f64, d_min: f64, d_max: f64, points: u32) -> Result<Profile, String> {
    if !(m >= 1.0) {
        return Err(format!("M must be at least 1, got {m}"));
    }
    let phi = PerturbationFunction::affine(m, l).map_err(|e| e.to_string())?;
    if !(d_min > 0.0 && d_max >= d_min && d_max.is_finite()) {
        return Err(format!("need 0 < d_min <= d_max, got [{d_min}, {d_max}]"));
    }
    if points == 0 || points > MAX_POINTS {
        return Err(format!("points must be in 1..={MAX_POINTS}"));
    }
    let eps = m - 1.0;
    let reference_label = if eps == 0.0 {
        "(2+L)√d + (1+L)"
    } else if eps < bounds::BILIP_EPS_LIMIT {
        "3εd + 4L/ε"
    } else {
        ""
    };
    let rows = perturb::geometric_grid(d_min, d_max, points as usize)
        .into_iter()
        .map(|d| {
            let r = bounds::optimize_bound(&phi, d, bounds::DEFAULT_N_MAX);
            let reference = if eps == 0.0 {
                Some(bounds::hyers_ulam_majorant(l, d))
            } else if eps < bounds::BILIP_EPS_LIMIT {
                Some(bounds::bilip_bound(eps, l, d))
            } else {
                None
            };
            ProfileRow {
                d,
                bound: finite(r.bound),
                n_star: r.n_star,
                method: r.method,
                trivial: finite(bounds::trivial_bound(&phi, d)),
                reference: reference.and_then(finite),
            }
        })
        .collect();
    Ok(Profile {
        m,
        l,
        reference_label,
        rows,
    })
}

#[wasm_bindgen]
pub fn bound_profile(m: f64, l: f64, d_min: f64, d_max: f64, points: u32) -> String {
    to_json(bound_profile_value(m, l, d_min, d_max, points))
}

#[derive(Serialize)]
pub struct KepsView {
    pub instance: KepsInstance,
    pub vestfrid_ratio: f64,
    pub cor33_bound: f64,
    pub liminf_reference: f64,
    /// `(x, T(x) - x)` over the breakpoint span; the identity is subtracted
    /// so the slope changes are visible.
    pub curve: Vec<(f64, f64)>,
}

/// Hill-climbing search for a large midpoint ratio at `eps`.
pub fn keps_search_value(eps: f64, knots: u32, budget: u32, seed: u32) -> Result<KepsView, String> {
    if knots == 0 || knots > 64 {
        return Err("knots must be in 1..=64".into());
    }
    if budget > MAX_BUDGET {
        return Err(format!("budget must be at most {MAX_BUDGET}"));
    }
    let instance =
        keps::search_lower_bound(eps, knots as usize, u64::from(budget), u64::from(seed)).map_err(|e| e.to_string())?;
    let (cor33, e) = keps::upper_bounds(eps).map_err(|e| e.to_string())?;
    let map = &instance.map_params;
    let (a, b) = instance.best_pair;
    let bps = &map.breakpoints;
    let lo = bps[0].min(a.max(bps[0] - 2.0 * (1.0 + bps[bps.len() - 1] - bps[0])));
    let hi = bps[bps.len() - 1].max(b.min(bps[bps.len() - 1] + 2.0 * (1.0 + bps[bps.len() - 1] - bps[0])));
    let curve = (0..CURVE_SAMPLES)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (CURVE_SAMPLES - 1) as f64;
            (x, map.eval(x) - x)
        })
        .collect();
    Ok(KepsView {
        vestfrid_ratio: keps::vestfrid_ratio(eps),
        cor33_bound: cor33,
        liminf_reference: e,
        instance,
        curve,
    })
}

#[wasm_bindgen]
pub fn keps_search(eps: f64, knots: u32, budget: u32, seed: u32) -> String {
    to_json(keps_search_value(eps, knots, budget, seed))
}

#[derive(Serialize)]
pub struct RecoveryView {
    pub n: usize,
    pub claimed_m: f64,
    pub eps: Vec<f64>,
    pub truth: RecoveredIsometry,
    pub recovered: RecoveredIsometry,
    pub exact: bool,
    pub diagnostics: RecoveryDiagnostics,
    pub stability: StabilityReport,
    pub stability_limit: f64,
}

/// Builds `T = P o V` with a random signed permutation `P` and coordinatewise
/// Vestfrid scalings `V` with factors in `[0, eps_top]`, then recovers `P`.
pub fn recover_demo_value(n: u32, eps_top: f64, seed: u32) -> Result<RecoveryView, String> {
    if n == 0 || n > MAX_DIM {
        return Err(format!("n must be in 1..={MAX_DIM}"));
    }
    if !(eps_top >= 0.0 && eps_top.is_finite()) {
        return Err(format!("eps_top must be finite and non-negative, got {eps_top}"));
    }
    let n = n as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let eps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=eps_top)).collect();
    let (sigma, lambda) = spaces::random_signed_permutation(n, &mut rng);
    let oracle = banach_stone::vestfrid_permutation_oracle(eps.clone(), sigma.clone(), lambda.clone())
        .map_err(|e| e.to_string())?;
    let truth = RecoveredIsometry { sigma, lambda };
    let (recovered, diagnostics) = banach_stone::recover(&oracle).map_err(|e| e.to_string())?;
    let samples: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let stability = banach_stone::stability_report(&oracle, &recovered, &samples).map_err(|e| e.to_string())?;
    Ok(RecoveryView {
        n,
        claimed_m: oracle.claimed_m,
        eps,
        exact: recovered == truth,
        truth,
        recovered,
        diagnostics,
        stability,
        stability_limit: banach_stone::STABILITY_SLOPE * (oracle.claimed_m - 1.0),
    })
}

#[wasm_bindgen]
pub fn recover_demo(n: u32, eps_top: f64, seed: u32) -> String {
    to_json(recover_demo_value(n, eps_top, seed))
}
