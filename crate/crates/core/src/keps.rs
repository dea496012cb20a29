//! Numerical bracketing of the midpoint constant
//! `K_eps = sup |T((a+b)/2) - (Ta+Tb)/2| / (eps |a-b|)` over
//! `(1+eps)`-bi-Lipschitz bijections of the line.
//!
//! The search family is piecewise-linear increasing bijections of `R` whose
//! slopes lie in `[1/(1+eps), 1+eps]`; every member is a φ-isometry for
//! `φ(t) = (1+eps) t` by construction, so any ratio found is a certified
//! lower bound for `K_eps`.
//!
//! For a piecewise-linear map the ratio is linear-fractional on each cell
//! cut out by the lines `a = p`, `b = q`, `a + b = 2r` (`p, q, r`
//! breakpoints), so its supremum over a bounded cell sits at a cell vertex:
//! a pair of breakpoints, or a breakpoint together with its reflection
//! through another breakpoint. Unbounded cells are probed through two far
//! points placed outside the breakpoint span.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinatewise products in `R^2` under the sup norm attain at most the
/// larger of their two one-dimensional ratios, so the search runs on `R`.
pub const SPACE_LABEL: &str = "R";
/// Upper bound valid for every `eps < 0.2`.
pub const COR33_BOUND: f64 = 3.0;
/// Exclusive upper end of the admissible `eps` range.
pub const EPS_LIMIT: f64 = 0.2;
/// Far probe points sit this many spans outside the breakpoints.
pub const FAR_FACTOR: f64 = 1.0e4;
/// Independent restarts when the budget allows.
pub const MAX_RESTARTS: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KepsError {
    #[error("eps = {0} outside (0, 0.2)")]
    OutOfRange(f64),
    #[error("invalid piecewise-linear map: {0}")]
    InvalidMap(String),
}

/// Increasing piecewise-linear map with `slopes[0]` left of
/// `breakpoints[0]`, `slopes[i]` on `[breakpoints[i-1], breakpoints[i]]` and
/// `slopes[K]` right of the last breakpoint. Normalised by `T(b_0) = b_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    // T at each breakpoint, derived from the two fields above
    #[serde(skip)]
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self, KepsError> {
        if breakpoints.is_empty() {
            return Err(KepsError::InvalidMap("at least one breakpoint is required".into()));
        }
        if slopes.len() != breakpoints.len() + 1 {
            return Err(KepsError::InvalidMap(format!(
                "{} breakpoints need {} slopes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                slopes.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KepsError::InvalidMap(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if slopes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(KepsError::InvalidMap("slopes must be finite and positive".into()));
        }
        let mut values = Vec::with_capacity(breakpoints.len());
        values.push(breakpoints[0]);
        for i in 1..breakpoints.len() {
            values.push(values[i - 1] + slopes[i] * (breakpoints[i] - breakpoints[i - 1]));
        }
        Ok(Self {
            breakpoints,
            slopes,
            values,
        })
    }

    /// The Vestfrid map `x -> x/(1+eps)` for `x < 0`, `(1+eps) x` for
    /// `x >= 0`, written with `knots` breakpoints `0, 1, ..., knots-1`
    /// (the extra ones carry slope `1+eps` on both sides).
    pub fn vestfrid(eps: f64, knots: usize) -> Result<Self, KepsError> {
        let knots = knots.max(1);
        let breakpoints = (0..knots).map(|i| i as f64).collect();
        let mut slopes = vec![1.0 + eps; knots + 1];
        slopes[0] = 1.0 / (1.0 + eps);
        Self::new(breakpoints, slopes)
    }

    pub fn knots(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        let last = b.len() - 1;
        if x <= b[0] {
            return self.values[0] + self.slopes[0] * (x - b[0]);
        }
        if x >= b[last] {
            return self.values[last] + self.slopes[last + 1] * (x - b[last]);
        }
        // b[i-1] < x < b[i] for i = partition_point
        let i = b.partition_point(|&p| p <= x);
        self.values[i - 1] + self.slopes[i] * (x - b[i - 1])
    }

    /// All slopes lie in `[1/(1+eps), 1+eps]`.
    pub fn slopes_within(&self, eps: f64) -> bool {
        let (lo, hi) = (1.0 / (1.0 + eps), 1.0 + eps);
        self.slopes.iter().all(|&s| s >= lo && s <= hi)
    }

    /// Breakpoints plus one far point on each side.
    pub fn probe_points(&self) -> Vec<f64> {
        let b = &self.breakpoints;
        let span = (b[b.len() - 1] - b[0]).max(1.0);
        let far = FAR_FACTOR * span;
        let mut pts = Vec::with_capacity(b.len() + 2);
        pts.push(b[0] - far);
        pts.extend_from_slice(b);
        pts.push(b[b.len() - 1] + far);
        pts
    }
}

/// `|T((a+b)/2) - (Ta+Tb)/2| / (eps |a-b|)`; zero when `a == b`.
pub fn pair_ratio(map: &PiecewiseLinear, eps: f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let dev = (map.eval(0.5 * (a + b)) - 0.5 * (map.eval(a) + map.eval(b))).abs();
    dev / (eps * (a - b).abs())
}

/// Maximum of [`pair_ratio`] over the vertex lattice: pairs of probe points
/// and pairs `(p, 2r - p)` whose midpoint is a probe point. Ties keep the
/// first pair in scan order. Returns `((a, b), ratio)` with `a < b`.
pub fn lattice_sup(map: &PiecewiseLinear, eps: f64) -> ((f64, f64), f64) {
    let pts = map.probe_points();
    let vals: Vec<f64> = pts.iter().map(|&x| map.eval(x)).collect();
    let mut best = ((pts[0], pts[1]), 0.0);
    let mut consider = |a: f64, b: f64, r: f64| {
        if r > best.1 {
            best = ((a.min(b), a.max(b)), r);
        }
    };
    for (i, &p) in pts.iter().enumerate() {
        for (j, &q) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            // breakpoint pair; midpoint lies off the lattice in general
            if i < j {
                let dev = (map.eval(0.5 * (p + q)) - 0.5 * (vals[i] + vals[j])).abs();
                consider(p, q, dev / (eps * (q - p)));
            }
            // midpoint at q
            let b = 2.0 * q - p;
            let dev = (vals[j] - 0.5 * (vals[i] + map.eval(b))).abs();
            consider(p, b, dev / (eps * (b - p).abs()));
        }
    }
    best
}

/// `(2+eps) / (4(1+eps))`: the ratio of the Vestfrid map at `(-x, x)`.
pub fn vestfrid_ratio(eps: f64) -> f64 {
    (2.0 + eps) / (4.0 * (1.0 + eps))
}

/// `(3, e)`: the uniform upper bound for `eps < 0.2` and the `liminf` reference.
pub fn upper_bounds(eps: f64) -> Result<(f64, f64), KepsError> {
    check_eps(eps)?;
    Ok((COR33_BOUND, std::f64::consts::E))
}

fn check_eps(eps: f64) -> Result<(), KepsError> {
    if eps > 0.0 && eps < EPS_LIMIT {
        Ok(())
    } else {
        Err(KepsError::OutOfRange(eps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KepsInstance {
    pub eps: f64,
    pub map_params: PiecewiseLinear,
    pub best_pair: (f64, f64),
    pub ratio: f64,
    pub space: String,
    /// Restart that produced this instance.
    pub restart: u64,
    /// Proposals evaluated across all restarts.
    pub evaluations: u64,
}

// Search coordinates: log-gaps between consecutive breakpoints, then slopes.
struct State {
    log_gaps: Vec<f64>,
    slopes: Vec<f64>,
}

impl State {
    fn from_map(map: &PiecewiseLinear) -> Self {
        Self {
            log_gaps: map.breakpoints.windows(2).map(|w| (w[1] - w[0]).ln()).collect(),
            slopes: map.slopes.clone(),
        }
    }

    fn to_map(&self) -> PiecewiseLinear {
        let mut bps = Vec::with_capacity(self.log_gaps.len() + 1);
        bps.push(0.0);
        for g in &self.log_gaps {
            bps.push(bps[bps.len() - 1] + g.exp());
        }
        PiecewiseLinear::new(bps, self.slopes.clone()).expect("search state stays valid")
    }
}

const LOG_GAP_RANGE: f64 = 6.0;

fn random_state(eps: f64, knots: usize, rng: &mut ChaCha8Rng) -> State {
    let c = (1.0 + eps).ln();
    State {
        log_gaps: (1..knots).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        slopes: (0..=knots).map(|_| rng.gen_range(-c..=c).exp()).collect(),
    }
}

fn clamp_slope(s: f64, eps: f64) -> f64 {
    s.clamp(1.0 / (1.0 + eps), 1.0 + eps)
}

struct RestartResult {
    map: PiecewiseLinear,
    pair: (f64, f64),
    ratio: f64,
}

fn run_restart(eps: f64, knots: usize, budget: u64, seed: u64, index: u64) -> RestartResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut state = if index == 0 {
        State::from_map(&PiecewiseLinear::vestfrid(eps, knots).expect("valid"))
    } else {
        random_state(eps, knots, &mut rng)
    };
    let mut map = state.to_map();
    let (mut pair, mut ratio) = lattice_sup(&map, eps);

    let c = (1.0 + eps).ln();
    let n_params = state.log_gaps.len() + state.slopes.len();
    let mut step = 0.5;
    for _ in 0..budget {
        let k = rng.gen_range(0..n_params);
        let delta = step * rng.gen_range(-1.0..1.0);
        let undo;
        if k < state.log_gaps.len() {
            undo = state.log_gaps[k];
            state.log_gaps[k] = (undo + delta * 2.0).clamp(-LOG_GAP_RANGE, LOG_GAP_RANGE);
        } else {
            let s = k - state.log_gaps.len();
            undo = state.slopes[s];
            state.slopes[s] = clamp_slope((undo.ln() + delta * c).exp(), eps);
        }
        let cand = state.to_map();
        let (cpair, cratio) = lattice_sup(&cand, eps);
        if cratio >= ratio {
            if cratio > ratio {
                step = (step * 1.2).min(2.0);
            }
            map = cand;
            pair = cpair;
            ratio = cratio;
        } else {
            if k < state.log_gaps.len() {
                state.log_gaps[k] = undo;
            } else {
                state.slopes[k - state.log_gaps.len()] = undo;
            }
            step = (step * 0.97).max(1e-4);
        }
    }
    RestartResult { map, pair, ratio }
}

fn restart_plan(budget: u64) -> Vec<u64> {
    let restarts = budget.clamp(1, MAX_RESTARTS);
    (0..restarts)
        .map(|i| budget / restarts + u64::from(i < budget % restarts))
        .collect()
}

/// Random-restart hill climbing over breakpoint gaps and slopes.
///
/// `budget` counts proposals across all restarts; restart 0 starts from the
/// Vestfrid shape, so the result never falls below [`vestfrid_ratio`].
/// Restarts are seeded by `(seed, index)` and merged by maximum ratio with
/// ties going to the lowest index, so the result does not depend on
/// scheduling.
pub fn search_lower_bound(eps: f64, knots: usize, budget: u64, seed: u64) -> Result<KepsInstance, KepsError> {
    check_eps(eps)?;
    if knots == 0 {
        return Err(KepsError::InvalidMap("knots must be positive".into()));
    }
    let plan = restart_plan(budget);
    let run = |(i, b): (usize, &u64)| run_restart(eps, knots, *b, seed, i as u64);

    #[cfg(feature = "parallel")]
    let results: Vec<RestartResult> = {
        use rayon::prelude::*;
        plan.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<RestartResult> = plan.iter().enumerate().map(run).collect();

    let (restart, best) = results
        .into_iter()
        .enumerate()
        .reduce(|acc, cur| if cur.1.ratio > acc.1.ratio { cur } else { acc })
        .expect("at least one restart");
    Ok(KepsInstance {
        eps,
        map_params: best.map,
        best_pair: best.pair,
        ratio: best.ratio,
        space: SPACE_LABEL.to_string(),
        restart: restart as u64,
        evaluations: budget,
    })
}

/// One row of the `eps` sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub vestfrid_ratio: f64,
    pub best_found: f64,
    pub cor33_bound: f64,
}

pub fn sweep(eps_grid: &[f64], knots: usize, budget: u64, seed: u64) -> Result<Vec<SweepRow>, KepsError> {
    eps_grid
        .iter()
        .map(|&eps| {
            let inst = search_lower_bound(eps, knots, budget, seed)?;
            Ok(SweepRow {
                eps,
                vestfrid_ratio: vestfrid_ratio(eps),
                best_found: inst.ratio,
                cor33_bound: upper_bounds(eps)?.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Evaluates T by summing slope * overlap with each piece, independently
    // of PiecewiseLinear::eval.
    fn independent_eval(bps: &[f64], slopes: &[f64], x: f64) -> f64 {
        let b0 = bps[0];
        let mut v = b0;
        if x < b0 {
            return v - slopes[0] * (b0 - x);
        }
        for i in 0..bps.len() {
            let lo = bps[i];
            let hi = bps.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if x > lo {
                v += slopes[i + 1] * (x.min(hi) - lo);
            }
        }
        v
    }

    fn independent_ratio(inst: &KepsInstance) -> f64 {
        let p = &inst.map_params;
        let (a, b) = inst.best_pair;
        let f = |x| independent_eval(&p.breakpoints, &p.slopes, x);
        (f(0.5 * (a + b)) - 0.5 * (f(a) + f(b))).abs() / (inst.eps * (b - a).abs())
    }

    #[test]
    fn vestfrid_ratio_examples() {
        assert!((vestfrid_ratio(0.1) - 2.1 / 4.4).abs() < 1e-15);
        assert!((vestfrid_ratio(0.1) - 0.477_272_727_272_727_3).abs() < 1e-12);
        assert_eq!(vestfrid_ratio(1.0), 0.375);
        assert!((vestfrid_ratio(1e-9) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(upper_bounds(0.1).unwrap(), (3.0, std::f64::consts::E));
        assert_eq!(upper_bounds(0.19).unwrap().1, std::f64::consts::E);
        assert_eq!(upper_bounds(0.25), Err(KepsError::OutOfRange(0.25)));
        assert!(upper_bounds(0.0).is_err());
    }

    #[test]
    fn eval_matches_independent() {
        let m = PiecewiseLinear::new(vec![-1.0, 0.5, 2.0], vec![0.95, 1.05, 1.0, 0.92]).unwrap();
        for i in -40..=40 {
            let x = i as f64 * 0.137;
            assert!((m.eval(x) - independent_eval(&m.breakpoints, &m.slopes, x)).abs() < 1e-12);
        }
        assert!(PiecewiseLinear::new(vec![1.0, 1.0], vec![1.0; 3]).is_err());
        assert!(PiecewiseLinear::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn vestfrid_shape_on_lattice() {
        let m = PiecewiseLinear::vestfrid(0.1, 1).unwrap();
        let (pair, r) = lattice_sup(&m, 0.1);
        assert!((r - vestfrid_ratio(0.1)).abs() < 1e-9);
        assert!((pair.0 + pair.1).abs() < 1e-9 * pair.1.abs());
    }

    #[test]
    fn knots_one_budget_zero_is_vestfrid() {
        let inst = search_lower_bound(0.1, 1, 0, 7).unwrap();
        assert!((inst.ratio - 0.477_272_727_3).abs() < 1e-9);
        assert_eq!(inst.restart, 0);
    }

    #[test]
    fn budget_zero_returns_seed_instance() {
        let inst = search_lower_bound(0.1, 8, 0, 3).unwrap();
        assert_eq!(inst.map_params, PiecewiseLinear::vestfrid(0.1, 8).unwrap());
        assert!((inst.ratio - vestfrid_ratio(0.1)).abs() < 1e-9);
    }

    #[test]
    fn search_brackets_and_recomputes() {
        for (eps, seed) in [(0.1, 1u64), (0.05, 2), (0.19, 3)] {
            let inst = search_lower_bound(eps, 6, 3000, seed).unwrap();
            assert!(inst.ratio >= vestfrid_ratio(eps) - 1e-9);
            assert!(inst.ratio <= COR33_BOUND + 1e-9);
            assert!(inst.map_params.slopes_within(eps));
            assert!((independent_ratio(&inst) - inst.ratio).abs() < 1e-10);
        }
    }

    #[test]
    fn search_is_reproducible() {
        let a = search_lower_bound(0.1, 4, 2000, 11).unwrap();
        let b = search_lower_bound(0.1, 4, 2000, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lattice_dominates_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let eps = rng.gen_range(0.01..0.19);
            let mut st = random_state(eps, 4, &mut rng);
            st.slopes.iter_mut().for_each(|s| *s = clamp_slope(*s, eps));
            let m = st.to_map();
            let (_, sup) = lattice_sup(&m, eps);
            let (lo, hi) = (m.breakpoints[0] - 5.0, m.breakpoints[3] + 5.0);
            for _ in 0..2000 {
                let (a, b) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
                assert!(pair_ratio(&m, eps, a, b) <= sup + 1e-9);
            }
        }
    }

    #[test]
    fn restart_plan_splits_budget() {
        assert_eq!(restart_plan(0), vec![0]);
        assert_eq!(restart_plan(3), vec![1, 1, 1]);
        let p = restart_plan(1003);
        assert_eq!(p.len(), 8);
        assert_eq!(p.iter().sum::<u64>(), 1003);
    }

    #[test]
    fn sweep_rows() {
        let rows = sweep(&[0.1, 0.01], 2, 200, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.best_found >= r.vestfrid_ratio - 1e-9 && r.cor33_bound == 3.0));
    }
}
