//! Finite-dimensional normed-space simulator.
//!
//! Analytic phi-isometries of `R^d` ([`MapSpec`], compiled into
//! [`PhiIsometry`]), empirical measurement of their perturbation modulus,
//! brute-force midpoint-deviation oracles, and the separated-net repair of a
//! non-injective map on finite samples.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundsError};
use crate::perturb::{self, PerturbationFunction};

/// Bound-validation slack: a margin below `-BOUND_SLACK` is a violation.
pub const BOUND_SLACK: f64 = 1e-9;
/// Pair budget for [`deviation_sup_oracle`].
pub const ORACLE_PAIR_BUDGET: f64 = 1e8;
const INVERSION_STEPS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpacesError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fixed-point inversion did not converge (residual {residual:e})")]
    InversionDiverged { residual: f64 },
    #[error("{pairs:e} grid pairs exceed the budget of {budget:e}")]
    BudgetExceeded { pairs: f64, budget: f64 },
    #[error("phi does not dominate the claimed modulus at t = {t}: phi(t) = {phi_t}, claimed {claimed}")]
    ModulusMismatch { t: f64, phi_t: f64, claimed: f64 },
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("empirical modulus {eps_hat} at delta0 = {delta0} is not below delta0")]
    HypothesisFailed { eps_hat: f64, delta0: f64 },
    #[error("domain has {domain} points, codomain {codomain}, map values {values}")]
    CardinalityMismatch {
        domain: usize,
        codomain: usize,
        values: usize,
    },
    #[error("no bijection within displacement radius {radius}")]
    NoAdmissibleMatching { radius: f64 },
    #[error("invalid map specification: {0}")]
    InvalidMap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Sup,
    Euclid,
    Ell1,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::Sup => v.iter().fold(0.0, |acc, x| acc.max(x.abs())),
            Norm::Euclid => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Ell1 => v.iter().map(|x| x.abs()).sum(),
        }
    }

    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Sup => a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs())),
            Norm::Euclid => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Norm::Ell1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacePoint {
    pub coords: Vec<f64>,
    #[serde(default)]
    pub norm: Norm,
}

impl SpacePoint {
    pub fn new(coords: Vec<f64>, norm: Norm) -> Self {
        Self { coords, norm }
    }

    pub fn sup(coords: Vec<f64>) -> Self {
        Self::new(coords, Norm::Sup)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn dist(&self, other: &SpacePoint) -> f64 {
        self.norm.dist(&self.coords, &other.coords)
    }

    pub fn midpoint(&self, other: &SpacePoint) -> SpacePoint {
        let coords = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        SpacePoint::new(coords, self.norm)
    }
}

/// Analytic bijection families of `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// `x -> (1+eps) x` for `x >= 0`, `x / (1+eps)` for `x < 0`, on `R`.
    #[serde(rename = "vestfrid_1d")]
    Vestfrid1d { eps: f64 },
    /// The one-dimensional map applied to each coordinate with its own `eps`.
    CoordinatewiseVestfrid { eps: Vec<f64> },
    /// `(Px)_{sigma(i)} = lambda_i x_i`.
    SignedPermutation { sigma: Vec<usize>, lambda: Vec<i8> },
    /// A signed permutation plus a smooth bounded perturbation of sup-size
    /// `amplitude`, generated from `seed`.
    NoisyIsometry {
        sigma: Vec<usize>,
        lambda: Vec<i8>,
        amplitude: f64,
        seed: u64,
    },
    /// Applies `maps` in order.
    Composite { maps: Vec<MapKind> },
}

impl MapKind {
    /// Modulus `(M, L)` with `eps_T(t) <= (M - 1) t + L` that the family
    /// satisfies by construction.
    pub fn natural_modulus(&self) -> (f64, f64) {
        match self {
            MapKind::Vestfrid1d { eps } => (1.0 + eps, 0.0),
            MapKind::CoordinatewiseVestfrid { eps } => (1.0 + eps.iter().copied().fold(0.0, f64::max), 0.0),
            MapKind::SignedPermutation { .. } => (1.0, 0.0),
            MapKind::NoisyIsometry { amplitude, .. } => (1.0, 2.0 * amplitude),
            MapKind::Composite { maps } => maps.iter().fold((1.0, 0.0), |(m1, l1), k| {
                let (m2, l2) = k.natural_modulus();
                (m1 * m2, m2 * l1 + l2)
            }),
        }
    }
}

/// A map family together with the `(M, L)` it claims: `phi(t) = M t + L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MapSpecRepr")]
pub struct MapSpec {
    #[serde(flatten)]
    pub kind: MapKind,
    pub claimed_m: f64,
    pub claimed_l: f64,
}

#[derive(Deserialize)]
struct MapSpecRepr {
    #[serde(flatten)]
    kind: MapKind,
    claimed_m: Option<f64>,
    claimed_l: Option<f64>,
}

impl From<MapSpecRepr> for MapSpec {
    fn from(r: MapSpecRepr) -> Self {
        let (m, l) = r.kind.natural_modulus();
        MapSpec {
            kind: r.kind,
            claimed_m: r.claimed_m.unwrap_or(m),
            claimed_l: r.claimed_l.unwrap_or(l),
        }
    }
}

impl MapSpec {
    /// Uses the family's natural modulus as the claim.
    pub fn new(kind: MapKind) -> Self {
        let (m, l) = kind.natural_modulus();
        Self {
            kind,
            claimed_m: m,
            claimed_l: l,
        }
    }

    pub fn vestfrid(eps: f64) -> Self {
        Self::new(MapKind::Vestfrid1d { eps })
    }

    pub fn signed_identity(dim: usize) -> Self {
        Self::new(MapKind::SignedPermutation {
            sigma: (0..dim).collect(),
            lambda: vec![1; dim],
        })
    }

    /// The perturbation function `M t + L` matching the claim.
    pub fn dominating_phi(&self) -> PerturbationFunction {
        if self.claimed_m == 1.0 && self.claimed_l == 0.0 {
            PerturbationFunction::Identity
        } else {
            PerturbationFunction::Affine {
                m: self.claimed_m,
                l: self.claimed_l,
            }
        }
    }
}

/// Uniformly random signed permutation of `dim` indices.
pub fn random_signed_permutation<R: Rng>(dim: usize, rng: &mut R) -> (Vec<usize>, Vec<i8>) {
    let mut sigma: Vec<usize> = (0..dim).collect();
    sigma.shuffle(rng);
    let lambda = (0..dim).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
    (sigma, lambda)
}

#[derive(Debug, Clone)]
struct SignedPerm {
    sigma: Vec<usize>,
    lambda: Vec<f64>,
}

impl SignedPerm {
    fn new(sigma: &[usize], lambda: &[i8]) -> Result<Self, SpacesError> {
        let n = sigma.len();
        if lambda.len() != n {
            return Err(SpacesError::InvalidMap(format!(
                "sigma has {n} entries, lambda {}",
                lambda.len()
            )));
        }
        let mut hit = vec![false; n];
        for &s in sigma {
            if s >= n || hit[s] {
                return Err(SpacesError::InvalidMap("sigma is not a permutation".into()));
            }
            hit[s] = true;
        }
        if lambda.iter().any(|&l| l != 1 && l != -1) {
            return Err(SpacesError::InvalidMap("lambda entries must be +1 or -1".into()));
        }
        Ok(Self {
            sigma: sigma.to_vec(),
            lambda: lambda.iter().map(|&l| f64::from(l)).collect(),
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            out[self.sigma[i]] = self.lambda[i] * xi;
        }
        out
    }

    fn invert(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len()).map(|i| self.lambda[i] * y[self.sigma[i]]).collect()
    }

    fn dim(&self) -> usize {
        self.sigma.len()
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Vestfrid(Vec<f64>),
    Perm(SignedPerm),
    Noisy {
        perm: SignedPerm,
        amplitude: f64,
        // row j: weights of output coordinate j, entries in [-1/d, 1/d]
        weights: Vec<Vec<f64>>,
        phases: Vec<f64>,
    },
}

fn vestfrid_scalar(eps: f64, x: f64) -> f64 {
    if x >= 0.0 {
        (1.0 + eps) * x
    } else {
        x / (1.0 + eps)
    }
}

fn vestfrid_scalar_inv(eps: f64, y: f64) -> f64 {
    if y >= 0.0 {
        y / (1.0 + eps)
    } else {
        (1.0 + eps) * y
    }
}

impl Layer {
    fn dim(&self) -> usize {
        match self {
            Layer::Vestfrid(eps) => eps.len(),
            Layer::Perm(p) | Layer::Noisy { perm: p, .. } => p.dim(),
        }
    }

    fn noise(weights: &[Vec<f64>], phases: &[f64], amplitude: f64, x: &[f64]) -> Vec<f64> {
        weights
            .iter()
            .zip(phases)
            .map(|(w, ph)| {
                let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                amplitude * (ph + arg).sin()
            })
            .collect()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Vestfrid(eps) => x.iter().zip(eps).map(|(&xi, &e)| vestfrid_scalar(e, xi)).collect(),
            Layer::Perm(p) => p.apply(x),
            Layer::Noisy {
                perm,
                amplitude,
                weights,
                phases,
            } => {
                let mut y = perm.apply(x);
                for (yj, nj) in y.iter_mut().zip(Self::noise(weights, phases, *amplitude, x)) {
                    *yj += nj;
                }
                y
            }
        }
    }

    fn invert(&self, y: &[f64], norm: Norm) -> Result<Vec<f64>, SpacesError> {
        match self {
            Layer::Vestfrid(eps) => Ok(y.iter().zip(eps).map(|(&yi, &e)| vestfrid_scalar_inv(e, yi)).collect()),
            Layer::Perm(p) => Ok(p.invert(y)),
            Layer::Noisy {
                perm,
                amplitude,
                weights,
                phases,
            } => {
                // x = P^-1 (y - noise(x)); the noise is a-Lipschitz, a < 1
                let mut x = perm.invert(y);
                let scale = 1.0 + norm.of(y);
                for _ in 0..INVERSION_STEPS {
                    let noise = Self::noise(weights, phases, *amplitude, &x);
                    let shifted: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a - b).collect();
                    let next = perm.invert(&shifted);
                    let step = norm.dist(&next, &x);
                    x = next;
                    if step <= 1e-15 * scale {
                        break;
                    }
                }
                let residual = norm.dist(&self.apply(&x), y);
                if residual <= 1e-12 * scale {
                    Ok(x)
                } else {
                    Err(SpacesError::InversionDiverged { residual })
                }
            }
        }
    }
}

/// A [`MapSpec`] compiled for evaluation.
#[derive(Debug, Clone)]
pub struct PhiIsometry {
    spec: MapSpec,
    layers: Vec<Layer>,
    dim: usize,
}

impl PhiIsometry {
    pub fn new(spec: MapSpec) -> Result<Self, SpacesError> {
        let mut layers = Vec::new();
        compile(&spec.kind, &mut layers)?;
        let dim = layers.first().map(Layer::dim).unwrap_or(0);
        if dim == 0 {
            return Err(SpacesError::InvalidMap("map has no coordinates".into()));
        }
        if let Some(bad) = layers.iter().find(|l| l.dim() != dim) {
            return Err(SpacesError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        if !(spec.claimed_m >= 1.0 && spec.claimed_l >= 0.0) {
            return Err(SpacesError::InvalidMap(format!(
                "claimed modulus needs M >= 1, L >= 0, got ({}, {})",
                spec.claimed_m, spec.claimed_l
            )));
        }
        Ok(Self { spec, layers, dim })
    }

    pub fn spec(&self) -> &MapSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, p: &SpacePoint) -> Result<(), SpacesError> {
        if p.dim() == self.dim {
            Ok(())
        } else {
            Err(SpacesError::DimensionMismatch {
                expected: self.dim,
                got: p.dim(),
            })
        }
    }

    pub fn apply(&self, p: &SpacePoint) -> Result<SpacePoint, SpacesError> {
        self.check(p)?;
        Ok(SpacePoint::new(self.apply_raw(&p.coords), p.norm))
    }

    pub fn invert(&self, q: &SpacePoint) -> Result<SpacePoint, SpacesError> {
        self.check(q)?;
        let mut x = q.coords.clone();
        for layer in self.layers.iter().rev() {
            x = layer.invert(&x, q.norm)?;
        }
        Ok(SpacePoint::new(x, q.norm))
    }

    pub(crate) fn apply_raw(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for layer in &self.layers {
            y = layer.apply(&y);
        }
        y
    }
}

fn compile(kind: &MapKind, out: &mut Vec<Layer>) -> Result<(), SpacesError> {
    let check_eps = |e: f64| {
        if e.is_finite() && e >= 0.0 {
            Ok(())
        } else {
            Err(SpacesError::InvalidMap(format!("eps must be finite and >= 0, got {e}")))
        }
    };
    match kind {
        MapKind::Vestfrid1d { eps } => {
            check_eps(*eps)?;
            out.push(Layer::Vestfrid(vec![*eps]));
        }
        MapKind::CoordinatewiseVestfrid { eps } => {
            for &e in eps {
                check_eps(e)?;
            }
            out.push(Layer::Vestfrid(eps.clone()));
        }
        MapKind::SignedPermutation { sigma, lambda } => {
            out.push(Layer::Perm(SignedPerm::new(sigma, lambda)?));
        }
        MapKind::NoisyIsometry {
            sigma,
            lambda,
            amplitude,
            seed,
        } => {
            if !(amplitude.is_finite() && *amplitude >= 0.0 && *amplitude < 1.0) {
                return Err(SpacesError::InvalidMap(format!(
                    "noise amplitude must lie in [0, 1), got {amplitude}"
                )));
            }
            let perm = SignedPerm::new(sigma, lambda)?;
            let d = perm.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let weights = (0..d)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..=1.0) / d as f64).collect())
                .collect();
            let phases = (0..d).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            out.push(Layer::Noisy {
                perm,
                amplitude: *amplitude,
                weights,
                phases,
            });
        }
        MapKind::Composite { maps } => {
            if maps.is_empty() {
                return Err(SpacesError::InvalidMap("composite needs at least one map".into()));
            }
            for m in maps {
                compile(m, out)?;
            }
        }
    }
    Ok(())
}

/// Measured `eps_T` on a grid of scales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalModulus {
    pub t_grid: Vec<f64>,
    pub eps_hat: Vec<f64>,
    pub sample_count: usize,
}

impl EmpiricalModulus {
    /// Value at the largest grid scale `<= t` (0 below the grid).
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.t_grid.partition_point(|&g| g <= t);
        if idx == 0 {
            0.0
        } else {
            self.eps_hat[idx - 1]
        }
    }
}

/// For every `t` in `t_grid`, the largest `| |Tx-Ty| - |x-y| |` over sampled
/// pairs with `|x-y| <= t` or `|Tx-Ty| <= t`. A lower estimate of `eps_T`.
pub fn measure_eps(map: &PhiIsometry, cloud: &[SpacePoint], t_grid: &[f64]) -> Result<EmpiricalModulus, SpacesError> {
    for p in cloud {
        map.check(p)?;
    }
    let values: Vec<Vec<f64>> = cloud.iter().map(|p| map.apply_raw(&p.coords)).collect();
    let mut pairs = pair_deviations(cloud, &values);
    Ok(modulus_from_pairs(&mut pairs, t_grid))
}

/// `(min(|x-y|, |Tx-Ty|), | |Tx-Ty| - |x-y| |)` for every unordered pair.
fn pair_deviations(points: &[SpacePoint], values: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let norm = points[i].norm;
            let dx = norm.dist(&points[i].coords, &points[j].coords);
            let dt = norm.dist(&values[i], &values[j]);
            out.push((dx.min(dt), (dt - dx).abs()));
        }
    }
    out
}

fn modulus_from_pairs(pairs: &mut [(f64, f64)], t_grid: &[f64]) -> EmpiricalModulus {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut eps_hat = Vec::with_capacity(grid.len());
    let mut running = 0.0f64;
    let mut idx = 0;
    for &t in &grid {
        while idx < pairs.len() && pairs[idx].0 <= t {
            running = running.max(pairs[idx].1);
            idx += 1;
        }
        eps_hat.push(running);
    }
    EmpiricalModulus {
        t_grid: grid,
        eps_hat,
        sample_count: pairs.len(),
    }
}

/// `|T((a+b)/2) - (Ta + Tb)/2|` in the norm of `a`.
pub fn midpoint_deviation(map: &PhiIsometry, a: &SpacePoint, b: &SpacePoint) -> Result<f64, SpacesError> {
    map.check(a)?;
    map.check(b)?;
    Ok(midpoint_deviation_raw(map, &a.coords, &b.coords, a.norm))
}

fn midpoint_deviation_raw(map: &PhiIsometry, a: &[f64], b: &[f64], norm: Norm) -> f64 {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let tm = map.apply_raw(&mid);
    let ta = map.apply_raw(a);
    let tb = map.apply_raw(b);
    let avg: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| 0.5 * (x + y)).collect();
    norm.dist(&tm, &avg)
}

/// Axis-aligned box `[lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupOracle {
    pub sup_value: f64,
    pub argmax: Option<(SpacePoint, SpacePoint)>,
    pub pairs_examined: u64,
}

fn grid_points(region: &Region, per_axis: usize) -> Vec<Vec<f64>> {
    let dim = region.lo.len();
    let axis = |i: usize, j: usize| {
        if per_axis == 1 {
            region.lo[i]
        } else {
            region.lo[i] + (region.hi[i] - region.lo[i]) * j as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut code| {
            (0..dim)
                .map(|i| {
                    let j = code % per_axis;
                    code /= per_axis;
                    axis(i, j)
                })
                .collect()
        })
        .collect()
}

/// Exhaustive maximum of the midpoint deviation over all pairs of a regular
/// grid in `region`.
pub fn deviation_sup_oracle(
    map: &PhiIsometry,
    region: &Region,
    grid_per_axis: usize,
    norm: Norm,
) -> Result<SupOracle, SpacesError> {
    if region.lo.len() != map.dim() || region.hi.len() != map.dim() {
        return Err(SpacesError::DimensionMismatch {
            expected: map.dim(),
            got: region.lo.len(),
        });
    }
    let pairs = (grid_per_axis as f64).powi(2 * map.dim() as i32);
    if pairs > ORACLE_PAIR_BUDGET {
        return Err(SpacesError::BudgetExceeded {
            pairs,
            budget: ORACLE_PAIR_BUDGET,
        });
    }
    let points = grid_points(region, grid_per_axis.max(1));
    let images: Vec<Vec<f64>> = points.iter().map(|p| map.apply_raw(p)).collect();

    let row_max = |i: usize| {
        let mut best = (0.0f64, None::<usize>);
        for j in (i + 1)..points.len() {
            let mid: Vec<f64> = points[i].iter().zip(&points[j]).map(|(x, y)| 0.5 * (x + y)).collect();
            let tm = map.apply_raw(&mid);
            let dev = tm
                .iter()
                .zip(images[i].iter().zip(&images[j]))
                .map(|(m, (a, b))| m - 0.5 * (a + b))
                .collect::<Vec<_>>();
            let v = norm.of(&dev);
            if v > best.0 {
                best = (v, Some(j));
            }
        }
        (best.0, i, best.1)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<(f64, usize, Option<usize>)> = {
        use rayon::prelude::*;
        (0..points.len()).into_par_iter().map(row_max).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<(f64, usize, Option<usize>)> = (0..points.len()).map(row_max).collect();

    let mut best = (0.0f64, None);
    for (v, i, j) in rows {
        if let Some(j) = j {
            if v > best.0 {
                best = (v, Some((i, j)));
            }
        }
    }
    let n = points.len() as u64;
    Ok(SupOracle {
        sup_value: best.0,
        argmax: best.1.map(|(i, j)| {
            (
                SpacePoint::new(points[i].clone(), norm),
                SpacePoint::new(points[j].clone(), norm),
            )
        }),
        pairs_examined: n * n.saturating_sub(1) / 2,
    })
}

/// One row of a bound-validation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginRow {
    pub pair_id: usize,
    pub d: f64,
    pub deviation: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckReport {
    pub rows: Vec<MarginRow>,
    pub violations: usize,
    pub min_margin: f64,
}

impl BoundCheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Verifies `phi(t) >= M t + L` for the map's claim on a geometric grid and
/// the halving property of `phi`.
pub fn check_domination(map: &MapSpec, phi: &PerturbationFunction) -> Result<(), SpacesError> {
    let mut grid = perturb::default_halving_grid();
    grid.insert(0, 0.0);
    for &t in &grid {
        let phi_t = phi.eval_unchecked(t);
        let claimed = map.claimed_m * t + map.claimed_l;
        if phi_t < claimed - 1e-12 * claimed.max(1.0) {
            return Err(SpacesError::ModulusMismatch { t, phi_t, claimed });
        }
    }
    if let Some(t) = perturb::check_halving(phi, &grid).first_violation {
        return Err(BoundsError::HalvingViolated(t).into());
    }
    Ok(())
}

/// Compares the exact midpoint deviation of every pair with the optimized
/// bound for `phi`. Violations are counted, never dropped.
pub fn check_against_bound(
    map: &PhiIsometry,
    phi: &PerturbationFunction,
    pairs: &[(SpacePoint, SpacePoint)],
) -> Result<BoundCheckReport, SpacesError> {
    check_domination(map.spec(), phi)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, (a, b)) in pairs.iter().enumerate() {
        let deviation = midpoint_deviation(map, a, b)?;
        let d = a.dist(b);
        let bound = if d > 0.0 {
            bounds::optimize_bound(phi, d, bounds::DEFAULT_N_MAX).bound
        } else {
            0.0
        };
        rows.push(MarginRow {
            pair_id: id,
            d,
            deviation,
            bound,
            margin: bound - deviation,
        });
    }
    let violations = rows.iter().filter(|r| r.margin < -BOUND_SLACK).count();
    let min_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok(BoundCheckReport {
        rows,
        violations,
        min_margin,
    })
}

/// Greedy maximal `delta0`-separated subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparatedNet {
    /// Indices into the input, in selection order.
    pub indices: Vec<usize>,
    /// Smallest pairwise distance inside the net (`inf` for one point).
    pub min_separation: f64,
    /// Largest distance from an input point to the net.
    pub cover_radius: f64,
}

impl SeparatedNet {
    /// Both certificates: separation `>= delta0` and cover radius `< delta0`.
    pub fn certifies(&self, delta0: f64) -> bool {
        self.min_separation >= delta0 && self.cover_radius < delta0
    }
}

pub fn greedy_separated_net(points: &[SpacePoint], delta0: f64) -> SeparatedNet {
    let mut indices: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if indices.iter().all(|&j| points[j].dist(p) >= delta0) {
            indices.push(i);
        }
    }
    let mut min_separation = f64::INFINITY;
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            min_separation = min_separation.min(points[i].dist(&points[j]));
        }
    }
    let cover_radius = points
        .iter()
        .map(|p| indices.iter().map(|&j| points[j].dist(p)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    SeparatedNet {
        indices,
        min_separation,
        cover_radius: if points.is_empty() { 0.0 } else { cover_radius },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairCertificate {
    pub delta0: f64,
    pub eps_hat: f64,
    /// `2 delta0 + 2 eps_hat`.
    pub radius: f64,
    pub max_displacement: f64,
    pub net: Vec<usize>,
    /// Smallest `|Ta - Tb|` over distinct net points.
    pub net_image_separation: f64,
    /// `net_image_separation >= delta0 - eps_hat` and positive.
    pub injective_on_net: bool,
    /// Every net point is sent to a codomain point equal to its image.
    pub net_agreement: bool,
}

impl RepairCertificate {
    pub fn holds(&self) -> bool {
        self.max_displacement <= self.radius && self.injective_on_net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Repair {
    /// `table[i]` is the codomain index assigned to domain point `i`.
    pub table: Vec<usize>,
    pub certificate: RepairCertificate,
}

/// Replaces a possibly non-injective sampled map by a bijection between
/// `domain` and `codomain` that moves every image by at most
/// `2 delta0 + 2 eps_hat(delta0)`.
pub fn repair_to_bijection(
    domain: &[SpacePoint],
    codomain: &[SpacePoint],
    map_values: &[SpacePoint],
    delta0: f64,
) -> Result<Repair, SpacesError> {
    let n = domain.len();
    if codomain.len() != n || map_values.len() != n {
        return Err(SpacesError::CardinalityMismatch {
            domain: n,
            codomain: codomain.len(),
            values: map_values.len(),
        });
    }
    let values: Vec<Vec<f64>> = map_values.iter().map(|p| p.coords.clone()).collect();
    let mut pairs = pair_deviations(domain, &values);
    let eps_hat = modulus_from_pairs(&mut pairs, &[delta0]).eps_hat[0];
    if eps_hat >= delta0 {
        return Err(SpacesError::HypothesisFailed { eps_hat, delta0 });
    }
    let radius = 2.0 * delta0 + 2.0 * eps_hat;

    let net = greedy_separated_net(domain, delta0);
    let mut is_net = vec![false; n];
    for &i in &net.indices {
        is_net[i] = true;
    }
    let mut net_image_separation = f64::INFINITY;
    for (a, &i) in net.indices.iter().enumerate() {
        for &j in &net.indices[a + 1..] {
            net_image_separation = net_image_separation.min(map_values[i].dist(&map_values[j]));
        }
    }
    let injective_on_net = net_image_separation > 0.0 && net_image_separation >= delta0 - eps_hat - 1e-12;

    // admissible edges, nearest first; net points win ties
    let mut adjacency: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for i in 0..n {
        for (j, y) in codomain.iter().enumerate() {
            let dist = map_values[i].dist(y);
            if dist <= radius {
                adjacency[i].push((dist, j));
                edges.push((dist, !is_net[i], i, j));
            }
        }
        adjacency[i].sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    edges.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut left = vec![usize::MAX; n];
    let mut right = vec![usize::MAX; n];
    for &(_, _, i, j) in &edges {
        if left[i] == usize::MAX && right[j] == usize::MAX {
            left[i] = j;
            right[j] = i;
        }
    }
    for i in 0..n {
        if left[i] == usize::MAX {
            let mut seen = vec![false; n];
            if !augment(i, &adjacency, &mut left, &mut right, &mut seen) {
                return Err(SpacesError::NoAdmissibleMatching { radius });
            }
        }
    }

    let max_displacement = (0..n)
        .map(|i| map_values[i].dist(&codomain[left[i]]))
        .fold(0.0, f64::max);
    let net_agreement = net
        .indices
        .iter()
        .all(|&i| map_values[i].dist(&codomain[left[i]]) <= 1e-12);

    Ok(Repair {
        table: left,
        certificate: RepairCertificate {
            delta0,
            eps_hat,
            radius,
            max_displacement,
            net: net.indices,
            net_image_separation,
            injective_on_net,
            net_agreement,
        },
    })
}

fn augment(
    i: usize,
    adjacency: &[Vec<(f64, usize)>],
    left: &mut [usize],
    right: &mut [usize],
    seen: &mut [bool],
) -> bool {
    for &(_, j) in &adjacency[i] {
        if seen[j] {
            continue;
        }
        seen[j] = true;
        if right[j] == usize::MAX || augment(right[j], adjacency, left, right, seen) {
            left[i] = j;
            right[j] = i;
            return true;
        }
    }
    false
}

/// One sampled pair of the net experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetRow {
    pub d: f64,
    pub deviation: f64,
    pub bound: f64,
}

/// Restricts `map` to the lattice `xi Z^d` and compares the deviation at the
/// lattice point nearest to each midpoint with `net_bound(eps, xi, xi, d)`.
///
/// `map` must be `(1 + eps)`-bi-Lipschitz without additive term.
pub fn net_midpoint_experiment<R: Rng>(
    map: &PhiIsometry,
    xi: f64,
    radius: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<NetRow>, SpacesError> {
    let eps = map.spec().claimed_m - 1.0;
    let dim = map.dim();
    let snap = |v: f64| (v / xi).round() * xi;
    let mut rows = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a: Vec<f64> = (0..dim).map(|_| snap(rng.gen_range(-radius..=radius))).collect();
        let b: Vec<f64> = (0..dim).map(|_| snap(rng.gen_range(-radius..=radius))).collect();
        let z: Vec<f64> = a.iter().zip(&b).map(|(x, y)| snap(0.5 * (x + y))).collect();
        let ta = map.apply_raw(&a);
        let tb = map.apply_raw(&b);
        let tz = map.apply_raw(&z);
        let avg: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| 0.5 * (x + y)).collect();
        let d = Norm::Sup.dist(&a, &b);
        rows.push(NetRow {
            d,
            deviation: Norm::Sup.dist(&tz, &avg),
            bound: bounds::net_bound(eps, xi, xi, d)?,
        });
    }
    Ok(rows)
}
