//! Recovery of the canonical isometry behind a perturbed operator between
//! finite sup-norm spaces `R^{nX} -> R^{nY}`.
//!
//! On a finite discrete index set a peak function at `x` is just `m e_x`, so
//! the candidate set of `x` is the set of output coordinates where
//! `T(s m e_x) >= D m` and `T(-s m e_x) <= -D m`. When every candidate set is
//! a singleton and the assignment is injective, it defines `sigma`, and the
//! sign `s` that produced it defines `lambda`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spaces::{MapKind, MapSpec, Norm, PhiIsometry, SpacesError};

/// Largest admissible slope: `sqrt(16/15)`.
pub fn m0() -> f64 {
    (16.0f64 / 15.0).sqrt()
}

/// Slope in `|Tf - If| <= 76 (M - 1) |f| + Delta`.
pub const STABILITY_SLOPE: f64 = 76.0;
/// Coordinates with `|f(x)| > 30 (M - 1) |f|` must keep their sign.
pub const SIGN_THRESHOLD: f64 = 30.0;
/// Slope in `| |Tf(sigma x)| - |f(x)| | <= 15 (M^2 - M) |f| + Delta`.
pub const MODULUS_SLOPE: f64 = 15.0;
/// Arithmetic slack for the `L = 0` pass/fail checks.
pub const CHECK_SLACK: f64 = 1e-9;
/// Peak heights tried when `L > 0`: `1, 2, 4, ..., 2^20`.
pub const ESCALATION_STEPS: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanachStoneError {
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("no output coordinate reaches the threshold for index {x} with either sign")]
    EmptyForBothSigns { x: usize },
    #[error("both signs give candidates for index {x}")]
    AmbiguousSign { x: usize },
    #[error("claimed M = {m} is not below sqrt(16/15) = {m0}")]
    MTooLarge { m: f64, m0: f64 },
    #[error("domain has {nx} points but codomain has {ny}")]
    CardinalityMismatch { nx: usize, ny: usize },
    #[error("candidate set of index {x} is not a singleton at every peak height up to {m}")]
    NotSingleValued { x: usize, m: f64 },
    #[error("output index {y} is assigned twice at every peak height up to {m}")]
    NotBijective { y: usize, m: f64 },
    #[error("1 - eps(M) M - eps(M) = {margin} is not positive")]
    ConditionIIViolated { margin: f64 },
    #[error("invalid modulus claim M = {m}, L = {l}")]
    InvalidClaim { m: f64, l: f64 },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tabulated operator has no row for the queried input")]
    MissingTableRow,
    #[error(transparent)]
    Map(#[from] SpacesError),
}

/// An operator known only through evaluation on input/output rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedOperator {
    pub nx: usize,
    pub ny: usize,
    pub rows: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TabulatedOperator {
    pub fn new(nx: usize, ny: usize, rows: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self, BanachStoneError> {
        for (input, output) in &rows {
            if input.len() != nx {
                return Err(BanachStoneError::DimensionMismatch {
                    expected: nx,
                    got: input.len(),
                });
            }
            if output.len() != ny {
                return Err(BanachStoneError::DimensionMismatch {
                    expected: ny,
                    got: output.len(),
                });
            }
        }
        Ok(Self { nx, ny, rows })
    }

    /// Samples `source` at every `+-m e_x` for the heights `recover` may try,
    /// plus the origin.
    pub fn from_peaks(source: &OperatorOracle, heights: &[f64]) -> Result<Self, BanachStoneError> {
        let mut rows = vec![(vec![0.0; source.nx()], source.eval(&vec![0.0; source.nx()])?)];
        for &m in heights {
            for x in 0..source.nx() {
                for s in [1.0, -1.0] {
                    let f = peak_vector(source.nx(), x, m, s)?;
                    let out = source.eval(&f)?;
                    rows.push((f, out));
                }
            }
        }
        Self::new(source.nx(), source.ny(), rows)
    }

    fn lookup(&self, f: &[f64]) -> Result<Vec<f64>, BanachStoneError> {
        self.rows
            .iter()
            .find(|(input, _)| Norm::Sup.dist(input, f) <= 1e-12 * (1.0 + Norm::Sup.of(f)))
            .map(|(_, out)| out.clone())
            .ok_or(BanachStoneError::MissingTableRow)
    }
}

type OperatorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum OracleSource {
    Map(PhiIsometry),
    Table(TabulatedOperator),
    Function(Arc<OperatorFn>),
}

impl fmt::Debug for OracleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSource::Map(m) => f.debug_tuple("Map").field(m.spec()).finish(),
            OracleSource::Table(t) => f.debug_struct("Table").field("rows", &t.rows.len()).finish(),
            OracleSource::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Black-box operator `R^{nX} -> R^{nY}` with a claimed modulus
/// `|Tf - Tg| <= M |f - g| + L` (sup norms).
#[derive(Debug, Clone)]
pub struct OperatorOracle {
    nx: usize,
    ny: usize,
    source: OracleSource,
    pub claimed_m: f64,
    pub claimed_l: f64,
}

impl OperatorOracle {
    pub fn from_map(spec: MapSpec) -> Result<Self, BanachStoneError> {
        let (m, l) = (spec.claimed_m, spec.claimed_l);
        let map = PhiIsometry::new(spec)?;
        let n = map.dim();
        Self::build(n, n, OracleSource::Map(map), m, l)
    }

    pub fn from_table(table: TabulatedOperator, claimed_m: f64, claimed_l: f64) -> Result<Self, BanachStoneError> {
        Self::build(table.nx, table.ny, OracleSource::Table(table), claimed_m, claimed_l)
    }

    pub fn from_fn<F>(nx: usize, ny: usize, f: F, claimed_m: f64, claimed_l: f64) -> Result<Self, BanachStoneError>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::build(nx, ny, OracleSource::Function(Arc::new(f)), claimed_m, claimed_l)
    }

    fn build(nx: usize, ny: usize, source: OracleSource, m: f64, l: f64) -> Result<Self, BanachStoneError> {
        if !(m.is_finite() && m >= 1.0 && l.is_finite() && l >= 0.0) {
            return Err(BanachStoneError::InvalidClaim { m, l });
        }
        Ok(Self {
            nx,
            ny,
            source,
            claimed_m: m,
            claimed_l: l,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn eval(&self, f: &[f64]) -> Result<Vec<f64>, BanachStoneError> {
        if f.len() != self.nx {
            return Err(BanachStoneError::DimensionMismatch {
                expected: self.nx,
                got: f.len(),
            });
        }
        let out = match &self.source {
            OracleSource::Map(map) => map.apply_raw(f),
            OracleSource::Table(table) => table.lookup(f)?,
            OracleSource::Function(func) => func(f),
        };
        if out.len() != self.ny {
            return Err(BanachStoneError::DimensionMismatch {
                expected: self.ny,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

/// `T = P o V`: coordinatewise Vestfrid scaling `eps[i]` on input `i`, then
/// the signed permutation `(sigma, lambda)`. `M = 1 + max eps`, `L = 0`.
pub fn vestfrid_permutation_oracle(
    eps: Vec<f64>,
    sigma: Vec<usize>,
    lambda: Vec<i8>,
) -> Result<OperatorOracle, BanachStoneError> {
    OperatorOracle::from_map(MapSpec::new(MapKind::Composite {
        maps: vec![
            MapKind::CoordinatewiseVestfrid { eps },
            MapKind::SignedPermutation { sigma, lambda },
        ],
    }))
}

/// The linear isometry `If(sigma(x)) = lambda(x) f(x)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredIsometry {
    pub sigma: Vec<usize>,
    pub lambda: Vec<i8>,
}

impl RecoveredIsometry {
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sigma.len()];
        for (x, &y) in self.sigma.iter().enumerate() {
            out[y] = f64::from(self.lambda[x]) * f[x];
        }
        out
    }

    /// `sigma` is a bijection and every sign is `+-1`.
    pub fn is_valid(&self) -> bool {
        let n = self.sigma.len();
        let mut hit = vec![false; n];
        for &y in &self.sigma {
            if y >= n || hit[y] {
                return false;
            }
            hit[y] = true;
        }
        self.lambda.len() == n && self.lambda.iter().all(|&l| l == 1 || l == -1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryDiagnostics {
    /// `14 - 13 M`.
    pub d_used: f64,
    pub m_used: f64,
    pub candidate_sets: Vec<Vec<usize>>,
    pub m_escalations: u32,
    /// `2 M - 1 - D`.
    pub eps_m: f64,
    /// `1 - eps(M) M - eps(M)`.
    pub condition_ii_margin: f64,
}

/// `D = 14 - 13 M`.
pub fn threshold_d(m: f64) -> f64 {
    14.0 - 13.0 * m
}

/// `eps(M) = 2 M - 1 - D` with `D = 14 - 13 M`, i.e. `15 (M - 1)`.
pub fn eps_of_m(m: f64) -> f64 {
    2.0 * m - 1.0 - threshold_d(m)
}

/// `1 - eps(M) M - eps(M)`; positive exactly when `M < sqrt(16/15)`.
pub fn condition_ii_margin(m: f64) -> f64 {
    let e = eps_of_m(m);
    1.0 - e * m - e
}

/// `sign * m * e_x` in `R^n`.
pub fn peak_vector(n: usize, x: usize, m: f64, sign: f64) -> Result<Vec<f64>, BanachStoneError> {
    if x >= n {
        return Err(BanachStoneError::IndexOutOfRange { index: x, dim: n });
    }
    let mut v = vec![0.0; n];
    v[x] = sign.signum() * m;
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    pub sign: i8,
}

/// Output coordinates `y` with `T(s m e_x)(y) >= D m` and
/// `T(-s m e_x)(y) <= -D m`, for the unique sign `s` giving a non-empty set.
pub fn candidate_set(oracle: &OperatorOracle, x: usize, d: f64, m: f64) -> Result<CandidateSet, BanachStoneError> {
    let plus = oracle.eval(&peak_vector(oracle.nx(), x, m, 1.0)?)?;
    let minus = oracle.eval(&peak_vector(oracle.nx(), x, m, -1.0)?)?;
    let level = d * m;
    let select = |up: &[f64], down: &[f64]| -> Vec<usize> {
        (0..oracle.ny())
            .filter(|&y| up[y] >= level && down[y] <= -level)
            .collect()
    };
    let pos = select(&plus, &minus);
    let neg = select(&minus, &plus);
    match (pos.is_empty(), neg.is_empty()) {
        (true, true) => Err(BanachStoneError::EmptyForBothSigns { x }),
        (false, false) => Err(BanachStoneError::AmbiguousSign { x }),
        (false, true) => Ok(CandidateSet { indices: pos, sign: 1 }),
        (true, false) => Ok(CandidateSet { indices: neg, sign: -1 }),
    }
}

/// Peak heights tried by [`recover`].
pub fn escalation_schedule(claimed_l: f64) -> Vec<f64> {
    if claimed_l == 0.0 {
        vec![1.0]
    } else {
        (0..=ESCALATION_STEPS).map(|j| 2f64.powi(j as i32)).collect()
    }
}

enum Attempt {
    Done(RecoveredIsometry, Vec<Vec<usize>>),
    NotSingle(usize),
    NotInjective(usize),
}

fn attempt(oracle: &OperatorOracle, d: f64, m: f64) -> Result<Attempt, BanachStoneError> {
    let n = oracle.nx();
    let mut sigma = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut sets = Vec::with_capacity(n);
    for x in 0..n {
        match candidate_set(oracle, x, d, m) {
            Ok(cs) if cs.indices.len() == 1 => {
                sigma.push(cs.indices[0]);
                lambda.push(cs.sign);
                sets.push(cs.indices);
            }
            Ok(_) | Err(BanachStoneError::EmptyForBothSigns { .. }) | Err(BanachStoneError::AmbiguousSign { .. }) => {
                return Ok(Attempt::NotSingle(x))
            }
            Err(e) => return Err(e),
        }
    }
    let mut owner = vec![false; oracle.ny()];
    for &y in &sigma {
        if owner[y] {
            return Ok(Attempt::NotInjective(y));
        }
        owner[y] = true;
    }
    Ok(Attempt::Done(RecoveredIsometry { sigma, lambda }, sets))
}

/// Recovers `(sigma, lambda)` from `oracle`.
///
/// Requires `nX = nY` and claimed `M < sqrt(16/15)`. Uses `D = 14 - 13 M`
/// and peak height `m = 1` when `L = 0`; otherwise escalates `m` through
/// `1, 2, ..., 2^20` until all candidate sets are singletons forming a
/// bijection.
pub fn recover(oracle: &OperatorOracle) -> Result<(RecoveredIsometry, RecoveryDiagnostics), BanachStoneError> {
    if oracle.nx() != oracle.ny() {
        return Err(BanachStoneError::CardinalityMismatch {
            nx: oracle.nx(),
            ny: oracle.ny(),
        });
    }
    let m_claim = oracle.claimed_m;
    if m_claim >= m0() {
        return Err(BanachStoneError::MTooLarge { m: m_claim, m0: m0() });
    }
    let margin = condition_ii_margin(m_claim);
    if margin <= 0.0 {
        return Err(BanachStoneError::ConditionIIViolated { margin });
    }
    let d = threshold_d(m_claim);

    let schedule = escalation_schedule(oracle.claimed_l);
    let mut last_failure = None;
    for (step, &m) in schedule.iter().enumerate() {
        match attempt(oracle, d, m)? {
            Attempt::Done(iso, sets) => {
                return Ok((
                    iso,
                    RecoveryDiagnostics {
                        d_used: d,
                        m_used: m,
                        candidate_sets: sets,
                        m_escalations: step as u32,
                        eps_m: eps_of_m(m_claim),
                        condition_ii_margin: margin,
                    },
                ))
            }
            Attempt::NotSingle(x) => last_failure = Some(BanachStoneError::NotSingleValued { x, m }),
            Attempt::NotInjective(y) => last_failure = Some(BanachStoneError::NotBijective { y, m }),
        }
    }
    Err(last_failure.expect("schedule is never empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `max_f |Tf - If| - 76 (M - 1) |f|`.
    pub sup_excess: f64,
    /// `max(0, sup_excess)`: the empirical additive constant.
    pub delta_hat: f64,
    /// `max_f |Tf - If| / |f|` over non-zero samples.
    pub sup_ratio: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Compares `T` with the recovered isometry on `samples`.
pub fn stability_report(
    oracle: &OperatorOracle,
    iso: &RecoveredIsometry,
    samples: &[Vec<f64>],
) -> Result<StabilityReport, BanachStoneError> {
    let slope = STABILITY_SLOPE * (oracle.claimed_m - 1.0);
    let mut sup_excess = f64::NEG_INFINITY;
    let mut sup_ratio = 0.0f64;
    for f in samples {
        let tf = oracle.eval(f)?;
        let dist = Norm::Sup.dist(&tf, &iso.apply(f));
        let norm = Norm::Sup.of(f);
        sup_excess = sup_excess.max(dist - slope * norm);
        if norm > 0.0 {
            sup_ratio = sup_ratio.max(dist / norm);
        }
    }
    if samples.is_empty() {
        sup_excess = 0.0;
    }
    let pass = oracle.claimed_l > 0.0 || sup_excess <= CHECK_SLACK;
    Ok(StabilityReport {
        sup_excess,
        delta_hat: sup_excess.max(0.0),
        sup_ratio,
        samples: samples.len(),
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignCheck {
    /// Coordinates with `|f(x)| > 30 (M - 1) |f|`.
    pub qualifying: Vec<usize>,
    /// Qualifying coordinates where `sign Tf(sigma x) != sign(lambda(x) f(x))`.
    pub failures: Vec<usize>,
}

impl SignCheck {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn sign_check(oracle: &OperatorOracle, iso: &RecoveredIsometry, f: &[f64]) -> Result<SignCheck, BanachStoneError> {
    let tf = oracle.eval(f)?;
    let threshold = SIGN_THRESHOLD * (oracle.claimed_m - 1.0) * Norm::Sup.of(f);
    let mut qualifying = Vec::new();
    let mut failures = Vec::new();
    for (x, &fx) in f.iter().enumerate() {
        if fx.abs() > threshold {
            qualifying.push(x);
            let expected = f64::from(iso.lambda[x]) * fx;
            if tf[iso.sigma[x]].signum() != expected.signum() || tf[iso.sigma[x]] == 0.0 {
                failures.push(x);
            }
        }
    }
    Ok(SignCheck { qualifying, failures })
}

/// `max_x | |Tf(sigma x)| - |f(x)| | - 15 (M^2 - M) |f|`.
pub fn modulus_check(oracle: &OperatorOracle, iso: &RecoveredIsometry, f: &[f64]) -> Result<f64, BanachStoneError> {
    let tf = oracle.eval(f)?;
    let m = oracle.claimed_m;
    let allowance = MODULUS_SLOPE * (m * m - m) * Norm::Sup.of(f);
    Ok(f.iter()
        .enumerate()
        .map(|(x, &fx)| (tf[iso.sigma[x]].abs() - fx.abs()).abs() - allowance)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn signed_perm_oracle(sigma: Vec<usize>, lambda: Vec<i8>) -> OperatorOracle {
        OperatorOracle::from_map(MapSpec::new(MapKind::SignedPermutation { sigma, lambda })).unwrap()
    }

    #[test]
    fn peak_vector_examples() {
        assert_eq!(peak_vector(4, 2, 2.0, 1.0).unwrap(), vec![0.0, 0.0, 2.0, 0.0]);
        assert_eq!(peak_vector(3, 0, 1.0, -1.0).unwrap(), vec![-1.0, 0.0, 0.0]);
        assert!(matches!(
            peak_vector(3, 3, 1.0, 1.0),
            Err(BanachStoneError::IndexOutOfRange { index: 3, dim: 3 })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let n = rng.gen_range(1..10);
            let m = rng.gen_range(0.1..100.0);
            let v = peak_vector(n, rng.gen_range(0..n), m, if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).unwrap();
            assert_eq!(Norm::Sup.of(&v), m);
        }
    }

    #[test]
    fn candidate_set_exact_permutation() {
        let t = signed_perm_oracle(vec![2, 0, 1], vec![1, 1, 1]);
        let cs = candidate_set(&t, 0, 0.9, 1.0).unwrap();
        assert_eq!(
            cs,
            CandidateSet {
                indices: vec![2],
                sign: 1
            }
        );
    }

    #[test]
    fn candidate_set_vestfrid_brute_force() {
        let sigma = vec![3, 1, 0, 2];
        let lambda = vec![1, -1, -1, 1];
        let t = vestfrid_permutation_oracle(vec![0.02; 4], sigma.clone(), lambda.clone()).unwrap();
        let d = threshold_d(1.02);
        assert!((d - 0.74).abs() < 1e-12);
        for x in 0..4 {
            // scan every output coordinate directly
            let up = t.eval(&peak_vector(4, x, 1.0, f64::from(lambda[x])).unwrap()).unwrap();
            let down = t.eval(&peak_vector(4, x, 1.0, -f64::from(lambda[x])).unwrap()).unwrap();
            let expected: Vec<usize> = (0..4).filter(|&y| up[y] >= d && down[y] <= -d).collect();
            let cs = candidate_set(&t, x, d, 1.0).unwrap();
            assert_eq!(cs.indices, expected);
            assert_eq!(cs.indices, vec![sigma[x]]);
            assert_eq!(cs.sign, lambda[x]);
        }
    }

    #[test]
    fn candidate_set_zero_operator() {
        let t = OperatorOracle::from_fn(3, 3, |f| vec![0.0; f.len()], 1.0, 0.0).unwrap();
        assert_eq!(
            candidate_set(&t, 1, 0.5, 1.0),
            Err(BanachStoneError::EmptyForBothSigns { x: 1 })
        );
    }

    #[test]
    fn candidate_set_ambiguous() {
        // y0 follows f, y1 follows -f
        let t = OperatorOracle::from_fn(1, 2, |f| vec![f[0], -f[0]], 1.0, 0.0).unwrap();
        assert_eq!(
            candidate_set(&t, 0, 0.9, 1.0),
            Err(BanachStoneError::AmbiguousSign { x: 0 })
        );
    }

    #[test]
    fn recover_exact_permutation() {
        let t = signed_perm_oracle(vec![1, 2, 0], vec![-1, 1, -1]);
        let (iso, diag) = recover(&t).unwrap();
        assert_eq!(
            iso,
            RecoveredIsometry {
                sigma: vec![1, 2, 0],
                lambda: vec![-1, 1, -1]
            }
        );
        assert_eq!(diag.d_used, 1.0);
        assert_eq!(diag.eps_m, 0.0);
        assert_eq!(diag.condition_ii_margin, 1.0);
        assert_eq!(diag.m_used, 1.0);
        assert_eq!(diag.m_escalations, 0);
    }

    #[test]
    fn recover_vestfrid_perturbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (sigma, lambda) = crate::spaces::random_signed_permutation(8, &mut rng);
        let t = vestfrid_permutation_oracle(vec![0.01; 8], sigma.clone(), lambda.clone()).unwrap();
        let (iso, _) = recover(&t).unwrap();
        assert_eq!(iso.sigma, sigma);
        assert_eq!(iso.lambda, lambda);
        assert!(iso.is_valid());
    }

    #[test]
    fn recover_linear_crosstalk() {
        // T = P (I + c A) with |c A|_inf = 0.02; M = 1 / (1 - 0.02)
        let n = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (sigma, lambda) = crate::spaces::random_signed_permutation(n, &mut rng);
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0) * 0.02 / n as f64).collect())
            .collect();
        let perm = RecoveredIsometry {
            sigma: sigma.clone(),
            lambda: lambda.clone(),
        };
        let p2 = perm.clone();
        let t = OperatorOracle::from_fn(
            n,
            n,
            move |f| {
                let mixed: Vec<f64> = (0..n)
                    .map(|i| f[i] + a[i].iter().zip(f).map(|(w, v)| w * v).sum::<f64>())
                    .collect();
                p2.apply(&mixed)
            },
            1.0 / 0.98,
            0.0,
        )
        .unwrap();
        let (iso, _) = recover(&t).unwrap();
        assert_eq!(iso, perm);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        assert!(stability_report(&t, &iso, &samples).unwrap().pass);
    }

    #[test]
    fn recover_rejects_large_m() {
        let spec = MapSpec {
            claimed_m: 1.04,
            ..MapSpec::signed_identity(3)
        };
        let t = OperatorOracle::from_map(spec).unwrap();
        assert!(1.04 > m0() && (m0() - 1.032_795_558_988_644).abs() < 1e-12);
        assert!(matches!(recover(&t), Err(BanachStoneError::MTooLarge { .. })));
    }

    #[test]
    fn recover_rejects_mismatched_sizes() {
        let t = OperatorOracle::from_fn(2, 3, |_| vec![0.0; 3], 1.0, 0.0).unwrap();
        assert_eq!(
            recover(&t).unwrap_err(),
            BanachStoneError::CardinalityMismatch { nx: 2, ny: 3 }
        );
    }

    #[test]
    fn recover_fails_on_collapsing_operator() {
        // every input lands on output 0
        let t = OperatorOracle::from_fn(3, 3, |f| vec![f.iter().sum(), 0.0, 0.0], 1.0, 0.0).unwrap();
        assert!(matches!(recover(&t), Err(BanachStoneError::NotBijective { y: 0, .. })));
        let z = OperatorOracle::from_fn(3, 3, |f| vec![0.0; f.len()], 1.0, 0.5).unwrap();
        match recover(&z) {
            Err(BanachStoneError::NotSingleValued { m, .. }) => assert_eq!(m, 2f64.powi(20)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recover_escalates_with_additive_noise() {
        // bounded noise of size 0.3 hides peaks at m = 1, not at larger m
        let n = 4;
        let perm = RecoveredIsometry {
            sigma: vec![2, 3, 1, 0],
            lambda: vec![1, -1, 1, -1],
        };
        let p2 = perm.clone();
        let noise = |f: &[f64]| -> Vec<f64> {
            (0..f.len())
                .map(|j| 0.3 * ((j as f64) + f.iter().sum::<f64>()).sin())
                .collect()
        };
        let zero_noise = noise(&vec![0.0; n]);
        let t = OperatorOracle::from_fn(
            n,
            n,
            move |f| {
                let mut out = p2.apply(f);
                for ((o, a), b) in out.iter_mut().zip(noise(f)).zip(&zero_noise) {
                    *o += a - b;
                }
                out
            },
            1.01,
            0.6,
        )
        .unwrap();
        let (iso, diag) = recover(&t).unwrap();
        assert_eq!(iso, perm);
        assert!(diag.m_escalations > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let rep = stability_report(&t, &iso, &samples).unwrap();
        assert!(rep.delta_hat <= 0.6 + 1e-12);
    }

    #[test]
    fn stability_examples() {
        let t = signed_perm_oracle(vec![0, 1], vec![1, 1]);
        let iso = RecoveredIsometry {
            sigma: vec![0, 1],
            lambda: vec![1, 1],
        };
        let r = stability_report(&t, &iso, &[vec![1.0, -2.0], vec![0.0, 0.0]]).unwrap();
        assert!(r.sup_excess <= 0.0 && r.pass);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (sigma, lambda) = crate::spaces::random_signed_permutation(6, &mut rng);
        let t = vestfrid_permutation_oracle(vec![0.01; 6], sigma, lambda).unwrap();
        let (iso, _) = recover(&t).unwrap();
        let samples: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let r = stability_report(&t, &iso, &samples).unwrap();
        assert!(r.pass && r.sup_excess < 0.0);
        // per-sample check of both sides
        for f in &samples {
            let lhs = Norm::Sup.dist(&t.eval(f).unwrap(), &iso.apply(f));
            assert!(lhs <= 76.0 * 0.01 * Norm::Sup.of(f) + 1e-9);
        }
    }

    #[test]
    fn stability_noise_gives_delta_hat() {
        let a = 0.2;
        let perm = RecoveredIsometry {
            sigma: vec![1, 0, 2],
            lambda: vec![1, 1, -1],
        };
        let p2 = perm.clone();
        let t = OperatorOracle::from_fn(
            3,
            3,
            move |f| {
                let mut out = p2.apply(f);
                let phase = f.iter().sum::<f64>();
                for (j, o) in out.iter_mut().enumerate() {
                    *o += a * ((phase + j as f64).sin() - (j as f64).sin());
                }
                out
            },
            1.0,
            2.0 * a,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let r = stability_report(&t, &perm, &samples).unwrap();
        assert!(r.delta_hat <= 2.0 * a + 1e-12);
        assert!(r.delta_hat > 0.0);
    }

    #[test]
    fn sign_and_modulus_checks() {
        let id = signed_perm_oracle(vec![0, 1, 2], vec![1, 1, 1]);
        let iso = RecoveredIsometry {
            sigma: vec![0, 1, 2],
            lambda: vec![1, 1, 1],
        };
        let f = vec![1.0, -0.5, 3.0];
        assert!(sign_check(&id, &iso, &f).unwrap().pass());
        assert!(modulus_check(&id, &iso, &f).unwrap() <= 0.0);

        let zero = sign_check(&id, &iso, &[0.0, 0.0, 0.0]).unwrap();
        assert!(zero.qualifying.is_empty() && zero.pass());

        let t = vestfrid_permutation_oracle(vec![0.01; 3], vec![2, 0, 1], vec![-1, 1, -1]).unwrap();
        let (iso, _) = recover(&t).unwrap();
        let f = vec![2.0, -1.5, 1.0];
        let sc = sign_check(&t, &iso, &f).unwrap();
        assert_eq!(sc.qualifying, vec![0, 1, 2]);
        assert!(sc.pass());
        assert!(modulus_check(&t, &iso, &f).unwrap() <= CHECK_SLACK);
    }

    #[test]
    fn constant_identities() {
        assert_eq!(threshold_d(1.0), 1.0);
        assert!((eps_of_m(1.02) - 0.3).abs() < 1e-12);
        for i in 0..=100 {
            let m = 1.0 + 0.001 * i as f64;
            assert!((condition_ii_margin(m) - (16.0 - 15.0 * m * m)).abs() < 1e-12);
            assert_eq!(threshold_d(m) > 0.0, m < 14.0 / 13.0);
        }
    }

    #[test]
    fn tabulated_oracle_round_trip() {
        let t = vestfrid_permutation_oracle(vec![0.02; 3], vec![1, 2, 0], vec![1, -1, 1]).unwrap();
        let table = TabulatedOperator::from_peaks(&t, &[1.0]).unwrap();
        let tab = OperatorOracle::from_table(table, t.claimed_m, t.claimed_l).unwrap();
        let (a, _) = recover(&t).unwrap();
        let (b, _) = recover(&tab).unwrap();
        assert_eq!(a, b);
        assert_eq!(tab.eval(&[0.5, 0.0, 0.0]), Err(BanachStoneError::MissingTableRow));
    }
}
