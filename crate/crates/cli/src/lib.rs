//! Batch front end: every run is described by a [`RunConfig`] and produces a
//! JSON or CSV document plus a process exit code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use isobound::banach_stone::{self, BanachStoneError, OperatorOracle, TabulatedOperator};
use isobound::bounds::{self, finite_or_overflow, BoundMethod, BoundsError};
use isobound::keps::{self, KepsError, KepsInstance, SweepRow};
use isobound::perturb::{self, PerturbationFunction};
use isobound::spaces::{self, MapSpec, MarginRow, PhiIsometry, SpacePoint, SpacesError};
use isobound::verify::{self, CriterionResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
/// Some simulated pair or verification criterion failed.
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_M_RANGE: i32 = 4;
pub const EXIT_RECOVERY: i32 = 5;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn with_code(code: i32, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::HalvingViolated(_) => Self::with_code(EXIT_HYPOTHESIS, e),
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<SpacesError> for CliError {
    fn from(e: SpacesError) -> Self {
        match e {
            SpacesError::ModulusMismatch { .. } | SpacesError::HypothesisFailed { .. } | SpacesError::Bounds(_) => {
                Self::with_code(EXIT_HYPOTHESIS, e)
            }
            _ => Self::config(e.to_string()),
        }
    }
}

impl From<BanachStoneError> for CliError {
    fn from(e: BanachStoneError) -> Self {
        use BanachStoneError::*;
        let code = match e {
            MTooLarge { .. } | ConditionIIViolated { .. } => EXIT_M_RANGE,
            CardinalityMismatch { .. }
            | NotSingleValued { .. }
            | NotBijective { .. }
            | EmptyForBothSigns { .. }
            | AmbiguousSign { .. }
            | MissingTableRow => EXIT_RECOVERY,
            InvalidClaim { .. } | DimensionMismatch { .. } | IndexOutOfRange { .. } | Map(_) => EXIT_CONFIG,
        };
        Self::with_code(code, e)
    }
}

impl From<KepsError> for CliError {
    fn from(e: KepsError) -> Self {
        Self::config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Distances to evaluate: one value, an explicit list, or a geometric grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DGrid {
    Single(f64),
    List(Vec<f64>),
    Geometric { min: f64, max: f64, points: usize },
}

impl DGrid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            DGrid::Single(d) => vec![*d],
            DGrid::List(v) => v.clone(),
            DGrid::Geometric { min, max, points } => {
                if !(*min > 0.0 && max >= min && *points >= 1) {
                    return Err(CliError::config(format!(
                        "bad geometric grid [{min}, {max}] x {points}"
                    )));
                }
                perturb::geometric_grid(*min, *max, *points)
            }
        };
        if let Some(bad) = v.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(CliError::config(format!("distance {bad} is not finite and positive")));
        }
        Ok(v)
    }
}

fn default_phi() -> PerturbationFunction {
    PerturbationFunction::Affine { m: 1.0, l: 1.0 }
}

fn default_d() -> DGrid {
    DGrid::Geometric {
        min: 1.0,
        max: 1e9,
        points: 10,
    }
}

fn default_n_max() -> u32 {
    bounds::DEFAULT_N_MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    #[serde(default = "default_phi")]
    pub phi: PerturbationFunction,
    #[serde(default = "default_d")]
    pub d: DGrid,
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    /// Include the per-depth scan in JSON output.
    #[serde(default)]
    pub profile: bool,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            phi: default_phi(),
            d: default_d(),
            n_max: default_n_max(),
            profile: false,
        }
    }
}

fn default_map() -> MapSpec {
    MapSpec::vestfrid(0.1)
}

fn default_pairs() -> usize {
    1000
}

fn default_radius() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    #[serde(default = "default_map")]
    pub map: MapSpec,
    /// Defaults to `M t + L` from the map's claim.
    #[serde(default)]
    pub phi: Option<PerturbationFunction>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Pairs are drawn uniformly from `[-radius, radius]^dim`.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            map: default_map(),
            phi: None,
            pairs: default_pairs(),
            radius: default_radius(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    Map {
        map: MapSpec,
    },
    /// CSV file: each row holds `nx` inputs followed by `ny` outputs.
    Table {
        path: PathBuf,
        nx: usize,
        ny: usize,
        claimed_m: f64,
        claimed_l: f64,
        #[serde(default)]
        has_header: bool,
    },
}

fn default_oracle() -> OracleSpec {
    OracleSpec::Map {
        map: MapSpec::new(spaces::MapKind::Composite {
            maps: vec![
                spaces::MapKind::CoordinatewiseVestfrid { eps: vec![0.01; 4] },
                spaces::MapKind::SignedPermutation {
                    sigma: vec![2, 0, 3, 1],
                    lambda: vec![1, -1, -1, 1],
                },
            ],
        }),
    }
}

fn default_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverParams {
    #[serde(default = "default_oracle")]
    pub oracle: OracleSpec,
    /// Random functions for the stability report.
    #[serde(default = "default_samples")]
    pub stability_samples: usize,
}

impl Default for RecoverParams {
    fn default() -> Self {
        Self {
            oracle: default_oracle(),
            stability_samples: default_samples(),
        }
    }
}

fn default_eps_grid() -> Vec<f64> {
    vec![0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.19]
}

fn default_knots() -> usize {
    8
}

fn default_budget() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KepsParams {
    #[serde(default = "default_eps_grid")]
    pub eps: Vec<f64>,
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

impl Default for KepsParams {
    fn default() -> Self {
        Self {
            eps: default_eps_grid(),
            knots: default_knots(),
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyParams {
    /// Criterion ids or module names; empty runs everything.
    #[serde(default)]
    pub only: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "subcommand", content = "params", rename_all = "kebab-case")]
pub enum Command {
    Bound(BoundParams),
    Simulate(SimulateParams),
    Recover(RecoverParams),
    Keps(KepsParams),
    VerifySuite(VerifyParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bound(_) => "bound",
            Command::Simulate(_) => "simulate",
            Command::Recover(_) => "recover",
            Command::Keps(_) => "keps",
            Command::VerifySuite(_) => "verify-suite",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum CommandName {
    Bound,
    Simulate,
    Recover,
    Keps,
    VerifySuite,
}

// On-disk shape; `params` may be omitted to take every default.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    subcommand: CommandName,
    #[serde(default)]
    params: Option<serde_json::Value>,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    output_path: Option<PathBuf>,
    #[serde(default)]
    output_format: OutputFormat,
}

impl TryFrom<RawRunConfig> for RunConfig {
    type Error = serde_json::Error;

    fn try_from(raw: RawRunConfig) -> Result<Self, Self::Error> {
        let params = raw.params.unwrap_or_else(|| serde_json::json!({}));
        let command = match raw.subcommand {
            CommandName::Bound => Command::Bound(serde_json::from_value(params)?),
            CommandName::Simulate => Command::Simulate(serde_json::from_value(params)?),
            CommandName::Recover => Command::Recover(serde_json::from_value(params)?),
            CommandName::Keps => Command::Keps(serde_json::from_value(params)?),
            CommandName::VerifySuite => Command::VerifySuite(serde_json::from_value(params)?),
        };
        Ok(RunConfig {
            command,
            seed: raw.seed,
            output_path: raw.output_path,
            output_format: raw.output_format,
        })
    }
}

/// A complete, reproducible description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRunConfig")]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub output_format: OutputFormat,
}

fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            seed: default_seed(),
            output_path: None,
            output_format: OutputFormat::Json,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A rendered report and the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub body: String,
    pub exit_code: i32,
}

/// CSV cell for a float: plain decimal in a readable range, scientific
/// notation outside it, `"overflow"` when non-finite.
fn num(v: f64) -> String {
    if !v.is_finite() {
        "overflow".to_string()
    } else if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn csv_document(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::config(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
    result: T,
}

fn json_document<T: Serialize>(config: &RunConfig, deterministic: bool, result: T) -> Result<String, CliError> {
    let generated_at_unix = (!deterministic).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let mut s = serde_json::to_string_pretty(&Envelope {
        config,
        generated_at_unix,
        result,
    })
    .map_err(|e| CliError::config(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub d: f64,
    pub n_star: u32,
    pub k: String,
    #[serde(serialize_with = "finite_or_overflow")]
    pub bound: f64,
    pub method: BoundMethod,
    pub corollary_values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Vec<bounds::DepthValue>>,
}

pub fn run_bound(params: &BoundParams) -> Result<Vec<BoundRow>, CliError> {
    params.phi.validate().map_err(|e| CliError::config(e.to_string()))?;
    let ds = params.d.values()?;
    let grid = perturb::default_halving_grid();
    if let Some(t) = perturb::check_halving(&params.phi, &grid).first_violation {
        return Err(BoundsError::HalvingViolated(t).into());
    }
    ds.par_iter()
        .map(|&d| {
            let r = bounds::optimize_bound_checked(&params.phi, d, params.n_max, &[])?;
            Ok(BoundRow {
                d: r.d,
                n_star: r.n_star,
                // 2^(n+1) can exceed 2^64; a string keeps it exact in JSON
                k: r.k.to_string(),
                bound: r.bound,
                method: r.method,
                corollary_values: r.corollary_values,
                profile: params.profile.then_some(r.profile),
            })
        })
        .collect()
}

fn method_name(m: BoundMethod) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn bound_csv(rows: &[BoundRow]) -> Result<String, CliError> {
    let mut keys: Vec<&String> = rows.iter().flat_map(|r| r.corollary_values.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut header = vec!["d", "n_star", "k", "bound", "method"];
    header.extend(keys.iter().map(|k| k.as_str()));
    csv_document(
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![
                num(r.d),
                r.n_star.to_string(),
                r.k.clone(),
                num(r.bound),
                method_name(r.method),
            ];
            rec.extend(
                keys.iter()
                    .map(|k| r.corollary_values.get(*k).map_or(String::new(), |v| num(*v))),
            );
            rec
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub phi: PerturbationFunction,
    pub rows: Vec<MarginRow>,
    pub violations: usize,
    #[serde(serialize_with = "finite_or_overflow")]
    pub min_margin: f64,
}

/// Draws `pairs` random pairs from the seed and checks each against the
/// optimized bound. Pairs are generated up front so that the chunked
/// parallel evaluation cannot change the result.
pub fn run_simulate(params: &SimulateParams, seed: u64) -> Result<SimulateReport, CliError> {
    if !(params.radius.is_finite() && params.radius > 0.0) {
        return Err(CliError::config(format!(
            "radius must be positive, got {}",
            params.radius
        )));
    }
    let phi = params.phi.clone().unwrap_or_else(|| params.map.dominating_phi());
    phi.validate().map_err(|e| CliError::config(e.to_string()))?;
    let map = PhiIsometry::new(params.map.clone())?;
    spaces::check_domination(map.spec(), &phi)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = params.radius;
    let point = |rng: &mut ChaCha8Rng| SpacePoint::sup((0..map.dim()).map(|_| rng.gen_range(-r..r)).collect());
    let pairs: Vec<(SpacePoint, SpacePoint)> = (0..params.pairs).map(|_| (point(&mut rng), point(&mut rng))).collect();

    const CHUNK: usize = 256;
    let chunks = pairs
        .par_chunks(CHUNK)
        .map(|chunk| spaces::check_against_bound(&map, &phi, chunk))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (c, report) in chunks.into_iter().enumerate() {
        rows.extend(report.rows.into_iter().map(|mut row| {
            row.pair_id += c * CHUNK;
            row
        }));
    }
    let violations = rows.iter().filter(|r| r.margin < -spaces::BOUND_SLACK).count();
    let min_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    Ok(SimulateReport {
        phi,
        rows,
        violations,
        min_margin,
    })
}

fn simulate_csv(report: &SimulateReport) -> Result<String, CliError> {
    csv_document(
        &["pair_id", "d", "deviation", "bound", "margin"],
        report.rows.iter().map(|r| {
            vec![
                r.pair_id.to_string(),
                num(r.d),
                num(r.deviation),
                num(r.bound),
                num(r.margin),
            ]
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoverMargins {
    pub condition_ii_margin: f64,
    pub eps_m: f64,
    pub m0: f64,
    pub stability: banach_stone::StabilityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoverReport {
    pub sigma: Vec<usize>,
    pub lambda: Vec<i8>,
    #[serde(rename = "D")]
    pub d: f64,
    pub m: f64,
    pub margins: RecoverMargins,
    pub diagnostics: banach_stone::RecoveryDiagnostics,
}

/// Reads a tabulated operator from CSV text: `nx` inputs then `ny` outputs per row.
pub fn parse_table(text: &str, nx: usize, ny: usize, has_header: bool) -> Result<TabulatedOperator, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config(format!("table row {i}: {e}")))?;
        if rec.len() != nx + ny {
            return Err(CliError::config(format!(
                "table row {i} has {} fields, expected {}",
                rec.len(),
                nx + ny
            )));
        }
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::config(format!("table row {i}: {e}")))?;
        rows.push((vals[..nx].to_vec(), vals[nx..].to_vec()));
    }
    Ok(TabulatedOperator::new(nx, ny, rows)?)
}

fn build_oracle(spec: &OracleSpec) -> Result<OperatorOracle, CliError> {
    match spec {
        OracleSpec::Map { map } => Ok(OperatorOracle::from_map(map.clone())?),
        OracleSpec::Table {
            path,
            nx,
            ny,
            claimed_m,
            claimed_l,
            has_header,
        } => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read table {}: {e}", path.display())))?;
            let table = parse_table(&text, *nx, *ny, *has_header)?;
            Ok(OperatorOracle::from_table(table, *claimed_m, *claimed_l)?)
        }
    }
}

pub fn run_recover(params: &RecoverParams, seed: u64) -> Result<RecoverReport, CliError> {
    let oracle = build_oracle(&params.oracle)?;
    let (iso, diagnostics) = banach_stone::recover(&oracle)?;
    // tabulated oracles can only be probed where rows exist
    let samples: Vec<Vec<f64>> = match &params.oracle {
        OracleSpec::Map { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..params.stability_samples)
                .map(|_| (0..oracle.nx()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        }
        OracleSpec::Table { .. } => Vec::new(),
    };
    let stability = banach_stone::stability_report(&oracle, &iso, &samples)?;
    Ok(RecoverReport {
        sigma: iso.sigma,
        lambda: iso.lambda,
        d: diagnostics.d_used,
        m: diagnostics.m_used,
        margins: RecoverMargins {
            condition_ii_margin: diagnostics.condition_ii_margin,
            eps_m: diagnostics.eps_m,
            m0: banach_stone::m0(),
            stability,
        },
        diagnostics,
    })
}

fn recover_csv(r: &RecoverReport) -> Result<String, CliError> {
    csv_document(
        &["x", "sigma", "lambda"],
        r.sigma
            .iter()
            .zip(&r.lambda)
            .enumerate()
            .map(|(x, (s, l))| vec![x.to_string(), s.to_string(), l.to_string()]),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct KepsReport {
    pub rows: Vec<SweepRow>,
    pub instances: Vec<KepsInstance>,
    pub asymptotic_reference: f64,
}

pub fn run_keps(params: &KepsParams, seed: u64) -> Result<KepsReport, CliError> {
    if params.eps.is_empty() {
        return Err(CliError::config("eps grid is empty"));
    }
    let instances = params
        .eps
        .iter()
        .map(|&eps| keps::search_lower_bound(eps, params.knots, params.budget, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = instances
        .iter()
        .map(|inst| {
            Ok(SweepRow {
                eps: inst.eps,
                vestfrid_ratio: keps::vestfrid_ratio(inst.eps),
                best_found: inst.ratio,
                cor33_bound: keps::upper_bounds(inst.eps)?.0,
            })
        })
        .collect::<Result<Vec<_>, KepsError>>()?;
    Ok(KepsReport {
        rows,
        instances,
        asymptotic_reference: std::f64::consts::E,
    })
}

fn keps_csv(r: &KepsReport) -> Result<String, CliError> {
    csv_document(
        &["eps", "vestfrid_ratio", "best_found", "cor33_bound"],
        r.rows.iter().map(|row| {
            vec![
                num(row.eps),
                num(row.vestfrid_ratio),
                num(row.best_found),
                num(row.cor33_bound),
            ]
        }),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub results: Vec<CriterionResult>,
    pub all_passed: bool,
}

pub fn run_verify_suite(params: &VerifyParams, seed: u64) -> Result<VerifyReport, CliError> {
    let results = verify::run_selected(&params.only, seed).map_err(CliError::config)?;
    let all_passed = results.iter().all(|r| r.passed);
    Ok(VerifyReport { results, all_passed })
}

fn verify_csv(r: &VerifyReport) -> Result<String, CliError> {
    csv_document(
        &["id", "name", "module", "passed", "detail"],
        r.results.iter().map(|c| {
            vec![
                c.id.to_string(),
                c.name.to_string(),
                c.module.to_string(),
                c.passed.to_string(),
                c.detail.clone(),
            ]
        }),
    )
}

/// Executes `config` and renders its report. Timestamps are only emitted in
/// JSON output and only when `deterministic` is false.
pub fn execute(config: &RunConfig, deterministic: bool) -> Result<Outcome, CliError> {
    let fmt = config.output_format;
    let render = |csv: Result<String, CliError>, json: Result<String, CliError>| match fmt {
        OutputFormat::Csv => csv,
        OutputFormat::Json => json,
    };
    let seed = config.seed;
    let (body, exit_code) = match &config.command {
        Command::Bound(p) => {
            let rows = run_bound(p)?;
            let body = match fmt {
                OutputFormat::Csv => bound_csv(&rows)?,
                OutputFormat::Json => json_document(config, deterministic, &rows)?,
            };
            (body, EXIT_OK)
        }
        Command::Simulate(p) => {
            let report = run_simulate(p, seed)?;
            let code = if report.violations > 0 {
                EXIT_FAILED_CHECK
            } else {
                EXIT_OK
            };
            let body = match fmt {
                OutputFormat::Csv => simulate_csv(&report)?,
                OutputFormat::Json => json_document(config, deterministic, &report)?,
            };
            (body, code)
        }
        Command::Recover(p) => {
            let report = run_recover(p, seed)?;
            (
                render(recover_csv(&report), json_document(config, deterministic, &report))?,
                EXIT_OK,
            )
        }
        Command::Keps(p) => {
            let report = run_keps(p, seed)?;
            (
                render(keps_csv(&report), json_document(config, deterministic, &report))?,
                EXIT_OK,
            )
        }
        Command::VerifySuite(p) => {
            let report = run_verify_suite(p, seed)?;
            let code = if report.all_passed { EXIT_OK } else { EXIT_FAILED_CHECK };
            (
                render(verify_csv(&report), json_document(config, deterministic, &report))?,
                code,
            )
        }
    };
    Ok(Outcome { body, exit_code })
}
