//! Experiment configuration, replica orchestration, claim evaluation and
//! reporting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{self, QMethod};
use crate::diagnostics::{
    self, decompose_trajectory, dissipation_j, entropy_h, fit_line, k3_scaled_growth, leaf_exponent,
    log_deviation_series, t_over_d_limit, DecomposeOptions, Functional,
};
use crate::graph::{build_complete, build_complete_like, GraphSpec, WeightedGraph};
use crate::sampling::{RngStream, StreamId};
use crate::stats::{self, chi_square_gof, chi_square_two_sample, median, pairwise_sum, Reference};
use crate::walkers::{
    self, cvrrw_skeleton, gamma_mixture_skeleton, geometric_step_grid, linear_grid, run_cvrrw, run_vrrw,
    vrrw_embedded_skeleton, Engine, HybridOptions, RunOptions, Trajectory, VrrwRun, WalkError,
    DEFAULT_EVENT_CAP,
};

pub const REPORT_SCHEMA: u32 = 1;
pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_SCHEMA: u32 = 1;
pub const MAX_PATH_CELLS: usize = 10_000;
const WEIGHT_STREAM: u32 = 11;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulation: {0}")]
    Walk(#[from] WalkError),
    #[error("analysis: {0}")]
    Analysis(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Walk(WalkError::Truncated { .. }) => 3,
            _ => 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

fn one() -> u64 {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Cvrrw,
    Vrrw,
    PathLaw,
    Numerics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: u64,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Linear,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kind: GridKind,
    /// Number of points of a linear grid.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Points per decade of a geometric grid.
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

fn default_points() -> usize {
    101
}

fn default_per_decade() -> usize {
    20
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            kind: GridKind::Linear,
            points: default_points(),
            per_decade: default_per_decade(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default)]
    pub start: usize,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default)]
    pub grid: GridSpec,
    /// Initial counts of the discrete walk (default all ones).
    #[serde(default)]
    pub a: Option<Vec<f64>>,
    /// Draw core weights uniformly from `[lo, hi]` per replica.
    #[serde(default)]
    pub random_weights: Option<[f64; 2]>,
    #[serde(default = "default_cap")]
    pub event_cap: u64,
    #[serde(default)]
    pub hybrid: Option<HybridOptions>,
}

fn default_engine() -> Engine {
    Engine::Direct
}

fn default_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            engine: default_engine(),
            start: 0,
            horizon: None,
            steps: None,
            grid: GridSpec::default(),
            a: None,
            random_weights: None,
            event_cap: default_cap(),
            hybrid: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Vrrw,
    VrrwEmbedded,
    GammaMixture,
    Cvrrw,
    /// Exact path probabilities of the discrete walk.
    ExactVrrw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideSpec {
    pub name: String,
    pub process: Process,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub seed_offset: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimKind {
    /// Terminal `max_i |π_i - r_i|` below tolerance in every replica.
    MaxPiDeviation,
    /// Ensemble median of `|T_i(t) - t/d - prediction|` below tolerance.
    TOverD,
    /// Per-replica slope of `log ‖π - r‖` within `expected ± tolerance`
    /// for at least `fraction` of replicas.
    RateSlope,
    /// Per-replica `log Z_j` vs `log n` slope within tolerance of the
    /// prediction (and optional ratio stability).
    LeafExponent,
    /// Median `T_j(h) - T_j(h/2)` strictly decreasing in `h` and below
    /// tolerance at the last horizon.
    LeafIncrement,
    /// KS test of a within-part frequency against its Beta marginal.
    DirichletMarginal,
    /// Martingale mean and quadratic-variation checks.
    Martingale,
    /// Growth statistics of the scaled `K_3` process.
    K3Growth,
    /// Chi-square equality of the first two sides' path laws.
    PathLaw,
    MarkovIdentities,
    HjAlgebra,
}

impl ClaimKind {
    /// Claims decided by a p-value or CI and therefore subject to the retry
    /// rule.
    pub fn is_statistical(self) -> bool {
        matches!(
            self,
            Self::DirichletMarginal | Self::Martingale | Self::PathLaw
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSpec {
    pub id: String,
    #[serde(default)]
    pub anchor: String,
    pub kind: ClaimKind,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default)]
    pub t_from: Option<f64>,
    #[serde(default)]
    pub t_to: Option<f64>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub vertex: Option<usize>,
    #[serde(default)]
    pub horizons: Option<Vec<f64>>,
    #[serde(default)]
    pub ratio_tolerance: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Radius of the neighborhood of `z*` for the `J`/`H` sandwich.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub functional: Option<String>,
    /// Pairs of side indices compared by a path-law claim.
    #[serde(default)]
    pub sides: Option<Vec<[usize; 2]>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub graph: GraphSpec,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, rename = "side")]
    pub sides: Vec<SideSpec>,
    #[serde(default, rename = "claim")]
    pub claims: Vec<ClaimSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let e = &self.experiment;
        if e.replicas == 0 {
            return Err(config_err("replicas must be at least 1"));
        }
        let g = self.graph.build().map_err(|x| config_err(x.to_string()))?;
        let r = &self.run;
        if r.start >= g.len() {
            return Err(config_err(format!("start vertex {} not in graph", r.start)));
        }
        if let Some(a) = &r.a {
            if a.len() != g.len() || a.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(config_err("`a` needs one positive entry per vertex"));
            }
        }
        if let Some([lo, hi]) = r.random_weights {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(config_err("random_weights needs 0 < lo <= hi"));
            }
        }
        match e.kind {
            ExperimentKind::Cvrrw => {
                let h = r.horizon.ok_or_else(|| config_err("cvrrw experiments need run.horizon"))?;
                if !(h > 0.0 && h.is_finite()) {
                    return Err(config_err("horizon must be positive"));
                }
                if r.grid.points < 2 {
                    return Err(config_err("grid needs at least 2 points"));
                }
            }
            ExperimentKind::Vrrw | ExperimentKind::PathLaw => {
                if r.steps.unwrap_or(0) == 0 {
                    return Err(config_err("run.steps must be at least 1"));
                }
            }
            ExperimentKind::Numerics => {}
        }
        if e.kind == ExperimentKind::PathLaw {
            if self.sides.len() < 2 {
                return Err(config_err("path_law experiments need two [[side]] tables"));
            }
            let nb_max = (0..g.len()).map(|v| g.degree(v)).max().unwrap_or(1) as f64;
            let cells = nb_max.powf(r.steps.unwrap_or(0) as f64);
            if cells > MAX_PATH_CELLS as f64 {
                return Err(config_err(format!(
                    "path space of about {cells} cells exceeds {MAX_PATH_CELLS}"
                )));
            }
        }
        for c in &self.claims {
            if let Some(t) = c.tolerance {
                if !(t > 0.0) {
                    return Err(config_err(format!("claim {}: tolerance must be positive", c.id)));
                }
            }
            if let Some(v) = c.vertex {
                if v >= g.len() {
                    return Err(config_err(format!("claim {}: vertex {v} not in graph", c.id)));
                }
            }
            if let Some(f) = &c.functional {
                let f: Functional = f.parse().map_err(|x: diagnostics::DiagnosticsError| config_err(x.to_string()))?;
                f.check(&g).map_err(|x| config_err(x.to_string()))?;
            }
            if let (Some(hs), Some(h)) = (&c.horizons, r.horizon) {
                if hs.iter().any(|&x| !(x > 0.0 && x <= h)) {
                    return Err(config_err(format!("claim {}: horizons must lie in (0, {h}]", c.id)));
                }
            }
            if let Some(pairs) = &c.sides {
                if pairs.iter().flatten().any(|&s| s >= self.sides.len()) {
                    return Err(config_err(format!("claim {}: side index out of range", c.id)));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.experiment.seed = seed;
        c
    }
}

/// Seed used when a failed statistical claim is repeated.
pub fn derived_seed(seed: u64, attempt: u64) -> u64 {
    let mut z = seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotEvaluated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimResult {
    pub id: String,
    pub anchor: String,
    pub kind: ClaimKind,
    pub estimate: f64,
    pub ci: Option<[f64; 2]>,
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
    /// Named supporting numbers (per-vertex medians, p-values, ...).
    pub detail: BTreeMap<String, f64>,
    pub note: String,
}

impl ClaimResult {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Everything that is a pure function of the config and software version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub schema: u32,
    pub software_version: String,
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub truncated: bool,
    pub claims: Vec<ClaimResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub body: ReportBody,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn all_pass(&self) -> bool {
        !self.body.truncated && self.body.claims.iter().all(ClaimResult::passed)
    }

    /// 0 when every claim passes, 1 when one fails, 3 on truncation.
    pub fn exit_code(&self) -> i32 {
        if self.body.truncated {
            3
        } else if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-replica simulation output.
enum ReplicaData {
    Cvrrw {
        graph: WeightedGraph,
        traj: Trajectory,
        martingales: BTreeMap<String, (f64, f64, f64)>,
    },
    Vrrw {
        graph: WeightedGraph,
        run: VrrwRun,
    },
    Truncated,
}

/// The graph of one replica, with its core weights redrawn when
/// `random_weights` is set.
pub fn replica_graph(cfg: &ExperimentConfig, replica: u64) -> Result<WeightedGraph, ExperimentError> {
    let g = cfg.graph.build().map_err(|e| config_err(e.to_string()))?;
    match cfg.run.random_weights {
        None => Ok(g),
        Some([lo, hi]) => {
            let mut rng = RngStream::new(cfg.experiment.seed, replica, StreamId::Aux(WEIGHT_STREAM));
            let w: Vec<f64> = (0..g.len())
                .map(|i| {
                    if g.is_core(i) {
                        lo + (hi - lo) * rng.open()
                    } else {
                        g.weight(i)
                    }
                })
                .collect();
            g.with_weights(w).map_err(|e| config_err(e.to_string()))
        }
    }
}

pub fn initial_counts(cfg: &ExperimentConfig, g: &WeightedGraph) -> Vec<f64> {
    cfg.run.a.clone().unwrap_or_else(|| vec![1.0; g.len()])
}

fn martingale_functionals(cfg: &ExperimentConfig) -> Vec<Functional> {
    cfg.claims
        .iter()
        .filter(|c| c.kind == ClaimKind::Martingale)
        .map(|c| {
            c.functional
                .as_deref()
                .unwrap_or("T0")
                .parse()
                .expect("validated")
        })
        .collect()
}

fn run_replica(cfg: &ExperimentConfig, replica: u64) -> Result<ReplicaData, ExperimentError> {
    let g = replica_graph(cfg, replica)?;
    let r = &cfg.run;
    let rng = RngStream::new(cfg.experiment.seed, replica, StreamId::Global);
    match cfg.experiment.kind {
        ExperimentKind::Cvrrw => {
            let horizon = r.horizon.expect("validated");
            let fs = martingale_functionals(cfg);
            let opts = RunOptions {
                engine: r.engine,
                event_cap: r.event_cap,
                stored_events: if fs.is_empty() { 0 } else { usize::MAX },
                hybrid: r.hybrid.unwrap_or_default(),
            };
            let grid = linear_grid(horizon, r.grid.points);
            let traj = match run_cvrrw(&g, r.start, horizon, &grid, rng, &opts) {
                Ok(t) => t,
                Err(WalkError::Truncated { .. }) => return Ok(ReplicaData::Truncated),
                Err(e) => return Err(e.into()),
            };
            let mut martingales = BTreeMap::new();
            for f in fs {
                let d = decompose_trajectory(&traj, &g, &f, &DecomposeOptions::default())
                    .map_err(|e| ExperimentError::Analysis(e.to_string()))?;
                martingales.insert(
                    f.to_string(),
                    (
                        *d.martingale.last().unwrap_or(&0.0),
                        *d.quadratic_variation.last().unwrap_or(&0.0),
                        d.richardson,
                    ),
                );
            }
            Ok(ReplicaData::Cvrrw {
                graph: g,
                traj,
                martingales,
            })
        }
        ExperimentKind::Vrrw => {
            let steps = r.steps.expect("validated");
            let grid = step_grid(r, steps);
            let a = initial_counts(cfg, &g);
            let mut rng = rng;
            let run = run_vrrw(&g, r.start, &a, steps, &grid, false, &mut rng)?;
            Ok(ReplicaData::Vrrw { graph: g, run })
        }
        _ => unreachable!("handled separately"),
    }
}

/// The `[graph]` table of a config file, read without requiring the other
/// sections.
pub fn load_graph_spec(path: &Path) -> Result<GraphSpec, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
    let graph = doc.remove("graph").ok_or_else(|| config_err("missing [graph] section"))?;
    graph.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))
}

/// Step counts at which a discrete walk records its counts.
pub fn step_grid(r: &RunSection, steps: u64) -> Vec<u64> {
    match r.grid.kind {
        GridKind::Geometric => geometric_step_grid(steps, r.grid.per_decade),
        GridKind::Linear => {
            let p = r.grid.points.max(2);
            (0..p).map(|k| steps * k as u64 / (p - 1) as u64).collect()
        }
    }
}

/// Run every replica and evaluate the claims.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let clock = std::time::Instant::now();
    let (truncated, claims) = match cfg.experiment.kind {
        ExperimentKind::PathLaw => (false, path_law_claims(cfg)?),
        ExperimentKind::Numerics => (false, numerics_claims(cfg)?),
        _ => {
            let data: Vec<ReplicaData> = (0..cfg.experiment.replicas)
                .into_par_iter()
                .map(|r| run_replica(cfg, r))
                .collect::<Result<_, _>>()?;
            if data.iter().any(|d| matches!(d, ReplicaData::Truncated)) {
                let claims = cfg.claims.iter().map(|c| not_evaluated(c, "event cap reached")).collect();
                (true, claims)
            } else {
                if let Some(dir) = &cfg.output.dir {
                    write_series_csv(cfg, &data, Path::new(dir))?;
                }
                let claims = cfg
                    .claims
                    .iter()
                    .map(|c| evaluate_claim(cfg, c, &data))
                    .collect::<Result<_, _>>()?;
                (false, claims)
            }
        }
    };
    let report = ExperimentReport {
        body: ReportBody {
            schema: REPORT_SCHEMA,
            software_version: SOFTWARE_VERSION.to_string(),
            experiment: cfg.experiment.id.clone(),
            seed: cfg.experiment.seed,
            config: cfg.clone(),
            truncated,
            claims,
        },
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output.dir {
        std::fs::create_dir_all(dir)?;
        let path = Path::new(dir).join(format!("{}.json", cfg.experiment.id));
        std::fs::write(path, report.to_json())?;
    }
    Ok(report)
}

fn not_evaluated(c: &ClaimSpec, note: &str) -> ClaimResult {
    ClaimResult {
        id: c.id.clone(),
        anchor: c.anchor.clone(),
        kind: c.kind,
        estimate: f64::NAN,
        ci: None,
        tolerance: c.tolerance,
        verdict: Verdict::NotEvaluated,
        detail: BTreeMap::new(),
        note: note.to_string(),
    }
}

fn result(c: &ClaimSpec, estimate: f64, pass: bool) -> ClaimResult {
    ClaimResult {
        id: c.id.clone(),
        anchor: c.anchor.clone(),
        kind: c.kind,
        estimate,
        ci: None,
        tolerance: c.tolerance,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        detail: BTreeMap::new(),
        note: String::new(),
    }
}

fn need<T: Copy>(v: Option<T>, claim: &ClaimSpec, field: &str) -> Result<T, ExperimentError> {
    v.ok_or_else(|| config_err(format!("claim {} needs `{field}`", claim.id)))
}

fn analysis<E: std::fmt::Display>(e: E) -> ExperimentError {
    ExperimentError::Analysis(e.to_string())
}

fn evaluate_claim(cfg: &ExperimentConfig, c: &ClaimSpec, data: &[ReplicaData]) -> Result<ClaimResult, ExperimentError> {
    let trajs = || {
        data.iter().filter_map(|d| match d {
            ReplicaData::Cvrrw { graph, traj, .. } => Some((graph, traj)),
            _ => None,
        })
    };
    let runs = || {
        data.iter().filter_map(|d| match d {
            ReplicaData::Vrrw { graph, run } => Some((graph, run)),
            _ => None,
        })
    };
    match c.kind {
        ClaimKind::MaxPiDeviation => {
            let tol = need(c.tolerance, c, "tolerance")?;
            let per: Vec<f64> = trajs()
                .map(|(_, t)| {
                    t.last_record()
                        .map(|r| r.deviation.iter().fold(0.0f64, |a, b| a.max(b.abs())))
                        .unwrap_or(f64::NAN)
                })
                .collect();
            let worst = per.iter().copied().fold(0.0f64, f64::max);
            let mut out = result(c, worst, per.iter().all(|&x| x < tol));
            out.detail.insert("median".into(), median(&per));
            Ok(out)
        }
        ClaimKind::TOverD => {
            let tol = need(c.tolerance, c, "tolerance")?;
            let mut errs: Vec<Vec<f64>> = Vec::new();
            for (g, t) in trajs() {
                let rec = t.last_record().ok_or_else(|| analysis("no records"))?;
                let lim = t_over_d_limit(rec, g).map_err(analysis)?;
                for (i, (m, p)) in lim.into_iter().enumerate() {
                    if errs.len() <= i {
                        errs.push(Vec::new());
                    }
                    errs[i].push((m - p).abs());
                }
            }
            let meds: Vec<f64> = errs.iter().map(|e| median(e)).collect();
            let worst = meds.iter().copied().fold(0.0f64, f64::max);
            let mut out = result(c, worst, meds.iter().all(|&m| m < tol));
            for (i, m) in meds.iter().enumerate() {
                out.detail.insert(format!("median_abs_error_{i}"), *m);
            }
            Ok(out)
        }
        ClaimKind::RateSlope => {
            let tol = need(c.tolerance, c, "tolerance")?;
            let expected = need(c.expected, c, "expected")?;
            let frac = c.fraction.unwrap_or(1.0);
            let (lo, hi) = (c.t_from.unwrap_or(f64::NEG_INFINITY), c.t_to.unwrap_or(f64::INFINITY));
            let mut slopes = Vec::new();
            for (_, t) in trajs() {
                let pts: Vec<(f64, f64)> = log_deviation_series(&t.records)
                    .into_iter()
                    .filter(|p| p.0 >= lo && p.0 <= hi)
                    .collect();
                slopes.push(fit_line(&pts).map_err(analysis)?.slope);
            }
            let ok = slopes.iter().filter(|s| (*s - expected).abs() <= tol).count();
            let f = ok as f64 / slopes.len() as f64;
            let mut out = result(c, f, f >= frac);
            out.detail.insert("median_slope".into(), median(&slopes));
            out.detail.insert("min_slope".into(), slopes.iter().copied().fold(f64::INFINITY, f64::min));
            out.detail.insert("max_slope".into(), slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            out.note = format!("fraction of replicas with slope in {expected} ± {tol}");
            Ok(out)
        }
        ClaimKind::LeafExponent => {
            let tol = need(c.tolerance, c, "tolerance")?;
            let leaf = need(c.vertex, c, "vertex")?;
            let mut worst = 0.0f64;
            let mut worst_ratio = 0.0f64;
            let mut pass = true;
            let mut slopes = Vec::new();
            for (g, run) in runs() {
                let le = leaf_exponent(&run.history, g, leaf, 1.0).map_err(analysis)?;
                let target = c.expected.unwrap_or(le.predicted);
                let err = (le.fit.slope - target).abs();
                worst = worst.max(err);
                worst_ratio = worst_ratio.max(le.ratio_variation);
                pass &= err <= tol;
                if let Some(rt) = c.ratio_tolerance {
                    pass &= le.ratio_variation < rt;
                }
                slopes.push(le.fit.slope);
            }
            let mut out = result(c, worst, pass);
            out.detail.insert("median_slope".into(), median(&slopes));
            out.detail.insert("max_ratio_variation".into(), worst_ratio);
            out.note = "estimate is the largest |slope - prediction| over replicas".into();
            Ok(out)
        }
        ClaimKind::LeafIncrement => {
            let tol = need(c.tolerance, c, "tolerance")?;
            let leaf = need(c.vertex, c, "vertex")?;
            let hs = c
                .horizons
                .clone()
                .ok_or_else(|| config_err(format!("claim {} needs `horizons`", c.id)))?;
            let mut meds = Vec::new();
            for &h in &hs {
                let incs: Vec<f64> = trajs()
                    .map(|(_, t)| {
                        let v: Vec<f64> = t
                            .records
                            .iter()
                            .filter(|r| r.time > 0.5 * h + 1e-9 && r.time <= h + 1e-9)
                            .map(|r| r.increments[leaf])
                            .collect();
                        pairwise_sum(&v)
                    })
                    .collect();
                meds.push(median(&incs));
            }
            let decreasing = meds.windows(2).all(|w| w[1] < w[0]);
            let last = *meds.last().unwrap_or(&f64::NAN);
            let mut out = result(c, last, decreasing && last < tol);
            for (h, m) in hs.iter().zip(&meds) {
                out.detail.insert(format!("median_increment_h{h}"), *m);
            }
            Ok(out)
        }
        ClaimKind::DirichletMarginal => {
            let v = need(c.vertex, c, "vertex")?;
            let alpha = c.alpha.unwrap_or(0.01);
            let mut samples = Vec::new();
            let mut shape = (0.0, 0.0);
            for (g, run) in runs() {
                let part = g
                    .part_of(v)
                    .ok_or_else(|| config_err("dirichlet_marginal needs a d-partite core vertex"))?;
                let members = &g.partition().expect("parts")[part];
                let z = &run.state.z;
                let total: f64 = members.iter().map(|&i| z[i]).sum();
                samples.push(z[v] / total);
                // the visit at time 0 counts, so Z(0) = a + 1{start}
                let z0 = |i: usize| run.state.a[i] + if i == cfg.run.start { 1.0 } else { 0.0 };
                shape = (z0(v), members.iter().filter(|&&i| i != v).map(|&i| z0(i)).sum());
            }
            let rep = stats::stat_tests(
                &samples,
                Reference::BetaMarginal {
                    alpha: shape.0,
                    beta: shape.1,
                },
            )
            .map_err(analysis)?;
            let p = rep.p_value.unwrap_or(f64::NAN);
            let mut out = result(c, p, rep.passes(alpha));
            out.detail.insert("ks_statistic".into(), rep.statistic);
            out.detail.insert("samples".into(), samples.len() as f64);
            out.note = format!("KS p-value vs Beta({}, {})", shape.0, shape.1);
            Ok(out)
        }
        ClaimKind::Martingale => {
            let f: Functional = c.functional.as_deref().unwrap_or("T0").parse().map_err(analysis)?;
            let key = f.to_string();
            let z = c.z.unwrap_or(3.0);
            let tol = need(c.tolerance, c, "tolerance")?;
            let mut ms = Vec::new();
            let mut qs = Vec::new();
            let mut rich = 0.0f64;
            for d in data {
                if let ReplicaData::Cvrrw { martingales, .. } = d {
                    let (m, q, r) = martingales[&key];
                    ms.push(m);
                    qs.push(q);
                    rich = rich.max(r);
                }
            }
            let est = stats::mean_estimate(&ms);
            let qv = pairwise_sum(&qs) / qs.len() as f64;
            let rel = (est.variance - qv).abs() / qv;
            let mean_ok = est.contains(0.0, z);
            let pass = mean_ok && rel < tol && rich < 1e-6;
            let mut out = result(c, rel, pass);
            out.ci = Some([est.mean - z * est.std_error, est.mean + z * est.std_error]);
            out.detail.insert("mean".into(), est.mean);
            out.detail.insert("std_error".into(), est.std_error);
            out.detail.insert("variance".into(), est.variance);
            out.detail.insert("mean_quadratic_variation".into(), qv);
            out.detail.insert("richardson".into(), rich);
            out.note = "estimate is |Var(M) - mean <M>| / mean <M>; ci is the mean's z-interval".into();
            Ok(out)
        }
        ClaimKind::K3Growth => {
            let kappa = c.kappa.unwrap_or(0.75);
            let t0 = c.t_from.unwrap_or(100.0);
            let t1 = c.t_to.unwrap_or_else(|| cfg.run.horizon.unwrap_or(400.0));
            let checkpoints: Vec<f64> = (0..=4).map(|k| 0.5 * t1 + 0.125 * t1 * k as f64).collect();
            let mut growth = Vec::new();
            let mut per_cp: Vec<Vec<f64>> = vec![Vec::new(); checkpoints.len()];
            let mut positive = true;
            for (g, t) in trajs() {
                let s = k3_scaled_growth(&t.records, g, kappa).map_err(analysis)?;
                positive &= s.log_scaled.iter().all(|x| x.is_finite());
                let a = s.log_running_max_at(t0).ok_or_else(|| analysis("t_from beyond records"))?;
                let b = s.log_running_max_at(t1).ok_or_else(|| analysis("t_to beyond records"))?;
                growth.push((b - a).exp());
                for (k, &cp) in checkpoints.iter().enumerate() {
                    per_cp[k].push(s.log_ratio_kappa_at(cp).unwrap_or(f64::NAN));
                }
            }
            let g_med = median(&growth);
            let meds: Vec<f64> = per_cp.iter().map(|v| median(v)).collect();
            let nonincreasing = meds.windows(2).all(|w| w[1] <= w[0]);
            let mut out = result(c, g_med, positive && g_med > 1.0 && nonincreasing);
            for (cp, m) in checkpoints.iter().zip(&meds) {
                out.detail.insert(format!("median_log_max_over_t^kappa_at_{cp}"), *m);
            }
            out.note = "trend evidence only: median running-max growth and t^kappa-normalized trend".into();
            Ok(out)
        }
        ClaimKind::PathLaw | ClaimKind::MarkovIdentities | ClaimKind::HjAlgebra => Err(config_err(format!(
            "claim {} does not apply to a {:?} experiment",
            c.id, cfg.experiment.kind
        ))),
    }
}

/// Index of a path of destinations in base-`n` encoding.
fn encode_path(path: &[usize], n: usize) -> usize {
    path.iter().fold(0, |acc, &v| acc * n + v)
}

/// Exact probabilities of every `steps`-jump path of the discrete walk.
pub fn exact_vrrw_path_law(graph: &WeightedGraph, start: usize, a: &[f64], steps: usize) -> Vec<f64> {
    let n = graph.len();
    let mut probs = vec![0.0; n.pow(steps as u32)];
    let mut z = a.to_vec();
    z[start] += 1.0;
    fn rec(g: &WeightedGraph, x: usize, z: &mut Vec<f64>, left: usize, code: usize, p: f64, out: &mut [f64]) {
        if left == 0 {
            out[code] += p;
            return;
        }
        let nb = g.neighbors(x);
        let total: f64 = nb.iter().map(|&j| z[j]).sum();
        for &j in nb {
            let q = z[j] / total;
            z[j] += 1.0;
            rec(g, j, z, left - 1, code * g.len() + j, p * q, out);
            z[j] -= 1.0;
        }
    }
    rec(graph, start, &mut z, steps, 0, 1.0, &mut probs);
    probs
}

/// Histogram of sampled paths for one side.
pub fn sample_path_histogram(
    cfg: &ExperimentConfig,
    side: &SideSpec,
    replicas: u64,
) -> Result<Vec<u64>, ExperimentError> {
    let g = cfg.graph.build().map_err(|e| config_err(e.to_string()))?;
    let steps = cfg.run.steps.expect("validated") as usize;
    let n = g.len();
    let a = initial_counts(cfg, &g);
    let start = cfg.run.start;
    let seed = cfg.experiment.seed.wrapping_add(side.seed_offset);
    let codes: Vec<usize> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let rng = RngStream::new(seed, r, StreamId::Global);
            let path = match side.process {
                Process::Vrrw => {
                    let mut rng = rng;
                    let run = run_vrrw(&g, start, &a, steps as u64, &[], true, &mut rng)?;
                    run.path[1..].to_vec()
                }
                Process::VrrwEmbedded => vrrw_embedded_skeleton(&g, start, &a, steps, rng)?,
                Process::GammaMixture => gamma_mixture_skeleton(&g, start, &a, steps, rng)?,
                Process::Cvrrw => cvrrw_skeleton(&g, start, steps, rng, side.engine.unwrap_or(Engine::Direct))?,
                Process::ExactVrrw => unreachable!("exact side is not sampled"),
            };
            Ok(encode_path(&path, n))
        })
        .collect::<Result<_, WalkError>>()?;
    let mut hist = vec![0u64; n.pow(steps as u32)];
    for c in codes {
        hist[c] += 1;
    }
    Ok(hist)
}

/// Chi-square comparison of two sides' path laws (`B` may be the exact law).
pub fn compare_path_laws(
    cfg: &ExperimentConfig,
    a: &SideSpec,
    b: &SideSpec,
    replicas: u64,
) -> Result<stats::ChiSquareResult, ExperimentError> {
    let g = cfg.graph.build().map_err(|e| config_err(e.to_string()))?;
    let steps = cfg.run.steps.unwrap_or(0) as usize;
    if (g.len() as f64).powi(steps as i32) > MAX_PATH_CELLS as f64 * 10.0 {
        return Err(config_err("path space too large"));
    }
    let exact = |s: &SideSpec| s.process == Process::ExactVrrw;
    match (exact(a), exact(b)) {
        (true, true) => Err(config_err("at most one side can be exact")),
        (false, false) => {
            let ha = sample_path_histogram(cfg, a, replicas)?;
            let hb = sample_path_histogram(cfg, b, replicas)?;
            Ok(chi_square_two_sample(&ha, &hb))
        }
        _ => {
            let (s, _) = if exact(a) { (b, a) } else { (a, b) };
            let h = sample_path_histogram(cfg, s, replicas)?;
            let p = exact_vrrw_path_law(&g, cfg.run.start, &initial_counts(cfg, &g), steps);
            let keep: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0 || h[i] > 0).collect();
            let obs: Vec<u64> = keep.iter().map(|&i| h[i]).collect();
            let pr: Vec<f64> = keep.iter().map(|&i| p[i]).collect();
            Ok(chi_square_gof(&obs, &pr))
        }
    }
}

fn path_law_claims(cfg: &ExperimentConfig) -> Result<Vec<ClaimResult>, ExperimentError> {
    let mut out = Vec::new();
    for c in &cfg.claims {
        if c.kind != ClaimKind::PathLaw {
            return Err(config_err(format!("claim {} is not a path_law claim", c.id)));
        }
        let alpha = c.alpha.unwrap_or(0.01);
        let pairs = c.sides.clone().unwrap_or_else(|| vec![[0, 1]]);
        let mut min_p = f64::INFINITY;
        let mut r = result(c, 0.0, true);
        for [i, j] in pairs {
            let (a, b) = (&cfg.sides[i], &cfg.sides[j]);
            let chi = compare_path_laws(cfg, a, b, cfg.experiment.replicas)?;
            r.detail.insert(format!("p_{}_vs_{}", a.name, b.name), chi.p_value);
            r.detail.insert(format!("dof_{}_vs_{}", a.name, b.name), chi.dof as f64);
            min_p = min_p.min(chi.p_value);
        }
        r.estimate = min_p;
        r.verdict = if min_p > alpha { Verdict::Pass } else { Verdict::Fail };
        r.note = format!("smallest chi-square p-value, alpha = {alpha}");
        out.push(r);
    }
    Ok(out)
}

/// Maximal errors of the frozen-chain identities over random instances.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityErrors {
    pub poisson_residual: f64,
    pub q_agreement: f64,
    pub q_quadrature: f64,
    pub kd_closed: f64,
    pub kd_hitting: f64,
    pub derivative_fd: f64,
}

fn random_instance(rng: &mut RngStream, leafless: bool) -> (WeightedGraph, Vec<f64>) {
    let d = rng.random_range(3..=6usize);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let g = if leafless {
        build_complete(d, &w).expect("valid")
    } else {
        let k = rng.random_range(0..=2usize);
        let leaves: Vec<(usize, f64)> = (0..k)
            .map(|_| (rng.random_range(0..d), rng.random_range(0.5..2.0)))
            .collect();
        crate::graph::glue_leaves(&build_complete_like(d, &w, &leaves).expect("valid")).0
    };
    let t = (0..g.len()).map(|_| rng.random_range(0.0..3.0)).collect();
    (g, t)
}

fn rel_max_diff(a: &crate::Matrix64, b: &crate::Matrix64) -> f64 {
    a.sub(b).max_abs() / b.max_abs().max(f64::MIN_POSITIVE)
}

pub fn markov_identity_errors(seed: u64, instances: u64) -> Result<IdentityErrors, ExperimentError> {
    let mut e = IdentityErrors::default();
    for k in 0..instances {
        let mut rng = RngStream::new(seed, k, StreamId::Aux(0));
        let (g, t) = random_instance(&mut rng, k % 2 == 0);
        let cm = chain::chain_matrices(&g, &t).map_err(analysis)?;
        let q = cm.q.clone().expect("q");
        e.poisson_residual = e
            .poisson_residual
            .max(chain::poisson_residuals(&cm.l, &cm.pi, &q).max());
        let qh = chain::q_matrix(&g, &t, QMethod::HittingFormula).map_err(analysis)?;
        e.q_agreement = e.q_agreement.max(rel_max_diff(&qh, &q));
        let qq = chain::q_matrix(&g, &t, QMethod::Quadrature).map_err(analysis)?;
        e.q_quadrature = e.q_quadrature.max(rel_max_diff(&qq, &q));
        if g.is_leafless_complete() {
            let qk = chain::q_matrix(&g, &t, QMethod::KdClosed).map_err(analysis)?;
            e.kd_closed = e.kd_closed.max(rel_max_diff(&qk, &q));
            let lr = chain::log_rates(&g, &t);
            for y in 0..g.len() {
                let h = chain::hitting_times_from(&cm.l, y).map_err(analysis)?;
                let want = (-lr[y]).exp();
                for (x, hx) in h.iter().enumerate() {
                    if x != y {
                        e.kd_hitting = e.kd_hitting.max((hx - want).abs() / want);
                    }
                }
            }
        }
        let kv = rng.random_range(0..g.len());
        let dq = chain::q_derivative(&g, &t, kv).map_err(analysis)?;
        let h = 1e-5;
        let mut tp = t.clone();
        tp[kv] += h;
        let mut tm = t.clone();
        tm[kv] -= h;
        let qp = chain::q_matrix(&g, &tp, QMethod::LinearSolve).map_err(analysis)?;
        let qm = chain::q_matrix(&g, &tm, QMethod::LinearSolve).map_err(analysis)?;
        let fd = qp.sub(&qm).scale(&(0.5 / h));
        e.derivative_fd = e.derivative_fd.max(rel_max_diff(&fd, &dq));
    }
    Ok(e)
}

/// Errors of the `H`/`J` identities on random simplex points of `K_d` and
/// the range of `J / (H(z*) - H)` on points within `delta` of `z*`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HjErrors {
    pub h_identity: f64,
    pub j_identity: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// `2/d - 2δ(1+δ)` and `2/d + 2δ`.
    pub c1: f64,
    pub c2: f64,
}

pub fn hj_algebra_errors(seed: u64, points: u64, d: usize, delta: f64) -> HjErrors {
    let g = build_complete(d, &vec![1.0; d]).expect("valid");
    let df = d as f64;
    let mut out = HjErrors {
        ratio_min: f64::INFINITY,
        ratio_max: f64::NEG_INFINITY,
        c1: 2.0 / df - 2.0 * delta * (1.0 + delta),
        c2: 2.0 / df + 2.0 * delta,
        ..HjErrors::default()
    };
    let hz = entropy_h(&vec![1.0 / df; d], &g);
    for k in 0..points {
        let mut rng = RngStream::new(seed, k, StreamId::Aux(1));
        let e: Vec<f64> = (0..d).map(|_| rng.exp1()).collect();
        let s: f64 = e.iter().sum();
        let x: Vec<f64> = e.iter().map(|v| v / s).collect();
        let r: f64 = x.iter().map(|v| (v - 1.0 / df).powi(2)).sum();
        let h = entropy_h(&x, &g);
        out.h_identity = out.h_identity.max((hz - h - r).abs());
        let j = dissipation_j(&x, &g);
        let jr: f64 = 2.0 * x.iter().map(|v| v * (v - 1.0 / df).powi(2)).sum::<f64>() - 2.0 * (hz - h).powi(2);
        out.j_identity = out.j_identity.max((j - jr).abs());
        // a point at distance ≤ δ from z*, on the simplex
        let u: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let mu = u.iter().sum::<f64>() / df;
        let v: Vec<f64> = u.iter().map(|x| x - mu).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rad = delta * rng.open();
        let y: Vec<f64> = v.iter().map(|x| 1.0 / df + rad * x / norm).collect();
        if y.iter().all(|&p| p >= 0.0) {
            let gap = hz - entropy_h(&y, &g);
            if gap > 1e-14 {
                let ratio = dissipation_j(&y, &g) / gap;
                out.ratio_min = out.ratio_min.min(ratio);
                out.ratio_max = out.ratio_max.max(ratio);
            }
        }
    }
    out
}

fn numerics_claims(cfg: &ExperimentConfig) -> Result<Vec<ClaimResult>, ExperimentError> {
    let seed = cfg.experiment.seed;
    let n = cfg.experiment.replicas;
    let mut out = Vec::new();
    for c in &cfg.claims {
        let r = match c.kind {
            ClaimKind::MarkovIdentities => {
                let e = markov_identity_errors(seed, n)?;
                let pass = e.poisson_residual < 1e-10
                    && e.q_agreement < 1e-8
                    && e.q_quadrature < 1e-4
                    && e.kd_closed < 1e-12
                    && e.kd_hitting < 1e-10
                    && e.derivative_fd < 1e-5;
                let mut r = result(c, e.q_agreement, pass);
                for (k, v) in [
                    ("poisson_residual", e.poisson_residual),
                    ("q_agreement", e.q_agreement),
                    ("q_quadrature", e.q_quadrature),
                    ("kd_closed", e.kd_closed),
                    ("kd_hitting", e.kd_hitting),
                    ("derivative_fd", e.derivative_fd),
                ] {
                    r.detail.insert(k.into(), v);
                }
                r.note = "largest errors over random instances".into();
                r
            }
            ClaimKind::HjAlgebra => {
                let g = cfg.graph.build().map_err(|e| config_err(e.to_string()))?;
                let delta = c.delta.unwrap_or(0.05);
                let e = hj_algebra_errors(seed, n, g.core_size(), delta);
                let pass = e.h_identity < 1e-12
                    && e.j_identity < 1e-12
                    && e.c1 < e.ratio_min
                    && e.ratio_max < e.c2
                    && e.c1 < 2.0 / g.core_size() as f64;
                let mut r = result(c, e.h_identity.max(e.j_identity), pass);
                for (k, v) in [
                    ("h_identity", e.h_identity),
                    ("j_identity", e.j_identity),
                    ("ratio_min", e.ratio_min),
                    ("ratio_max", e.ratio_max),
                    ("c1", e.c1),
                    ("c2", e.c2),
                ] {
                    r.detail.insert(k.into(), v);
                }
                r
            }
            _ => return Err(config_err(format!("claim {} is not a numerics claim", c.id))),
        };
        out.push(r);
    }
    Ok(out)
}

/// Format with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-replica record series as CSV: one row per (replica, time).
pub fn write_records_csv<W: Write>(out: W, rows: &[(u64, &walkers::GridRecord)]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |r| r.1.local_times.len());
    let mut header: Vec<String> = ["schema", "replica", "time", "position", "log_deviation", "phase"]
        .map(String::from)
        .to_vec();
    header.extend((0..n).map(|i| format!("T{i}")));
    header.extend((0..n).map(|i| format!("Y{i}")));
    w.write_record(&header).map_err(|e| ExperimentError::Io(e.into()))?;
    for (rep, r) in rows {
        let mut row = vec![
            CSV_SCHEMA.to_string(),
            rep.to_string(),
            fmt17(r.time),
            r.position.to_string(),
            fmt17(diagnostics::log_norm(&r.deviation)),
            format!("{:?}", r.phase).to_lowercase(),
        ];
        row.extend(r.local_times.iter().map(|&x| fmt17(x)));
        row.extend(r.visits.iter().map(|&x| fmt17(x)));
        w.write_record(&row).map_err(|e| ExperimentError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_series_csv(cfg: &ExperimentConfig, data: &[ReplicaData], dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_series.csv", cfg.experiment.id));
    let file = std::fs::File::create(path)?;
    let mut rows = Vec::new();
    let mut vrrw_rows: Vec<(u64, &walkers::VrrwSnapshot)> = Vec::new();
    for (k, d) in data.iter().enumerate() {
        match d {
            ReplicaData::Cvrrw { traj, .. } => rows.extend(traj.records.iter().map(|r| (k as u64, r))),
            ReplicaData::Vrrw { run, .. } => vrrw_rows.extend(run.history.iter().map(|s| (k as u64, s))),
            ReplicaData::Truncated => {}
        }
    }
    if vrrw_rows.is_empty() {
        return write_records_csv(file, &rows);
    }
    let mut w = csv::Writer::from_writer(file);
    let n = vrrw_rows[0].1.z.len();
    let mut header: Vec<String> = ["replica", "n", "position"].map(String::from).to_vec();
    header.extend((0..n).map(|i| format!("Z{i}")));
    w.write_record(&header).map_err(|e| ExperimentError::Io(e.into()))?;
    for (rep, s) in vrrw_rows {
        let mut row = vec![rep.to_string(), s.n.to_string(), s.current.to_string()];
        row.extend(s.z.iter().map(|&x| fmt17(x)));
        w.write_record(&row).map_err(|e| ExperimentError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
