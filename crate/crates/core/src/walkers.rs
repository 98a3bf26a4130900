//! Simulation engines for the continuous-time walk (direct, timelines,
//! Poisson-embedded, and a hybrid exact/diffusive engine for long
//! horizons), the discrete-time walk, its continuous-time embedding and the
//! Gamma-mixture skeleton.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::chain::{self, log_sum_exp, ChainError};
use crate::graph::{Family, GraphError, WeightedGraph};
use crate::linalg::Matrix;
use crate::sampling::{
    sample_gamma_weights, sojourn_from_exp, AlarmClock, AlarmLaw, AlarmMethod, RngStream,
    SamplingError, StreamId,
};

pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;
pub const DEFAULT_STORED_EVENTS: usize = 1_000_000;
const DIFFUSION_STREAM: u32 = 7;
const MIXTURE_STREAM: u32 = 3;
const CHECK_EVERY: u64 = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Direct,
    Timelines,
    PoissonEmbed,
    /// Direct until the jump rate passes a threshold, then the diffusion
    /// limit of the local-time process.
    Hybrid,
}

impl std::str::FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(Self::Direct),
            "timelines" => Ok(Self::Timelines),
            "poisson_embed" => Ok(Self::PoissonEmbed),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!("unknown engine `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridOptions {
    /// Switch once the exit rate of the current vertex exceeds this.
    pub switch_rate: f64,
    /// Time step of the diffusive phase.
    pub step: f64,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            switch_rate: 2e5,
            step: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub engine: Engine,
    pub event_cap: u64,
    pub stored_events: usize,
    pub hybrid: HybridOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            engine: Engine::Direct,
            event_cap: DEFAULT_EVENT_CAP,
            stored_events: DEFAULT_STORED_EVENTS,
            hybrid: HybridOptions::default(),
        }
    }
}

impl RunOptions {
    pub fn engine(engine: Engine) -> Self {
        Self {
            engine,
            ..Self::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WalkError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("vertex {0} not in graph")]
    InvalidVertex(usize),
    #[error("vertex {0} has no neighbors")]
    Isolated(usize),
    #[error("horizon must be finite and nonnegative, got {0}")]
    InvalidHorizon(f64),
    #[error("invalid record grid: {0}")]
    InvalidGrid(String),
    #[error("event cap {cap} reached at t = {time}")]
    Truncated {
        cap: u64,
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error("hybrid engine needs a complete-like or d-partite graph: {0}")]
    UnsupportedHybrid(String),
}

/// `(X_t, t, T(t), N(T(t)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTimeState {
    pub current: usize,
    pub t: f64,
    pub local: Vec<f64>,
    pub neighbor: Vec<f64>,
}

impl LocalTimeState {
    pub fn new(graph: &WeightedGraph, start: usize) -> Result<Self, WalkError> {
        if start >= graph.len() {
            return Err(WalkError::InvalidVertex(start));
        }
        Ok(Self {
            current: start,
            t: 0.0,
            local: vec![0.0; graph.len()],
            neighbor: vec![0.0; graph.len()],
        })
    }

    /// Sit at the current vertex for `sojourn`, then move to `dest`.
    pub fn advance(&mut self, graph: &WeightedGraph, sojourn: f64, dest: usize) {
        let x = self.current;
        self.t += sojourn;
        self.local[x] += sojourn;
        for &k in graph.neighbors(x) {
            self.neighbor[k] += sojourn;
        }
        self.current = dest;
    }

    /// `(|Σ T - t|, max |N - A T|)`.
    pub fn drift(&self, graph: &WeightedGraph) -> (f64, f64) {
        let sum: f64 = self.local.iter().sum();
        let n = graph.neighbor_sums(&self.local);
        let nerr = n
            .iter()
            .zip(&self.neighbor)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ((sum - self.t).abs(), nerr)
    }

    pub fn log_rates(&self, graph: &WeightedGraph) -> Vec<f64> {
        (0..graph.len())
            .map(|j| graph.weight(j).ln() + self.neighbor[j])
            .collect()
    }

    fn debug_check(&self, graph: &WeightedGraph) {
        if cfg!(debug_assertions) {
            let (s, n) = self.drift(graph);
            let tol = 1e-9 * self.t.max(1.0);
            debug_assert!(s <= tol, "local times drifted from t: {s}");
            debug_assert!(n <= tol, "neighbor sums drifted: {n}");
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub n: u64,
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Exact,
    Diffusion,
}

/// Snapshot at one grid time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub time: f64,
    pub position: usize,
    pub local_times: Vec<f64>,
    /// `T(t) - T(previous record)`, accumulated separately so that tiny
    /// increments are not lost against large totals.
    pub increments: Vec<f64>,
    /// `Y_x(t)`, counting the initial visit to the start vertex.
    pub visits: Vec<f64>,
    pub pi: Vec<f64>,
    /// `π - r` for the family's limit profile `r` (see [`limit_profile`]);
    /// empty when the family has none.
    pub deviation: Vec<f64>,
    pub log_z_sum: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: usize,
    pub horizon: f64,
    pub engine: Engine,
    pub events: Vec<JumpEvent>,
    pub event_count: u64,
    /// True when more events happened than were stored.
    pub events_truncated: bool,
    pub records: Vec<GridRecord>,
    pub switch_time: Option<f64>,
}

impl Trajectory {
    pub fn last_record(&self) -> Option<&GridRecord> {
        self.records.last()
    }

    /// Destinations of the stored jumps.
    pub fn skeleton(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.to).collect()
    }
}

/// Limit of `π(T(t))` the theory predicts for leafless or leafy families:
/// `z*` for complete-like graphs, `W_i / (d Σ_{V_p} W)` for d-partite ones.
pub fn limit_profile(graph: &WeightedGraph) -> Option<Vec<f64>> {
    let n = graph.len();
    match graph.family() {
        Family::Complete | Family::CompleteLike => {
            let d = graph.core_size() as f64;
            Some((0..n).map(|i| if graph.is_core(i) { 1.0 / d } else { 0.0 }).collect())
        }
        Family::DPartite => {
            let parts = graph.partition()?;
            let d = parts.len() as f64;
            let mut r = vec![0.0; n];
            for part in parts {
                let total: f64 = part.iter().map(|&i| graph.weight(i)).sum();
                for &i in part {
                    r[i] = graph.weight(i) / total / d;
                }
            }
            Some(r)
        }
        Family::General => None,
    }
}

pub fn linear_grid(horizon: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![horizon];
    }
    (0..points)
        .map(|k| horizon * k as f64 / (points - 1) as f64)
        .collect()
}

fn validate_grid(grid: &[f64], horizon: f64) -> Result<(), WalkError> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(WalkError::InvalidHorizon(horizon));
    }
    for w in grid.windows(2) {
        if !(w[1] >= w[0]) {
            return Err(WalkError::InvalidGrid("grid must be nondecreasing".into()));
        }
    }
    if grid.iter().any(|&g| !(0.0..=horizon).contains(&g)) {
        return Err(WalkError::InvalidGrid(format!("grid must lie in [0, {horizon}]")));
    }
    Ok(())
}

fn argmax_first(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in scores {
        match best {
            Some((bj, bs)) if s < bs || (s == bs && j > bj) => {}
            _ => best = Some((j, s)),
        }
    }
    best.map(|(j, _)| j)
}

/// Sojourn, destination and `log Z` at the current vertex, without
/// advancing the state.
fn propose_direct(
    state: &LocalTimeState,
    graph: &WeightedGraph,
    rng: &mut RngStream,
) -> Result<(f64, usize, f64), WalkError> {
    let x = state.current;
    let nb = graph.neighbors(x);
    if nb.is_empty() {
        return Err(WalkError::Isolated(x));
    }
    let lr: Vec<f64> = nb
        .iter()
        .map(|&j| graph.weight(j).ln() + state.neighbor[j])
        .collect();
    let log_z = log_sum_exp(&lr);
    let sojourn = sojourn_from_exp(log_z, rng.exp1());
    let dest = if nb.len() == 1 {
        nb[0]
    } else {
        let scores: Vec<(usize, f64)> = nb
            .iter()
            .zip(&lr)
            .map(|(&j, &l)| (j, l + rng.gumbel()))
            .collect();
        argmax_first(scores.into_iter()).expect("nonempty")
    };
    Ok((sojourn, dest, log_z))
}

/// One jump of the direct engine; advances `state` and returns
/// `(sojourn, destination)`.
pub fn cvrrw_step(
    state: &mut LocalTimeState,
    graph: &WeightedGraph,
    rng: &mut RngStream,
) -> Result<(f64, usize), WalkError> {
    let (s, dest, _) = propose_direct(state, graph, rng)?;
    state.advance(graph, s, dest);
    Ok((s, dest))
}

enum Proposer {
    Direct(RngStream),
    Clocks { clocks: Vec<AlarmClock>, next: Vec<f64> },
}

impl Proposer {
    fn clocks(
        graph: &WeightedGraph,
        start: usize,
        rng: &RngStream,
        law: impl Fn(usize) -> AlarmLaw,
    ) -> Result<Self, WalkError> {
        let mut clocks = Vec::with_capacity(graph.len());
        let mut next = Vec::with_capacity(graph.len());
        for v in 0..graph.len() {
            let mut c = AlarmClock::new(law(v), v == start, rng.sibling(StreamId::Vertex(v)))?;
            if v == start {
                // the alarm at 0 is the initial visit
                c.next_alarm();
            }
            next.push(c.next_alarm());
            clocks.push(c);
        }
        Ok(Proposer::Clocks { clocks, next })
    }

    fn propose(
        &mut self,
        state: &LocalTimeState,
        graph: &WeightedGraph,
    ) -> Result<(f64, usize, f64), WalkError> {
        match self {
            Proposer::Direct(rng) => propose_direct(state, graph, rng),
            Proposer::Clocks { next, .. } => {
                let x = state.current;
                let nb = graph.neighbors(x);
                let mut best: Option<(usize, f64)> = None;
                for &j in nb {
                    let rem = (next[j] - state.neighbor[j]).max(0.0);
                    match best {
                        Some((_, b)) if rem >= b => {}
                        _ => best = Some((j, rem)),
                    }
                }
                let (dest, rem) = best.ok_or(WalkError::Isolated(x))?;
                Ok((rem, dest, f64::NAN))
            }
        }
    }

    fn on_jump(&mut self, dest: usize) {
        if let Proposer::Clocks { clocks, next } = self {
            next[dest] = clocks[dest].next_alarm();
        }
    }
}

enum Stop {
    Horizon,
    Jumps(u64),
}

struct Run<'g> {
    graph: &'g WeightedGraph,
    target: Option<Vec<f64>>,
    state: LocalTimeState,
    visits: Vec<f64>,
    inc: Vec<f64>,
    seg_start: f64,
    traj: Trajectory,
    stored_events: usize,
}

impl<'g> Run<'g> {
    fn new(graph: &'g WeightedGraph, start: usize, horizon: f64, engine: Engine, stored: usize) -> Result<Self, WalkError> {
        let state = LocalTimeState::new(graph, start)?;
        let mut visits = vec![0.0; graph.len()];
        visits[start] = 1.0;
        Ok(Self {
            graph,
            target: limit_profile(graph),
            state,
            visits,
            inc: vec![0.0; graph.len()],
            seg_start: 0.0,
            traj: Trajectory {
                start,
                horizon,
                engine,
                events: Vec::new(),
                event_count: 0,
                events_truncated: false,
                records: Vec::new(),
                switch_time: None,
            },
            stored_events: stored,
        })
    }

    fn record_exact(&mut self, time: f64, with_chain: bool) {
        let x = self.state.current;
        self.inc[x] += time - self.seg_start;
        self.seg_start = time;
        let mut local = self.state.local.clone();
        local[x] += time - self.state.t;
        let (pi, deviation, log_z_sum) = if with_chain {
            let lr: Vec<f64> = (0..self.graph.len())
                .map(|j| self.graph.weight(j).ln() + self.graph.neighbor_sum(j, &local))
                .collect();
            let pi = chain::stationary_from_log_rates(&lr);
            let dev = match &self.target {
                Some(r) => pi.iter().zip(r).map(|(p, r)| p - r).collect(),
                None => Vec::new(),
            };
            (pi, dev, log_sum_exp(&lr))
        } else {
            (Vec::new(), Vec::new(), f64::NAN)
        };
        self.traj.records.push(GridRecord {
            time,
            position: x,
            local_times: local,
            increments: std::mem::replace(&mut self.inc, vec![0.0; self.graph.len()]),
            visits: self.visits.clone(),
            pi,
            deviation,
            log_z_sum,
            phase: Phase::Exact,
        });
    }

    fn jump(&mut self, sojourn: f64, dest: usize) {
        let x = self.state.current;
        let t_new = self.state.t + sojourn;
        self.inc[x] += t_new - self.seg_start;
        self.seg_start = t_new;
        self.state.advance(self.graph, sojourn, dest);
        self.visits[dest] += 1.0;
        let n = self.traj.event_count;
        self.traj.event_count += 1;
        if self.traj.events.len() < self.stored_events {
            self.traj.events.push(JumpEvent {
                n,
                time: self.state.t,
                from: x,
                to: dest,
            });
        } else {
            self.traj.events_truncated = true;
        }
        if self.traj.event_count % CHECK_EVERY == 0 {
            self.state.debug_check(self.graph);
        }
    }

    /// Exact phase. Returns `true` if it stopped to hand over to the
    /// diffusive phase.
    fn exact(
        &mut self,
        prop: &mut Proposer,
        grid: &[f64],
        gi: &mut usize,
        stop: Stop,
        cap: u64,
        switch_log_rate: Option<f64>,
        with_chain: bool,
    ) -> Result<bool, WalkError> {
        let horizon = self.traj.horizon;
        loop {
            if let Stop::Jumps(k) = stop {
                if self.traj.event_count >= k {
                    return Ok(false);
                }
            }
            let (s, dest, log_z) = prop.propose(&self.state, self.graph)?;
            if let Some(th) = switch_log_rate {
                if log_z > th {
                    return Ok(true);
                }
            }
            let t_new = self.state.t + s;
            while *gi < grid.len() && grid[*gi] <= t_new.min(horizon) {
                self.record_exact(grid[*gi], with_chain);
                *gi += 1;
            }
            if matches!(stop, Stop::Horizon) && t_new > horizon {
                return Ok(false);
            }
            if self.traj.event_count >= cap {
                let time = self.state.t;
                return Err(WalkError::Truncated {
                    cap,
                    time,
                    partial: Box::new(self.traj.clone()),
                });
            }
            self.jump(s, dest);
            prop.on_jump(dest);
        }
    }
}

/// Continuous-time walk from `start` up to `horizon`, with snapshots at the
/// `grid` times.
pub fn run_cvrrw(
    graph: &WeightedGraph,
    start: usize,
    horizon: f64,
    grid: &[f64],
    rng: RngStream,
    opts: &RunOptions,
) -> Result<Trajectory, WalkError> {
    validate_grid(grid, horizon)?;
    let mut run = Run::new(graph, start, horizon, opts.engine, opts.stored_events)?;
    let mut gi = 0;
    let (mut prop, switch) = match opts.engine {
        Engine::Direct => (Proposer::Direct(rng.clone()), None),
        Engine::Hybrid => {
            Frame::check_supported(graph)?;
            (Proposer::Direct(rng.clone()), Some(opts.hybrid.switch_rate.ln()))
        }
        Engine::Timelines | Engine::PoissonEmbed => {
            let method = if opts.engine == Engine::Timelines {
                AlarmMethod::Sequential
            } else {
                AlarmMethod::PoissonEmbed
            };
            let prop = Proposer::clocks(graph, start, &rng, |v| AlarmLaw::Reinforced {
                weight: graph.weight(v),
                method,
            })?;
            (prop, None)
        }
    };
    let handover = run.exact(&mut prop, grid, &mut gi, Stop::Horizon, opts.event_cap, switch, true)?;
    if handover {
        let mut drng = rng.sibling(StreamId::Aux(DIFFUSION_STREAM));
        diffuse(&mut run, grid, &mut gi, opts.hybrid.step, &mut drng)?;
    }
    Ok(run.traj)
}

/// Continuous-time embedding of the discrete walk: timelines engine driven
/// by the clocks `Θ_k = Σ_{l<k} ξ_l/(a+l)`.
pub fn run_vrrw_embedded(
    graph: &WeightedGraph,
    start: usize,
    a: &[f64],
    horizon: f64,
    grid: &[f64],
    rng: RngStream,
    opts: &RunOptions,
) -> Result<Trajectory, WalkError> {
    validate_grid(grid, horizon)?;
    check_initial(graph, a)?;
    let mut run = Run::new(graph, start, horizon, Engine::Timelines, opts.stored_events)?;
    let mut prop = Proposer::clocks(graph, start, &rng, |v| AlarmLaw::Vrrw { initial: a[v] })?;
    let mut gi = 0;
    run.exact(&mut prop, grid, &mut gi, Stop::Horizon, opts.event_cap, None, false)?;
    Ok(run.traj)
}

/// First `steps` destinations of the embedded discrete walk.
pub fn vrrw_embedded_skeleton(
    graph: &WeightedGraph,
    start: usize,
    a: &[f64],
    steps: usize,
    rng: RngStream,
) -> Result<Vec<usize>, WalkError> {
    check_initial(graph, a)?;
    let mut run = Run::new(graph, start, f64::INFINITY, Engine::Timelines, steps)?;
    let mut prop = Proposer::clocks(graph, start, &rng, |v| AlarmLaw::Vrrw { initial: a[v] })?;
    let mut gi = 0;
    run.exact(&mut prop, &[], &mut gi, Stop::Jumps(steps as u64), u64::MAX, None, false)?;
    Ok(run.traj.skeleton())
}

/// First `steps` destinations of a continuous-time walk with the given
/// engine (no horizon).
pub fn cvrrw_skeleton(
    graph: &WeightedGraph,
    start: usize,
    steps: usize,
    rng: RngStream,
    engine: Engine,
) -> Result<Vec<usize>, WalkError> {
    let mut run = Run::new(graph, start, f64::INFINITY, engine, steps)?;
    let mut prop = match engine {
        Engine::Direct | Engine::Hybrid => Proposer::Direct(rng),
        Engine::Timelines | Engine::PoissonEmbed => {
            let method = if engine == Engine::Timelines {
                AlarmMethod::Sequential
            } else {
                AlarmMethod::PoissonEmbed
            };
            Proposer::clocks(graph, start, &rng, |v| AlarmLaw::Reinforced {
                weight: graph.weight(v),
                method,
            })?
        }
    };
    let mut gi = 0;
    run.exact(&mut prop, &[], &mut gi, Stop::Jumps(steps as u64), u64::MAX, None, false)?;
    Ok(run.traj.skeleton())
}

/// Draw `W_i ~ Gamma(a_i, 1)` and return the first `steps` jump
/// destinations of the continuous-time walk with those weights. The start
/// vertex gets shape `a + 1`, matching the discrete walk's count `Z_i(0)`
/// that includes the visit at time 0.
pub fn gamma_mixture_skeleton(
    graph: &WeightedGraph,
    start: usize,
    a: &[f64],
    steps: usize,
    rng: RngStream,
) -> Result<Vec<usize>, WalkError> {
    check_initial(graph, a)?;
    if start >= graph.len() {
        return Err(WalkError::InvalidVertex(start));
    }
    let shapes: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if i == start { ai + 1.0 } else { ai })
        .collect();
    let mut wrng = rng.sibling(StreamId::Aux(MIXTURE_STREAM));
    let w = sample_gamma_weights(&shapes, &mut wrng)?;
    let g = graph.with_weights(w)?;
    cvrrw_skeleton(&g, start, steps, rng, Engine::Direct)
}

fn check_initial(graph: &WeightedGraph, a: &[f64]) -> Result<(), WalkError> {
    if a.len() != graph.len() {
        return Err(WalkError::Graph(GraphError::WeightCount {
            expected: graph.len(),
            got: a.len(),
        }));
    }
    for &x in a {
        if !(x > 0.0 && x.is_finite()) {
            return Err(WalkError::Sampling(SamplingError::NonPositive { name: "a", value: x }));
        }
    }
    Ok(())
}

/// Local-time coordinates for the diffusive phase. Core log-rates are
/// stored relative to the limit profile `r` (`w_i = s_i - log r_i - C`) so
/// that `π - r` stays resolvable long after it drops below `1e-16`.
struct Frame {
    r: Vec<f64>,
    lam: Vec<f64>,
    base: Vec<f64>,
    c: f64,
    core: Vec<usize>,
    leaves: Vec<usize>,
    w: Vec<f64>,
    shift: f64,
    t_s: f64,
    t_base: Vec<f64>,
    eps: Vec<f64>,
}

impl Frame {
    fn check_supported(graph: &WeightedGraph) -> Result<(), WalkError> {
        match graph.family() {
            Family::General => Err(WalkError::UnsupportedHybrid("general graph".into())),
            _ if graph.order() < 2 => Err(WalkError::UnsupportedHybrid("order below 2".into())),
            _ => Ok(()),
        }
    }

    fn new(graph: &WeightedGraph, state: &LocalTimeState) -> Self {
        let n = graph.len();
        let d = graph.order() as f64;
        let core: Vec<usize> = (0..graph.core_size()).collect();
        let leaves: Vec<usize> = graph.leaves().collect();
        let leaf_t = |i: usize| -> f64 { graph.leaves_of(i).iter().map(|&j| state.local[j]).sum() };
        let mut r = vec![0.0; n];
        match graph.partition() {
            Some(parts) => {
                // within a part the rate ratios are W_i e^{T_ℓ(i)} exactly
                for part in parts {
                    let lw: Vec<f64> = part.iter().map(|&i| graph.weight(i).ln() + leaf_t(i)).collect();
                    let lz = log_sum_exp(&lw);
                    for (&i, l) in part.iter().zip(&lw) {
                        r[i] = (l - lz).exp() / d;
                    }
                }
            }
            None => {
                for &i in &core {
                    r[i] = 1.0 / d;
                }
            }
        }
        let c = (d - 1.0) / d;
        let lam: Vec<f64> = (0..n).map(|i| if r[i] > 0.0 { r[i].ln() } else { 0.0 }).collect();
        let base: Vec<f64> = (0..n)
            .map(|i| match graph.anchor(i) {
                Some(a) if !graph.is_core(i) => r[a] - c,
                _ => 0.0,
            })
            .collect();
        let s = state.log_rates(graph);
        let shift: f64 = core.iter().map(|&i| r[i] * (s[i] - lam[i])).sum();
        let w = (0..n).map(|i| s[i] - lam[i] - shift).collect();
        Self {
            r,
            lam,
            base,
            c,
            core,
            leaves,
            w,
            shift,
            t_s: state.t,
            t_base: state.local.clone(),
            eps: vec![0.0; n],
        }
    }

    /// `(π, π - r, log Σ_x W_x e^{N_x})`.
    fn pi_parts(&self) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.w.len();
        let mut em = vec![0.0; n];
        let mut sum_dev = 0.0;
        for &i in &self.core {
            em[i] = self.w[i].exp_m1();
            sum_dev += self.r[i] * em[i];
        }
        for &j in &self.leaves {
            em[j] = self.w[j].exp();
            sum_dev += em[j];
        }
        let s = 1.0 + sum_dev;
        let mut dev = vec![0.0; n];
        for &i in &self.core {
            dev[i] = self.r[i] * (em[i] - sum_dev) / s;
        }
        for &j in &self.leaves {
            dev[j] = em[j] / s;
        }
        let pi = (0..n).map(|i| self.r[i] + dev[i]).collect();
        (pi, dev, self.shift + sum_dev.ln_1p())
    }

    fn log_rate(&self, i: usize) -> f64 {
        self.w[i] + self.lam[i] + self.shift
    }

    fn local_times(&self, t: f64) -> Vec<f64> {
        (0..self.w.len())
            .map(|i| self.t_base[i] + self.r[i] * (t - self.t_s) + self.eps[i])
            .collect()
    }
}

/// Square root factor of a symmetric PSD matrix via its eigenbasis.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut v = eig.eigenvectors;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..v.nrows() {
            v[(i, k)] *= s;
        }
    }
    v
}

fn poisson_draw(mean: f64, rng: &mut RngStream) -> f64 {
    if mean <= 0.0 {
        0.0
    } else if mean < 1e12 {
        Poisson::new(mean).expect("finite mean").sample(rng)
    } else {
        (mean + mean.sqrt() * rng.standard_normal()).max(0.0).round()
    }
}

fn gamma_draw(shape: f64, rng: &mut RngStream) -> f64 {
    if shape <= 0.0 {
        0.0
    } else if shape < 1e12 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
    } else {
        (shape + shape.sqrt() * rng.standard_normal()).max(0.0)
    }
}

/// Diffusive phase: Euler steps of the local-time SDE whose drift is `π(T)`
/// and whose noise covariance is the averaged quadratic variation
/// `2 diag(π) (-Q)` on the core. Leaf time is drawn as a compound Poisson
/// sum of exponential excursions, which keeps it nondecreasing.
fn diffuse(run: &mut Run<'_>, grid: &[f64], gi: &mut usize, step: f64, rng: &mut RngStream) -> Result<(), WalkError> {
    let graph = run.graph;
    let n = graph.len();
    let horizon = run.traj.horizon;
    let x = run.state.current;
    run.inc[x] += run.state.t - run.seg_start;
    let mut f = Frame::new(graph, &run.state);
    run.traj.switch_time = Some(run.state.t);
    let mut t = run.state.t;
    let core = f.core.clone();
    let nc = core.len();
    let mut inc = std::mem::replace(&mut run.inc, vec![0.0; n]);

    while *gi < grid.len() || t < horizon {
        let next_grid = grid.get(*gi).copied().unwrap_or(horizon);
        if next_grid <= t {
            let (pi, dev, lz) = f.pi_parts();
            let position = sample_index(&pi, rng);
            let deviation = match &run.target {
                Some(r) => (0..n).map(|i| dev[i] + (f.r[i] - r[i])).collect(),
                None => Vec::new(),
            };
            run.traj.records.push(GridRecord {
                time: t.max(next_grid),
                position,
                local_times: f.local_times(t),
                increments: std::mem::replace(&mut inc, vec![0.0; n]),
                visits: run.visits.clone(),
                pi,
                deviation,
                log_z_sum: lz,
                phase: Phase::Diffusion,
            });
            *gi += 1;
            continue;
        }
        let h = step.min(next_grid - t);
        let (pi, dev, log_s) = f.pi_parts();
        let sc = chain::generator_from_rates(graph, &pi);
        let pi_m = Matrix::repeated_row(n, &pi);
        let q_hat = pi_m.sub(&pi_m.sub(&sc).inverse().map_err(ChainError::from)?);
        let cov = DMatrix::from_fn(nc, nc, |a, b| {
            let (i, j) = (core[a], core[b]);
            -(pi[i] * q_hat[(i, j)] + pi[j] * q_hat[(j, i)])
        });
        let root = psd_sqrt(&cov);
        let scale = (h * (-log_s).exp()).sqrt();
        let z: Vec<f64> = (0..nc).map(|_| rng.standard_normal()).collect();
        let mut noise = vec![0.0; nc];
        for a in 0..nc {
            noise[a] = (0..nc).map(|b| root[(a, b)] * z[b]).sum::<f64>() * scale;
        }
        let total_noise: f64 = noise.iter().sum();
        let mut deps = vec![0.0; n];
        for (a, &i) in core.iter().enumerate() {
            deps[i] = dev[i] * h + noise[a] - f.r[i] * total_noise;
        }
        let log_total = log_s;
        for &j in &f.leaves {
            let anchor = graph.anchor(j).expect("leaf");
            let s_j = f.log_rate(j);
            let s_a = f.log_rate(anchor);
            let mean = (pi[anchor].ln() + h.ln() + s_j).exp();
            let k = poisson_draw(mean, rng);
            let leaf_time = if k > 0.0 {
                (gamma_draw(k, rng).ln() - s_a).exp()
            } else {
                0.0
            };
            deps[j] = leaf_time;
            deps[anchor] -= leaf_time - dev[j] * h;
            run.visits[j] += k;
            run.visits[anchor] += k;
        }
        for &i in &core {
            let flow: f64 = graph
                .neighbors(i)
                .iter()
                .filter(|&&y| graph.is_core(y))
                .map(|&y| pi[y])
                .sum();
            run.visits[i] += (h.ln() + log_total + pi[i].ln() + flow.ln()).exp();
        }
        for i in 0..n {
            let dw: f64 = graph.neighbors(i).iter().map(|&k| deps[k]).sum();
            f.w[i] += f.base[i] * h + dw;
            inc[i] += f.r[i] * h + deps[i];
            f.eps[i] += deps[i];
        }
        f.shift += f.c * h;
        let m: f64 = core.iter().map(|&i| f.r[i] * f.w[i]).sum();
        for wi in f.w.iter_mut() {
            *wi -= m;
        }
        f.shift += m;
        t = if next_grid - t <= step { next_grid } else { t + h };
    }
    run.state.t = t;
    run.state.local = f.local_times(t);
    run.state.neighbor = graph.neighbor_sums(&run.state.local);
    Ok(())
}

fn sample_index(p: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.open();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// State of the discrete walk after `n` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrrwState {
    pub current: usize,
    pub n: u64,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrrwSnapshot {
    pub n: u64,
    pub current: usize,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrrwRun {
    /// `X_0, X_1, …` when requested.
    pub path: Vec<usize>,
    pub history: Vec<VrrwSnapshot>,
    pub state: VrrwState,
}

/// Roughly `per_decade` log-spaced step counts in `[1, max]`, plus `max`.
pub fn geometric_step_grid(max: u64, per_decade: usize) -> Vec<u64> {
    let mut out = vec![0];
    if max == 0 {
        return out;
    }
    let decades = (max as f64).log10();
    let m = (decades * per_decade as f64).ceil() as usize;
    for k in 0..=m {
        let v = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
        if v <= max && *out.last().unwrap() != v {
            out.push(v);
        }
    }
    if *out.last().unwrap() != max {
        out.push(max);
    }
    out
}

/// Discrete-time walk with `P(X_{n+1} = j) ∝ Z_j(n) 1{j ∼ X_n}`. `grid`
/// lists the step counts at which `Z` is recorded.
pub fn run_vrrw(
    graph: &WeightedGraph,
    start: usize,
    a: &[f64],
    steps: u64,
    grid: &[u64],
    record_path: bool,
    rng: &mut RngStream,
) -> Result<VrrwRun, WalkError> {
    check_initial(graph, a)?;
    if start >= graph.len() {
        return Err(WalkError::InvalidVertex(start));
    }
    let mut z = a.to_vec();
    z[start] += 1.0;
    let mut x = start;
    let mut path = Vec::new();
    if record_path {
        path.push(x);
    }
    let mut history = Vec::new();
    let mut gi = 0;
    for n in 0..=steps {
        while gi < grid.len() && grid[gi] <= n {
            if grid[gi] == n {
                history.push(VrrwSnapshot { n, current: x, z: z.clone() });
            }
            gi += 1;
        }
        if n == steps {
            break;
        }
        let nb = graph.neighbors(x);
        if nb.is_empty() {
            return Err(WalkError::Isolated(x));
        }
        let next = if nb.len() == 1 {
            nb[0]
        } else {
            let total: f64 = nb.iter().map(|&j| z[j]).sum();
            let u = rng.open() * total;
            let mut acc = 0.0;
            let mut pick = nb[nb.len() - 1];
            for &j in nb {
                acc += z[j];
                if u < acc {
                    pick = j;
                    break;
                }
            }
            pick
        };
        x = next;
        z[x] += 1.0;
        if record_path {
            path.push(x);
        }
    }
    let state = VrrwState {
        current: x,
        n: steps,
        z,
        a: a.to_vec(),
    };
    debug_assert!({
        let lhs: f64 = state.z.iter().sum();
        let rhs: f64 = state.a.iter().sum::<f64>() + steps as f64 + 1.0;
        (lhs - rhs).abs() <= 1e-9 * rhs
    });
    Ok(VrrwRun { path, history, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_complete, build_complete_like};

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, 0, StreamId::Global)
    }

    #[test]
    fn leaf_always_returns_to_anchor() {
        let g = build_complete_like(3, &[1.0; 3], &[(1, 1.0)]).unwrap();
        let mut st = LocalTimeState::new(&g, 3).unwrap();
        let mut r = rng(1);
        for _ in 0..20 {
            st.current = 3;
            let (_, dest) = cvrrw_step(&mut st, &g, &mut r).unwrap();
            assert_eq!(dest, 1);
        }
    }

    #[test]
    fn zero_horizon_single_record() {
        let g = build_complete(3, &[1.0; 3]).unwrap();
        let tr = run_cvrrw(&g, 0, 0.0, &[0.0], rng(2), &RunOptions::default()).unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.records[0].local_times, vec![0.0; 3]);
    }

    #[test]
    fn events_adjacent_and_increasing() {
        let g = build_complete_like(4, &[1.0, 2.0, 1.0, 1.5], &[(0, 1.0)]).unwrap();
        for engine in [Engine::Direct, Engine::Timelines, Engine::PoissonEmbed] {
            let tr = run_cvrrw(&g, 4, 5.0, &linear_grid(5.0, 11), rng(3), &RunOptions::engine(engine)).unwrap();
            assert!(tr.event_count > 0);
            let mut prev = 0.0;
            let mut at = 4;
            for e in &tr.events {
                assert!(e.time > prev);
                assert_eq!(e.from, at);
                assert!(g.is_adjacent(e.from, e.to));
                prev = e.time;
                at = e.to;
            }
            let last = tr.last_record().unwrap();
            let sum: f64 = last.local_times.iter().sum();
            assert!((sum - 5.0).abs() < 1e-9);
            let inc_sum: Vec<f64> = (0..5)
                .map(|i| tr.records.iter().map(|r| r.increments[i]).sum())
                .collect();
            for i in 0..5 {
                assert!((inc_sum[i] - last.local_times[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn truncation_carries_partial() {
        let g = build_complete(3, &[1.0; 3]).unwrap();
        let opts = RunOptions {
            event_cap: 50,
            ..RunOptions::default()
        };
        match run_cvrrw(&g, 0, 100.0, &linear_grid(100.0, 5), rng(4), &opts) {
            Err(WalkError::Truncated { cap, partial, .. }) => {
                assert_eq!(cap, 50);
                assert_eq!(partial.event_count, 50);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn vrrw_counts_invariant() {
        let g = build_complete(4, &[1.0; 4]).unwrap();
        let run = run_vrrw(&g, 0, &[1.0; 4], 1000, &geometric_step_grid(1000, 5), true, &mut rng(5)).unwrap();
        assert_eq!(run.path.len(), 1001);
        let total: f64 = run.state.z.iter().sum();
        assert_eq!(total, 4.0 + 1001.0);
        for w in run.history.windows(2) {
            for i in 0..4 {
                assert!(w[1].z[i] >= w[0].z[i]);
            }
        }
    }

    #[test]
    fn hybrid_switches_and_keeps_time() {
        let g = build_complete(4, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let tr = run_cvrrw(&g, 0, 40.0, &linear_grid(40.0, 41), rng(6), &RunOptions::engine(Engine::Hybrid)).unwrap();
        let ts = tr.switch_time.unwrap();
        assert!(ts > 5.0 && ts < 40.0);
        let last = tr.last_record().unwrap();
        assert_eq!(last.phase, Phase::Diffusion);
        let sum: f64 = last.local_times.iter().sum();
        assert!((sum - 40.0).abs() < 1e-9);
    }

    #[test]
    fn geometric_grid_shape() {
        let g = geometric_step_grid(1000, 3);
        assert_eq!(g.first(), Some(&0));
        assert_eq!(g.last(), Some(&1000));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
