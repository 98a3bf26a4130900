//! Entropy and Lyapunov functionals, the target vector `z*`, the
//! stochastic-approximation decomposition of `f(T(t))` along a trajectory,
//! and the rate/limit estimators.

use serde::{Deserialize, Serialize};

use crate::chain::{self, log_rates, log_sum_exp, ChainError, DEFAULT_OVERFLOW_GUARD};
use crate::graph::{Family, GraphError, WeightedGraph};
use crate::linalg::Matrix;
use crate::scalar::Field;
use crate::walkers::{GridRecord, Trajectory, VrrwSnapshot};

pub const SIMPLEX_TOL: f64 = 1e-12;
const RICHARDSON_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("not a probability vector: {0}")]
    NotSimplex(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("unknown functional `{0}`")]
    UnknownFunctional(String),
    #[error("functional `{name}` needs {need}")]
    FunctionalDomain { name: String, need: &'static str },
    #[error("need at least {need} points in the fit window, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("nonpositive value {value} at abscissa {at}")]
    NonPositive { at: f64, value: f64 },
    #[error("vertex {0} is not a leaf")]
    NotLeaf(usize),
    #[error("trajectory lacks {0}")]
    Incomplete(&'static str),
}

/// Nonnegative weights on the vertices summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if let Some(v) = values.iter().find(|v| !(**v >= -SIMPLEX_TOL) || !v.is_finite()) {
            return Err(DiagnosticsError::NotSimplex(format!("entry {v}")));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL * values.len().max(1) as f64 {
            return Err(DiagnosticsError::NotSimplex(format!("sum {s}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `N_i(y) = Σ_{k∼i} y_k`.
pub fn neighbor_mass<S: Field>(graph: &WeightedGraph, y: &[S]) -> Vec<S> {
    (0..graph.len())
        .map(|i| {
            graph
                .neighbors(i)
                .iter()
                .fold(S::zero(), |a, &k| a + y[k].clone())
        })
        .collect()
}

/// `H(y) = Σ_i y_i N_i(y)`.
pub fn entropy_h<S: Field>(y: &[S], graph: &WeightedGraph) -> S {
    let n = neighbor_mass(graph, y);
    y.iter()
        .zip(n)
        .fold(S::zero(), |a, (yi, ni)| a + yi.clone() * ni)
}

/// `J(x) = 2 Σ_i x_i (N_i(x) - H(x))²`.
pub fn dissipation_j<S: Field>(x: &[S], graph: &WeightedGraph) -> S {
    let n = neighbor_mass(graph, x);
    let h = entropy_h(x, graph);
    let two = S::one() + S::one();
    x.iter().zip(n).fold(S::zero(), |a, (xi, ni)| {
        let d = ni - h.clone();
        a + two.clone() * xi.clone() * d.clone() * d
    })
}

/// `z*`: uniform on the core, zero on leaves.
pub fn z_star(graph: &WeightedGraph) -> Result<ProbVector, DiagnosticsError> {
    graph.require_complete_like()?;
    let d = graph.core_size() as f64;
    ProbVector::new(
        (0..graph.len())
            .map(|i| if graph.is_core(i) { 1.0 / d } else { 0.0 })
            .collect(),
    )
}

/// Exact `z*` in any field.
pub fn z_star_in<S: Field>(graph: &WeightedGraph) -> Result<Vec<S>, DiagnosticsError> {
    graph.require_complete_like()?;
    let d = S::from_usize_exact(graph.core_size());
    Ok((0..graph.len())
        .map(|i| if graph.is_core(i) { S::one() / d.clone() } else { S::zero() })
        .collect())
}

/// Coefficients `c_k` of the linear part of `V`, so that
/// `V(T) = -log Σ W e^N + Σ_k c_k T_k + const`.
fn v_linear_part(graph: &WeightedGraph) -> Result<(Vec<f64>, f64), DiagnosticsError> {
    let n = graph.len();
    let d = graph.order() as f64;
    match graph.family() {
        Family::Complete | Family::CompleteLike => {
            let mut c = vec![0.0; n];
            let mut k0 = 0.0;
            for i in 0..graph.core_size() {
                k0 += graph.weight(i).ln() / d;
                for &k in graph.neighbors(i) {
                    c[k] += 1.0 / d;
                }
            }
            Ok((c, k0))
        }
        Family::DPartite => {
            let parts = graph.partition().expect("d-partite graph has parts");
            let c = (0..n)
                .map(|i| if graph.is_core(i) { (d - 1.0) / d } else { 0.0 })
                .collect();
            let k0 = parts
                .iter()
                .flat_map(|p| p.iter())
                .map(|&y| graph.weight(y).ln() / d)
                .sum();
            Ok((c, k0))
        }
        Family::General => Err(GraphError::FamilyMismatch {
            required: "complete, complete-like or d-partite graph",
            actual: graph.family().to_string(),
        }
        .into()),
    }
}

/// The Lyapunov function of the family, evaluated in the log domain.
pub fn lyapunov_v(graph: &WeightedGraph, t: &[f64]) -> Result<f64, DiagnosticsError> {
    check_len(graph, t)?;
    let (c, k0) = v_linear_part(graph)?;
    let lse = log_sum_exp(&log_rates(graph, t));
    Ok(-lse + k0 + c.iter().zip(t).map(|(a, b)| a * b).sum::<f64>())
}

/// `Σ_q (1/d) log Σ_{y∈V_q} π_y`, the upper bound of the d-partite `V`.
pub fn v_part_bound(graph: &WeightedGraph, t: &[f64]) -> Result<f64, DiagnosticsError> {
    check_len(graph, t)?;
    let parts = graph.partition().ok_or(GraphError::FamilyMismatch {
        required: "d-partite graph",
        actual: graph.family().to_string(),
    })?;
    let lr = log_rates(graph, t);
    let lse = log_sum_exp(&lr);
    let d = parts.len() as f64;
    Ok(parts
        .iter()
        .map(|p| {
            let l: Vec<f64> = p.iter().map(|&y| lr[y]).collect();
            (log_sum_exp(&l) - lse) / d
        })
        .sum())
}

fn check_len(graph: &WeightedGraph, t: &[f64]) -> Result<(), DiagnosticsError> {
    if t.len() != graph.len() {
        return Err(ChainError::Dimension {
            expected: graph.len(),
            got: t.len(),
        }
        .into());
    }
    Ok(())
}

/// `π(T) - z*` with the core entries formed as `(1/d) expm1(·)` of
/// centered log-rates, which keeps relative precision near `z*`.
pub fn pi_deviation(graph: &WeightedGraph, t: &[f64]) -> Result<Vec<f64>, DiagnosticsError> {
    check_len(graph, t)?;
    graph.require_complete_like()?;
    let lr = log_rates(graph, t);
    let lse = log_sum_exp(&lr);
    let ld = (graph.core_size() as f64).ln();
    Ok((0..graph.len())
        .map(|i| {
            if graph.is_core(i) {
                (lr[i] - lse + ld).exp_m1() / graph.core_size() as f64
            } else {
                (lr[i] - lse).exp()
            }
        })
        .collect())
}

/// `log ‖v‖₂`, scaled so it does not underflow.
pub fn log_norm(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if m == 0.0 {
        return f64::NEG_INFINITY;
    }
    m.ln() + 0.5 * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().ln()
}

/// `log ‖π(T) - z*‖`.
pub fn log_distance_to_z_star(graph: &WeightedGraph, t: &[f64]) -> Result<f64, DiagnosticsError> {
    Ok(log_norm(&pi_deviation(graph, t)?))
}

/// Named functionals with closed-form gradient and Hessian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Constant,
    /// `f = T_i`.
    Coordinate(usize),
    /// The family's Lyapunov function.
    V,
    /// `f = H(π(T))`.
    HPi,
    /// `f = W_i e^{T_j + T_ℓ(i)} - W_j e^{T_i + T_ℓ(j)}` (`T_ℓ = 0` without
    /// a leaf).
    Contrast(usize, usize),
}

impl std::str::FromStr for Functional {
    type Err = DiagnosticsError;
    fn from_str(s: &str) -> Result<Self, DiagnosticsError> {
        let bad = || DiagnosticsError::UnknownFunctional(s.to_string());
        let idx = |x: &str| x.trim().parse::<usize>().map_err(|_| bad());
        match s {
            "constant" => Ok(Self::Constant),
            "v" | "V" => Ok(Self::V),
            "h" | "H" | "h_pi" => Ok(Self::HPi),
            _ => {
                if let Some(rest) = s.strip_prefix('T').or_else(|| s.strip_prefix("coord:")) {
                    Ok(Self::Coordinate(idx(rest)?))
                } else if let Some(rest) = s.strip_prefix("contrast:") {
                    let (a, b) = rest.split_once(',').ok_or_else(bad)?;
                    Ok(Self::Contrast(idx(a)?, idx(b)?))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl std::fmt::Display for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant => write!(f, "constant"),
            Self::Coordinate(i) => write!(f, "T{i}"),
            Self::V => write!(f, "V"),
            Self::HPi => write!(f, "h_pi"),
            Self::Contrast(i, j) => write!(f, "contrast:{i},{j}"),
        }
    }
}

impl Functional {
    pub fn check(&self, graph: &WeightedGraph) -> Result<(), DiagnosticsError> {
        let n = graph.len();
        match *self {
            Self::Coordinate(i) if i >= n => Err(self.domain("a vertex index in range")),
            Self::Contrast(i, j) if i == j || !graph.is_core(i) || !graph.is_core(j) => {
                Err(self.domain("two distinct core vertices"))
            }
            Self::V => v_linear_part(graph).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn domain(&self, need: &'static str) -> DiagnosticsError {
        DiagnosticsError::FunctionalDomain {
            name: self.to_string(),
            need,
        }
    }

    pub fn value(&self, graph: &WeightedGraph, t: &[f64]) -> Result<f64, DiagnosticsError> {
        self.check(graph)?;
        Ok(match *self {
            Self::Constant => 0.0,
            Self::Coordinate(i) => t[i],
            Self::V => lyapunov_v(graph, t)?,
            Self::HPi => entropy_h(&chain::stationary(graph, t), graph),
            Self::Contrast(i, j) => {
                let (a, b) = contrast_terms(graph, t, i, j);
                a - b
            }
        })
    }

    /// `(∇f, ∇²f)` at `T`.
    pub fn derivatives(&self, graph: &WeightedGraph, t: &[f64]) -> Result<(Vec<f64>, Matrix<f64>), DiagnosticsError> {
        self.check(graph)?;
        let n = graph.len();
        Ok(match *self {
            Self::Constant => (vec![0.0; n], Matrix::zeros(n, n)),
            Self::Coordinate(i) => {
                let mut g = vec![0.0; n];
                g[i] = 1.0;
                (g, Matrix::zeros(n, n))
            }
            Self::V => {
                let (c, _) = v_linear_part(graph)?;
                let pi = chain::stationary(graph, t);
                let nu = neighbor_mass(graph, &pi);
                let g = (0..n).map(|k| c[k] - nu[k]).collect();
                let b = nu_jacobian(graph, &pi, &nu);
                (g, b.scale(&-1.0))
            }
            Self::HPi => h_pi_derivatives(graph, t),
            Self::Contrast(i, j) => {
                let (a, b) = contrast_terms(graph, t, i, j);
                let mut ua = vec![0.0; n];
                ua[j] += 1.0;
                if let Some(l) = graph.leaf_of(i) {
                    ua[l] += 1.0;
                }
                let mut ub = vec![0.0; n];
                ub[i] += 1.0;
                if let Some(l) = graph.leaf_of(j) {
                    ub[l] += 1.0;
                }
                let g = (0..n).map(|k| a * ua[k] - b * ub[k]).collect();
                let h = Matrix::from_fn(n, n, |p, q| a * ua[p] * ua[q] - b * ub[p] * ub[q]);
                (g, h)
            }
        })
    }
}

fn contrast_terms(graph: &WeightedGraph, t: &[f64], i: usize, j: usize) -> (f64, f64) {
    let leaf_t = |v: usize| graph.leaf_of(v).map_or(0.0, |l| t[l]);
    (
        graph.weight(i) * (t[j] + leaf_t(i)).exp(),
        graph.weight(j) * (t[i] + leaf_t(j)).exp(),
    )
}

/// `∂ν_k/∂T_m` for `ν = Aπ`: `(A D_π A)_{km} - ν_k ν_m`.
fn nu_jacobian(graph: &WeightedGraph, pi: &[f64], nu: &[f64]) -> Matrix<f64> {
    let n = graph.len();
    Matrix::from_fn(n, n, |k, m| {
        let s: f64 = graph
            .neighbors(k)
            .iter()
            .filter(|&&x| graph.is_adjacent(x, m))
            .map(|&x| pi[x])
            .sum();
        s - nu[k] * nu[m]
    })
}

fn h_pi_derivatives(graph: &WeightedGraph, t: &[f64]) -> (Vec<f64>, Matrix<f64>) {
    let n = graph.len();
    let pi = chain::stationary(graph, t);
    let nu = neighbor_mass(graph, &pi);
    let h: f64 = pi.iter().zip(&nu).map(|(a, b)| a * b).sum();
    let u: Vec<f64> = pi.iter().zip(&nu).map(|(a, b)| a * b).collect();
    let au = neighbor_mass(graph, &u);
    let grad: Vec<f64> = (0..n).map(|k| 2.0 * (au[k] - nu[k] * h)).collect();
    let b = nu_jacobian(graph, &pi, &nu);
    let adj = |a: usize, c: usize| if graph.is_adjacent(a, c) { 1.0 } else { 0.0 };
    let hess = Matrix::from_fn(n, n, |k, m| {
        let s: f64 = graph
            .neighbors(k)
            .iter()
            .map(|&i| pi[i] * nu[i] * (adj(i, m) - nu[m]) + pi[i] * b[(i, m)])
            .sum();
        2.0 * (s - b[(k, m)] * h - nu[k] * grad[m])
    });
    (grad, hess)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub nodes: usize,
    pub guard: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            nodes: 6,
            guard: DEFAULT_OVERFLOW_GUARD,
        }
    }
}

/// Every term of the stochastic-approximation identity at the record times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub functional: String,
    pub times: Vec<f64>,
    /// `f(T(t)) - f(T(0))`.
    pub increment: Vec<f64>,
    /// `∫ π·∇f du`.
    pub drift: Vec<f64>,
    /// `[Q∇f]_{X_t}`.
    pub boundary_t: Vec<f64>,
    /// `[Q∇f]_{X_0}`.
    pub boundary_0: f64,
    /// `∫ [∂_{T_{X_u}} Q ∇f]_{X_u} du`.
    pub correction_q: Vec<f64>,
    /// `∫ [Q ∂_{T_{X_u}} ∇f]_{X_u} du`.
    pub correction_grad: Vec<f64>,
    pub martingale: Vec<f64>,
    /// `∫ g_f(X_s, T(s)) ds`.
    pub quadratic_variation: Vec<f64>,
    /// Largest relative change of any integral when every segment is split
    /// in half.
    pub richardson: f64,
}

impl DecompositionReport {
    pub fn richardson_ok(&self) -> bool {
        self.richardson < RICHARDSON_TOL
    }

    /// `|LHS - RHS|` of the identity at each time; zero up to rounding since
    /// the martingale is defined by rearrangement.
    pub fn identity_residual(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|k| {
                let lhs = self.increment[k] - self.drift[k];
                let rhs = self.boundary_t[k] - self.boundary_0 + self.martingale[k]
                    - self.correction_q[k]
                    - self.correction_grad[k];
                (lhs - rhs).abs()
            })
            .collect()
    }
}

struct Evaluator<'a> {
    graph: &'a WeightedGraph,
    f: &'a Functional,
    guard: f64,
}

impl Evaluator<'_> {
    fn chain_at(&self, t: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Matrix<f64>), DiagnosticsError> {
        let lr = log_rates(self.graph, t);
        let max_n = (0..t.len())
            .map(|j| lr[j] - self.graph.weight(j).ln())
            .fold(f64::NEG_INFINITY, f64::max);
        if max_n > self.guard {
            return Err(ChainError::Overflow {
                max_n,
                guard: self.guard,
            }
            .into());
        }
        let rates: Vec<f64> = lr.iter().map(|r| r.exp()).collect();
        let pi = chain::stationary_from_log_rates(&lr);
        let l = chain::generator_from_rates(self.graph, &rates);
        let q = chain::q_linear_solve(&l, &pi).map_err(ChainError::from)?;
        Ok((rates, pi, q))
    }

    fn q_grad_at(&self, t: &[f64], x: usize) -> Result<f64, DiagnosticsError> {
        let (_, _, q) = self.chain_at(t)?;
        let (g, _) = self.f.derivatives(self.graph, t)?;
        Ok(dot(q.row(x), &g))
    }

    /// Integrands `[π·∇f, [∂_x Q ∇f]_x, [Q ∂_x∇f]_x, g_f(x), |·| sum]`.
    fn integrands(&self, t: &[f64], x: usize) -> Result<[f64; 4], DiagnosticsError> {
        let (rates, pi, q) = self.chain_at(t)?;
        let (g, h) = self.f.derivatives(self.graph, t)?;
        let drift = dot(&pi, &g);
        let dq = chain::q_derivative_from(self.graph, &rates, &pi, &q, x);
        let cq = dot(dq.row(x), &g);
        let hx = h.column(x);
        let cg = dot(q.row(x), &hx);
        let qg = q.matvec(&g);
        let gf = chain::g_f_from(self.graph, &rates, x, &qg);
        Ok([drift, cq, cg, gf])
    }

    /// Gauss–Legendre integral over `T + s e_x`, `s ∈ [0, len]`, split into
    /// `parts` equal pieces.
    fn segment(
        &self,
        t0: &[f64],
        x: usize,
        len: f64,
        parts: usize,
        nodes: &(Vec<f64>, Vec<f64>),
    ) -> Result<([f64; 4], [f64; 4]), DiagnosticsError> {
        let mut acc = [0.0; 4];
        let mut abs = [0.0; 4];
        if len <= 0.0 {
            return Ok((acc, abs));
        }
        let piece = len / parts as f64;
        let mut t = t0.to_vec();
        for p in 0..parts {
            let a = p as f64 * piece;
            for (xi, wi) in nodes.0.iter().zip(&nodes.1) {
                t[x] = t0[x] + a + 0.5 * piece * (xi + 1.0);
                let v = self.integrands(&t, x)?;
                for k in 0..4 {
                    acc[k] += 0.5 * piece * wi * v[k];
                    abs[k] += 0.5 * piece * wi * v[k].abs();
                }
            }
        }
        Ok((acc, abs))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluate every term of the identity
/// `f(T_t) - f(T_0) - ∫π·∇f = [Q∇f]_{X_t} - [Q∇f]_{X_0} + M_f(t) - ∫[∂Q ∇f] - ∫[Q ∂∇f]`
/// along the piecewise-linear local-time path of an exact trajectory, at
/// its record times. `M_f` is obtained by rearrangement.
pub fn decompose_trajectory(
    traj: &Trajectory,
    graph: &WeightedGraph,
    f: &Functional,
    opts: &DecomposeOptions,
) -> Result<DecompositionReport, DiagnosticsError> {
    f.check(graph)?;
    if traj.events_truncated {
        return Err(DiagnosticsError::Incomplete("the full event list"));
    }
    if traj.switch_time.is_some() {
        return Err(DiagnosticsError::Incomplete("an exact (non-diffusive) path"));
    }
    let ev = Evaluator {
        graph,
        f,
        guard: opts.guard,
    };
    let nodes = gauss_legendre(opts.nodes.max(1));
    let n = graph.len();
    let mut t = vec![0.0; n];
    let mut x = traj.start;
    let mut now = 0.0;
    let f0 = f.value(graph, &t)?;
    let boundary_0 = ev.q_grad_at(&t, x)?;
    let mut full = [0.0; 4];
    let mut half = [0.0; 4];
    let mut mag = [0.0; 4];
    let mut ei = 0;
    let mut rep = DecompositionReport {
        functional: f.to_string(),
        times: Vec::new(),
        increment: Vec::new(),
        drift: Vec::new(),
        boundary_t: Vec::new(),
        boundary_0,
        correction_q: Vec::new(),
        correction_grad: Vec::new(),
        martingale: Vec::new(),
        quadratic_variation: Vec::new(),
        richardson: 0.0,
    };
    let mut advance = |t: &mut Vec<f64>, x: usize, to: f64, now: &mut f64| -> Result<[f64; 4], DiagnosticsError> {
        let len = to - *now;
        let (a, m) = ev.segment(t, x, len, 1, &nodes)?;
        let (b, _) = ev.segment(t, x, len, 2, &nodes)?;
        for k in 0..4 {
            full[k] += a[k];
            half[k] += b[k];
            mag[k] += m[k];
        }
        t[x] += len.max(0.0);
        *now = to.max(*now);
        Ok(half)
    };
    for rec in &traj.records {
        while ei < traj.events.len() && traj.events[ei].time <= rec.time {
            let e = traj.events[ei];
            advance(&mut t, x, e.time, &mut now)?;
            x = e.to;
            ei += 1;
        }
        let sums = advance(&mut t, x, rec.time, &mut now)?;
        let inc = f.value(graph, &t)? - f0;
        let bt = ev.q_grad_at(&t, x)?;
        rep.times.push(rec.time);
        rep.increment.push(inc);
        rep.drift.push(sums[0]);
        rep.boundary_t.push(bt);
        rep.correction_q.push(sums[1]);
        rep.correction_grad.push(sums[2]);
        rep.quadratic_variation.push(sums[3]);
        rep.martingale.push(inc - sums[0] - bt + boundary_0 + sums[1] + sums[2]);
    }
    rep.richardson = (0..4)
        .map(|k| {
            if mag[k] == 0.0 {
                0.0
            } else {
                (full[k] - half[k]).abs() / mag[k]
            }
        })
        .fold(0.0, f64::max);
    Ok(rep)
}

/// Least-squares line through `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub n: usize,
}

pub const MIN_FIT_POINTS: usize = 10;

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit, DiagnosticsError> {
    let n = points.len();
    if n < MIN_FIT_POINTS {
        return Err(DiagnosticsError::TooFewPoints {
            need: MIN_FIT_POINTS,
            got: n,
        });
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    Ok(LineFit {
        slope,
        intercept,
        stderr,
        n,
    })
}

/// Points with abscissa in the trailing `window` fraction of the range.
pub fn trailing_window(points: &[(f64, f64)], window: f64) -> Vec<(f64, f64)> {
    if points.is_empty() {
        return Vec::new();
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let cut = hi - window * (hi - lo);
    points.iter().copied().filter(|p| p.0 >= cut).collect()
}

/// OLS slope of `log value` against `t` over the trailing `window` of the
/// series.
pub fn fit_exponential_rate(records: &[(f64, f64)], window: f64) -> Result<LineFit, DiagnosticsError> {
    let pts = trailing_window(records, window);
    let logs = pts
        .iter()
        .map(|&(t, v)| {
            if v > 0.0 && v.is_finite() {
                Ok((t, v.ln()))
            } else {
                Err(DiagnosticsError::NonPositive { at: t, value: v })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    fit_line(&logs)
}

/// Same fit when the series is already in log form.
pub fn fit_log_rate(records: &[(f64, f64)], window: f64) -> Result<LineFit, DiagnosticsError> {
    let pts = trailing_window(records, window);
    if let Some(p) = pts.iter().find(|p| !p.1.is_finite()) {
        return Err(DiagnosticsError::NonPositive { at: p.0, value: p.1.exp() });
    }
    fit_line(&pts)
}

/// `(t, log ‖π - r‖)` from the records of a trajectory (`r` the family's
/// limit profile).
pub fn log_deviation_series(records: &[GridRecord]) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| !r.deviation.is_empty())
        .map(|r| (r.time, log_norm(&r.deviation)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafExponent {
    pub fit: LineFit,
    /// `d/(d-1) ẑ_{n_j}` from the anchor's measured frequency (d-partite),
    /// or `1/(d-1)` (complete-like).
    pub predicted: f64,
    /// `(max - min)/max` of `Z_j(n) / n^{predicted}` over the window.
    pub ratio_variation: f64,
}

/// OLS of `log Z_j(n)` on `log n` over the trailing `decades` of step
/// counts.
pub fn leaf_exponent(
    history: &[VrrwSnapshot],
    graph: &WeightedGraph,
    leaf: usize,
    decades: f64,
) -> Result<LeafExponent, DiagnosticsError> {
    let anchor = graph
        .anchor(leaf)
        .filter(|_| !graph.is_core(leaf))
        .ok_or(DiagnosticsError::NotLeaf(leaf))?;
    let last = history.last().ok_or(DiagnosticsError::Incomplete("snapshots"))?;
    let n_max = last.n as f64;
    let cut = n_max / 10f64.powf(decades);
    let window: Vec<&VrrwSnapshot> = history.iter().filter(|s| s.n >= 1 && s.n as f64 >= cut).collect();
    let pts: Vec<(f64, f64)> = window
        .iter()
        .map(|s| ((s.n as f64).ln(), s.z[leaf].ln()))
        .collect();
    let fit = fit_line(&pts)?;
    let d = graph.order() as f64;
    let predicted = match graph.family() {
        Family::DPartite => {
            let core_total: f64 = (0..graph.core_size()).map(|i| last.z[i]).sum();
            d / (d - 1.0) * last.z[anchor] / core_total
        }
        _ => 1.0 / (d - 1.0),
    };
    let ratios: Vec<f64> = window
        .iter()
        .map(|s| s.z[leaf] / (s.n as f64).powf(predicted))
        .collect();
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LeafExponent {
        fit,
        predicted,
        ratio_variation: (hi - lo) / hi,
    })
}

/// Terminal `T_i(t) - t/d` and the predicted `log W_i - (1/d) Σ log W`.
pub fn t_over_d_limit(record: &GridRecord, graph: &WeightedGraph) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    graph.require_leafless_complete()?;
    let d = graph.core_size();
    if d <= 3 {
        return Err(GraphError::FamilyMismatch {
            required: "complete graph with d > 3",
            actual: format!("K{d}"),
        }
        .into());
    }
    let mean_log: f64 = graph.weights().iter().map(|w| w.ln()).sum::<f64>() / d as f64;
    Ok((0..d)
        .map(|i| {
            (
                record.local_times[i] - record.time / d as f64,
                graph.weight(i).ln() - mean_log,
            )
        })
        .collect())
}

/// Running maxima of `u ↦ e^{u/3} ‖π(T(u)) - z*‖` and their ratios to
/// `√u` and `u^κ`, all in log form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledGrowth {
    pub times: Vec<f64>,
    pub log_scaled: Vec<f64>,
    pub log_running_max: Vec<f64>,
    pub log_ratio_sqrt: Vec<f64>,
    pub log_ratio_kappa: Vec<f64>,
    pub kappa: f64,
}

impl ScaledGrowth {
    /// Log running max at the first record time `≥ t`.
    pub fn log_running_max_at(&self, t: f64) -> Option<f64> {
        self.times
            .iter()
            .position(|&u| u >= t)
            .map(|k| self.log_running_max[k])
    }

    pub fn log_ratio_kappa_at(&self, t: f64) -> Option<f64> {
        self.times
            .iter()
            .position(|&u| u >= t)
            .map(|k| self.log_ratio_kappa[k])
    }
}

pub fn k3_scaled_growth(records: &[GridRecord], graph: &WeightedGraph, kappa: f64) -> Result<ScaledGrowth, DiagnosticsError> {
    graph.require_leafless_complete()?;
    if graph.core_size() != 3 {
        return Err(GraphError::FamilyMismatch {
            required: "K3",
            actual: format!("K{}", graph.core_size()),
        }
        .into());
    }
    let mut out = ScaledGrowth {
        times: Vec::new(),
        log_scaled: Vec::new(),
        log_running_max: Vec::new(),
        log_ratio_sqrt: Vec::new(),
        log_ratio_kappa: Vec::new(),
        kappa,
    };
    let mut run = f64::NEG_INFINITY;
    for r in records.iter().filter(|r| r.time > 0.0 && !r.deviation.is_empty()) {
        let s = log_norm(&r.deviation) + r.time / 3.0;
        run = run.max(s);
        let lu = r.time.ln();
        out.times.push(r.time);
        out.log_scaled.push(s);
        out.log_running_max.push(run);
        out.log_ratio_sqrt.push(run - 0.5 * lu);
        out.log_ratio_kappa.push(run - kappa * lu);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_complete, build_complete_like};
    use approx::assert_relative_eq;

    #[test]
    fn h_at_uniform() {
        let g = build_complete(4, &[1.0; 4]).unwrap();
        assert_relative_eq!(entropy_h(&[0.25; 4], &g), 0.75, epsilon = 1e-15);
        let pm = [1.0, 0.0, 0.0];
        assert_eq!(entropy_h(&pm, &build_complete(3, &[1.0; 3]).unwrap()), 0.0);
        assert_eq!(dissipation_j(&[0.25; 4], &g), 0.0);
    }

    #[test]
    fn z_star_with_leaf() {
        let g = build_complete_like(4, &[1.0; 4], &[(0, 1.0)]).unwrap();
        assert_eq!(z_star(&g).unwrap().values(), &[0.25, 0.25, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in 1..10 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn synthetic_rate() {
        let pts: Vec<(f64, f64)> = (0..50).map(|k| (k as f64, 3.0 * (-0.2 * k as f64).exp())).collect();
        let f = fit_exponential_rate(&pts, 1.0).unwrap();
        assert!((f.slope + 0.2).abs() < 1e-12);
        assert!(fit_exponential_rate(&pts[..5], 1.0).is_err());
    }

    #[test]
    fn parse_functionals() {
        for s in ["constant", "T2", "V", "h_pi", "contrast:0,2"] {
            let f: Functional = s.parse().unwrap();
            assert_eq!(f.to_string().parse::<Functional>().unwrap(), f);
        }
        assert!("nope".parse::<Functional>().is_err());
    }
}
