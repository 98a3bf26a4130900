//! The frozen-environment jump process: generator, stationary law,
//! fundamental matrix, hitting times and the derivative of `Q` in `T`.
//!
//! The algebra is generic over [`Field`] given the vector of jump rates
//! `r_j = W_j e^{N_j(T)}`; the `f64` entry points build those rates from a
//! local-time vector and guard against overflow.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::graph::{GraphError, WeightedGraph};
use crate::linalg::{LinalgError, Matrix};
use crate::scalar::Field;

pub const DEFAULT_OVERFLOW_GUARD: f64 = 600.0;
pub const MAX_DENSE_VERTICES: usize = 64;
const QUADRATURE_TAIL: f64 = 1e-10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("neighbor sum {max_n} exceeds overflow guard {guard}; only log-domain quantities are available")]
    Overflow { max_n: f64, guard: f64 },
    #[error("{0} vertices exceeds the dense-algebra cap of {MAX_DENSE_VERTICES}")]
    TooLarge(usize),
    #[error("local-time vector has length {got}, graph has {expected} vertices")]
    Dimension { expected: usize, got: usize },
    #[error("local times must be finite")]
    NonFinite,
    #[error("vertex {0} out of range")]
    Vertex(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("structural error: {0}")]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QMethod {
    LinearSolve,
    HittingFormula,
    KdClosed,
    Quadrature,
}

impl std::str::FromStr for QMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear_solve" => Ok(Self::LinearSolve),
            "hitting_formula" => Ok(Self::HittingFormula),
            "kd_closed" => Ok(Self::KdClosed),
            "quadrature" => Ok(Self::Quadrature),
            other => Err(format!("unknown Q method `{other}`")),
        }
    }
}

/// `L`, `π` and (once computed) `Q` of the frozen chain.
#[derive(Clone, Debug)]
pub struct ChainMatrices<S> {
    pub l: Matrix<S>,
    pub pi: Vec<S>,
    pub q: Option<Matrix<S>>,
    /// `log Σ_x W_x e^{N_x(T)}`.
    pub log_z_sum: f64,
    /// Set when `N` exceeds the overflow guard; `L` may then hold infinities.
    pub log_domain_only: bool,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log W_j + N_j(T)`.
pub fn log_rates(graph: &WeightedGraph, t: &[f64]) -> Vec<f64> {
    (0..graph.len())
        .map(|j| graph.weight(j).ln() + graph.neighbor_sum(j, t))
        .collect()
}

/// `π(T)` from log rates by shifted exponentials; never overflows.
pub fn stationary_from_log_rates(log_rates: &[f64]) -> Vec<f64> {
    let m = log_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_rates.iter().map(|r| (r - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn stationary(graph: &WeightedGraph, t: &[f64]) -> Vec<f64> {
    stationary_from_log_rates(&log_rates(graph, t))
}

fn check_input(graph: &WeightedGraph, t: &[f64]) -> Result<(), ChainError> {
    if graph.len() > MAX_DENSE_VERTICES {
        return Err(ChainError::TooLarge(graph.len()));
    }
    if t.len() != graph.len() {
        return Err(ChainError::Dimension {
            expected: graph.len(),
            got: t.len(),
        });
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(ChainError::NonFinite);
    }
    Ok(())
}

/// Generator with off-diagonal `L(i,j) = rates[j]` for `i ∼ j`.
pub fn generator_from_rates<S: Field>(graph: &WeightedGraph, rates: &[S]) -> Matrix<S> {
    let n = graph.len();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        let mut out = S::zero();
        for &j in graph.neighbors(i) {
            l[(i, j)] = rates[j].clone();
            out = out + rates[j].clone();
        }
        l[(i, i)] = -out;
    }
    l
}

pub fn stationary_from_rates<S: Field>(rates: &[S]) -> Vec<S> {
    let total = rates.iter().fold(S::zero(), |a, b| a + b.clone());
    rates.iter().map(|r| r.clone() / total.clone()).collect()
}

/// Chain matrices from exact rates (e.g. rationals). `log_z_sum` is a
/// floating approximation.
pub fn chain_from_rates<S: Field>(graph: &WeightedGraph, rates: &[S]) -> ChainMatrices<S> {
    let total = rates.iter().fold(S::zero(), |a, b| a + b.clone());
    ChainMatrices {
        l: generator_from_rates(graph, rates),
        pi: stationary_from_rates(rates),
        q: None,
        log_z_sum: total.approx_f64().ln(),
        log_domain_only: false,
    }
}

/// `L(T)`, `π(T)` and `log Σ W e^N` with the default overflow guard.
pub fn generator(graph: &WeightedGraph, t: &[f64]) -> Result<ChainMatrices<f64>, ChainError> {
    generator_with_guard(graph, t, DEFAULT_OVERFLOW_GUARD)
}

pub fn generator_with_guard(
    graph: &WeightedGraph,
    t: &[f64],
    guard: f64,
) -> Result<ChainMatrices<f64>, ChainError> {
    check_input(graph, t)?;
    let lr = log_rates(graph, t);
    let max_n = graph
        .neighbor_sums(t)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let rates: Vec<f64> = lr.iter().map(|r| r.exp()).collect();
    Ok(ChainMatrices {
        l: generator_from_rates(graph, &rates),
        pi: stationary_from_log_rates(&lr),
        q: None,
        log_z_sum: log_sum_exp(&lr),
        log_domain_only: max_n > guard,
    })
}

fn linear_chain(graph: &WeightedGraph, t: &[f64]) -> Result<ChainMatrices<f64>, ChainError> {
    let c = generator(graph, t)?;
    if c.log_domain_only {
        let max_n = graph
            .neighbor_sums(t)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        return Err(ChainError::Overflow {
            max_n,
            guard: DEFAULT_OVERFLOW_GUARD,
        });
    }
    Ok(c)
}

/// `E_x τ_y` for every `x`, from `L h = -1` off `y` with `h(y) = 0`.
///
/// Solved by state reduction: states are eliminated one at a time and every
/// pivot is rebuilt as the sum of the remaining exit rates, so no step
/// subtracts. This keeps full relative accuracy when rates span many orders
/// of magnitude, where a plain LU solve on `L` does not.
pub fn hitting_times_from<S: Field>(l: &Matrix<S>, y: usize) -> Result<Vec<S>, LinalgError> {
    let n = l.rows();
    if y >= n || !l.is_square() {
        return Err(LinalgError::Dimension { expected: n, got: y });
    }
    let idx: Vec<usize> = (0..n).filter(|&x| x != y).collect();
    let m = idx.len();
    // off-diagonal rates among the kept states, exit rates to y, and costs
    let mut rate = Matrix::from_fn(m, m, |r, c| if r == c { S::zero() } else { l[(idx[r], idx[c])].clone() });
    let mut exit: Vec<S> = idx.iter().map(|&x| l[(x, y)].clone()).collect();
    let mut cost = vec![S::one(); m];
    let mut pivot = vec![S::zero(); m];
    for k in 0..m {
        let d = (k + 1..m).fold(exit[k].clone(), |acc, j| acc + rate[(k, j)].clone());
        if d.is_zero() {
            return Err(LinalgError::Singular);
        }
        for i in k + 1..m {
            let f = rate[(i, k)].clone() / d.clone();
            if f.is_zero() {
                continue;
            }
            for j in k + 1..m {
                if j != i {
                    let add = f.clone() * rate[(k, j)].clone();
                    rate[(i, j)] = rate[(i, j)].clone() + add;
                }
            }
            exit[i] = exit[i].clone() + f.clone() * exit[k].clone();
            cost[i] = cost[i].clone() + f * cost[k].clone();
        }
        pivot[k] = d;
    }
    let mut h = vec![S::zero(); m];
    for k in (0..m).rev() {
        let s = (k + 1..m).fold(cost[k].clone(), |acc, j| acc + rate[(k, j)].clone() * h[j].clone());
        h[k] = s / pivot[k].clone();
    }
    let mut out = vec![S::zero(); n];
    for (r, &x) in idx.iter().enumerate() {
        out[x] = h[r].clone();
    }
    Ok(out)
}

pub fn hitting_times(graph: &WeightedGraph, t: &[f64], y: usize) -> Result<Vec<f64>, ChainError> {
    if y >= graph.len() {
        return Err(ChainError::Vertex(y));
    }
    let c = linear_chain(graph, t)?;
    Ok(hitting_times_from(&c.l, y)?)
}

/// Matrix `E[x][y] = E_x τ_y`.
pub fn hitting_matrix<S: Field>(l: &Matrix<S>) -> Result<Matrix<S>, LinalgError> {
    let n = l.rows();
    let mut e = Matrix::zeros(n, n);
    for y in 0..n {
        for (x, v) in hitting_times_from(l, y)?.into_iter().enumerate() {
            e[(x, y)] = v;
        }
    }
    Ok(e)
}

fn scale_of<S: Field>(l: &Matrix<S>) -> S {
    (0..l.rows())
        .map(|i| l[(i, i)].magnitude())
        .fold(S::zero(), |m, v| if v > m { v } else { m })
}

/// `Q = Π - M` with `(Π - L) M = I`. The generator is rescaled by its
/// largest exit rate first so the system is well conditioned.
pub fn q_linear_solve<S: Field>(l: &Matrix<S>, pi: &[S]) -> Result<Matrix<S>, LinalgError> {
    let n = l.rows();
    let c = scale_of(l);
    let c = if c.is_zero() { S::one() } else { c };
    let l_hat = l.scale(&(S::one() / c.clone()));
    let pi_m = Matrix::repeated_row(n, pi);
    let m = pi_m.sub(&l_hat).inverse()?;
    Ok(pi_m.sub(&m).scale(&(S::one() / c)))
}

/// `Q_ij = π_j Σ_r π_r (E_i τ_j - E_r τ_j)`.
pub fn q_hitting_formula<S: Field>(l: &Matrix<S>, pi: &[S]) -> Result<Matrix<S>, LinalgError> {
    let e = hitting_matrix(l)?;
    let n = l.rows();
    let mean: Vec<S> = (0..n)
        .map(|j| (0..n).fold(S::zero(), |a, r| a + pi[r].clone() * e[(r, j)].clone()))
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        pi[j].clone() * (e[(i, j)].clone() - mean[j].clone())
    }))
}

/// Closed form on `K_d`: `Q_ij = π_j/Σ` off the diagonal and
/// `Q_jj = -(1-π_j)/Σ`, `Σ = Σ_x W_x e^{N_x}`.
pub fn q_kd_closed<S: Field>(rates: &[S]) -> Matrix<S> {
    let n = rates.len();
    let total = rates.iter().fold(S::zero(), |a, b| a + b.clone());
    let pi = stationary_from_rates(rates);
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            -(S::one() - pi[j].clone()) / total.clone()
        } else {
            pi[j].clone() / total.clone()
        }
    })
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Eigenvalues of the symmetrized generator `D^{1/2} L D^{-1/2}`.
pub fn symmetrized_spectrum(l: &Matrix<f64>, pi: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let s = DMatrix::from_fn(n, n, |i, j| {
        let v = l[(i, j)] * (pi[i] / pi[j]).sqrt();
        let w = l[(j, i)] * (pi[j] / pi[i]).sqrt();
        0.5 * (v + w)
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Smallest nonzero `|λ|` of the generator.
pub fn spectral_gap(l: &Matrix<f64>, pi: &[f64]) -> f64 {
    let ev = symmetrized_spectrum(l, pi);
    ev.get(1).map(|v| -v).unwrap_or(0.0)
}

/// `-∫_0^{u_max} (e^{uL} - Π) du` by Simpson's rule on doubling segments,
/// with `u_max` chosen so that the spectral bound on the integrand tail is
/// a `1e-10` fraction of its value at zero. Oracle
/// only: much slower and less accurate than [`q_linear_solve`].
pub fn q_quadrature(l: &Matrix<f64>, pi: &[f64]) -> Result<Matrix<f64>, ChainError> {
    let n = l.rows();
    let gap = spectral_gap(l, pi);
    if !(gap > 0.0) {
        return Err(ChainError::Linalg(LinalgError::Singular));
    }
    let pmin = pi.iter().copied().fold(f64::INFINITY, f64::min);
    // |(e^{uL} - Π)_ij| <= sqrt(π_j/π_i) e^{-gap u}
    let amp = (1.0 / pmin).sqrt();
    let u_max = ((amp / QUADRATURE_TAIL).ln() / gap).max(0.0);
    let l_na = to_na(l);
    let pi_na = DMatrix::from_fn(n, n, |_, j| pi[j]);
    let lam_max = (0..n).map(|i| -l[(i, i)]).fold(0.0, f64::max);
    let m = 64usize;

    let mut acc = DMatrix::<f64>::zeros(n, n);
    let simpson = |a: f64, b: f64, acc: &mut DMatrix<f64>| {
        let h = (b - a) / m as f64;
        let step = (&l_na * h).exp();
        let mut p = (&l_na * a).exp();
        for k in 0..=m {
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            *acc += (&p - &pi_na) * (w * h / 3.0);
            p = &p * &step;
        }
    };
    let mut a = 0.0;
    let mut b = (1.0 / lam_max).min(u_max.max(1e-300));
    loop {
        simpson(a, b, &mut acc);
        if b >= u_max {
            break;
        }
        a = b;
        b = (2.0 * b).min(u_max);
    }
    Ok(Matrix::from_fn(n, n, |i, j| -acc[(i, j)]))
}

pub fn q_matrix(graph: &WeightedGraph, t: &[f64], method: QMethod) -> Result<Matrix<f64>, ChainError> {
    let c = linear_chain(graph, t)?;
    Ok(match method {
        QMethod::LinearSolve => q_linear_solve(&c.l, &c.pi)?,
        QMethod::HittingFormula => q_hitting_formula(&c.l, &c.pi)?,
        QMethod::KdClosed => {
            graph.require_leafless_complete()?;
            let rates: Vec<f64> = log_rates(graph, t).iter().map(|r| r.exp()).collect();
            q_kd_closed(&rates)
        }
        QMethod::Quadrature => q_quadrature(&c.l, &c.pi)?,
    })
}

/// L, π and Q (by linear solve) in one go.
pub fn chain_matrices(graph: &WeightedGraph, t: &[f64]) -> Result<ChainMatrices<f64>, ChainError> {
    let mut c = linear_chain(graph, t)?;
    c.q = Some(q_linear_solve(&c.l, &c.pi)?);
    Ok(c)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct PoissonResiduals {
    pub lq: f64,
    pub ql: f64,
    pub pi_q: f64,
    pub q_pi: f64,
    pub q_one: f64,
}

impl PoissonResiduals {
    pub fn max(&self) -> f64 {
        [self.lq, self.ql, self.pi_q, self.q_pi, self.q_one]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// ∞-norm residuals of `LQ = QL = I - Π`, `ΠQ = QΠ = 0`, `Q1 = 0`.
pub fn poisson_residuals<S: Field>(l: &Matrix<S>, pi: &[S], q: &Matrix<S>) -> PoissonResiduals {
    let n = l.rows();
    let pi_m = Matrix::repeated_row(n, pi);
    let target = Matrix::identity(n).sub(&pi_m);
    let ones = vec![S::one(); n];
    let q_one = q.matvec(&ones).iter().fold(0.0, |m: f64, v| m.max(v.magnitude().approx_f64()));
    PoissonResiduals {
        lq: l.matmul(q).sub(&target).inf_norm().approx_f64(),
        ql: q.matmul(l).sub(&target).inf_norm().approx_f64(),
        pi_q: pi_m.matmul(q).inf_norm().approx_f64(),
        q_pi: q.matmul(&pi_m).inf_norm().approx_f64(),
        q_one,
    }
}

/// `∂L/∂T_k`: rates `r_q` with `q ∼ k` get factor 1, others 0.
pub fn generator_derivative<S: Field>(graph: &WeightedGraph, rates: &[S], k: usize) -> Matrix<S> {
    let d_rates: Vec<S> = (0..graph.len())
        .map(|q| {
            if graph.is_adjacent(q, k) {
                rates[q].clone()
            } else {
                S::zero()
            }
        })
        .collect();
    generator_from_rates(graph, &d_rates)
}

/// `∂Q/∂T_k = -Q (∂_k L) Q - Π̃_k Q` with `Π̃_k(u, v) = π_v 1{v ∼ k}`.
pub fn q_derivative_from<S: Field>(
    graph: &WeightedGraph,
    rates: &[S],
    pi: &[S],
    q: &Matrix<S>,
    k: usize,
) -> Matrix<S> {
    let n = graph.len();
    let dl = generator_derivative(graph, rates, k);
    let row: Vec<S> = (0..n)
        .map(|v| {
            if graph.is_adjacent(v, k) {
                pi[v].clone()
            } else {
                S::zero()
            }
        })
        .collect();
    let pi_tilde = Matrix::repeated_row(n, &row);
    let first = q.matmul(&dl).matmul(q);
    Matrix::zeros(n, n).sub(&first).sub(&pi_tilde.matmul(q))
}

pub fn q_derivative(graph: &WeightedGraph, t: &[f64], k: usize) -> Result<Matrix<f64>, ChainError> {
    if k >= graph.len() {
        return Err(ChainError::Vertex(k));
    }
    let c = chain_matrices(graph, t)?;
    let rates: Vec<f64> = log_rates(graph, t).iter().map(|r| r.exp()).collect();
    Ok(q_derivative_from(graph, &rates, &c.pi, c.q.as_ref().expect("q"), k))
}

/// `g_f(x) = Σ_{p∼x} r_p ([Q∇f]_p - [Q∇f]_x)²`.
pub fn g_f_from<S: Field>(graph: &WeightedGraph, rates: &[S], x: usize, q_grad_f: &[S]) -> S {
    graph.neighbors(x).iter().fold(S::zero(), |acc, &p| {
        let d = q_grad_f[p].clone() - q_grad_f[x].clone();
        acc + rates[p].clone() * d.clone() * d
    })
}

pub fn g_f(graph: &WeightedGraph, t: &[f64], x: usize, q_grad_f: &[f64]) -> f64 {
    let rates: Vec<f64> = log_rates(graph, t).iter().map(|r| r.exp()).collect();
    g_f_from(graph, &rates, x, q_grad_f)
}

/// The chain rescaled by `Σ = Σ W e^N`: `L̂ = L/Σ` (off-diagonal entries are
/// `π_j`) and `Q̂ = ΣQ`. Usable at any magnitude of `T`.
#[derive(Clone, Debug)]
pub struct ScaledChain {
    pub log_scale: f64,
    pub pi: Vec<f64>,
    pub l_hat: Matrix<f64>,
    pub q_hat: Matrix<f64>,
}

pub fn scaled_chain(graph: &WeightedGraph, log_rates: &[f64]) -> Result<ScaledChain, ChainError> {
    let log_scale = log_sum_exp(log_rates);
    let pi = stationary_from_log_rates(log_rates);
    let l_hat = generator_from_rates(graph, &pi);
    let pi_m = Matrix::repeated_row(graph.len(), &pi);
    let q_hat = pi_m.sub(&pi_m.sub(&l_hat).inverse()?);
    Ok(ScaledChain {
        log_scale,
        pi,
        l_hat,
        q_hat,
    })
}

/// Ratios of the complete-like bound quantities to their bound expressions.
/// Their supremum over admissible `T` is the constant `C`.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BoundRatios {
    pub hit_core: f64,
    pub hit_leaf_from_core: f64,
    pub hit_leaf_from_leaf: f64,
    pub q_core: f64,
    pub q_leaf_column: f64,
    pub q_all: f64,
    pub diff_core: f64,
    pub diff_leaf: f64,
}

impl BoundRatios {
    pub fn max(&self) -> f64 {
        [
            self.hit_core,
            self.hit_leaf_from_core,
            self.hit_leaf_from_leaf,
            self.q_core,
            self.q_leaf_column,
            self.q_all,
            self.diff_core,
            self.diff_leaf,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn componentwise_max(&self, o: &Self) -> Self {
        Self {
            hit_core: self.hit_core.max(o.hit_core),
            hit_leaf_from_core: self.hit_leaf_from_core.max(o.hit_leaf_from_core),
            hit_leaf_from_leaf: self.hit_leaf_from_leaf.max(o.hit_leaf_from_leaf),
            q_core: self.q_core.max(o.q_core),
            q_leaf_column: self.q_leaf_column.max(o.q_leaf_column),
            q_all: self.q_all.max(o.q_all),
            diff_core: self.diff_core.max(o.diff_core),
            diff_leaf: self.diff_leaf.max(o.diff_leaf),
        }
    }
}

/// The admissibility condition `W_j e^{T_{n(j)}} <= 2 W_{n(j)} e^{N_{n(j)}}`.
pub fn bound_hypothesis_holds(graph: &WeightedGraph, t: &[f64]) -> bool {
    let lr = log_rates(graph, t);
    graph.leaves().all(|j| {
        let a = graph.anchor(j).expect("leaf has anchor");
        lr[j] <= 2f64.ln() + lr[a]
    })
}

/// Returns `None` when `T` violates the bound hypothesis.
pub fn complete_like_bound_ratios(
    graph: &WeightedGraph,
    t: &[f64],
) -> Result<Option<BoundRatios>, ChainError> {
    graph.require_complete_like()?;
    if !bound_hypothesis_holds(graph, t) {
        return Ok(None);
    }
    let c = chain_matrices(graph, t)?;
    let q = c.q.as_ref().expect("q");
    let e = hitting_matrix(&c.l)?;
    let rate: Vec<f64> = log_rates(graph, t).iter().map(|r| r.exp()).collect();
    let total: f64 = c.log_z_sum.exp();
    let core: Vec<usize> = (0..graph.core_size()).collect();
    let leaves: Vec<usize> = graph.leaves().collect();
    let n = graph.len();
    let mut r = BoundRatios {
        hit_core: 0.0,
        hit_leaf_from_core: 0.0,
        hit_leaf_from_leaf: 0.0,
        q_core: 0.0,
        q_leaf_column: 0.0,
        q_all: 0.0,
        diff_core: 0.0,
        diff_leaf: 0.0,
    };
    let leaf_bound = |y: usize| {
        let a = graph.anchor(y).expect("leaf");
        total / (rate[y] * rate[a])
    };
    for &x in &core {
        for &i in &core {
            r.hit_core = r.hit_core.max(e[(i, x)] * rate[x]);
        }
    }
    for &y in &leaves {
        let b = leaf_bound(y);
        for &i in &core {
            r.hit_leaf_from_core = r.hit_leaf_from_core.max(e[(i, y)] / b);
        }
        for &j in &leaves {
            let aj = graph.anchor(j).expect("leaf");
            let bound = 1.0 / rate[aj] + b;
            r.hit_leaf_from_leaf = r.hit_leaf_from_leaf.max(e[(j, y)] / bound);
        }
        let a = graph.anchor(y).expect("leaf");
        for &x in &core {
            r.q_leaf_column = r.q_leaf_column.max(q[(x, y)].abs() * rate[a]);
        }
    }
    for &x in &core {
        for &y in &core {
            r.q_core = r.q_core.max(q[(x, y)].abs() * total);
        }
    }
    let min_core = core.iter().map(|&i| rate[i]).fold(f64::INFINITY, f64::min);
    for x in 0..n {
        for y in 0..n {
            r.q_all = r.q_all.max(q[(x, y)].abs() * min_core);
        }
    }
    for &x in &core {
        for &y in &core {
            for j in 0..n {
                r.diff_core = r.diff_core.max((q[(x, j)] - q[(y, j)]).abs() * total);
            }
        }
    }
    for &x in &leaves {
        let a = graph.anchor(x).expect("leaf");
        for j in 0..n {
            r.diff_leaf = r.diff_leaf.max((q[(x, j)] - q[(a, j)]).abs() * rate[a]);
        }
    }
    Ok(Some(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_complete, build_complete_like};
    use num_rational::BigRational;

    #[test]
    fn k3_unit_generator() {
        let g = build_complete(3, &[1.0; 3]).unwrap();
        let c = generator(&g, &[0.0; 3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { -2.0 } else { 1.0 };
                assert_eq!(c.l[(i, j)], want);
            }
        }
    }

    #[test]
    fn k4_diagonal_closed_form() {
        let g = build_complete(4, &[1.0; 4]).unwrap();
        let q = q_matrix(&g, &[0.0; 4], QMethod::LinearSolve).unwrap();
        for j in 0..4 {
            assert!((q[(j, j)] + 3.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn huge_local_time_stationary_is_finite() {
        let g = build_complete(3, &[1.0; 3]).unwrap();
        let c = generator(&g, &[0.0, 0.0, 1000.0]).unwrap();
        assert!(c.log_domain_only);
        assert!(c.pi.iter().all(|p| p.is_finite()));
        // N = (1000, 1000, 0): shares 1/2, 1/2, e^{-1000}/2 ≈ 0
        assert!((c.pi[0] - 0.5).abs() < 1e-15 && c.pi[2] < 1e-300);
        assert!(matches!(
            q_matrix(&g, &[0.0, 0.0, 1000.0], QMethod::LinearSolve),
            Err(ChainError::Overflow { .. })
        ));
    }

    #[test]
    fn exact_q_in_rationals() {
        let g = build_complete_like(3, &[1.0; 3], &[(0, 1.0)]).unwrap();
        let rates: Vec<BigRational> = [3, 1, 2, 5]
            .iter()
            .map(|&k| BigRational::from_integer(k.into()))
            .collect();
        let c = chain_from_rates(&g, &rates);
        let q = q_linear_solve(&c.l, &c.pi).unwrap();
        let res = poisson_residuals(&c.l, &c.pi, &q);
        assert_eq!(res.max(), 0.0);
        assert_eq!(q, q_hitting_formula(&c.l, &c.pi).unwrap());
    }

    #[test]
    fn scaled_chain_matches_plain() {
        let g = build_complete_like(4, &[1.0, 2.0, 1.5, 1.0], &[(1, 0.7)]).unwrap();
        let t = [0.3, 1.1, 0.2, 0.9, 0.4];
        let c = chain_matrices(&g, &t).unwrap();
        let s = scaled_chain(&g, &log_rates(&g, &t)).unwrap();
        let q = c.q.unwrap();
        let scale = (-s.log_scale).exp();
        for i in 0..5 {
            for j in 0..5 {
                assert!((s.q_hat[(i, j)] * scale - q[(i, j)]).abs() < 1e-14);
            }
        }
    }
}
