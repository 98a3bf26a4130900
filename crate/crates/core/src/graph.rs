//! Graph families: complete `K_d`, complete-like `K_d ∪ ∂K_d`, and complete
//! d-partite graphs with leaves.
//!
//! Core vertices are always `0..core_size`; leaves follow. Graphs are
//! immutable once built. [`glue_leaves`] returns a new graph.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid order {0}: need at least 2 core vertices")]
    InvalidOrder(usize),
    #[error("weight {value} at vertex {vertex} must be positive and finite")]
    InvalidWeight { vertex: usize, value: f64 },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("leaf anchor {anchor} is not a core vertex (core size {core})")]
    InvalidAnchor { anchor: usize, core: usize },
    #[error("part {0} is empty")]
    EmptyPart(usize),
    #[error("edge ({0}, {1}) is invalid")]
    InvalidEdge(usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("unknown graph family `{0}`")]
    UnknownFamily(String),
    #[error("graph spec is missing `{0}`")]
    MissingField(&'static str),
    #[error("operation requires {required}, graph is {actual}")]
    FamilyMismatch { required: &'static str, actual: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `K_d` with no leaves.
    Complete,
    /// `K_d` plus degree-one leaves.
    CompleteLike,
    /// Complete d-partite core, possibly with leaves.
    DPartite,
    /// Arbitrary connected graph; simulation only.
    General,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Complete => "complete",
            Family::CompleteLike => "complete_like",
            Family::DPartite => "d_partite",
            Family::General => "general",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    family: Family,
    adjacency: Vec<Vec<usize>>,
    adjacent: Vec<Vec<bool>>,
    weights: Vec<f64>,
    core_size: usize,
    leaf_anchor: Vec<Option<usize>>,
    partition: Option<Vec<Vec<usize>>>,
    warnings: Vec<String>,
}

fn check_weights(weights: &[f64], offset: usize) -> Result<(), GraphError> {
    for (i, &w) in weights.iter().enumerate() {
        if !(w > 0.0 && w.is_finite()) {
            return Err(GraphError::InvalidWeight {
                vertex: i + offset,
                value: w,
            });
        }
    }
    Ok(())
}

impl WeightedGraph {
    fn assemble(
        family: Family,
        n: usize,
        edges: &[(usize, usize)],
        weights: Vec<f64>,
        core_size: usize,
        leaf_anchor: Vec<Option<usize>>,
        partition: Option<Vec<Vec<usize>>>,
    ) -> Result<Self, GraphError> {
        let mut adjacent = vec![vec![false; n]; n];
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(GraphError::InvalidEdge(a, b));
            }
            adjacent[a][b] = true;
            adjacent[b][a] = true;
        }
        let adjacency = adjacent
            .iter()
            .map(|row| (0..n).filter(|&j| row[j]).collect())
            .collect();
        let g = Self {
            family,
            adjacency,
            adjacent,
            weights,
            core_size,
            leaf_anchor,
            partition,
            warnings: Vec::new(),
        };
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    /// Arbitrary connected graph with vertex weights. Analysis routines that
    /// need a supported family reject these.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], weights: Vec<f64>) -> Result<Self, GraphError> {
        if weights.len() != n {
            return Err(GraphError::WeightCount {
                expected: n,
                got: weights.len(),
            });
        }
        check_weights(&weights, 0)?;
        Self::assemble(Family::General, n, edges, weights, n, vec![None; n], None)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Same structure with new vertex weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self, GraphError> {
        if weights.len() != self.len() {
            return Err(GraphError::WeightCount {
                expected: self.len(),
                got: weights.len(),
            });
        }
        check_weights(&weights, 0)?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacent[i][j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Number of core (non-leaf) vertices; they are indexed `0..core_size`.
    pub fn core_size(&self) -> usize {
        self.core_size
    }

    pub fn is_core(&self, i: usize) -> bool {
        i < self.core_size
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.core_size..self.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.len() - self.core_size
    }

    /// `n(j)`: the unique neighbor of leaf `j`.
    pub fn anchor(&self, j: usize) -> Option<usize> {
        self.leaf_anchor[j]
    }

    /// `ℓ(i)`: the leaf of core vertex `i`, if it has exactly one.
    pub fn leaf_of(&self, i: usize) -> Option<usize> {
        let mut it = self.leaves().filter(|&j| self.leaf_anchor[j] == Some(i));
        match (it.next(), it.next()) {
            (Some(j), None) => Some(j),
            _ => None,
        }
    }

    pub fn leaves_of(&self, i: usize) -> Vec<usize> {
        self.leaves()
            .filter(|&j| self.leaf_anchor[j] == Some(i))
            .collect()
    }

    pub fn partition(&self) -> Option<&[Vec<usize>]> {
        self.partition.as_deref()
    }

    /// Part index of a core vertex of a d-partite graph.
    pub fn part_of(&self, i: usize) -> Option<usize> {
        self.partition
            .as_ref()?
            .iter()
            .position(|p| p.contains(&i))
    }

    /// The `d` of the family: core size for complete(-like) graphs, number
    /// of parts for d-partite graphs.
    pub fn order(&self) -> usize {
        match &self.partition {
            Some(p) => p.len(),
            None => self.core_size,
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// True for `K_d` or `K_d ∪ ∂K_d` (complete core).
    pub fn is_complete_like(&self) -> bool {
        matches!(self.family, Family::Complete | Family::CompleteLike)
    }

    pub fn is_leafless_complete(&self) -> bool {
        self.is_complete_like() && self.leaf_count() == 0
    }

    /// Supported families with `d ≥ 3`, as required by the limit theorems.
    pub fn require_theorem_grade(&self) -> Result<(), GraphError> {
        if self.family == Family::General {
            return Err(GraphError::FamilyMismatch {
                required: "complete, complete-like or d-partite graph",
                actual: self.family.to_string(),
            });
        }
        if self.order() < 3 {
            return Err(GraphError::FamilyMismatch {
                required: "order d >= 3",
                actual: format!("{} with d = {}", self.family, self.order()),
            });
        }
        Ok(())
    }

    pub fn require_complete_like(&self) -> Result<(), GraphError> {
        if self.is_complete_like() {
            Ok(())
        } else {
            Err(GraphError::FamilyMismatch {
                required: "complete or complete-like graph",
                actual: self.family.to_string(),
            })
        }
    }

    pub fn require_leafless_complete(&self) -> Result<(), GraphError> {
        if self.is_leafless_complete() {
            Ok(())
        } else {
            Err(GraphError::FamilyMismatch {
                required: "complete graph without leaves",
                actual: self.family.to_string(),
            })
        }
    }

    /// `N_i(T) = Σ_{k∼i} T_k`.
    pub fn neighbor_sum(&self, i: usize, t: &[f64]) -> f64 {
        self.adjacency[i].iter().map(|&k| t[k]).sum()
    }

    pub fn neighbor_sums(&self, t: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.neighbor_sum(i, t)).collect()
    }

    fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Check every structural invariant and report each one.
    pub fn validate(&self) -> InvariantReport {
        let n = self.len();
        let mut checks = Vec::new();
        let symmetric = (0..n).all(|i| (0..n).all(|j| self.adjacent[i][j] == self.adjacent[j][i]));
        let irreflexive = (0..n).all(|i| !self.adjacent[i][i]);
        checks.push(Check::new("symmetric adjacency", symmetric, ""));
        checks.push(Check::new("irreflexive adjacency", irreflexive, ""));
        checks.push(Check::new("connected", self.is_connected(), ""));
        let bad_weight = self
            .weights
            .iter()
            .position(|w| !(*w > 0.0 && w.is_finite()));
        checks.push(Check::new(
            "positive finite weights",
            bad_weight.is_none(),
            &bad_weight.map(|v| format!("vertex {v}")).unwrap_or_default(),
        ));
        let leaf_ok = self.leaves().all(|j| {
            self.degree(j) == 1
                && self.leaf_anchor[j] == Some(self.adjacency[j][0])
                && self.is_core(self.adjacency[j][0])
        });
        checks.push(Check::new("leaves have one core neighbor", leaf_ok, ""));
        let shared: Vec<usize> = (0..self.core_size)
            .filter(|&i| self.leaves_of(i).len() > 1)
            .collect();
        checks.push(Check::new(
            "at most one leaf per core vertex",
            shared.is_empty(),
            &if shared.is_empty() {
                String::new()
            } else {
                format!("anchors with several leaves: {shared:?} (run glue_leaves)")
            },
        ));
        match (&self.family, &self.partition) {
            (Family::DPartite, Some(parts)) => {
                let mut owner = vec![usize::MAX; self.core_size];
                let mut cover = true;
                for (p, part) in parts.iter().enumerate() {
                    for &v in part {
                        if v >= self.core_size || owner[v] != usize::MAX {
                            cover = false;
                        } else {
                            owner[v] = p;
                        }
                    }
                }
                cover &= owner.iter().all(|&o| o != usize::MAX);
                let structure = cover
                    && (0..self.core_size).all(|i| {
                        (0..self.core_size)
                            .all(|j| i == j || self.adjacent[i][j] == (owner[i] != owner[j]))
                    });
                checks.push(Check::new("partition covers core", cover, ""));
                checks.push(Check::new("complete multipartite structure", structure, ""));
            }
            (Family::Complete | Family::CompleteLike, _) => {
                let complete = (0..self.core_size)
                    .all(|i| (0..self.core_size).all(|j| i == j || self.adjacent[i][j]));
                checks.push(Check::new("core is complete", complete, ""));
            }
            _ => {}
        }
        InvariantReport {
            family: self.family.to_string(),
            vertices: n,
            edges: self.edge_count(),
            core_size: self.core_size,
            leaves: self.leaf_count(),
            warnings: self.warnings.clone(),
            checks,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, ok: bool, detail: &str) -> Self {
        Self {
            name: name.to_string(),
            ok,
            detail: detail.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub family: String,
    pub vertices: usize,
    pub edges: usize,
    pub core_size: usize,
    pub leaves: usize,
    pub warnings: Vec<String>,
    pub checks: Vec<Check>,
}

impl InvariantReport {
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

impl std::fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "family={} vertices={} edges={} core={} leaves={}",
            self.family, self.vertices, self.edges, self.core_size, self.leaves
        )?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        for c in &self.checks {
            let tag = if c.ok { "ok  " } else { "FAIL" };
            if c.detail.is_empty() {
                writeln!(f, "[{tag}] {}", c.name)?;
            } else {
                writeln!(f, "[{tag}] {} ({})", c.name, c.detail)?;
            }
        }
        Ok(())
    }
}

fn leaf_edges(
    core_size: usize,
    leaves: &[(usize, f64)],
    weights: &mut Vec<f64>,
    edges: &mut Vec<(usize, usize)>,
    anchors: &mut Vec<Option<usize>>,
) -> Result<(), GraphError> {
    for (k, &(anchor, w)) in leaves.iter().enumerate() {
        if anchor >= core_size {
            return Err(GraphError::InvalidAnchor {
                anchor,
                core: core_size,
            });
        }
        check_weights(&[w], core_size + k)?;
        let j = core_size + k;
        weights.push(w);
        edges.push((anchor, j));
        anchors.push(Some(anchor));
    }
    Ok(())
}

/// Complete graph `K_d`.
pub fn build_complete(d: usize, weights: &[f64]) -> Result<WeightedGraph, GraphError> {
    let mut g = build_complete_like(d, weights, &[])?;
    g.family = Family::Complete;
    Ok(g)
}

/// `K_d` with the given leaves, each `(anchor, weight)`. Leaves sharing an
/// anchor are kept separate; see [`glue_leaves`].
pub fn build_complete_like(
    d: usize,
    core_weights: &[f64],
    leaves: &[(usize, f64)],
) -> Result<WeightedGraph, GraphError> {
    if d < 2 {
        return Err(GraphError::InvalidOrder(d));
    }
    if core_weights.len() != d {
        return Err(GraphError::WeightCount {
            expected: d,
            got: core_weights.len(),
        });
    }
    check_weights(core_weights, 0)?;
    let mut edges = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            edges.push((i, j));
        }
    }
    let mut weights = core_weights.to_vec();
    let mut anchors = vec![None; d];
    leaf_edges(d, leaves, &mut weights, &mut edges, &mut anchors)?;
    let n = weights.len();
    let family = if leaves.is_empty() {
        Family::Complete
    } else {
        Family::CompleteLike
    };
    let mut g = WeightedGraph::assemble(family, n, &edges, weights, d, anchors, None)?;
    if d < 3 {
        g.warnings
            .push(format!("core order d = {d} < 3: limit theorems do not apply"));
    }
    Ok(g)
}

/// Complete d-partite graph with parts of the given sizes (vertices are
/// numbered part by part) and optional leaves.
pub fn build_d_partite(
    part_sizes: &[usize],
    core_weights: &[f64],
    leaves: &[(usize, f64)],
) -> Result<WeightedGraph, GraphError> {
    if part_sizes.len() < 2 {
        return Err(GraphError::InvalidOrder(part_sizes.len()));
    }
    if let Some(p) = part_sizes.iter().position(|&s| s == 0) {
        return Err(GraphError::EmptyPart(p));
    }
    let core: usize = part_sizes.iter().sum();
    if core_weights.len() != core {
        return Err(GraphError::WeightCount {
            expected: core,
            got: core_weights.len(),
        });
    }
    check_weights(core_weights, 0)?;
    let mut parts = Vec::with_capacity(part_sizes.len());
    let mut next = 0;
    for &s in part_sizes {
        parts.push((next..next + s).collect::<Vec<_>>());
        next += s;
    }
    let mut edges = Vec::new();
    for (p, a) in parts.iter().enumerate() {
        for b in &parts[p + 1..] {
            for &i in a {
                for &j in b {
                    edges.push((i, j));
                }
            }
        }
    }
    let mut weights = core_weights.to_vec();
    let mut anchors = vec![None; core];
    leaf_edges(core, leaves, &mut weights, &mut edges, &mut anchors)?;
    let n = weights.len();
    let mut g = WeightedGraph::assemble(Family::DPartite, n, &edges, weights, core, anchors, Some(parts))?;
    if part_sizes.len() < 3 {
        g.warnings.push(format!(
            "number of parts d = {} < 3: limit theorems do not apply",
            part_sizes.len()
        ));
    }
    Ok(g)
}

/// Mapping from pre-glue vertex indices to post-glue indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexRemap {
    pub old_to_new: Vec<usize>,
}

impl IndexRemap {
    /// Sum a per-vertex quantity of the old graph onto the new indexing.
    pub fn push_forward(&self, values: &[f64], new_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; new_len];
        for (old, &v) in values.iter().enumerate() {
            out[self.old_to_new[old]] += v;
        }
        out
    }
}

/// Merge leaves that share an anchor into one leaf whose weight is the sum.
/// Idempotent; the identity on graphs where every anchor has one leaf.
pub fn glue_leaves(g: &WeightedGraph) -> (WeightedGraph, IndexRemap) {
    let core = g.core_size;
    let mut old_to_new: Vec<usize> = (0..g.len()).collect();
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for j in g.leaves() {
        let anchor = g.leaf_anchor[j].expect("leaf has anchor");
        match merged.iter().position(|&(a, _)| a == anchor) {
            Some(k) => {
                merged[k].1 += g.weights[j];
                old_to_new[j] = core + k;
            }
            None => {
                old_to_new[j] = core + merged.len();
                merged.push((anchor, g.weights[j]));
            }
        }
    }
    let mut weights = g.weights[..core].to_vec();
    let mut anchors = vec![None; core];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 0..core {
        for &j in &g.adjacency[i] {
            if j > i && j < core {
                edges.push((i, j));
            }
        }
    }
    for (k, &(a, w)) in merged.iter().enumerate() {
        weights.push(w);
        anchors.push(Some(a));
        edges.push((a, core + k));
    }
    let n = weights.len();
    let mut out = WeightedGraph::assemble(
        g.family.clone(),
        n,
        &edges,
        weights,
        core,
        anchors,
        g.partition.clone(),
    )
    .expect("gluing preserves connectivity");
    out.warnings = g.warnings.clone();
    (out, IndexRemap { old_to_new })
}

/// Serializable graph description used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<usize>>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub leaves: Vec<(usize, f64)>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<WeightedGraph, GraphError> {
        let g = match self.family.as_str() {
            "complete" => {
                let d = self.d.unwrap_or(self.weights.len());
                if !self.leaves.is_empty() {
                    build_complete_like(d, &self.weights, &self.leaves)?
                } else {
                    build_complete(d, &self.weights)?
                }
            }
            "complete_like" => {
                let d = self.d.unwrap_or(self.weights.len());
                build_complete_like(d, &self.weights, &self.leaves)?
            }
            "d_partite" => {
                let parts = self.parts.as_ref().ok_or(GraphError::MissingField("parts"))?;
                build_d_partite(parts, &self.weights, &self.leaves)?
            }
            other => return Err(GraphError::UnknownFamily(other.to_string())),
        };
        Ok(glue_leaves(&g).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle() {
        let g = build_complete(3, &[1.0; 3]).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.core_size(), 3);
        assert_eq!(g.leaf_count(), 0);
        assert!(g.validate().all_ok());
    }

    #[test]
    fn k5_degrees() {
        let g = build_complete(5, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(g.edge_count(), 10);
        assert!((0..5).all(|i| g.degree(i) == 4));
    }

    #[test]
    fn order_one_rejected() {
        assert_eq!(build_complete(1, &[1.0]).unwrap_err(), GraphError::InvalidOrder(1));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        assert!(matches!(
            build_complete(3, &[1.0, 0.0, 1.0]),
            Err(GraphError::InvalidWeight { vertex: 1, .. })
        ));
        assert!(matches!(
            build_complete_like(3, &[1.0; 3], &[(0, -1.0)]),
            Err(GraphError::InvalidWeight { vertex: 3, .. })
        ));
    }

    #[test]
    fn complete_like_single_leaf() {
        let g = build_complete_like(4, &[1.0; 4], &[(0, 1.0)]).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.degree(4), 1);
        assert_eq!(g.anchor(4), Some(0));
        assert_eq!(g.leaf_of(0), Some(4));
        assert!(g.validate().all_ok());
    }

    #[test]
    fn complete_like_without_leaves_is_complete() {
        let a = build_complete_like(4, &[1.0; 4], &[]).unwrap();
        let b = build_complete(4, &[1.0; 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn anchor_out_of_range() {
        assert!(matches!(
            build_complete_like(3, &[1.0; 3], &[(3, 1.0)]),
            Err(GraphError::InvalidAnchor { anchor: 3, .. })
        ));
    }

    #[test]
    fn glue_merges_shared_anchor() {
        let g = build_complete_like(3, &[1.0; 3], &[(0, 2.0), (0, 3.0)]).unwrap();
        assert!(!g.validate().all_ok());
        let (h, remap) = glue_leaves(&g);
        assert_eq!(h.len(), 4);
        assert_eq!(h.anchor(3), Some(0));
        assert_eq!(h.weight(3), 5.0);
        assert_eq!(remap.old_to_new, vec![0, 1, 2, 3, 3]);
        assert!(h.validate().all_ok());
        assert_eq!(glue_leaves(&h).0, h);
    }

    #[test]
    fn glue_identity_cases() {
        let k4 = build_complete(4, &[1.0; 4]).unwrap();
        assert_eq!(glue_leaves(&k4).0, k4);
        let g = build_complete_like(4, &[1.0; 4], &[(0, 1.0), (2, 1.5)]).unwrap();
        assert_eq!(glue_leaves(&g).0, g);
    }

    #[test]
    fn d_partite_singletons_match_complete() {
        let g = build_d_partite(&[1, 1, 1], &[1.0; 3], &[]).unwrap();
        let k3 = build_complete(3, &[1.0; 3]).unwrap();
        for i in 0..3 {
            assert_eq!(g.neighbors(i), k3.neighbors(i));
        }
    }

    #[test]
    fn bipartite_edge_count() {
        let g = build_d_partite(&[2, 2], &[1.0; 4], &[]).unwrap();
        assert_eq!(g.edge_count(), 4);
        assert!(!g.is_adjacent(0, 1));
        assert!(g.is_adjacent(0, 2));
        assert!(!g.warnings().is_empty());
    }

    #[test]
    fn d_partite_with_leaf() {
        let g = build_d_partite(&[2, 1, 1], &[1.0; 4], &[(0, 1.0)]).unwrap();
        assert_eq!(g.part_of(0), Some(0));
        assert_eq!(g.anchor(4), Some(0));
        let report = g.validate();
        assert!(report.all_ok(), "{report}");
    }

    #[test]
    fn empty_part() {
        assert_eq!(
            build_d_partite(&[2, 0, 1], &[1.0; 3], &[]).unwrap_err(),
            GraphError::EmptyPart(1)
        );
    }

    #[test]
    fn spec_builds_glued() {
        let spec = GraphSpec {
            family: "complete_like".into(),
            d: Some(3),
            parts: None,
            weights: vec![1.0; 3],
            leaves: vec![(0, 2.0), (0, 3.0)],
        };
        let g = spec.build().unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.weight(3), 5.0);
    }

    #[test]
    fn general_graph_gated() {
        let g = WeightedGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], vec![1.0; 4]).unwrap();
        assert!(g.require_theorem_grade().is_err());
        assert!(WeightedGraph::from_edges(3, &[(0, 1)], vec![1.0; 3]).is_err());
    }
}
