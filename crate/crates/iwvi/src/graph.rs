//! Factor-graph data model: objects, predicates and an optional global
//! context node, with symmetric neighbor sets and per-node feature vectors.
//!
//! Graphs are immutable after construction and safe to share across threads.
//! The JSON wire format is documented on [`GraphJson`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node within its graph; node ids are contiguous from zero in
/// insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Object,
    Predicate,
    Global,
}

/// Vocabulary sizes for the three node kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub objects: usize,
    pub predicates: usize,
    pub global: usize,
}

impl VocabSizes {
    pub fn validate(&self) -> Result<()> {
        for v in [self.objects, self.predicates, self.global] {
            if v < 2 {
                return Err(Error::VocabTooSmall(v));
            }
        }
        Ok(())
    }

    pub fn for_kind(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Object => self.objects,
            NodeKind::Predicate => self.predicates,
            NodeKind::Global => self.global,
        }
    }
}

/// A labeled factor graph over object, predicate and global nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFactorGraph {
    kinds: Vec<NodeKind>,
    object_nodes: Vec<NodeId>,
    predicate_nodes: Vec<NodeId>,
    global_node: Option<NodeId>,
    neighbors: Vec<BTreeSet<NodeId>>,
    node_features: Vec<Vec<f64>>,
    feature_dim: usize,
    vocab: VocabSizes,
}

impl SceneFactorGraph {
    pub fn builder(feature_dim: usize, vocab: VocabSizes) -> GraphBuilder {
        GraphBuilder {
            feature_dim,
            vocab,
            kinds: Vec::new(),
            features: Vec::new(),
            edges: Vec::new(),
            global: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn object_nodes(&self) -> &[NodeId] {
        &self.object_nodes
    }

    pub fn predicate_nodes(&self) -> &[NodeId] {
        &self.predicate_nodes
    }

    pub fn global_node(&self) -> Option<NodeId> {
        self.global_node
    }

    /// Object and predicate nodes in id order; these are the nodes whose
    /// labels get inferred.
    pub fn inferred_nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .object_nodes
            .iter()
            .chain(self.predicate_nodes.iter())
            .copied()
            .collect();
        ids.sort();
        ids
    }

    pub fn kind(&self, node: NodeId) -> NodeKind {
        self.kinds[node.0]
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.0 < self.kinds.len()
    }

    pub fn neighbors(&self, node: NodeId) -> &BTreeSet<NodeId> {
        &self.neighbors[node.0]
    }

    pub fn feature(&self, node: NodeId) -> &[f64] {
        &self.node_features[node.0]
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn vocab(&self) -> VocabSizes {
        self.vocab
    }

    /// Vocabulary size of one node.
    pub fn vocab_of(&self, node: NodeId) -> usize {
        self.vocab.for_kind(self.kind(node))
    }

    /// Number of joint assignments, computed in `u128` so oversized graphs
    /// report their true state-space size instead of overflowing.
    pub fn state_space_size(&self) -> u128 {
        self.kinds
            .iter()
            .map(|&k| self.vocab.for_kind(k) as u128)
            .fold(1u128, u128::saturating_mul)
    }

    /// All undirected edges, each listed once with the smaller id first.
    pub fn undirected_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (i, ns) in self.neighbors.iter().enumerate() {
            for &n in ns {
                if i < n.0 {
                    out.push((NodeId(i), n));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            objects: self.object_nodes.iter().map(|n| n.0).collect(),
            predicates: self.predicate_nodes.iter().map(|n| n.0).collect(),
            global: self.global_node.map(|n| n.0),
            edges: self
                .undirected_edges()
                .into_iter()
                .map(|(a, b)| [a.0, b.0])
                .collect(),
            features: self.node_features.clone(),
            vocab_sizes: self.vocab,
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self> {
        let n = json.features.len();
        let mut builder = Self::builder(
            json.features.first().map_or(0, |f| f.len()),
            json.vocab_sizes,
        );
        let mut kinds = vec![None; n];
        for &i in &json.objects {
            kinds.get_mut(i).map(|k| *k = Some(NodeKind::Object));
        }
        for &i in &json.predicates {
            kinds.get_mut(i).map(|k| *k = Some(NodeKind::Predicate));
        }
        if let Some(g) = json.global {
            kinds.get_mut(g).map(|k| *k = Some(NodeKind::Global));
        }
        for (i, kind) in kinds.iter().enumerate() {
            let kind = kind.ok_or_else(|| {
                Error::InvalidGraph(format!("node {i} is not listed as object/predicate/global"))
            })?;
            let feat = json.features[i].clone();
            match kind {
                NodeKind::Object => {
                    builder.add_object(feat);
                }
                NodeKind::Predicate => {
                    builder.add_predicate(feat);
                }
                NodeKind::Global => {
                    builder.set_global(feat);
                }
            }
        }
        for e in &json.edges {
            builder.add_edge(NodeId(e[0]), NodeId(e[1]));
        }
        builder.build()
    }
}

/// JSON document shape for a graph:
///
/// ```json
/// {
///   "objects": [0, 1],
///   "predicates": [2],
///   "global": 3,
///   "edges": [[0, 2], [1, 2], [0, 3], [1, 3], [2, 3]],
///   "features": [[...d floats...], ...],
///   "vocab_sizes": { "objects": 6, "predicates": 5, "global": 4 }
/// }
/// ```
///
/// `features` is indexed by node id; `edges` lists each undirected edge once
/// (smaller id first). `global` may be null for graphs without a context
/// node. Feature round-trips are lossless (serde_json emits shortest
/// round-trippable floats).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphJson {
    pub objects: Vec<usize>,
    pub predicates: Vec<usize>,
    pub global: Option<usize>,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    pub vocab_sizes: VocabSizes,
}

pub struct GraphBuilder {
    feature_dim: usize,
    vocab: VocabSizes,
    kinds: Vec<NodeKind>,
    features: Vec<Vec<f64>>,
    edges: Vec<(NodeId, NodeId)>,
    global: Option<NodeId>,
}

impl GraphBuilder {
    pub fn add_object(&mut self, feature: Vec<f64>) -> NodeId {
        self.push(NodeKind::Object, feature)
    }

    pub fn add_predicate(&mut self, feature: Vec<f64>) -> NodeId {
        self.push(NodeKind::Predicate, feature)
    }

    pub fn set_global(&mut self, feature: Vec<f64>) -> NodeId {
        let id = self.push(NodeKind::Global, feature);
        self.global = Some(id);
        id
    }

    fn push(&mut self, kind: NodeKind, feature: Vec<f64>) -> NodeId {
        let id = NodeId(self.kinds.len());
        self.kinds.push(kind);
        self.features.push(feature);
        id
    }

    /// Record an undirected edge; endpoints are validated in `build`.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) {
        self.edges.push((a, b));
    }

    pub fn build(self) -> Result<SceneFactorGraph> {
        self.vocab.validate()?;
        let n = self.kinds.len();
        if self.kinds.iter().filter(|k| **k == NodeKind::Global).count() > 1 {
            return Err(Error::InvalidGraph("more than one global node".into()));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.len() != self.feature_dim {
                return Err(Error::DimensionMismatch {
                    node: NodeId(i),
                    expected: self.feature_dim,
                    got: f.len(),
                });
            }
        }
        let mut neighbors = vec![BTreeSet::new(); n];
        for &(a, b) in &self.edges {
            if a.0 >= n {
                return Err(Error::NodeNotFound(a));
            }
            if b.0 >= n {
                return Err(Error::NodeNotFound(b));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-edge on node {}", a.0)));
            }
            // Predicates may only touch objects and the global node.
            let ka = self.kinds[a.0];
            let kb = self.kinds[b.0];
            if ka == NodeKind::Predicate && kb == NodeKind::Predicate {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) joins two predicate nodes",
                    a.0, b.0
                )));
            }
            neighbors[a.0].insert(b);
            neighbors[b.0].insert(a);
        }
        let object_nodes = (0..n)
            .filter(|&i| self.kinds[i] == NodeKind::Object)
            .map(NodeId)
            .collect();
        let predicate_nodes = (0..n)
            .filter(|&i| self.kinds[i] == NodeKind::Predicate)
            .map(NodeId)
            .collect();
        Ok(SceneFactorGraph {
            kinds: self.kinds,
            object_nodes,
            predicate_nodes,
            global_node: self.global,
            neighbors,
            node_features: self.features,
            feature_dim: self.feature_dim,
            vocab: self.vocab,
        })
    }
}

/// A hard joint assignment: one category index per node, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

impl Assignment {
    pub fn label(&self, node: NodeId) -> usize {
        self.labels[node.0]
    }

    /// One-hot relaxation of the assignment.
    pub fn to_relaxed(&self, graph: &SceneFactorGraph) -> RelaxedAssignment {
        let labels = (0..graph.num_nodes())
            .map(|i| {
                let v = graph.vocab_of(NodeId(i));
                let mut z = vec![0.0; v];
                z[self.labels[i]] = 1.0;
                z
            })
            .collect();
        RelaxedAssignment { labels }
    }
}

/// A relaxed joint assignment: one simplex vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedAssignment {
    pub labels: Vec<Vec<f64>>,
}

impl RelaxedAssignment {
    pub fn label(&self, node: NodeId) -> &[f64] {
        &self.labels[node.0]
    }

    /// Checks that every vector is non-negative and sums to one (within
    /// 1e-9) and matches its node's vocabulary size.
    pub fn validate(&self, graph: &SceneFactorGraph) -> Result<()> {
        if self.labels.len() != graph.num_nodes() {
            return Err(Error::ShapeMismatch {
                context: "relaxed assignment node count",
                expected: graph.num_nodes(),
                got: self.labels.len(),
            });
        }
        for i in 0..self.labels.len() {
            let node = NodeId(i);
            let z = &self.labels[i];
            if z.len() != graph.vocab_of(node) {
                return Err(Error::DimensionMismatch {
                    node,
                    expected: graph.vocab_of(node),
                    got: z.len(),
                });
            }
            let sum: f64 = z.iter().sum();
            if z.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSimplex {
                    reason: format!("node {i}: entries sum to {sum}"),
                });
            }
        }
        Ok(())
    }
}

/// Default cap on the number of joint assignments the enumeration routines
/// will touch.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Iterator over every joint assignment in lexicographic order (node 0 is
/// the most significant digit, labels ascending).
#[derive(Debug)]
pub struct AssignmentIter {
    radices: Vec<usize>,
    current: Option<Vec<usize>>,
}

impl Iterator for AssignmentIter {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        let current = self.current.as_mut()?;
        let item = Assignment {
            labels: current.clone(),
        };
        // mixed-radix increment, last node fastest
        let mut pos = self.radices.len();
        loop {
            if pos == 0 {
                self.current = None;
                break;
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < self.radices[pos] {
                break;
            }
            current[pos] = 0;
        }
        Some(item)
    }
}

/// Enumerate all joint assignments under [`DEFAULT_ENUMERATION_CAP`].
pub fn enumerate_assignments(graph: &SceneFactorGraph) -> Result<AssignmentIter> {
    enumerate_assignments_with_cap(graph, DEFAULT_ENUMERATION_CAP)
}

/// Enumerate all joint assignments, refusing if the state space exceeds
/// `cap`.
pub fn enumerate_assignments_with_cap(
    graph: &SceneFactorGraph,
    cap: u128,
) -> Result<AssignmentIter> {
    let size = graph.state_space_size();
    if size > cap {
        return Err(Error::StateSpaceTooLarge { size, cap });
    }
    let radices: Vec<usize> = (0..graph.num_nodes())
        .map(|i| graph.vocab_of(NodeId(i)))
        .collect();
    Ok(AssignmentIter {
        current: Some(vec![0; radices.len()]),
        radices,
    })
}

/// Allocation-free enumeration: calls `visit` with each label tuple in the
/// same lexicographic order as [`enumerate_assignments`].
pub fn for_each_assignment<F: FnMut(&[usize])>(
    graph: &SceneFactorGraph,
    cap: u128,
    mut visit: F,
) -> Result<()> {
    let size = graph.state_space_size();
    if size > cap {
        return Err(Error::StateSpaceTooLarge { size, cap });
    }
    let radices: Vec<usize> = (0..graph.num_nodes())
        .map(|i| graph.vocab_of(NodeId(i)))
        .collect();
    let mut labels = vec![0usize; radices.len()];
    loop {
        visit(&labels);
        let mut pos = radices.len();
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < radices[pos] {
                break;
            }
            labels[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_vocab() -> VocabSizes {
        VocabSizes {
            objects: 3,
            predicates: 2,
            global: 2,
        }
    }

    #[test]
    fn builder_assigns_sequential_ids_and_symmetric_neighbors() {
        let mut b = SceneFactorGraph::builder(2, small_vocab());
        let o0 = b.add_object(vec![0.0, 1.0]);
        let o1 = b.add_object(vec![1.0, 0.0]);
        let p = b.add_predicate(vec![0.5, 0.5]);
        let g = b.set_global(vec![0.0, 0.0]);
        b.add_edge(o0, p);
        b.add_edge(p, o1);
        b.add_edge(o0, g);
        let graph = b.build().unwrap();
        assert_eq!(graph.num_nodes(), 4);
        assert!(graph.neighbors(o0).contains(&p));
        assert!(graph.neighbors(p).contains(&o0));
        assert!(graph.neighbors(o1).contains(&p));
        assert_eq!(graph.vocab_of(p), 2);
        assert_eq!(graph.inferred_nodes(), vec![o0, o1, p]);
    }

    #[test]
    fn predicate_predicate_edges_rejected() {
        let mut b = SceneFactorGraph::builder(1, small_vocab());
        let p0 = b.add_predicate(vec![0.0]);
        let p1 = b.add_predicate(vec![0.0]);
        b.add_edge(p0, p1);
        assert!(b.build().is_err());
    }

    #[test]
    fn feature_dimension_checked() {
        let mut b = SceneFactorGraph::builder(3, small_vocab());
        b.add_object(vec![0.0, 1.0]);
        let err = b.build().unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn enumeration_counts() {
        // two objects, v_o = 3 each would give 9; use vocab 2 via predicates
        let mut b = SceneFactorGraph::builder(0, small_vocab());
        b.add_predicate(vec![]);
        b.add_predicate(vec![]);
        let g = b.build().unwrap();
        assert_eq!(enumerate_assignments(&g).unwrap().count(), 4);

        let mut b = SceneFactorGraph::builder(0, small_vocab());
        b.add_object(vec![]);
        b.add_predicate(vec![]);
        b.set_global(vec![]);
        let g = b.build().unwrap();
        let all: Vec<Assignment> = enumerate_assignments(&g).unwrap().collect();
        assert_eq!(all.len(), 12); // 3 * 2 * 2
        assert_eq!(all[0].labels, vec![0, 0, 0]);
        assert_eq!(all[1].labels, vec![0, 0, 1]);
        assert_eq!(all[2].labels, vec![0, 1, 0]);
        assert_eq!(all[11].labels, vec![2, 1, 1]);
    }

    #[test]
    fn empty_graph_enumerates_once() {
        let b = SceneFactorGraph::builder(0, small_vocab());
        let g = b.build().unwrap();
        let all: Vec<Assignment> = enumerate_assignments(&g).unwrap().collect();
        assert_eq!(all.len(), 1);
        assert!(all[0].labels.is_empty());
    }

    #[test]
    fn cap_exceeded_reports_size() {
        let mut b = SceneFactorGraph::builder(0, small_vocab());
        for _ in 0..30 {
            b.add_object(vec![]);
        }
        let g = b.build().unwrap();
        match enumerate_assignments(&g) {
            Err(Error::StateSpaceTooLarge { size, cap }) => {
                assert_eq!(size, 3u128.pow(30));
                assert_eq!(cap, DEFAULT_ENUMERATION_CAP);
            }
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_preserves_graph() {
        let mut b = SceneFactorGraph::builder(2, small_vocab());
        let o0 = b.add_object(vec![0.125, -3.5e-7]);
        let p = b.add_predicate(vec![1.0 / 3.0, 2.0_f64.sqrt()]);
        let g = b.set_global(vec![0.1 + 0.2, -0.0]);
        b.add_edge(o0, p);
        b.add_edge(p, g);
        let graph = b.build().unwrap();

        let text = serde_json::to_string(&graph.to_json()).unwrap();
        let parsed: GraphJson = serde_json::from_str(&text).unwrap();
        let back = SceneFactorGraph::from_json(&parsed).unwrap();
        assert_eq!(graph, back); // bitwise feature equality included
    }
}
