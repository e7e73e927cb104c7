//! Joint and per-node scoring of a graph under a potential model.
//!
//! [`GraphTables`] materializes every potential the model assigns to a given
//! graph: per-node unary score vectors and, for each directed (target,
//! neighbor) edge term, a compatibility table. The joint log score of a
//! relaxed assignment is the sum of unary inner products plus one bilinear
//! form `z_t' W z_n` per directed term, so it is multilinear in each node's
//! vector. Each object-object and object-predicate edge appears twice, once
//! from each endpoint's side, with separately parameterized maps.
//!
//! Per-node local score vectors follow the message form: the unary vector
//! plus one message per neighbor, each a vector over the target's
//! categories with the neighbor axis eliminated. The elimination acts on
//! the edge's full potential — the sum of its two directed tables when the
//! reverse direction exists — and weights neighbor categories by the
//! neighbor's own unary evidence, subtracting the neighbor's local
//! normalizer:
//!
//! ```text
//! edge[t, n]  = table[t, n] + reverse_table[n, t]          (if present)
//! message[t]  = logmeanexp_n(edge[t, n] + u_nbr[n]) - logmeanexp_n(u_nbr[n])
//! ```
//!
//! so zero tables send an exactly zero message. The global node has no
//! unary term and only one table direction; its messages reduce to the
//! plain log-mean-exp of table rows.

use crate::error::{Error, Result};
use crate::graph::{Assignment, NodeId, RelaxedAssignment, SceneFactorGraph};
use crate::math::{dot, logmeanexp, softmax};
use crate::mlp::MlpCache;
use crate::potentials::{pair_kind, PairKind, PotentialModel};

/// Per-node score logits: the per-category local log score before
/// contraction with an assignment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScoreVector {
    pub node: NodeId,
    pub logits: Vec<f64>,
}

/// One directed pairwise term: the score table a neighbor contributes to a
/// target node.
#[derive(Debug, Clone)]
pub struct DirectedTerm {
    pub target: NodeId,
    pub neighbor: NodeId,
    pub kind: PairKind,
    pub v_target: usize,
    pub v_neighbor: usize,
    /// Row-major `(v_target, v_neighbor)` table.
    pub table: Vec<f64>,
    /// Message with the neighbor axis eliminated under the neighbor's unary
    /// evidence (see module docs).
    pub message: Vec<f64>,
}

/// All potentials of one (graph, model) pair, evaluated once.
#[derive(Debug, Clone)]
pub struct GraphTables {
    /// Unary score vectors indexed by node id; empty for the global node.
    pub unary: Vec<Vec<f64>>,
    pub terms: Vec<DirectedTerm>,
    /// Indices into `terms` grouped by target node id.
    terms_by_target: Vec<Vec<usize>>,
}

/// Activation caches aligned with a [`GraphTables`]; consumed by the
/// learning backward pass.
#[derive(Debug, Clone)]
pub struct GraphTableCaches {
    pub unary: Vec<Option<MlpCache>>,
    pub terms: Vec<MlpCache>,
    /// Row-wise softmax of the eliminated edge potential
    /// `table[t, :] + reverse[:, t] + u_nbr`; the message Jacobian with
    /// respect to the forward table (and, transposed, the reverse table).
    pub term_row_softmax: Vec<Vec<f64>>,
    /// Softmax of the neighbor's unary vector per term (empty when the
    /// neighbor has no unary map); together with `term_row_softmax` this is
    /// the message Jacobian with respect to the neighbor's unary scores.
    pub term_unary_softmax: Vec<Vec<f64>>,
    /// Index of each term's reverse-direction term, when the edge has one.
    pub reverse_of: Vec<Option<usize>>,
}

impl PotentialModel {
    fn check_graph(&self, graph: &SceneFactorGraph) -> Result<()> {
        if graph.feature_dim() != self.feature_dim {
            return Err(Error::ShapeMismatch {
                context: "graph feature dimension",
                expected: self.feature_dim,
                got: graph.feature_dim(),
            });
        }
        if graph.vocab() != self.vocab {
            return Err(Error::ShapeMismatch {
                context: "vocabulary sizes",
                expected: self.vocab.objects,
                got: graph.vocab().objects,
            });
        }
        Ok(())
    }

    /// Evaluate all unary and pairwise maps on a graph.
    pub fn tables(&self, graph: &SceneFactorGraph) -> Result<GraphTables> {
        Ok(self.tables_cached(graph)?.0)
    }

    /// Like [`PotentialModel::tables`] but also returns the activation
    /// caches needed to backpropagate through every map.
    pub fn tables_cached(
        &self,
        graph: &SceneFactorGraph,
    ) -> Result<(GraphTables, GraphTableCaches)> {
        self.check_graph(graph)?;
        let n = graph.num_nodes();
        let mut unary = vec![Vec::new(); n];
        let mut unary_caches = vec![None; n];
        for i in 0..n {
            let node = NodeId(i);
            if let Some(map) = self.unary_map(graph.kind(node)) {
                let (out, cache) = map.forward_cached(graph.feature(node))?;
                unary[i] = out;
                unary_caches[i] = Some(cache);
            }
        }

        // first pass: evaluate every directed table
        let mut terms = Vec::new();
        let mut term_caches = Vec::new();
        let mut terms_by_target = vec![Vec::new(); n];
        let mut term_index = std::collections::HashMap::new();
        for i in 0..n {
            let target = NodeId(i);
            if self.unary_map(graph.kind(target)).is_none() {
                continue; // the global node is never a message target
            }
            for &neighbor in graph.neighbors(target) {
                let Some(kind) = pair_kind(graph.kind(target), graph.kind(neighbor)) else {
                    continue;
                };
                let (vt, vn) = self.pair_dims(kind);
                let mut input = Vec::with_capacity(2 * self.feature_dim);
                input.extend_from_slice(graph.feature(target));
                input.extend_from_slice(graph.feature(neighbor));
                let (table, cache) = self.pair_map(kind).forward_cached(&input)?;
                term_index.insert((target, neighbor), terms.len());
                terms_by_target[i].push(terms.len());
                terms.push(DirectedTerm {
                    target,
                    neighbor,
                    kind,
                    v_target: vt,
                    v_neighbor: vn,
                    table,
                    message: Vec::new(),
                });
                term_caches.push(cache);
            }
        }

        // second pass: eliminate each edge's full potential into messages
        let mut term_row_softmax = Vec::with_capacity(terms.len());
        let mut term_unary_softmax = Vec::with_capacity(terms.len());
        let mut reverse_of = Vec::with_capacity(terms.len());
        for ti in 0..terms.len() {
            let (target, neighbor, vt, vn) = {
                let t = &terms[ti];
                (t.target, t.neighbor, t.v_target, t.v_neighbor)
            };
            let reverse = term_index.get(&(neighbor, target)).copied();
            reverse_of.push(reverse);
            let nbr_unary = unary[neighbor.0].clone();
            let nbr_norm = if nbr_unary.is_empty() {
                0.0
            } else {
                logmeanexp(&nbr_unary)
            };
            let mut message = Vec::with_capacity(vt);
            let mut rows_softmax = Vec::with_capacity(vt * vn);
            let mut shifted = vec![0.0; vn];
            for t in 0..vt {
                for (b, s) in shifted.iter_mut().enumerate() {
                    *s = terms[ti].table[t * vn + b]
                        + reverse
                            .map(|ri| terms[ri].table[b * vt + t])
                            .unwrap_or(0.0)
                        + nbr_unary.get(b).copied().unwrap_or(0.0);
                }
                message.push(logmeanexp(&shifted) - nbr_norm);
                rows_softmax.extend(softmax(&shifted));
            }
            terms[ti].message = message;
            term_row_softmax.push(rows_softmax);
            term_unary_softmax.push(if nbr_unary.is_empty() {
                Vec::new()
            } else {
                softmax(&nbr_unary)
            });
        }
        Ok((
            GraphTables {
                unary,
                terms,
                terms_by_target,
            },
            GraphTableCaches {
                unary: unary_caches,
                terms: term_caches,
                term_row_softmax,
                term_unary_softmax,
                reverse_of,
            },
        ))
    }
}

impl GraphTables {
    pub fn term_indices_for(&self, target: NodeId) -> &[usize] {
        &self.terms_by_target[target.0]
    }

    /// Joint log score of a relaxed assignment.
    pub fn joint_score(&self, graph: &SceneFactorGraph, z: &RelaxedAssignment) -> Result<f64> {
        z.validate(graph)?;
        let mut score = 0.0;
        for (i, u) in self.unary.iter().enumerate() {
            if !u.is_empty() {
                score += dot(u, z.label(NodeId(i)));
            }
        }
        for term in &self.terms {
            let zt = z.label(term.target);
            let zn = z.label(term.neighbor);
            let mut s = 0.0;
            for t in 0..term.v_target {
                if zt[t] == 0.0 {
                    continue;
                }
                let row = &term.table[t * term.v_neighbor..(t + 1) * term.v_neighbor];
                s += zt[t] * dot(row, zn);
            }
            score += s;
        }
        Ok(score)
    }

    /// Joint log score of a hard assignment via direct table lookups.
    pub fn assignment_score(&self, assignment: &Assignment) -> f64 {
        self.labels_score(&assignment.labels)
    }

    /// [`GraphTables::assignment_score`] on a raw label slice.
    pub fn labels_score(&self, labels: &[usize]) -> f64 {
        let mut score = 0.0;
        for (i, u) in self.unary.iter().enumerate() {
            if !u.is_empty() {
                score += u[labels[i]];
            }
        }
        for term in &self.terms {
            let t = labels[term.target.0];
            let n = labels[term.neighbor.0];
            score += term.table[t * term.v_neighbor + n];
        }
        score
    }

    /// Local score vector of one node: unary logits plus the sum of
    /// incoming messages.
    pub fn local_score_vector(&self, node: NodeId) -> Result<LocalScoreVector> {
        let unary = &self.unary[node.0];
        if unary.is_empty() {
            return Err(Error::InvalidGraph(format!(
                "node {} is the global context node and has no local score",
                node.0
            )));
        }
        let mut logits = unary.clone();
        for &ti in &self.terms_by_target[node.0] {
            let term = &self.terms[ti];
            for (l, m) in logits.iter_mut().zip(&term.message) {
                *l += m;
            }
        }
        Ok(LocalScoreVector { node, logits })
    }
}

/// Joint log score of a relaxed assignment under a model; the sum of unary
/// inner products and pairwise bilinear forms over all edge terms.
pub fn joint_log_score(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
    z: &RelaxedAssignment,
) -> Result<f64> {
    model.tables(graph)?.joint_score(graph, z)
}

/// Per-node local score logits (unary plus eliminated neighbor messages).
pub fn local_score_vector(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
    node: NodeId,
) -> Result<LocalScoreVector> {
    if !graph.contains(node) {
        return Err(Error::NodeNotFound(node));
    }
    model.tables(graph)?.local_score_vector(node)
}

/// Local score vectors for every inferred (object and predicate) node.
pub fn all_local_score_vectors(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
) -> Result<Vec<LocalScoreVector>> {
    let tables = model.tables(graph)?;
    graph
        .inferred_nodes()
        .into_iter()
        .map(|n| tables.local_score_vector(n))
        .collect()
}
