//! Brute-force ground truth on small graphs: exact log partition function,
//! per-node marginals, marginal-argmax labels and the joint MAP assignment.
//!
//! The oracle scores hard one-hot assignments only; relaxation belongs to
//! the estimators, not the model. Two independently coded routines compute
//! marginals — full enumeration and a recursive elimination over the node
//! list — so a bug in one cannot silently validate itself.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{
    for_each_assignment, Assignment, NodeId, SceneFactorGraph, DEFAULT_ENUMERATION_CAP,
};
use crate::math::{argmax, logsumexp};
use crate::potentials::PotentialModel;
use crate::score::GraphTables;

/// Exact quantities of the joint model on one graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub log_partition: f64,
    /// Exact per-node marginal distributions, keyed by node id.
    pub marginals: BTreeMap<usize, Vec<f64>>,
    /// Argmax of each node's exact marginal.
    pub max_marginal_labels: BTreeMap<usize, usize>,
    /// Highest-scoring joint assignment.
    pub joint_map: Assignment,
}

/// Run exact inference under [`DEFAULT_ENUMERATION_CAP`].
pub fn exact_inference(graph: &SceneFactorGraph, model: &PotentialModel) -> Result<OracleResult> {
    exact_inference_with_cap(graph, model, DEFAULT_ENUMERATION_CAP)
}

pub fn exact_inference_with_cap(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
    cap: u128,
) -> Result<OracleResult> {
    let tables = model.tables(graph)?;
    let n = graph.num_nodes();

    // log-space accumulators per (node, category); two-pass max-shift
    let mut max_score = f64::NEG_INFINITY;
    let mut best: Vec<usize> = vec![];
    for_each_assignment(graph, cap, |labels| {
        let s = tables.labels_score(labels);
        if s > max_score {
            max_score = s;
            best = labels.to_vec();
        }
    })?;
    let joint_map = Assignment { labels: best };

    let mut partition_acc = 0.0f64;
    let mut group_acc: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![0.0; graph.vocab_of(NodeId(i))])
        .collect();
    for_each_assignment(graph, cap, |labels| {
        let w = (tables.labels_score(labels) - max_score).exp();
        partition_acc += w;
        for (i, &label) in labels.iter().enumerate() {
            group_acc[i][label] += w;
        }
    })?;
    let log_partition = if joint_map.labels.is_empty() && n == 0 {
        0.0
    } else {
        max_score + partition_acc.ln()
    };

    let mut marginals = BTreeMap::new();
    let mut max_marginal_labels = BTreeMap::new();
    for i in 0..n {
        let dist: Vec<f64> = group_acc[i].iter().map(|&g| g / partition_acc).collect();
        max_marginal_labels.insert(i, argmax(&dist));
        marginals.insert(i, dist);
    }

    Ok(OracleResult {
        log_partition,
        marginals,
        max_marginal_labels,
        joint_map,
    })
}

/// Second, independently coded marginal routine: recursive elimination over
/// the node list. For each category of the queried node it recursively
/// accumulates `logsumexp` over all completions, then normalizes.
pub fn marginals_by_recursive_elimination(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
    cap: u128,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let size = graph.state_space_size();
    if size > cap {
        return Err(crate::error::Error::StateSpaceTooLarge { size, cap });
    }
    let tables = model.tables(graph)?;
    let n = graph.num_nodes();

    // Depth-first walk over label tuples with one node pinned to a fixed
    // category; collects the joint scores of every completion.
    fn walk(
        tables: &GraphTables,
        graph: &SceneFactorGraph,
        labels: &mut Vec<usize>,
        depth: usize,
        pinned: (usize, usize),
        scores: &mut Vec<f64>,
    ) {
        if depth == graph.num_nodes() {
            scores.push(tables.assignment_score(&Assignment {
                labels: labels.clone(),
            }));
            return;
        }
        let range = if depth == pinned.0 {
            pinned.1..pinned.1 + 1
        } else {
            0..graph.vocab_of(NodeId(depth))
        };
        for c in range {
            labels.push(c);
            walk(tables, graph, labels, depth + 1, pinned, scores);
            labels.pop();
        }
    }

    let mut result = BTreeMap::new();
    for i in 0..n {
        let v = graph.vocab_of(NodeId(i));
        let mut log_mass = Vec::with_capacity(v);
        for c in 0..v {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            walk(&tables, graph, &mut labels, 0, (i, c), &mut scores);
            log_mass.push(logsumexp(&scores));
        }
        let log_z = logsumexp(&log_mass);
        result.insert(i, log_mass.iter().map(|m| (m - log_z).exp()).collect());
    }
    Ok(result)
}

/// Draw one exact sample from the joint distribution. Two passes over the
/// state space: the first computes the normalizer, the second walks the CDF,
/// so no per-assignment storage is needed.
pub fn sample_exact_joint<R: Rng>(
    graph: &SceneFactorGraph,
    model: &PotentialModel,
    cap: u128,
    rng: &mut R,
) -> Result<Assignment> {
    let tables = model.tables(graph)?;
    sample_exact_joint_tables(graph, &tables, cap, rng)
}

/// [`sample_exact_joint`] over pre-materialized (possibly post-processed)
/// potential tables. Uses the Gumbel-max construction: one pass over the
/// state space tracking `argmax(score + Gumbel)` draws an exact sample.
pub fn sample_exact_joint_tables<R: Rng>(
    graph: &SceneFactorGraph,
    tables: &GraphTables,
    cap: u128,
    rng: &mut R,
) -> Result<Assignment> {
    let mut best_key = f64::NEG_INFINITY;
    let mut best: Vec<usize> = vec![];
    for_each_assignment(graph, cap, |labels| {
        let u = rng.gen_range(0.0f64..1.0).clamp(1e-12, 1.0 - 1e-12);
        let gumbel = -(-u.ln()).ln();
        let key = tables.labels_score(labels) + gumbel;
        if key > best_key {
            best_key = key;
            best = labels.to_vec();
        }
    })?;
    Ok(Assignment { labels: best })
}
