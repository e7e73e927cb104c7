//! Cross-entropy learning of the potential model.
//!
//! One training iteration re-initializes the per-node variational
//! distributions, optimizes them by mirror descent against the current local
//! scores, re-estimates each node's bound with the (larger) learning sample
//! count, forms the surrogate logits and log-posteriors, and applies one
//! optimizer step on the cross-entropy of the ground-truth labels. The
//! softmax temperature is annealed across iterations.
//!
//! The bound enters the surrogate logits as a per-node constant shift, so it
//! cancels from the normalized log-posterior: the analytic parameter
//! gradient is exactly the softmax cross-entropy gradient of the local score
//! logits, with the variational optimum treated as a constant (no gradient
//! flows through the mirror-descent loop). Finite-difference checks with
//! frozen noise confirm the same cancellation numerically.
//!
//! Batch items are processed in parallel; per-item gradients are reduced in
//! item order, so training is bit-reproducible for a fixed seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emd::{init_pi, optimize_logits, EmdConfig, GradientSource};
use crate::error::{Error, Result};
use crate::graph::{Assignment, NodeId, SceneFactorGraph};
use crate::inference::{InferenceResult, NodeInference};
use crate::math::{argmax, logsumexp};
use crate::potentials::{ModelGrads, PotentialModel};
use crate::rng::{derive_rng, stream};
use crate::sampler::{Temperature, VariationalParams};
use crate::score::{GraphTableCaches, GraphTables, LocalScoreVector};
use crate::bound::{iw_bound, SampleBatch};

/// One labeled graph.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub graph: SceneFactorGraph,
    pub truth: Assignment,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Samples per mirror-descent gradient estimate.
    pub s_infer: usize,
    /// Samples for the final per-node bound estimate entering the surrogate
    /// logits.
    pub s_learn: usize,
    pub tau0: f64,
    pub tau_min: f64,
    pub beta: f64,
    pub optimizer: OptimizerKind,
    /// Dirichlet(1) instead of uniform variational re-initialization.
    pub random_pi_init: bool,
    /// Keep each node's optimized distribution as the next iteration's
    /// starting point instead of re-initializing.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 12,
            learning_rate: 0.1,
            iterations: 600,
            s_infer: 20,
            s_learn: 5000,
            tau0: 1.0,
            tau_min: 0.2,
            beta: 1e-4,
            optimizer: OptimizerKind::Sgd,
            random_pi_init: false,
            warm_start: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 8] = [
            ("batch_size", self.batch_size > 0),
            ("learning_rate", self.learning_rate >= 0.0),
            ("iterations", self.iterations > 0),
            ("s_infer", self.s_infer > 0),
            ("s_learn", self.s_learn > 0),
            ("tau0", self.tau0 > 0.0),
            ("tau_min", self.tau_min > 0.0 && self.tau_min <= self.tau0),
            ("beta", self.beta >= 0.0),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(Error::InvalidConfig {
                    field: format!("train.{field}"),
                    message: "value out of range".into(),
                });
            }
        }
        Ok(())
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.tau0, self.tau_min, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Cached forward evaluation of every feature map on one graph.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub tables: GraphTables,
    pub caches: GraphTableCaches,
    pub local: Vec<LocalScoreVector>,
    node_kinds: Vec<crate::graph::NodeKind>,
    fingerprint: u64,
}

impl ForwardPass {
    pub fn local_score_vector(&self, node: NodeId) -> Option<&LocalScoreVector> {
        self.local.iter().find(|l| l.node == node)
    }
}

fn model_fingerprint(model: &PotentialModel) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for m in model.maps() {
        for chunk in [&m.w1, &m.b1, &m.w2, &m.b2] {
            for &x in chunk.iter() {
                h ^= x.to_bits();
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
    }
    h
}

/// Evaluate all unary and pairwise maps on a graph, caching activations for
/// the backward pass.
pub fn forward_maps(model: &PotentialModel, graph: &SceneFactorGraph) -> Result<ForwardPass> {
    let (tables, caches) = model.tables_cached(graph)?;
    let local = graph
        .inferred_nodes()
        .into_iter()
        .map(|n| tables.local_score_vector(n))
        .collect::<Result<_>>()?;
    let node_kinds = (0..graph.num_nodes()).map(|i| graph.kind(NodeId(i))).collect();
    Ok(ForwardPass {
        tables,
        caches,
        local,
        node_kinds,
        fingerprint: model_fingerprint(model),
    })
}

/// Mean negative log-posterior of the ground-truth labels over all inferred
/// nodes of one graph.
pub fn cross_entropy_loss(result: &InferenceResult, truth: &Assignment) -> Result<f64> {
    if result.nodes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for node in &result.nodes {
        let label = truth
            .labels
            .get(node.node.0)
            .copied()
            .ok_or(Error::MissingLabel { node: node.node })?;
        total -= node.log_posterior[label];
    }
    Ok(total / result.nodes.len() as f64)
}

/// Cross-entropy of one graph plus analytic parameter gradients, computed
/// from a cached forward pass with the per-node bound shifts already
/// cancelled. `weight` scales both the loss and every gradient entry.
/// Errors if the tape was built from different parameters.
pub fn backward_cross_entropy(
    model: &PotentialModel,
    forward: &ForwardPass,
    truth: &Assignment,
    weight: f64,
    grads: &mut ModelGrads,
) -> Result<f64> {
    if forward.fingerprint != model_fingerprint(model) {
        return Err(Error::CheckpointMismatch(
            "stale forward tape: model parameters changed since forward_maps".into(),
        ));
    }
    if forward.local.is_empty() {
        return Ok(0.0);
    }
    let node_weight = weight / forward.local.len() as f64;
    let mut loss = 0.0;
    for lsv in &forward.local {
        let node = lsv.node;
        let label = truth
            .labels
            .get(node.0)
            .copied()
            .ok_or(Error::MissingLabel { node })?;
        let log_post: Vec<f64> = {
            let lse = logsumexp(&lsv.logits);
            lsv.logits.iter().map(|l| l - lse).collect()
        };
        loss -= node_weight * log_post[label];

        // d loss / d logits = softmax(logits) - onehot(truth)
        let mut dlogits: Vec<f64> = log_post.iter().map(|lp| lp.exp() * node_weight).collect();
        dlogits[label] -= node_weight;

        // unary path
        if let Some(cache) = forward.caches.unary[node.0].as_ref() {
            let kind = forward.node_kinds[node.0];
            let unary_grads = grads
                .unary_grads_for(kind)
                .expect("inferred nodes have unary maps");
            let unary_map = model
                .unary_map(kind)
                .expect("inferred nodes have unary maps");
            unary_map.backward(cache, &dlogits, unary_grads);
        }

        // message paths: d message[t] / d table[t, b] = row_softmax[t, b];
        // the neighbor's unary scores also enter the elimination with
        // Jacobian row_softmax[t, b] - unary_softmax[b]
        for &ti in forward.tables.term_indices_for(node) {
            let term = &forward.tables.terms[ti];
            let rows = &forward.caches.term_row_softmax[ti];
            let vn = term.v_neighbor;
            let mut dtable = vec![0.0; term.v_target * vn];
            for t in 0..term.v_target {
                let g = dlogits[t];
                if g == 0.0 {
                    continue;
                }
                for b in 0..vn {
                    dtable[t * vn + b] = g * rows[t * vn + b];
                }
            }
            model
                .pair_map(term.kind)
                .backward(&forward.caches.terms[ti], &dtable, grads.grads_for(term.kind));

            let usm = &forward.caches.term_unary_softmax[ti];
            if !usm.is_empty() {
                let mut du = vec![0.0; vn];
                for t in 0..term.v_target {
                    let g = dlogits[t];
                    if g == 0.0 {
                        continue;
                    }
                    for b in 0..vn {
                        du[b] += g * (rows[t * vn + b] - usm[b]);
                    }
                }
                let nbr_kind = forward.node_kinds[term.neighbor.0];
                let nbr_cache = forward.caches.unary[term.neighbor.0]
                    .as_ref()
                    .expect("neighbor with unary softmax has a unary cache");
                let nbr_grads = grads
                    .unary_grads_for(nbr_kind)
                    .expect("neighbor with unary softmax has a unary map");
                model
                    .unary_map(nbr_kind)
                    .expect("neighbor with unary softmax has a unary map")
                    .backward(nbr_cache, &du, nbr_grads);
            }
        }
    }
    Ok(loss)
}

/// Per-iteration training telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub mean_bound: f64,
    pub tau: f64,
}

/// Trained model plus its telemetry log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PotentialModel,
    pub log: Vec<TrainRecord>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

/// Run the full training loop from a freshly initialized model.
pub fn train(
    dataset: &[TrainExample],
    cfg: &TrainConfig,
    emd: &EmdConfig,
    model_shape: crate::potentials::ModelShape,
) -> Result<TrainOutcome> {
    let mut init_rng = derive_rng(cfg.seed, &[stream::MODEL_INIT]);
    let model = PotentialModel::random(model_shape, &mut init_rng);
    train_from(dataset, cfg, emd, model)
}

/// Run the training loop from an existing model.
pub fn train_from(
    dataset: &[TrainExample],
    cfg: &TrainConfig,
    emd: &EmdConfig,
    mut model: PotentialModel,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    emd.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig {
            field: "dataset".into(),
            message: "training dataset is empty".into(),
        });
    }
    let base_temp = cfg.temperature()?;
    let emd_cfg = EmdConfig {
        samples_per_step: cfg.s_infer,
        ..*emd
    };

    let mut log = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut adam: Option<AdamState> = None;
    let mut warm: std::collections::HashMap<(usize, usize), VariationalParams> =
        std::collections::HashMap::new();

    for t in 1..=cfg.iterations {
        let tau = base_temp.anneal(t).tau;

        // next mini-batch from a seeded epoch shuffle
        let mut batch_items: Vec<usize> = Vec::with_capacity(cfg.batch_size);
        while batch_items.len() < cfg.batch_size {
            if cursor >= order.len() {
                order = shuffled_indices(dataset.len(), cfg.seed, epoch);
                epoch += 1;
                cursor = 0;
            }
            batch_items.push(order[cursor]);
            cursor += 1;
        }

        let warm_ref = cfg.warm_start.then_some(&warm);
        let model_ref = &model;
        let emd_ref = &emd_cfg;
        let results: Vec<Result<GraphStep>> = batch_items
            .par_iter()
            .map(|&gi| graph_step(model_ref, &dataset[gi], gi, t, tau, cfg, emd_ref, warm_ref))
            .collect();

        let mut grads = ModelGrads::zeros_like(&model);
        let mut loss = 0.0;
        let mut bound_sum = 0.0;
        let mut bound_count = 0usize;
        let mut new_warm: Vec<((usize, usize), VariationalParams)> = Vec::new();
        for r in results {
            let step = r?;
            loss += step.loss / cfg.batch_size as f64;
            bound_sum += step.bound_sum;
            bound_count += step.bound_count;
            grads.add_assign(&step.grads);
            if cfg.warm_start {
                new_warm.extend(step.pi_stars);
            }
        }
        grads.scale(1.0 / cfg.batch_size as f64);
        if cfg.warm_start {
            for (k, v) in new_warm {
                warm.insert(k, v);
            }
        }

        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: t, loss });
        }

        apply_update(&mut model, &grads, cfg, &mut adam);

        log.push(TrainRecord {
            iteration: t,
            loss,
            mean_bound: if bound_count > 0 {
                bound_sum / bound_count as f64
            } else {
                0.0
            },
            tau,
        });
    }

    Ok(TrainOutcome { model, log })
}

struct GraphStep {
    loss: f64,
    grads: ModelGrads,
    bound_sum: f64,
    bound_count: usize,
    pi_stars: Vec<((usize, usize), VariationalParams)>,
}

#[allow(clippy::too_many_arguments)]
fn graph_step(
    model: &PotentialModel,
    example: &TrainExample,
    graph_index: usize,
    iteration: usize,
    tau: f64,
    cfg: &TrainConfig,
    emd_cfg: &EmdConfig,
    warm: Option<&std::collections::HashMap<(usize, usize), VariationalParams>>,
) -> Result<GraphStep> {
    let graph = &example.graph;
    let forward = forward_maps(model, graph)?;
    for lsv in &forward.local {
        if lsv.logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                loss: f64::NAN,
            });
        }
    }
    let mut grads = ModelGrads::zeros_like(model);
    let mut bound_sum = 0.0;
    let mut pi_stars = Vec::new();

    // Per-node inner optimization; the resulting bound shifts the surrogate
    // logits but cancels from the posterior, so only telemetry consumes it.
    let mut infer_nodes = Vec::new();
    for lsv in &forward.local {
        let node = lsv.node;
        let comps = [
            stream::NODE_SAMPLING,
            iteration as u64,
            graph_index as u64,
            node.0 as u64,
        ];
        let mut rng = derive_rng(cfg.seed, &comps);
        let init = match warm.and_then(|w| w.get(&(graph_index, node.0))) {
            Some(pi) => pi.clone(),
            None => {
                let mut pi_rng = derive_rng(
                    cfg.seed,
                    &[
                        stream::PI_INIT,
                        iteration as u64,
                        graph_index as u64,
                        node.0 as u64,
                    ],
                );
                init_pi(lsv.logits.len(), cfg.random_pi_init, &mut pi_rng)
            }
        };
        let opt = optimize_logits(&lsv.logits, init, emd_cfg, tau, GradientSource::Dreg, &mut rng)?;

        // final bound estimate with the learning sample count
        let mut learn_rng = derive_rng(
            cfg.seed,
            &[
                stream::LEARN_BOUND,
                iteration as u64,
                graph_index as u64,
                node.0 as u64,
            ],
        );
        let batch = SampleBatch::draw(&lsv.logits, &opt.pi, tau, cfg.s_learn, &mut learn_rng)?;
        let bound = iw_bound(&batch)?;
        bound_sum += bound;

        let surrogate: Vec<f64> = lsv.logits.iter().map(|l| l - bound).collect();
        let lse = logsumexp(&surrogate);
        let log_posterior: Vec<f64> = surrogate.iter().map(|p| p - lse).collect();
        let norm: f64 = log_posterior.iter().map(|lp| lp.exp()).sum();
        assert!(
            (norm - 1.0).abs() <= 1e-9,
            "posterior normalization violated during training: {norm}"
        );
        infer_nodes.push(NodeInference {
            node,
            map_label: argmax(&log_posterior),
            pi_star: opt.pi.clone(),
            bound,
            surrogate_logits: surrogate,
            log_posterior,
        });
        if cfg.warm_start {
            pi_stars.push(((graph_index, node.0), opt.pi));
        }
    }
    let bound_count = infer_nodes.len();
    let result = InferenceResult { nodes: infer_nodes };
    let loss = cross_entropy_loss(&result, &example.truth)?;
    backward_cross_entropy(model, &forward, &example.truth, 1.0, &mut grads)?;

    Ok(GraphStep {
        loss,
        grads,
        bound_sum,
        bound_count,
        pi_stars,
    })
}

fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[stream::BATCH_ORDER, epoch]);
    idx.shuffle(&mut rng);
    idx
}

fn apply_update(
    model: &mut PotentialModel,
    grads: &ModelGrads,
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    match cfg.optimizer {
        OptimizerKind::Sgd => model.sgd_step(grads, cfg.learning_rate),
        OptimizerKind::Adam => {
            let mut flat_grads = Vec::new();
            for (_, block) in grads.blocks() {
                flat_grads.extend(block);
            }
            let mut params = model.flatten_params();
            let state = adam.get_or_insert_with(|| AdamState {
                m: vec![0.0; params.len()],
                v: vec![0.0; params.len()],
                t: 0,
            });
            state.t += 1;
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            let bc1 = 1.0 - b1.powi(state.t as i32);
            let bc2 = 1.0 - b2.powi(state.t as i32);
            for i in 0..params.len() {
                state.m[i] = b1 * state.m[i] + (1.0 - b1) * flat_grads[i];
                state.v[i] = b2 * state.v[i] + (1.0 - b2) * flat_grads[i] * flat_grads[i];
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + eps);
            }
            model
                .unflatten_params(&params)
                .expect("parameter layout is stable");
        }
    }
}
