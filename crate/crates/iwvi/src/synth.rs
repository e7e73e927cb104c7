//! Synthetic structured-prediction benchmark generator.
//!
//! Each graph gets a random structure (objects, one predicate node per
//! sampled ordered object pair, a global context node wired to everything),
//! labels drawn from the exact joint of a recorded sampling model, and
//! features emitted as label prototypes plus Gaussian noise.
//!
//! Label sampling works on materialized potential tables: the sampling
//! model is evaluated on throwaway base features, its tables are relabeled
//! by per-graph category permutations (which makes classes exchangeable),
//! and a fixed per-class tilt `-exponent * ln(1 + k)` is added to predicate
//! unaries afterwards. With exponent 0 every predicate class is therefore
//! uniform up to multinomial noise; larger exponents produce the long-tailed
//! head/body/tail frequency profile.
//!
//! The emitted features are what the learner sees: `prototype[kind][label] +
//! eta * N(0, I)`. At `eta = 0` the features are exact prototypes and labels
//! are perfectly decodable per node.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    Assignment, GraphJson, NodeId, NodeKind, SceneFactorGraph, VocabSizes,
    DEFAULT_ENUMERATION_CAP,
};
use crate::learning::TrainExample;
use crate::oracle::sample_exact_joint_tables;
use crate::potentials::{ModelShape, PotentialModel};
use crate::rng::{derive_rng, stream};
use crate::score::GraphTables;

/// Generator settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub num_train_graphs: usize,
    pub num_test_graphs: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub predicates_min: usize,
    pub predicates_max: usize,
    pub vocab: VocabSizes,
    pub feature_dim: usize,
    /// Gaussian feature noise scale.
    pub feature_noise: f64,
    /// Zipf-like class imbalance exponent; 0 keeps classes balanced.
    pub imbalance_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            num_train_graphs: 1000,
            num_test_graphs: 200,
            objects_min: 2,
            objects_max: 4,
            predicates_min: 1,
            predicates_max: 4,
            vocab: VocabSizes {
                objects: 6,
                predicates: 5,
                global: 4,
            },
            feature_dim: 16,
            feature_noise: 0.5,
            imbalance_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 7] = [
            ("num_train_graphs", self.num_train_graphs > 0),
            ("num_test_graphs", self.num_test_graphs > 0),
            ("objects_min", self.objects_min >= 2),
            (
                "objects_max",
                self.objects_max >= self.objects_min,
            ),
            (
                "predicates_min",
                self.predicates_min >= 1 && self.predicates_max >= self.predicates_min,
            ),
            ("feature_noise", self.feature_noise >= 0.0),
            ("feature_dim", self.feature_dim >= 1),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(Error::InvalidConfig {
                    field: format!("data.{field}"),
                    message: "value out of range".into(),
                });
            }
        }
        self.vocab.validate()?;
        Ok(())
    }

    fn model_shape(&self) -> ModelShape {
        ModelShape {
            feature_dim: self.feature_dim,
            hidden: 16,
            vocab: self.vocab,
        }
    }
}

/// One stored dataset line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: usize,
    pub graph: GraphJson,
    pub truth: Vec<usize>,
}

/// Prototype vectors per node kind, indexed by category.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prototypes {
    pub objects: Vec<Vec<f64>>,
    pub predicates: Vec<Vec<f64>>,
    pub global: Vec<Vec<f64>>,
}

impl Prototypes {
    fn for_kind(&self, kind: NodeKind) -> &[Vec<f64>] {
        match kind {
            NodeKind::Object => &self.objects,
            NodeKind::Predicate => &self.predicates,
            NodeKind::Global => &self.global,
        }
    }
}

/// In-memory generator output.
#[derive(Debug)]
pub struct GeneratedDataset {
    pub train: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    pub prototypes: Prototypes,
    pub sampling_model: PotentialModel,
}

fn draw_prototypes(spec: &SyntheticDatasetSpec) -> Prototypes {
    let mut rng = derive_rng(spec.seed, &[stream::PROTOTYPES]);
    let mut draw = |count: usize, d: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    };
    Prototypes {
        objects: draw(spec.vocab.objects, spec.feature_dim),
        predicates: draw(spec.vocab.predicates, spec.feature_dim),
        global: draw(spec.vocab.global, spec.feature_dim),
    }
}

fn sampling_model(spec: &SyntheticDatasetSpec) -> PotentialModel {
    let mut rng = derive_rng(spec.seed, &[stream::GENERATOR_MODEL]);
    let mut model = PotentialModel::random(spec.model_shape(), &mut rng);
    // moderate couplings keep the exact joint well-conditioned at the
    // default graph sizes
    model.scale_outputs(0.6, 0.5);
    model
}

/// Relabel the categories of materialized tables with per-kind permutations
/// and add the imbalance tilt to predicate unaries.
fn permute_and_tilt_tables(
    tables: &mut GraphTables,
    graph: &SceneFactorGraph,
    perms: &KindPermutations,
    tilt: &[f64],
) {
    for i in 0..graph.num_nodes() {
        let node = NodeId(i);
        if tables.unary[i].is_empty() {
            continue;
        }
        let perm = perms.for_kind(graph.kind(node));
        let old = tables.unary[i].clone();
        for (k, &src) in perm.iter().enumerate() {
            tables.unary[i][k] = old[src];
        }
        if graph.kind(node) == NodeKind::Predicate {
            for (k, t) in tilt.iter().enumerate() {
                tables.unary[i][k] += t;
            }
        }
    }
    for term in &mut tables.terms {
        let tp = perms.for_kind(graph.kind(term.target));
        let np = perms.for_kind(graph.kind(term.neighbor));
        let old = term.table.clone();
        for t in 0..term.v_target {
            for n in 0..term.v_neighbor {
                term.table[t * term.v_neighbor + n] = old[tp[t] * term.v_neighbor + np[n]];
            }
        }
    }
}

struct KindPermutations {
    objects: Vec<usize>,
    predicates: Vec<usize>,
    global: Vec<usize>,
}

impl KindPermutations {
    fn draw<R: Rng>(vocab: VocabSizes, rng: &mut R) -> Self {
        let mut perm = |v: usize| {
            let mut p: Vec<usize> = (0..v).collect();
            p.shuffle(rng);
            p
        };
        KindPermutations {
            objects: perm(vocab.objects),
            predicates: perm(vocab.predicates),
            global: perm(vocab.global),
        }
    }

    fn for_kind(&self, kind: NodeKind) -> &[usize] {
        match kind {
            NodeKind::Object => &self.objects,
            NodeKind::Predicate => &self.predicates,
            NodeKind::Global => &self.global,
        }
    }
}

/// Generate one graph with its ground-truth assignment.
fn generate_graph(
    spec: &SyntheticDatasetSpec,
    model: &PotentialModel,
    prototypes: &Prototypes,
    uid: u64,
) -> Result<TrainExample> {
    // structure
    let mut rng_s = derive_rng(spec.seed, &[stream::GRAPH_STRUCTURE, uid]);
    let m = rng_s.gen_range(spec.objects_min..=spec.objects_max);
    let n_wanted = rng_s.gen_range(spec.predicates_min..=spec.predicates_max);
    let mut ordered_pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    ordered_pairs.shuffle(&mut rng_s);
    let n = n_wanted.min(ordered_pairs.len());
    let pairs = &ordered_pairs[..n];

    // base features drive the label-sampling joint only
    let mut rng_b = derive_rng(spec.seed, &[stream::BASE_FEATURES, uid]);
    let d = spec.feature_dim;
    let mut base_feature =
        || -> Vec<f64> { (0..d).map(|_| rng_b.sample::<f64, _>(StandardNormal)).collect() };

    let mut builder = SceneFactorGraph::builder(d, spec.vocab);
    let objects: Vec<NodeId> = (0..m).map(|_| builder.add_object(base_feature())).collect();
    let predicates: Vec<NodeId> = (0..n).map(|_| builder.add_predicate(base_feature())).collect();
    let global = builder.set_global(base_feature());
    for (p, &(a, b)) in predicates.iter().zip(pairs) {
        builder.add_edge(*p, objects[a]);
        builder.add_edge(*p, objects[b]);
        builder.add_edge(objects[a], objects[b]);
    }
    for &o in &objects {
        builder.add_edge(o, global);
    }
    for &p in &predicates {
        builder.add_edge(p, global);
    }
    let base_graph = builder.build()?;

    // exact-joint labels from permuted, tilted tables
    let mut tables = model.tables(&base_graph)?;
    let mut rng_perm = derive_rng(spec.seed, &[stream::CLASS_PERMUTATION, uid]);
    let perms = KindPermutations::draw(spec.vocab, &mut rng_perm);
    let tilt: Vec<f64> = (0..spec.vocab.predicates)
        .map(|k| -spec.imbalance_exponent * ((1 + k) as f64).ln())
        .collect();
    permute_and_tilt_tables(&mut tables, &base_graph, &perms, &tilt);
    let mut rng_l = derive_rng(spec.seed, &[stream::LABEL_SAMPLING, uid]);
    let truth =
        sample_exact_joint_tables(&base_graph, &tables, DEFAULT_ENUMERATION_CAP, &mut rng_l)?;

    // final features: prototypes of the sampled labels plus noise
    let mut rng_f = derive_rng(spec.seed, &[stream::FEATURE_NOISE, uid]);
    let mut builder = SceneFactorGraph::builder(d, spec.vocab);
    let emit = |kind: NodeKind, label: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        prototypes.for_kind(kind)[label]
            .iter()
            .map(|p| p + spec.feature_noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    for &o in &objects {
        let f = emit(NodeKind::Object, truth.label(o), &mut rng_f);
        builder.add_object(f);
    }
    for &p in &predicates {
        let f = emit(NodeKind::Predicate, truth.label(p), &mut rng_f);
        builder.add_predicate(f);
    }
    let fg = emit(NodeKind::Global, truth.label(global), &mut rng_f);
    builder.set_global(fg);
    for (p, &(a, b)) in predicates.iter().zip(pairs) {
        builder.add_edge(*p, objects[a]);
        builder.add_edge(*p, objects[b]);
        builder.add_edge(objects[a], objects[b]);
    }
    for &o in &objects {
        builder.add_edge(o, global);
    }
    for &p in &predicates {
        builder.add_edge(p, global);
    }
    let graph = builder.build()?;

    Ok(TrainExample { graph, truth })
}

/// Generate the train and test splits in memory. Graphs are generated in
/// parallel; every graph derives its streams from its own index, so the
/// output is independent of thread count.
pub fn generate_examples(spec: &SyntheticDatasetSpec) -> Result<GeneratedDataset> {
    use rayon::prelude::*;
    spec.validate()?;
    let prototypes = draw_prototypes(spec);
    let model = sampling_model(spec);
    let train: Vec<TrainExample> = (0..spec.num_train_graphs)
        .into_par_iter()
        .map(|i| generate_graph(spec, &model, &prototypes, i as u64))
        .collect::<Result<_>>()?;
    let test: Vec<TrainExample> = (0..spec.num_test_graphs)
        .into_par_iter()
        .map(|j| generate_graph(spec, &model, &prototypes, (spec.num_train_graphs + j) as u64))
        .collect::<Result<_>>()?;
    Ok(GeneratedDataset {
        train,
        test,
        prototypes,
        sampling_model: model,
    })
}

/// File layout produced by [`generate_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub generator_info: PathBuf,
    pub generator_model: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorInfo {
    spec: SyntheticDatasetSpec,
    prototypes: Prototypes,
    sampling_model_checkpoint: String,
}

/// Generate the dataset and write it under `dir`:
/// `train.jsonl`, `test.jsonl` (one [`DatasetRecord`] per line),
/// `generator.json` and `generator_model.ckpt` for diagnostics.
pub fn generate_dataset(spec: &SyntheticDatasetSpec, dir: &Path) -> Result<DatasetPaths> {
    let data = generate_examples(spec)?;
    std::fs::create_dir_all(dir)?;
    let paths = DatasetPaths {
        train: dir.join("train.jsonl"),
        test: dir.join("test.jsonl"),
        generator_info: dir.join("generator.json"),
        generator_model: dir.join("generator_model.ckpt"),
    };
    write_jsonl(&paths.train, &data.train, 0)?;
    write_jsonl(&paths.test, &data.test, spec.num_train_graphs)?;
    data.sampling_model.save(&paths.generator_model)?;
    let info = GeneratorInfo {
        spec: spec.clone(),
        prototypes: data.prototypes,
        sampling_model_checkpoint: "generator_model.ckpt".into(),
    };
    let mut f = std::fs::File::create(&paths.generator_info)?;
    serde_json::to_writer_pretty(&mut f, &info)?;
    f.write_all(b"\n")?;
    Ok(paths)
}

fn write_jsonl(path: &Path, examples: &[TrainExample], id_offset: usize) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, ex) in examples.iter().enumerate() {
        let record = DatasetRecord {
            id: id_offset + i,
            graph: ex.graph.to_json(),
            truth: ex.truth.labels.clone(),
        };
        serde_json::to_writer(&mut f, &record)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSON-lines dataset file back into training examples.
pub fn load_dataset(path: &Path) -> Result<Vec<TrainExample>> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)?;
        let graph = SceneFactorGraph::from_json(&record.graph)?;
        if record.truth.len() != graph.num_nodes() {
            return Err(Error::InvalidGraph(format!(
                "record {}: {} truth labels for {} nodes",
                record.id,
                record.truth.len(),
                graph.num_nodes()
            )));
        }
        out.push(TrainExample {
            graph,
            truth: Assignment {
                labels: record.truth,
            },
        });
    }
    Ok(out)
}
