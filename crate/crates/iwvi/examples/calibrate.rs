//! Scratch calibration runs for acceptance thresholds (temporary).

use std::time::Instant;

use iwvi::emd::EmdConfig;
use iwvi::graph::{SceneFactorGraph, VocabSizes};
use iwvi::inference::infer_graph;
use iwvi::learning::{train, TrainConfig};
use iwvi::oracle::exact_inference;
use iwvi::potentials::{ModelShape, PotentialModel};
use iwvi::rng::derive_rng;
use iwvi::sampler::Temperature;
use iwvi::synth::{generate_examples, SyntheticDatasetSpec};
use rand::Rng;

fn vocab() -> VocabSizes {
    VocabSizes {
        objects: 3,
        predicates: 3,
        global: 2,
    }
}

fn random_graph(seed: u64, d: usize) -> SceneFactorGraph {
    let mut rng = derive_rng(seed, &[100]);
    let mut b = SceneFactorGraph::builder(d, vocab());
    let mut feat = || -> Vec<f64> { (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let o0 = b.add_object(feat());
    let o1 = b.add_object(feat());
    let p = b.add_predicate(feat());
    let g = b.set_global(feat());
    b.add_edge(o0, p);
    b.add_edge(o1, p);
    b.add_edge(o0, o1);
    b.add_edge(o0, g);
    b.add_edge(o1, g);
    b.add_edge(p, g);
    b.build().unwrap()
}

fn random_model(seed: u64, d: usize, unary: f64, pairwise: f64) -> PotentialModel {
    let mut rng = derive_rng(seed, &[101]);
    let mut m = PotentialModel::random(
        ModelShape {
            feature_dim: d,
            hidden: 8,
            vocab: vocab(),
        },
        &mut rng,
    );
    m.scale_outputs(unary, pairwise);
    m
}

fn main() {
    let d = 4;

    for (unary, pairwise) in [(2.0, 0.3), (2.0, 0.2), (1.5, 0.15)] {
        let emd = EmdConfig::default();
        let temp = Temperature::new(0.2, 0.2, 0.0).unwrap();
        let mut agree = 0usize;
        let mut total = 0usize;
        for inst in 0..200u64 {
            let graph = random_graph(inst + 1000, d);
            let model = random_model(inst + 2000, d, unary, pairwise);
            let oracle = exact_inference(&graph, &model).unwrap();
            let result = infer_graph(&graph, &model, &emd, &temp, inst).unwrap();
            for node in &result.nodes {
                total += 1;
                if node.map_label == oracle.max_marginal_labels[&node.node.0] {
                    agree += 1;
                }
            }
        }
        println!(
            "fidelity u={unary} p={pairwise}: {agree}/{total} = {:.4}",
            agree as f64 / total as f64
        );
    }

    // --- training speed + loss trajectory on a reduced benchmark ---
    let spec = SyntheticDatasetSpec {
        num_train_graphs: 120,
        num_test_graphs: 30,
        seed: 7,
        ..SyntheticDatasetSpec::default()
    };
    let t0 = Instant::now();
    let data = generate_examples(&spec).unwrap();
    println!("generate 150 graphs: {:.1}s", t0.elapsed().as_secs_f64());

    for lr in [0.05, 0.1, 0.2] {
        let cfg = TrainConfig {
            iterations: 120,
            learning_rate: lr,
            seed: 3,
            ..TrainConfig::default()
        };
        let t1 = Instant::now();
        let out = train(
            &data.train,
            &cfg,
            &EmdConfig::default(),
            ModelShape {
                feature_dim: spec.feature_dim,
                hidden: 32,
                vocab: spec.vocab,
            },
        )
        .unwrap();
        let secs = t1.elapsed().as_secs_f64();
        let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
        let first10: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let last10: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        println!(
            "train 120 iters lr={lr}: {:.1}s ({:.0} ms/iter), loss {first10:.3} -> {last10:.3}",
            secs,
            1000.0 * secs / 120.0
        );
    }
}
