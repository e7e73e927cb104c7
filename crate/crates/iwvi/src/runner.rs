//! Experiment orchestration: generate, train, evaluate, and write artifacts
//! into a run directory.
//!
//! A run directory is created as `<out>/run-<UTC timestamp>` and owns every
//! artifact of one experiment: the config snapshot, dataset files, model
//! checkpoint, per-iteration training log, metrics tables, and a JSON
//! manifest. Re-targeting an existing directory fails unless forced.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::learning::{train, TrainRecord};
use crate::metrics::MetricsReport;
use crate::potentials::PotentialModel;
use crate::synth::{generate_dataset, load_dataset};

/// Everything a finished run leaves on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_snapshot: String,
    pub dataset_dir: String,
    pub checkpoint: String,
    pub training_log: String,
    pub metrics_csv: String,
    pub per_class_csv: String,
    pub metrics_json: String,
    pub seconds_generate: f64,
    pub seconds_train: f64,
    pub seconds_eval: f64,
    pub final_loss: f64,
    pub mean_recall_at_50: Option<f64>,
}

/// Outcome summary returned to the caller.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub report: MetricsReport,
    pub log: Vec<TrainRecord>,
}

fn timestamp() -> String {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after epoch");
    let secs = now.as_secs();
    let days = secs / 86_400;
    let (y, m, d) = civil_from_days(days as i64);
    let rem = secs % 86_400;
    format!(
        "{y:04}{m:02}{d:02}-{:02}{:02}{:02}",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

// days-from-epoch to (year, month, day), proleptic Gregorian
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Validate a config and report what a run would do, writing nothing.
pub fn dry_run(config: &RunConfig) -> Result<String> {
    config.validate()?;
    Ok(format!(
        "config ok: {} train / {} test graphs, {} training iterations, eval K = {:?}",
        config.data.num_train_graphs,
        config.data.num_test_graphs,
        config.train.iterations,
        config.eval.recall_ks
    ))
}

/// Run generate -> train -> evaluate, writing all artifacts into a fresh
/// timestamped directory under `out`.
pub fn run_experiment(config: &RunConfig, out: &Path, force: bool) -> Result<RunOutcome> {
    let run_dir = out.join(format!("run-{}", timestamp()));
    run_experiment_in(config, &run_dir, force)
}

/// [`run_experiment`] with an explicit run directory.
pub fn run_experiment_in(config: &RunConfig, run_dir: &Path, force: bool) -> Result<RunOutcome> {
    config.validate()?;
    let run_dir = run_dir.to_path_buf();
    prepare_run_dir(&run_dir, force)?;

    // config snapshot
    let config_snapshot = run_dir.join("config.toml");
    std::fs::write(&config_snapshot, config.to_toml_string())?;

    // generate
    let t0 = Instant::now();
    let dataset_dir = run_dir.join("data");
    let spec = config.dataset_spec();
    let paths = generate_dataset(&spec, &dataset_dir)?;
    let train_set = load_dataset(&paths.train)?;
    let test_set = load_dataset(&paths.test)?;
    let seconds_generate = t0.elapsed().as_secs_f64();

    // train
    let t1 = Instant::now();
    let outcome = train(
        &train_set,
        &config.train_config(),
        &config.emd_config(),
        config.model_shape(),
    )?;
    let seconds_train = t1.elapsed().as_secs_f64();
    let checkpoint = run_dir.join("model.ckpt");
    outcome.model.save(&checkpoint)?;
    let training_log = run_dir.join("training_log.csv");
    write_training_log(&training_log, &outcome.log)?;

    // evaluate
    let t2 = Instant::now();
    let report = crate::metrics::evaluate(
        &outcome.model,
        &test_set,
        &config.eval.recall_ks,
        &config.emd_config(),
        &config.eval_temperature()?,
        config.eval.seed,
    )?;
    let seconds_eval = t2.elapsed().as_secs_f64();

    let metrics_csv = run_dir.join("metrics.csv");
    report.write_csv(&metrics_csv)?;
    let per_class_csv = run_dir.join("per_class_recall.csv");
    report.write_per_class_csv(&per_class_csv)?;
    let metrics_json = run_dir.join("metrics.json");
    std::fs::write(&metrics_json, serde_json::to_string_pretty(&report)?)?;

    let manifest = RunManifest {
        config_snapshot: rel(&run_dir, &config_snapshot),
        dataset_dir: rel(&run_dir, &dataset_dir),
        checkpoint: rel(&run_dir, &checkpoint),
        training_log: rel(&run_dir, &training_log),
        metrics_csv: rel(&run_dir, &metrics_csv),
        per_class_csv: rel(&run_dir, &per_class_csv),
        metrics_json: rel(&run_dir, &metrics_json),
        seconds_generate,
        seconds_train,
        seconds_eval,
        final_loss: outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN),
        mean_recall_at_50: report.mean_recall_at.get(&50).copied(),
    };
    std::fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    Ok(RunOutcome {
        run_dir,
        report,
        log: outcome.log,
    })
}

fn prepare_run_dir(run_dir: &Path, force: bool) -> Result<()> {
    if run_dir.exists() {
        if !force {
            return Err(Error::RunDirExists(run_dir.display().to_string()));
        }
        std::fs::remove_dir_all(run_dir)?;
    }
    std::fs::create_dir_all(run_dir)?;
    Ok(())
}

fn rel(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .display()
        .to_string()
}

/// Write the per-iteration telemetry CSV.
pub fn write_training_log(path: &Path, log: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "loss", "mean_bound", "tau"])?;
    for rec in log {
        w.write_record([
            rec.iteration.to_string(),
            format!("{}", rec.loss),
            format!("{}", rec.mean_bound),
            format!("{}", rec.tau),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Generate the configured dataset into `<out>/data`.
pub fn generate_to_dir(config: &RunConfig, out: &Path) -> Result<crate::synth::DatasetPaths> {
    config.validate()?;
    generate_dataset(&config.dataset_spec(), &out.join("data"))
}

/// Train on `<data_dir>/train.jsonl` and write `model.ckpt` plus
/// `training_log.csv` into `out`. Returns the checkpoint path.
pub fn train_to_dir(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<PathBuf> {
    config.validate()?;
    let train_set = load_dataset(&data_dir.join("train.jsonl"))?;
    let outcome = train(
        &train_set,
        &config.train_config(),
        &config.emd_config(),
        config.model_shape(),
    )?;
    std::fs::create_dir_all(out)?;
    let checkpoint = out.join("model.ckpt");
    outcome.model.save(&checkpoint)?;
    write_training_log(&out.join("training_log.csv"), &outcome.log)?;
    Ok(checkpoint)
}

/// Load a checkpoint and a graph JSON file, run per-node inference, and
/// return the result as pretty JSON.
pub fn infer_graph_file(config: &RunConfig, checkpoint: &Path, graph: &Path) -> Result<String> {
    config.validate()?;
    let model = PotentialModel::load(checkpoint)?;
    let json: crate::graph::GraphJson = serde_json::from_str(&std::fs::read_to_string(graph)?)?;
    let graph = crate::graph::SceneFactorGraph::from_json(&json)?;
    let result = crate::inference::infer_graph(
        &graph,
        &model,
        &config.emd_config(),
        &config.eval_temperature()?,
        config.eval.seed,
    )?;
    result.to_json_string()
}

/// Load a checkpoint and a graph JSON file and dump the exact oracle result
/// as pretty JSON.
pub fn oracle_graph_file(checkpoint: &Path, graph: &Path) -> Result<String> {
    let model = PotentialModel::load(checkpoint)?;
    let json: crate::graph::GraphJson = serde_json::from_str(&std::fs::read_to_string(graph)?)?;
    let graph = crate::graph::SceneFactorGraph::from_json(&json)?;
    let result = crate::oracle::exact_inference(&graph, &model)?;
    Ok(serde_json::to_string_pretty(&result)?)
}

/// Load a checkpoint and evaluate it against a dataset file.
pub fn evaluate_checkpoint(
    config: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    out_dir: &Path,
) -> Result<MetricsReport> {
    config.validate()?;
    let model = PotentialModel::load(checkpoint)?;
    let data = load_dataset(dataset)?;
    let report = crate::metrics::evaluate(
        &model,
        &data,
        &config.eval.recall_ks,
        &config.emd_config(),
        &config.eval_temperature()?,
        config.eval.seed,
    )?;
    std::fs::create_dir_all(out_dir)?;
    report.write_csv(&out_dir.join("metrics.csv"))?;
    report.write_per_class_csv(&out_dir.join("per_class_recall.csv"))?;
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.num_train_graphs = 4;
        cfg.data.num_test_graphs = 2;
        cfg.data.feature_dim = 4;
        cfg.model.hidden_width = 6;
        cfg.train.iterations = 3;
        cfg.train.batch_size = 2;
        cfg.train.s_infer = 2;
        cfg.train.s_learn = 4;
        cfg.emd.max_iters = 3;
        cfg.emd.samples_per_step = 2;
        cfg
    }

    #[test]
    fn dry_run_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let summary = dry_run(&tiny_config()).unwrap();
        assert!(summary.contains("config ok"));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn full_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&tiny_config(), dir.path(), false).unwrap();
        for name in [
            "config.toml",
            "model.ckpt",
            "training_log.csv",
            "metrics.csv",
            "per_class_recall.csv",
            "metrics.json",
            "manifest.json",
        ] {
            assert!(outcome.run_dir.join(name).exists(), "missing {name}");
        }
        assert!(outcome.run_dir.join("data/train.jsonl").exists());
        let manifest: RunManifest = serde_json::from_str(
            &std::fs::read_to_string(outcome.run_dir.join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.checkpoint, "model.ckpt");
    }

    #[test]
    fn existing_run_dir_is_refused_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("run-fixed");
        std::fs::create_dir_all(&run_dir).unwrap();
        match run_experiment_in(&tiny_config(), &run_dir, false) {
            Err(Error::RunDirExists(_)) => {}
            other => panic!("expected refusal, got {:?}", other.map(|o| o.run_dir)),
        }
        // forced re-run succeeds
        run_experiment_in(&tiny_config(), &run_dir, true).unwrap();
    }
}
