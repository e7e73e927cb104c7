//! TOML run configuration with `[data]`, `[model]`, `[emd]`, `[train]` and
//! `[eval]` sections. Unknown keys are rejected and range violations report
//! the offending field path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emd::EmdConfig;
use crate::error::{Error, Result};
use crate::graph::VocabSizes;
use crate::learning::{OptimizerKind, TrainConfig};
use crate::potentials::ModelShape;
use crate::sampler::Temperature;
use crate::synth::SyntheticDatasetSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub emd: EmdSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub num_train_graphs: usize,
    pub num_test_graphs: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub predicates_min: usize,
    pub predicates_max: usize,
    pub vocab_objects: usize,
    pub vocab_predicates: usize,
    pub vocab_global: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub imbalance_exponent: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = SyntheticDatasetSpec::default();
        DataSection {
            num_train_graphs: d.num_train_graphs,
            num_test_graphs: d.num_test_graphs,
            objects_min: d.objects_min,
            objects_max: d.objects_max,
            predicates_min: d.predicates_min,
            predicates_max: d.predicates_max,
            vocab_objects: d.vocab.objects,
            vocab_predicates: d.vocab.predicates,
            vocab_global: d.vocab.global,
            feature_dim: d.feature_dim,
            feature_noise: d.feature_noise,
            imbalance_exponent: d.imbalance_exponent,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { hidden_width: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmdSection {
    pub max_iters: usize,
    pub gamma0: f64,
    pub epsilon: f64,
    pub samples_per_step: usize,
}

impl Default for EmdSection {
    fn default() -> Self {
        let d = EmdConfig::default();
        EmdSection {
            max_iters: d.max_iters,
            gamma0: d.gamma0,
            epsilon: d.epsilon,
            samples_per_step: d.samples_per_step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub s_infer: usize,
    pub s_learn: usize,
    pub tau0: f64,
    pub tau_min: f64,
    pub beta: f64,
    pub optimizer: OptimizerKind,
    pub random_pi_init: bool,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            iterations: d.iterations,
            s_infer: d.s_infer,
            s_learn: d.s_learn,
            tau0: d.tau0,
            tau_min: d.tau_min,
            beta: d.beta,
            optimizer: d.optimizer,
            random_pi_init: d.random_pi_init,
            warm_start: d.warm_start,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub recall_ks: Vec<usize>,
    /// Softmax temperature used at evaluation; defaults to the training
    /// floor.
    pub tau: f64,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            recall_ks: vec![20, 50, 100],
            tau: 0.2,
            seed: 1,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSection::default(),
            model: ModelSection::default(),
            emd: EmdSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        self.emd_config().validate()?;
        self.train_config().validate()?;
        if self.model.hidden_width == 0 {
            return Err(Error::InvalidConfig {
                field: "model.hidden_width".into(),
                message: "must be positive".into(),
            });
        }
        if self.eval.recall_ks.is_empty() {
            return Err(Error::InvalidConfig {
                field: "eval.recall_ks".into(),
                message: "at least one K is required".into(),
            });
        }
        if self.eval.tau <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "eval.tau".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn vocab(&self) -> VocabSizes {
        VocabSizes {
            objects: self.data.vocab_objects,
            predicates: self.data.vocab_predicates,
            global: self.data.vocab_global,
        }
    }

    pub fn dataset_spec(&self) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            num_train_graphs: self.data.num_train_graphs,
            num_test_graphs: self.data.num_test_graphs,
            objects_min: self.data.objects_min,
            objects_max: self.data.objects_max,
            predicates_min: self.data.predicates_min,
            predicates_max: self.data.predicates_max,
            vocab: self.vocab(),
            feature_dim: self.data.feature_dim,
            feature_noise: self.data.feature_noise,
            imbalance_exponent: self.data.imbalance_exponent,
            seed: self.data.seed,
        }
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            feature_dim: self.data.feature_dim,
            hidden: self.model.hidden_width,
            vocab: self.vocab(),
        }
    }

    pub fn emd_config(&self) -> EmdConfig {
        EmdConfig {
            max_iters: self.emd.max_iters,
            gamma0: self.emd.gamma0,
            epsilon: self.emd.epsilon,
            samples_per_step: self.emd.samples_per_step,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            iterations: self.train.iterations,
            s_infer: self.train.s_infer,
            s_learn: self.train.s_learn,
            tau0: self.train.tau0,
            tau_min: self.train.tau_min,
            beta: self.train.beta,
            optimizer: self.train.optimizer,
            random_pi_init: self.train.random_pi_init,
            warm_start: self.train.warm_start,
            seed: self.train.seed,
        }
    }

    pub fn eval_temperature(&self) -> Result<Temperature> {
        Temperature::new(self.eval.tau, self.eval.tau, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.data.num_train_graphs, cfg.data.num_train_graphs);
        assert_eq!(back.eval.recall_ks, cfg.eval.recall_ks);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [data]
            num_train_graphs = 10
            num_test_graphs = 5
            objects_min = 2
            objects_max = 3
            predicates_min = 1
            predicates_max = 2
            vocab_objects = 4
            vocab_predicates = 3
            vocab_global = 2
            feature_dim = 8
            feature_noise = 0.25
            imbalance_exponent = 0.0
            seed = 7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.data.num_train_graphs, 10);
        assert_eq!(cfg.train.batch_size, 12);
        assert_eq!(cfg.emd.max_iters, 50);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[data]\nnum_training_graphs = 3\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("num_training_graphs"), "{text}");
    }

    #[test]
    fn range_violations_name_the_field() {
        let mut cfg = RunConfig::default();
        cfg.train.tau_min = 0.0;
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "train.tau_min"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
