//! The potential model: seven feature maps realized as small MLPs.
//!
//! Unary maps (`h_obj`, `h_pred`) consume one node's feature vector and emit
//! per-category score contributions. Pairwise maps (`g_op`, `g_oo`, `g_og`,
//! `g_po`, `g_pg`) consume the concatenation of the target node's and a
//! neighbor's feature vectors and emit a full compatibility table over
//! `(target category, neighbor category)` pairs, flattened row-major with the
//! target category as the row. Scores follow the "higher is more compatible"
//! convention throughout.
//!
//! The per-category message a neighbor sends to a target node is the
//! log-mean-exp over the neighbor axis of that table, i.e. the table with
//! one side eliminated. A map whose parameters are all zero therefore sends
//! an exactly zero message.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{NodeKind, VocabSizes};
use crate::mlp::{Mlp, MlpGrads};

/// Which pairwise map covers a (target kind, neighbor kind) edge term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    ObjPred,
    ObjObj,
    ObjGlobal,
    PredObj,
    PredGlobal,
}

/// Map a directed (target, neighbor) kind pair to its pairwise map. The
/// global node is never a target: it contributes context through the edges
/// pointing at objects and predicates, but its own label carries no unary
/// term and is never inferred.
pub fn pair_kind(target: NodeKind, neighbor: NodeKind) -> Option<PairKind> {
    match (target, neighbor) {
        (NodeKind::Object, NodeKind::Predicate) => Some(PairKind::ObjPred),
        (NodeKind::Object, NodeKind::Object) => Some(PairKind::ObjObj),
        (NodeKind::Object, NodeKind::Global) => Some(PairKind::ObjGlobal),
        (NodeKind::Predicate, NodeKind::Object) => Some(PairKind::PredObj),
        (NodeKind::Predicate, NodeKind::Global) => Some(PairKind::PredGlobal),
        (NodeKind::Global, _) => None,
        (NodeKind::Predicate, NodeKind::Predicate) => None, // forbidden edge
    }
}

pub const MAP_NAMES: [&str; 7] = ["h_obj", "h_pred", "g_op", "g_oo", "g_og", "g_po", "g_pg"];

/// All learnable parameters: two unary and five pairwise feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab: VocabSizes,
    pub h_obj: Mlp,
    pub h_pred: Mlp,
    pub g_op: Mlp,
    pub g_oo: Mlp,
    pub g_og: Mlp,
    pub g_po: Mlp,
    pub g_pg: Mlp,
}

/// Shape parameters of a [`PotentialModel`]; everything needed to rebuild
/// the layout (but not the weights).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab: VocabSizes,
}

impl PotentialModel {
    /// All-zero parameters: every score and message is exactly zero.
    pub fn zeros(shape: ModelShape) -> Self {
        Self::build(shape, |i, h, o, _| Mlp::zeros(i, h, o), &mut ())
    }

    /// Glorot-initialized parameters.
    pub fn random<R: Rng>(shape: ModelShape, rng: &mut R) -> Self {
        Self::build(shape, |i, h, o, rng| Mlp::glorot(i, h, o, rng), rng)
    }

    fn build<S, F: FnMut(usize, usize, usize, &mut S) -> Mlp>(
        shape: ModelShape,
        mut make: F,
        state: &mut S,
    ) -> Self {
        let d = shape.feature_dim;
        let h = shape.hidden;
        let (vo, vp, vg) = (
            shape.vocab.objects,
            shape.vocab.predicates,
            shape.vocab.global,
        );
        PotentialModel {
            feature_dim: d,
            hidden: h,
            vocab: shape.vocab,
            h_obj: make(d, h, vo, state),
            h_pred: make(d, h, vp, state),
            g_op: make(2 * d, h, vo * vp, state),
            g_oo: make(2 * d, h, vo * vo, state),
            g_og: make(2 * d, h, vo * vg, state),
            g_po: make(2 * d, h, vp * vo, state),
            g_pg: make(2 * d, h, vp * vg, state),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            feature_dim: self.feature_dim,
            hidden: self.hidden,
            vocab: self.vocab,
        }
    }

    /// Scale every unary output layer by `unary` and every pairwise output
    /// layer by `pairwise`; handy for controlling coupling strength of
    /// randomly initialized models.
    pub fn scale_outputs(&mut self, unary: f64, pairwise: f64) {
        self.h_obj.scale_output(unary);
        self.h_pred.scale_output(unary);
        for m in [
            &mut self.g_op,
            &mut self.g_oo,
            &mut self.g_og,
            &mut self.g_po,
            &mut self.g_pg,
        ] {
            m.scale_output(pairwise);
        }
    }

    pub fn unary_map(&self, kind: NodeKind) -> Option<&Mlp> {
        match kind {
            NodeKind::Object => Some(&self.h_obj),
            NodeKind::Predicate => Some(&self.h_pred),
            NodeKind::Global => None,
        }
    }

    pub fn pair_map(&self, kind: PairKind) -> &Mlp {
        match kind {
            PairKind::ObjPred => &self.g_op,
            PairKind::ObjObj => &self.g_oo,
            PairKind::ObjGlobal => &self.g_og,
            PairKind::PredObj => &self.g_po,
            PairKind::PredGlobal => &self.g_pg,
        }
    }

    /// Table dimensions `(target vocab, neighbor vocab)` for a pairwise map.
    pub fn pair_dims(&self, kind: PairKind) -> (usize, usize) {
        let v = self.vocab;
        match kind {
            PairKind::ObjPred => (v.objects, v.predicates),
            PairKind::ObjObj => (v.objects, v.objects),
            PairKind::ObjGlobal => (v.objects, v.global),
            PairKind::PredObj => (v.predicates, v.objects),
            PairKind::PredGlobal => (v.predicates, v.global),
        }
    }

    pub fn maps(&self) -> [&Mlp; 7] {
        [
            &self.h_obj,
            &self.h_pred,
            &self.g_op,
            &self.g_oo,
            &self.g_og,
            &self.g_po,
            &self.g_pg,
        ]
    }

    pub fn maps_mut(&mut self) -> [&mut Mlp; 7] {
        [
            &mut self.h_obj,
            &mut self.h_pred,
            &mut self.g_op,
            &mut self.g_oo,
            &mut self.g_og,
            &mut self.g_po,
            &mut self.g_pg,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.maps().iter().map(|m| m.num_params()).sum()
    }

    /// Parameters flattened in map order (`MAP_NAMES`), each map laid out as
    /// `w1, b1, w2, b2`.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in self.maps() {
            m.flatten_params(&mut out);
        }
        out
    }

    pub fn unflatten_params(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                context: "model parameter blob",
                expected: self.num_params(),
                got: data.len(),
            });
        }
        let mut rest = data;
        for m in self.maps_mut() {
            rest = m.unflatten_params(rest)?;
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grads: &ModelGrads, alpha: f64) {
        for (m, g) in self.maps_mut().into_iter().zip(grads.maps.iter()) {
            m.sgd_step(g, alpha);
        }
    }

    /// Stable hex digest of the model shape; checked when loading
    /// checkpoints.
    pub fn config_hash(shape: &ModelShape) -> String {
        let canonical = format!(
            "iwvi-model:d={};h={};vo={};vp={};vg={}",
            shape.feature_dim,
            shape.hidden,
            shape.vocab.objects,
            shape.vocab.predicates,
            shape.vocab.global
        );
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Write the checkpoint: one line of JSON header followed by the raw
    /// little-endian `f64` parameter blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format: "iwvi-model".into(),
            version: 1,
            shape: self.shape(),
            param_count: self.num_params(),
            config_hash: Self::config_hash(&self.shape()),
        };
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer(&mut file, &header)?;
        file.write_all(b"\n")?;
        let params = self.flatten_params();
        let mut blob = Vec::with_capacity(params.len() * 8);
        for p in &params {
            blob.extend_from_slice(&p.to_le_bytes());
        }
        file.write_all(&blob)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())?;
        if header.format != "iwvi-model" {
            return Err(Error::CheckpointMismatch(format!(
                "unknown format `{}`",
                header.format
            )));
        }
        let expected_hash = Self::config_hash(&header.shape);
        if header.config_hash != expected_hash {
            return Err(Error::CheckpointMismatch(format!(
                "config hash {} does not match shape (expected {})",
                header.config_hash, expected_hash
            )));
        }
        let mut model = Self::zeros(header.shape);
        if header.param_count != model.num_params() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} does not match shape ({})",
                header.param_count,
                model.num_params()
            )));
        }
        let mut blob = Vec::new();
        reader.read_to_end(&mut blob)?;
        if blob.len() != header.param_count * 8 {
            return Err(Error::CheckpointMismatch(format!(
                "blob holds {} bytes, expected {}",
                blob.len(),
                header.param_count * 8
            )));
        }
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.unflatten_params(&params)?;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    shape: ModelShape,
    param_count: usize,
    config_hash: String,
}

/// Gradient buffers for every map, in the same fixed order as
/// [`PotentialModel::maps`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub maps: Vec<MlpGrads>,
}

impl ModelGrads {
    pub fn zeros_like(model: &PotentialModel) -> Self {
        ModelGrads {
            maps: model.maps().iter().map(|m| MlpGrads::zeros_like(m)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.maps.iter_mut().zip(&other.maps) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.maps {
            g.scale(factor);
        }
    }

    pub fn grads_for(&mut self, kind: PairKind) -> &mut MlpGrads {
        let idx = match kind {
            PairKind::ObjPred => 2,
            PairKind::ObjObj => 3,
            PairKind::ObjGlobal => 4,
            PairKind::PredObj => 5,
            PairKind::PredGlobal => 6,
        };
        &mut self.maps[idx]
    }

    pub fn unary_grads_for(&mut self, kind: NodeKind) -> Option<&mut MlpGrads> {
        match kind {
            NodeKind::Object => Some(&mut self.maps[0]),
            NodeKind::Predicate => Some(&mut self.maps[1]),
            NodeKind::Global => None,
        }
    }

    /// Per-map flattened gradients, paired with map names.
    pub fn blocks(&self) -> Vec<(&'static str, Vec<f64>)> {
        self.maps
            .iter()
            .zip(MAP_NAMES)
            .map(|(g, name)| {
                let mut flat = Vec::new();
                g.flatten(&mut flat);
                (name, flat)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn shape() -> ModelShape {
        ModelShape {
            feature_dim: 3,
            hidden: 4,
            vocab: VocabSizes {
                objects: 3,
                predicates: 2,
                global: 2,
            },
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = derive_rng(3, &[1]);
        let model = PotentialModel::random(shape(), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let loaded = PotentialModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn checkpoint_rejects_tampered_hash() {
        let model = PotentialModel::zeros(shape());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();

        let data = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&data);
        let tampered = text.replacen("\"feature_dim\":3", "\"feature_dim\":4", 1);
        std::fs::write(&path, tampered.as_bytes()).unwrap();
        assert!(matches!(
            PotentialModel::load(&path),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = derive_rng(4, &[2]);
        let model = PotentialModel::random(shape(), &mut rng);
        let flat = model.flatten_params();
        assert_eq!(flat.len(), model.num_params());
        let mut other = PotentialModel::zeros(shape());
        other.unflatten_params(&flat).unwrap();
        assert_eq!(model, other);
    }

    #[test]
    fn global_is_never_a_target() {
        assert!(pair_kind(NodeKind::Global, NodeKind::Object).is_none());
        assert_eq!(
            pair_kind(NodeKind::Predicate, NodeKind::Global),
            Some(PairKind::PredGlobal)
        );
    }
}
