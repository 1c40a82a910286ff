//! Versioned structured-text checkpoints with exact float64 round-trip.
//!
//! A checkpoint is a single JSON document holding the format version, the
//! model kind and configuration, the training configuration that produced it
//! (when any), every named parameter as a flat row-major array, the
//! standardization statistics of the training data (when any), and the
//! data-space equilibrium. Floats inside parameter arrays and the
//! equilibrium are stored as the 16-hex-digit big-endian bit pattern of the
//! `f64` (`format!("{:016x}", v.to_bits())`), so every value — including
//! negative zero, subnormals, and values with no short decimal form —
//! survives save → load → save byte-identically. Configuration floats go
//! through serde_json's shortest-round-trip decimal encoding, which is also
//! exact.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::model::{ComposedModel, ModelConfig, ModelKind};
use crate::nn::HasParams;
use crate::train::TrainConfig;
use crate::{Error, Result, Tensor};

/// Current checkpoint format version. Loading any other version fails.
pub const CHECKPOINT_VERSION: u32 = 1;

// ── Document types ──────────────────────────────────────────────────────────

/// One named parameter: shape plus flat row-major data, hex-encoded.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<String>,
}

/// The on-disk document. Field order is the serialization order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_kind: ModelKind,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub params: Vec<ParamRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    /// Data-space equilibrium, hex-encoded like parameter data. Kept as its
    /// own field (it is the one piece of state consumers need without
    /// reconstructing the model); it duplicates the frozen `x_star`
    /// parameter and wins over it on load.
    pub equilibrium: Vec<String>,
}

fn encode(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn decode(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(Error::Checkpoint(format!(
            "bad hex float {s:?}: expected 16 hex digits"
        )));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Checkpoint(format!("bad hex float {s:?}")))
}

impl Checkpoint {
    /// Capture a model (and optionally the training config and the data
    /// standardization it was trained under) into a document.
    pub fn from_model(
        model: &ComposedModel,
        train: Option<&TrainConfig>,
        standardization: Option<&Standardization>,
    ) -> Checkpoint {
        let mut params = Vec::new();
        model.visit_params(&mut |p| {
            params.push(ParamRecord {
                name: p.name().to_string(),
                shape: p.value().shape().to_vec(),
                data: p.value().data().iter().map(|&v| encode(v)).collect(),
            });
        });
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model_kind: model.kind(),
            model: model.config().clone(),
            train: train.cloned(),
            params,
            standardization: standardization.cloned(),
            equilibrium: model.equilibrium().iter().map(|&v| encode(v)).collect(),
        }
    }

    /// Rebuild the model this document describes. Validates the version, the
    /// kind/config consistency, and that the stored parameters exactly cover
    /// the model's parameters with matching shapes (any mismatch is reported
    /// by parameter name).
    pub fn into_model(&self) -> Result<ComposedModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads version {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        if self.model_kind != self.model.kind {
            return Err(Error::Checkpoint(format!(
                "model_kind {} disagrees with the embedded config's kind {}",
                self.model_kind, self.model.kind
            )));
        }
        self.model.validate()?;

        let mut stored: BTreeMap<&str, &ParamRecord> = BTreeMap::new();
        for rec in &self.params {
            if stored.insert(rec.name.as_str(), rec).is_some() {
                return Err(Error::Checkpoint(format!(
                    "duplicate parameter {:?}",
                    rec.name
                )));
            }
        }

        // The seed is irrelevant: every parameter is overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ComposedModel::new(self.model.clone(), &mut rng)?;

        let mut failure: Option<Error> = None;
        let mut used = 0usize;
        model.visit_params_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let Some(rec) = stored.get(p.name()) else {
                failure = Some(Error::Checkpoint(format!(
                    "checkpoint is missing parameter {:?}",
                    p.name()
                )));
                return;
            };
            used += 1;
            if rec.shape != p.value().shape() {
                failure = Some(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?} but the model expects {:?}",
                    p.name(),
                    rec.shape,
                    p.value().shape()
                )));
                return;
            }
            let expected: usize = rec.shape.iter().product();
            if rec.data.len() != expected {
                failure = Some(Error::Checkpoint(format!(
                    "parameter {:?}: {} values for shape {:?} ({} expected)",
                    p.name(),
                    rec.data.len(),
                    rec.shape,
                    expected
                )));
                return;
            }
            let mut values = Vec::with_capacity(rec.data.len());
            for s in &rec.data {
                match decode(s) {
                    Ok(v) => values.push(v),
                    Err(e) => {
                        failure = Some(Error::Checkpoint(format!(
                            "parameter {:?}: {e}",
                            p.name()
                        )));
                        return;
                    }
                }
            }
            p.set_value(Tensor::new(rec.shape.clone(), values));
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if used != self.params.len() {
            let mut model_names = Vec::new();
            model.visit_params(&mut |p| model_names.push(p.name().to_string()));
            let extra = self
                .params
                .iter()
                .find(|r| !model_names.iter().any(|n| n == &r.name))
                .map(|r| r.name.clone())
                .unwrap_or_default();
            return Err(Error::Checkpoint(format!(
                "checkpoint carries parameter {extra:?} that the configured model does not have"
            )));
        }

        if self.equilibrium.len() != model.dim() {
            return Err(Error::Checkpoint(format!(
                "equilibrium has {} entries but the model dimension is {}",
                self.equilibrium.len(),
                model.dim()
            )));
        }
        let x_star: Result<Vec<f64>> = self.equilibrium.iter().map(|s| decode(s)).collect();
        model.set_equilibrium(&x_star?);
        Ok(model)
    }

    /// Serialize to the canonical text form (pretty JSON + trailing newline).
    pub fn to_text(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    /// Parse the canonical text form.
    pub fn from_text(text: &str) -> Result<Checkpoint> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.display().to_string().into(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string().into(),
            source,
        })?;
        Checkpoint::from_text(&text)
    }
}

/// Convenience: capture and write in one step.
pub fn save_checkpoint(
    model: &ComposedModel,
    train: Option<&TrainConfig>,
    standardization: Option<&Standardization>,
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint::from_model(model, train, standardization).save(path)
}

/// Convenience: read and rebuild in one step, returning the model together
/// with the full document (for the standardization stats and configs).
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ComposedModel, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.into_model()?;
    Ok((model, ckpt))
}

// ── tests ───────────────────────────────────────────────────────────────────
