//! Versioned JSON checkpoint: config, named tensors and optimizer moments,
//! each tensor stored as base64 of little-endian scalars.

use super::params::{AdamState, ParamSet, Tensor};
use super::{Model, ModelConfig, Real};
use crate::error::{Error, Result};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "tapadapt-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub step_count: u64,
    pub tensors: Vec<TensorRecord>,
    pub adam_m: Vec<String>,
    pub adam_v: Vec<String>,
}

pub(crate) fn encode<R: Real>(values: &[R]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * R::BYTES);
    for v in values {
        v.write_le(&mut bytes);
    }
    STANDARD.encode(bytes)
}

pub(crate) fn decode<R: Real>(text: &str, expected: usize, what: &str) -> Result<Vec<R>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::parse(what, format!("invalid base64: {e}")))?;
    if bytes.len() != expected * R::BYTES {
        return Err(Error::parse(
            what,
            format!("expected {} bytes, found {}", expected * R::BYTES, bytes.len()),
        ));
    }
    Ok(bytes.chunks_exact(R::BYTES).map(R::read_le).collect())
}

impl ModelCheckpoint {
    pub fn from_model<R: Real>(model: &Model<R>) -> Self {
        let params = model.params();
        let adam = model.optimizer_state();
        ModelCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dtype: R::DTYPE.into(),
            config: model.config().clone(),
            step_count: model.step_count(),
            tensors: params
                .tensors
                .iter()
                .map(|t| TensorRecord {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: encode(&t.data),
                })
                .collect(),
            adam_m: adam.m.iter().map(|m| encode(m)).collect(),
            adam_v: adam.v.iter().map(|v| encode(v)).collect(),
        }
    }

    pub fn into_model<R: Real>(self) -> Result<Model<R>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::parse("checkpoint", format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::parse("checkpoint", format!("unsupported version {}", self.version)));
        }
        if self.dtype != R::DTYPE {
            return Err(Error::parse(
                "checkpoint",
                format!("stored as {}, requested {}", self.dtype, R::DTYPE),
            ));
        }
        let mut model = Model::<R>::new(self.config)?;
        let template = model.params().clone();
        if template.len() != self.tensors.len() || self.adam_m.len() != self.tensors.len() || self.adam_v.len() != self.tensors.len() {
            return Err(Error::parse("checkpoint", "tensor count does not match the configured architecture"));
        }
        let mut params = ParamSet::default();
        let mut adam = AdamState { m: Vec::new(), v: Vec::new() };
        for (i, (rec, want)) in self.tensors.iter().zip(&template.tensors).enumerate() {
            if rec.name != want.name || rec.shape != want.shape {
                return Err(Error::parse(
                    format!("tensor {}", rec.name),
                    format!("expected {} {:?}", want.name, want.shape),
                ));
            }
            let len = want.data.len();
            params.tensors.push(Tensor {
                name: rec.name.clone(),
                shape: rec.shape.clone(),
                data: decode(&rec.data, len, &rec.name)?,
            });
            adam.m.push(decode(&self.adam_m[i], len, &rec.name)?);
            adam.v.push(decode(&self.adam_v[i], len, &rec.name)?);
        }
        model.restore_state(params, adam, self.step_count);
        Ok(model)
    }
}

pub fn save_checkpoint<R: Real>(model: &Model<R>, path: impl AsRef<Path>) -> Result<()> {
    let ck = ModelCheckpoint::from_model(model);
    std::fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint<R: Real>(path: impl AsRef<Path>) -> Result<Model<R>> {
    let bytes = std::fs::read(path)?;
    let ck: ModelCheckpoint = serde_json::from_slice(&bytes)?;
    ck.into_model()
}
