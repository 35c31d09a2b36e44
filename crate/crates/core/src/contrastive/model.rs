use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ModalityId;
use crate::encoders::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// One encoder per modality, all mapping into the same output width.
#[derive(Clone, Debug)]
pub struct ContrastiveModel {
    encoders: BTreeMap<ModalityId, Encoder>,
    temperature: f64,
}

impl ContrastiveModel {
    pub fn new(encoders: BTreeMap<ModalityId, Encoder>, temperature: f64) -> Result<Self> {
        if encoders.len() < 2 {
            return Err(Error::Config(format!(
                "a contrastive model needs at least 2 encoders, got {}",
                encoders.len()
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        let mut dims = encoders.values().map(|e| e.config().output_dim());
        let first = dims.next().expect("at least two encoders");
        if dims.any(|d| d != first) {
            return Err(Error::Config("encoders must share one output width".into()));
        }
        Ok(ContrastiveModel {
            encoders,
            temperature,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn output_dim(&self) -> usize {
        self.encoders
            .values()
            .next()
            .map(|e| e.config().output_dim())
            .expect("model has encoders")
    }

    pub fn encoder(&self, modality: &ModalityId) -> Option<&Encoder> {
        self.encoders.get(modality)
    }

    pub fn encoders(&self) -> impl Iterator<Item = (&ModalityId, &Encoder)> {
        self.encoders.iter()
    }

    pub(crate) fn encoders_mut(&mut self) -> impl Iterator<Item = (&ModalityId, &mut Encoder)> {
        self.encoders.iter_mut()
    }

    pub fn modalities(&self) -> impl Iterator<Item = &ModalityId> {
        self.encoders.keys()
    }

    pub fn param_count(&self) -> usize {
        self.encoders.values().map(Encoder::param_count).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            temperature: self.temperature,
            encoders: self
                .encoders
                .iter()
                .map(|(m, e)| {
                    (
                        m.clone(),
                        EncoderCheckpoint {
                            config: e.config().clone(),
                            params: e.params().clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        let encoders = c
            .encoders
            .into_iter()
            .map(|(m, e)| Ok((m, Encoder::from_parts(e.config, e.params)?)))
            .collect::<Result<_>>()?;
        ContrastiveModel::new(encoders, c.temperature)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// On-disk form of a [`ContrastiveModel`]: per-modality architecture and
/// parameter tensors (shape plus flat values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub temperature: f64,
    pub encoders: BTreeMap<ModalityId, EncoderCheckpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::modality;

    fn model() -> ContrastiveModel {
        let encoders = [
            (modality("audio"), Encoder::build(EncoderConfig::mlp(3, vec![4], 5), 1).unwrap()),
            (modality("tag"), Encoder::build(EncoderConfig::attention(6, 4, 2, 4, 5), 2).unwrap()),
        ]
        .into_iter()
        .collect();
        ContrastiveModel::new(encoders, 0.1).unwrap()
    }

    #[test]
    fn checkpoint_reload_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        m.save(&path).unwrap();
        let back = ContrastiveModel::load(&path).unwrap();
        assert_eq!(back.to_checkpoint(), m.to_checkpoint());
    }

    #[test]
    fn validates_encoders_and_temperature() {
        let one: BTreeMap<_, _> =
            [(modality("audio"), Encoder::build(EncoderConfig::mlp(3, vec![], 5), 1).unwrap())]
                .into_iter()
                .collect();
        assert!(ContrastiveModel::new(one, 0.1).is_err());
        let mismatched: BTreeMap<_, _> = [
            (modality("audio"), Encoder::build(EncoderConfig::mlp(3, vec![], 5), 1).unwrap()),
            (modality("cf"), Encoder::build(EncoderConfig::mlp(3, vec![], 4), 1).unwrap()),
        ]
        .into_iter()
        .collect();
        assert!(ContrastiveModel::new(mismatched, 0.1).is_err());
        let ck = model().to_checkpoint();
        assert!(ContrastiveModel::from_checkpoint(Checkpoint { temperature: -1.0, ..ck }).is_err());
    }
}
