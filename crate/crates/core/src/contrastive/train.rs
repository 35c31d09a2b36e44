use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fusion::FusionMode;
use super::loss::{default_pairs, total_loss_graph};
use super::model::{ContrastiveModel, DEFAULT_TEMPERATURE};
use crate::data::{ArtistId, ModalityId, MultimodalDataset};
use crate::encoders::{Encoder, EncoderSpec, PRESETS};
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};
use crate::rng;

/// Training configuration, as read from JSON. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Encoder per modality. Modalities left out fall back to the preset
    /// of the same name.
    pub encoders: BTreeMap<ModalityId, EncoderSpec>,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Ordered `(anchor, positive)` pairs; defaults to every unordered pair
    /// anchored on the lexicographically smaller modality.
    pub pairs: Option<Vec<(ModalityId, ModalityId)>>,
    pub symmetrize: bool,
    pub fusion: FusionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoders: BTreeMap::new(),
            temperature: DEFAULT_TEMPERATURE,
            batch_size: 128,
            epochs: 100,
            lr: 1e-4,
            seed: 0,
            pairs: None,
            symmetrize: false,
            fusion: FusionMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    fn spec_for(&self, modality: &ModalityId) -> Result<EncoderSpec> {
        match self.encoders.get(modality) {
            Some(spec) => Ok(spec.clone()),
            None if PRESETS.contains(&modality.as_str()) => Ok(EncoderSpec::preset(modality.as_str())),
            None => Err(Error::Config(format!(
                "no encoder configured for modality {modality}"
            ))),
        }
    }

    /// Fresh, seeded encoders for every modality of `dataset`.
    pub fn build_model(&self, dataset: &MultimodalDataset) -> Result<ContrastiveModel> {
        let mut encoders = BTreeMap::new();
        for (i, table) in dataset.tables().enumerate() {
            let m = table.modality();
            let config = self.spec_for(m)?.resolve(table.dim())?;
            let seed = rng::mix(self.seed, 100 + i as u64);
            encoders.insert(m.clone(), Encoder::build(config, seed)?);
        }
        ContrastiveModel::new(encoders, self.temperature)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

pub struct TrainOutcome {
    pub model: ContrastiveModel,
    pub log: Vec<EpochLoss>,
}

/// Stacks the rows of `artists` for one modality.
pub fn gather_rows(
    dataset: &MultimodalDataset,
    modality: &ModalityId,
    artists: &[ArtistId],
) -> Result<Tensor> {
    let table = dataset
        .table(modality)
        .ok_or_else(|| Error::IncompleteCoverage(format!("dataset has no modality {modality}")))?;
    let mut data = Vec::with_capacity(artists.len() * table.dim());
    for a in artists {
        let row = table.get(a).ok_or_else(|| {
            Error::IncompleteCoverage(format!("artist {a} has no {modality} embedding"))
        })?;
        data.extend_from_slice(row);
    }
    Tensor::matrix(artists.len(), table.dim(), data)
}

/// Loss of `model` on one batch of artists, recorded on `graph`.
pub fn batch_loss(
    graph: &mut Graph,
    model: &ContrastiveModel,
    dataset: &MultimodalDataset,
    artists: &[ArtistId],
    pairs: &[(ModalityId, ModalityId)],
    symmetrize: bool,
) -> Result<crate::numerics::Var> {
    let mut outputs = BTreeMap::new();
    for (m, enc) in model.encoders() {
        let x = graph.input(gather_rows(dataset, m, artists)?)?;
        outputs.insert(m.clone(), enc.forward_graph(graph, &format!("{m}/"), x)?);
    }
    total_loss_graph(graph, &outputs, model.temperature(), pairs, symmetrize)
}

/// Trains encoders for every modality of `dataset` on its full-coverage
/// artists.
///
/// Each epoch shuffles the pool with the seeded RNG and cuts it into
/// batches of `batch_size`, dropping the final partial batch.
pub fn train(dataset: &MultimodalDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let model = config.build_model(dataset)?;
    train_model(model, dataset, config)
}

/// Continues training an existing model.
pub fn train_model(
    mut model: ContrastiveModel,
    dataset: &MultimodalDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut pool: Vec<ArtistId> = dataset.full_coverage_subset().into_iter().collect();
    if pool.is_empty() {
        return Err(Error::IncompleteCoverage(
            "no artist has every modality; training pool is empty".into(),
        ));
    }
    let batches = pool.len() / config.batch_size;
    if batches == 0 {
        return Err(Error::Config(format!(
            "training pool of {} artists is smaller than batch_size {}",
            pool.len(),
            config.batch_size
        )));
    }
    let pairs = match &config.pairs {
        Some(p) => p.clone(),
        None => default_pairs(model.modalities()),
    };
    for (a, b) in &pairs {
        if model.encoder(a).is_none() || model.encoder(b).is_none() || a == b {
            return Err(Error::Config(format!("invalid training pair ({a}, {b})")));
        }
    }

    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut shuffle = rng::derived(config.seed, 1);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        pool.shuffle(&mut shuffle);
        let mut sum = 0.0;
        for batch in pool.chunks_exact(config.batch_size) {
            let mut graph = Graph::new();
            let loss = batch_loss(&mut graph, &model, dataset, batch, &pairs, config.symmetrize)?;
            let value = graph.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss in epoch {epoch}")));
            }
            sum += value;
            let grads = graph.backward(loss)?.into_params();
            adam.step(
                model
                    .encoders_mut()
                    .flat_map(|(m, e)| {
                        let prefix = format!("{m}/");
                        e.params_mut()
                            .iter_mut()
                            .map(move |(n, t)| (format!("{prefix}{n}"), t))
                    }),
                &grads,
            )?;
        }
        log.push(EpochLoss {
            epoch,
            mean_loss: sum / batches as f64,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Loss log as JSON lines of `{epoch, mean_loss}`.
pub fn format_loss_log(log: &[EpochLoss]) -> Result<String> {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::fixtures::modality;
    use crate::encoders::EncoderKind;
    use crate::synthetic::{generate_synthetic, LogNormalParams, ModalityView, SyntheticConfig};

    pub(crate) fn small_dataset(n: usize, coverage: f64) -> MultimodalDataset {
        let view = |dim, noise_sigma| ModalityView {
            dim,
            noise_sigma,
            coverage,
            scale: 1.0,
            popularity_bias: 0.0,
        };
        generate_synthetic(&SyntheticConfig {
            n_artists: n,
            latent_dim: 4,
            modalities: [
                (modality("audio"), view(6, 0.2)),
                (modality("cf"), view(5, 0.1)),
                (modality("tag"), view(7, 0.3)),
            ]
            .into_iter()
            .collect(),
            neighbors: 3.min(n - 1),
            popularity: LogNormalParams::default(),
            noise_heterogeneity: 0.0,
            seed: 11,
        })
        .unwrap()
    }

    pub(crate) fn small_config() -> TrainConfig {
        let mlp = |hidden: Vec<usize>| EncoderSpec {
            kind: Some(EncoderKind::Mlp),
            hidden_dims: Some(hidden),
            output_dim: Some(8),
            ..Default::default()
        };
        let attention = EncoderSpec {
            kind: Some(EncoderKind::Attention),
            model_width: Some(8),
            num_heads: Some(2),
            token_size: Some(4),
            output_dim: Some(8),
            ..Default::default()
        };
        TrainConfig {
            encoders: [
                (modality("audio"), mlp(vec![8])),
                (modality("cf"), mlp(vec![])),
                (modality("tag"), attention),
            ]
            .into_iter()
            .collect(),
            batch_size: 16,
            epochs: 50,
            lr: 1e-3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn loss_decreases_on_synthetic_fixture() {
        let ds = small_dataset(64, 1.0);
        let out = train(&ds, &small_config()).unwrap();
        assert_eq!(out.log.len(), 50);
        let first = out.log[0].mean_loss;
        let last = out.log[49].mean_loss;
        assert!(last < first, "first {first}, last {last}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let ds = small_dataset(48, 1.0);
        let mut config = small_config();
        config.epochs = 3;
        let a = train(&ds, &config).unwrap();
        let b = train(&ds, &config).unwrap();
        assert_eq!(a.model.to_checkpoint(), b.model.to_checkpoint());
        assert_eq!(a.log, b.log);
        config.seed += 1;
        let c = train(&ds, &config).unwrap();
        assert_ne!(a.model.to_checkpoint(), c.model.to_checkpoint());
    }

    #[test]
    fn partial_batch_is_dropped() {
        let ds = small_dataset(3, 1.0);
        let mut config = small_config();
        config.batch_size = 2;
        config.epochs = 1;
        let model = config.build_model(&ds).unwrap();
        let before = model.to_checkpoint();
        let out = train_model(model, &ds, &config).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_ne!(out.model.to_checkpoint(), before);

        config.batch_size = 4;
        let model = config.build_model(&ds).unwrap();
        assert!(matches!(train_model(model, &ds, &config), Err(Error::Config(_))));
    }

    #[test]
    fn empty_pool_is_incomplete_coverage() {
        let ds = small_dataset(20, 1.0);
        let keep_one = |a: &ArtistId, m: &ModalityId| {
            let first = ds.modalities_of(a).unwrap().iter().next().unwrap();
            m == first
        };
        let masked = ds.mask_modalities(keep_one).unwrap();
        let config = small_config();
        assert!(matches!(train(&masked, &config), Err(Error::IncompleteCoverage(_))));
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = small_config();
        let json = serde_json::to_string(&config).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        let defaults: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(defaults.batch_size, 128);
        assert_eq!(defaults.lr, 1e-4);
        assert_eq!(defaults.temperature, 0.1);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batchsize": 3}"#).is_err());
    }

    #[test]
    fn loss_log_is_json_lines() {
        let log = [EpochLoss { epoch: 1, mean_loss: 2.5 }, EpochLoss { epoch: 2, mean_loss: 2.0 }];
        assert_eq!(
            format_loss_log(&log).unwrap(),
            "{\"epoch\":1,\"mean_loss\":2.5}\n{\"epoch\":2,\"mean_loss\":2.0}\n"
        );
    }
}
