//! Inference: encode every available modality of an artist and average the
//! results into one shared-space vector.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::ContrastiveModel;
use super::train::gather_rows;
use crate::data::{ArtistId, ModalityId, MultimodalDataset};
use crate::embedding::{EmbeddingSet, ModalityEmbeddings};
use crate::error::{Error, Result};
use crate::numerics::normalized;

const ENCODE_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// L2-normalize each encoder output, then average.
    #[default]
    Normalized,
    /// Average raw encoder outputs.
    RawAverage,
}

/// Fused vectors plus the modalities that contributed to each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusedTable {
    pub vectors: EmbeddingSet,
    pub contributors: BTreeMap<ArtistId, BTreeSet<ModalityId>>,
}

/// Encodes every (artist, modality) row of `dataset` the model has an
/// encoder for, optionally limited to `only`. Outputs are normalized when
/// `mode` is [`FusionMode::Normalized`].
pub fn encode_dataset(
    model: &ContrastiveModel,
    dataset: &MultimodalDataset,
    mode: FusionMode,
    only: Option<&BTreeSet<ModalityId>>,
) -> Result<ModalityEmbeddings> {
    let mut out = ModalityEmbeddings::new();
    for (m, enc) in model.encoders() {
        if only.is_some_and(|o| !o.contains(m)) {
            continue;
        }
        let Some(table) = dataset.table(m) else { continue };
        let artists: Vec<ArtistId> = table.iter().map(|(a, _)| a.clone()).collect();
        for chunk in artists.chunks(ENCODE_CHUNK) {
            let y = enc.forward(&gather_rows(dataset, m, chunk)?)?;
            for (i, a) in chunk.iter().enumerate() {
                let v = match mode {
                    FusionMode::Normalized => normalized(y.row(i)),
                    FusionMode::RawAverage => y.row(i).to_vec(),
                };
                out.insert(m.clone(), a.clone(), v);
            }
        }
    }
    Ok(out)
}

/// Averages the per-modality vectors of every artist.
pub fn average_modalities(encoded: &ModalityEmbeddings) -> Result<FusedTable> {
    let mut table = FusedTable::default();
    let mut sums: BTreeMap<ArtistId, (Vec<f64>, BTreeSet<ModalityId>)> = BTreeMap::new();
    for m in encoded.modalities() {
        for (a, v) in encoded.modality(m).into_iter().flatten() {
            let (sum, ms) = sums
                .entry(a.clone())
                .or_insert_with(|| (vec![0.0; v.len()], BTreeSet::new()));
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            ms.insert(m.clone());
        }
    }
    let dim = sums.values().next().map_or(0, |(s, _)| s.len());
    table.vectors = EmbeddingSet::new(dim);
    for (a, (mut sum, ms)) in sums {
        let n = ms.len() as f64;
        for s in &mut sum {
            *s /= n;
        }
        table.vectors.insert(a.clone(), sum)?;
        table.contributors.insert(a, ms);
    }
    Ok(table)
}

/// Fused vectors for every artist with at least one encodable modality.
pub fn fuse_all(
    model: &ContrastiveModel,
    dataset: &MultimodalDataset,
    mode: FusionMode,
    only: Option<&BTreeSet<ModalityId>>,
) -> Result<FusedTable> {
    average_modalities(&encode_dataset(model, dataset, mode, only)?)
}

/// Fused vector of a single artist.
pub fn fuse(
    model: &ContrastiveModel,
    dataset: &MultimodalDataset,
    artist: &ArtistId,
    mode: FusionMode,
) -> Result<Vec<f64>> {
    let available = dataset
        .modalities_of(artist)
        .ok_or_else(|| Error::UnknownArtist(artist.to_string()))?;
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for m in available {
        let Some(enc) = model.encoder(m) else { continue };
        let y = enc.forward(&gather_rows(dataset, m, std::slice::from_ref(artist))?)?;
        let v = match mode {
            FusionMode::Normalized => normalized(y.row(0)),
            FusionMode::RawAverage => y.row(0).to_vec(),
        };
        match &mut sum {
            None => sum = Some(v),
            Some(s) => s.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
        }
        n += 1;
    }
    let mut sum = sum.ok_or_else(|| Error::NoModalityAvailable(artist.to_string()))?;
    for s in &mut sum {
        *s /= n as f64;
    }
    Ok(sum)
}
