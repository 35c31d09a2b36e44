//! Expected contrastive loss: how much closer an artist's own modalities
//! are to each other than to other artists.
//!
//! `ECL(i, u, v) = d(i_u, i_v) − mean_{j ≠ i} d(i_u, j_v)` with cosine
//! distance `d = 1 − cos`, averaged over ordered modality pairs `u ≠ v`
//! available for `i`. The inner mean runs over all other artists having
//! modality `v`.

use std::collections::BTreeMap;

use crate::data::{ArtistId, ModalityId};
use crate::embedding::ModalityEmbeddings;
use crate::error::{Error, Result};
use crate::numerics::{dot, normalized};

/// Per-modality sums of unit vectors, so each ECL query is `O(pairs · d)`.
pub struct EclIndex<'a> {
    embeddings: &'a ModalityEmbeddings,
    unit_sums: BTreeMap<ModalityId, (Vec<f64>, usize)>,
}

impl<'a> EclIndex<'a> {
    pub fn new(embeddings: &'a ModalityEmbeddings) -> Self {
        let mut unit_sums = BTreeMap::new();
        for m in embeddings.modalities() {
            let rows = embeddings.modality(m).expect("listed modality");
            let dim = rows.values().next().map_or(0, Vec::len);
            let mut sum = vec![0.0; dim];
            for v in rows.values() {
                for (s, x) in sum.iter_mut().zip(normalized(v)) {
                    *s += x;
                }
            }
            unit_sums.insert(m.clone(), (sum, rows.len()));
        }
        EclIndex {
            embeddings,
            unit_sums,
        }
    }

    pub fn ecl(&self, artist: &ArtistId) -> Result<f64> {
        let own: Vec<(&ModalityId, Vec<f64>)> = self
            .embeddings
            .modalities_of(artist)
            .map(|m| (m, normalized(self.embeddings.get(artist, m).expect("listed"))))
            .collect();
        if own.len() < 2 {
            return Err(Error::InsufficientModalities(artist.to_string()));
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (u, iu) in &own {
            for (v, iv) in &own {
                if u == v {
                    continue;
                }
                let (sum_v, count_v) = &self.unit_sums[*v];
                let others = count_v - 1;
                if others == 0 {
                    continue;
                }
                let self_cos = dot(iu, iv);
                let d_own = 1.0 - self_cos;
                let mean_cos_others = (dot(iu, sum_v) - self_cos) / others as f64;
                total += d_own - (1.0 - mean_cos_others);
                pairs += 1;
            }
        }
        if pairs == 0 {
            return Err(Error::InsufficientData(format!(
                "no other artist shares a modality pair with {artist}"
            )));
        }
        Ok(total / pairs as f64)
    }
}

/// ECL of a single artist.
pub fn ecl(embeddings: &ModalityEmbeddings, artist: &ArtistId) -> Result<f64> {
    EclIndex::new(embeddings).ecl(artist)
}
