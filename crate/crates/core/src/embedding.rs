//! Containers for vectors produced by an embedding source.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{ArtistId, ModalityId};
use crate::error::{Error, Result};

/// One vector per artist, all of the same width. This is what retrieval
/// runs over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: BTreeMap<ArtistId, Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        EmbeddingSet {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, artist: ArtistId, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "artist {artist}: vector of length {}, set has dim {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("artist {artist}: non-finite embedding")));
        }
        self.vectors.insert(artist, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, artist: &ArtistId) -> Option<&[f64]> {
        self.vectors.get(artist).map(Vec::as_slice)
    }

    pub fn contains(&self, artist: &ArtistId) -> bool {
        self.vectors.contains_key(artist)
    }

    /// Artists in ascending id order with their vectors.
    pub fn iter(&self) -> impl Iterator<Item = (&ArtistId, &[f64])> {
        self.vectors.iter().map(|(a, v)| (a, v.as_slice()))
    }

    pub fn artists(&self) -> impl Iterator<Item = &ArtistId> {
        self.vectors.keys()
    }

    /// Keeps only artists in `population`.
    pub fn restricted(&self, population: &BTreeSet<ArtistId>) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .filter(|(a, _)| population.contains(*a))
                .map(|(a, v)| (a.clone(), v.clone()))
                .collect(),
        }
    }
}

impl FromIterator<(ArtistId, Vec<f64>)> for EmbeddingSet {
    /// Collects vectors; the width is taken from the first one. Panics on
    /// ragged input.
    fn from_iter<I: IntoIterator<Item = (ArtistId, Vec<f64>)>>(iter: I) -> Self {
        let mut set: Option<EmbeddingSet> = None;
        for (a, v) in iter {
            let s = set.get_or_insert_with(|| EmbeddingSet::new(v.len()));
            s.insert(a, v).expect("embedding vectors must share a width");
        }
        set.unwrap_or_default()
    }
}

/// Shared-space vectors kept separate per modality: artist `i`'s encoding
/// of modality `u`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalityEmbeddings {
    by_modality: BTreeMap<ModalityId, BTreeMap<ArtistId, Vec<f64>>>,
}

impl ModalityEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, modality: ModalityId, artist: ArtistId, vector: Vec<f64>) {
        self.by_modality.entry(modality).or_default().insert(artist, vector);
    }

    pub fn get(&self, artist: &ArtistId, modality: &ModalityId) -> Option<&[f64]> {
        self.by_modality
            .get(modality)
            .and_then(|m| m.get(artist))
            .map(Vec::as_slice)
    }

    pub fn modalities(&self) -> impl Iterator<Item = &ModalityId> {
        self.by_modality.keys()
    }

    /// Vectors of one modality, by artist.
    pub fn modality(&self, modality: &ModalityId) -> Option<&BTreeMap<ArtistId, Vec<f64>>> {
        self.by_modality.get(modality)
    }

    /// Modalities present for `artist`, in lexicographic order.
    pub fn modalities_of<'a>(&'a self, artist: &'a ArtistId) -> impl Iterator<Item = &'a ModalityId> + 'a {
        self.by_modality
            .iter()
            .filter(move |(_, m)| m.contains_key(artist))
            .map(|(id, _)| id)
    }

    /// Every artist with at least one vector.
    pub fn artists(&self) -> BTreeSet<ArtistId> {
        self.by_modality
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect()
    }
}
