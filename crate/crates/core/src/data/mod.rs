//! Artist catalog, per-modality embedding tables, ground-truth similarity and
//! popularity.
//!
//! Everything here is immutable once constructed. Derived views (restricted
//! populations, masked modalities) are built as new datasets that copy rows
//! verbatim.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    format_embeddings, load_dataset, load_embeddings, load_graph, load_popularity, save_dataset,
    save_embeddings,
    save_graph, save_popularity, GraphMode,
};

/// Opaque artist identifier. Non-empty, no tab or newline.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArtistId(String);

impl ArtistId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(Error::Config(format!("invalid artist id {id:?}")));
        }
        Ok(ArtistId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ArtistId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ArtistId::new(s)
    }
}

impl From<ArtistId> for String {
    fn from(id: ArtistId) -> String {
        id.0
    }
}

impl fmt::Display for ArtistId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Modality name, e.g. `audio`, `cf`, `tag`. Non-empty lowercase.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalityId(String);

impl ModalityId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
        if !valid {
            return Err(Error::Config(format!("invalid modality name {name:?}")));
        }
        Ok(ModalityId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModalityId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ModalityId::new(s)
    }
}

impl From<ModalityId> for String {
    fn from(id: ModalityId) -> String {
        id.0
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One modality's artist embeddings, all of width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    modality: ModalityId,
    dim: usize,
    rows: BTreeMap<ArtistId, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(modality: ModalityId, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config(format!("modality {modality}: dim must be positive")));
        }
        Ok(EmbeddingTable {
            modality,
            dim,
            rows: BTreeMap::new(),
        })
    }

    /// Adds a row; rejects wrong width, non-finite entries and duplicates.
    pub fn insert(&mut self, artist: ArtistId, row: Vec<f64>) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "artist {artist}: {} values, modality {} has dim {}",
                row.len(),
                self.modality,
                self.dim
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("artist {artist}: non-finite embedding entry")));
        }
        if self.rows.contains_key(&artist) {
            return Err(Error::Config(format!(
                "duplicate artist {artist} in modality {}",
                self.modality
            )));
        }
        self.rows.insert(artist, row);
        Ok(())
    }

    pub fn modality(&self) -> &ModalityId {
        &self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, artist: &ArtistId) -> Option<&[f64]> {
        self.rows.get(artist).map(Vec::as_slice)
    }

    pub fn contains(&self, artist: &ArtistId) -> bool {
        self.rows.contains_key(artist)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ArtistId, &[f64])> {
        self.rows.iter().map(|(a, r)| (a, r.as_slice()))
    }

    /// Copy of this table keeping only the rows `keep` accepts.
    pub fn filtered(&self, mut keep: impl FnMut(&ArtistId) -> bool) -> EmbeddingTable {
        EmbeddingTable {
            modality: self.modality.clone(),
            dim: self.dim,
            rows: self
                .rows
                .iter()
                .filter(|(a, _)| keep(a))
                .map(|(a, r)| (a.clone(), r.clone()))
                .collect(),
        }
    }
}

/// Undirected ground-truth similarity edges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityGraph {
    adjacency: BTreeMap<ArtistId, BTreeSet<ArtistId>>,
    edge_count: usize,
}

impl SimilarityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the edge `{a, b}`. Returns false if it was already present.
    pub fn add_edge(&mut self, a: ArtistId, b: ArtistId) -> Result<bool> {
        if a == b {
            return Err(Error::Config(format!("self-loop on artist {a}")));
        }
        let fresh = self.adjacency.entry(a.clone()).or_default().insert(b.clone());
        self.adjacency.entry(b).or_default().insert(a);
        if fresh {
            self.edge_count += 1;
        }
        Ok(fresh)
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Ground-truth neighbours of `artist` (empty when it has none).
    pub fn neighbors(&self, artist: &ArtistId) -> impl Iterator<Item = &ArtistId> {
        self.adjacency.get(artist).into_iter().flatten()
    }

    /// Edges as `(a, b)` with `a < b`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (&ArtistId, &ArtistId)> {
        self.adjacency
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (a, b)))
    }

    pub fn artists(&self) -> impl Iterator<Item = &ArtistId> {
        self.adjacency.keys()
    }

    /// Subgraph induced by `population`.
    pub fn induced(&self, population: &BTreeSet<ArtistId>) -> SimilarityGraph {
        let mut g = SimilarityGraph::new();
        for (a, b) in self.edges() {
            if population.contains(a) && population.contains(b) {
                g.add_edge(a.clone(), b.clone()).expect("edges have no self-loops");
            }
        }
        g
    }
}

/// Listen counts per artist.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PopularityTable {
    counts: BTreeMap<ArtistId, u64>,
}

impl PopularityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, artist: ArtistId, listen_count: u64) {
        self.counts.insert(artist, listen_count);
    }

    pub fn count(&self, artist: &ArtistId) -> Option<u64> {
        self.counts.get(artist).copied()
    }

    /// `ln(listen_count + 1)`.
    pub fn popularity(&self, artist: &ArtistId) -> Result<f64> {
        self.count(artist)
            .map(popularity_of_count)
            .ok_or_else(|| Error::MissingPopularity(artist.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ArtistId, u64)> {
        self.counts.iter().map(|(a, c)| (a, *c))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Popularity proxy for a raw listen count.
pub fn popularity_of_count(listen_count: u64) -> f64 {
    (listen_count as f64).ln_1p()
}

/// Per-artist set of available modalities.
pub type CoverageMask = BTreeMap<ArtistId, BTreeSet<ModalityId>>;

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    catalog: BTreeSet<ArtistId>,
    tables: BTreeMap<ModalityId, EmbeddingTable>,
    mask: CoverageMask,
    graph: SimilarityGraph,
    popularity: Option<PopularityTable>,
}

impl MultimodalDataset {
    /// Builds a dataset; the catalog is every artist with at least one
    /// embedding row. Graph and popularity entries must refer to catalog
    /// artists.
    pub fn new(
        tables: Vec<EmbeddingTable>,
        graph: SimilarityGraph,
        popularity: Option<PopularityTable>,
    ) -> Result<Self> {
        let mut by_modality = BTreeMap::new();
        for t in tables {
            let m = t.modality().clone();
            if by_modality.insert(m.clone(), t).is_some() {
                return Err(Error::Config(format!("modality {m} given twice")));
            }
        }
        if by_modality.len() < 2 {
            return Err(Error::Config(format!(
                "a dataset needs at least 2 modalities, got {}",
                by_modality.len()
            )));
        }
        let mut mask: CoverageMask = BTreeMap::new();
        for (m, t) in &by_modality {
            for (a, _) in t.iter() {
                mask.entry(a.clone()).or_default().insert(m.clone());
            }
        }
        let catalog: BTreeSet<ArtistId> = mask.keys().cloned().collect();
        if let Some(a) = graph.artists().find(|a| !catalog.contains(*a)) {
            return Err(Error::UnknownArtist(a.to_string()));
        }
        if let Some(p) = &popularity {
            if let Some((a, _)) = p.iter().find(|(a, _)| !catalog.contains(*a)) {
                return Err(Error::UnknownArtist(a.to_string()));
            }
        }
        Ok(MultimodalDataset {
            catalog,
            tables: by_modality,
            mask,
            graph,
            popularity,
        })
    }

    pub fn catalog(&self) -> &BTreeSet<ArtistId> {
        &self.catalog
    }

    pub fn modalities(&self) -> impl Iterator<Item = &ModalityId> {
        self.tables.keys()
    }

    pub fn modality_count(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, modality: &ModalityId) -> Option<&EmbeddingTable> {
        self.tables.get(modality)
    }

    pub fn tables(&self) -> impl Iterator<Item = &EmbeddingTable> {
        self.tables.values()
    }

    pub fn mask(&self) -> &CoverageMask {
        &self.mask
    }

    /// Modalities available for `artist`, in lexicographic order.
    pub fn modalities_of(&self, artist: &ArtistId) -> Option<&BTreeSet<ModalityId>> {
        self.mask.get(artist)
    }

    pub fn embedding(&self, artist: &ArtistId, modality: &ModalityId) -> Option<&[f64]> {
        self.tables.get(modality).and_then(|t| t.get(artist))
    }

    pub fn graph(&self) -> &SimilarityGraph {
        &self.graph
    }

    pub fn popularity_table(&self) -> Option<&PopularityTable> {
        self.popularity.as_ref()
    }

    pub fn popularity(&self, artist: &ArtistId) -> Result<f64> {
        match &self.popularity {
            Some(p) => p.popularity(artist),
            None => Err(Error::MissingPopularity(artist.to_string())),
        }
    }

    /// Artists whose mask covers every modality of the dataset.
    pub fn full_coverage_subset(&self) -> BTreeSet<ArtistId> {
        let total = self.tables.len();
        self.mask
            .iter()
            .filter(|(_, ms)| ms.len() == total)
            .map(|(a, _)| a.clone())
            .collect()
    }

    /// Dataset restricted to `population`: rows, edges and popularity
    /// outside it are dropped. Modalities left without rows are kept empty.
    pub fn restrict(&self, population: &BTreeSet<ArtistId>) -> Result<MultimodalDataset> {
        self.derive(|a, _| population.contains(a), Some(population))
    }

    /// Dataset in which each artist keeps only the modalities `allowed`
    /// returns true for. Rows kept are exact copies.
    pub fn mask_modalities(
        &self,
        allowed: impl Fn(&ArtistId, &ModalityId) -> bool,
    ) -> Result<MultimodalDataset> {
        self.derive(allowed, None)
    }

    fn derive(
        &self,
        keep: impl Fn(&ArtistId, &ModalityId) -> bool,
        population: Option<&BTreeSet<ArtistId>>,
    ) -> Result<MultimodalDataset> {
        let tables: Vec<EmbeddingTable> = self
            .tables
            .iter()
            .map(|(m, t)| t.filtered(|a| keep(a, m)))
            .collect();
        let mut remaining = BTreeSet::new();
        for t in &tables {
            remaining.extend(t.iter().map(|(a, _)| a.clone()));
        }
        if let Some(pop) = population {
            remaining.retain(|a| pop.contains(a));
        }
        let graph = self.graph.induced(&remaining);
        let popularity = self.popularity.as_ref().map(|p| {
            let mut out = PopularityTable::new();
            for (a, c) in p.iter().filter(|(a, _)| remaining.contains(*a)) {
                out.insert(a.clone(), c);
            }
            out
        });
        MultimodalDataset::new(tables, graph, popularity)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn id(s: &str) -> ArtistId {
        ArtistId::new(s).unwrap()
    }

    pub fn modality(s: &str) -> ModalityId {
        ModalityId::new(s).unwrap()
    }

    /// `(modality, dim, [(artist, row)])`.
    pub type TableSpec<'a> = (&'a str, usize, Vec<(&'a str, Vec<f64>)>);

    pub fn dataset(spec: &[TableSpec]) -> MultimodalDataset {
        let tables = spec
            .iter()
            .map(|(m, dim, rows)| {
                let mut t = EmbeddingTable::new(modality(m), *dim).unwrap();
                for (a, r) in rows {
                    t.insert(id(a), r.clone()).unwrap();
                }
                t
            })
            .collect();
        MultimodalDataset::new(tables, SimilarityGraph::new(), None).unwrap()
    }
}
