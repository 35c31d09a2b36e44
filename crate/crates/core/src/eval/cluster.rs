use std::collections::BTreeMap;

use crate::data::ArtistId;
use crate::embedding::ModalityEmbeddings;
use crate::error::{Error, Result};
use crate::numerics::{cosine, dot, normalized};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterDistances {
    pub intra: f64,
    pub inter: f64,
}

/// Per-artist centroids of shared-space modality embeddings.
pub struct ClusterIndex<'a> {
    embeddings: &'a ModalityEmbeddings,
    centroids: BTreeMap<ArtistId, Vec<f64>>,
    unit_sum: Vec<f64>,
}

impl<'a> ClusterIndex<'a> {
    pub fn new(embeddings: &'a ModalityEmbeddings) -> Self {
        let mut centroids: BTreeMap<ArtistId, (Vec<f64>, usize)> = BTreeMap::new();
        for m in embeddings.modalities() {
            for (a, v) in embeddings.modality(m).into_iter().flatten() {
                let (sum, n) = centroids
                    .entry(a.clone())
                    .or_insert_with(|| (vec![0.0; v.len()], 0));
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                *n += 1;
            }
        }
        let centroids: BTreeMap<ArtistId, Vec<f64>> = centroids
            .into_iter()
            .map(|(a, (mut s, n))| {
                s.iter_mut().for_each(|x| *x /= n as f64);
                (a, s)
            })
            .collect();
        let dim = centroids.values().next().map_or(0, Vec::len);
        let mut unit_sum = vec![0.0; dim];
        for c in centroids.values() {
            unit_sum.iter_mut().zip(normalized(c)).for_each(|(s, x)| *s += x);
        }
        ClusterIndex {
            embeddings,
            centroids,
            unit_sum,
        }
    }

    pub fn centroid(&self, artist: &ArtistId) -> Option<&[f64]> {
        self.centroids.get(artist).map(Vec::as_slice)
    }

    /// `intra`: mean cosine distance from each of the artist's modality
    /// embeddings to its centroid. `inter`: mean cosine distance from its
    /// centroid to every other artist's centroid.
    pub fn distances(&self, artist: &ArtistId) -> Result<ClusterDistances> {
        let c = self
            .centroids
            .get(artist)
            .ok_or_else(|| Error::InsufficientData(format!("artist {artist} has no shared-space embedding")))?;
        let others = self.centroids.len() - 1;
        if others == 0 {
            return Err(Error::InsufficientData("cd_inter needs at least two artists".into()));
        }
        let parts: Vec<&[f64]> = self
            .embeddings
            .modalities_of(artist)
            .map(|m| self.embeddings.get(artist, m).expect("listed"))
            .collect();
        let intra = parts.iter().map(|v| 1.0 - cosine(v, c)).sum::<f64>() / parts.len() as f64;
        let unit = normalized(c);
        let self_cos = dot(&unit, &unit);
        let inter = 1.0 - (dot(&unit, &self.unit_sum) - self_cos) / others as f64;
        Ok(ClusterDistances { intra, inter })
    }
}

pub fn cluster_distances(embeddings: &ModalityEmbeddings, artist: &ArtistId) -> Result<ClusterDistances> {
    ClusterIndex::new(embeddings).distances(artist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::{id, modality};

    fn naive(e: &ModalityEmbeddings, i: &ArtistId) -> ClusterDistances {
        let centroid = |a: &ArtistId| {
            let parts: Vec<&[f64]> = e.modalities_of(a).map(|m| e.get(a, m).unwrap()).collect();
            let mut c = vec![0.0; parts[0].len()];
            for p in &parts {
                for (x, y) in c.iter_mut().zip(*p) {
                    *x += y / parts.len() as f64;
                }
            }
            (c, parts)
        };
        let (ci, parts) = centroid(i);
        let intra = parts.iter().map(|p| 1.0 - cosine(p, &ci)).sum::<f64>() / parts.len() as f64;
        let others: Vec<f64> = e
            .artists()
            .iter()
            .filter(|a| *a != i)
            .map(|a| 1.0 - cosine(&ci, &centroid(a).0))
            .collect();
        ClusterDistances {
            intra,
            inter: others.iter().sum::<f64>() / others.len() as f64,
        }
    }

    #[test]
    fn matches_naive_loop() {
        use rand::Rng;
        let mut r = crate::rng::seeded(6);
        let mut e = ModalityEmbeddings::new();
        for a in 0..4 {
            for m in ["audio", "cf", "tag"] {
                if a == 3 && m != "cf" {
                    continue;
                }
                e.insert(modality(m), id(&format!("a{a}")), (0..5).map(|_| r.random_range(-1.0..1.0)).collect());
            }
        }
        let index = ClusterIndex::new(&e);
        for a in e.artists() {
            let got = index.distances(&a).unwrap();
            let want = naive(&e, &a);
            assert!((got.intra - want.intra).abs() < 1e-12);
            assert!((got.inter - want.inter).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_cases() {
        let mut e = ModalityEmbeddings::new();
        for m in ["audio", "cf"] {
            e.insert(modality(m), id("a"), vec![1.0, 0.0]);
            e.insert(modality(m), id("b"), vec![0.0, 2.0]);
        }
        let d = cluster_distances(&e, &id("a")).unwrap();
        assert!(d.intra.abs() < 1e-15);
        assert!((d.inter - 1.0).abs() < 1e-15);
        assert!(cluster_distances(&e, &id("zz")).is_err());
    }
}
