use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ArtistId;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::{gemm, normalized};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub artist: ArtistId,
    pub score: f64,
}

/// Ranked lists for a set of queries from one embedding source.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRun {
    pub source: String,
    pub k: usize,
    pub results: BTreeMap<ArtistId, Vec<Ranked>>,
}

impl RetrievalRun {
    pub fn ids(&self, query: &ArtistId) -> Vec<ArtistId> {
        self.results
            .get(query)
            .map(|r| r.iter().map(|x| x.artist.clone()).collect())
            .unwrap_or_default()
    }
}

/// Unit-normalized copy of an embedding set as one dense matrix.
struct Index<'a> {
    ids: Vec<&'a ArtistId>,
    dim: usize,
    unit: Vec<f64>,
}

impl<'a> Index<'a> {
    fn new(set: &'a EmbeddingSet) -> Self {
        let mut ids = Vec::with_capacity(set.len());
        let mut unit = Vec::with_capacity(set.len() * set.dim());
        for (a, v) in set.iter() {
            ids.push(a);
            unit.extend(normalized(v));
        }
        Index {
            ids,
            dim: set.dim(),
            unit,
        }
    }

    fn position(&self, a: &ArtistId) -> Option<usize> {
        self.ids.binary_search(&a).ok()
    }
}

fn by_score_then_id<'a>(ids: &'a [&'a ArtistId], sims: &'a [f64]) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| sims[b].total_cmp(&sims[a]).then_with(|| ids[a].cmp(ids[b]))
}

fn top_of_row(index: &Index, sims: &[f64], query: usize, k: usize) -> Vec<Ranked> {
    let mut cand: Vec<usize> = (0..index.ids.len()).filter(|&j| j != query).collect();
    let cmp = by_score_then_id(&index.ids, sims);
    if k < cand.len() {
        cand.select_nth_unstable_by(k, &cmp);
        cand.truncate(k);
    }
    cand.sort_by(&cmp);
    cand.into_iter()
        .map(|j| Ranked {
            artist: index.ids[j].clone(),
            score: sims[j],
        })
        .collect()
}

/// The `k` artists most cosine-similar to `query`, excluding the query;
/// ties go to the smaller id.
pub fn topk(embeddings: &EmbeddingSet, query: &ArtistId, k: usize) -> Result<Vec<Ranked>> {
    Ok(retrieve_all(embeddings, [query], k, false, "")?
        .results
        .remove(query)
        .unwrap_or_default())
}

const QUERY_CHUNK: usize = 256;

/// Runs [`topk`] for every query. With `allow_missing`, a query without an
/// embedding gets an empty list; otherwise it is a `MissingEmbedding`
/// error.
pub fn retrieve_all<'q>(
    embeddings: &EmbeddingSet,
    queries: impl IntoIterator<Item = &'q ArtistId>,
    k: usize,
    allow_missing: bool,
    source: &str,
) -> Result<RetrievalRun> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let index = Index::new(embeddings);
    let n = index.ids.len();
    let mut results = BTreeMap::new();
    let mut pending: Vec<(&ArtistId, usize)> = Vec::new();
    for q in queries {
        match index.position(q) {
            Some(p) => pending.push((q, p)),
            None if allow_missing => {
                results.insert(q.clone(), Vec::new());
            }
            None => return Err(Error::MissingEmbedding(q.to_string())),
        }
    }
    let d = index.dim;
    for chunk in pending.chunks(QUERY_CHUNK) {
        let rows: Vec<f64> = chunk
            .iter()
            .flat_map(|&(_, p)| index.unit[p * d..(p + 1) * d].iter().copied())
            .collect();
        let mut sims = vec![0.0; chunk.len() * n];
        gemm(chunk.len(), d, n, &rows, false, &index.unit, true, 0.0, &mut sims);
        for s in &mut sims {
            *s = s.clamp(-1.0, 1.0);
        }
        for (r, &(q, p)) in chunk.iter().enumerate() {
            let row = &sims[r * n..(r + 1) * n];
            results.insert(q.clone(), top_of_row(&index, row, p, k));
        }
    }
    Ok(RetrievalRun {
        source: source.to_string(),
        k,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::id;
    use crate::numerics::cosine;

    fn set(rows: &[(&str, Vec<f64>)]) -> EmbeddingSet {
        rows.iter().map(|(a, v)| (id(a), v.clone())).collect()
    }

    fn brute(e: &EmbeddingSet, q: &ArtistId, k: usize) -> Vec<ArtistId> {
        let qv = e.get(q).unwrap();
        let mut all: Vec<(f64, ArtistId)> = e
            .iter()
            .filter(|(a, _)| *a != q)
            .map(|(a, v)| (cosine(qv, v), a.clone()))
            .collect();
        all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        all.into_iter().take(k).map(|(_, a)| a).collect()
    }

    #[test]
    fn identical_candidate_ranks_first() {
        let e = set(&[("q", vec![1.0, 2.0]), ("b", vec![2.0, 4.0]), ("c", vec![1.0, 0.0])]);
        let r = topk(&e, &id("q"), 1).unwrap();
        assert_eq!(r[0].artist, id("b"));
        assert!((r[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_beyond_pool_returns_everything_sorted() {
        let e = set(&[("q", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 0.1])]);
        let r = topk(&e, &id("q"), 10).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].artist, id("c"));
        assert!(r.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn ties_break_by_id_and_query_is_excluded() {
        let e = set(&[("d", vec![1.0, 0.0]), ("b", vec![1.0, 0.0]), ("c", vec![1.0, 0.0]), ("a", vec![1.0, 0.0])]);
        let ids: Vec<ArtistId> = topk(&e, &id("c"), 2).unwrap().into_iter().map(|r| r.artist).collect();
        assert_eq!(ids, vec![id("a"), id("b")]);
    }

    #[test]
    fn matches_brute_force_scan() {
        use rand::Rng;
        let mut r = crate::rng::seeded(8);
        let e: EmbeddingSet = (0..5)
            .map(|i| (id(&format!("x{i}")), (0..3).map(|_| r.random_range(-1.0..1.0)).collect()))
            .collect();
        for q in e.artists() {
            for k in 1..6 {
                let got: Vec<ArtistId> = topk(&e, q, k).unwrap().into_iter().map(|r| r.artist).collect();
                assert_eq!(got, brute(&e, q, k));
            }
        }
    }

    #[test]
    fn missing_query_handling() {
        let e = set(&[("a", vec![1.0]), ("b", vec![2.0])]);
        assert!(matches!(topk(&e, &id("z"), 1), Err(Error::MissingEmbedding(_))));
        let run = retrieve_all(&e, [&id("z"), &id("a")], 1, true, "s").unwrap();
        assert!(run.results[&id("z")].is_empty());
        assert_eq!(run.ids(&id("a")), vec![id("b")]);
    }

    #[test]
    fn rescaling_a_vector_keeps_rankings() {
        let e = set(&[("a", vec![1.0, 0.2]), ("b", vec![0.3, 1.0]), ("c", vec![-1.0, 0.5]), ("d", vec![0.7, 0.7])]);
        let scaled = set(&[("a", vec![1.0, 0.2]), ("b", vec![3.0, 10.0]), ("c", vec![-1.0, 0.5]), ("d", vec![0.7, 0.7])]);
        for q in e.artists() {
            let x: Vec<ArtistId> = topk(&e, q, 3).unwrap().into_iter().map(|r| r.artist).collect();
            let y: Vec<ArtistId> = topk(&scaled, q, 3).unwrap().into_iter().map(|r| r.artist).collect();
            assert_eq!(x, y);
        }
    }
}
