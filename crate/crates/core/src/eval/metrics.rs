use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::retrieval::RetrievalRun;
use crate::data::ArtistId;
use crate::error::{Error, Result};

/// Binary-relevance nDCG over the first `k` positions.
pub fn ndcg_at_k(ranked: &[ArtistId], relevant: &BTreeSet<ArtistId>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, a)| relevant.contains(*a))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(discount).sum();
    dcg / idcg
}

/// Gini coefficient of non-negative counts; 0 when they sum to 0.
pub fn gini(counts: &[f64]) -> f64 {
    let n = counts.len();
    let total: f64 = counts.iter().sum();
    if n == 0 || total == 0.0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x)
        .sum();
    weighted / (n as f64 * total)
}

/// How many times each population artist appears across all ranked lists.
pub fn exposure_counts(run: &RetrievalRun, population: &BTreeSet<ArtistId>) -> BTreeMap<ArtistId, usize> {
    let mut counts: BTreeMap<ArtistId, usize> = population.iter().map(|a| (a.clone(), 0)).collect();
    for list in run.results.values() {
        for r in list.iter().take(run.k) {
            if let Some(c) = counts.get_mut(&r.artist) {
                *c += 1;
            }
        }
    }
    counts
}

/// Gini of top-k exposure over `population`; never-retrieved artists count
/// as zero.
pub fn gini_at_k(run: &RetrievalRun, population: &BTreeSet<ArtistId>) -> f64 {
    let counts: Vec<f64> = exposure_counts(run, population).into_values().map(|c| c as f64).collect();
    gini(&counts)
}

/// Shannon entropy in nats of a histogram; 0 for an empty one.
pub fn entropy(histogram: &[f64]) -> f64 {
    let total: f64 = histogram.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -histogram
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Artists assigned to labelled groups (e.g. modality subsets).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub labels: Vec<String>,
    pub groups: BTreeMap<ArtistId, usize>,
}

impl GroupAssignment {
    pub fn group_of(&self, a: &ArtistId) -> Result<usize> {
        self.groups
            .get(a)
            .copied()
            .ok_or_else(|| Error::UnassignedArtist(a.to_string()))
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.labels.len()];
        for &g in self.groups.values() {
            sizes[g] += 1;
        }
        sizes
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// One histogram over every query's retrievals.
    Pooled,
    /// Mean of per-query entropies.
    PerQueryMean,
    /// Mean over query groups of the entropy of each group's retrieved-group
    /// distribution (the dependency-matrix rows); groups without retrievals
    /// count as 0.
    #[default]
    GroupMean,
}

fn group_histogram(
    ranked: &[super::retrieval::Ranked],
    assignment: &GroupAssignment,
    top: usize,
    histogram: &mut [f64],
) -> Result<()> {
    for r in ranked.iter().take(top) {
        histogram[assignment.group_of(&r.artist)?] += 1.0;
    }
    Ok(())
}

/// Entropy of the group labels among each query's first `top` results.
pub fn group_entropy(
    run: &RetrievalRun,
    assignment: &GroupAssignment,
    top: usize,
    mode: EntropyMode,
) -> Result<f64> {
    let g = assignment.labels.len();
    match mode {
        EntropyMode::Pooled => {
            let mut histogram = vec![0.0; g];
            for list in run.results.values() {
                group_histogram(list, assignment, top, &mut histogram)?;
            }
            Ok(entropy(&histogram))
        }
        EntropyMode::PerQueryMean => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for list in run.results.values() {
                if list.is_empty() {
                    continue;
                }
                let mut histogram = vec![0.0; g];
                group_histogram(list, assignment, top, &mut histogram)?;
                sum += entropy(&histogram);
                n += 1;
            }
            Ok(if n == 0 { 0.0 } else { sum / n as f64 })
        }
        EntropyMode::GroupMean => {
            let d = dependency_matrix(run, assignment, top)?;
            Ok(d.rows.iter().map(|r| entropy(r)).sum::<f64>() / g as f64)
        }
    }
}

/// Row `q`: distribution of retrieved-artist groups for queries in group
/// `q`. Rows without queries (or retrievals) are all zero and listed in
/// `empty_rows`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependencyMatrix {
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

impl DependencyMatrix {
    pub fn mean_diagonal(&self) -> f64 {
        let filled: Vec<usize> = (0..self.rows.len()).filter(|i| !self.empty_rows.contains(i)).collect();
        if filled.is_empty() {
            return 0.0;
        }
        filled.iter().map(|&i| self.rows[i][i]).sum::<f64>() / filled.len() as f64
    }

    /// CSV with a header of group labels; each row starts with its label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.rows) {
            out.push_str(label);
            for v in row {
                out.push(',');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn dependency_matrix(run: &RetrievalRun, assignment: &GroupAssignment, top: usize) -> Result<DependencyMatrix> {
    let g = assignment.labels.len();
    let mut rows = vec![vec![0.0; g]; g];
    for (q, list) in &run.results {
        let qg = assignment.group_of(q)?;
        group_histogram(list, assignment, top, &mut rows[qg])?;
    }
    let mut empty_rows = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            empty_rows.push(i);
        } else {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(DependencyMatrix {
        labels: assignment.labels.clone(),
        rows,
        empty_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::id;
    use crate::eval::retrieval::Ranked;
    use proptest::prelude::*;

    fn ids(s: &[&str]) -> Vec<ArtistId> {
        s.iter().map(|a| id(a)).collect()
    }

    fn run(lists: &[(&str, &[&str])], k: usize) -> RetrievalRun {
        RetrievalRun {
            source: "t".into(),
            k,
            results: lists
                .iter()
                .map(|(q, l)| {
                    (
                        id(q),
                        l.iter()
                            .map(|a| Ranked {
                                artist: id(a),
                                score: 0.0,
                            })
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn ndcg_examples() {
        let rel: BTreeSet<ArtistId> = ids(&["b"]).into_iter().collect();
        assert_eq!(ndcg_at_k(&ids(&["b", "c", "d"]), &rel, 3), 1.0);
        assert!((ndcg_at_k(&ids(&["c", "b", "d"]), &rel, 3) - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&ids(&["b"]), &BTreeSet::new(), 3), 0.0);
        assert_eq!(ndcg_at_k(&ids(&["c", "b"]), &rel, 1), 0.0);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[3.0, 3.0, 3.0]), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 10.0]) - 0.75).abs() < 1e-12);
        assert!((gini(&[1.0, 1.0, 2.0]) - 2.0 / 12.0).abs() < 1e-12);
        assert_eq!(gini(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn gini_counts_never_retrieved_population() {
        let r = run(&[("a", &["b"]), ("b", &["a"])], 1);
        let pop: BTreeSet<ArtistId> = ids(&["a", "b", "c", "d"]).into_iter().collect();
        assert!((gini_at_k(&r, &pop) - gini(&[0.0, 0.0, 1.0, 1.0])).abs() < 1e-15);
    }

    fn assignment(pairs: &[(&str, usize)], g: usize) -> GroupAssignment {
        GroupAssignment {
            labels: (0..g).map(|i| format!("g{i}")).collect(),
            groups: pairs.iter().map(|(a, i)| (id(a), *i)).collect(),
        }
    }

    #[test]
    fn entropy_extremes() {
        assert!((entropy(&[1.0; 7]) - 7f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 5.0, 0.0]), 0.0);
        let asg = assignment(&[("a", 0), ("b", 0), ("c", 1)], 2);
        let same = run(&[("a", &["b"]), ("b", &["a"])], 5);
        assert_eq!(group_entropy(&same, &asg, 5, EntropyMode::Pooled).unwrap(), 0.0);
        let mixed = run(&[("a", &["b", "c"])], 5);
        assert!((group_entropy(&mixed, &asg, 5, EntropyMode::Pooled).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(
            (group_entropy(&mixed, &asg, 1, EntropyMode::PerQueryMean).unwrap()).abs() < 1e-12
        );
        let bad = run(&[("a", &["zzz"])], 5);
        assert!(matches!(group_entropy(&bad, &asg, 5, EntropyMode::Pooled), Err(Error::UnassignedArtist(_))));
    }

    #[test]
    fn group_mean_counts_empty_groups_as_zero() {
        let names = ["a", "b", "c", "d", "e", "f", "g"];
        let asg = assignment(&names.iter().enumerate().map(|(i, n)| (*n, i)).collect::<Vec<_>>(), 7);
        let all: &[&str] = &["a", "b", "c", "d"];
        let r = run(&[("a", all), ("b", all), ("c", all), ("d", all)], 5);
        let h = group_entropy(&r, &asg, 5, EntropyMode::GroupMean).unwrap();
        assert!((h - 4.0 / 7.0 * 4f64.ln()).abs() < 1e-12);
        assert!((group_entropy(&r, &asg, 5, EntropyMode::Pooled).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dependency_rows_are_stochastic() {
        let asg = assignment(&[("a", 0), ("b", 0), ("c", 1), ("d", 2)], 3);
        let r = run(&[("a", &["b", "c", "d"]), ("b", &["a"]), ("c", &["c", "c"])], 5);
        let m = dependency_matrix(&r, &asg, 5).unwrap();
        assert_eq!(m.empty_rows, vec![2]);
        for (i, row) in m.rows.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if i == 2 {
                assert_eq!(s, 0.0);
            } else {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(m.rows[0], vec![0.5, 0.25, 0.25]);
        assert_eq!(m.rows[1], vec![0.0, 1.0, 0.0]);
        assert_eq!(m.mean_diagonal(), 0.75);
        assert_eq!(m.to_csv().lines().next().unwrap(), "group,g0,g1,g2");
        assert_eq!(m.to_csv().lines().nth(1).unwrap(), "g0,0.5,0.25,0.25");
    }

    proptest! {
        #[test]
        fn gini_is_scale_invariant(counts in prop::collection::vec(0u32..50, 1..20), s in 1u32..20) {
            let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let y: Vec<f64> = x.iter().map(|c| c * s as f64).collect();
            prop_assert!((gini(&x) - gini(&y)).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&gini(&x)));
        }

        #[test]
        fn ndcg_is_bounded(
            ranked in prop::collection::vec(0u8..12, 0..12),
            rel in prop::collection::btree_set(0u8..12, 0..6),
            k in 1usize..15,
        ) {
            let mut seen = BTreeSet::new();
            let ranked: Vec<ArtistId> = ranked.into_iter().filter(|x| seen.insert(*x)).map(|x| id(&format!("a{x:02}"))).collect();
            let rel: BTreeSet<ArtistId> = rel.into_iter().map(|x| id(&format!("a{x:02}"))).collect();
            let v = ndcg_at_k(&ranked, &rel, k);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            let need = k.min(rel.len());
            let ideal = need > 0 && ranked.len() >= need && ranked[..need].iter().all(|a| rel.contains(a));
            prop_assert_eq!((v - 1.0).abs() < 1e-12, ideal);
        }
    }
}
