use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ArtistId, PopularityTable};
use crate::error::{Error, Result};

/// Splits `queries` into `n_groups` contiguous popularity buckets after
/// sorting by (popularity, id); the first `n mod n_groups` buckets get one
/// extra query.
pub fn popularity_buckets(queries: &[(ArtistId, f64)], n_groups: usize) -> Result<Vec<Vec<ArtistId>>> {
    if n_groups == 0 || n_groups > queries.len() {
        return Err(Error::Config(format!(
            "cannot split {} queries into {n_groups} popularity groups",
            queries.len()
        )));
    }
    let mut sorted: Vec<&(ArtistId, f64)> = queries.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let base = queries.len() / n_groups;
    let extra = queries.len() % n_groups;
    let mut out = Vec::with_capacity(n_groups);
    let mut start = 0;
    for g in 0..n_groups {
        let len = base + usize::from(g < extra);
        out.push(sorted[start..start + len].iter().map(|(a, _)| a.clone()).collect());
        start += len;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityGroup {
    pub group: usize,
    pub queries: usize,
    pub pop_min: f64,
    pub pop_max: f64,
    pub mean_ndcg: BTreeMap<String, f64>,
    /// `(mean − mean_ref) / mean_ref`; `None` when the reference mean is 0.
    pub relative: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityAnalysis {
    pub reference: String,
    pub groups: Vec<PopularityGroup>,
}

impl PopularityAnalysis {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,queries,pop_min,pop_max,source,mean_ndcg,relative_improvement\n");
        for g in &self.groups {
            for (source, mean) in &g.mean_ndcg {
                let rel = match g.relative[source] {
                    Some(r) => format!("{r:?}"),
                    None => String::new(),
                };
                out.push_str(&format!(
                    "{},{},{:?},{:?},{},{:?},{}\n",
                    g.group, g.queries, g.pop_min, g.pop_max, source, mean, rel
                ));
            }
        }
        out
    }
}

/// Per-query nDCG of several sources, bucketed by the popularity of the
/// reference source's queries and compared against that reference.
pub fn popularity_analysis(
    ndcg_by_source: &BTreeMap<String, BTreeMap<ArtistId, f64>>,
    popularity: &PopularityTable,
    n_groups: usize,
    reference: &str,
) -> Result<PopularityAnalysis> {
    let reference_scores = ndcg_by_source
        .get(reference)
        .ok_or_else(|| Error::UnknownReference(reference.to_string()))?;
    let queries: Vec<(ArtistId, f64)> = reference_scores
        .keys()
        .map(|a| Ok((a.clone(), popularity.popularity(a)?)))
        .collect::<Result<_>>()?;
    let pop: BTreeMap<&ArtistId, f64> = queries.iter().map(|(a, p)| (a, *p)).collect();
    let buckets = popularity_buckets(&queries, n_groups)?;
    let mut groups = Vec::with_capacity(buckets.len());
    for (g, members) in buckets.iter().enumerate() {
        let mut mean_ndcg = BTreeMap::new();
        for (source, scores) in ndcg_by_source {
            let mut sum = 0.0;
            for a in members {
                sum += scores.get(a).ok_or_else(|| {
                    Error::InsufficientData(format!("source {source} has no score for query {a}"))
                })?;
            }
            mean_ndcg.insert(source.clone(), sum / members.len() as f64);
        }
        let base = mean_ndcg[reference];
        let relative = mean_ndcg
            .iter()
            .map(|(s, m)| (s.clone(), (base != 0.0).then(|| (m - base) / base)))
            .collect();
        groups.push(PopularityGroup {
            group: g,
            queries: members.len(),
            pop_min: pop[&members[0]],
            pop_max: pop[&members[members.len() - 1]],
            mean_ndcg,
            relative,
        });
    }
    Ok(PopularityAnalysis {
        reference: reference.to_string(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::id;

    fn table(n: usize) -> PopularityTable {
        let mut p = PopularityTable::new();
        for i in 0..n {
            p.insert(id(&format!("a{i:02}")), ((i * 7) % 13) as u64);
        }
        p
    }

    #[test]
    fn buckets_match_sort_then_chunk() {
        let p = table(40);
        let q: Vec<(ArtistId, f64)> = p.iter().map(|(a, _)| (a.clone(), p.popularity(a).unwrap())).collect();
        let b = popularity_buckets(&q, 20).unwrap();
        assert!(b.iter().all(|g| g.len() == 2));
        let mut oracle = q.clone();
        oracle.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(x.0.cmp(&y.0)));
        let flat: Vec<ArtistId> = b.into_iter().flatten().collect();
        assert_eq!(flat, oracle.into_iter().map(|x| x.0).collect::<Vec<_>>());
        let uneven = popularity_buckets(&q[..7], 3).unwrap();
        assert_eq!(uneven.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert!(popularity_buckets(&q[..3], 4).is_err());
    }

    #[test]
    fn self_comparison_is_zero_and_reference_required() {
        let p = table(40);
        let scores: BTreeMap<ArtistId, f64> = p.iter().map(|(a, c)| (a.clone(), 0.1 + c as f64 / 20.0)).collect();
        let by_source: BTreeMap<String, _> =
            [("cf".to_string(), scores.clone()), ("copy".to_string(), scores)].into_iter().collect();
        let out = popularity_analysis(&by_source, &p, 20, "cf").unwrap();
        assert_eq!(out.groups.len(), 20);
        for g in &out.groups {
            assert_eq!(g.relative["copy"], Some(0.0));
        }
        assert!(matches!(popularity_analysis(&by_source, &p, 20, "tag"), Err(Error::UnknownReference(_))));
        assert!(out.to_csv().starts_with("group,queries"));
    }

    #[test]
    fn zero_reference_mean_gives_none() {
        let p = table(4);
        let zero: BTreeMap<ArtistId, f64> = p.iter().map(|(a, _)| (a.clone(), 0.0)).collect();
        let one: BTreeMap<ArtistId, f64> = p.iter().map(|(a, _)| (a.clone(), 1.0)).collect();
        let by_source: BTreeMap<String, _> = [("cf".to_string(), zero), ("x".to_string(), one)].into_iter().collect();
        let out = popularity_analysis(&by_source, &p, 2, "cf").unwrap();
        assert_eq!(out.groups[0].relative["x"], None);
    }

    #[test]
    fn missing_popularity_is_an_error() {
        let p = table(2);
        let scores: BTreeMap<ArtistId, f64> = [(id("zz"), 1.0)].into_iter().collect();
        let by_source: BTreeMap<String, _> = [("cf".to_string(), scores)].into_iter().collect();
        assert!(matches!(popularity_analysis(&by_source, &p, 1, "cf"), Err(Error::MissingPopularity(_))));
    }
}
