use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::ndcg_at_k;
use super::retrieval::RetrievalRun;
use super::stats::{bootstrap_ci, kendall_tau};
use crate::data::{ArtistId, SimilarityGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: ArtistId,
    pub source: String,
    pub condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg: Option<f64>,
    pub topk: Vec<ArtistId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cd_intra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cd_inter: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub source: String,
    pub condition: String,
    pub k: usize,
    pub n_queries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ndcg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg_ci: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gini: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency_mean_diagonal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_ecl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cd_intra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_cd_inter: Option<f64>,
    /// Kendall tau-b between per-query variables, keyed `"x~y"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub correlations: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Query(QueryRecord),
    Aggregate(AggregateRecord),
}

/// Per-query records followed by one aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub queries: Vec<QueryRecord>,
    pub aggregate: AggregateRecord,
}

impl EvalReport {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for q in &self.queries {
            out.push_str(&serde_json::to_string(&ReportRecord::Query(q.clone()))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&ReportRecord::Aggregate(self.aggregate.clone()))?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut queries = Vec::new();
        let mut aggregate = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                ReportRecord::Query(q) => queries.push(q),
                ReportRecord::Aggregate(a) => aggregate = Some(a),
            }
        }
        let aggregate =
            aggregate.ok_or_else(|| Error::InsufficientData("report has no aggregate record".into()))?;
        Ok(EvalReport { queries, aggregate })
    }
}

/// nDCG@k of every query in `run` against graph neighbors.
pub fn ndcg_per_query(run: &RetrievalRun, graph: &SimilarityGraph, k: usize) -> BTreeMap<ArtistId, f64> {
    run.results
        .iter()
        .map(|(q, list)| {
            let relevant: BTreeSet<ArtistId> = graph.neighbors(q).cloned().collect();
            let ranked: Vec<ArtistId> = list.iter().map(|r| r.artist.clone()).collect();
            (q.clone(), ndcg_at_k(&ranked, &relevant, k))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            level: 0.95,
            resamples: 1000,
            seed: 0,
        }
    }
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

type Field = fn(&QueryRecord) -> Option<f64>;

const FIELDS: [(&str, Field); 5] = [
    ("ndcg", |q| q.ndcg),
    ("ecl", |q| q.ecl),
    ("popularity", |q| q.popularity),
    ("cd_intra", |q| q.cd_intra),
    ("cd_inter", |q| q.cd_inter),
];

/// Fills the per-query-derived aggregate fields (means, bootstrap CI of
/// nDCG, pairwise Kendall correlations) from `queries`.
pub fn summarize(queries: &[QueryRecord], aggregate: &mut AggregateRecord, bootstrap: &BootstrapConfig) -> Result<()> {
    let column = |f: Field| -> Vec<f64> { queries.iter().filter_map(f).collect() };
    let ndcg = column(FIELDS[0].1);
    aggregate.n_queries = queries.len();
    aggregate.mean_ndcg = mean_of(&ndcg);
    aggregate.ndcg_ci = if ndcg.len() >= 2 {
        let (lo, hi) = bootstrap_ci(&ndcg, bootstrap.level, bootstrap.resamples, bootstrap.seed)?;
        Some([lo, hi])
    } else {
        None
    };
    aggregate.mean_ecl = mean_of(&column(FIELDS[1].1));
    aggregate.mean_cd_intra = mean_of(&column(FIELDS[3].1));
    aggregate.mean_cd_inter = mean_of(&column(FIELDS[4].1));
    aggregate.correlations.clear();
    for (i, (xn, xf)) in FIELDS.iter().enumerate() {
        for (yn, yf) in &FIELDS[i + 1..] {
            let (x, y): (Vec<f64>, Vec<f64>) = queries.iter().filter_map(|q| Some((xf(q)?, yf(q)?))).unzip();
            if x.len() < 2 {
                continue;
            }
            match kendall_tau(&x, &y) {
                Ok(t) => {
                    aggregate.correlations.insert(format!("{xn}~{yn}"), t);
                }
                Err(Error::InsufficientData(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::id;

    fn record(q: &str, ndcg: f64, ecl: f64) -> QueryRecord {
        QueryRecord {
            query: id(q),
            source: "s".into(),
            condition: "raw".into(),
            ndcg: Some(ndcg),
            topk: vec![id("x")],
            group: None,
            popularity: None,
            ecl: Some(ecl),
            cd_intra: None,
            cd_inter: None,
        }
    }

    #[test]
    fn jsonl_round_trip_and_recompute() {
        let queries = vec![record("a", 0.5, 0.1), record("b", 0.25, 0.3), record("c", 1.0, -0.2)];
        let mut aggregate = AggregateRecord {
            source: "s".into(),
            condition: "raw".into(),
            k: 3,
            ..Default::default()
        };
        summarize(&queries, &mut aggregate, &BootstrapConfig::default()).unwrap();
        assert!((aggregate.mean_ndcg.unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(aggregate.correlations["ndcg~ecl"], -1.0);
        let report = EvalReport { queries, aggregate };
        let text = report.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("{\"record\":\"aggregate\""));
        let back = EvalReport::from_jsonl(&text).unwrap();
        assert_eq!(back, report);
        let mut again = back.aggregate.clone();
        summarize(&back.queries, &mut again, &BootstrapConfig::default()).unwrap();
        assert_eq!(again, report.aggregate);
    }

    #[test]
    fn ndcg_uses_graph_neighbors() {
        use crate::eval::retrieval::Ranked;
        let mut g = SimilarityGraph::new();
        g.add_edge(id("a"), id("b")).unwrap();
        let run = RetrievalRun {
            source: "s".into(),
            k: 2,
            results: [
                (id("a"), vec![Ranked { artist: id("c"), score: 0.9 }, Ranked { artist: id("b"), score: 0.5 }]),
                (id("c"), vec![Ranked { artist: id("a"), score: 0.9 }]),
            ]
            .into_iter()
            .collect(),
        };
        let s = ndcg_per_query(&run, &g, 2);
        assert!((s[&id("a")] - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(s[&id("c")], 0.0);
    }
}
