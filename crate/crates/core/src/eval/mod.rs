//! Exact cosine retrieval and the evaluation metrics run over it.

mod cluster;
mod metrics;
mod popularity;
mod report;
mod retrieval;
mod stats;

pub use cluster::{cluster_distances, ClusterDistances, ClusterIndex};
pub use metrics::{
    dependency_matrix, entropy, exposure_counts, gini, gini_at_k, group_entropy, ndcg_at_k,
    DependencyMatrix, EntropyMode, GroupAssignment,
};
pub use popularity::{popularity_analysis, popularity_buckets, PopularityAnalysis, PopularityGroup};
pub use report::{
    ndcg_per_query, summarize, AggregateRecord, BootstrapConfig, EvalReport, QueryRecord, ReportRecord,
};
pub use retrieval::{retrieve_all, topk, Ranked, RetrievalRun};
pub use stats::{bootstrap_ci, kendall_tau, quantile_sorted};
