//! Experiment orchestration: builds each evaluation condition, embeds it
//! with every requested source, retrieves, scores, and writes reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contrastive::{train, ContrastiveModel, EclIndex, TrainConfig};
use crate::data::{load_dataset, ArtistId, GraphMode, ModalityId, MultimodalDataset};
use crate::error::{Error, Result};
use crate::eval::{
    dependency_matrix, gini_at_k, group_entropy, ndcg_per_query, popularity_analysis, retrieve_all,
    summarize, AggregateRecord, BootstrapConfig, ClusterIndex, DependencyMatrix, EntropyMode, EvalReport,
    GroupAssignment, PopularityAnalysis, QueryRecord,
};
use crate::rng;
use crate::sources::{modality_combinations, SourceContext, SourceRegistry};
use crate::synthetic::{generate_synthetic, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Every artist with at least one modality.
    Raw,
    /// Only artists with every modality.
    Fmc,
    /// Full-coverage artists split into groups, each group restricted to
    /// one modality subset.
    ModalityGroups,
    /// The raw population, with nDCG additionally bucketed by popularity.
    Popularity,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Raw => "raw",
            Condition::Fmc => "fmc",
            Condition::ModalityGroups => "modality_groups",
            Condition::Popularity => "popularity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A dataset directory as written by `save_dataset`.
    Dir(PathBuf),
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub graph_mode: GraphMode,
    /// Trained checkpoint; when absent the model is trained from `train`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sources: Vec<String>,
    /// Adds the contrastive model restricted to every modality subset.
    #[serde(default)]
    pub modality_sweep: bool,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_top")]
    pub top: usize,
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub entropy_mode: EntropyMode,
    #[serde(default = "default_popularity_groups")]
    pub popularity_groups: usize,
    /// Source the popularity condition compares against.
    #[serde(default = "default_reference")]
    pub reference: String,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_conditions() -> Vec<Condition> {
    vec![Condition::Raw]
}

fn default_k() -> usize {
    200
}

fn default_top() -> usize {
    5
}

fn default_out_dim() -> usize {
    crate::baselines::DEFAULT_OUT_DIM
}

fn default_popularity_groups() -> usize {
    20
}

fn default_reference() -> String {
    "cf".to_string()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() && !self.modality_sweep {
            return Err(Error::Config("an experiment needs at least one source".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("an experiment needs at least one condition".into()));
        }
        let distinct: BTreeSet<&Condition> = self.conditions.iter().collect();
        if distinct.len() != self.conditions.len() {
            return Err(Error::Config("conditions listed twice".into()));
        }
        if self.k == 0 || self.top == 0 {
            return Err(Error::Config("k and top must be at least 1".into()));
        }
        if self.conditions.contains(&Condition::Popularity) && self.popularity_groups == 0 {
            return Err(Error::Config("popularity_groups must be at least 1".into()));
        }
        if let DatasetSource::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        self.train.validate()
    }

    fn rand_seed(&self) -> u64 {
        rng::mix(self.seed, 31)
    }

    fn group_seed(&self) -> u64 {
        rng::mix(self.seed, 32)
    }

    fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            seed: rng::mix(self.seed, 33),
            ..self.bootstrap
        }
    }

    /// Training configuration with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Configured sources followed by the modality sweep, without repeats.
    pub fn source_names(&self, dataset: &MultimodalDataset) -> Vec<String> {
        let mut names = self.sources.clone();
        if self.modality_sweep {
            let ms: Vec<ModalityId> = dataset.modalities().cloned().collect();
            names.extend(modality_combinations(&ms));
        }
        let mut seen = BTreeSet::new();
        names.retain(|n| seen.insert(n.clone()));
        names
    }

    pub fn load_dataset(&self) -> Result<MultimodalDataset> {
        match &self.dataset {
            DatasetSource::Dir(dir) => load_dataset(dir, self.graph_mode),
            DatasetSource::Synthetic(s) => generate_synthetic(s),
        }
    }
}

/// Full-coverage artists shuffled into one group per non-empty modality
/// subset.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityGroups {
    pub assignment: GroupAssignment,
    pub subsets: Vec<BTreeSet<ModalityId>>,
}

pub fn assign_modality_groups(dataset: &MultimodalDataset, seed: u64) -> Result<ModalityGroups> {
    if dataset.modality_count() != 3 {
        return Err(Error::Config(format!(
            "modality groups need exactly 3 modalities, got {}",
            dataset.modality_count()
        )));
    }
    let ms: Vec<ModalityId> = dataset.modalities().cloned().collect();
    let labels: Vec<String> = modality_combinations(&ms)
        .into_iter()
        .map(|n| n.split_once(':').expect("combination names carry a subset").1.to_string())
        .collect();
    let subsets: Vec<BTreeSet<ModalityId>> = labels
        .iter()
        .map(|l| l.split('+').map(ModalityId::new).collect())
        .collect::<Result<_>>()?;

    let mut artists: Vec<ArtistId> = dataset.full_coverage_subset().into_iter().collect();
    let g = labels.len();
    if artists.len() < g {
        return Err(Error::InsufficientData(format!(
            "{} full-coverage artists cannot fill {g} groups",
            artists.len()
        )));
    }
    artists.shuffle(&mut rng::seeded(seed));
    let (base, extra) = (artists.len() / g, artists.len() % g);
    let mut groups = BTreeMap::new();
    let mut rest = artists.into_iter();
    for i in 0..g {
        for a in rest.by_ref().take(base + usize::from(i < extra)) {
            groups.insert(a, i);
        }
    }
    Ok(ModalityGroups {
        assignment: GroupAssignment { labels, groups },
        subsets,
    })
}

/// Dataset seen under `condition`.
pub fn condition_dataset(
    dataset: &MultimodalDataset,
    condition: Condition,
    groups: Option<&ModalityGroups>,
) -> Result<MultimodalDataset> {
    match condition {
        Condition::Raw | Condition::Popularity => Ok(dataset.clone()),
        Condition::Fmc => {
            let fmc = dataset.restrict(&dataset.full_coverage_subset())?;
            let total = fmc.modality_count();
            if let Some((a, _)) = fmc.mask().iter().find(|(_, ms)| ms.len() != total) {
                return Err(Error::IncompleteCoverage(a.to_string()));
            }
            Ok(fmc)
        }
        Condition::ModalityGroups => {
            let groups = groups.ok_or_else(|| Error::Config("modality groups were not assigned".into()))?;
            let population: BTreeSet<ArtistId> = groups.assignment.groups.keys().cloned().collect();
            let fmc = dataset.restrict(&population)?;
            fmc.mask_modalities(|a, m| groups.subsets[groups.assignment.groups[a]].contains(m))
        }
    }
}

/// One source's report under one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceReport {
    pub condition: Condition,
    pub source: String,
    pub report: EvalReport,
    pub dependency: Option<DependencyMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResults {
    pub reports: Vec<SourceReport>,
    pub popularity: Option<PopularityAnalysis>,
}

fn file_stem(condition: Condition, source: &str) -> String {
    format!("{}__{}", condition.name(), source.replace([':', '+'], "-"))
}

impl ExperimentResults {
    pub fn report(&self, condition: Condition, source: &str) -> Option<&SourceReport> {
        self.reports
            .iter()
            .find(|r| r.condition == condition && r.source == source)
    }

    /// Output files as `(name, contents)`, in a stable order.
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for r in &self.reports {
            let stem = file_stem(r.condition, &r.source);
            out.push((format!("{stem}.jsonl"), r.report.to_jsonl()?));
            if let Some(d) = &r.dependency {
                out.push((format!("{stem}.dependency.csv"), d.to_csv()));
            }
        }
        if let Some(p) = &self.popularity {
            out.push(("popularity__buckets.csv".to_string(), p.to_csv()));
        }
        Ok(out)
    }

    /// Writes every file under `dir`; on failure, files already written are
    /// removed again.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let files = self.files()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::with_capacity(files.len());
        for (name, text) in files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, text) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                let _ = fs::remove_file(&path);
                return Err(Error::io(path, e));
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InsufficientModalities(_) | Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

struct ConditionView<'a> {
    condition: Condition,
    dataset: MultimodalDataset,
    groups: Option<&'a ModalityGroups>,
}

fn evaluate_source(
    config: &ExperimentConfig,
    view: &ConditionView,
    full: &MultimodalDataset,
    model: Option<&ContrastiveModel>,
    registry: &SourceRegistry,
    name: &str,
) -> Result<SourceReport> {
    let source = registry.create(name)?;
    let ds = &view.dataset;
    let ctx = SourceContext {
        dataset: ds,
        fit_dataset: full,
        model,
        fusion: config.train.fusion,
        out_dim: config.out_dim,
        seed: config.rand_seed(),
    };
    let emb = source.embed(&ctx)?;
    let catalog = ds.catalog();
    let run = retrieve_all(&emb.fused, catalog, config.k, true, name)?;

    let scores = (view.condition != Condition::ModalityGroups).then(|| ndcg_per_query(&run, ds.graph(), config.k));
    let ecl = emb.per_modality.as_ref().map(EclIndex::new);
    let cd = emb.per_modality.as_ref().map(ClusterIndex::new);
    let assignment = view.groups.map(|g| &g.assignment);

    let mut queries = Vec::with_capacity(catalog.len());
    for q in catalog {
        let distances = match &cd {
            Some(idx) => optional(idx.distances(q))?,
            None => None,
        };
        queries.push(QueryRecord {
            query: q.clone(),
            source: name.to_string(),
            condition: view.condition.name().to_string(),
            ndcg: scores.as_ref().map(|s| s[q]),
            topk: run.ids(q),
            group: match assignment {
                Some(a) => Some(a.labels[a.group_of(q)?].clone()),
                None => None,
            },
            popularity: match ds.popularity_table() {
                Some(t) => Some(t.popularity(q)?),
                None => None,
            },
            ecl: match &ecl {
                Some(idx) => optional(idx.ecl(q))?,
                None => None,
            },
            cd_intra: distances.map(|d| d.intra),
            cd_inter: distances.map(|d| d.inter),
        });
    }

    let mut aggregate = AggregateRecord {
        source: name.to_string(),
        condition: view.condition.name().to_string(),
        k: config.k,
        gini: Some(gini_at_k(&run, catalog)),
        ..Default::default()
    };
    let dependency = match assignment {
        Some(a) => {
            aggregate.entropy = Some(group_entropy(&run, a, config.top, config.entropy_mode)?);
            let d = dependency_matrix(&run, a, config.top)?;
            aggregate.dependency_mean_diagonal = Some(d.mean_diagonal());
            Some(d)
        }
        None => None,
    };
    summarize(&queries, &mut aggregate, &config.bootstrap())?;
    Ok(SourceReport {
        condition: view.condition,
        source: name.to_string(),
        report: EvalReport { queries, aggregate },
        dependency,
    })
}

/// Runs every condition and source of `config` against `dataset`, in memory.
pub fn evaluate(
    config: &ExperimentConfig,
    dataset: &MultimodalDataset,
    model: Option<&ContrastiveModel>,
) -> Result<ExperimentResults> {
    config.validate()?;
    let names = config.source_names(dataset);
    let registry = SourceRegistry::with_defaults().with_modalities(dataset.modalities());
    for n in &names {
        registry.create(n)?;
    }
    let groups = if config.conditions.contains(&Condition::ModalityGroups) {
        Some(assign_modality_groups(dataset, config.group_seed())?)
    } else {
        None
    };

    let mut reports = Vec::new();
    let mut popularity = None;
    for &condition in &config.conditions {
        let view = ConditionView {
            condition,
            dataset: condition_dataset(dataset, condition, groups.as_ref())?,
            groups: groups.as_ref().filter(|_| condition == Condition::ModalityGroups),
        };
        let results: Vec<Result<SourceReport>> = std::thread::scope(|s| {
            let handles: Vec<_> = names
                .iter()
                .map(|n| {
                    let (view, registry) = (&view, &registry);
                    s.spawn(move || evaluate_source(config, view, dataset, model, registry, n))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;

        if condition == Condition::Popularity {
            let table = view
                .dataset
                .popularity_table()
                .ok_or_else(|| Error::MissingPopularity("dataset has no popularity table".into()))?;
            let ndcg_by_source: BTreeMap<String, BTreeMap<ArtistId, f64>> = results
                .iter()
                .map(|r| {
                    let scores = r
                        .report
                        .queries
                        .iter()
                        .map(|q| (q.query.clone(), q.ndcg.unwrap_or(0.0)))
                        .collect();
                    (r.source.clone(), scores)
                })
                .collect();
            popularity = Some(popularity_analysis(
                &ndcg_by_source,
                table,
                config.popularity_groups,
                &config.reference,
            )?);
        }
        reports.extend(results);
    }
    Ok(ExperimentResults { reports, popularity })
}

fn needs_model(names: &[String]) -> bool {
    names.iter().any(|n| n == "contrastive" || n.starts_with("contrastive:"))
}

/// Loads or generates the dataset, loads or trains the model if a
/// contrastive source is requested, evaluates, and writes the reports to
/// `config.output`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    let model = if needs_model(&config.source_names(&dataset)) {
        Some(match &config.model {
            Some(path) => ContrastiveModel::load(path)?,
            None => train(&dataset, &config.train_config())?.model,
        })
    } else {
        None
    };
    evaluate(config, &dataset, model.as_ref())?.write(&config.output)
}
