use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mmfuse::baselines::{fit_projector, LinearProjector, ProjectorKind, DEFAULT_OUT_DIM};
use mmfuse::contrastive::{format_loss_log, train as train_model, ContrastiveModel, FusionMode, TrainConfig};
use mmfuse::data::{load_dataset, save_dataset, ArtistId, GraphMode, MultimodalDataset};
use mmfuse::eval::{
    gini_at_k, ndcg_per_query, retrieve_all, summarize, BootstrapConfig, EvalReport, Ranked, RetrievalRun,
};
use mmfuse::experiment::{run_experiment, ExperimentConfig};
use mmfuse::sources::{SourceContext, SourceRegistry};
use mmfuse::synthetic::{generate_synthetic, SyntheticConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Common;

pub enum CliError {
    Usage(String),
    Run(mmfuse::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(
                mmfuse::Error::Config(_) | mmfuse::Error::UnknownSource(_) | mmfuse::Error::UnknownReference(_),
            ) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<mmfuse::Error> for CliError {
    fn from(e: mmfuse::Error) -> Self {
        CliError::Run(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn config_or_default<T: DeserializeOwned + Default>(common: &Common) -> Result<T> {
    match &common.config {
        Some(p) => read_config(p),
        None => Ok(T::default()),
    }
}

fn required_config<T: DeserializeOwned>(common: &Common, command: &str) -> Result<T> {
    match &common.config {
        Some(p) => read_config(p),
        None => Err(CliError::Usage(format!("{command} needs --config <JSON>"))),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Run(io_error(dir, e)))?;
    }
    fs::write(path, text).map_err(|e| CliError::Run(io_error(path, e)))
}

fn io_error(path: &Path, source: std::io::Error) -> mmfuse::Error {
    mmfuse::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn graph_mode(lenient: bool) -> GraphMode {
    if lenient {
        GraphMode::Lenient
    } else {
        GraphMode::Strict
    }
}

fn dataset(dir: &Path, lenient: bool) -> Result<MultimodalDataset> {
    Ok(load_dataset(dir, graph_mode(lenient))?)
}

pub fn gen(common: &Common, out: &Path) -> Result<()> {
    let mut config: SyntheticConfig = required_config(common, "gen")?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    let ds = generate_synthetic(&config)?;
    save_dataset(&ds, out)?;
    eprintln!(
        "wrote {} artists, {} modalities, {} edges to {}",
        ds.catalog().len(),
        ds.modality_count(),
        ds.graph().edge_count(),
        out.display()
    );
    Ok(())
}

pub fn train(common: &Common, data: &Path, out: &Path, log: Option<&Path>, lenient: bool) -> Result<()> {
    let mut config: TrainConfig = config_or_default(common)?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    let ds = dataset(data, lenient)?;
    let outcome = train_model(&ds, &config)?;
    if let Some(path) = log {
        write(path, &format_loss_log(&outcome.log)?)?;
    }
    if let Some(prev) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(prev).map_err(|e| CliError::Run(io_error(prev, e)))?;
    }
    outcome.model.save(out)?;
    if let Some(last) = outcome.log.last() {
        eprintln!("epoch {}: mean loss {:.6}", last.epoch, last.mean_loss);
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProjectConfig {
    kind: ProjectorKind,
    out_dim: usize,
    seed: u64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            kind: ProjectorKind::Pca,
            out_dim: DEFAULT_OUT_DIM,
            seed: 0,
        }
    }
}

fn parse_kind(name: &str) -> Result<ProjectorKind> {
    match name {
        "pca" => Ok(ProjectorKind::Pca),
        "rand" => Ok(ProjectorKind::Rand),
        other => Err(CliError::Usage(format!("unknown projector kind `{other}` (expected pca or rand)"))),
    }
}

pub fn project(
    common: &Common,
    data: &Path,
    out: &Path,
    kind: Option<&str>,
    out_dim: Option<usize>,
    lenient: bool,
) -> Result<()> {
    let mut config: ProjectConfig = config_or_default(common)?;
    if let Some(k) = kind {
        config.kind = parse_kind(k)?;
    }
    if let Some(d) = out_dim {
        config.out_dim = d;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    let ds = dataset(data, lenient)?;
    let projector = fit_projector(config.kind, &ds, config.out_dim, config.seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Run(io_error(dir, e)))?;
    }
    projector.save(out)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RetrieveConfig {
    source: String,
    k: usize,
    fusion: FusionMode,
    out_dim: usize,
    seed: u64,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        RetrieveConfig {
            source: "contrastive".into(),
            k: 10,
            fusion: FusionMode::default(),
            out_dim: DEFAULT_OUT_DIM,
            seed: 0,
        }
    }
}

pub struct RetrieveArgs {
    pub data: PathBuf,
    pub queries: Vec<String>,
    pub k: Option<usize>,
    pub source: Option<String>,
    pub model: Option<PathBuf>,
    pub projector: Option<PathBuf>,
    pub lenient: bool,
}

/// Prints `query<TAB>rank<TAB>artist<TAB>score` for every result.
pub fn retrieve(common: &Common, args: &RetrieveArgs) -> Result<()> {
    let mut config: RetrieveConfig = config_or_default(common)?;
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(s) = &args.source {
        config.source = s.clone();
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    let queries: Vec<ArtistId> = args
        .queries
        .iter()
        .map(|q| ArtistId::new(q.as_str()))
        .collect::<mmfuse::Result<_>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = dataset(&args.data, args.lenient)?;
    for q in &queries {
        if !ds.catalog().contains(q) {
            return Err(CliError::Run(mmfuse::Error::UnknownArtist(q.to_string())));
        }
    }

    let (label, embeddings) = match &args.projector {
        Some(path) => {
            let p = LinearProjector::load(path)?;
            (p.kind().name().to_string(), p.project_all(&ds)?)
        }
        None => {
            let model = args.model.as_ref().map(ContrastiveModel::load).transpose()?;
            let registry = SourceRegistry::with_defaults().with_modalities(ds.modalities());
            let source = registry.create(&config.source)?;
            let ctx = SourceContext {
                dataset: &ds,
                fit_dataset: &ds,
                model: model.as_ref(),
                fusion: config.fusion,
                out_dim: config.out_dim,
                seed: config.seed,
            };
            (config.source.clone(), source.embed(&ctx)?.fused)
        }
    };
    let run = retrieve_all(&embeddings, &queries, config.k, false, &label)?;
    let mut out = String::new();
    for q in &queries {
        for (rank, r) in run.results[q].iter().enumerate() {
            out.push_str(&format!("{q}\t{}\t{}\t{:.6}\n", rank + 1, r.artist, r.score));
        }
    }
    print!("{out}");
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    k: Option<usize>,
    bootstrap: BootstrapConfig,
}

/// Recomputes nDCG, Gini and the summary statistics of a stored report.
pub fn eval(common: &Common, data: &Path, report: &Path, out: &Path, k: Option<usize>, lenient: bool) -> Result<()> {
    let mut config: EvalConfig = config_or_default(common)?;
    if let Some(s) = common.seed {
        config.bootstrap.seed = s;
    }
    let text = fs::read_to_string(report).map_err(|e| CliError::Run(io_error(report, e)))?;
    let mut rep = EvalReport::from_jsonl(&text)?;
    let k = k.or(config.k).unwrap_or(rep.aggregate.k);
    if k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let ds = dataset(data, lenient)?;
    let run = RetrievalRun {
        source: rep.aggregate.source.clone(),
        k,
        results: rep
            .queries
            .iter()
            .map(|q| {
                let ranked = q
                    .topk
                    .iter()
                    .take(k)
                    .map(|a| Ranked {
                        artist: a.clone(),
                        score: 0.0,
                    })
                    .collect();
                (q.query.clone(), ranked)
            })
            .collect(),
    };
    let scores = ndcg_per_query(&run, ds.graph(), k);
    for q in &mut rep.queries {
        q.ndcg = Some(scores[&q.query]);
    }
    rep.aggregate.k = k;
    rep.aggregate.gini = Some(gini_at_k(&run, ds.catalog()));
    summarize(&rep.queries, &mut rep.aggregate, &config.bootstrap)?;
    write(out, &rep.to_jsonl()?)?;
    if let Some(m) = rep.aggregate.mean_ndcg {
        eprintln!("{}: mean nDCG@{k} {m:.4} over {} queries", rep.aggregate.source, rep.aggregate.n_queries);
    }
    Ok(())
}

pub fn experiment(common: &Common, output: Option<PathBuf>, model: Option<PathBuf>) -> Result<()> {
    let mut config: ExperimentConfig = required_config(common, "experiment")?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(o) = output {
        config.output = o;
    }
    if model.is_some() {
        config.model = model;
    }
    for p in run_experiment(&config)? {
        println!("{}", p.display());
    }
    Ok(())
}
