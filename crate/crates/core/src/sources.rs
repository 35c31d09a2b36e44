//! Embedding sources selectable by name: the contrastive model (optionally
//! restricted to a modality subset), the PCA and random-projection
//! baselines, and raw single-modality embeddings.

use std::collections::{BTreeMap, BTreeSet};

use crate::baselines::{fit_projector, ProjectorKind};
use crate::contrastive::{average_modalities, encode_dataset, ContrastiveModel, FusionMode};
use crate::data::{ModalityId, MultimodalDataset};
use crate::embedding::{EmbeddingSet, ModalityEmbeddings};
use crate::error::{Error, Result};

/// Everything a source may need to produce embeddings for one condition.
pub struct SourceContext<'a> {
    /// Artists and modalities visible under the condition.
    pub dataset: &'a MultimodalDataset,
    /// Unmasked dataset that baselines are fitted on.
    pub fit_dataset: &'a MultimodalDataset,
    pub model: Option<&'a ContrastiveModel>,
    pub fusion: FusionMode,
    pub out_dim: usize,
    pub seed: u64,
}

pub struct SourceEmbeddings {
    /// One retrieval vector per embeddable artist.
    pub fused: EmbeddingSet,
    /// Per-modality shared-space vectors, when the source has a shared
    /// space.
    pub per_modality: Option<ModalityEmbeddings>,
}

pub trait EmbeddingSource: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, ctx: &SourceContext) -> Result<SourceEmbeddings>;
}

pub struct Contrastive {
    name: String,
    only: Option<BTreeSet<ModalityId>>,
}

impl Contrastive {
    pub fn new(only: Option<BTreeSet<ModalityId>>) -> Self {
        let name = match &only {
            None => "contrastive".to_string(),
            Some(ms) => format!(
                "contrastive:{}",
                ms.iter().map(ModalityId::as_str).collect::<Vec<_>>().join("+")
            ),
        };
        Contrastive { name, only }
    }
}

impl EmbeddingSource for Contrastive {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, ctx: &SourceContext) -> Result<SourceEmbeddings> {
        let model = ctx
            .model
            .ok_or_else(|| Error::Config(format!("source {} needs a contrastive model", self.name)))?;
        if let Some(only) = &self.only {
            if let Some(m) = only.iter().find(|m| model.encoder(m).is_none()) {
                return Err(Error::Config(format!("model has no encoder for {m}")));
            }
        }
        let shared = encode_dataset(model, ctx.dataset, FusionMode::Normalized, self.only.as_ref())?;
        let fused = match ctx.fusion {
            FusionMode::Normalized => average_modalities(&shared)?,
            FusionMode::RawAverage => {
                average_modalities(&encode_dataset(model, ctx.dataset, ctx.fusion, self.only.as_ref())?)?
            }
        };
        Ok(SourceEmbeddings {
            fused: fused.vectors,
            per_modality: Some(shared),
        })
    }
}

pub struct Projection {
    kind: ProjectorKind,
}

impl EmbeddingSource for Projection {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn embed(&self, ctx: &SourceContext) -> Result<SourceEmbeddings> {
        let projector = fit_projector(self.kind, ctx.fit_dataset, ctx.out_dim, ctx.seed)?;
        Ok(SourceEmbeddings {
            fused: projector.project_all(ctx.dataset)?,
            per_modality: None,
        })
    }
}

/// The raw input embeddings of one modality; artists without it cannot be
/// retrieved.
pub struct SingleModality {
    modality: ModalityId,
}

impl EmbeddingSource for SingleModality {
    fn name(&self) -> &str {
        self.modality.as_str()
    }

    fn embed(&self, ctx: &SourceContext) -> Result<SourceEmbeddings> {
        let table = ctx
            .dataset
            .table(&self.modality)
            .ok_or_else(|| Error::UnknownSource(self.modality.to_string()))?;
        let mut fused = EmbeddingSet::new(table.dim());
        for (a, row) in table.iter() {
            fused.insert(a.clone(), row.to_vec())?;
        }
        Ok(SourceEmbeddings {
            fused,
            per_modality: None,
        })
    }
}

type Factory = Box<dyn Fn(Option<&str>) -> Result<Box<dyn EmbeddingSource>> + Send + Sync>;

/// Source constructors by name. A name is `kind` or `kind:argument`.
pub struct SourceRegistry {
    factories: BTreeMap<String, Factory>,
}

impl SourceRegistry {
    pub fn empty() -> Self {
        SourceRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `contrastive[:m1+m2+…]`, `pca` and `rand`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("contrastive", |arg| {
            let only = match arg {
                None => None,
                Some(list) => Some(
                    list.split('+')
                        .map(ModalityId::new)
                        .collect::<Result<BTreeSet<_>>>()?,
                ),
            };
            Ok(Box::new(Contrastive::new(only)))
        });
        for kind in [ProjectorKind::Pca, ProjectorKind::Rand] {
            r.register(kind.name(), move |arg| {
                reject_argument(kind.name(), arg)?;
                Ok(Box::new(Projection { kind }))
            });
        }
        r
    }

    /// Registers the raw embeddings of each modality under its own name.
    pub fn with_modalities<'m>(mut self, modalities: impl IntoIterator<Item = &'m ModalityId>) -> Self {
        for m in modalities {
            let modality = m.clone();
            self.register(m.as_str(), move |arg| {
                reject_argument(modality.as_str(), arg)?;
                Ok(Box::new(SingleModality {
                    modality: modality.clone(),
                }))
            });
        }
        self
    }

    pub fn register(
        &mut self,
        kind: &str,
        factory: impl Fn(Option<&str>) -> Result<Box<dyn EmbeddingSource>> + Send + Sync + 'static,
    ) {
        self.factories.insert(kind.to_string(), Box::new(factory));
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn EmbeddingSource>> {
        let (kind, arg) = match name.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (name, None),
        };
        let factory = self
            .factories
            .get(kind)
            .ok_or_else(|| Error::UnknownSource(name.to_string()))?;
        factory(arg)
    }
}

fn reject_argument(kind: &str, arg: Option<&str>) -> Result<()> {
    match arg {
        None => Ok(()),
        Some(a) => Err(Error::UnknownSource(format!("{kind}:{a}"))),
    }
}

/// Names of the contrastive model restricted to every non-empty subset of
/// `modalities`: singletons first, then pairs, and so on, each group in
/// lexicographic order.
pub fn modality_combinations(modalities: &[ModalityId]) -> Vec<String> {
    let n = modalities.len();
    let mut subsets: Vec<Vec<&ModalityId>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &modalities[i]).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
        .into_iter()
        .map(|s| {
            format!(
                "contrastive:{}",
                s.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
            )
        })
        .collect()
}
