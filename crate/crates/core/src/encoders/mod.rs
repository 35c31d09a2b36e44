//! Per-modality encoders mapping raw embeddings into the shared space.
//!
//! An [`Encoder`] pairs a serializable [`EncoderConfig`] with its parameters.
//! The forward computation lives behind the [`Architecture`] trait, one
//! implementation per config kind. Named presets (`cf`, `audio`, `tag`)
//! resolve to concrete configs for a given input width.

mod attention;
mod mlp;

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::rng;

pub use attention::{AttentionEncoder, MultiHeadAttention};
pub use mlp::MlpEncoder;

pub const DEFAULT_OUTPUT_DIM: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    Mlp {
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
    },
    Attention {
        input_dim: usize,
        model_width: usize,
        num_heads: usize,
        token_size: usize,
        output_dim: usize,
    },
}

impl EncoderConfig {
    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        EncoderConfig::Mlp {
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    pub fn attention(
        input_dim: usize,
        model_width: usize,
        num_heads: usize,
        token_size: usize,
        output_dim: usize,
    ) -> Self {
        EncoderConfig::Attention {
            input_dim,
            model_width,
            num_heads,
            token_size,
            output_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EncoderConfig::Mlp { input_dim, .. } | EncoderConfig::Attention { input_dim, .. } => {
                *input_dim
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderConfig::Mlp { output_dim, .. }
            | EncoderConfig::Attention { output_dim, .. } => *output_dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EncoderConfig::Mlp { .. } => "mlp",
            EncoderConfig::Attention { .. } => "attention",
        }
    }

    /// Instantiates the forward computation for this config.
    pub fn architecture(&self) -> Result<Arc<dyn Architecture>> {
        Ok(match self {
            EncoderConfig::Mlp {
                input_dim,
                hidden_dims,
                output_dim,
            } => Arc::new(MlpEncoder::new(*input_dim, hidden_dims.clone(), *output_dim)?),
            EncoderConfig::Attention {
                input_dim,
                model_width,
                num_heads,
                token_size,
                output_dim,
            } => Arc::new(AttentionEncoder::new(
                *input_dim,
                *model_width,
                *num_heads,
                *token_size,
                *output_dim,
            )?),
        })
    }
}

/// Forward computation of one encoder kind.
pub trait Architecture: Send + Sync {
    /// Parameter names and shapes. Names ending in `weight` (or listed by
    /// [`Architecture::is_weight`]) get Glorot initialization, the rest zero.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;

    fn is_weight(&self, name: &str, shape: &[usize]) -> bool {
        let _ = name;
        shape.len() == 2
    }

    fn forward(&self, graph: &mut Graph, params: &BoundParams, x: Var) -> Result<Var>;
}

/// Glorot-uniform weights, zero biases.
fn init_params(arch: &dyn Architecture, seed: u64) -> ParamSet {
    let mut rng = rng::seeded(seed);
    let mut params = ParamSet::new();
    for (name, shape) in arch.param_shapes() {
        let mut t = Tensor::zeros(&shape);
        if arch.is_weight(&name, &shape) {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        params.insert(name, t);
    }
    params
}

#[derive(Clone)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamSet,
    arch: Arc<dyn Architecture>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("config", &self.config)
            .field("params", &self.params.size())
            .finish()
    }
}

impl Encoder {
    /// Fresh encoder with seeded initialization.
    pub fn build(config: EncoderConfig, seed: u64) -> Result<Self> {
        let arch = config.architecture()?;
        let params = init_params(arch.as_ref(), seed);
        Ok(Encoder {
            config,
            params,
            arch,
        })
    }

    /// Reassembles an encoder from a checkpoint, checking every parameter.
    pub fn from_parts(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let arch = config.architecture()?;
        let expected = arch.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "{} encoder expects {} parameters, checkpoint has {}",
                config.kind(),
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numerical(format!("parameter {name} is not finite")));
            }
        }
        Ok(Encoder {
            config,
            params,
            arch,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.size()
    }

    /// Records the forward pass on `graph`; parameters are registered with
    /// names prefixed by `prefix`.
    pub fn forward_graph(&self, graph: &mut Graph, prefix: &str, x: Var) -> Result<Var> {
        let (_, width) = graph.value(x).dims2()?;
        if width != self.config.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects width {}, batch has {width}",
                self.config.input_dim()
            )));
        }
        let bound = self.params.bind(graph, prefix)?;
        self.arch.forward(graph, &bound, x)
    }

    /// `M × input_dim → M × output_dim`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(batch.clone())?;
        let y = self.forward_graph(&mut g, "", x)?;
        Ok(g.value(y).clone())
    }
}

/// Preset architectures by name, each with output width 200.
pub const PRESETS: &[&str] = &["audio", "cf", "tag"];

pub fn preset(name: &str, input_dim: usize) -> Result<EncoderConfig> {
    match name {
        "cf" => Ok(EncoderConfig::mlp(input_dim, vec![256], DEFAULT_OUTPUT_DIM)),
        "audio" => Ok(EncoderConfig::mlp(input_dim, vec![512, 256], DEFAULT_OUTPUT_DIM)),
        "tag" => Ok(EncoderConfig::attention(input_dim, 256, 4, 32, DEFAULT_OUTPUT_DIM)),
        other => Err(Error::Config(format!(
            "unknown encoder preset `{other}` (known: {})",
            PRESETS.join(", ")
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mlp,
    Attention,
}

/// Encoder choice as written in a training config: a preset, a kind, or a
/// preset with field overrides.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EncoderKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
}

impl EncoderSpec {
    pub fn preset(name: &str) -> Self {
        EncoderSpec {
            preset: Some(name.to_string()),
            ..Default::default()
        }
    }

    pub fn resolve(&self, input_dim: usize) -> Result<EncoderConfig> {
        let base = match (&self.preset, self.kind) {
            (Some(p), _) => preset(p, input_dim)?,
            (None, Some(EncoderKind::Mlp)) => EncoderConfig::mlp(input_dim, vec![], DEFAULT_OUTPUT_DIM),
            (None, Some(EncoderKind::Attention)) => {
                EncoderConfig::attention(input_dim, 256, 4, 32, DEFAULT_OUTPUT_DIM)
            }
            (None, None) => {
                return Err(Error::Config("encoder needs a `preset` or a `kind`".into()))
            }
        };
        let config = match base {
            EncoderConfig::Mlp {
                input_dim,
                hidden_dims,
                output_dim,
            } => {
                if self.model_width.is_some() || self.num_heads.is_some() || self.token_size.is_some() {
                    return Err(Error::Config("attention fields given for an mlp encoder".into()));
                }
                EncoderConfig::Mlp {
                    input_dim,
                    hidden_dims: self.hidden_dims.clone().unwrap_or(hidden_dims),
                    output_dim: self.output_dim.unwrap_or(output_dim),
                }
            }
            EncoderConfig::Attention {
                input_dim,
                model_width,
                num_heads,
                token_size,
                output_dim,
            } => {
                if self.hidden_dims.is_some() {
                    return Err(Error::Config("hidden_dims given for an attention encoder".into()));
                }
                EncoderConfig::Attention {
                    input_dim,
                    model_width: self.model_width.unwrap_or(model_width),
                    num_heads: self.num_heads.unwrap_or(num_heads),
                    token_size: self.token_size.unwrap_or(token_size),
                    output_dim: self.output_dim.unwrap_or(output_dim),
                }
            }
        };
        config.architecture()?;
        Ok(config)
    }
}
