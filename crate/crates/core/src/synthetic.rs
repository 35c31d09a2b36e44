//! Synthetic multimodal datasets: every modality is a noisy linear view of
//! one latent vector per artist, and ground-truth similarity is the
//! latent neighborhood.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    ArtistId, EmbeddingTable, ModalityId, MultimodalDataset, PopularityTable, SimilarityGraph,
};
use crate::error::{Error, Result};
use crate::numerics::{cosine_matrix, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityView {
    pub dim: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub coverage: f64,
    /// Multiplies the whole view, so views can differ in magnitude.
    #[serde(default = "one")]
    pub scale: f64,
    /// In `[0, 1]`. Coverage probability is scaled by `1 − b + 2b·q` where
    /// `q ∈ [0, 1]` is the artist's popularity quantile.
    #[serde(default)]
    pub popularity_bias: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LogNormalParams {
    fn default() -> Self {
        LogNormalParams { mu: 6.0, sigma: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_artists: usize,
    pub latent_dim: usize,
    pub modalities: BTreeMap<ModalityId, ModalityView>,
    /// Ground-truth neighbors per artist before symmetrization.
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    #[serde(default)]
    pub popularity: LogNormalParams,
    /// Log-scale spread of a per-artist multiplier on every view's noise.
    #[serde(default)]
    pub noise_heterogeneity: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_neighbors() -> usize {
    10
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_artists < 2 {
            return bad("n_artists must be at least 2".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.neighbors == 0 || self.neighbors >= self.n_artists {
            return bad(format!(
                "neighbors must lie in [1, n_artists), got {}",
                self.neighbors
            ));
        }
        if self.modalities.len() < 2 {
            return bad("at least 2 modalities are required".into());
        }
        for (m, v) in &self.modalities {
            if v.dim == 0 {
                return bad(format!("{m}: dim must be positive"));
            }
            if !(v.noise_sigma >= 0.0 && v.noise_sigma.is_finite()) {
                return bad(format!("{m}: noise_sigma must be finite and non-negative"));
            }
            if !(v.coverage > 0.0 && v.coverage <= 1.0) {
                return bad(format!("{m}: coverage must lie in (0, 1]"));
            }
            if !(v.scale > 0.0 && v.scale.is_finite()) {
                return bad(format!("{m}: scale must be positive"));
            }
            if !(0.0..=1.0).contains(&v.popularity_bias) {
                return bad(format!("{m}: popularity_bias must lie in [0, 1]"));
            }
        }
        if !(self.popularity.sigma >= 0.0 && self.popularity.sigma.is_finite())
            || !self.popularity.mu.is_finite()
        {
            return bad("popularity parameters must be finite with sigma >= 0".into());
        }
        if !(self.noise_heterogeneity >= 0.0 && self.noise_heterogeneity.is_finite()) {
            return bad("noise_heterogeneity must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Zero-padded ids so lexicographic and numeric order agree.
pub fn artist_ids(n: usize) -> Vec<ArtistId> {
    let width = (n.saturating_sub(1)).to_string().len().max(4);
    (0..n)
        .map(|i| ArtistId::new(format!("a{i:0width$}")).expect("valid id"))
        .collect()
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<MultimodalDataset> {
    config.validate()?;
    let n = config.n_artists;
    let l = config.latent_dim;
    let ids = artist_ids(n);

    let mut latent_rng = rng::derived(config.seed, 1);
    let latent: Vec<f64> = (0..n * l).map(|_| latent_rng.sample(StandardNormal)).collect();

    let counts = sample_counts(config, n)?;
    let quantile = popularity_quantiles(&counts);

    let mut hetero_rng = rng::derived(config.seed, 3);
    let noise_factor: Vec<f64> = (0..n)
        .map(|_| {
            let xi: f64 = hetero_rng.sample(StandardNormal);
            (config.noise_heterogeneity * xi).exp()
        })
        .collect();

    let modalities: Vec<(&ModalityId, &ModalityView)> = config.modalities.iter().collect();
    let mut present = vec![vec![false; modalities.len()]; n];
    for (k, (_, view)) in modalities.iter().enumerate() {
        let mut mask_rng = rng::derived(config.seed, 12 + 3 * k as u64);
        for i in 0..n {
            let b = view.popularity_bias;
            let p = (view.coverage * (1.0 - b + 2.0 * b * quantile[i])).clamp(0.0, 1.0);
            present[i][k] = mask_rng.random::<f64>() < p;
        }
    }
    let mut rescue_rng = rng::derived(config.seed, 4);
    for row in &mut present {
        if !row.iter().any(|&p| p) {
            let k = rescue_rng.random_range(0..row.len());
            row[k] = true;
        }
    }

    let mut tables = Vec::with_capacity(modalities.len());
    for (k, (m, view)) in modalities.iter().enumerate() {
        let mut mix_rng = rng::derived(config.seed, 10 + 3 * k as u64);
        let std = (1.0 / l as f64).sqrt();
        let a: Vec<f64> = (0..view.dim * l)
            .map(|_| std * mix_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut noise_rng = rng::derived(config.seed, 11 + 3 * k as u64);
        let mut table = EmbeddingTable::new((*m).clone(), view.dim)?;
        for i in 0..n {
            // Noise is drawn for every artist so coverage does not shift
            // the stream.
            let z = &latent[i * l..(i + 1) * l];
            let sigma = view.noise_sigma * noise_factor[i];
            let row: Vec<f64> = (0..view.dim)
                .map(|r| {
                    let signal: f64 = a[r * l..(r + 1) * l].iter().zip(z).map(|(x, y)| x * y).sum();
                    let eps: f64 = noise_rng.sample(StandardNormal);
                    view.scale * (signal + sigma * eps)
                })
                .collect();
            if present[i][k] {
                table.insert(ids[i].clone(), row)?;
            }
        }
        tables.push(table);
    }

    let graph = latent_neighbors(&ids, &latent, l, config.neighbors)?;
    let mut popularity = PopularityTable::new();
    for (id, c) in ids.iter().zip(&counts) {
        popularity.insert(id.clone(), *c);
    }
    MultimodalDataset::new(tables, graph, Some(popularity))
}

fn sample_counts(config: &SyntheticConfig, n: usize) -> Result<Vec<u64>> {
    let dist = LogNormal::new(config.popularity.mu, config.popularity.sigma)
        .map_err(|e| Error::Config(format!("popularity distribution: {e}")))?;
    let mut pop_rng = rng::derived(config.seed, 2);
    Ok((0..n)
        .map(|_| {
            let x: f64 = dist.sample(&mut pop_rng);
            x.round().min(u64::MAX as f64) as u64
        })
        .collect())
}

/// Rank of each count in ascending (count, index) order, scaled to [0, 1].
fn popularity_quantiles(counts: &[u64]) -> Vec<f64> {
    let n = counts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (counts[i], i));
    let mut q = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = rank as f64 / (n - 1) as f64;
    }
    q
}

/// Each artist linked to its `g` most cosine-similar artists in latent
/// space; ties go to the smaller index.
fn latent_neighbors(ids: &[ArtistId], latent: &[f64], l: usize, g: usize) -> Result<SimilarityGraph> {
    let n = ids.len();
    let z = Tensor::matrix(n, l, latent.to_vec())?;
    let sims = cosine_matrix(&z, &z)?;
    let mut graph = SimilarityGraph::new();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = sims.row(i);
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..g] {
            graph.add_edge(ids[i].clone(), ids[j].clone())?;
        }
    }
    Ok(graph)
}
