//! Linear multimodal baselines: modalities are concatenated (missing ones
//! replaced by a fitted mean) and mapped to a low-dimensional space by PCA
//! or a Gaussian random projection.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ArtistId, ModalityId, MultimodalDataset};
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numerics::{gemm, symmetric_eigen, Tensor};
use crate::rng;

pub const DEFAULT_OUT_DIM: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    Pca,
    Rand,
}

impl ProjectorKind {
    pub fn name(self) -> &'static str {
        match self {
            ProjectorKind::Pca => "pca",
            ProjectorKind::Rand => "rand",
        }
    }
}

/// Concatenation layout (lexicographic modality order) and per-modality
/// means over the full-coverage artists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Imputation {
    layout: Vec<(ModalityId, usize)>,
    means: BTreeMap<ModalityId, Vec<f64>>,
}

impl Imputation {
    pub fn fit(dataset: &MultimodalDataset) -> Result<Self> {
        let population = dataset.full_coverage_subset();
        if population.is_empty() {
            return Err(Error::IncompleteCoverage(
                "no full-coverage artist to fit imputation means on".into(),
            ));
        }
        let mut layout = Vec::new();
        let mut means = BTreeMap::new();
        for table in dataset.tables() {
            let mut mean = vec![0.0; table.dim()];
            for a in &population {
                let row = table.get(a).expect("full-coverage artist");
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= population.len() as f64;
            }
            layout.push((table.modality().clone(), table.dim()));
            means.insert(table.modality().clone(), mean);
        }
        Ok(Imputation { layout, means })
    }

    fn validate(&self) -> Result<()> {
        for (m, dim) in &self.layout {
            match self.means.get(m) {
                Some(mean) if mean.len() == *dim && mean.iter().all(|x| x.is_finite()) => {}
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "imputation mean for {m} does not match its dim {dim}"
                    )))
                }
            }
        }
        if self.means.len() != self.layout.len() {
            return Err(Error::ShapeMismatch("imputation means do not match layout".into()));
        }
        Ok(())
    }

    pub fn concat_dim(&self) -> usize {
        self.layout.iter().map(|(_, d)| d).sum()
    }

    pub fn layout(&self) -> &[(ModalityId, usize)] {
        &self.layout
    }

    pub fn mean(&self, modality: &ModalityId) -> Option<&[f64]> {
        self.means.get(modality).map(Vec::as_slice)
    }

    /// The artist's modalities concatenated in layout order, each missing
    /// one replaced by its mean.
    pub fn concat(&self, dataset: &MultimodalDataset, artist: &ArtistId) -> Result<Vec<f64>> {
        if !dataset.catalog().contains(artist) {
            return Err(Error::UnknownArtist(artist.to_string()));
        }
        let mut out = Vec::with_capacity(self.concat_dim());
        for (m, dim) in &self.layout {
            match dataset.embedding(artist, m) {
                Some(row) if row.len() == *dim => out.extend_from_slice(row),
                Some(row) => {
                    return Err(Error::ShapeMismatch(format!(
                        "{m} rows have {} values, projector expects {dim}",
                        row.len()
                    )))
                }
                None => out.extend_from_slice(&self.means[m]),
            }
        }
        Ok(out)
    }
}

/// A fitted affine map `x ↦ (x − center)ᵀ W` over imputed concatenations.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProjector {
    kind: ProjectorKind,
    weights: Tensor,
    center: Option<Vec<f64>>,
    imputation: Option<Imputation>,
}

impl LinearProjector {
    pub fn kind(&self) -> ProjectorKind {
        self.kind
    }

    pub fn concat_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `concat_dim × out_dim`.
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn center(&self) -> Option<&[f64]> {
        self.center.as_deref()
    }

    pub fn imputation(&self) -> Option<&Imputation> {
        self.imputation.as_ref()
    }

    /// Attaches imputation means fitted on `dataset`.
    pub fn with_imputation(mut self, imputation: Imputation) -> Result<Self> {
        if imputation.concat_dim() != self.concat_dim() {
            return Err(Error::ShapeMismatch(format!(
                "imputation layout has width {}, projector expects {}",
                imputation.concat_dim(),
                self.concat_dim()
            )));
        }
        self.imputation = Some(imputation);
        Ok(self)
    }

    pub fn concat_with_imputation(&self, dataset: &MultimodalDataset, artist: &ArtistId) -> Result<Vec<f64>> {
        self.imputation
            .as_ref()
            .ok_or(Error::UnfittedProjector)?
            .concat(dataset, artist)
    }

    /// Projects a raw concatenated vector.
    pub fn project_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.project_rows(x, 1)?;
        out.truncate(self.out_dim());
        Ok(out)
    }

    fn project_rows(&self, rows: &[f64], n: usize) -> Result<Vec<f64>> {
        let d = self.concat_dim();
        if rows.len() != n * d {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} rows of width {d}, got {} values",
                rows.len()
            )));
        }
        let centered: Vec<f64> = match &self.center {
            Some(c) => rows
                .chunks_exact(d)
                .flat_map(|r| r.iter().zip(c).map(|(x, m)| x - m))
                .collect(),
            None => rows.to_vec(),
        };
        let k = self.out_dim();
        let mut out = vec![0.0; n * k];
        gemm(n, d, k, &centered, false, self.weights.data(), false, 0.0, &mut out);
        Ok(out)
    }

    pub fn project(&self, dataset: &MultimodalDataset, artist: &ArtistId) -> Result<Vec<f64>> {
        self.project_vector(&self.concat_with_imputation(dataset, artist)?)
    }

    /// Projections of every catalog artist.
    pub fn project_all(&self, dataset: &MultimodalDataset) -> Result<EmbeddingSet> {
        let imputation = self.imputation.as_ref().ok_or(Error::UnfittedProjector)?;
        let artists: Vec<&ArtistId> = dataset.catalog().iter().collect();
        let mut rows = Vec::with_capacity(artists.len() * self.concat_dim());
        for a in &artists {
            rows.extend(imputation.concat(dataset, a)?);
        }
        let out = self.project_rows(&rows, artists.len())?;
        let mut set = EmbeddingSet::new(self.out_dim());
        for (a, v) in artists.into_iter().zip(out.chunks_exact(self.out_dim().max(1))) {
            set.insert(a.clone(), v.to_vec())?;
        }
        Ok(set)
    }

    pub fn to_checkpoint(&self) -> ProjectorCheckpoint {
        ProjectorCheckpoint {
            kind: self.kind,
            concat_dim: self.concat_dim(),
            out_dim: self.out_dim(),
            center: self.center.clone(),
            weights: self.weights.data().to_vec(),
            imputation: self.imputation.clone(),
        }
    }

    pub fn from_checkpoint(c: ProjectorCheckpoint) -> Result<Self> {
        if c.concat_dim == 0 || c.out_dim == 0 {
            return Err(Error::Config("projector dims must be positive".into()));
        }
        let weights = Tensor::matrix(c.concat_dim, c.out_dim, c.weights)?;
        if !weights.is_finite() {
            return Err(Error::Numerical("non-finite projection weights".into()));
        }
        match (&c.center, c.kind) {
            (Some(center), ProjectorKind::Pca) if center.len() == c.concat_dim => {}
            (None, ProjectorKind::Rand) => {}
            _ => return Err(Error::Config("center must be present exactly for pca".into())),
        }
        let projector = LinearProjector {
            kind: c.kind,
            weights,
            center: c.center,
            imputation: None,
        };
        match c.imputation {
            Some(imp) => {
                imp.validate()?;
                projector.with_imputation(imp)
            }
            None => Ok(projector),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// On-disk projector: `weights` is the row-major `concat_dim × out_dim`
/// matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorCheckpoint {
    pub kind: ProjectorKind,
    pub concat_dim: usize,
    pub out_dim: usize,
    pub center: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    pub imputation: Option<Imputation>,
}

/// PCA over the concatenated vectors of the full-coverage artists.
///
/// Columns of `W` are the top `out_dim` eigenvectors of the covariance,
/// eigenvalues descending, each signed so its largest-magnitude entry is
/// positive.
pub fn fit_pca(dataset: &MultimodalDataset, out_dim: usize) -> Result<LinearProjector> {
    let imputation = Imputation::fit(dataset)?;
    let population = dataset.full_coverage_subset();
    let n = population.len();
    let d = imputation.concat_dim();
    if out_dim == 0 || out_dim > d {
        return Err(Error::Config(format!(
            "pca out_dim must lie in [1, {d}], got {out_dim}"
        )));
    }
    if n < out_dim {
        return Err(Error::Config(format!(
            "pca needs at least out_dim = {out_dim} full-coverage artists, got {n}"
        )));
    }
    let mut x = Vec::with_capacity(n * d);
    for a in &population {
        x.extend(imputation.concat(dataset, a)?);
    }
    let mut center = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }
    for row in x.chunks_exact_mut(d) {
        for (v, c) in row.iter_mut().zip(&center) {
            *v -= c;
        }
    }
    let mut cov = vec![0.0; d * d];
    gemm(d, n, d, &x, true, &x, false, 0.0, &mut cov);
    for v in &mut cov {
        *v /= n as f64;
    }
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = s;
            cov[j * d + i] = s;
        }
    }
    let eig = symmetric_eigen(&cov, d)?;
    let mut w = vec![0.0; d * out_dim];
    for j in 0..out_dim {
        let mut v = eig.vector(j);
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            w[i * out_dim + j] = v[i];
        }
    }
    LinearProjector {
        kind: ProjectorKind::Pca,
        weights: Tensor::matrix(d, out_dim, w)?,
        center: Some(center),
        imputation: None,
    }
    .with_imputation(imputation)
}

/// `concat_dim × out_dim` matrix with i.i.d. `N(0, 1/out_dim)` entries and
/// no centering. Imputation means must be attached before projecting
/// dataset artists.
pub fn fit_random_projection(concat_dim: usize, out_dim: usize, seed: u64) -> Result<LinearProjector> {
    if concat_dim == 0 || out_dim == 0 {
        return Err(Error::Config("random projection dims must be positive".into()));
    }
    let normal = Normal::new(0.0, (1.0 / out_dim as f64).sqrt())
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::seeded(seed);
    let w: Vec<f64> = (0..concat_dim * out_dim).map(|_| normal.sample(&mut r)).collect();
    Ok(LinearProjector {
        kind: ProjectorKind::Rand,
        weights: Tensor::matrix(concat_dim, out_dim, w)?,
        center: None,
        imputation: None,
    })
}

/// Random projection sized for `dataset`, with imputation fitted on it.
pub fn fit_random_projection_for(
    dataset: &MultimodalDataset,
    out_dim: usize,
    seed: u64,
) -> Result<LinearProjector> {
    let imputation = Imputation::fit(dataset)?;
    fit_random_projection(imputation.concat_dim(), out_dim, seed)?.with_imputation(imputation)
}

/// Fits either baseline by kind.
pub fn fit_projector(
    kind: ProjectorKind,
    dataset: &MultimodalDataset,
    out_dim: usize,
    seed: u64,
) -> Result<LinearProjector> {
    match kind {
        ProjectorKind::Pca => fit_pca(dataset, out_dim),
        ProjectorKind::Rand => fit_random_projection_for(dataset, out_dim, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::{dataset, id, modality, TableSpec};
    use crate::numerics::dot;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_dataset(n: usize, seed: u64) -> MultimodalDataset {
        let mut r = rng::seeded(seed);
        let mut rows = |dim: usize| -> Vec<(String, Vec<f64>)> {
            (0..n)
                .map(|i| (format!("a{i:03}"), (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()))
                .collect()
        };
        let a = rows(3);
        let b = rows(4);
        let spec: Vec<TableSpec> = vec![
            ("audio", 3, a.iter().map(|(k, v)| (k.as_str(), v.clone())).collect()),
            ("cf", 4, b.iter().map(|(k, v)| (k.as_str(), v.clone())).collect()),
        ];
        dataset(&spec)
    }

    fn partial_dataset() -> MultimodalDataset {
        dataset(&[
            ("audio", 2, vec![("a", vec![1.0, 2.0]), ("b", vec![3.0, 4.0]), ("c", vec![9.0, 9.0])]),
            ("cf", 1, vec![("a", vec![10.0]), ("b", vec![20.0])]),
        ])
    }

    #[test]
    fn concat_imputes_fit_population_means() {
        let ds = partial_dataset();
        let imp = Imputation::fit(&ds).unwrap();
        assert_eq!(imp.concat_dim(), 3);
        assert_eq!(imp.concat(&ds, &id("a")).unwrap(), vec![1.0, 2.0, 10.0]);
        assert_eq!(imp.concat(&ds, &id("c")).unwrap(), vec![9.0, 9.0, 15.0]);
        assert_eq!(imp.mean(&modality("audio")).unwrap(), &[2.0, 3.0]);
        assert!(imp.concat(&ds, &id("zzz")).is_err());
    }

    #[test]
    fn unfitted_random_projection_refuses_dataset_artists() {
        let ds = partial_dataset();
        let p = fit_random_projection(3, 2, 0).unwrap();
        assert!(matches!(p.project(&ds, &id("a")), Err(Error::UnfittedProjector)));
        assert!(matches!(p.project_all(&ds), Err(Error::UnfittedProjector)));
    }

    #[test]
    fn pca_centers_and_orders_variance() {
        let ds = random_dataset(40, 1);
        let p = fit_pca(&ds, 5).unwrap();
        let set = p.project_all(&ds).unwrap();
        let n = set.len() as f64;
        let mut variances = [0.0; 5];
        for j in 0..5 {
            let mean: f64 = set.iter().map(|(_, v)| v[j]).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            variances[j] = set.iter().map(|(_, v)| v[j] * v[j]).sum::<f64>() / n;
        }
        assert!(variances.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        let zero = p.project_vector(p.center().unwrap()).unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn pca_sign_convention() {
        let p = fit_pca(&random_dataset(30, 2), 4).unwrap();
        let w = p.weights();
        for j in 0..4 {
            let col: Vec<f64> = (0..w.rows()).map(|i| w.data()[i * 4 + j]).collect();
            let max = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(max > 0.0);
            assert!((dot(&col, &col) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pca_is_lossless_on_planar_data() {
        let mut r = rng::seeded(4);
        let origin = [0.3, -1.0, 2.0, 0.5];
        let u = [1.0, 2.0, 0.0, -1.0];
        let v = [0.0, 1.0, 1.0, 3.0];
        let mut points = Vec::new();
        for i in 0..12 {
            let (s, t): (f64, f64) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let x: Vec<f64> = (0..4).map(|k| origin[k] + s * u[k] + t * v[k]).collect();
            points.push((format!("p{i:02}"), x));
        }
        let spec: Vec<TableSpec> = vec![
            ("audio", 1, points.iter().map(|(k, x)| (k.as_str(), vec![x[0]])).collect()),
            ("cf", 3, points.iter().map(|(k, x)| (k.as_str(), x[1..].to_vec())).collect()),
        ];
        let ds = dataset(&spec);
        let set = fit_pca(&ds, 2).unwrap().project_all(&ds).unwrap();
        for (a, x) in &points {
            for (b, y) in &points {
                let orig: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                let pa = set.get(&id(a)).unwrap();
                let pb = set.get(&id(b)).unwrap();
                let proj: f64 = pa.iter().zip(pb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                assert!((orig - proj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_refuses_too_few_artists() {
        let ds = random_dataset(3, 0);
        assert!(matches!(fit_pca(&ds, 5), Err(Error::Config(_))));
        assert!(matches!(fit_pca(&ds, 0), Err(Error::Config(_))));
        let ds = random_dataset(10, 0);
        assert!(matches!(fit_pca(&ds, 8), Err(Error::Config(_))));
    }

    #[test]
    fn random_projection_basics() {
        let p = fit_random_projection(6, 3, 9).unwrap();
        assert_eq!(p, fit_random_projection(6, 3, 9).unwrap());
        assert_ne!(p, fit_random_projection(6, 3, 10).unwrap());
        assert_eq!(p.project_vector(&[0.0; 6]).unwrap(), vec![0.0; 3]);
        let mut e2 = vec![0.0; 6];
        e2[2] = 1.0;
        assert_eq!(p.project_vector(&e2).unwrap(), p.weights().row(2).to_vec());
    }

    #[test]
    fn random_projection_preserves_norm_in_expectation() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        let target = dot(&x, &x);
        let mean: f64 = (0..1000)
            .map(|s| {
                let y = fit_random_projection(20, 10, s).unwrap().project_vector(&x).unwrap();
                dot(&y, &y)
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean - target).abs() < 0.05 * target, "{mean} vs {target}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = partial_dataset();
        let dir = tempfile::tempdir().unwrap();
        for p in [
            fit_pca(&ds, 1).unwrap(),
            fit_random_projection_for(&ds, 2, 3).unwrap(),
            fit_random_projection(3, 2, 3).unwrap(),
        ] {
            let path = dir.path().join("p.json");
            p.save(&path).unwrap();
            assert_eq!(LinearProjector::load(&path).unwrap(), p);
        }
        let mut bad = fit_pca(&ds, 1).unwrap().to_checkpoint();
        bad.center = None;
        assert!(LinearProjector::from_checkpoint(bad).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_affine(
            seed in 0u64..1000,
            alpha in -2.0f64..2.0,
            x in prop::collection::vec(-5.0f64..5.0, 7),
            y in prop::collection::vec(-5.0f64..5.0, 7),
        ) {
            let ds = random_dataset(12, seed);
            for p in [fit_pca(&ds, 3).unwrap(), fit_random_projection_for(&ds, 3, seed).unwrap()] {
                let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
                let lhs = p.project_vector(&mix).unwrap();
                let px = p.project_vector(&x).unwrap();
                let py = p.project_vector(&y).unwrap();
                for j in 0..3 {
                    prop_assert!((lhs[j] - (alpha * px[j] + (1.0 - alpha) * py[j])).abs() < 1e-10);
                }
            }
        }
    }
}
