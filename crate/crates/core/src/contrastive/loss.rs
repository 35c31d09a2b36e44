//! Pairwise InfoNCE over a batch of two modalities, and the summed
//! multi-modality objective.
//!
//! For anchor rows `a_i` and positive rows `b_i` (`i = 1..M`), with
//! candidates `ζ = [a_1..a_M, b_1..b_M]` and `Ξ(x, y) = exp(cos(x, y) / τ)`:
//!
//! ```text
//! L = Σ_i −log( Ξ(a_i, b_i) / Σ_{k ≠ i} Ξ(a_i, ζ_k) )
//! ```
//!
//! Only `a_i` itself is excluded from the denominator; the positive `b_i`
//! is one of its `2M − 1` terms.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::ModalityId;
use crate::error::{Error, Result};
use crate::numerics::{gemm, l2_normalize_rows, normalize_rows_vjp, FusedOp, Graph, Tensor, Var};

/// The pairwise loss as a graph op over raw (unnormalized) encoder outputs.
pub struct PairwiseInfoNce {
    temperature: f64,
}

impl PairwiseInfoNce {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        Ok(PairwiseInfoNce { temperature })
    }
}

struct Forward {
    loss: f64,
    /// `M × 2M` softmax over candidates per anchor, zero at `k = i`.
    probs: Tensor,
    anchors: Tensor,
    positives: Tensor,
}

fn check_pair(za: &Tensor, zb: &Tensor) -> Result<(usize, usize)> {
    let (m, d) = za.dims2()?;
    if zb.shape() != za.shape() {
        return Err(Error::ShapeMismatch(format!(
            "infonce over {:?} and {:?}",
            za.shape(),
            zb.shape()
        )));
    }
    Ok((m, d))
}

fn forward(za: &Tensor, zb: &Tensor, tau: f64) -> Result<Forward> {
    let (m, d) = check_pair(za, zb)?;
    let na = l2_normalize_rows(za)?;
    let nb = l2_normalize_rows(zb)?;
    // logits[i][k]: k < M against anchors, k >= M against positives.
    let mut aa = vec![0.0; m * m];
    gemm(m, d, m, na.data(), false, na.data(), true, 0.0, &mut aa);
    let mut ab = vec![0.0; m * m];
    gemm(m, d, m, na.data(), false, nb.data(), true, 0.0, &mut ab);

    let mut probs = Tensor::zeros(&[m, 2 * m]);
    let mut loss = 0.0;
    for (i, row) in probs.data_mut().chunks_mut(2 * m).enumerate() {
        row[..m].copy_from_slice(&aa[i * m..(i + 1) * m]);
        row[m..].copy_from_slice(&ab[i * m..(i + 1) * m]);
        for v in row.iter_mut() {
            *v /= tau;
        }
        let positive = row[m + i];
        let max = row
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (k, v) in row.iter_mut().enumerate() {
            if k == i {
                *v = 0.0;
            } else {
                *v = (*v - max).exp();
                denom += *v;
            }
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
        loss += max + denom.ln() - positive;
    }
    Ok(Forward {
        loss,
        probs,
        anchors: na,
        positives: nb,
    })
}

impl FusedOp for PairwiseInfoNce {
    fn name(&self) -> &'static str {
        "pairwise_infonce"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let [za, zb] = inputs else {
            return Err(Error::ShapeMismatch("infonce takes two inputs".into()));
        };
        let f = forward(za, zb, self.temperature)?;
        Ok((Tensor::scalar(f.loss), vec![f.probs, f.anchors, f.positives]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        cache: &[Tensor],
        grad: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let [za, zb] = inputs else {
            return Err(Error::ShapeMismatch("infonce takes two inputs".into()));
        };
        let [probs, na, nb] = cache else {
            return Err(Error::ShapeMismatch("infonce cache".into()));
        };
        let (m, d) = za.dims2()?;
        let scale = grad.item() / self.temperature;
        // dL/dlogit[i][k] = p[i][k] − [k = M + i].
        let mut g = probs.clone();
        for i in 0..m {
            g.data_mut()[i * 2 * m + m + i] -= 1.0;
        }
        for v in g.data_mut() {
            *v *= scale;
        }
        let (g_aa, g_ab): (Vec<f64>, Vec<f64>) = {
            let mut aa = Vec::with_capacity(m * m);
            let mut ab = Vec::with_capacity(m * m);
            for row in g.data().chunks(2 * m) {
                aa.extend_from_slice(&row[..m]);
                ab.extend_from_slice(&row[m..]);
            }
            (aa, ab)
        };
        // logits_aa = na·naᵀ, logits_ab = na·nbᵀ.
        let mut g_na = Tensor::zeros(&[m, d]);
        gemm(m, m, d, &g_aa, false, na.data(), false, 0.0, g_na.data_mut());
        gemm(m, m, d, &g_aa, true, na.data(), false, 1.0, g_na.data_mut());
        gemm(m, m, d, &g_ab, false, nb.data(), false, 1.0, g_na.data_mut());
        let mut g_nb = Tensor::zeros(&[m, d]);
        gemm(m, m, d, &g_ab, true, na.data(), false, 0.0, g_nb.data_mut());
        Ok(vec![
            normalize_rows_vjp(za, na, &g_na),
            normalize_rows_vjp(zb, nb, &g_nb),
        ])
    }
}

/// Loss value for one ordered modality pair.
pub fn pairwise_infonce(za: &Tensor, zb: &Tensor, temperature: f64) -> Result<f64> {
    PairwiseInfoNce::new(temperature)?;
    Ok(forward(za, zb, temperature)?.loss)
}

/// Default pair list: every unordered pair once, anchored on the
/// lexicographically smaller modality, in lexicographic order.
pub fn default_pairs<'a>(
    modalities: impl IntoIterator<Item = &'a ModalityId>,
) -> Vec<(ModalityId, ModalityId)> {
    let mut ms: Vec<ModalityId> = modalities.into_iter().cloned().collect();
    ms.sort();
    ms.dedup();
    let mut pairs = Vec::new();
    for (i, a) in ms.iter().enumerate() {
        for b in &ms[i + 1..] {
            pairs.push((a.clone(), b.clone()));
        }
    }
    pairs
}

/// Records the summed objective on `graph`. With `symmetrize`, each pair
/// also contributes its reversed term.
pub fn total_loss_graph(
    graph: &mut Graph,
    outputs: &BTreeMap<ModalityId, Var>,
    temperature: f64,
    pairs: &[(ModalityId, ModalityId)],
    symmetrize: bool,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Config("no modality pairs to train on".into()));
    }
    let op = Arc::new(PairwiseInfoNce::new(temperature)?);
    let lookup = |m: &ModalityId| {
        outputs
            .get(m)
            .copied()
            .ok_or_else(|| Error::IncompleteCoverage(format!("batch has no {m} outputs")))
    };
    let mut total: Option<Var> = None;
    for (a, b) in pairs {
        let (va, vb) = (lookup(a)?, lookup(b)?);
        let mut terms = vec![graph.fused(op.clone(), &[va, vb])?];
        if symmetrize {
            terms.push(graph.fused(op.clone(), &[vb, va])?);
        }
        for t in terms {
            total = Some(match total {
                None => t,
                Some(acc) => graph.add(acc, t)?,
            });
        }
    }
    Ok(total.expect("pairs is non-empty"))
}

/// Summed objective over encoder outputs per modality.
pub fn total_loss(
    outputs: &BTreeMap<ModalityId, Tensor>,
    temperature: f64,
    pairs: &[(ModalityId, ModalityId)],
    symmetrize: bool,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut vars = BTreeMap::new();
    for (m, t) in outputs {
        vars.insert(m.clone(), g.input(t.clone())?);
    }
    let loss = total_loss_graph(&mut g, &vars, temperature, pairs, symmetrize)?;
    Ok(g.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::modality;
    use rand::Rng as _;

    fn random(m: usize, d: usize, rng: &mut crate::rng::Rng) -> Tensor {
        Tensor::matrix(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_row_batch_is_zero() {
        let mut rng = crate::rng::seeded(0);
        let (a, b) = (random(1, 5, &mut rng), random(1, 5, &mut rng));
        assert_eq!(pairwise_infonce(&a, &b, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn identical_rows_give_two_ln_three() {
        let a = Tensor::filled(&[2, 3], 0.7);
        let l = pairwise_infonce(&a, &a, 0.1).unwrap();
        assert!((l - 2.0 * 3f64.ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn rejects_mismatched_shapes_and_bad_temperature() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(matches!(
            pairwise_infonce(&a, &b, 0.1),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(pairwise_infonce(&a, &a, 0.0).is_err());
    }

    #[test]
    fn default_pairs_are_lexicographic() {
        let ms = [modality("tag"), modality("audio"), modality("cf")];
        let pairs = default_pairs(&ms);
        let names: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        assert_eq!(names, [("audio", "cf"), ("audio", "tag"), ("cf", "tag")]);
    }

    #[test]
    fn two_modalities_total_equals_pairwise() {
        let mut rng = crate::rng::seeded(3);
        let (a, b) = (random(4, 6, &mut rng), random(4, 6, &mut rng));
        let outputs: BTreeMap<_, _> = [(modality("audio"), a.clone()), (modality("cf"), b.clone())]
            .into_iter()
            .collect();
        let pairs = default_pairs(outputs.keys());
        assert_eq!(pairs.len(), 1);
        assert_eq!(
            total_loss(&outputs, 0.1, &pairs, false).unwrap(),
            pairwise_infonce(&a, &b, 0.1).unwrap()
        );
        let sym = total_loss(&outputs, 0.1, &pairs, true).unwrap();
        let expected = pairwise_infonce(&a, &b, 0.1).unwrap() + pairwise_infonce(&b, &a, 0.1).unwrap();
        assert!((sym - expected).abs() < 1e-12);
    }

    #[test]
    fn missing_modality_is_incomplete_coverage() {
        let outputs: BTreeMap<_, _> = [(modality("audio"), Tensor::zeros(&[2, 2]))].into_iter().collect();
        let pairs = vec![(modality("audio"), modality("cf"))];
        assert!(matches!(
            total_loss(&outputs, 0.1, &pairs, false),
            Err(Error::IncompleteCoverage(_))
        ));
    }
}
