//! Self-attention encoder over fixed-size chunks of the input vector.
//!
//! The input row is zero-padded to a multiple of `token_size` and split into
//! `T` tokens. Each token is projected to `model_width`, passed through one
//! multi-head self-attention block with a residual connection, mean-pooled
//! over tokens and mapped linearly to the output width.

use std::sync::Arc;

use super::Architecture;
use crate::error::{Error, Result};
use crate::numerics::{BoundParams, FusedOp, Graph, Tensor, Var};

pub struct AttentionEncoder {
    input_dim: usize,
    model_width: usize,
    num_heads: usize,
    token_size: usize,
    output_dim: usize,
}

impl AttentionEncoder {
    pub fn new(
        input_dim: usize,
        model_width: usize,
        num_heads: usize,
        token_size: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if [input_dim, model_width, num_heads, token_size, output_dim].contains(&0) {
            return Err(Error::Config("attention encoder dims must be positive".into()));
        }
        if !model_width.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "model_width {model_width} is not divisible by num_heads {num_heads}"
            )));
        }
        Ok(AttentionEncoder {
            input_dim,
            model_width,
            num_heads,
            token_size,
            output_dim,
        })
    }

    /// Number of tokens the input is split into.
    pub fn tokens(&self) -> usize {
        self.input_dim.div_ceil(self.token_size)
    }

    /// Zeros appended to each input row.
    pub fn padding(&self) -> usize {
        self.tokens() * self.token_size - self.input_dim
    }
}

impl Architecture for AttentionEncoder {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (s, w, o) = (self.token_size, self.model_width, self.output_dim);
        vec![
            ("attn.key".into(), vec![w, w]),
            ("attn.output.bias".into(), vec![w]),
            ("attn.output.weight".into(), vec![w, w]),
            ("attn.query".into(), vec![w, w]),
            ("attn.value".into(), vec![w, w]),
            ("embed.bias".into(), vec![w]),
            ("embed.weight".into(), vec![s, w]),
            ("head.bias".into(), vec![o]),
            ("head.weight".into(), vec![w, o]),
        ]
    }

    fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var> {
        let batch = g.value(x).rows();
        let tokens = self.tokens();
        let padded = g.pad_cols(x, tokens * self.token_size)?;
        let tok = g.reshape(padded, vec![batch * tokens, self.token_size])?;
        let h0 = g.linear(tok, p.get("embed.weight")?, p.get("embed.bias")?)?;
        let q = g.matmul(h0, p.get("attn.query")?)?;
        let k = g.matmul(h0, p.get("attn.key")?)?;
        let v = g.matmul(h0, p.get("attn.value")?)?;
        let mha = Arc::new(MultiHeadAttention::new(tokens, self.num_heads)?);
        let heads = g.fused(mha, &[q, k, v])?;
        let proj = g.linear(heads, p.get("attn.output.weight")?, p.get("attn.output.bias")?)?;
        let h1 = g.add(h0, proj)?;
        let pooled = g.mean_pool_groups(h1, tokens)?;
        g.linear(pooled, p.get("head.weight")?, p.get("head.bias")?)
    }
}

/// Scaled dot-product attention over groups of `tokens` consecutive rows,
/// split into `heads` column blocks. Inputs are `Q, K, V` of shape
/// `(B·T) × W`; the output has the same shape with heads concatenated.
pub struct MultiHeadAttention {
    tokens: usize,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(tokens: usize, heads: usize) -> Result<Self> {
        if tokens == 0 || heads == 0 {
            return Err(Error::Config("attention needs tokens and heads".into()));
        }
        Ok(MultiHeadAttention { tokens, heads })
    }

    fn layout(&self, q: &Tensor) -> Result<(usize, usize, usize)> {
        let (rows, width) = q.dims2()?;
        if rows % self.tokens != 0 || width % self.heads != 0 {
            return Err(Error::ShapeMismatch(format!(
                "attention over {rows}×{width} with {} tokens and {} heads",
                self.tokens, self.heads
            )));
        }
        Ok((rows / self.tokens, width, width / self.heads))
    }
}

impl FusedOp for MultiHeadAttention {
    fn name(&self) -> &'static str {
        "multi_head_attention"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        let [q, k, v] = inputs else {
            return Err(Error::ShapeMismatch("attention takes q, k, v".into()));
        };
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(Error::ShapeMismatch("q, k, v shapes differ".into()));
        }
        let (batch, width, hd) = self.layout(q)?;
        let t = self.tokens;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let mut out = Tensor::zeros(q.shape());
        let mut weights = vec![0.0; batch * self.heads * t * t];
        let od = out.data_mut();
        for b in 0..batch {
            for h in 0..self.heads {
                let col = h * hd;
                let a = &mut weights[(b * self.heads + h) * t * t..][..t * t];
                for i in 0..t {
                    let qi = &qd[(b * t + i) * width + col..][..hd];
                    let row = &mut a[i * t..(i + 1) * t];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kd[(b * t + j) * width + col..][..hd];
                        *s = crate::numerics::dot(qi, kj) * scale;
                    }
                    crate::numerics::softmax_in_place(row);
                    let oi = &mut od[(b * t + i) * width + col..][..hd];
                    for (j, aij) in row.iter().enumerate() {
                        let vj = &vd[(b * t + j) * width + col..][..hd];
                        for (o, vv) in oi.iter_mut().zip(vj) {
                            *o += aij * vv;
                        }
                    }
                }
            }
        }
        let weights = Tensor::new(vec![weights.len()], weights)?;
        Ok((out, vec![weights]))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        cache: &[Tensor],
        grad: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let [q, k, v] = inputs else {
            return Err(Error::ShapeMismatch("attention takes q, k, v".into()));
        };
        let (batch, width, hd) = self.layout(q)?;
        let t = self.tokens;
        let scale = 1.0 / (hd as f64).sqrt();
        let weights = cache[0].data();
        let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), grad.data());
        let mut gq = Tensor::zeros(q.shape());
        let mut gk = Tensor::zeros(q.shape());
        let mut gv = Tensor::zeros(q.shape());
        let mut d_att = vec![0.0; t];
        for b in 0..batch {
            for h in 0..self.heads {
                let col = h * hd;
                let a = &weights[(b * self.heads + h) * t * t..][..t * t];
                for i in 0..t {
                    let gi = &gd[(b * t + i) * width + col..][..hd];
                    let ai = &a[i * t..(i + 1) * t];
                    for j in 0..t {
                        let vj = &vd[(b * t + j) * width + col..][..hd];
                        d_att[j] = crate::numerics::dot(gi, vj);
                        let gvj = &mut gv.data_mut()[(b * t + j) * width + col..][..hd];
                        for (acc, g) in gvj.iter_mut().zip(gi) {
                            *acc += ai[j] * g;
                        }
                    }
                    let mix = crate::numerics::dot(ai, &d_att);
                    let qi = &qd[(b * t + i) * width + col..][..hd];
                    for j in 0..t {
                        let ds = ai[j] * (d_att[j] - mix) * scale;
                        let kj = &kd[(b * t + j) * width + col..][..hd];
                        let gqi = &mut gq.data_mut()[(b * t + i) * width + col..][..hd];
                        for (acc, kv) in gqi.iter_mut().zip(kj) {
                            *acc += ds * kv;
                        }
                        let gkj = &mut gk.data_mut()[(b * t + j) * width + col..][..hd];
                        for (acc, qv) in gkj.iter_mut().zip(qi) {
                            *acc += ds * qv;
                        }
                    }
                }
            }
        }
        Ok(vec![gq, gk, gv])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Encoder, EncoderConfig};
    use rand::Rng as _;

    #[test]
    fn token_arithmetic() {
        let e = AttentionEncoder::new(64, 256, 4, 32, 200).unwrap();
        assert_eq!((e.tokens(), e.padding()), (2, 0));
        let e = AttentionEncoder::new(40, 256, 4, 32, 200).unwrap();
        assert_eq!((e.tokens(), e.padding()), (2, 24));
        assert!(AttentionEncoder::new(40, 250, 4, 32, 200).is_err());
    }

    #[test]
    fn single_token_reduces_to_value_path() {
        // With T = 1 the softmax weight is 1, so the block output is
        // h0 + (h0·Wv)·Wo + bo.
        let e = Encoder::build(EncoderConfig::attention(5, 8, 2, 8, 3), 7).unwrap();
        let mut rng = crate::rng::seeded(1);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = e.forward(&Tensor::from_rows(std::slice::from_ref(&x)).unwrap()).unwrap();

        let p = e.params();
        let mut padded = x;
        padded.resize(8, 0.0);
        let tok = Tensor::from_rows(&[padded]).unwrap();
        use crate::numerics::{bias_add, matmul};
        let h0 = bias_add(&matmul(&tok, p.get("embed.weight").unwrap()).unwrap(), p.get("embed.bias").unwrap()).unwrap();
        let val = matmul(&h0, p.get("attn.value").unwrap()).unwrap();
        let proj = bias_add(
            &matmul(&val, p.get("attn.output.weight").unwrap()).unwrap(),
            p.get("attn.output.bias").unwrap(),
        )
        .unwrap();
        let h1: Vec<f64> = h0.data().iter().zip(proj.data()).map(|(a, b)| a + b).collect();
        let h1 = Tensor::from_rows(&[h1]).unwrap();
        let want = bias_add(&matmul(&h1, p.get("head.weight").unwrap()).unwrap(), p.get("head.bias").unwrap()).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations_of_values() {
        let mha = MultiHeadAttention::new(3, 2).unwrap();
        let q = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let k = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let v = Tensor::filled(&[3, 4], 2.5);
        let (out, cache) = mha.forward(&[&q, &k, &v]).unwrap();
        assert!(out.data().iter().all(|o| (o - 2.5).abs() < 1e-12));
        for row in cache[0].data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
