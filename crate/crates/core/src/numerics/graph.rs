//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in order;
//! [`Graph::backward`] walks the tape in reverse and accumulates
//! vector-Jacobian products. Composite kernels with hand-written adjoints
//! (attention, the contrastive loss) plug in through [`FusedOp`].

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{self, gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// An operation with a hand-derived adjoint.
pub trait FusedOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns the output plus whatever the backward pass needs to keep.
    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<Tensor>)>;

    /// Gradients with respect to each input, in input order.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        cache: &[Tensor],
        grad_output: &Tensor,
    ) -> Result<Vec<Tensor>>;
}

enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Add(Var, Var),
    Relu(Var),
    SoftmaxRows(Var),
    L2NormalizeRows(Var),
    MeanRows(Var),
    CosineMatrix(Var, Var),
    Sum(Var),
    PadCols(Var),
    Reshape(Var),
    MeanPoolGroups(Var, usize),
    Fused {
        op: Arc<dyn FusedOp>,
        inputs: Vec<Var>,
        cache: Vec<Tensor>,
    },
}

impl Op {
    fn label(&self) -> &str {
        match self {
            Op::Input => "input",
            Op::Param(name) => name,
            Op::MatMul(..) => "matmul",
            Op::BiasAdd(..) => "bias_add",
            Op::Add(..) => "add",
            Op::Relu(_) => "relu",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::L2NormalizeRows(_) => "l2_normalize_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::CosineMatrix(..) => "cosine_matrix",
            Op::Sum(_) => "sum",
            Op::PadCols(_) => "pad_cols",
            Op::Reshape(_) => "reshape",
            Op::MeanPoolGroups(..) => "mean_pool_groups",
            Op::Fused { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite output from {} (node {})",
                op.label(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input)
    }

    /// Registers a trainable tensor under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        self.push(value, Op::Param(name.into()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = tensor::bias_add(self.value(x), self.value(bias))?;
        self.push(out, Op::BiasAdd(x, bias))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.bias_add(h, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} + {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = tensor::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(x))?;
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let out = tensor::l2_normalize_rows(self.value(x))?;
        self.push(out, Op::L2NormalizeRows(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let out = tensor::mean_rows(self.value(x))?;
        self.push(out, Op::MeanRows(x))
    }

    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::cosine_matrix(self.value(a), self.value(b))?;
        self.push(out, Op::CosineMatrix(a, b))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Right-pads every row with zeros up to `width` columns.
    pub fn pad_cols(&mut self, x: Var, width: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if width < c {
            return Err(Error::ShapeMismatch(format!("cannot pad {c} columns to {width}")));
        }
        if width == c {
            return Ok(x);
        }
        let mut out = Tensor::zeros(&[r, width]);
        for (dst, src) in out
            .data_mut()
            .chunks_mut(width)
            .zip(self.value(x).data().chunks(c))
        {
            dst[..c].copy_from_slice(src);
        }
        self.push(out, Op::PadCols(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x))
    }

    /// Averages consecutive blocks of `group` rows: `(B·group)×W → B×W`.
    pub fn mean_pool_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if group == 0 || r % group != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{r} rows do not split into groups of {group}"
            )));
        }
        let mut out = Tensor::zeros(&[r / group, c]);
        let src = self.value(x).data();
        for (b, dst) in out.data_mut().chunks_mut(c).enumerate() {
            for t in 0..group {
                let row = &src[(b * group + t) * c..(b * group + t + 1) * c];
                for (d, v) in dst.iter_mut().zip(row) {
                    *d += v;
                }
            }
            for d in dst.iter_mut() {
                *d /= group as f64;
            }
        }
        self.push(out, Op::MeanPoolGroups(x, group))
    }

    pub fn fused(&mut self, op: Arc<dyn FusedOp>, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let (out, cache) = op.forward(&values)?;
        self.push(
            out,
            Op::Fused {
                op,
                inputs: inputs.to_vec(),
                cache,
            },
        )
    }

    /// Sign pattern of every ReLU input. Finite-difference checks use it to
    /// detect perturbations that cross a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x)),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| *v > 0.0))
            .collect()
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at node {idx} ({})",
                    self.nodes[idx].op.label()
                )));
            }
            let node = &self.nodes[idx];
            for (var, contrib) in self.vjp(node, &g)? {
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let Op::Param(name) = &node.op {
                let g = g.clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match params.get_mut(name) {
                    Some(acc) => Tensor::add_assign(acc, &g),
                    None => {
                        params.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let out = match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2()?;
                let n = bv.cols();
                let mut ga = Tensor::zeros(&[m, k]);
                gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, ga.data_mut());
                let mut gb = Tensor::zeros(&[k, n]);
                gemm(k, m, n, av.data(), true, g.data(), false, 0.0, gb.data_mut());
                vec![(*a, ga), (*b, gb)]
            }
            Op::BiasAdd(x, b) => {
                let c = g.cols();
                let mut gb = Tensor::zeros(self.value(*b).shape());
                for row in g.data().chunks(c) {
                    for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![(*x, g.clone()), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if *xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                vec![(*x, gx)]
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let s = tensor::dot(gr, yr);
                    for (gv, yv) in gr.iter_mut().zip(yr) {
                        *gv = yv * (*gv - s);
                    }
                }
                vec![(*x, gx)]
            }
            Op::L2NormalizeRows(x) => {
                vec![(*x, normalize_rows_vjp(self.value(*x), &node.value, g))]
            }
            Op::MeanRows(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut gx = Tensor::zeros(&[r, c]);
                for row in gx.data_mut().chunks_mut(c) {
                    for (d, v) in row.iter_mut().zip(g.data()) {
                        *d = v / r as f64;
                    }
                }
                vec![(*x, gx)]
            }
            Op::CosineMatrix(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let an = tensor::l2_normalize_rows(av)?;
                let bn = tensor::l2_normalize_rows(bv)?;
                let (m, d) = av.dims2()?;
                let n = bv.rows();
                let mut gan = Tensor::zeros(&[m, d]);
                gemm(m, n, d, g.data(), false, bn.data(), false, 0.0, gan.data_mut());
                let mut gbn = Tensor::zeros(&[n, d]);
                gemm(n, m, d, g.data(), true, an.data(), false, 0.0, gbn.data_mut());
                vec![
                    (*a, normalize_rows_vjp(av, &an, &gan)),
                    (*b, normalize_rows_vjp(bv, &bn, &gbn)),
                ]
            }
            Op::Sum(x) => vec![(*x, Tensor::filled(self.value(*x).shape(), g.item()))],
            Op::PadCols(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let w = g.cols();
                let mut gx = Tensor::zeros(&[r, c]);
                for (dst, src) in gx.data_mut().chunks_mut(c).zip(g.data().chunks(w)) {
                    dst.copy_from_slice(&src[..c]);
                }
                vec![(*x, gx)]
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.value(*x).shape().to_vec())?;
                vec![(*x, gx)]
            }
            Op::MeanPoolGroups(x, group) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut gx = Tensor::zeros(&[r, c]);
                for (i, row) in gx.data_mut().chunks_mut(c).enumerate() {
                    for (d, v) in row.iter_mut().zip(g.row(i / group)) {
                        *d = v / *group as f64;
                    }
                }
                vec![(*x, gx)]
            }
            Op::Fused { op, inputs, cache } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let gs = op.backward(&values, &node.value, cache, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                inputs.iter().copied().zip(gs).collect()
            }
        };
        Ok(out)
    }
}

/// Adjoint of `y = x / |x|` row-wise: `(g - y (y·g)) / |x|`. Zero rows get
/// zero gradient.
pub(crate) fn normalize_rows_vjp(x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
    let c = x.cols();
    let mut gx = Tensor::zeros(x.shape());
    for ((dst, xr), (yr, gr)) in gx
        .data_mut()
        .chunks_mut(c)
        .zip(x.data().chunks(c))
        .zip(y.data().chunks(c).zip(g.data().chunks(c)))
    {
        let n = tensor::norm(xr);
        if n == 0.0 {
            continue;
        }
        let proj = tensor::dot(yr, gr);
        for ((d, yv), gv) in dst.iter_mut().zip(yr).zip(gr) {
            *d = (gv - yv * proj) / n;
        }
    }
    gx
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (`None` if `v` does not
    /// influence the loss).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    /// Gradients of named parameters, summed over repeated registrations.
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}
