use super::Architecture;
use crate::error::{Error, Result};
use crate::numerics::{BoundParams, Graph, Var};

/// Fully connected stack: `linear → ReLU` per hidden layer, then a final
/// linear map to the output width.
pub struct MlpEncoder {
    widths: Vec<usize>,
}

impl MlpEncoder {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden_dims.len() + 2);
        widths.push(input_dim);
        widths.extend(hidden_dims);
        widths.push(output_dim);
        if widths.contains(&0) {
            return Err(Error::Config(format!("mlp widths must be positive: {widths:?}")));
        }
        Ok(MlpEncoder { widths })
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }
}

impl Architecture for MlpEncoder {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.widths
            .windows(2)
            .enumerate()
            .flat_map(|(i, w)| {
                [
                    (format!("layer{i}.weight"), vec![w[0], w[1]]),
                    (format!("layer{i}.bias"), vec![w[1]]),
                ]
            })
            .collect()
    }

    fn forward(&self, graph: &mut Graph, params: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.layers() {
            let w = params.get(&format!("layer{i}.weight"))?;
            let b = params.get(&format!("layer{i}.bias"))?;
            h = graph.linear(h, w, b)?;
            if i + 1 < self.layers() {
                h = graph.relu(h)?;
            }
        }
        Ok(h)
    }
}
