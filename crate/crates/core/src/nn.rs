//! Shared dense layers built on the autodiff tape.

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParameterStore, Tensor, Var};

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-limit..=limit))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers `<prefix>.W` (in × out) and `<prefix>.b` (1 × out).
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let weight = store.add(format!("{prefix}.W"), glorot(in_dim, out_dim, rng))?;
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(1, out_dim))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

/// Stack of [`Linear`] layers with tanh between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: Activation,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`; layer `i` is registered as `<prefix>.L<i>`.
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        dims: &[usize],
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.L{i}"), w[0], w[1], rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, output })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var, AutodiffError> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i < last || self.output == Activation::Tanh {
                x = g.tanh(x);
            }
        }
        Ok(x)
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

/// `rows × 1` column of 1.0 for alive rows and 0.0 otherwise.
pub fn alive_column(alive: &[bool]) -> Tensor {
    Tensor::column(&alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}
