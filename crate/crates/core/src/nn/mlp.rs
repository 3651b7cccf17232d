use super::Module;
use crate::error::TensorError;
use crate::tensor::kernels;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

const LEAKY_SLOPE: f64 = 0.01;

/// Hidden-layer activation. The output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu => kernels::leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    fn on_graph<T: Scalar>(self, g: &mut Graph<T>, x: NodeId) -> NodeId {
        match self {
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Linear<T: Scalar> {
    /// `[in, out]`
    w: Tensor<T>,
    /// `[out]`
    b: Tensor<T>,
}

/// Fully connected network with weights stored as `[in, out]` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Scalar = f32> {
    layers: Vec<Linear<T>>,
    activation: Activation,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// including input and output.
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        Self::with_output_scale(sizes, activation, 1.0, rng)
    }

    /// Like [`Mlp::new`] with the final layer's weights multiplied by `scale`.
    pub fn with_output_scale(
        sizes: &[usize],
        activation: Activation,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let s = if i + 1 == n { scale } else { 1.0 };
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(rng.gen_range(-a..a) * s))
                    .collect();
                Linear {
                    w: Tensor::from_parts(vec![fan_in, fan_out], data),
                    b: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self { layers, activation }
    }

    /// Rebuilds a network from `[w0, b0, w1, b1, ..]`.
    pub fn from_tensors(tensors: Vec<Tensor<T>>, activation: Activation) -> Result<Self, TensorError> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(2) {
            return Err(TensorError::Dimension(format!(
                "expected weight/bias pairs, got {} tensors",
                tensors.len()
            )));
        }
        let mut layers = Vec::new();
        let mut it = tensors.into_iter();
        let mut prev: Option<usize> = None;
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            let ws = w.shape();
            if ws.len() != 2 || b.shape() != [ws[1]] || prev.is_some_and(|p| p != ws[0]) {
                return Err(TensorError::Dimension(format!(
                    "layer shapes {:?} / {:?} do not chain",
                    ws,
                    b.shape()
                )));
            }
            prev = Some(ws[1]);
            layers.push(Linear { w, b });
        }
        Ok(Self { layers, activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.shape()[1]
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: l.w.cast(),
                    b: l.b.cast(),
                })
                .collect(),
            activation: self.activation,
        }
    }

    /// Records the forward pass of `x: [batch, in]` on the graph. `ids` are
    /// this network's bound parameters.
    pub fn forward(&self, g: &mut Graph<T>, ids: &[NodeId], x: NodeId) -> Result<NodeId, TensorError> {
        let xs = g.shape(x);
        if xs.len() != 2 || xs[1] != self.in_dim() {
            return Err(TensorError::Dimension(format!(
                "mlp expects [batch, {}], got {:?}",
                self.in_dim(),
                xs
            )));
        }
        if ids.len() != 2 * self.layers.len() {
            return Err(TensorError::Dimension(format!(
                "mlp has {} parameters, {} bound",
                2 * self.layers.len(),
                ids.len()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, pair) in ids.chunks(2).enumerate() {
            let y = g.matmul(h, pair[0]);
            h = g.add_bias(y, pair[1]);
            if i < last {
                h = self.activation.on_graph(g, h);
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass over `rows` stacked inputs.
    pub fn infer_rows(&self, x: &[T], rows: usize) -> Vec<T> {
        assert_eq!(x.len(), rows * self.in_dim(), "mlp input width");
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (k, n) = (l.w.shape()[0], l.w.shape()[1]);
            let mut y = kernels::matmul(&h, l.w.data(), rows, k, n);
            kernels::add_bias(&mut y, l.b.data());
            if i < last {
                y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = y;
        }
        h
    }

    pub fn infer(&self, x: &[T]) -> Vec<T> {
        self.infer_rows(x, 1)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}
