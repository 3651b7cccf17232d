//! Layers built on the autodiff graph: MLPs, a GRU cell, straight-through
//! categorical latents, and the Adam optimizer.

mod adam;
mod categorical;
mod gru;
mod mlp;

pub use adam::Adam;
pub use categorical::{
    categorical_sample_st, kl_categorical, kl_per_dist, mixed_logits, sample_one_hot,
    CategoricalBlock, StopGrad,
};
pub use gru::Gru;
pub use mlp::{Activation, Mlp};

use crate::tensor::{Graph, NodeId, Scalar, Tensor};
use sha2::{Digest, Sha256};

/// Anything owning an ordered list of parameter tensors.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn n_scalars(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Puts every parameter of `m` on the graph, in `params()` order.
pub fn bind<T: Scalar, M: Module<T> + ?Sized>(
    g: &mut Graph<T>,
    m: &M,
    trainable: bool,
) -> Vec<NodeId> {
    m.params()
        .into_iter()
        .map(|p| {
            if trainable {
                g.param(p.clone())
            } else {
                g.constant(p.clone())
            }
        })
        .collect()
}

/// SHA-256 over the exact bytes of every parameter.
pub fn param_checksum<T: Scalar, M: Module<T> + ?Sized>(m: &M) -> String {
    let mut h = Sha256::new();
    for p in m.params() {
        for &d in p.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in p.data() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Gathers the gradients of bound parameters in `params()` order.
pub fn grads_for<T: Scalar>(grads: &crate::tensor::Gradients<T>, ids: &[NodeId]) -> Vec<Tensor<T>> {
    grads.collect(ids)
}

/// Splits a flat id list into consecutive chunks of the given sizes.
pub(crate) fn split_ids<'a>(ids: &'a [NodeId], sizes: &[usize]) -> Vec<&'a [NodeId]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut off = 0;
    for &s in sizes {
        out.push(&ids[off..off + s]);
        off += s;
    }
    debug_assert_eq!(off, ids.len());
    out
}
