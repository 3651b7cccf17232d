use crate::tensor::{Graph, NodeId, Scalar, Tensor};
use rand::Rng;

/// Which side of a KL term is treated as a constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopGrad {
    None,
    /// Detach the first argument.
    P,
    /// Detach the second argument.
    Q,
}

/// A sampled block of categorical latents.
#[derive(Clone, Copy, Debug)]
pub struct CategoricalBlock {
    /// `[B, N·C]` one-hot samples with straight-through gradients.
    pub sample: NodeId,
    /// `[B·N, C]` normalized log-probabilities after mixing.
    pub logp: NodeId,
}

/// Normalized log-probabilities of `logits: [R, C]` mixed with a uniform
/// distribution at weight `mix`.
pub fn mixed_logits<T: Scalar>(g: &mut Graph<T>, logits: NodeId, mix: f64) -> NodeId {
    if mix <= 0.0 {
        return g.log_softmax(logits);
    }
    let c = g.shape(logits)[1];
    let p = g.softmax(logits);
    let p = g.scale(p, 1.0 - mix);
    let p = g.add_scalar(p, mix / c as f64);
    g.log(p)
}

/// Draws one class per row of `probs: [R, C]` by inverse CDF and returns the
/// one-hot rows.
pub fn sample_one_hot<T: Scalar>(probs: &[T], cols: usize, rng: &mut impl Rng) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    for (r, row) in probs.chunks(cols).enumerate() {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = cols - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p.as_f64();
            if u < acc {
                pick = j;
                break;
            }
        }
        out[r * cols + pick] = T::one();
    }
    out
}

/// Samples `N` categoricals of `classes` each from `logits: [B, N·classes]`.
pub fn categorical_sample_st<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    classes: usize,
    mix: f64,
    rng: &mut impl Rng,
) -> CategoricalBlock {
    let shape = g.shape(logits).to_vec();
    assert_eq!(shape[1] % classes, 0, "logit width is not a multiple of the class count");
    let rows = shape[0] * shape[1] / classes;
    let flat = g.reshape(logits, &[rows, classes]);
    let logp = mixed_logits(g, flat, mix);
    let probs = g.exp(logp);
    let onehot = sample_one_hot(g.value(probs).data(), classes, rng);
    let st = g.straight_through(probs, Tensor::new(vec![rows, classes], onehot).expect("sample shape"));
    let sample = g.reshape(st, &shape);
    CategoricalBlock { sample, logp }
}

/// Per-row `KL(p ‖ q)` for normalized log-probabilities `[R, C]`; returns `[R]`.
pub fn kl_per_dist<T: Scalar>(g: &mut Graph<T>, p_logp: NodeId, q_logp: NodeId, stop: StopGrad) -> NodeId {
    let (p, q) = match stop {
        StopGrad::None => (p_logp, q_logp),
        StopGrad::P => (g.detach(p_logp), q_logp),
        StopGrad::Q => (p_logp, g.detach(q_logp)),
    };
    let pr = g.exp(p);
    let d = g.sub(p, q);
    let w = g.mul(pr, d);
    g.sum_rows(w)
}

/// Total `KL(p ‖ q)` summed over every row.
pub fn kl_categorical<T: Scalar>(g: &mut Graph<T>, p_logp: NodeId, q_logp: NodeId, stop: StopGrad) -> NodeId {
    let per = kl_per_dist(g, p_logp, q_logp, stop);
    g.sum(per)
}
