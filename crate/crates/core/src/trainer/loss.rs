use crate::nn::Mlp;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// One weighted term of the policy objective: rows of actor inputs, taken
/// actions and (already normalized) advantages, plus the critic regression
/// data for the same rows.
#[derive(Clone, Debug, Default)]
pub struct PgGroup {
    pub label: &'static str,
    pub weight: f64,
    pub actor_in: Vec<f32>,
    pub actions: Vec<usize>,
    pub adv: Vec<f64>,
    /// Critic bank key.
    pub critic: usize,
    pub critic_in: Vec<f32>,
    pub targets: Vec<f64>,
}

impl PgGroup {
    pub fn rows(&self) -> usize {
        self.actions.len()
    }

    /// Whether the group takes part in the loss at all.
    pub fn active(&self) -> bool {
        self.weight != 0.0 && self.rows() > 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PgTerms {
    pub loss: NodeId,
    /// Mean policy entropy over all rows of active groups.
    pub entropy: NodeId,
}

fn matrix<T: Scalar>(data: &[f32], cols: usize) -> Tensor<T> {
    let rows = data.len() / cols;
    Tensor::new(vec![rows, cols], data.iter().map(|&v| T::of(v as f64)).collect()).expect("row-major batch")
}

/// `Σ_g w_g · mean_g(−log π(a|o) · Â) − ent_coef · mean(H(π(·|o)))`.
///
/// Groups with zero weight or no rows are skipped entirely, so adding such a
/// group never changes the graph.
pub fn pg_loss<T: Scalar>(
    g: &mut Graph<T>,
    actor: &Mlp<T>,
    ids: &[NodeId],
    groups: &[PgGroup],
    ent_coef: f64,
) -> Result<PgTerms, crate::error::TensorError> {
    let mut total: Option<NodeId> = None;
    let mut ent_sum: Option<NodeId> = None;
    let mut rows = 0usize;
    for grp in groups.iter().filter(|g| g.active()) {
        let x = g.constant(matrix(&grp.actor_in, actor.in_dim()));
        let logits = actor.forward(g, ids, x)?;
        let logp = g.log_softmax(logits);
        let taken = g.select_cols(logp, &grp.actions);
        let adv = g.constant(Tensor::vector(grp.adv.iter().map(|&a| T::of(a)).collect()));
        let obj = g.mul(taken, adv);
        let obj = g.mean(obj);
        let term = g.scale(obj, -grp.weight);
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
        let p = g.exp(logp);
        let plogp = g.mul(p, logp);
        let s = g.sum(plogp);
        ent_sum = Some(match ent_sum {
            Some(e) => g.add(e, s),
            None => s,
        });
        rows += grp.rows();
    }
    let (Some(total), Some(ent_sum)) = (total, ent_sum) else {
        let z = g.constant(Tensor::scalar(T::zero()));
        return Ok(PgTerms { loss: z, entropy: z });
    };
    // ent_sum holds Σ p log p, i.e. minus the summed entropy
    let entropy = g.scale(ent_sum, -1.0 / rows as f64);
    let bonus = g.scale(entropy, -ent_coef);
    let loss = g.add(total, bonus);
    Ok(PgTerms { loss, entropy })
}

/// `0.5 · mean((v(x) − target)²)` over the rows of `critic_in`.
pub fn value_loss<T: Scalar>(
    g: &mut Graph<T>,
    critic: &Mlp<T>,
    ids: &[NodeId],
    critic_in: &[f32],
    targets: &[f64],
) -> Result<NodeId, crate::error::TensorError> {
    let x = g.constant(matrix(critic_in, critic.in_dim()));
    let v = critic.forward(g, ids, x)?;
    let v = g.reshape(v, &[targets.len()]);
    let t = g.constant(Tensor::vector(targets.iter().map(|&a| T::of(a)).collect()));
    let d = g.sub(v, t);
    let sq = g.mul(d, d);
    let m = g.mean(sq);
    Ok(g.scale(m, 0.5))
}

/// Divides by `max(1, std)` without centering, so advantages smaller than
/// the unit scale are not amplified.
pub fn scale_down(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    if std > 1.0 {
        for a in adv.iter_mut() {
            *a /= std;
        }
    }
}

/// Advantages rescaled to mean 0 and standard deviation 1 (left centred only
/// when the spread is negligible).
pub fn normalize(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 1e-8 {
            *a /= std;
        }
    }
}
