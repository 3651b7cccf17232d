use super::{SeqBatch, WmLossConfig, WorldModel};
use crate::error::TensorError;
use crate::nn::{bind, categorical_sample_st, kl_per_dist, mixed_logits, split_ids, StopGrad};
use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

/// Graph ids of every world-model parameter, grouped by component.
#[derive(Clone, Debug)]
pub struct WmIds {
    pub all: Vec<NodeId>,
    pub gru: Vec<NodeId>,
    pub enc: Vec<NodeId>,
    pub prior: Vec<NodeId>,
    pub dec: [Vec<NodeId>; 2],
    pub reward: Vec<NodeId>,
    pub cont: Vec<NodeId>,
}

impl WmIds {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, wm: &WorldModel<T>, trainable: bool) -> Self {
        let all = bind(g, wm, trainable);
        let sizes: Vec<usize> = wm.parts().iter().map(|p| p.n_params()).collect();
        let s = split_ids(&all, &sizes);
        WmIds {
            gru: s[0].to_vec(),
            enc: s[1].to_vec(),
            prior: s[2].to_vec(),
            dec: [s[3].to_vec(), s[4].to_vec()],
            reward: s[5].to_vec(),
            cont: s[6].to_vec(),
            all,
        }
    }
}

/// One position of an observed sequence.
#[derive(Clone, Copy, Debug)]
pub struct WmStep {
    pub h: NodeId,
    /// Straight-through posterior sample `[B, N·C]`.
    pub z: NodeId,
    /// Mixed posterior log-probabilities `[B·N, C]`.
    pub post_logp: NodeId,
    /// Mixed prior log-probabilities `[B·N, C]`.
    pub prior_logp: NodeId,
}

fn constant<T: Scalar>(g: &mut Graph<T>, rows: usize, data: &[f32]) -> NodeId {
    let cols = data.len() / rows.max(1);
    let t = Tensor::new(vec![rows, cols], data.iter().map(|&v| T::of(v as f64)).collect()).expect("batch shape");
    g.constant(t)
}

fn action_input<T: Scalar>(g: &mut Graph<T>, rows: usize, n_actions: usize, prev: Option<&[[usize; 2]]>) -> NodeId {
    let mut x = vec![0f32; rows * 2 * n_actions];
    if let Some(p) = prev {
        for (i, a) in p.iter().enumerate() {
            x[i * 2 * n_actions + a[0]] = 1.0;
            x[i * 2 * n_actions + n_actions + a[1]] = 1.0;
        }
    }
    constant(g, rows, &x)
}

/// `z^player` columns of a latent node.
pub(super) fn player_latent<T: Scalar>(g: &mut Graph<T>, wm: &WorldModel<T>, z: NodeId, player: usize) -> NodeId {
    let [a, b] = wm.layout().player_cols(player);
    let ja = g.slice_cols(z, a.start, a.len());
    let pb = g.slice_cols(z, b.start, b.len());
    g.concat_cols(&[ja, pb])
}

/// Filters the batch through the model on the graph, sampling each
/// posterior with straight-through gradients.
pub fn observe_seq<T: Scalar>(
    g: &mut Graph<T>,
    wm: &WorldModel<T>,
    ids: &WmIds,
    batch: &SeqBatch,
    rng: &mut Rng,
) -> Result<Vec<WmStep>, TensorError> {
    batch.check(wm)?;
    let (b, l) = (batch.rows, wm.layout());
    let mut h = g.constant(Tensor::zeros(&[b, wm.deter()]));
    let mut z = g.constant(Tensor::zeros(&[b, l.z_dim()]));
    let mut out = Vec::with_capacity(batch.len);
    for t in 0..batch.len {
        let prev = if t == 0 { None } else { Some(&batch.prev[t - 1][..]) };
        let a = action_input(g, b, wm.n_actions, prev);
        let x = g.concat_cols(&[z, a]);
        h = wm.gru.forward(g, &ids.gru, h, x)?;
        let o = constant(g, b, &batch.obs[t]);
        let ex = g.concat_cols(&[h, o]);
        let post = wm.enc.forward(g, &ids.enc, ex)?;
        let blk = categorical_sample_st(g, post, l.classes, wm.shape.unimix, rng);
        let pr = wm.prior.forward(g, &ids.prior, h)?;
        let pr = g.reshape(pr, &[b * l.n, l.classes]);
        let prior_logp = mixed_logits(g, pr, wm.shape.unimix);
        z = blk.sample;
        out.push(WmStep {
            h,
            z,
            post_logp: blk.logp,
            prior_logp,
        });
    }
    Ok(out)
}

/// Scalar nodes of the world-model loss; `total` is the sum of the five
/// components, each a mean over batch rows and positions.
#[derive(Clone, Debug)]
pub struct WmLossParts {
    pub total: NodeId,
    pub recon: [NodeId; 2],
    pub reward: NodeId,
    pub cont: NodeId,
    pub kl: NodeId,
    pub steps: Vec<WmStep>,
}

impl WmLossParts {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> [f64; 6] {
        [self.total, self.recon[0], self.recon[1], self.reward, self.cont, self.kl].map(|n| g.value(n).item().as_f64())
    }
}

fn accumulate<T: Scalar>(g: &mut Graph<T>, acc: Option<NodeId>, x: NodeId) -> NodeId {
    match acc {
        None => x,
        Some(a) => g.add(a, x),
    }
}

/// Balanced KL with a per-distribution free-nats floor on each side,
/// summed over distributions and averaged over `rows`.
pub(super) fn balanced_kl<T: Scalar>(
    g: &mut Graph<T>,
    post: NodeId,
    prior: NodeId,
    rows: usize,
    cfg: &WmLossConfig,
) -> NodeId {
    let norm = cfg.dyn_weight + cfg.rep_weight;
    let side = |g: &mut Graph<T>, stop: StopGrad, w: f64| {
        let k = kl_per_dist(g, post, prior, stop);
        let k = g.clamp_min(k, cfg.free_nats);
        let s = g.sum(k);
        let scale = if norm > 0.0 { cfg.beta * w / (norm * rows as f64) } else { 0.0 };
        g.scale(s, scale)
    };
    let d = side(g, StopGrad::P, cfg.dyn_weight);
    let r = side(g, StopGrad::Q, cfg.rep_weight);
    g.add(d, r)
}

/// Reconstruction, event, continue and balanced KL losses over a batch of
/// sequences.
pub fn wm_loss<T: Scalar>(
    g: &mut Graph<T>,
    wm: &WorldModel<T>,
    ids: &WmIds,
    batch: &SeqBatch,
    cfg: &WmLossConfig,
    rng: &mut Rng,
) -> Result<WmLossParts, TensorError> {
    cfg.validate()?;
    let steps = observe_seq(g, wm, ids, batch, rng)?;
    let b = batch.rows;
    let per_row = 1.0 / b as f64;
    let od = wm.obs_dim;
    let (mut rec, mut rew, mut con, mut kl) = ([None, None], None, None, None);
    for (t, s) in steps.iter().enumerate() {
        let obs = &batch.obs[t];
        for p in 0..2 {
            let zi = player_latent(g, wm, s.z, p);
            let x = g.concat_cols(&[s.h, zi]);
            let pred = wm.dec[p].forward(g, &ids.dec[p], x)?;
            let target: Vec<f32> = obs
                .chunks(2 * od)
                .flat_map(|row| row[p * od..(p + 1) * od].iter().copied())
                .collect();
            let tn = constant(g, b, &target);
            let d = g.sub(pred, tn);
            let sq = g.mul(d, d);
            let sq = g.sum(sq);
            let term = g.scale(sq, 0.5 * per_row);
            rec[p] = Some(accumulate(g, rec[p], term));
        }
        let hz = g.concat_cols(&[s.h, s.z]);
        let rl = wm.reward.forward(g, &ids.reward, hz)?;
        let ev: Vec<T> = batch.events[t].iter().map(|&v| T::of(v as f64)).collect();
        let r = g.bce_with_logits(rl, &ev);
        let r = g.sum(r);
        let r = g.scale(r, per_row);
        rew = Some(accumulate(g, rew, r));
        let cl = wm.cont.forward(g, &ids.cont, hz)?;
        let ct: Vec<T> = batch.cont[t].iter().map(|&v| T::of(v as f64)).collect();
        let c = g.bce_with_logits(cl, &ct);
        let c = g.sum(c);
        let c = g.scale(c, per_row);
        con = Some(accumulate(g, con, c));
        let k = balanced_kl(g, s.post_logp, s.prior_logp, b, cfg);
        kl = Some(accumulate(g, kl, k));
    }
    let inv_l = 1.0 / batch.len as f64;
    let mut fin = |x: Option<NodeId>| {
        let x = x.expect("sequence has at least one position");
        g.scale(x, inv_l)
    };
    let recon = [fin(rec[0]), fin(rec[1])];
    let (reward, cont, kl) = (fin(rew), fin(con), fin(kl));
    let mut total = g.add(recon[0], recon[1]);
    for x in [reward, cont, kl] {
        total = g.add(total, x);
    }
    Ok(WmLossParts {
        total,
        recon,
        reward,
        cont,
        kl,
        steps,
    })
}

/// `anchor_coef · KL(q_θj ‖ sg q_θk)` between the current posterior and a
/// frozen snapshot's posterior, both filtering the same cross-play
/// sequences. `snap_ids` may be trainable graph parameters; the snapshot
/// side is detached, so their gradient is exactly zero.
pub fn wm_anchor_loss<T: Scalar>(
    g: &mut Graph<T>,
    wm: &WorldModel<T>,
    ids: &WmIds,
    snapshot: &WorldModel<T>,
    snap_ids: &WmIds,
    batch: &SeqBatch,
    anchor_coef: f64,
    rng: &mut Rng,
) -> Result<NodeId, TensorError> {
    if wm.layout() != snapshot.layout() || wm.obs_dim != snapshot.obs_dim {
        return Err(TensorError::Dimension("snapshot does not match the world model".into()));
    }
    let cur = observe_seq(g, wm, ids, batch, rng)?;
    let old = observe_seq(g, snapshot, snap_ids, batch, rng)?;
    let mut acc = None;
    for (c, o) in cur.iter().zip(&old) {
        let k = kl_per_dist(g, c.post_logp, o.post_logp, StopGrad::Q);
        let k = g.sum(k);
        acc = Some(accumulate(g, acc, k));
    }
    let s = acc.expect("sequence has at least one position");
    Ok(g.scale(s, anchor_coef / (batch.rows * batch.len) as f64))
}
