//! Two-player recurrent state-space model with player-partitioned
//! categorical latents, event-reward and continue heads.

mod imagine;
mod loss;

pub use imagine::{
    evaluate, filter_prefixes, imagine, lambda_target, open_loop_reward, sample_sequences, sample_windows, ImaginedRollout,
    SeqBatch, WmMetrics, WmPolicy,
};
pub use loss::{observe_seq, wm_anchor_loss, wm_loss, WmIds, WmLossParts, WmStep};

use crate::error::TensorError;
use crate::nn::{sample_one_hot, Activation, Gru, Mlp, Module};
use crate::rng::Rng;
use crate::tensor::{kernels, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Partition of the `N` categorical latents: `K` joint distributions first,
/// then `(N − K)/2` for player 1 and the same for player 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub n: usize,
    pub k: usize,
    pub classes: usize,
}

impl Default for LatentLayout {
    fn default() -> Self {
        Self { n: 12, k: 8, classes: 16 }
    }
}

impl LatentLayout {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.n <= self.k || !(self.n - self.k).is_multiple_of(2) || self.classes < 2 {
            return Err(TensorError::Dimension(format!(
                "latent layout needs N > K, N − K even and ≥ 2 classes (N={}, K={}, C={})",
                self.n, self.k, self.classes
            )));
        }
        Ok(())
    }

    pub fn per_player(&self) -> usize {
        (self.n - self.k) / 2
    }

    /// Width of the flattened one-hot latent.
    pub fn z_dim(&self) -> usize {
        self.n * self.classes
    }

    /// Width of one player's slice `z^i`.
    pub fn player_dim(&self) -> usize {
        (self.k + self.per_player()) * self.classes
    }

    /// Distribution indices of the joint block.
    pub fn joint(&self) -> Range<usize> {
        0..self.k
    }

    /// Distribution indices private to `player`.
    pub fn private(&self, player: usize) -> Range<usize> {
        let p = self.per_player();
        let start = self.k + player * p;
        start..start + p
    }

    /// Column ranges of `z` that make up `z^player`, in order.
    pub fn player_cols(&self, player: usize) -> [Range<usize>; 2] {
        let c = self.classes;
        let j = self.joint();
        let p = self.private(player);
        [j.start * c..j.end * c, p.start * c..p.end * c]
    }

    /// `z^player` gathered from one flattened latent row.
    pub fn player_slice<T: Copy>(&self, z: &[T], player: usize) -> Vec<T> {
        let [a, b] = self.player_cols(player);
        let mut out = Vec::with_capacity(self.player_dim());
        out.extend_from_slice(&z[a]);
        out.extend_from_slice(&z[b]);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WmLossConfig {
    /// Scale of the balanced KL term.
    pub beta: f64,
    /// Per-distribution floor on each KL side.
    pub free_nats: f64,
    /// Weight of the side that trains the prior (posterior detached).
    pub dyn_weight: f64,
    /// Weight of the side that trains the posterior (prior detached).
    pub rep_weight: f64,
    pub anchor_coef: f64,
}

impl Default for WmLossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            free_nats: 1.0,
            dyn_weight: 0.5,
            rep_weight: 0.1,
            anchor_coef: 1.0,
        }
    }
}

impl WmLossConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let v = [self.beta, self.free_nats, self.dyn_weight, self.rep_weight, self.anchor_coef];
        if v.iter().any(|x| !(*x >= 0.0)) {
            return Err(TensorError::Dimension("world-model loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WmShape {
    pub layout: LatentLayout,
    /// Recurrent state width.
    pub deter: usize,
    /// Hidden width of every MLP.
    pub hidden: usize,
    /// Hidden layers of the encoder, prior and decoders.
    pub layers: usize,
    /// Hidden layers of the reward and continue heads.
    pub head_layers: usize,
    /// Uniform mixing weight of every latent distribution.
    pub unimix: f64,
    /// Actors see `h` next to their latent slice.
    pub actor_uses_h: bool,
}

impl Default for WmShape {
    fn default() -> Self {
        Self {
            layout: LatentLayout::default(),
            deter: 64,
            hidden: 128,
            layers: 1,
            head_layers: 1,
            unimix: 0.01,
            actor_uses_h: true,
        }
    }
}

/// Parameters of the recurrent core, encoder, prior, per-player decoders,
/// reward head and continue head.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel<T: Scalar = f32> {
    pub shape: WmShape,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_events: usize,
    pub gru: Gru<T>,
    pub enc: Mlp<T>,
    pub prior: Mlp<T>,
    pub dec: [Mlp<T>; 2],
    pub reward: Mlp<T>,
    pub cont: Mlp<T>,
}

fn sizes(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(std::iter::repeat_n(hidden, layers));
    s.push(output);
    s
}

impl<T: Scalar> WorldModel<T> {
    pub fn new(
        shape: WmShape,
        obs_dim: usize,
        n_actions: usize,
        n_events: usize,
        rng: &mut Rng,
    ) -> Result<Self, TensorError> {
        shape.layout.validate()?;
        let l = shape.layout;
        let (d, hd, act) = (shape.deter, shape.hidden, Activation::LeakyRelu);
        let gru = Gru::new(l.z_dim() + 2 * n_actions, d, rng);
        let enc = Mlp::new(&sizes(d + 2 * obs_dim, hd, shape.layers, l.z_dim()), act, rng);
        let prior = Mlp::new(&sizes(d, hd, shape.layers, l.z_dim()), act, rng);
        let dec = [0, 1].map(|_| Mlp::new(&sizes(d + l.player_dim(), hd, shape.layers, obs_dim), act, rng));
        let reward = Mlp::with_output_scale(&sizes(d + l.z_dim(), hd, shape.head_layers, n_events), act, 0.1, rng);
        let cont = Mlp::with_output_scale(&sizes(d + l.z_dim(), hd, shape.head_layers, 1), act, 0.1, rng);
        Ok(Self {
            shape,
            obs_dim,
            n_actions,
            n_events,
            gru,
            enc,
            prior,
            dec,
            reward,
            cont,
        })
    }

    pub fn layout(&self) -> LatentLayout {
        self.shape.layout
    }

    pub fn deter(&self) -> usize {
        self.shape.deter
    }

    pub fn cast<U: Scalar>(&self) -> WorldModel<U> {
        WorldModel {
            shape: self.shape.clone(),
            obs_dim: self.obs_dim,
            n_actions: self.n_actions,
            n_events: self.n_events,
            gru: self.gru.cast(),
            enc: self.enc.cast(),
            prior: self.prior.cast(),
            dec: [self.dec[0].cast(), self.dec[1].cast()],
            reward: self.reward.cast(),
            cont: self.cont.cast(),
        }
    }

    /// Components in parameter order.
    pub fn parts(&self) -> [&dyn Module<T>; 7] {
        [&self.gru, &self.enc, &self.prior, &self.dec[0], &self.dec[1], &self.reward, &self.cont]
    }

    /// Rebuilds a model from tensors in [`Module::params`] order.
    pub fn from_tensors(
        shape: WmShape,
        obs_dim: usize,
        n_actions: usize,
        n_events: usize,
        tensors: Vec<Tensor<T>>,
    ) -> Result<Self, TensorError> {
        let mut rng = crate::rng::from_u64(0);
        let template = WorldModel::<T>::new(shape, obs_dim, n_actions, n_events, &mut rng)?;
        let counts: Vec<usize> = template.parts().iter().map(|p| p.n_params()).collect();
        if tensors.len() != counts.iter().sum::<usize>() {
            return Err(TensorError::Dimension(format!(
                "world model needs {} tensors, got {}",
                counts.iter().sum::<usize>(),
                tensors.len()
            )));
        }
        let mut m = template;
        for (dst, src) in m.params_mut().into_iter().zip(tensors) {
            if dst.shape() != src.shape() {
                return Err(TensorError::Dimension(format!(
                    "world-model tensor shape {:?} where {:?} was expected",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src;
        }
        Ok(m)
    }

    /// Width of an actor input row.
    pub fn actor_dim(&self) -> usize {
        self.layout().player_dim() + if self.shape.actor_uses_h { self.deter() } else { 0 }
    }

    /// Width of a critic input row: `[h, z, seat one-hot]`.
    pub fn critic_dim(&self) -> usize {
        self.deter() + self.layout().z_dim() + 2
    }
}

/// Batched latent state: `rows` pairs of `h [deter]` and one-hot `z [N·C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief<T: Scalar = f32> {
    pub rows: usize,
    pub h: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Scalar> Belief<T> {
    pub fn row_h(&self, i: usize) -> &[T] {
        let d = self.h.len() / self.rows;
        &self.h[i * d..(i + 1) * d]
    }

    pub fn row_z(&self, i: usize) -> &[T] {
        let d = self.z.len() / self.rows;
        &self.z[i * d..(i + 1) * d]
    }

    /// Row subset in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut b = Belief {
            rows: idx.len(),
            h: Vec::new(),
            z: Vec::new(),
        };
        for &i in idx {
            b.h.extend_from_slice(self.row_h(i));
            b.z.extend_from_slice(self.row_z(i));
        }
        b
    }

    pub fn concat(parts: &[Belief<T>]) -> Self {
        let mut b = Belief {
            rows: 0,
            h: Vec::new(),
            z: Vec::new(),
        };
        for p in parts {
            b.rows += p.rows;
            b.h.extend_from_slice(&p.h);
            b.z.extend_from_slice(&p.z);
        }
        b
    }
}

fn mixed_probs<T: Scalar>(x: &[T], cols: usize, mix: f64) -> Vec<T> {
    let mut p = kernels::softmax_rows(x, cols);
    if mix > 0.0 {
        let u = T::of(mix / cols as f64);
        let keep = T::of(1.0 - mix);
        for v in p.iter_mut() {
            *v = *v * keep + u;
        }
    }
    p
}

fn sigmoid_vec<T: Scalar>(x: Vec<T>) -> Vec<T> {
    x.into_iter().map(kernels::sigmoid).collect()
}

/// Tape-free forward passes; arithmetic matches the graph versions.
impl<T: Scalar> WorldModel<T> {
    pub fn initial(&self, rows: usize) -> Belief<T> {
        Belief {
            rows,
            h: vec![T::zero(); rows * self.deter()],
            z: vec![T::zero(); rows * self.layout().z_dim()],
        }
    }

    /// Recurrent input `[z_prev, a¹ one-hot, a² one-hot]`, zeros for a
    /// missing previous action.
    fn core_input(&self, b: &Belief<T>, prev: Option<&[[usize; 2]]>) -> Vec<T> {
        let (zd, a) = (self.layout().z_dim(), self.n_actions);
        let mut x = Vec::with_capacity(b.rows * (zd + 2 * a));
        for i in 0..b.rows {
            x.extend_from_slice(b.row_z(i));
            let mut oh = vec![T::zero(); 2 * a];
            if let Some(p) = prev {
                oh[p[i][0]] = T::one();
                oh[a + p[i][1]] = T::one();
            }
            x.extend(oh);
        }
        x
    }

    fn advance(&self, b: &Belief<T>, prev: Option<&[[usize; 2]]>) -> Vec<T> {
        self.gru.infer_rows(&b.h, &self.core_input(b, prev), b.rows)
    }

    /// Mixed posterior class probabilities `[rows·N, C]` given `h` and the
    /// joint observation rows `[o¹, o²]`.
    pub fn posterior_probs(&self, h: &[T], obs: &[T], rows: usize) -> Vec<T> {
        let (d, od) = (self.deter(), 2 * self.obs_dim);
        let mut x = Vec::with_capacity(rows * (d + od));
        for i in 0..rows {
            x.extend_from_slice(&h[i * d..(i + 1) * d]);
            x.extend_from_slice(&obs[i * od..(i + 1) * od]);
        }
        mixed_probs(&self.enc.infer_rows(&x, rows), self.layout().classes, self.shape.unimix)
    }

    pub fn prior_probs(&self, h: &[T], rows: usize) -> Vec<T> {
        mixed_probs(&self.prior.infer_rows(h, rows), self.layout().classes, self.shape.unimix)
    }

    /// One filtering step: advance the core with the previous joint action
    /// and sample the posterior for the new joint observation.
    pub fn filter_step(&self, b: &Belief<T>, prev: Option<&[[usize; 2]]>, obs: &[T], rng: &mut Rng) -> Belief<T> {
        let h = self.advance(b, prev);
        let p = self.posterior_probs(&h, obs, b.rows);
        let z = sample_one_hot(&p, self.layout().classes, rng);
        Belief { rows: b.rows, h, z }
    }

    /// One prior step under the joint action.
    pub fn imagine_step(&self, b: &Belief<T>, actions: &[[usize; 2]], rng: &mut Rng) -> Belief<T> {
        let h = self.advance(b, Some(actions));
        let p = self.prior_probs(&h, b.rows);
        let z = sample_one_hot(&p, self.layout().classes, rng);
        Belief { rows: b.rows, h, z }
    }

    fn hz(&self, b: &Belief<T>) -> Vec<T> {
        let mut x = Vec::with_capacity(b.h.len() + b.z.len());
        for i in 0..b.rows {
            x.extend_from_slice(b.row_h(i));
            x.extend_from_slice(b.row_z(i));
        }
        x
    }

    /// Event probabilities `[rows, n_events]`.
    pub fn event_probs(&self, b: &Belief<T>) -> Vec<T> {
        sigmoid_vec(self.reward.infer_rows(&self.hz(b), b.rows))
    }

    pub fn cont_probs(&self, b: &Belief<T>) -> Vec<T> {
        sigmoid_vec(self.cont.infer_rows(&self.hz(b), b.rows))
    }

    /// Mean decoded observation of `player` for every row.
    pub fn decode(&self, b: &Belief<T>, player: usize) -> Vec<T> {
        let l = self.layout();
        let mut x = Vec::with_capacity(b.rows * (self.deter() + l.player_dim()));
        for i in 0..b.rows {
            x.extend_from_slice(b.row_h(i));
            x.extend(l.player_slice(b.row_z(i), player));
        }
        self.dec[player].infer_rows(&x, b.rows)
    }

    /// Actor input of `seat` for every row.
    pub fn actor_features(&self, b: &Belief<T>, seat: usize) -> Vec<T> {
        let l = self.layout();
        let mut x = Vec::with_capacity(b.rows * self.actor_dim());
        for i in 0..b.rows {
            if self.shape.actor_uses_h {
                x.extend_from_slice(b.row_h(i));
            }
            x.extend(l.player_slice(b.row_z(i), seat));
        }
        x
    }

    /// Critic input of `seat` for every row.
    pub fn critic_features(&self, b: &Belief<T>, seat: usize) -> Vec<T> {
        let mut x = Vec::with_capacity(b.rows * self.critic_dim());
        for i in 0..b.rows {
            x.extend_from_slice(b.row_h(i));
            x.extend_from_slice(b.row_z(i));
            x.push(T::of((seat == 0) as u8 as f64));
            x.push(T::of((seat == 1) as u8 as f64));
        }
        x
    }
}

impl<T: Scalar> Module<T> for WorldModel<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.gru.params();
        v.extend(self.enc.params());
        v.extend(self.prior.params());
        v.extend(self.dec[0].params());
        v.extend(self.dec[1].params());
        v.extend(self.reward.params());
        v.extend(self.cont.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.gru.params_mut();
        v.extend(self.enc.params_mut());
        v.extend(self.prior.params_mut());
        let [d0, d1] = &mut self.dec;
        v.extend(d0.params_mut());
        v.extend(d1.params_mut());
        v.extend(self.reward.params_mut());
        v.extend(self.cont.params_mut());
        v
    }
}
