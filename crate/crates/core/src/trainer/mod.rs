//! REINFORCE with centralized critics and GAE, and the LIPO / CoMeDi
//! objectives built on it.

mod gae;
mod loss;
mod modelfree;

pub use gae::{gae_advantages, lambda_target};
pub use loss::{normalize, pg_loss, scale_down, value_loss, PgGroup, PgTerms};
pub use modelfree::{
    batch_groups, collect_batch, modelfree_update, train_modelfree, Batch, IterReport,
    Method, ModelFreeConfig, XpEpisode,
};

use crate::env::{Game, GameState};
use crate::error::TrainError;
use crate::nn::{self, Activation, Adam, Mlp, Module};
use crate::rng::Rng;
use crate::rollout::{Policy, Trajectory};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub ent_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub grad_clip: f64,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            ent_coef: 1e-4,
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            grad_clip: 10.0,
        }
    }
}

/// Cross-play and mixed-play weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XpmWeights {
    pub lambda_xp: f64,
    pub lambda_mp: f64,
}

impl Default for XpmWeights {
    fn default() -> Self {
        Self {
            lambda_xp: 0.25,
            lambda_mp: 0.0,
        }
    }
}

impl XpmWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda_xp >= 0.0 && self.lambda_mp >= 0.0) {
            return Err(TrainError::Config("λ_XP and λ_MP must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::LeakyRelu,
        }
    }
}

impl NetShape {
    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(output);
        s
    }
}

/// A population member: one actor shared by both seats and a bank of
/// centralized critics keyed by partner id (its own id keys the SP critic).
#[derive(Clone, Debug)]
pub struct Agent {
    pub id: usize,
    pub actor: Mlp,
    pub critics: BTreeMap<usize, Mlp>,
    pub frozen: bool,
    critic_shape: NetShape,
    critic_in: usize,
}

impl Agent {
    pub fn new(
        id: usize,
        actor_in: usize,
        n_actions: usize,
        critic_in: usize,
        actor_shape: &NetShape,
        critic_shape: &NetShape,
        rng: &mut Rng,
    ) -> Self {
        let actor = Mlp::with_output_scale(
            &actor_shape.sizes(actor_in, n_actions),
            actor_shape.activation,
            0.01,
            rng,
        );
        let mut a = Self {
            id,
            actor,
            critics: BTreeMap::new(),
            frozen: false,
            critic_shape: critic_shape.clone(),
            critic_in,
        };
        a.ensure_critic(id, rng);
        a
    }

    /// Reassembles an agent from stored networks.
    pub fn from_parts(id: usize, actor: Mlp, critics: BTreeMap<usize, Mlp>, critic_shape: NetShape, critic_in: usize, frozen: bool) -> Self {
        Self {
            id,
            actor,
            critics,
            frozen,
            critic_shape,
            critic_in,
        }
    }

    pub fn critic_shape(&self) -> &NetShape {
        &self.critic_shape
    }

    pub fn critic_in(&self) -> usize {
        self.critic_in
    }

    /// Creates the critic for `partner` on first use.
    pub fn ensure_critic(&mut self, partner: usize, rng: &mut Rng) -> &Mlp {
        let sizes = self.critic_shape.sizes(self.critic_in, 1);
        let act = self.critic_shape.activation;
        self.critics
            .entry(partner)
            .or_insert_with(|| Mlp::new(&sizes, act, rng))
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// SHA-256 over the actor and every critic in key order.
    pub fn checksum(&self) -> String {
        let mut parts = vec![nn::param_checksum(&self.actor)];
        for (k, c) in &self.critics {
            parts.push(format!("{k}:{}", nn::param_checksum(c)));
        }
        parts.join("|")
    }

    pub fn action_probs(&self, x: &[f32]) -> Vec<f32> {
        let l = self.actor.infer(x);
        let m = l.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f32> = l.iter().map(|v| (v - m).exp()).collect();
        let s: f32 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// An agent acting on raw observations.
pub struct ActorPolicy<'a>(pub &'a Agent);

impl Policy for ActorPolicy<'_> {
    fn id(&self) -> usize {
        self.0.id
    }

    fn obs_dim(&self) -> usize {
        self.0.actor.in_dim()
    }

    fn logits(&mut self, obs: &[Vec<f32>; 2], _: Option<[usize; 2]>, _: &mut Rng) -> [Vec<f32>; 2] {
        let mut x = obs[0].clone();
        x.extend_from_slice(&obs[1]);
        let mut l = self.0.actor.infer_rows(&x, 2);
        let second = l.split_off(l.len() / 2);
        [l, second]
    }
}

/// Critic input: state features followed by a one-hot of the learner seat.
pub fn critic_features(game: &Game, s: &GameState, seat: usize) -> Vec<f32> {
    let mut f = game.state_features(s);
    f.push((seat == 0) as u8 as f32);
    f.push((seat == 1) as u8 as f32);
    f
}

pub fn critic_dim(game: &Game) -> usize {
    game.state_dim() + 2
}

/// One seat's view of a trajectory, flattened for the losses.
#[derive(Clone, Debug, Default)]
pub struct View {
    /// `T × actor_in`
    pub actor_in: Vec<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub conts: Vec<f64>,
    /// `(T + 1) × critic_in`, the last row bootstraps.
    pub critic_in: Vec<f32>,
}

impl View {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn of(game: &Game, traj: &Trajectory, seat: usize) -> Self {
        let mut v = View::default();
        for s in &traj.steps {
            v.actor_in.extend_from_slice(&s.obs[seat]);
            v.actions.push(s.actions[seat]);
            v.rewards.push(s.reward);
            v.conts.push(s.cont as u8 as f64);
            v.critic_in.extend(critic_features(game, &s.state, seat));
        }
        v.critic_in.extend(critic_features(game, &traj.final_state, seat));
        v
    }
}

/// How value targets and advantages are estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Returns {
    Gae,
    /// Recursive λ-return targets, advantages `target − v` scaled down by
    /// their spread when it exceeds 1.
    Lambda,
}

/// GAE over every view with the given critic, advantages normalized across
/// the whole group.
pub fn build_group(
    label: &'static str,
    weight: f64,
    views: &[View],
    critic_key: usize,
    critic: &Mlp,
    cfg: &PgConfig,
) -> Result<PgGroup, TrainError> {
    build_group_with(label, weight, views, critic_key, critic, cfg, Returns::Gae)
}

pub fn build_group_with(
    label: &'static str,
    weight: f64,
    views: &[View],
    critic_key: usize,
    critic: &Mlp,
    cfg: &PgConfig,
    returns: Returns,
) -> Result<PgGroup, TrainError> {
    let mut g = PgGroup {
        label,
        weight,
        critic: critic_key,
        ..PgGroup::default()
    };
    let cdim = critic.in_dim();
    for v in views.iter().filter(|v| !v.is_empty()) {
        let rows = v.len() + 1;
        if v.critic_in.len() != rows * cdim {
            return Err(TrainError::Length(format!(
                "critic input has {} values, expected {}",
                v.critic_in.len(),
                rows * cdim
            )));
        }
        let values: Vec<f64> = critic
            .infer_rows(&v.critic_in, rows)
            .into_iter()
            .map(|x| x as f64)
            .collect();
        let (adv, targets) = match returns {
            Returns::Gae => gae_advantages(&v.rewards, &values, &v.conts, cfg.gamma, cfg.gae_lambda)?,
            Returns::Lambda => {
                let tg = lambda_target(&v.rewards, &values, &v.conts, cfg.gamma, cfg.gae_lambda)?;
                (tg.iter().zip(&values).map(|(t, v)| t - v).collect(), tg)
            }
        };
        g.actor_in.extend_from_slice(&v.actor_in);
        g.actions.extend_from_slice(&v.actions);
        g.adv.extend(adv);
        g.targets.extend(targets);
        g.critic_in.extend_from_slice(&v.critic_in[..(rows - 1) * cdim]);
    }
    match returns {
        Returns::Gae => normalize(&mut g.adv),
        Returns::Lambda => scale_down(&mut g.adv),
    }
    Ok(g)
}

/// Every term of one update on a single graph.
pub struct AgentLoss {
    pub total: NodeId,
    pub pg: PgTerms,
    pub values: Vec<(usize, NodeId)>,
    pub actor_ids: Vec<NodeId>,
    pub critic_ids: BTreeMap<usize, Vec<NodeId>>,
}

/// Builds the policy-gradient loss plus one value regression per critic
/// used by an active group.
pub fn agent_loss<T: Scalar>(
    g: &mut Graph<T>,
    actor: &Mlp<T>,
    critics: &BTreeMap<usize, Mlp<T>>,
    groups: &[PgGroup],
    ent_coef: f64,
) -> Result<AgentLoss, TrainError> {
    let actor_ids = nn::bind(g, actor, true);
    let pg = pg_loss(g, actor, &actor_ids, groups, ent_coef)?;
    let mut total = pg.loss;
    let mut by_key: BTreeMap<usize, (Vec<f32>, Vec<f64>)> = BTreeMap::new();
    for grp in groups.iter().filter(|g| g.active()) {
        let e = by_key.entry(grp.critic).or_default();
        e.0.extend_from_slice(&grp.critic_in);
        e.1.extend_from_slice(&grp.targets);
    }
    let mut values = Vec::new();
    let mut critic_ids = BTreeMap::new();
    for (key, (x, t)) in &by_key {
        let critic = critics
            .get(key)
            .ok_or_else(|| TrainError::Config(format!("no critic for partner {key}")))?;
        let ids = nn::bind(g, critic, true);
        let v = value_loss(g, critic, &ids, x, t)?;
        total = g.add(total, v);
        values.push((*key, v));
        critic_ids.insert(*key, ids);
    }
    Ok(AgentLoss {
        total,
        pg,
        values,
        actor_ids,
        critic_ids,
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct UpdateStats {
    pub pg_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub min_prob: f64,
    pub actor_grad_norm: f64,
}

/// Optimizer state for one agent.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: PgConfig,
    pub actor_opt: Adam,
    pub critic_opts: BTreeMap<usize, Adam>,
}

impl Learner {
    pub fn new(cfg: PgConfig) -> Self {
        let actor_opt = Adam::new(cfg.actor_lr).with_clip(cfg.grad_clip);
        Self {
            cfg,
            actor_opt,
            critic_opts: BTreeMap::new(),
        }
    }

    /// One gradient step of the actor and of every critic used by `groups`.
    pub fn update(&mut self, agent: &mut Agent, groups: &[PgGroup]) -> Result<UpdateStats, TrainError> {
        if agent.frozen {
            return Err(TrainError::Frozen(agent.id));
        }
        if !groups.iter().any(|g| g.active()) {
            return Ok(UpdateStats::default());
        }
        let mut g = Graph::<f32>::unchecked();
        let l = agent_loss(&mut g, &agent.actor, &agent.critics, groups, self.cfg.ent_coef)?;
        let grads = g.backward(l.total)?;
        let mut stats = UpdateStats {
            pg_loss: g.value(l.pg.loss).item() as f64,
            entropy: g.value(l.pg.entropy).item() as f64,
            min_prob: min_prob(&agent.actor, groups),
            ..UpdateStats::default()
        };
        for (_, v) in &l.values {
            stats.value_loss += g.value(*v).item() as f64;
        }
        let ag = grads.collect(&l.actor_ids);
        check_finite(&ag)?;
        stats.actor_grad_norm = self.actor_opt.step(agent.actor.params_mut(), &ag);
        for (key, ids) in &l.critic_ids {
            let cg = grads.collect(ids);
            check_finite(&cg)?;
            let (lr, clip) = (self.cfg.critic_lr, self.cfg.grad_clip);
            let opt = self
                .critic_opts
                .entry(*key)
                .or_insert_with(|| Adam::new(lr).with_clip(clip));
            let critic = agent.critics.get_mut(key).expect("critic bound above");
            opt.step(critic.params_mut(), &cg);
        }
        Ok(stats)
    }
}

fn check_finite<T: Scalar>(grads: &[Tensor<T>]) -> Result<(), TrainError> {
    if grads.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::Tensor(crate::error::TensorError::NonFinite { op: "gradient", node: 0 }))
    }
}

/// Smallest action probability over the active rows.
fn min_prob(actor: &Mlp, groups: &[PgGroup]) -> f64 {
    let mut m = 1.0f64;
    let k = actor.out_dim();
    for grp in groups.iter().filter(|g| g.active()) {
        let l = actor.infer_rows(&grp.actor_in, grp.rows());
        for row in l.chunks(k) {
            let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let z: f64 = row.iter().map(|&v| (v as f64 - mx).exp()).sum();
            for &v in row {
                m = m.min((v as f64 - mx).exp() / z);
            }
        }
    }
    m
}
