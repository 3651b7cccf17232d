use super::{InnerReport, Simulator, XpmSimConfig};
use crate::env::Game;
use crate::error::{EnvError, TrainError};
use crate::nn::{grads_for, Adam, Module};
use crate::rng::Rng;
use crate::rollout::{collect_episode, ActionMode, Pairing, Partition, Policy, ReplayBuffer, ScriptedPolicy, Trajectory};
use crate::tensor::Graph;
use crate::trainer::{build_group_with, Agent, Learner, Returns, View};
use crate::world_model::{
    filter_prefixes, imagine, sample_windows, wm_anchor_loss, wm_loss, ImaginedRollout, SeqBatch, WmIds,
    WmLossConfig, WmPolicy, WmShape, WorldModel,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WmSimConfig {
    pub shape: WmShape,
    pub loss: WmLossConfig,
    pub lr: f64,
    pub grad_clip: f64,
    /// Sequences per model update.
    pub batch_rows: usize,
    /// Observations per sequence.
    pub seq_len: usize,
    /// Cross-play sequences per anchor term.
    pub anchor_rows: usize,
    /// Model updates per inner step.
    pub updates_per_inner: usize,
    /// Share of fine-tuning sequences drawn from the phase-1 data.
    pub base_fraction: f64,
    pub pretrain_updates: usize,
    pub scripted_episodes: usize,
    pub random_episodes: usize,
    /// Random-action probability of the scripted chefs.
    pub scripted_eps: f64,
}

impl Default for WmSimConfig {
    fn default() -> Self {
        Self {
            shape: WmShape::default(),
            loss: WmLossConfig::default(),
            lr: 1e-3,
            grad_clip: 100.0,
            batch_rows: 16,
            seq_len: 24,
            anchor_rows: 8,
            updates_per_inner: 1,
            base_fraction: 0.25,
            pretrain_updates: 1500,
            scripted_episodes: 40,
            random_episodes: 10,
            scripted_eps: 0.1,
        }
    }
}

/// Loss components of one model update.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WmLossRecord {
    pub update: usize,
    pub total: f64,
    pub recon1: f64,
    pub recon2: f64,
    pub reward: f64,
    pub cont: f64,
    pub kl: f64,
    pub anchor: f64,
}

/// A learned world model used as the simulator, with frozen per-agent
/// snapshots.
pub struct WmSim {
    pub game: Game,
    pub cfg: WmSimConfig,
    pub wm: WorldModel,
    opt: Adam,
    /// Model as it stood when each agent finished training.
    pub snapshots: BTreeMap<usize, WorldModel>,
    /// Snapshot the posterior is anchored to while fine-tuning.
    pub anchor: Option<usize>,
    /// Phase-1 trajectories kept for replay.
    pub base: Vec<Trajectory>,
    pub log: Vec<WmLossRecord>,
}

impl WmSim {
    pub fn new(game: Game, cfg: WmSimConfig, rng: &mut Rng) -> Result<Self, TrainError> {
        if game.as_kitchen().is_none() {
            return Err(EnvError::Unsupported("a kitchen environment for world-model training".into()).into());
        }
        cfg.loss.validate()?;
        if cfg.batch_rows == 0 || cfg.seq_len == 0 {
            return Err(TrainError::Config("world-model batches need rows and length".into()));
        }
        let wm = WorldModel::new(cfg.shape.clone(), game.obs_dim(), game.n_actions(), game.n_events(), rng)?;
        Ok(Self {
            opt: Adam::new(cfg.lr).with_clip(cfg.grad_clip),
            game,
            cfg,
            wm,
            snapshots: BTreeMap::new(),
            anchor: None,
            base: Vec::new(),
            log: Vec::new(),
        })
    }

    /// Scripted and random-action episodes for phase-1 model training.
    pub fn phase1_data(&self, rng: &mut Rng) -> Result<Vec<Trajectory>, TrainError> {
        let k = self.game.as_kitchen().expect("checked at construction").clone();
        let mut out = Vec::new();
        for (n, eps) in [(self.cfg.scripted_episodes, self.cfg.scripted_eps), (self.cfg.random_episodes, 1.0)] {
            let mut p = ScriptedPolicy::new(usize::MAX, k.clone(), eps);
            for _ in 0..n {
                out.push(collect_episode(&self.game, Pairing::SelfPlay(&mut p), ActionMode::Sample, rng)?);
            }
        }
        Ok(out)
    }

    /// Phase 1: trains the model on `data` alone and keeps it for replay.
    pub fn pretrain(&mut self, data: Vec<Trajectory>, rng: &mut Rng) -> Result<(), TrainError> {
        self.base = data;
        for _ in 0..self.cfg.pretrain_updates {
            self.update(&[], &[], rng)?;
        }
        Ok(())
    }

    /// One model update on sequences from `trajs` mixed with phase-1 data,
    /// anchored on `xp` when an anchor snapshot is set.
    pub fn update(&mut self, trajs: &[&Trajectory], xp: &[&Trajectory], rng: &mut Rng) -> Result<WmLossRecord, TrainError> {
        let (rows, len) = (self.cfg.batch_rows, self.cfg.seq_len);
        let base: Vec<&Trajectory> = self.base.iter().collect();
        let n_base = if trajs.is_empty() {
            rows
        } else if base.is_empty() {
            0
        } else {
            ((rows as f64 * self.cfg.base_fraction).round() as usize).min(rows)
        };
        let mut windows = if n_base > 0 { sample_windows(&base, n_base, len, rng)? } else { Vec::new() };
        if rows > n_base {
            windows.extend(sample_windows(trajs, rows - n_base, len, rng)?);
        }
        let batch = SeqBatch::from_windows(&windows, len)?;

        let mut g = Graph::unchecked();
        let ids = WmIds::bind(&mut g, &self.wm, true);
        let parts = wm_loss(&mut g, &self.wm, &ids, &batch, &self.cfg.loss, rng)?;
        let v = parts.values(&g);
        let mut total = parts.total;
        let mut anchor = 0.0;
        if let Some(k) = self.anchor {
            let snap = self.snapshots.get(&k).ok_or(TrainError::MissingSnapshot(k))?;
            if !xp.is_empty() && self.cfg.loss.anchor_coef > 0.0 {
                let xb = SeqBatch::from_windows(&sample_windows(xp, self.cfg.anchor_rows.max(1), len, rng)?, len)?;
                let sids = WmIds::bind(&mut g, snap, false);
                let a = wm_anchor_loss(&mut g, &self.wm, &ids, snap, &sids, &xb, self.cfg.loss.anchor_coef, rng)?;
                anchor = g.value(a).item() as f64;
                total = g.add(total, a);
            }
        }
        let grads = g.backward(total)?;
        let grads = grads_for(&grads, &ids.all);
        if grads.iter().any(|t| !t.is_finite()) {
            return Err(crate::error::TensorError::NonFinite {
                op: "world-model gradient",
                node: 0,
            }
            .into());
        }
        self.opt.step(self.wm.params_mut(), &grads);
        let rec = WmLossRecord {
            update: self.log.len(),
            total: v[0] + anchor,
            recon1: v[1],
            recon2: v[2],
            reward: v[3],
            cont: v[4],
            kl: v[5],
            anchor,
        };
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Freezes the current model as agent `id`'s snapshot and anchors
    /// further fine-tuning to it.
    pub fn snapshot(&mut self, id: usize) {
        self.snapshots.insert(id, self.wm.clone());
        self.anchor = Some(id);
    }

    /// An agent whose actor and critics read this model's latents.
    pub fn new_agent(&self, id: usize, pg_shapes: (&crate::trainer::NetShape, &crate::trainer::NetShape), rng: &mut Rng) -> Agent {
        Agent::new(id, self.wm.actor_dim(), self.wm.n_actions, self.wm.critic_dim(), pg_shapes.0, pg_shapes.1, rng)
    }
}

fn views_for(wm: &WorldModel, roll: &ImaginedRollout, seats: &[usize]) -> Vec<View> {
    seats.iter().flat_map(|&s| roll.views(wm, s)).collect()
}

fn mean_imagined_return(wm: &WorldModel, roll: &ImaginedRollout) -> f64 {
    let n = roll.rows();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|r| roll.rewards(r, wm.n_events).iter().sum::<f64>()).sum::<f64>() / n as f64
}

impl Simulator for WmSim {
    fn policy<'a>(&'a self, agent: &'a Agent) -> Box<dyn Policy + 'a> {
        Box::new(WmPolicy::new(&self.wm, agent))
    }

    fn partner_policy<'a>(&'a self, partner: &'a Agent) -> Box<dyn Policy + 'a> {
        let wm = self.snapshots.get(&partner.id).unwrap_or(&self.wm);
        Box::new(WmPolicy::new(wm, partner))
    }

    fn inner_step(
        &mut self,
        agent: &mut Agent,
        learner: &mut Learner,
        partners: &[Agent],
        buffer: &ReplayBuffer,
        cfg: &XpmSimConfig,
        rng: &mut Rng,
    ) -> Result<InnerReport, TrainError> {
        let mut rep = InnerReport::default();
        let all = buffer.trajectories(Partition::Both);
        let xp = buffer.trajectories(Partition::Xp);
        for _ in 0..self.cfg.updates_per_inner {
            rep.wm_loss = Some(self.update(&all, &xp, rng)?.total);
        }
        let wm = &self.wm;

        let refs: Vec<_> = buffer
            .sample_states(Partition::Both, cfg.sp_starts, rng)?
            .iter()
            .map(|r| (r.traj, r.t))
            .collect();
        let start = filter_prefixes(wm, &refs, rng);
        let sp = imagine(wm, &start, [&agent.actor, &agent.actor], cfg.sim_horizon, rng);
        rep.sim_sp_return = mean_imagined_return(wm, &sp);
        rep.simulated_steps = sp.rows() * sp.horizon();
        let own = agent.critics.get(&agent.id).ok_or(TrainError::Config("missing SP critic".into()))?;
        let mut groups = vec![build_group_with("sp", 1.0, &views_for(wm, &sp, &[0, 1]), agent.id, own, &learner.cfg, Returns::Lambda)?];

        if !partners.is_empty() && !buffer.xp_partners().is_empty() {
            let k = buffer.max_xp_partner(cfg.max_xp_window)?;
            let partner = partners
                .iter()
                .find(|p| p.id == k)
                .ok_or_else(|| TrainError::Config(format!("buffer partner {k} is not in the population")))?;
            let critic = agent
                .critics
                .get(&k)
                .ok_or_else(|| TrainError::Config(format!("missing critic for partner {k}")))?;
            let starts = buffer.sample_xp_states(k, cfg.xp_starts, rng)?;
            let mut views = Vec::new();
            let mut ret = 0.0;
            for seat in 0..2 {
                let refs: Vec<_> = starts
                    .iter()
                    .filter(|r| r.seat_of(agent.id) == seat)
                    .map(|r| (r.traj, r.t))
                    .collect();
                if refs.is_empty() {
                    continue;
                }
                let b = filter_prefixes(wm, &refs, rng);
                let actors = if seat == 0 {
                    [&agent.actor, &partner.actor]
                } else {
                    [&partner.actor, &agent.actor]
                };
                let roll = imagine(wm, &b, actors, cfg.sim_horizon, rng);
                ret += mean_imagined_return(wm, &roll) * roll.rows() as f64;
                rep.simulated_steps += roll.rows() * roll.horizon();
                views.extend(roll.views(wm, seat));
            }
            rep.k_star = Some(k);
            rep.sim_xp_return = Some(ret / starts.len().max(1) as f64);
            groups.push(build_group_with("xp", -cfg.lambda_xp, &views, k, critic, &learner.cfg, Returns::Lambda)?);
        }
        rep.stats = learner.update(agent, &groups)?;
        Ok(rep)
    }
}
