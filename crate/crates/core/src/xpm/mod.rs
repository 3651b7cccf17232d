//! Cross-play minimization on simulated trajectories: the training loop for
//! one new agent, with exact dynamics or a learned world model.

mod exact;
mod wm;

pub use exact::{proposition1_check, simulate_sp, simulate_xp, ExactSim, Prop1Report};
pub use wm::{WmLossRecord, WmSim, WmSimConfig};

use crate::env::Game;
use crate::error::TrainError;
use crate::rng::Rng;
use crate::rollout::{collect_episode, ActionMode, Pairing, Policy, ReplayBuffer};
use crate::trainer::{Agent, Learner, PgConfig, UpdateStats};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XpmSimConfig {
    pub pg: PgConfig,
    pub lambda_xp: f64,
    /// Simulation horizon.
    pub sim_horizon: usize,
    /// Inner training steps per collection round.
    pub inner_steps: usize,
    pub warmup_episodes: usize,
    /// Probability that a simulated self-play start comes from the SP store.
    pub sp_start_ratio: f64,
    /// Recent XP trajectories per partner used to pick the max-XP partner.
    pub max_xp_window: usize,
    /// Simulated self-play trajectories per inner step.
    pub sp_starts: usize,
    /// Simulated cross-play trajectories per inner step.
    pub xp_starts: usize,
    /// Live episodes per collection round, split between SP and XP when
    /// there are partners.
    pub live_sp_episodes: usize,
    pub live_xp_episodes: usize,
    /// Stop once this many real environment steps have been taken.
    pub real_step_budget: usize,
    pub buffer_capacity: usize,
    /// Stop early when the live SP return stays within `plateau_tol`
    /// (relative) over this many rounds. 0 disables the check.
    pub plateau_rounds: usize,
    pub plateau_tol: f64,
}

impl Default for XpmSimConfig {
    fn default() -> Self {
        Self {
            pg: PgConfig::default(),
            lambda_xp: 0.5,
            sim_horizon: 30,
            inner_steps: 4,
            warmup_episodes: 20,
            sp_start_ratio: 0.5,
            max_xp_window: 20,
            sp_starts: 16,
            xp_starts: 16,
            live_sp_episodes: 2,
            live_xp_episodes: 2,
            real_step_budget: 100_000,
            buffer_capacity: 200_000,
            plateau_rounds: 10,
            plateau_tol: 0.02,
        }
    }
}

impl XpmSimConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.sim_horizon == 0 || self.inner_steps == 0 {
            return Err(TrainError::Config("simulation horizon and inner steps must be at least 1".into()));
        }
        if self.lambda_xp < 0.0 {
            return Err(TrainError::Config("λ_XP must be non-negative".into()));
        }
        if self.live_sp_episodes + self.live_xp_episodes == 0 {
            return Err(TrainError::Config("no live episodes per round".into()));
        }
        Ok(())
    }
}

/// Result of one simulated update.
#[derive(Clone, Debug, Default, Serialize)]
pub struct InnerReport {
    pub k_star: Option<usize>,
    pub sim_sp_return: f64,
    pub sim_xp_return: Option<f64>,
    pub simulated_steps: usize,
    pub stats: UpdateStats,
    /// World-model loss, when a model was fine-tuned.
    pub wm_loss: Option<f64>,
}

/// Source of simulated experience and of the policies used for live play.
pub trait Simulator {
    /// The learner as it acts in the real environment.
    fn policy<'a>(&'a self, agent: &'a Agent) -> Box<dyn Policy + 'a>;

    /// A frozen partner as it acts in the real environment.
    fn partner_policy<'a>(&'a self, partner: &'a Agent) -> Box<dyn Policy + 'a> {
        self.policy(partner)
    }

    /// Lines 7–15 of the inner loop: optional model fine-tuning, simulated
    /// SP and XP, and one gradient step for the learner.
    fn inner_step(
        &mut self,
        agent: &mut Agent,
        learner: &mut Learner,
        partners: &[Agent],
        buffer: &ReplayBuffer,
        cfg: &XpmSimConfig,
        rng: &mut Rng,
    ) -> Result<InnerReport, TrainError>;
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub live_sp_return: f64,
    pub live_xp_return: Option<f64>,
    pub real_steps: usize,
    pub simulated_steps: usize,
    pub last: InnerReport,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AgentReport {
    pub agent: usize,
    pub rounds: Vec<RoundReport>,
    pub real_steps: usize,
    pub simulated_steps: usize,
    /// Whether the loop stopped on a plateau rather than on the budget.
    pub plateaued: bool,
    /// Partner drawn for each live cross-play episode.
    pub partner_draws: Vec<usize>,
}

/// Uniform draw of a live cross-play partner index.
pub fn pick_partner(n: usize, rng: &mut Rng) -> usize {
    rng.gen_range(0..n)
}

fn live_episode(
    game: &Game,
    sim: &dyn Simulator,
    agent: &Agent,
    partner: Option<(&Agent, usize)>,
    rng: &mut Rng,
) -> Result<crate::rollout::Trajectory, TrainError> {
    let mut me = sim.policy(agent);
    let t = match partner {
        None => collect_episode(game, Pairing::SelfPlay(me.as_mut()), ActionMode::Sample, rng)?,
        Some((p, seat)) => {
            let mut other = sim.partner_policy(p);
            let pairing = if seat == 0 {
                Pairing::Cross(me.as_mut(), other.as_mut())
            } else {
                Pairing::Cross(other.as_mut(), me.as_mut())
            };
            collect_episode(game, pairing, ActionMode::Sample, rng)?
        }
    };
    Ok(t)
}

/// Trains agent `m` against the frozen population `partners`: warm-up,
/// then rounds of inner simulated updates and live collection until the
/// real-step budget is spent. With no partners this is plain simulated
/// self-play.
pub fn train_agent_m(
    game: &Game,
    agent: &mut Agent,
    partners: &[Agent],
    sim: &mut dyn Simulator,
    cfg: &XpmSimConfig,
    rng: &mut Rng,
) -> Result<AgentReport, TrainError> {
    cfg.validate()?;
    if agent.frozen {
        return Err(TrainError::Frozen(agent.id));
    }
    if let Some(p) = partners.iter().find(|p| !p.frozen) {
        return Err(TrainError::Config(format!("partner {} is not frozen", p.id)));
    }
    for p in partners {
        agent.ensure_critic(p.id, rng);
    }
    let mut learner = Learner::new(cfg.pg.clone());
    let mut buffer = ReplayBuffer::new(agent.id, cfg.buffer_capacity, cfg.sp_start_ratio);
    let mut rep = AgentReport {
        agent: agent.id,
        ..AgentReport::default()
    };

    for e in 0..cfg.warmup_episodes {
        let partner = if partners.is_empty() || e % 2 == 0 {
            None
        } else {
            let k = pick_partner(partners.len(), rng);
            rep.partner_draws.push(partners[k].id);
            Some((&partners[k], (e / 2) % 2))
        };
        let t = live_episode(game, sim, agent, partner, rng)?;
        rep.real_steps += t.len();
        buffer.add(t)?;
    }

    let mut sp_history: Vec<f64> = Vec::new();
    let mut round = 0;
    while rep.real_steps < cfg.real_step_budget {
        let mut last = InnerReport::default();
        let mut sim_steps = 0;
        for _ in 0..cfg.inner_steps {
            last = sim.inner_step(agent, &mut learner, partners, &buffer, cfg, rng)?;
            sim_steps += last.simulated_steps;
        }
        let (n_sp, n_xp) = if partners.is_empty() {
            (cfg.live_sp_episodes + cfg.live_xp_episodes, 0)
        } else {
            (cfg.live_sp_episodes, cfg.live_xp_episodes)
        };
        let mut real = 0;
        let mut sp_ret = 0.0;
        for _ in 0..n_sp {
            let t = live_episode(game, sim, agent, None, rng)?;
            real += t.len();
            sp_ret += t.ret() / n_sp as f64;
            buffer.add(t)?;
        }
        let mut xp_ret = 0.0;
        for e in 0..n_xp {
            let k = pick_partner(partners.len(), rng);
            rep.partner_draws.push(partners[k].id);
            let t = live_episode(game, sim, agent, Some((&partners[k], e % 2)), rng)?;
            real += t.len();
            xp_ret += t.ret() / n_xp as f64;
            buffer.add(t)?;
        }
        rep.real_steps += real;
        rep.simulated_steps += sim_steps;
        log::debug!(
            "agent {} round {round}: sp {sp_ret:.2} xp {xp_ret:.2} real {}",
            agent.id,
            rep.real_steps
        );
        rep.rounds.push(RoundReport {
            round,
            live_sp_return: sp_ret,
            live_xp_return: (n_xp > 0).then_some(xp_ret),
            real_steps: real,
            simulated_steps: sim_steps,
            last,
        });
        round += 1;
        sp_history.push(sp_ret);
        if plateau(&sp_history, cfg.plateau_rounds, cfg.plateau_tol) {
            rep.plateaued = true;
            break;
        }
    }
    Ok(rep)
}

/// True when the last `n` values all lie within `tol` (relative to their
/// mean magnitude) of each other.
pub fn plateau(history: &[f64], n: usize, tol: f64) -> bool {
    if n == 0 || history.len() < n {
        return false;
    }
    let w = &history[history.len() - n..];
    let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = w.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    hi - lo <= tol * scale.max(1e-9)
}
