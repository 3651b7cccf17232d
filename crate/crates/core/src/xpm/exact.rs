use super::{InnerReport, Simulator, XpmSimConfig};
use crate::env::{Game, GameState};
use crate::error::TrainError;
use crate::rng::{self, Rng};
use crate::rollout::{
    collect_mixed_play, simulate, ActionMode, Pairing, Partition, Policy, ReplayBuffer, Trajectory,
};
use crate::trainer::{build_group, ActorPolicy, Agent, Learner, View};
use serde::Serialize;

/// Self-play of `agent` through the true dynamics from each start.
pub fn simulate_sp(
    game: &Game,
    agent: &Agent,
    starts: &[GameState],
    horizon: usize,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>, TrainError> {
    starts
        .iter()
        .map(|s| {
            let t = simulate(game, s.clone(), Pairing::SelfPlay(&mut ActorPolicy(agent)), horizon, ActionMode::Sample, rng)?;
            Ok(t)
        })
        .collect()
}

/// Cross-play of `agent` with a frozen `partner` from each `(state, seat)`,
/// the learner keeping the seat it held when the state was recorded.
pub fn simulate_xp(
    game: &Game,
    agent: &Agent,
    partner: &Agent,
    starts: &[(GameState, usize)],
    horizon: usize,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>, TrainError> {
    starts
        .iter()
        .map(|(s, seat)| {
            let (mut me, mut other) = (ActorPolicy(agent), ActorPolicy(partner));
            let pairing = if *seat == 0 {
                Pairing::Cross(&mut me, &mut other)
            } else {
                Pairing::Cross(&mut other, &mut me)
            };
            Ok(simulate(game, s.clone(), pairing, horizon, ActionMode::Sample, rng)?)
        })
        .collect()
}

/// Exact environment dynamics used as the simulator.
pub struct ExactSim {
    pub game: Game,
}

impl Simulator for ExactSim {
    fn policy<'a>(&'a self, agent: &'a Agent) -> Box<dyn Policy + 'a> {
        Box::new(ActorPolicy(agent))
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
        let game = &self.game;
        let starts: Vec<GameState> = buffer
            .sample_states(Partition::Both, cfg.sp_starts, rng)?
            .iter()
            .map(|r| r.state().clone())
            .collect();
        let sp = simulate_sp(game, agent, &starts, cfg.sim_horizon, rng)?;
        let mut rep = InnerReport {
            sim_sp_return: mean_ret(&sp),
            simulated_steps: sp.iter().map(|t| t.len()).sum(),
            ..InnerReport::default()
        };
        let views: Vec<View> = sp
            .iter()
            .flat_map(|t| [View::of(game, t, 0), View::of(game, t, 1)])
            .collect();
        let own = agent.critics.get(&agent.id).ok_or(TrainError::Config("missing SP critic".into()))?;
        let mut groups = vec![build_group("sp", 1.0, &views, agent.id, own, &learner.cfg)?];

        if !partners.is_empty() && !buffer.xp_partners().is_empty() {
            let k = buffer.max_xp_partner(cfg.max_xp_window)?;
            let partner = partners
                .iter()
                .find(|p| p.id == k)
                .ok_or_else(|| TrainError::Config(format!("buffer partner {k} is not in the population")))?;
            let xs: Vec<(GameState, usize)> = buffer
                .sample_xp_states(k, cfg.xp_starts, rng)?
                .iter()
                .map(|r| (r.state().clone(), r.seat_of(agent.id)))
                .collect();
            let xp = simulate_xp(game, agent, partner, &xs, cfg.sim_horizon, rng)?;
            rep.k_star = Some(k);
            rep.sim_xp_return = Some(mean_ret(&xp));
            rep.simulated_steps += xp.iter().map(|t| t.len()).sum::<usize>();
            let views: Vec<View> = xp
                .iter()
                .zip(&xs)
                .map(|(t, (_, seat))| View::of(game, t, *seat))
                .collect();
            let critic = agent
                .critics
                .get(&k)
                .ok_or_else(|| TrainError::Config(format!("missing critic for partner {k}")))?;
            groups.push(build_group("xp", -cfg.lambda_xp, &views, k, critic, &learner.cfg)?);
        }
        rep.stats = learner.update(agent, &groups)?;
        Ok(rep)
    }
}

fn mean_ret(ts: &[Trajectory]) -> f64 {
    if ts.is_empty() {
        return 0.0;
    }
    ts.iter().map(|t| t.ret()).sum::<f64>() / ts.len() as f64
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Prop1Report {
    pub trials: usize,
    /// Trials where every state, action and reward matched exactly.
    pub exact_matches: usize,
    /// Largest state difference over all trials (infinite on a length
    /// mismatch).
    pub max_discrepancy: f64,
}

fn state_distance(a: &GameState, b: &GameState) -> f64 {
    match (a, b) {
        (GameState::Mppmr(x), GameState::Mppmr(y)) => x
            .pos
            .iter()
            .chain(&x.vel)
            .flatten()
            .zip(y.pos.iter().chain(&y.vel).flatten())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max),
        _ => {
            if a == b {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Compares mixed-play suffixes against self-play simulated from the same
/// switch state with the same random stream.
pub fn proposition1_check(
    game: &Game,
    me: &Agent,
    partner: &Agent,
    trials: usize,
    mode: ActionMode,
    rng: &mut Rng,
) -> Result<Prop1Report, TrainError> {
    let mut rep = Prop1Report {
        trials,
        ..Prop1Report::default()
    };
    for i in 0..trials {
        let mp = collect_mixed_play(game, &mut ActorPolicy(me), &mut ActorPolicy(partner), i % 2, mode, rng)?;
        let start = mp.steps.first().map_or(&mp.final_state, |s| &s.state).clone();
        let t_star = mp.switch_time.expect("mixed play records its switch time");
        let mut child = rng::from_u64(mp.suffix_seed.expect("mixed play records its seed"));
        let sim = simulate(
            game,
            start,
            Pairing::SelfPlay(&mut ActorPolicy(me)),
            game.horizon() - t_star,
            mode,
            &mut child,
        )?;
        let d = if sim.len() != mp.len() {
            f64::INFINITY
        } else {
            mp.steps
                .iter()
                .zip(&sim.steps)
                .map(|(a, b)| state_distance(&a.state, &b.state))
                .fold(state_distance(&mp.final_state, &sim.final_state), f64::max)
        };
        rep.max_discrepancy = rep.max_discrepancy.max(d);
        if mp.steps == sim.steps && mp.final_state == sim.final_state {
            rep.exact_matches += 1;
        }
    }
    Ok(rep)
}
