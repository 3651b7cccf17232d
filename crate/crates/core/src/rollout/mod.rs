//! Episode collection (self-play, cross-play, mixed-play, simulation) and
//! the replay stores built from it.

mod buffer;

pub use buffer::{Partition, ReplayBuffer, StateRef, BUFFER_VERSION};

use crate::env::{Game, GameState};
use crate::error::RolloutError;
use crate::rng::{self, Rng};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Retries for mixed play when every drawn switch time lands after the
/// cross-play prefix has already ended.
pub const MP_MAX_ATTEMPTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajKind {
    Sp,
    Xp,
    Mp,
    Simulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Something that maps joint observations to per-seat action logits.
pub trait Policy {
    fn id(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// Clears recurrent state at the start of a rollout.
    fn reset(&mut self) {}

    /// Consumes the newest joint observation and the previous joint action
    /// and returns action logits for both seats.
    fn logits(&mut self, obs: &[Vec<f32>; 2], prev: Option<[usize; 2]>, rng: &mut Rng) -> [Vec<f32>; 2];
}

/// Who plays which seat.
pub enum Pairing<'a> {
    /// One policy controls both seats.
    SelfPlay(&'a mut dyn Policy),
    /// `(seat 0, seat 1)`.
    Cross(&'a mut dyn Policy, &'a mut dyn Policy),
}

impl Pairing<'_> {
    fn ids(&self) -> [usize; 2] {
        match self {
            Pairing::SelfPlay(p) => [p.id(); 2],
            Pairing::Cross(a, b) => [a.id(), b.id()],
        }
    }

    fn obs_dims(&self) -> Vec<usize> {
        match self {
            Pairing::SelfPlay(p) => vec![p.obs_dim()],
            Pairing::Cross(a, b) => vec![a.obs_dim(), b.obs_dim()],
        }
    }

    fn reset(&mut self) {
        match self {
            Pairing::SelfPlay(p) => p.reset(),
            Pairing::Cross(a, b) => {
                a.reset();
                b.reset();
            }
        }
    }

    fn logits(&mut self, obs: &[Vec<f32>; 2], prev: Option<[usize; 2]>, rng: &mut Rng) -> [Vec<f32>; 2] {
        match self {
            Pairing::SelfPlay(p) => p.logits(obs, prev, rng),
            Pairing::Cross(a, b) => {
                let [la, _] = a.logits(obs, prev, rng);
                let [_, lb] = b.logits(obs, prev, rng);
                [la, lb]
            }
        }
    }
}

/// Index drawn from `softmax(logits)` by inverse CDF, one uniform per call.
pub fn sample_action(logits: &[f32], rng: &mut Rng) -> usize {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let w: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

pub fn greedy_action(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// State before the joint action.
    pub state: GameState,
    pub obs: [Vec<f32>; 2],
    pub actions: [usize; 2],
    pub reward: f64,
    pub events: Vec<u8>,
    /// 0 on the step that ends the episode, 1 otherwise.
    pub cont: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajKind,
    /// Agent id in each seat.
    pub seats: [usize; 2],
    pub steps: Vec<Step>,
    pub final_state: GameState,
    pub final_obs: [Vec<f32>; 2],
    /// Switch time of a mixed-play suffix.
    pub switch_time: Option<usize>,
    /// Seed of the random stream that drove a mixed-play suffix.
    pub suffix_seed: Option<u64>,
    /// Real environment steps spent on cross-play prefixes (including
    /// discarded attempts) before this trajectory started.
    #[serde(default)]
    pub prefix_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn ret(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Whether the episode ended before the horizon.
    pub fn early_termination(&self, horizon: usize) -> bool {
        self.final_state.terminated() && self.final_state.t() < horizon
    }

    /// Seats occupied by `agent`.
    pub fn seats_of(&self, agent: usize) -> Vec<usize> {
        (0..2).filter(|&s| self.seats[s] == agent).collect()
    }

    /// The other agent when `agent` plays with a distinct partner.
    pub fn partner_of(&self, agent: usize) -> Option<usize> {
        match self.seats {
            [a, b] if a == agent && b != agent => Some(b),
            [a, b] if b == agent && a != agent => Some(a),
            _ => None,
        }
    }

    /// Every state in order, including the final one.
    pub fn states(&self) -> impl Iterator<Item = &GameState> {
        self.steps.iter().map(|s| &s.state).chain(std::iter::once(&self.final_state))
    }
}

/// Rolls `pairing` forward from `start` for at most `max_steps` steps or
/// until the episode ends.
pub fn run_from(
    game: &Game,
    start: GameState,
    mut pairing: Pairing<'_>,
    max_steps: usize,
    kind: TrajKind,
    mode: ActionMode,
    rng: &mut Rng,
) -> Result<Trajectory, RolloutError> {
    let want = game.obs_dim();
    for d in pairing.obs_dims() {
        if d != want {
            return Err(RolloutError::ObservationWidth { expected: d, got: want });
        }
    }
    let seats = pairing.ids();
    pairing.reset();
    let mut state = start;
    let mut obs = game.observe(&state);
    let mut steps = Vec::with_capacity(max_steps.min(game.horizon()));
    let mut prev = None;
    while steps.len() < max_steps && !state.terminated() {
        let logits = pairing.logits(&obs, prev, rng);
        let actions = match mode {
            ActionMode::Sample => [sample_action(&logits[0], rng), sample_action(&logits[1], rng)],
            ActionMode::Greedy => [greedy_action(&logits[0]), greedy_action(&logits[1])],
        };
        let tr = game.step(&state, actions)?;
        let next_obs = game.observe(&tr.state);
        steps.push(Step {
            state,
            obs,
            actions,
            reward: tr.reward,
            events: tr.events,
            cont: !tr.terminated,
        });
        state = tr.state;
        obs = next_obs;
        prev = Some(actions);
    }
    Ok(Trajectory {
        kind,
        seats,
        steps,
        final_state: state,
        final_obs: obs,
        switch_time: None,
        suffix_seed: None,
        prefix_steps: 0,
    })
}

/// A full episode from the reset state. The kind is SP when both seats hold
/// the same agent and XP otherwise.
pub fn collect_episode(game: &Game, pairing: Pairing<'_>, mode: ActionMode, rng: &mut Rng) -> Result<Trajectory, RolloutError> {
    let ids = pairing.ids();
    let kind = if ids[0] == ids[1] { TrajKind::Sp } else { TrajKind::Xp };
    run_from(game, game.reset(), pairing, game.horizon(), kind, mode, rng)
}

/// Rolls the model `game` forward from an arbitrary state for `horizon`
/// steps; the result is tagged as simulated.
pub fn simulate(
    game: &Game,
    start: GameState,
    pairing: Pairing<'_>,
    horizon: usize,
    mode: ActionMode,
    rng: &mut Rng,
) -> Result<Trajectory, RolloutError> {
    run_from(game, start, pairing, horizon, TrajKind::Simulated, mode, rng)
}

/// Cross-play prefix with `me` in `self_seat`, switching at a random time
/// `t* ∈ {1, .., H−1}` to self-play of `me`. Only the suffix is returned.
///
/// When the prefix ends at step `τ ≤ t*`, `t*` is redrawn from
/// `{1, .., τ−1}` on the recorded prefix; a prefix that ends after its first
/// step is discarded and a fresh episode is started.
pub fn collect_mixed_play(
    game: &Game,
    me: &mut dyn Policy,
    partner: &mut dyn Policy,
    self_seat: usize,
    mode: ActionMode,
    rng: &mut Rng,
) -> Result<Trajectory, RolloutError> {
    if me.id() == partner.id() {
        return Err(RolloutError::SamePolicy);
    }
    let h = game.horizon();
    if h < 2 {
        return Err(RolloutError::NoSwitchTime(0));
    }
    let mut spent = 0;
    for _ in 0..MP_MAX_ATTEMPTS {
        let mut t_star = rng.gen_range(1..h);
        let pairing = if self_seat == 0 {
            Pairing::Cross(&mut *me, &mut *partner)
        } else {
            Pairing::Cross(&mut *partner, &mut *me)
        };
        let prefix = run_from(game, game.reset(), pairing, t_star, TrajKind::Xp, mode, rng)?;
        spent += prefix.len();
        let start = if prefix.final_state.terminated() {
            let tau = prefix.len();
            if tau < 2 {
                continue;
            }
            t_star = rng.gen_range(1..tau);
            prefix.steps[t_star].state.clone()
        } else {
            prefix.final_state
        };
        let seed: u64 = rng.gen();
        let mut child = rng::from_u64(seed);
        let mut traj = run_from(game, start, Pairing::SelfPlay(&mut *me), h - t_star, TrajKind::Mp, mode, &mut child)?;
        traj.switch_time = Some(t_star);
        traj.suffix_seed = Some(seed);
        traj.prefix_steps = spent;
        return Ok(traj);
    }
    Err(RolloutError::NoSwitchTime(MP_MAX_ATTEMPTS))
}

/// Scripted kitchen chefs for both seats. The policy replays the joint
/// actions it is told about to track the true state, so it is only valid
/// for rollouts from the reset state.
pub struct ScriptedPolicy {
    pub id: usize,
    pub kitchen: crate::env::Kitchen,
    /// Probability of a uniformly random action instead of the scripted one.
    pub eps: f64,
    state: crate::env::KitchenState,
}

impl ScriptedPolicy {
    pub fn new(id: usize, kitchen: crate::env::Kitchen, eps: f64) -> Self {
        let state = kitchen.reset();
        Self { id, kitchen, eps, state }
    }
}

impl Policy for ScriptedPolicy {
    fn id(&self) -> usize {
        self.id
    }

    fn obs_dim(&self) -> usize {
        self.kitchen.obs_dim()
    }

    fn reset(&mut self) {
        self.state = self.kitchen.reset();
    }

    fn logits(&mut self, _obs: &[Vec<f32>; 2], prev: Option<[usize; 2]>, rng: &mut Rng) -> [Vec<f32>; 2] {
        if let Some(a) = prev {
            if let Ok((s, ..)) = self.kitchen.step(&self.state, a) {
                self.state = s;
            }
        }
        let n = crate::env::kitchen::N_ACTIONS;
        [0, 1].map(|p| {
            let a = crate::env::kitchen::planner::scripted_action(&self.kitchen, &self.state, p, self.eps, rng);
            let mut l = vec![-1e4f32; n];
            l[a] = 0.0;
            l
        })
    }
}
