//! Two-player cooperative environments.
//!
//! [`Game`] dispatches over the concrete environments so that trajectories,
//! buffers and archives do not need to be generic.

pub mod kitchen;
pub mod mppmr;
pub mod render;

use crate::error::EnvError;
use serde::{Deserialize, Serialize};

pub use kitchen::{Kitchen, KitchenLayout, KitchenState};
pub use mppmr::{Mppmr, MppmrState};

/// Per-event reward weights for one player:
/// `[pickup_ingredient, pickup_bowl, put_in_pot, pickup_soup, deliver_soup]`.
pub const EVENT_WEIGHTS: [f64; 5] = [1.0, 1.0, 1.0, 3.0, 12.0];
pub const EVENTS_PER_PLAYER: usize = EVENT_WEIGHTS.len();

/// Linear event reward: the dot product of `e` with the per-player weights
/// tiled across both players.
pub fn event_reward_to_scalar(e: &[u8]) -> Result<f64, EnvError> {
    let expected = 2 * EVENTS_PER_PLAYER;
    if e.len() != expected {
        return Err(EnvError::EventLength {
            got: e.len(),
            expected,
        });
    }
    Ok(e.iter()
        .enumerate()
        .map(|(i, &v)| v as f64 * EVENT_WEIGHTS[i % EVENTS_PER_PLAYER])
        .sum())
}

/// Same weighting applied to (possibly fractional) event probabilities.
pub fn expected_event_reward(p: &[f32]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, &v)| v as f64 * EVENT_WEIGHTS[i % EVENTS_PER_PLAYER])
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum Game {
    Mppmr(Mppmr),
    Kitchen(Kitchen),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameState {
    Mppmr(MppmrState),
    Kitchen(KitchenState),
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: GameState,
    pub reward: f64,
    /// Empty for environments without an event system.
    pub events: Vec<u8>,
    pub terminated: bool,
}

impl GameState {
    pub fn t(&self) -> usize {
        match self {
            GameState::Mppmr(s) => s.t,
            GameState::Kitchen(s) => s.t,
        }
    }

    pub fn terminated(&self) -> bool {
        match self {
            GameState::Mppmr(s) => s.terminated,
            GameState::Kitchen(s) => s.terminated,
        }
    }

    pub fn as_mppmr(&self) -> Option<&MppmrState> {
        match self {
            GameState::Mppmr(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_kitchen(&self) -> Option<&KitchenState> {
        match self {
            GameState::Kitchen(s) => Some(s),
            _ => None,
        }
    }
}

impl Game {
    pub fn name(&self) -> String {
        match self {
            Game::Mppmr(_) => "mppmr".into(),
            Game::Kitchen(k) => format!("minikitchen:{}", k.layout.name),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Game::Mppmr(m) => m.horizon,
            Game::Kitchen(k) => k.horizon,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Game::Mppmr(_) => mppmr::N_ACTIONS,
            Game::Kitchen(_) => kitchen::N_ACTIONS,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Game::Mppmr(_) => mppmr::OBS_DIM,
            Game::Kitchen(k) => k.obs_dim(),
        }
    }

    /// Width of the full-state features fed to centralized critics.
    pub fn state_dim(&self) -> usize {
        match self {
            Game::Mppmr(_) => mppmr::STATE_DIM,
            Game::Kitchen(k) => k.obs_dim(),
        }
    }

    /// Length of the event vector, 0 when rewards are plain scalars.
    pub fn n_events(&self) -> usize {
        match self {
            Game::Mppmr(_) => 0,
            Game::Kitchen(_) => 2 * EVENTS_PER_PLAYER,
        }
    }

    /// Whether episodes can end before the horizon.
    pub fn has_early_termination(&self) -> bool {
        matches!(self, Game::Mppmr(_))
    }

    pub fn reset(&self) -> GameState {
        match self {
            Game::Mppmr(m) => GameState::Mppmr(m.reset()),
            Game::Kitchen(k) => GameState::Kitchen(k.reset()),
        }
    }

    pub fn step(&self, s: &GameState, a: [usize; 2]) -> Result<Transition, EnvError> {
        match (self, s) {
            (Game::Mppmr(m), GameState::Mppmr(s)) => {
                let (state, reward, terminated) = m.step(s, a)?;
                Ok(Transition {
                    state: GameState::Mppmr(state),
                    reward,
                    events: Vec::new(),
                    terminated,
                })
            }
            (Game::Kitchen(k), GameState::Kitchen(s)) => {
                let (state, events, reward, terminated) = k.step(s, a)?;
                Ok(Transition {
                    state: GameState::Kitchen(state),
                    reward,
                    events,
                    terminated,
                })
            }
            _ => Err(EnvError::Unsupported("a state from the same environment".into())),
        }
    }

    pub fn observe(&self, s: &GameState) -> [Vec<f32>; 2] {
        match (self, s) {
            (Game::Mppmr(m), GameState::Mppmr(s)) => m.observe(s),
            (Game::Kitchen(k), GameState::Kitchen(s)) => k.observe(s),
            _ => panic!("state does not belong to {}", self.name()),
        }
    }

    pub fn state_features(&self, s: &GameState) -> Vec<f32> {
        match (self, s) {
            (Game::Mppmr(m), GameState::Mppmr(s)) => m.state_features(s),
            (Game::Kitchen(k), GameState::Kitchen(s)) => {
                let [o, _] = k.observe(s);
                o
            }
            _ => panic!("state does not belong to {}", self.name()),
        }
    }

    pub fn as_mppmr(&self) -> Option<&Mppmr> {
        match self {
            Game::Mppmr(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_kitchen(&self) -> Option<&Kitchen> {
        match self {
            Game::Kitchen(k) => Some(k),
            _ => None,
        }
    }
}
