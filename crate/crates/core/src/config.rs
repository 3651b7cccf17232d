//! Run configuration: a profile supplies every hyperparameter, a TOML file
//! may override any subset of them.

use crate::env::{Game, Kitchen, Mppmr};
use crate::error::TrainError;
use crate::nn::Activation;
use crate::trainer::{Method, ModelFreeConfig, NetShape, PgConfig, XpmWeights};
use crate::world_model::{LatentLayout, WmLossConfig, WmShape};
use crate::xpm::{WmSimConfig, XpmSimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Budgets small enough to run on one core.
    Desk,
    /// Published hyperparameters.
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Profile::Desk),
            "paper" => Some(Profile::Paper),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// `mppmr` or `minikitchen:<layout>`.
    pub env: String,
    pub method: Method,
    pub agents: usize,
    pub seed: u64,
    pub profile: Profile,
    pub mppmr: Mppmr,
    pub kitchen_horizon: usize,
    pub actor: NetShape,
    pub critic: NetShape,
    /// LIPO and CoMeDi.
    pub modelfree: ModelFreeConfig,
    /// XPM-Sim and XPM-WM agent training.
    pub xpm: XpmSimConfig,
    /// World model (XPM-WM only).
    pub wm: WmSimConfig,
}

fn kitchen_layout(env: &str) -> Option<&str> {
    env.strip_prefix("minikitchen:")
}

impl RunConfig {
    pub fn new(profile: Profile, env: &str, method: Method, agents: usize, seed: u64) -> Self {
        let mut c = match profile {
            Profile::Desk => Self::desk(env, method),
            Profile::Paper => Self::paper(env, method),
        };
        c.env = env.to_string();
        c.agents = agents;
        c.seed = seed;
        c
    }

    fn base(profile: Profile, method: Method) -> Self {
        Self {
            env: "mppmr".into(),
            method,
            agents: 1,
            seed: 0,
            profile,
            mppmr: Mppmr::default(),
            kitchen_horizon: 100,
            actor: NetShape::default(),
            critic: NetShape::default(),
            modelfree: ModelFreeConfig::default(),
            xpm: XpmSimConfig::default(),
            wm: WmSimConfig::default(),
        }
    }

    fn weights(method: Method) -> (XpmWeights, f64) {
        match method {
            Method::Lipo => (XpmWeights { lambda_xp: 0.25, lambda_mp: 0.0 }, 0.5),
            _ => (XpmWeights { lambda_xp: 0.5, lambda_mp: 0.25 }, 0.5),
        }
    }

    fn desk(env: &str, method: Method) -> Self {
        let mut c = Self::base(Profile::Desk, method);
        let (w, lxp) = Self::weights(method);
        c.modelfree.weights = w;
        c.xpm.lambda_xp = lxp;
        c.modelfree.pg.ent_coef = 1e-3;
        c.xpm.pg.ent_coef = 1e-3;
        c.modelfree.sp_episodes = 2;
        c.modelfree.xp_episodes = 2;
        c.modelfree.mp_episodes = 2;
        if kitchen_layout(env).is_none() {
            c.modelfree.iterations = 800;
            c.xpm.real_step_budget = 30_000;
        } else {
            c.modelfree.iterations = 150;
            c.xpm.real_step_budget = 10_000;
            c.xpm.sim_horizon = 15;
            if method == Method::XpmWm {
                c.xpm.lambda_xp = 0.25;
                c.xpm.pg.actor_lr = 1e-4;
                c.xpm.pg.ent_coef = 3e-3;
            }
            c.wm.loss.free_nats = 0.1;
            c.wm.pretrain_updates = 1000;
        }
        c
    }

    fn paper(env: &str, method: Method) -> Self {
        let mut c = Self::base(Profile::Paper, method);
        let (w, lxp) = Self::weights(method);
        c.modelfree.weights = w;
        c.xpm.lambda_xp = lxp;
        let big = NetShape {
            hidden: vec![512; 4],
            activation: Activation::LeakyRelu,
        };
        c.actor = big.clone();
        c.critic = big;
        let sp_steps_per_iter = |c: &Self, h: usize| (c.modelfree.sp_episodes * h).max(1);
        match kitchen_layout(env) {
            None => {
                c.modelfree.pg = PgConfig {
                    actor_lr: 5e-4,
                    critic_lr: 5e-4,
                    ent_coef: 1e-4,
                    ..PgConfig::default()
                };
                c.xpm.pg = c.modelfree.pg.clone();
                c.modelfree.iterations = 800_000 / sp_steps_per_iter(&c, c.mppmr.horizon);
                c.xpm.real_step_budget = 800_000;
                c.xpm.sim_horizon = 30;
                c.xpm.buffer_capacity = 200_000;
            }
            Some(layout) => {
                c.kitchen_horizon = 400;
                // Layout-indexed values follow the order cramped room,
                // asymmetric advantages, coordination ring, forced
                // coordination, counter circuit.
                let (lr, ent, phase1, phase2) = match layout {
                    "coordination_ring" => (8e-4, 5e-3, 60_000_000, 3_000_000),
                    _ => (6e-4, 3e-3, 20_000_000, 2_000_000),
                };
                c.modelfree.pg = PgConfig {
                    actor_lr: lr,
                    critic_lr: lr,
                    ent_coef: ent,
                    ..PgConfig::default()
                };
                c.modelfree.iterations = 6_000_000 / sp_steps_per_iter(&c, c.kitchen_horizon);
                c.xpm.pg = PgConfig {
                    actor_lr: 4e-5,
                    critic_lr: 1e-4,
                    ent_coef: 0.03,
                    ..PgConfig::default()
                };
                c.xpm.lambda_xp = 0.25;
                c.xpm.sim_horizon = 15;
                c.xpm.buffer_capacity = 1_000_000;
                c.xpm.real_step_budget = phase2;
                c.wm = WmSimConfig {
                    shape: WmShape {
                        layout: LatentLayout { n: 36, k: 28, classes: 32 },
                        deter: 512,
                        hidden: 512,
                        layers: 3,
                        head_layers: 4,
                        ..WmShape::default()
                    },
                    loss: WmLossConfig::default(),
                    lr: 2e-4,
                    seq_len: 64,
                    ..WmSimConfig::default()
                };
                let episodes = phase1 / c.kitchen_horizon;
                c.wm.scripted_episodes = episodes * 4 / 5;
                c.wm.random_episodes = episodes - c.wm.scripted_episodes;
                c.wm.pretrain_updates = phase1 / (c.wm.batch_rows * c.wm.seq_len);
            }
        }
        c
    }

    /// Replaces every key present in `toml_text`, at any depth.
    pub fn with_overrides(self, toml_text: &str) -> Result<Self, TrainError> {
        let over: toml::Value = toml::from_str(toml_text).map_err(|e| TrainError::Config(format!("config file: {e}")))?;
        let mut base = serde_json::to_value(&self).map_err(|e| TrainError::Config(e.to_string()))?;
        let over = serde_json::to_value(over).map_err(|e| TrainError::Config(e.to_string()))?;
        merge(&mut base, over);
        serde_json::from_value(base).map_err(|e| TrainError::Config(format!("config file: {e}")))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.agents == 0 {
            return Err(TrainError::Config("M must be ≥ 1".into()));
        }
        let kitchen = kitchen_layout(&self.env).is_some();
        if !kitchen && self.env != "mppmr" {
            return Err(TrainError::Config(format!("unknown environment {:?}", self.env)));
        }
        if self.method == Method::XpmWm && !kitchen {
            return Err(TrainError::Config("xpm-wm requires a minikitchen environment".into()));
        }
        self.modelfree.weights.validate()?;
        self.xpm.validate()?;
        self.wm.loss.validate()?;
        self.wm.shape.layout.validate()?;
        Ok(())
    }

    pub fn game(&self) -> Result<Game, TrainError> {
        Ok(match kitchen_layout(&self.env) {
            Some(l) => Game::Kitchen(Kitchen::builtin(l, self.kitchen_horizon)?),
            None => Game::Mppmr(self.mppmr.clone()),
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(v))
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
