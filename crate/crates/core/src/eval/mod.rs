//! Population evaluation: SP/XP matrices, self-sabotage, MPPMR conventions,
//! report files and archives.

mod archive;
mod report;

pub use archive::{load_population, save_population, ARCHIVE_VERSION};
pub use report::{conventions_csv, matrix_csv, matrix_long_csv, matrix_svg, sabotage_csv, scaling_svg};

use crate::env::Game;
use crate::error::EnvError;
use crate::error::TrainError;
use crate::rng;
use crate::rollout::{collect_episode, ActionMode, Pairing, Policy, Trajectory};
use crate::trainer::{ActorPolicy, Agent, Method};
use crate::world_model::{WmPolicy, WorldModel};
use serde::Serialize;
use std::collections::BTreeMap;

/// Default episodes per ordered pair.
pub const EVAL_EPISODES: usize = 40;

/// Trained agents in training order.
#[derive(Clone, Debug)]
pub struct Population {
    pub method: Method,
    pub game: Game,
    /// Configuration the population was trained with.
    pub config: serde_json::Value,
    pub agents: Vec<Agent>,
    /// World model each agent acts through, keyed by agent id.
    pub wm_snapshots: BTreeMap<usize, WorldModel>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (i, a) in self.agents.iter().enumerate() {
            if a.id != i {
                return Err(TrainError::Config(format!("agent at position {i} has id {}", a.id)));
            }
            if !a.frozen {
                return Err(TrainError::Config(format!("agent {i} is not frozen")));
            }
        }
        Ok(())
    }

    /// The agent as it acts in the environment.
    pub fn policy(&self, i: usize) -> Box<dyn Policy + '_> {
        let a = &self.agents[i];
        match self.wm_snapshots.get(&a.id) {
            Some(wm) => Box::new(WmPolicy::new(wm, a)),
            None => Box::new(ActorPolicy(a)),
        }
    }

    /// Checksums of every agent and snapshot.
    pub fn checksum(&self) -> String {
        let mut parts: Vec<String> = self.agents.iter().map(|a| a.checksum()).collect();
        for (k, wm) in &self.wm_snapshots {
            parts.push(format!("wm{k}:{}", crate::nn::param_checksum(wm)));
        }
        parts.join("/")
    }
}

/// Mean with its standard error over `n` samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sem = if n > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, sem, n }
    }
}

/// Episode `e` with agent `a` in seat 0 and `b` in seat 1 (self-play when
/// `a == b`), on its own random stream.
pub fn pair_episode(pop: &Population, a: usize, b: usize, e: usize, seed: u64) -> Result<Trajectory, TrainError> {
    let mut r = rng::stream(seed, "eval", &[a as u64, b as u64, e as u64]);
    let mut pa = pop.policy(a);
    let t = if a == b {
        collect_episode(&pop.game, Pairing::SelfPlay(pa.as_mut()), ActionMode::Sample, &mut r)?
    } else {
        let mut pb = pop.policy(b);
        collect_episode(&pop.game, Pairing::Cross(pa.as_mut(), pb.as_mut()), ActionMode::Sample, &mut r)?
    };
    Ok(t)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub episodes_per_pair: usize,
    pub sp: Vec<Stat>,
    /// Symmetric; `xp[i][j]` pools both seat orders, `xp[i][i] = sp[i]`.
    pub xp: Vec<Vec<Stat>>,
}

impl EvalReport {
    pub fn mean_sp(&self) -> f64 {
        self.sp.iter().map(|s| s.mean).sum::<f64>() / self.sp.len().max(1) as f64
    }

    /// Mean over off-diagonal cells; `None` for a single agent.
    pub fn mean_xp(&self) -> Option<f64> {
        let m = self.xp.len();
        let cells: Vec<f64> = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.xp[i][j].mean)
            .collect();
        (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
    }
}

/// SP return of every agent and XP return of every pair, each seat order
/// played `episodes` times.
pub fn crossplay_matrix(pop: &Population, episodes: usize, seed: u64) -> Result<EvalReport, TrainError> {
    if episodes == 0 {
        return Err(TrainError::Config("at least one episode per pair".into()));
    }
    let m = pop.len();
    let mut xp = vec![vec![Stat::default(); m]; m];
    for i in 0..m {
        let r: Vec<f64> = (0..episodes)
            .map(|e| pair_episode(pop, i, i, e, seed).map(|t| t.ret()))
            .collect::<Result<_, _>>()?;
        xp[i][i] = Stat::of(&r);
        for j in i + 1..m {
            let mut r = Vec::with_capacity(2 * episodes);
            for e in 0..episodes {
                r.push(pair_episode(pop, i, j, e, seed)?.ret());
                r.push(pair_episode(pop, j, i, e, seed)?.ret());
            }
            xp[i][j] = Stat::of(&r);
            xp[j][i] = xp[i][j];
        }
    }
    Ok(EvalReport {
        episodes_per_pair: episodes,
        sp: (0..m).map(|i| xp[i][i]).collect(),
        xp,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SabotageReport {
    pub episodes_per_pair: usize,
    /// Early-termination fraction of each agent against its predecessors;
    /// `None` for the first agent.
    pub per_agent: Vec<Option<Stat>>,
    /// Mean over agents with predecessors.
    pub average: Option<f64>,
}

/// Fraction of cross-play episodes against preceding agents that end
/// before the horizon, both seat orders `episodes` times each.
pub fn self_sabotage_fraction(pop: &Population, episodes: usize, seed: u64) -> Result<SabotageReport, TrainError> {
    if !pop.game.has_early_termination() {
        return Err(EnvError::Unsupported("an environment with early termination".into()).into());
    }
    if episodes == 0 {
        return Err(TrainError::Config("at least one episode per pair".into()));
    }
    let h = pop.game.horizon();
    let mut per_agent = vec![None];
    for j in 1..pop.len() {
        let mut flags = Vec::with_capacity(2 * episodes * j);
        for k in 0..j {
            for e in 0..episodes {
                for (a, b) in [(j, k), (k, j)] {
                    let t = pair_episode(pop, a, b, e, seed)?;
                    flags.push(t.early_termination(h) as u8 as f64);
                }
            }
        }
        per_agent.push(Some(Stat::of(&flags)));
    }
    let vals: Vec<f64> = per_agent.iter().flatten().map(|s| s.mean).collect();
    Ok(SabotageReport {
        episodes_per_pair: episodes,
        per_agent: if pop.is_empty() { Vec::new() } else { per_agent },
        average: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConventionReport {
    pub episodes: usize,
    /// Per agent, SP episodes ending nearest each landmark.
    pub histograms: Vec<Vec<usize>>,
    /// Most frequent landmark per agent (lowest index on ties).
    pub majority: Vec<usize>,
    /// Distinct majority landmarks.
    pub coverage: usize,
}

/// Landmark nearest the final player centroid of each SP episode.
pub fn convention_label(pop: &Population, episodes: usize, seed: u64) -> Result<ConventionReport, TrainError> {
    let mp = pop
        .game
        .as_mppmr()
        .ok_or_else(|| EnvError::Unsupported("the point-mass environment".into()))?;
    let n = mp.landmarks.len();
    let mut histograms = Vec::with_capacity(pop.len());
    for i in 0..pop.len() {
        let mut h = vec![0; n];
        for e in 0..episodes {
            let t = pair_episode(pop, i, i, e, seed)?;
            let s = t.final_state.as_mppmr().expect("point-mass state");
            h[mp.nearest_landmark(s.centroid())] += 1;
        }
        histograms.push(h);
    }
    let majority: Vec<usize> = histograms
        .iter()
        .map(|h| (0..n).fold(0, |b, i| if h[i] > h[b] { i } else { b }))
        .collect();
    let mut distinct = majority.clone();
    distinct.sort_unstable();
    distinct.dedup();
    Ok(ConventionReport {
        episodes,
        histograms,
        majority,
        coverage: distinct.len(),
    })
}
