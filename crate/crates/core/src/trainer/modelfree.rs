use super::{build_group, ActorPolicy, Agent, Learner, PgConfig, PgGroup, UpdateStats, View, XpmWeights};
use crate::env::Game;
use crate::error::TrainError;
use crate::rng::Rng;
use crate::rollout::{collect_episode, collect_mixed_play, ActionMode, Pairing, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lipo,
    Comedi,
    XpmSim,
    XpmWm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lipo => "lipo",
            Method::Comedi => "comedi",
            Method::XpmSim => "xpm-sim",
            Method::XpmWm => "xpm-wm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Lipo, Method::Comedi, Method::XpmSim, Method::XpmWm]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelFreeConfig {
    pub pg: PgConfig,
    pub weights: XpmWeights,
    /// Self-play episodes per iteration.
    pub sp_episodes: usize,
    /// Cross-play episodes per partner per iteration, seats alternating.
    pub xp_episodes: usize,
    /// Mixed-play episodes per iteration (CoMeDi only).
    pub mp_episodes: usize,
    pub iterations: usize,
}

impl Default for ModelFreeConfig {
    fn default() -> Self {
        Self {
            pg: PgConfig::default(),
            weights: XpmWeights::default(),
            sp_episodes: 8,
            xp_episodes: 4,
            mp_episodes: 4,
            iterations: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct XpEpisode {
    pub partner: usize,
    /// Seat held by the learner.
    pub seat: usize,
    pub traj: Trajectory,
}

/// Fresh experience for one iteration.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub sp: Vec<Trajectory>,
    pub xp: Vec<XpEpisode>,
    /// Self-play suffixes of mixed-play episodes.
    pub mp: Vec<Trajectory>,
    pub k_star: Option<usize>,
    pub real_steps: usize,
}

impl Batch {
    pub fn xp_returns(&self) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for e in &self.xp {
            let a = acc.entry(e.partner).or_default();
            a.0 += e.traj.ret();
            a.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }
}

fn argmax_partner(returns: &BTreeMap<usize, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (&k, &r) in returns {
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((k, r));
        }
    }
    best.map(|(k, _)| k)
}

/// Samples SP episodes, XP episodes against every partner, picks the
/// partner with the highest fresh XP return and, when `mixed` is set,
/// collects mixed-play episodes against it.
pub fn collect_batch(
    game: &Game,
    agent: &Agent,
    partners: &[Agent],
    cfg: &ModelFreeConfig,
    mixed: bool,
    rng: &mut Rng,
) -> Result<Batch, TrainError> {
    let mut b = Batch::default();
    for _ in 0..cfg.sp_episodes {
        let t = collect_episode(game, Pairing::SelfPlay(&mut ActorPolicy(agent)), ActionMode::Sample, rng)?;
        b.real_steps += t.len();
        b.sp.push(t);
    }
    for p in partners {
        for e in 0..cfg.xp_episodes {
            let seat = e % 2;
            let (mut me, mut other) = (ActorPolicy(agent), ActorPolicy(p));
            let pairing = if seat == 0 {
                Pairing::Cross(&mut me, &mut other)
            } else {
                Pairing::Cross(&mut other, &mut me)
            };
            let traj = collect_episode(game, pairing, ActionMode::Sample, rng)?;
            b.real_steps += traj.len();
            b.xp.push(XpEpisode { partner: p.id, seat, traj });
        }
    }
    b.k_star = argmax_partner(&b.xp_returns());
    if let (true, Some(k)) = (mixed, b.k_star) {
        let partner = partners.iter().find(|p| p.id == k).expect("k* is a partner");
        for e in 0..cfg.mp_episodes {
            let t = collect_mixed_play(
                game,
                &mut ActorPolicy(agent),
                &mut ActorPolicy(partner),
                e % 2,
                ActionMode::Sample,
                rng,
            )?;
            b.real_steps += t.prefix_steps + t.len();
            b.mp.push(t);
        }
    }
    Ok(b)
}

/// Policy-gradient groups for `J_SP + λ_MP·J_MP − λ_XP·J_XP(k*)`.
pub fn batch_groups(
    game: &Game,
    agent: &Agent,
    batch: &Batch,
    weights: &XpmWeights,
    cfg: &PgConfig,
) -> Result<Vec<PgGroup>, TrainError> {
    let own = agent.critics.get(&agent.id).ok_or(TrainError::Config("missing SP critic".into()))?;
    let both = |ts: &[Trajectory]| -> Vec<View> {
        ts.iter()
            .flat_map(|t| [View::of(game, t, 0), View::of(game, t, 1)])
            .collect()
    };
    let mut groups = vec![build_group("sp", 1.0, &both(&batch.sp), agent.id, own, cfg)?];
    if let Some(k) = batch.k_star {
        let critic = agent
            .critics
            .get(&k)
            .ok_or_else(|| TrainError::Config(format!("missing critic for partner {k}")))?;
        let views: Vec<View> = batch
            .xp
            .iter()
            .filter(|e| e.partner == k)
            .map(|e| View::of(game, &e.traj, e.seat))
            .collect();
        groups.push(build_group("xp", -weights.lambda_xp, &views, k, critic, cfg)?);
    }
    if !batch.mp.is_empty() {
        groups.push(build_group("mp", weights.lambda_mp, &both(&batch.mp), agent.id, own, cfg)?);
    }
    Ok(groups)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct IterReport {
    pub iter: usize,
    pub sp_return: f64,
    pub xp_returns: BTreeMap<usize, f64>,
    pub k_star: Option<usize>,
    pub mp_return: Option<f64>,
    pub real_steps: usize,
    pub simulated_steps: usize,
    pub stats: UpdateStats,
}

fn mean_return(ts: &[Trajectory]) -> f64 {
    if ts.is_empty() {
        return 0.0;
    }
    ts.iter().map(|t| t.ret()).sum::<f64>() / ts.len() as f64
}

/// One LIPO or CoMeDi iteration.
pub fn modelfree_update(
    game: &Game,
    agent: &mut Agent,
    partners: &[Agent],
    learner: &mut Learner,
    cfg: &ModelFreeConfig,
    method: Method,
    rng: &mut Rng,
) -> Result<IterReport, TrainError> {
    if agent.frozen {
        return Err(TrainError::Frozen(agent.id));
    }
    let mixed = match method {
        Method::Lipo => false,
        Method::Comedi => true,
        m => return Err(TrainError::Config(format!("{} is not a model-free method", m.name()))),
    };
    let batch = collect_batch(game, agent, partners, cfg, mixed, rng)?;
    let groups = batch_groups(game, agent, &batch, &cfg.weights, &learner.cfg)?;
    let stats = learner.update(agent, &groups)?;
    Ok(IterReport {
        iter: learner.actor_opt.steps() as usize,
        sp_return: mean_return(&batch.sp),
        xp_returns: batch.xp_returns(),
        k_star: batch.k_star,
        mp_return: (!batch.mp.is_empty()).then(|| mean_return(&batch.mp)),
        real_steps: batch.real_steps,
        simulated_steps: 0,
        stats,
    })
}

/// Trains `agent` against the frozen `partners` for `cfg.iterations`
/// iterations. Critics for every partner are created up front.
pub fn train_modelfree(
    game: &Game,
    agent: &mut Agent,
    partners: &[Agent],
    cfg: &ModelFreeConfig,
    method: Method,
    rng: &mut Rng,
) -> Result<Vec<IterReport>, TrainError> {
    cfg.weights.validate()?;
    if let Some(p) = partners.iter().find(|p| !p.frozen) {
        return Err(TrainError::Config(format!("partner {} is not frozen", p.id)));
    }
    for p in partners {
        agent.ensure_critic(p.id, rng);
    }
    let mut learner = Learner::new(cfg.pg.clone());
    let mut out = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        out.push(modelfree_update(game, agent, partners, &mut learner, cfg, method, rng)?);
    }
    Ok(out)
}
