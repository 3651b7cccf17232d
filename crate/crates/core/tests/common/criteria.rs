//! Checks with an independent oracle for each structural property, shared
//! by the focused tests and the acceptance report.

use super::grad::{self, CONFIGS, LOSS_TOL, OP_TOL};
use super::tiny;
use rand::Rng as _;
use std::collections::BTreeMap;
use xpm_core::env::{event_reward_to_scalar, Game, Kitchen, Mppmr, EVENTS_PER_PLAYER};
use xpm_core::error::TrainError;
use xpm_core::nn::{kl_per_dist, Module, StopGrad};
use xpm_core::rng::{self, Rng};
use xpm_core::rollout::{collect_episode, ActionMode, Pairing, ReplayBuffer};
use xpm_core::run::train_population;
use xpm_core::tensor::{Graph, Tensor};
use xpm_core::trainer::{
    agent_loss, batch_groups, collect_batch, critic_dim, gae_advantages, lambda_target, Agent, Learner,
    Method, ModelFreeConfig, NetShape, PgConfig, PgGroup, XpmWeights,
};
use xpm_core::world_model::{observe_seq, wm_anchor_loss, wm_loss, SeqBatch, WmIds, WmLossConfig, WorldModel};
use xpm_core::xpm::{proposition1_check, ExactSim, Simulator, WmSim, XpmSimConfig};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// gradients

pub fn gradchecks() -> Outcome {
    let ops = grad::op_suite(CONFIGS);
    let (worst_op, op_err) = ops.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
    let losses = [
        ("pg_loss", grad::pg_worst(CONFIGS, false)),
        ("pg+value", grad::pg_worst(CONFIGS, true)),
        ("wm_loss", grad::wm_worst(CONFIGS)),
        ("wm_anchor_loss", grad::anchor_worst(CONFIGS)),
    ];
    let pass = op_err < OP_TOL && losses.iter().all(|l| l.1 < LOSS_TOL);
    let mut d = format!("{} ops x {CONFIGS} configs, worst {worst_op} {op_err:.1e}", ops.len());
    for (n, e) in losses {
        d += &format!("; {n} {e:.1e}");
    }
    Outcome::new(pass, d)
}

// ---------------------------------------------------------------------------
// returns

/// `Σ_l (γλ)^l · Π_{i<l} c_{t+i} · δ_{t+l}` summed directly.
pub fn gae_oracle(r: &[f64], v: &[f64], c: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * c[t] * v[t + 1] - v[t]).collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for l in 0..n - t {
                acc += w * delta[t + l];
                w *= gamma * lambda * c[t + l];
            }
            acc
        })
        .collect()
}

/// λ-return as the weighted mixture of n-step returns:
/// `(1 − λ)·Σ_{n<N} λ^{n−1}·G⁽ⁿ⁾ + λ^{N−1}·G⁽ᴺ⁾`.
pub fn lambda_oracle(r: &[f64], v: &[f64], c: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n_steps = r.len();
    let g_n = |t: usize, n: usize| {
        let mut acc = 0.0;
        let mut disc = 1.0;
        for k in 0..n {
            acc += disc * r[t + k];
            disc *= gamma * c[t + k];
        }
        acc + disc * v[t + n]
    };
    (0..n_steps)
        .map(|t| {
            let big_n = n_steps - t;
            let mut acc = 0.0;
            for n in 1..big_n {
                acc += (1.0 - lambda) * lambda.powi(n as i32 - 1) * g_n(t, n);
            }
            acc + lambda.powi(big_n as i32 - 1) * g_n(t, big_n)
        })
        .collect()
}

pub fn returns_match_oracles(instances: usize) -> Outcome {
    let mut rng = rng::stream(21, "returns", &[]);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let t = rng.gen_range(1..=8);
        let r: Vec<f64> = (0..t).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..=t).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let c: Vec<f64> = (0..t).map(|_| if rng.gen_bool(0.2) { 0.0 } else { 1.0 }).collect();
        let gamma = rng.gen_range(0.8..=1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let (adv, targets) = gae_advantages(&r, &v, &c, gamma, lambda).unwrap();
        let lt = lambda_target(&r, &v, &c, gamma, lambda).unwrap();
        let oa = gae_oracle(&r, &v, &c, gamma, lambda);
        let ol = lambda_oracle(&r, &v, &c, gamma, lambda);
        for i in 0..t {
            worst = worst.max((adv[i] - oa[i]).abs());
            worst = worst.max((targets[i] - (oa[i] + v[i])).abs());
            worst = worst.max((lt[i] - ol[i]).abs());
        }
    }
    Outcome::new(worst < 1e-6, format!("{instances} instances, T ≤ 8, max abs error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// mixed play

fn fresh_agent(game: &Game, id: usize, rng: &mut Rng) -> Agent {
    let shape = NetShape {
        hidden: vec![32],
        ..NetShape::default()
    };
    let mut a = Agent::new(id, game.obs_dim(), game.n_actions(), critic_dim(game), &shape, &shape, rng);
    // scale the output layer up so the policy is far from uniform
    let k = a.actor.n_params();
    for p in a.actor.params_mut().into_iter().skip(k - 2) {
        for v in p.data_mut() {
            *v *= 300.0;
        }
    }
    a
}

pub fn proposition1(trials: usize) -> Outcome {
    let mut d = Vec::new();
    let mut pass = true;
    for game in [Game::Mppmr(Mppmr::default()), Game::Kitchen(Kitchen::builtin("cramped_room", 60).unwrap())] {
        let mut rng = rng::stream(22, "prop1", &[]);
        let me = fresh_agent(&game, 1, &mut rng);
        let partner = fresh_agent(&game, 0, &mut rng);
        let rep = proposition1_check(&game, &me, &partner, trials, ActionMode::Sample, &mut rng).unwrap();
        pass &= rep.exact_matches == trials && rep.max_discrepancy == 0.0;
        d.push(format!("{}: {}/{} exact", game.name(), rep.exact_matches, trials));
    }
    Outcome::new(pass, d.join(", "))
}

// ---------------------------------------------------------------------------
// degenerate weights

fn loss_grads(agent: &Agent, groups: &[PgGroup], ent: f64) -> (f32, Vec<Tensor>) {
    let mut g = Graph::<f32>::new();
    let l = agent_loss(&mut g, &agent.actor, &agent.critics, groups, ent).unwrap();
    let grads = g.backward(l.total).unwrap();
    let mut ids = l.actor_ids.clone();
    for v in l.critic_ids.values() {
        ids.extend(v);
    }
    (g.value(l.total).item(), grads.collect(&ids))
}

fn bits(ts: &[Tensor]) -> Vec<u32> {
    ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

/// CoMeDi with `λ_MP = 0` against LIPO on the same fresh batch.
fn comedi_is_lipo() -> (bool, bool) {
    let game = Game::Mppmr(Mppmr::default());
    let mut rng = rng::stream(23, "comedi", &[]);
    let mut partner = fresh_agent(&game, 0, &mut rng);
    partner.freeze();
    let mut agent = fresh_agent(&game, 1, &mut rng);
    agent.ensure_critic(0, &mut rng);
    let cfg = ModelFreeConfig {
        sp_episodes: 2,
        xp_episodes: 2,
        mp_episodes: 2,
        ..ModelFreeConfig::default()
    };
    let batch = collect_batch(&game, &agent, std::slice::from_ref(&partner), &cfg, true, &mut rng).unwrap();
    assert!(!batch.mp.is_empty());
    let mut lipo_batch = batch.clone();
    lipo_batch.mp.clear();
    let pg = PgConfig::default();
    let w0 = XpmWeights {
        lambda_xp: 0.5,
        lambda_mp: 0.0,
    };
    let comedi = batch_groups(&game, &agent, &batch, &w0, &pg).unwrap();
    let lipo = batch_groups(&game, &agent, &lipo_batch, &w0, &pg).unwrap();
    let on = batch_groups(&game, &agent, &batch, &XpmWeights { lambda_mp: 0.25, ..w0 }, &pg).unwrap();
    let (a, b, c) = (loss_grads(&agent, &comedi, 1e-3), loss_grads(&agent, &lipo, 1e-3), loss_grads(&agent, &on, 1e-3));
    let equal = a.0.to_bits() == b.0.to_bits() && bits(&a.1) == bits(&b.1);
    (equal, bits(&c.1) != bits(&b.1))
}

/// Parameters after one inner step of `sim`, with and without partners.
fn inner_params(
    sim: &mut dyn Simulator,
    agent: &Agent,
    partners: &[Agent],
    buffer: &ReplayBuffer,
    cfg: &XpmSimConfig,
    seed: u64,
) -> Vec<u32> {
    let mut a = agent.clone();
    let mut learner = Learner::new(cfg.pg.clone());
    let mut rng = rng::from_u64(seed);
    sim.inner_step(&mut a, &mut learner, partners, buffer, cfg, &mut rng).unwrap();
    let mut ps: Vec<Tensor> = a.actor.params().into_iter().cloned().collect();
    ps.extend(a.critics[&a.id].params().into_iter().cloned());
    bits(&ps)
}

fn fill_buffer(game: &Game, sim: &dyn Simulator, agent: &Agent, partner: &Agent, rng: &mut Rng) -> ReplayBuffer {
    let mut buf = ReplayBuffer::new(agent.id, 100_000, 0.5);
    for e in 0..4 {
        let mut me = sim.policy(agent);
        let t = collect_episode(game, Pairing::SelfPlay(me.as_mut()), ActionMode::Sample, rng).unwrap();
        buf.add(t).unwrap();
        let mut other = sim.partner_policy(partner);
        let pairing = if e % 2 == 0 {
            Pairing::Cross(me.as_mut(), other.as_mut())
        } else {
            Pairing::Cross(other.as_mut(), me.as_mut())
        };
        buf.add(collect_episode(game, pairing, ActionMode::Sample, rng).unwrap()).unwrap();
    }
    buf
}

/// XPM inner step with `λ_XP = 0` against the same step without partners,
/// i.e. simulated self-play alone, from the same buffer and seed.
fn xpm_is_sp(world_model: bool) -> (bool, bool) {
    let (game, mk): (Game, Box<dyn Fn() -> Box<dyn Simulator>>) = if world_model {
        let g = Game::Kitchen(Kitchen::builtin("cramped_room", 30).unwrap());
        let cfg = tiny("minikitchen:cramped_room", Method::XpmWm, 2, 0).wm;
        let gc = g.clone();
        (g, Box::new(move || Box::new(WmSim::new(gc.clone(), cfg.clone(), &mut rng::from_u64(5)).unwrap())))
    } else {
        let g = Game::Mppmr(Mppmr::default());
        let gc = g.clone();
        (g, Box::new(move || Box::new(ExactSim { game: gc.clone() })))
    };
    let mut rng = rng::stream(24, "xpm-sp", &[world_model as u64]);
    let probe = mk();
    let shape = NetShape {
        hidden: vec![32],
        ..NetShape::default()
    };
    let (mut partner, mut agent) = if world_model {
        let s = WmSim::new(game.clone(), tiny("minikitchen:cramped_room", Method::XpmWm, 2, 0).wm, &mut rng::from_u64(5)).unwrap();
        (s.new_agent(0, (&shape, &shape), &mut rng), s.new_agent(1, (&shape, &shape), &mut rng))
    } else {
        (fresh_agent(&game, 0, &mut rng), fresh_agent(&game, 1, &mut rng))
    };
    partner.freeze();
    agent.ensure_critic(0, &mut rng);
    let buffer = fill_buffer(&game, probe.as_ref(), &agent, &partner, &mut rng);
    let partners = std::slice::from_ref(&partner);
    let mut cfg = XpmSimConfig {
        lambda_xp: 0.0,
        sp_starts: 4,
        xp_starts: 4,
        sim_horizon: 10,
        ..XpmSimConfig::default()
    };
    let zero = inner_params(mk().as_mut(), &agent, partners, &buffer, &cfg, 9);
    let sp = inner_params(mk().as_mut(), &agent, &[], &buffer, &cfg, 9);
    cfg.lambda_xp = 0.5;
    let on = inner_params(mk().as_mut(), &agent, partners, &buffer, &cfg, 9);
    (zero == sp, on != sp)
}

pub fn degeneracies() -> Outcome {
    let (c_eq, c_live) = comedi_is_lipo();
    let (s_eq, s_live) = xpm_is_sp(false);
    let (w_eq, w_live) = xpm_is_sp(true);
    let pass = c_eq && s_eq && w_eq && c_live && s_live && w_live;
    Outcome::new(
        pass,
        format!(
            "CoMeDi(λ_MP=0)≡LIPO {c_eq}, XPM-Sim(λ_XP=0)≡SP {s_eq}, XPM-WM(λ_XP=0)≡SP {w_eq}; nonzero weights change the update {}",
            c_live && s_live && w_live
        ),
    )
}

// ---------------------------------------------------------------------------
// frozen partners

fn frozen_update_rejected(agent: &Agent) -> bool {
    let mut a = agent.clone();
    let mut l = Learner::new(PgConfig::default());
    matches!(l.update(&mut a, &[]), Err(TrainError::Frozen(_)))
}

/// Trains prefixes of the same run: agents `0..M−1` (and their world-model
/// snapshots) must be bit-identical whether or not agent `M − 1` was trained
/// after them.
pub fn frozen_checksums() -> Outcome {
    let mut d = Vec::new();
    let mut pass = true;
    for (env, method) in [
        ("mppmr", Method::Lipo),
        ("mppmr", Method::Comedi),
        ("mppmr", Method::XpmSim),
        ("minikitchen:cramped_room", Method::XpmWm),
    ] {
        let short = train_population(&tiny(env, method, 2, 3)).unwrap().population;
        let long = train_population(&tiny(env, method, 3, 3)).unwrap().population;
        let mut ok = (0..2).all(|i| short.agents[i].checksum() == long.agents[i].checksum());
        for k in short.wm_snapshots.keys() {
            ok &= xpm_core::nn::param_checksum(&short.wm_snapshots[k]) == xpm_core::nn::param_checksum(&long.wm_snapshots[k]);
        }
        if method == Method::XpmWm {
            ok &= long.wm_snapshots.len() == 3;
        }
        ok &= long.validate().is_ok() && long.agents.iter().all(frozen_update_rejected);
        let before = long.checksum();
        xpm_core::eval::crossplay_matrix(&long, 2, 0).unwrap();
        ok &= long.checksum() == before;
        pass &= ok;
        d.push(format!("{} {}", method.name(), if ok { "unchanged" } else { "CHANGED" }));
    }
    Outcome::new(pass, d.join(", "))
}

// ---------------------------------------------------------------------------
// critics

pub fn critic_counts() -> Outcome {
    let mut d = Vec::new();
    let mut pass = true;
    for method in [Method::Lipo, Method::Comedi, Method::XpmSim] {
        let pop = train_population(&tiny("mppmr", method, 4, 0)).unwrap().population;
        let total: usize = pop.agents.iter().map(|a| a.critics.len()).sum();
        let keyed = pop
            .agents
            .iter()
            .all(|a| a.critics.keys().copied().eq(0..=a.id));
        pass &= total == 10 && keyed;
        d.push(format!("{} {total}", method.name()));
    }
    Outcome::new(pass, format!("critics at M=4: {}", d.join(", ")))
}

// ---------------------------------------------------------------------------
// world-model loss

/// Kitchen sequences for world-model checks.
pub fn kitchen_batch(rows: usize, len: usize, seed: u64) -> (Game, SeqBatch) {
    let game = Game::Kitchen(Kitchen::builtin("cramped_room", 40).unwrap());
    let mut rng = rng::from_u64(seed);
    let k = game.as_kitchen().unwrap().clone();
    let mut p = xpm_core::rollout::ScriptedPolicy::new(9, k, 0.3);
    let trajs: Vec<_> = (0..3)
        .map(|_| collect_episode(&game, Pairing::SelfPlay(&mut p), ActionMode::Sample, &mut rng).unwrap())
        .collect();
    let refs: Vec<_> = trajs.iter().collect();
    let b = xpm_core::world_model::sample_sequences(&refs, rows, len, &mut rng).unwrap();
    (game, b)
}

fn wm_for(game: &Game, seed: u64) -> WorldModel<f64> {
    let shape = tiny("minikitchen:cramped_room", Method::XpmWm, 1, 0).wm.shape;
    WorldModel::<f32>::new(shape, game.obs_dim(), game.n_actions(), game.n_events(), &mut rng::from_u64(seed))
        .unwrap()
        .cast()
}

fn decomposition() -> f64 {
    let (game, batch) = kitchen_batch(4, 8, 31);
    let mut worst = 0.0f64;
    for s in 0..5 {
        let wm = wm_for(&game, s);
        let mut g = Graph::<f64>::new();
        let ids = WmIds::bind(&mut g, &wm, true);
        let cfg = WmLossConfig {
            free_nats: [0.0, 0.1, 1.0, 3.0, 0.5][s as usize],
            ..WmLossConfig::default()
        };
        let p = wm_loss(&mut g, &wm, &ids, &batch, &cfg, &mut rng::from_u64(s)).unwrap();
        let v = p.values(&g);
        worst = worst.max((v[0] - v[1..].iter().sum::<f64>()).abs());
    }
    worst
}

fn all_zero(ts: &[Tensor<f64>]) -> bool {
    ts.iter().all(|t| t.data().iter().all(|&x| x == 0.0))
}

fn any_nonzero(ts: &[Tensor<f64>]) -> bool {
    !all_zero(ts)
}

/// Gradients through each stop-gradient side.
fn stop_grad_sides() -> bool {
    let (game, batch) = kitchen_batch(3, 6, 32);
    let wm = wm_for(&game, 1);
    let mut ok = true;
    // representation side: KL(post ‖ sg prior) leaves the prior untouched
    let mut g = Graph::<f64>::new();
    let ids = WmIds::bind(&mut g, &wm, true);
    let steps = observe_seq(&mut g, &wm, &ids, &batch, &mut rng::from_u64(2)).unwrap();
    let mut acc = None;
    for s in &steps {
        let k = kl_per_dist(&mut g, s.post_logp, s.prior_logp, StopGrad::Q);
        let k = g.sum(k);
        acc = Some(match acc {
            Some(a) => g.add(a, k),
            None => k,
        });
    }
    let gr = g.backward(acc.unwrap()).unwrap();
    ok &= all_zero(&gr.collect(&ids.prior)) && any_nonzero(&gr.collect(&ids.enc));
    // dynamics side on one-step sequences: KL(sg post ‖ prior) leaves the
    // encoder untouched
    let one = SeqBatch {
        rows: batch.rows,
        len: 1,
        obs: vec![batch.obs[0].clone()],
        prev: Vec::new(),
        events: vec![batch.events[0].clone()],
        cont: vec![batch.cont[0].clone()],
    };
    let mut g = Graph::<f64>::new();
    let ids = WmIds::bind(&mut g, &wm, true);
    let steps = observe_seq(&mut g, &wm, &ids, &one, &mut rng::from_u64(3)).unwrap();
    let k = kl_per_dist(&mut g, steps[0].post_logp, steps[0].prior_logp, StopGrad::P);
    let k = g.sum(k);
    let gr = g.backward(k).unwrap();
    ok &= all_zero(&gr.collect(&ids.enc)) && any_nonzero(&gr.collect(&ids.prior));
    // anchor: the snapshot side gets nothing even when bound as trainable
    let snap = wm_for(&game, 2);
    let mut g = Graph::<f64>::new();
    let ids = WmIds::bind(&mut g, &wm, true);
    let sids = WmIds::bind(&mut g, &snap, true);
    let l = wm_anchor_loss(&mut g, &wm, &ids, &snap, &sids, &batch, 1.0, &mut rng::from_u64(4)).unwrap();
    let gr = g.backward(l).unwrap();
    ok &= all_zero(&gr.collect(&sids.all)) && any_nonzero(&gr.collect(&ids.enc));
    ok
}

/// Posterior and prior both uniform: each KL side sits on the floor, so the
/// KL term is `β · free_nats · N`.
fn free_nats_floor() -> f64 {
    let (game, batch) = kitchen_batch(3, 5, 33);
    let mut worst = 0.0f64;
    for (beta, fnats) in [(1.0, 1.0), (0.5, 0.3), (2.0, 0.05)] {
        let mut wm = wm_for(&game, 7);
        for m in [&mut wm.enc, &mut wm.prior] {
            let n = m.n_params();
            for p in m.params_mut().into_iter().skip(n - 2) {
                p.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let cfg = WmLossConfig {
            beta,
            free_nats: fnats,
            ..WmLossConfig::default()
        };
        let mut g = Graph::<f64>::new();
        let ids = WmIds::bind(&mut g, &wm, true);
        let p = wm_loss(&mut g, &wm, &ids, &batch, &cfg, &mut rng::from_u64(5)).unwrap();
        let expect = beta * fnats * wm.layout().n as f64;
        worst = worst.max((g.value(p.kl).item() - expect).abs());
        let gr = g.backward(p.kl).unwrap();
        if !all_zero(&gr.collect(&ids.all)) {
            worst = f64::INFINITY;
        }
    }
    worst
}

pub fn wm_loss_structure() -> Outcome {
    let dec = decomposition();
    let sides = stop_grad_sides();
    let floor = free_nats_floor();
    Outcome::new(
        dec < 1e-5 && sides && floor < 1e-5,
        format!("|total − Σ parts| {dec:.1e}; stop-grad sides zero {sides}; floor error {floor:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// event rewards

const WEIGHTS: [f64; 5] = [1.0, 1.0, 1.0, 3.0, 12.0];

fn dot(e: &[u8]) -> f64 {
    (0..2)
        .map(|p| (0..5).map(|i| e[p * 5 + i] as f64 * WEIGHTS[i]).sum::<f64>())
        .sum()
}

pub fn event_linearity(n: usize) -> Outcome {
    let mut rng = rng::stream(25, "events", &[]);
    assert_eq!(EVENTS_PER_PLAYER, 5);
    let mut bad = 0;
    for _ in 0..n {
        let e: Vec<u8> = (0..10).map(|_| rng.gen_range(0..=1)).collect();
        if event_reward_to_scalar(&e).unwrap() != dot(&e) {
            bad += 1;
        }
    }
    // transitions from play, where events actually fire
    let game = Game::Kitchen(Kitchen::builtin("cramped_room", 200).unwrap());
    let mut p = xpm_core::rollout::ScriptedPolicy::new(0, game.as_kitchen().unwrap().clone(), 0.2);
    let mut seen = 0;
    let mut fired = 0;
    while seen < n {
        let t = collect_episode(&game, Pairing::SelfPlay(&mut p), ActionMode::Sample, &mut rng).unwrap();
        for s in &t.steps {
            seen += 1;
            fired += s.events.iter().any(|&e| e > 0) as usize;
            if s.reward != dot(&s.events) {
                bad += 1;
            }
        }
    }
    Outcome::new(
        bad == 0 && fired > 0,
        format!("{n} random vectors and {seen} transitions ({fired} with events), {bad} mismatches"),
    )
}

/// Frequency of each partner index over `draws` uniform draws.
pub fn partner_histogram(n: usize, draws: usize) -> BTreeMap<usize, usize> {
    let mut rng = rng::stream(26, "partners", &[]);
    let mut h = BTreeMap::new();
    for _ in 0..draws {
        *h.entry(xpm_core::xpm::pick_partner(n, &mut rng)).or_insert(0) += 1;
    }
    h
}
