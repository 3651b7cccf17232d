use super::{Belief, WorldModel};
use crate::env::expected_event_reward;
use crate::error::{TensorError, TrainError};
use crate::nn::Mlp;
use crate::rng::Rng;
use crate::rollout::{sample_action, Policy, Trajectory};
use crate::trainer::{Agent, View};
use rand::Rng as _;

pub use crate::trainer::lambda_target;

/// Fixed-length windows of stored trajectories, position-major.
///
/// Position `j` of a window starting at step `s` holds the joint observation
/// `o_{s+j}`, the joint action that led to it (`prev[j − 1]`), and the
/// events and continue flag of that transition. Position 0 is treated as a
/// fresh start: no previous action, no events, continue 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeqBatch {
    pub rows: usize,
    pub len: usize,
    /// `len × [rows × 2·obs_dim]`, each row `[o¹, o²]`.
    pub obs: Vec<Vec<f32>>,
    /// `(len − 1) × rows`.
    pub prev: Vec<Vec<[usize; 2]>>,
    /// `len × [rows × n_events]`.
    pub events: Vec<Vec<f32>>,
    /// `len × rows`.
    pub cont: Vec<Vec<f32>>,
}

impl SeqBatch {
    /// Builds a batch from `(trajectory, start step)` windows of `len`
    /// observations each.
    pub fn from_windows(windows: &[(&Trajectory, usize)], len: usize) -> Result<Self, TrainError> {
        if windows.is_empty() || len == 0 {
            return Err(TrainError::Length("empty sequence batch".into()));
        }
        let n_events = windows[0].0.steps.first().map_or(0, |s| s.events.len());
        let mut b = SeqBatch {
            rows: windows.len(),
            len,
            obs: vec![Vec::new(); len],
            prev: vec![Vec::new(); len - 1],
            events: vec![Vec::new(); len],
            cont: vec![Vec::new(); len],
        };
        for &(traj, s) in windows {
            if s + len > traj.len() + 1 {
                return Err(TrainError::Length(format!(
                    "window {s}+{len} exceeds a trajectory of {} steps",
                    traj.len()
                )));
            }
            for j in 0..len {
                let i = s + j;
                let o = if i == traj.len() { &traj.final_obs } else { &traj.steps[i].obs };
                b.obs[j].extend_from_slice(&o[0]);
                b.obs[j].extend_from_slice(&o[1]);
                if j == 0 {
                    b.events[j].extend(std::iter::repeat_n(0.0, n_events));
                    b.cont[j].push(1.0);
                } else {
                    let st = &traj.steps[i - 1];
                    if st.events.len() != n_events {
                        return Err(TrainError::Length("trajectories disagree on event width".into()));
                    }
                    b.prev[j - 1].push(st.actions);
                    b.events[j].extend(st.events.iter().map(|&e| e as f32));
                    b.cont[j].push(st.cont as u8 as f32);
                }
            }
        }
        Ok(b)
    }

    pub(super) fn check<T: crate::tensor::Scalar>(&self, wm: &WorldModel<T>) -> Result<(), TensorError> {
        let bad = self.rows == 0
            || self.len == 0
            || self.obs.len() != self.len
            || self.events.len() != self.len
            || self.cont.len() != self.len
            || self.prev.len() + 1 != self.len
            || self.obs.iter().any(|o| o.len() != self.rows * 2 * wm.obs_dim)
            || self.events.iter().any(|e| e.len() != self.rows * wm.n_events)
            || self.cont.iter().any(|c| c.len() != self.rows)
            || self.prev.iter().any(|p| p.len() != self.rows || p.iter().flatten().any(|&a| a >= wm.n_actions));
        if bad {
            return Err(TensorError::Dimension(format!(
                "sequence batch does not match the world model (obs {}, events {}, actions {})",
                wm.obs_dim, wm.n_events, wm.n_actions
            )));
        }
        Ok(())
    }
}

/// Uniform `(trajectory, start)` windows of `len` observations from
/// trajectories long enough to hold one.
pub fn sample_windows<'a>(
    trajs: &[&'a Trajectory],
    rows: usize,
    len: usize,
    rng: &mut Rng,
) -> Result<Vec<(&'a Trajectory, usize)>, TrainError> {
    let ok: Vec<&Trajectory> = trajs.iter().copied().filter(|t| t.len() + 1 >= len).collect();
    if ok.is_empty() {
        return Err(TrainError::Length(format!("no stored trajectory holds a window of {len}")));
    }
    Ok((0..rows)
        .map(|_| {
            let t = ok[rng.gen_range(0..ok.len())];
            (t, rng.gen_range(0..=t.len() + 1 - len))
        })
        .collect())
}

pub fn sample_sequences(trajs: &[&Trajectory], rows: usize, len: usize, rng: &mut Rng) -> Result<SeqBatch, TrainError> {
    SeqBatch::from_windows(&sample_windows(trajs, rows, len, rng)?, len)
}

/// Beliefs after filtering each trajectory's observations up to and
/// including step `t`.
pub fn filter_prefixes(wm: &WorldModel, refs: &[(&Trajectory, usize)], rng: &mut Rng) -> Belief {
    let rows = refs.len();
    let mut out = wm.initial(rows);
    if rows == 0 {
        return out;
    }
    let last = refs.iter().map(|r| r.1).max().unwrap_or(0);
    let (hd, zd) = (wm.deter(), wm.layout().z_dim());
    let mut b = wm.initial(rows);
    for j in 0..=last {
        let mut obs = Vec::with_capacity(rows * 2 * wm.obs_dim);
        let mut prev = Vec::with_capacity(rows);
        for &(traj, t) in refs {
            let i = j.min(t);
            let o = if i == traj.len() { &traj.final_obs } else { &traj.steps[i].obs };
            obs.extend_from_slice(&o[0]);
            obs.extend_from_slice(&o[1]);
            prev.push(if j > 0 { traj.steps[(j - 1).min(traj.len() - 1)].actions } else { [0, 0] });
        }
        b = wm.filter_step(&b, (j > 0).then_some(&prev[..]), &obs, rng);
        for (r, &(_, t)) in refs.iter().enumerate() {
            if t == j {
                out.h[r * hd..(r + 1) * hd].copy_from_slice(b.row_h(r));
                out.z[r * zd..(r + 1) * zd].copy_from_slice(b.row_z(r));
            }
        }
    }
    out
}

/// Closed-loop latent rollout under the prior.
#[derive(Clone, Debug)]
pub struct ImaginedRollout {
    /// `horizon + 1` beliefs, the first being the start.
    pub beliefs: Vec<Belief>,
    /// `horizon × rows` joint actions.
    pub actions: Vec<Vec<[usize; 2]>>,
    /// Event probabilities predicted after each joint action.
    pub event_probs: Vec<Vec<f32>>,
    /// Continue probabilities predicted after each joint action.
    pub cont: Vec<Vec<f32>>,
}

impl ImaginedRollout {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn rows(&self) -> usize {
        self.beliefs[0].rows
    }

    /// Expected scalar reward of every step of `row`.
    pub fn rewards(&self, row: usize, n_events: usize) -> Vec<f64> {
        self.event_probs
            .iter()
            .map(|p| expected_event_reward(&p[row * n_events..(row + 1) * n_events]))
            .collect()
    }

    /// One seat's view of every row for the policy-gradient losses.
    pub fn views(&self, wm: &WorldModel, seat: usize) -> Vec<View> {
        let (ad, cd) = (wm.actor_dim(), wm.critic_dim());
        let actor: Vec<Vec<f32>> = self.beliefs.iter().map(|b| wm.actor_features(b, seat)).collect();
        let critic: Vec<Vec<f32>> = self.beliefs.iter().map(|b| wm.critic_features(b, seat)).collect();
        (0..self.rows())
            .map(|r| {
                let mut v = View::default();
                for t in 0..self.horizon() {
                    v.actor_in.extend_from_slice(&actor[t][r * ad..(r + 1) * ad]);
                    v.actions.push(self.actions[t][r][seat]);
                    v.conts.push(self.cont[t][r] as f64);
                }
                v.rewards = self.rewards(r, wm.n_events);
                for c in &critic {
                    v.critic_in.extend_from_slice(&c[r * cd..(r + 1) * cd]);
                }
                v
            })
            .collect()
    }
}

/// Rolls every start belief forward `horizon` steps with `actors[seat]`
/// choosing each seat's action from its latent slice.
pub fn imagine(wm: &WorldModel, start: &Belief, actors: [&Mlp; 2], horizon: usize, rng: &mut Rng) -> ImaginedRollout {
    let n = wm.n_actions;
    let mut out = ImaginedRollout {
        beliefs: vec![start.clone()],
        actions: Vec::with_capacity(horizon),
        event_probs: Vec::with_capacity(horizon),
        cont: Vec::with_capacity(horizon),
    };
    for _ in 0..horizon {
        let b = out.beliefs.last().expect("start belief");
        let logits = [0, 1].map(|s| actors[s].infer_rows(&wm.actor_features(b, s), b.rows));
        let acts: Vec<[usize; 2]> = (0..b.rows)
            .map(|r| [0, 1].map(|s| sample_action(&logits[s][r * n..(r + 1) * n], rng)))
            .collect();
        let next = wm.imagine_step(b, &acts, rng);
        out.event_probs.push(wm.event_probs(&next));
        out.cont.push(wm.cont_probs(&next));
        out.actions.push(acts);
        out.beliefs.push(next);
    }
    out
}

/// Mean imagined cumulative reward of replaying the recorded joint actions
/// of `traj` open loop from the belief after its first observation, over
/// `samples` latent samples.
pub fn open_loop_reward(wm: &WorldModel, traj: &Trajectory, samples: usize, rng: &mut Rng) -> f64 {
    let samples = samples.max(1);
    let refs = vec![(traj, 0); samples];
    let mut b = filter_prefixes(wm, &refs, rng);
    let mut total = 0.0;
    for s in &traj.steps {
        let acts = vec![s.actions; samples];
        b = wm.imagine_step(&b, &acts, rng);
        let p = wm.event_probs(&b);
        total += p.chunks(wm.n_events).map(expected_event_reward).sum::<f64>();
    }
    total / samples as f64
}

/// An agent acting in the real environment through its world model's
/// filter.
pub struct WmPolicy<'a> {
    pub wm: &'a WorldModel,
    pub agent: &'a Agent,
    belief: Belief,
}

impl<'a> WmPolicy<'a> {
    pub fn new(wm: &'a WorldModel, agent: &'a Agent) -> Self {
        Self {
            wm,
            agent,
            belief: wm.initial(1),
        }
    }
}

impl Policy for WmPolicy<'_> {
    fn id(&self) -> usize {
        self.agent.id
    }

    fn obs_dim(&self) -> usize {
        self.wm.obs_dim
    }

    fn reset(&mut self) {
        self.belief = self.wm.initial(1);
    }

    fn logits(&mut self, obs: &[Vec<f32>; 2], prev: Option<[usize; 2]>, rng: &mut Rng) -> [Vec<f32>; 2] {
        let mut o = obs[0].clone();
        o.extend_from_slice(&obs[1]);
        let p = prev.map(|a| vec![a]);
        self.belief = self.wm.filter_step(&self.belief, p.as_deref(), &o, rng);
        [0, 1].map(|s| self.agent.actor.infer(&self.wm.actor_features(&self.belief, s)))
    }
}

/// One-step posterior quality over whole trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct WmMetrics {
    /// Mean squared decoder error per observation feature.
    pub recon_mse: f64,
    /// Mean Bernoulli log-loss per event of the reward head.
    pub reward_logloss: f64,
    /// Mean Bernoulli log-loss of the continue head.
    pub cont_logloss: f64,
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Filters every trajectory from its start and scores the decoders and
/// heads at each posterior state.
pub fn evaluate(wm: &WorldModel, trajs: &[&Trajectory], rng: &mut Rng) -> WmMetrics {
    let rows = trajs.len();
    let mut m = WmMetrics::default();
    if rows == 0 {
        return m;
    }
    let (od, ne) = (wm.obs_dim, wm.n_events);
    let last = trajs.iter().map(|t| t.len()).max().unwrap_or(0);
    let (mut n_obs, mut n_ev, mut n_c) = (0usize, 0usize, 0usize);
    let mut b = wm.initial(rows);
    for j in 0..=last {
        let mut obs = Vec::with_capacity(rows * 2 * od);
        let mut prev = Vec::with_capacity(rows);
        for t in trajs {
            let i = j.min(t.len());
            let o = if i == t.len() { &t.final_obs } else { &t.steps[i].obs };
            obs.extend_from_slice(&o[0]);
            obs.extend_from_slice(&o[1]);
            prev.push(if j > 0 && !t.is_empty() { t.steps[(j - 1).min(t.len() - 1)].actions } else { [0, 0] });
        }
        b = wm.filter_step(&b, (j > 0).then_some(&prev[..]), &obs, rng);
        let dec = [wm.decode(&b, 0), wm.decode(&b, 1)];
        let ev = wm.event_probs(&b);
        let co = wm.cont_probs(&b);
        for (r, t) in trajs.iter().enumerate() {
            if j > t.len() {
                continue;
            }
            for p in 0..2 {
                for d in 0..od {
                    let e = (dec[p][r * od + d] - obs[r * 2 * od + p * od + d]) as f64;
                    m.recon_mse += e * e;
                }
                n_obs += od;
            }
            if j > 0 {
                let st = &t.steps[j - 1];
                for e in 0..ne {
                    m.reward_logloss += bce(ev[r * ne + e] as f64, st.events[e] as f64);
                }
                n_ev += ne;
                m.cont_logloss += bce(co[r] as f64, st.cont as u8 as f64);
                n_c += 1;
            }
        }
    }
    m.recon_mse /= n_obs.max(1) as f64;
    m.reward_logloss /= n_ev.max(1) as f64;
    m.cont_logloss /= n_c.max(1) as f64;
    m
}
