#![allow(dead_code)]

pub mod criteria;
pub mod grad;

use rand::seq::SliceRandom;
use rand::Rng as _;
use xpm_core::rng::Rng;
use xpm_core::tensor::{Graph, NodeId, Tensor};

/// Central-difference step.
pub const H: f64 = 1e-6;

/// Denominator floor of the relative error, so gradients that are zero up
/// to rounding compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error between backprop and central differences of the
/// scalar built by `build` with respect to `params`, over at most `coords`
/// random coordinates (all of them when there are fewer).
///
/// `build` must bind `params` in order and return the loss and their ids.
/// It runs once for the analytic gradient and twice per coordinate with the
/// replay tape of the first run, so sampled latents stay smooth functions of
/// the parameters and stop-gradient values stay constant, which is exactly
/// the function backprop differentiates.
pub fn fd_check<F>(params: &[Tensor<f64>], coords: usize, rng: &mut Rng, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Tensor<f64>]) -> (NodeId, Vec<NodeId>),
{
    let mut g = Graph::recording();
    let (loss, ids) = build(&mut g, params);
    assert_eq!(ids.len(), params.len(), "build must bind every parameter");
    let grads = g.backward(loss).expect("finite loss");
    let analytic = grads.collect(&ids);
    let tape = g.tape().expect("recording graph").clone();
    let eval = |p: &[Tensor<f64>]| {
        let mut g = Graph::replaying(tape.clone());
        let (l, _) = build(&mut g, p);
        g.value(l).item()
    };
    let mut all: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
        .collect();
    all.shuffle(rng);
    all.truncate(coords);
    let mut worst = 0.0f64;
    for (i, j) in all {
        let mut p = params.to_vec();
        let x = p[i].data()[j];
        p[i].data_mut()[j] = x + H;
        let up = eval(&p);
        p[i].data_mut()[j] = x - H;
        let down = eval(&p);
        let numeric = (up - down) / (2.0 * H);
        worst = worst.max(rel_err(analytic[i].data()[j], numeric));
    }
    worst
}

/// Tensor with entries uniform in `[lo, hi)`.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Like [`uniform`] on `[-r, r)` but keeping every entry at least `gap`
/// away from `at`.
pub fn away_from(shape: &[usize], at: f64, r: f64, gap: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(gap..r);
            if rng.gen_bool(0.5) {
                at + mag
            } else {
                at - mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Collapses any node to a scalar through a random fixed weighting, so every
/// output element gets its own upstream gradient.
pub fn weighted_sum(g: &mut Graph<f64>, y: NodeId, seed: u64) -> NodeId {
    let mut rng = xpm_core::rng::from_u64(seed);
    let w = uniform(g.shape(y), -1.0, 1.0, &mut rng);
    let w = g.constant(w);
    let p = g.mul(y, w);
    g.sum(p)
}

/// Smallest run of `method` that still exercises every code path.
pub fn tiny(env: &str, method: xpm_core::trainer::Method, agents: usize, seed: u64) -> xpm_core::config::RunConfig {
    use xpm_core::config::{Profile, RunConfig};
    let mut c = RunConfig::new(Profile::Desk, env, method, agents, seed);
    c.actor.hidden = vec![16];
    c.critic.hidden = vec![16];
    c.kitchen_horizon = 30;
    c.modelfree.iterations = 2;
    c.modelfree.sp_episodes = 1;
    c.modelfree.xp_episodes = 1;
    c.modelfree.mp_episodes = 1;
    c.xpm.real_step_budget = 300;
    c.xpm.warmup_episodes = 2;
    c.xpm.plateau_rounds = 0;
    c.xpm.sp_starts = 4;
    c.xpm.xp_starts = 4;
    c.xpm.inner_steps = 1;
    c.wm.pretrain_updates = 3;
    c.wm.scripted_episodes = 2;
    c.wm.random_episodes = 1;
    c.wm.batch_rows = 4;
    c.wm.seq_len = 8;
    c.wm.anchor_rows = 2;
    c.wm.shape.deter = 16;
    c.wm.shape.hidden = 16;
    c.wm.shape.layers = 1;
    c.wm.shape.head_layers = 1;
    c
}
