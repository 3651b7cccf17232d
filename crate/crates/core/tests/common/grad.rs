//! Finite-difference suites shared by the gradient tests and the acceptance
//! report.

use super::{away_from, fd_check, uniform, weighted_sum};
use rand::Rng as _;
use std::collections::BTreeMap;
use xpm_core::nn::{categorical_sample_st, kl_per_dist, mixed_logits, Activation, Gru, Mlp, Module, StopGrad};
use xpm_core::rng::{self, Rng};
use xpm_core::tensor::{Graph, NodeId, Tensor};
use xpm_core::trainer::{agent_loss, pg_loss, PgGroup};
use xpm_core::world_model::{wm_anchor_loss, wm_loss, LatentLayout, SeqBatch, WmIds, WmLossConfig, WmShape, WorldModel};

pub const CONFIGS: usize = 20;
pub const OP_TOL: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-3;

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId>;

struct Case {
    params: Vec<Tensor<f64>>,
    f: OpFn,
}

fn case(params: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId + 'static) -> Case {
    Case { params, f: Box::new(f) }
}

fn dims(rng: &mut Rng) -> (usize, usize) {
    (rng.gen_range(1..=4), rng.gen_range(1..=5))
}

fn one_hot_rows(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<f64> {
    let mut d = vec![0.0; rows * cols];
    for r in 0..rows {
        d[r * cols + rng.gen_range(0..cols)] = 1.0;
    }
    Tensor::new(vec![rows, cols], d).unwrap()
}

fn op_case(name: &str, rng: &mut Rng) -> Case {
    let (m, n) = dims(rng);
    let u = |rng: &mut Rng| uniform(&[m, n], -2.0, 2.0, rng);
    match name {
        "matmul" => {
            let k = rng.gen_range(1..=4);
            case(vec![uniform(&[m, k], -1.0, 1.0, rng), uniform(&[k, n], -1.0, 1.0, rng)], |g, p| g.matmul(p[0], p[1]))
        }
        "add_bias" => case(vec![u(rng), uniform(&[n], -1.0, 1.0, rng)], |g, p| g.add_bias(p[0], p[1])),
        "add" => case(vec![u(rng), u(rng)], |g, p| g.add(p[0], p[1])),
        "sub" => case(vec![u(rng), u(rng)], |g, p| g.sub(p[0], p[1])),
        "mul" => case(vec![u(rng), u(rng)], |g, p| g.mul(p[0], p[1])),
        "scale" => {
            let k = rng.gen_range(-3.0..3.0);
            case(vec![u(rng)], move |g, p| g.scale(p[0], k))
        }
        "neg" => case(vec![u(rng)], |g, p| g.neg(p[0])),
        "add_scalar" => {
            let c = rng.gen_range(-3.0..3.0);
            case(vec![u(rng)], move |g, p| g.add_scalar(p[0], c))
        }
        "one_minus" => case(vec![u(rng)], |g, p| g.one_minus(p[0])),
        "leaky_relu" => {
            let s = rng.gen_range(0.01..0.3);
            case(vec![away_from(&[m, n], 0.0, 2.0, 0.05, rng)], move |g, p| g.leaky_relu(p[0], s))
        }
        "tanh" => case(vec![u(rng)], |g, p| g.tanh(p[0])),
        "sigmoid" => case(vec![u(rng)], |g, p| g.sigmoid(p[0])),
        "exp" => case(vec![u(rng)], |g, p| g.exp(p[0])),
        "log" => case(vec![uniform(&[m, n], 0.2, 3.0, rng)], |g, p| g.log(p[0])),
        "log_softmax" => case(vec![u(rng)], |g, p| g.log_softmax(p[0])),
        "softmax" => case(vec![u(rng)], |g, p| g.softmax(p[0])),
        "sum" => case(vec![u(rng)], |g, p| g.sum(p[0])),
        "mean" => case(vec![u(rng)], |g, p| g.mean(p[0])),
        "sum_rows" => case(vec![u(rng)], |g, p| g.sum_rows(p[0])),
        "concat_cols" => {
            let parts = rng.gen_range(1..=3);
            let ps = (0..parts).map(|_| uniform(&[m, rng.gen_range(1..=3)], -2.0, 2.0, rng)).collect();
            case(ps, |g, p| g.concat_cols(p))
        }
        "slice_cols" => {
            let start = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - start);
            case(vec![u(rng)], move |g, p| g.slice_cols(p[0], start, len))
        }
        "reshape" => case(vec![u(rng)], move |g, p| g.reshape(p[0], &[n, m])),
        "clamp_min" => {
            let f = rng.gen_range(-1.0..1.0);
            case(vec![away_from(&[m, n], f, 2.0, 0.05, rng)], move |g, p| g.clamp_min(p[0], f))
        }
        "straight_through" => {
            let sample = one_hot_rows(m, n, rng);
            case(vec![u(rng)], move |g, p| {
                let probs = g.softmax(p[0]);
                g.straight_through(probs, sample.clone())
            })
        }
        "select_cols" => {
            let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
            case(vec![u(rng)], move |g, p| g.select_cols(p[0], &idx))
        }
        "bce_with_logits" => {
            let t: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.0..1.0)).collect();
            case(vec![uniform(&[m, n], -4.0, 4.0, rng)], move |g, p| g.bce_with_logits(p[0], &t))
        }
        "mixed_logits" => {
            let mix = rng.gen_range(0.0..0.2);
            case(vec![u(rng)], move |g, p| mixed_logits(g, p[0], mix))
        }
        "kl_per_dist" => case(vec![u(rng), u(rng)], |g, p| {
            let a = g.log_softmax(p[0]);
            let b = g.log_softmax(p[1]);
            kl_per_dist(g, a, b, StopGrad::None)
        }),
        "kl_stop_p" | "kl_stop_q" => {
            let stop = if name == "kl_stop_p" { StopGrad::P } else { StopGrad::Q };
            case(vec![u(rng), u(rng)], move |g, p| {
                let a = g.log_softmax(p[0]);
                let b = g.log_softmax(p[1]);
                kl_per_dist(g, a, b, stop)
            })
        }
        "categorical_sample_st" => {
            let classes = rng.gen_range(2..=4);
            let groups = rng.gen_range(1..=3);
            let seed = rng.gen();
            case(vec![uniform(&[m, classes * groups], -2.0, 2.0, rng)], move |g, p| {
                let mut r = rng::from_u64(seed);
                categorical_sample_st(g, p[0], classes, 0.01, &mut r).sample
            })
        }
        "gru" => {
            let (input, hidden) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let gru = Gru::<f64>::new(input, hidden, rng);
            let mut ps: Vec<Tensor<f64>> = gru.params().into_iter().cloned().collect();
            ps.push(uniform(&[m, hidden], -1.0, 1.0, rng));
            ps.push(uniform(&[m, input], -1.0, 1.0, rng));
            case(ps, move |g, p| gru.forward(g, &p[..4], p[4], p[5]).unwrap())
        }
        "mlp" => {
            let sizes = [rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=3)];
            let mlp = Mlp::<f64>::new(&sizes, Activation::Tanh, rng);
            let mut ps: Vec<Tensor<f64>> = mlp.params().into_iter().cloned().collect();
            ps.push(uniform(&[m, sizes[0]], -1.0, 1.0, rng));
            let k = ps.len() - 1;
            case(ps, move |g, p| mlp.forward(g, &p[..k], p[k]).unwrap())
        }
        other => panic!("no generator for {other}"),
    }
}

pub const OPS: [&str; 32] = [
    "matmul",
    "add_bias",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "add_scalar",
    "one_minus",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "log_softmax",
    "softmax",
    "sum",
    "mean",
    "sum_rows",
    "concat_cols",
    "slice_cols",
    "reshape",
    "clamp_min",
    "straight_through",
    "select_cols",
    "bce_with_logits",
    "mixed_logits",
    "kl_per_dist",
    "kl_stop_p",
    "kl_stop_q",
    "categorical_sample_st",
    "gru",
];

/// Worst relative error of `op` over `configs` random configurations.
pub fn op_worst(op: &str, configs: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs {
        let mut rng = rng::stream(11, op, &[c as u64]);
        let cs = op_case(op, &mut rng);
        let f = cs.f;
        let e = fd_check(&cs.params, 200, &mut rng, |g, p| {
            let ids: Vec<NodeId> = p.iter().map(|t| g.param(t.clone())).collect();
            let y = f(g, &ids);
            (weighted_sum(g, y, c as u64), ids)
        });
        worst = worst.max(e);
    }
    worst
}

/// `(name, worst error)` for every primitive and layer.
pub fn op_suite(configs: usize) -> Vec<(&'static str, f64)> {
    OPS.iter().chain(["mlp"].iter()).map(|&op| (op, op_worst(op, configs))).collect()
}

fn random_group(label: &'static str, weight: f64, critic: usize, din: usize, cin: usize, na: usize, rng: &mut Rng) -> PgGroup {
    let rows = rng.gen_range(2..=6);
    PgGroup {
        label,
        weight,
        actor_in: (0..rows * din).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        actions: (0..rows).map(|_| rng.gen_range(0..na)).collect(),
        adv: (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        critic,
        critic_in: (0..rows * cin).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        targets: (0..rows).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    }
}

fn mlp_from(p: &[Tensor<f64>]) -> Mlp<f64> {
    Mlp::from_tensors(p.to_vec(), Activation::LeakyRelu).unwrap()
}

/// Policy-gradient loss alone, and together with the value regressions of
/// two critics.
pub fn pg_worst(configs: usize, with_values: bool) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs {
        let mut rng = rng::stream(12, "pg", &[c as u64, with_values as u64]);
        let (din, cin, na) = (rng.gen_range(2..=5), rng.gen_range(2..=5), rng.gen_range(2..=5));
        let actor = Mlp::<f64>::new(&[din, 8, 8, na], Activation::LeakyRelu, &mut rng);
        let critics: Vec<Mlp<f64>> = (0..2).map(|_| Mlp::new(&[cin, 8, 1], Activation::LeakyRelu, &mut rng)).collect();
        let lxp = rng.gen_range(0.0..1.0);
        let groups = vec![
            random_group("sp", 1.0, 0, din, cin, na, &mut rng),
            random_group("xp", -lxp, 1, din, cin, na, &mut rng),
            random_group("mp", rng.gen_range(0.0..1.0), 0, din, cin, na, &mut rng),
        ];
        let ent = rng.gen_range(0.0..0.1);
        let na_p = actor.n_params();
        let nc = critics[0].n_params();
        let mut params: Vec<Tensor<f64>> = actor.params().into_iter().cloned().collect();
        if with_values {
            for cr in &critics {
                params.extend(cr.params().into_iter().cloned());
            }
        }
        let e = fd_check(&params, 120, &mut rng, |g, p| {
            let actor = mlp_from(&p[..na_p]);
            if with_values {
                let critics: BTreeMap<usize, Mlp<f64>> =
                    (0..2).map(|k| (k, mlp_from(&p[na_p + k * nc..na_p + (k + 1) * nc]))).collect();
                let l = agent_loss(g, &actor, &critics, &groups, ent).unwrap();
                let mut ids = l.actor_ids.clone();
                for v in l.critic_ids.values() {
                    ids.extend(v);
                }
                (l.total, ids)
            } else {
                let ids = xpm_core::nn::bind(g, &actor, true);
                (pg_loss(g, &actor, &ids, &groups, ent).unwrap().loss, ids)
            }
        });
        worst = worst.max(e);
    }
    worst
}

/// A world model small enough for coordinate-wise differencing.
pub fn tiny_wm(rng: &mut Rng) -> WorldModel<f64> {
    let shape = WmShape {
        layout: LatentLayout { n: 4, k: 2, classes: 3 },
        deter: 5,
        hidden: 6,
        layers: 1,
        head_layers: 1,
        unimix: 0.01,
        actor_uses_h: true,
    };
    let mut wm = WorldModel::new(shape, 3, 2, 4, rng).unwrap();
    // Fresh biases and the zero initial state put first-step pre-activations
    // exactly on the LeakyReLU kink; jitter moves the check to a generic point.
    for p in wm.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    wm
}

pub fn random_batch(wm: &WorldModel<f64>, rows: usize, len: usize, rng: &mut Rng) -> SeqBatch {
    SeqBatch {
        rows,
        len,
        obs: (0..len).map(|_| (0..rows * 2 * wm.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        prev: (0..len - 1)
            .map(|_| (0..rows).map(|_| [rng.gen_range(0..wm.n_actions), rng.gen_range(0..wm.n_actions)]).collect())
            .collect(),
        events: (0..len)
            .map(|t| (0..rows * wm.n_events).map(|_| if t > 0 && rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect())
            .collect(),
        cont: (0..len).map(|t| (0..rows).map(|_| if t > 0 && rng.gen_bool(0.2) { 0.0 } else { 1.0 }).collect()).collect(),
    }
}

fn rebuild(wm: &WorldModel<f64>, p: &[Tensor<f64>]) -> WorldModel<f64> {
    WorldModel::from_tensors(wm.shape.clone(), wm.obs_dim, wm.n_actions, wm.n_events, p.to_vec()).unwrap()
}

/// Full world-model loss, alternating between an inactive, a partly active
/// and a saturating free-nats floor.
pub fn wm_worst(configs: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs {
        let mut rng = rng::stream(13, "wm", &[c as u64]);
        let wm = tiny_wm(&mut rng);
        let batch = random_batch(&wm, 2, 3, &mut rng);
        let cfg = WmLossConfig {
            beta: rng.gen_range(0.5..2.0),
            free_nats: [0.0, 0.02, 50.0][c % 3],
            ..WmLossConfig::default()
        };
        let seed: u64 = rng.gen();
        let params: Vec<Tensor<f64>> = wm.params().into_iter().cloned().collect();
        let e = fd_check(&params, 80, &mut rng, |g, p| {
            let w = rebuild(&wm, p);
            let ids = WmIds::bind(g, &w, true);
            let mut r = rng::from_u64(seed);
            let parts = wm_loss(g, &w, &ids, &batch, &cfg, &mut r).unwrap();
            (parts.total, ids.all)
        });
        worst = worst.max(e);
    }
    worst
}

/// Anchor KL with respect to the current model; the snapshot is a constant.
pub fn anchor_worst(configs: usize) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..configs {
        let mut rng = rng::stream(14, "anchor", &[c as u64]);
        let wm = tiny_wm(&mut rng);
        let snap = tiny_wm(&mut rng);
        let batch = random_batch(&wm, 2, 3, &mut rng);
        let coef = rng.gen_range(0.5..2.0);
        let seed: u64 = rng.gen();
        let params: Vec<Tensor<f64>> = wm.params().into_iter().cloned().collect();
        let e = fd_check(&params, 80, &mut rng, |g, p| {
            let w = rebuild(&wm, p);
            let ids = WmIds::bind(g, &w, true);
            let sids = WmIds::bind(g, &snap, false);
            let mut r = rng::from_u64(seed);
            let l = wm_anchor_loss(g, &w, &ids, &snap, &sids, &batch, coef, &mut r).unwrap();
            (l, ids.all)
        });
        worst = worst.max(e);
    }
    worst
}
