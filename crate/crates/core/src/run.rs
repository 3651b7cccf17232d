//! Sequential population training and the files a run leaves behind.

use crate::config::RunConfig;
use crate::eval::{self, convention_label, crossplay_matrix, save_population, self_sabotage_fraction, Population};
use crate::error::{ArchiveError, TrainError};
use crate::rng;
use crate::trainer::{critic_dim, train_modelfree, Agent, IterReport, Method};
use crate::xpm::{train_agent_m, AgentReport, ExactSim, WmLossRecord, WmSim};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const ARCHIVE_DIR: &str = "archive";
pub const STEPS_CSV: &str = "steps.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const WM_LOSS_CSV: &str = "wm_loss.csv";
pub const RUN_MANIFEST: &str = "run.json";

/// One training iteration (LIPO/CoMeDi) or collection round (XPM).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub agent: usize,
    pub iter: usize,
    pub real_steps: usize,
    pub simulated_steps: usize,
    pub sp_return: f64,
    pub xp_return: Option<f64>,
    pub mp_return: Option<f64>,
    pub sim_sp_return: Option<f64>,
    pub sim_xp_return: Option<f64>,
    pub k_star: Option<usize>,
    pub pg_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub min_prob: f64,
    pub wm_loss: Option<f64>,
}

/// Real and simulated environment steps per training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    /// `phase1` for world-model pre-training, `agent` otherwise.
    pub stage: String,
    pub agent: Option<usize>,
    pub real_steps: usize,
    pub simulated_steps: usize,
    pub cumulative_real_steps: usize,
    /// `fixed` for iteration-count training, `plateau` or `budget` for XPM
    /// (budget means the plateau test never fired).
    pub status: String,
}

pub struct TrainOutput {
    pub population: Population,
    pub steps: Vec<StepRow>,
    pub metrics: Vec<MetricRow>,
    pub wm_log: Vec<WmLossRecord>,
}

fn modelfree_rows(agent: usize, reps: &[IterReport]) -> Vec<MetricRow> {
    reps.iter()
        .enumerate()
        .map(|(i, r)| MetricRow {
            agent,
            iter: i,
            real_steps: r.real_steps,
            simulated_steps: r.simulated_steps,
            sp_return: r.sp_return,
            xp_return: (!r.xp_returns.is_empty()).then(|| r.xp_returns.values().sum::<f64>() / r.xp_returns.len() as f64),
            mp_return: r.mp_return,
            k_star: r.k_star,
            pg_loss: r.stats.pg_loss,
            value_loss: r.stats.value_loss,
            entropy: r.stats.entropy,
            min_prob: r.stats.min_prob,
            ..MetricRow::default()
        })
        .collect()
}

fn xpm_rows(rep: &AgentReport) -> Vec<MetricRow> {
    rep.rounds
        .iter()
        .map(|r| MetricRow {
            agent: rep.agent,
            iter: r.round,
            real_steps: r.real_steps,
            simulated_steps: r.simulated_steps,
            sp_return: r.live_sp_return,
            xp_return: r.live_xp_return,
            mp_return: None,
            sim_sp_return: Some(r.last.sim_sp_return),
            sim_xp_return: r.last.sim_xp_return,
            k_star: r.last.k_star,
            pg_loss: r.last.stats.pg_loss,
            value_loss: r.last.stats.value_loss,
            entropy: r.last.stats.entropy,
            min_prob: r.last.stats.min_prob,
            wm_loss: r.last.wm_loss,
        })
        .collect()
}

/// Trains `cfg.agents` agents one after another, each against its frozen
/// predecessors.
pub fn train_population(cfg: &RunConfig) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let game = cfg.game()?;
    let mut agents: Vec<Agent> = Vec::with_capacity(cfg.agents);
    let mut steps = Vec::new();
    let mut metrics = Vec::new();
    let mut cumulative = 0;

    let mut wm_sim = if cfg.method == Method::XpmWm {
        let mut r = rng::stream(cfg.seed, "wm-phase1", &[]);
        let mut sim = WmSim::new(game.clone(), cfg.wm.clone(), &mut r)?;
        let data = sim.phase1_data(&mut r)?;
        let real: usize = data.iter().map(|t| t.len()).sum();
        sim.pretrain(data, &mut r)?;
        log::info!("world model pre-trained on {real} steps");
        cumulative += real;
        steps.push(StepRow {
            stage: "phase1".into(),
            agent: None,
            real_steps: real,
            simulated_steps: 0,
            cumulative_real_steps: cumulative,
            status: "fixed".into(),
        });
        Some(sim)
    } else {
        None
    };
    let mut exact = ExactSim { game: game.clone() };

    for m in 0..cfg.agents {
        let mut r = rng::stream(cfg.seed, "agent", &[m as u64]);
        let (real, sim_steps, status) = match cfg.method {
            Method::Lipo | Method::Comedi => {
                let mut a = Agent::new(m, game.obs_dim(), game.n_actions(), critic_dim(&game), &cfg.actor, &cfg.critic, &mut r);
                let reps = train_modelfree(&game, &mut a, &agents, &cfg.modelfree, cfg.method, &mut r)?;
                metrics.extend(modelfree_rows(m, &reps));
                agents.push(a);
                (reps.iter().map(|x| x.real_steps).sum(), 0, "fixed")
            }
            Method::XpmSim | Method::XpmWm => {
                let (mut a, sim): (Agent, &mut dyn crate::xpm::Simulator) = match wm_sim.as_mut() {
                    Some(s) => (s.new_agent(m, (&cfg.actor, &cfg.critic), &mut r), s),
                    None => (
                        Agent::new(m, game.obs_dim(), game.n_actions(), critic_dim(&game), &cfg.actor, &cfg.critic, &mut r),
                        &mut exact,
                    ),
                };
                let rep = train_agent_m(&game, &mut a, &agents, sim, &cfg.xpm, &mut r)?;
                metrics.extend(xpm_rows(&rep));
                if let Some(s) = wm_sim.as_mut() {
                    s.snapshot(m);
                }
                agents.push(a);
                (rep.real_steps, rep.simulated_steps, if rep.plateaued { "plateau" } else { "budget" })
            }
        };
        agents[m].freeze();
        cumulative += real;
        log::info!("agent {m}: {real} real steps, {sim_steps} simulated ({status})");
        steps.push(StepRow {
            stage: "agent".into(),
            agent: Some(m),
            real_steps: real,
            simulated_steps: sim_steps,
            cumulative_real_steps: cumulative,
            status: status.into(),
        });
    }

    let (wm_snapshots, wm_log) = match wm_sim {
        Some(s) => (s.snapshots, s.log),
        None => (BTreeMap::new(), Vec::new()),
    };
    let population = Population {
        method: cfg.method,
        game,
        config: serde_json::to_value(cfg).map_err(|e| TrainError::Config(e.to_string()))?,
        agents,
        wm_snapshots,
    };
    Ok(TrainOutput {
        population,
        steps,
        metrics,
        wm_log,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub method: Method,
    pub env: String,
    pub agents: usize,
    pub workers: usize,
    pub real_step_budget: usize,
    pub total_real_steps: usize,
    pub status: Vec<String>,
    pub config: RunConfig,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ArchiveError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ArchiveError::Invalid(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| ArchiveError::Invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the archive, metrics, step ledger, model losses and run manifest
/// into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, out: &TrainOutput) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir)?;
    save_population(&out.population, &dir.join(ARCHIVE_DIR))?;
    write_csv(&dir.join(STEPS_CSV), &out.steps)?;
    write_csv(&dir.join(METRICS_CSV), &out.metrics)?;
    if !out.wm_log.is_empty() {
        write_csv(&dir.join(WM_LOSS_CSV), &out.wm_log)?;
    }
    let m = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        method: cfg.method,
        env: cfg.env.clone(),
        agents: cfg.agents,
        workers: 1,
        real_step_budget: cfg.xpm.real_step_budget,
        total_real_steps: out.steps.last().map_or(0, |s| s.cumulative_real_steps),
        status: out.steps.iter().filter(|s| s.agent.is_some()).map(|s| s.status.clone()).collect(),
        config: cfg.clone(),
    };
    let mut text = serde_json::to_vec_pretty(&m)?;
    text.push(b'\n');
    fs::write(dir.join(RUN_MANIFEST), text)?;
    Ok(())
}

/// Reads a run's step ledger.
pub fn read_steps(dir: &Path) -> Result<Vec<StepRow>, ArchiveError> {
    let path = dir.join(STEPS_CSV);
    if !path.exists() {
        return Err(ArchiveError::Invalid(format!("no step ledger in {}", dir.display())));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| ArchiveError::Invalid(e.to_string()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ArchiveError::Invalid(format!("{}: {e}", path.display())))
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, ArchiveError> {
    Ok(serde_json::from_slice(&fs::read(dir.join(RUN_MANIFEST))?)?)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), ArchiveError> {
    let mut text = serde_json::to_vec_pretty(v)?;
    text.push(b'\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ArchiveError {
    ArchiveError::Invalid(e.to_string())
}

/// Which population statistic `write_eval` computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalKind {
    Matrix,
    Sabotage,
    Conventions,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] ArchiveError),
}

/// Evaluates `pop` and writes CSV, JSON (and for the matrix an SVG) plus a
/// manifest into `out`.
pub fn write_eval(pop: &Population, kind: EvalKind, episodes: usize, seed: u64, out: &Path) -> Result<String, EvalError> {
    fs::create_dir_all(out).map_err(ArchiveError::from)?;
    let file = |name: &str| fs::File::create(out.join(name)).map_err(ArchiveError::from);
    let summary = match kind {
        EvalKind::Matrix => {
            let r = crossplay_matrix(pop, episodes, seed)?;
            eval::matrix_csv(&r, file("matrix.csv")?).map_err(csv_err)?;
            eval::matrix_long_csv(&r, file("matrix_long.csv")?).map_err(csv_err)?;
            let title = format!("{} on {}", pop.method.name(), pop.game.name());
            fs::write(out.join("matrix.svg"), eval::matrix_svg(&r, &title)).map_err(ArchiveError::from)?;
            write_json(&out.join("matrix.json"), &r)?;
            format!("mean SP {:.2}, mean XP {:?}", r.mean_sp(), r.mean_xp())
        }
        EvalKind::Sabotage => {
            let r = self_sabotage_fraction(pop, episodes, seed)?;
            eval::sabotage_csv(&r, file("sabotage.csv")?).map_err(csv_err)?;
            write_json(&out.join("sabotage.json"), &r)?;
            format!("average self-sabotage {:?}", r.average)
        }
        EvalKind::Conventions => {
            let r = convention_label(pop, episodes, seed)?;
            eval::conventions_csv(&r, file("conventions.csv")?).map_err(csv_err)?;
            write_json(&out.join("conventions.json"), &r)?;
            format!("convention coverage {}", r.coverage)
        }
    };
    let cfg = serde_json::to_vec(&pop.config).map_err(ArchiveError::from)?;
    let name = serde_json::to_value(kind).map_err(ArchiveError::from)?;
    write_json(
        &out.join(format!("{}_manifest.json", name.as_str().unwrap_or("eval"))),
        &serde_json::json!({
            "kind": kind,
            "method": pop.method,
            "env": pop.game.name(),
            "agents": pop.len(),
            "config_hash": hex::encode(Sha256::digest(cfg)),
            "seed": seed,
            "episodes": episodes,
            "code_version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    Ok(summary)
}

/// Cumulative real steps after each trained agent, per run directory, as
/// `scaling.csv` and `scaling.svg`. Point 0 carries any world-model
/// pre-training cost.
pub fn write_scaling_report(runs: &[&Path], out: &Path) -> Result<(), ArchiveError> {
    if runs.is_empty() {
        return Err(ArchiveError::Invalid("no run directories".into()));
    }
    let mut series = Vec::new();
    let mut rows = Vec::new();
    for dir in runs {
        let steps = read_steps(dir)?;
        let manifest = read_manifest(dir)?;
        let mut pts = vec![(0, 0)];
        for s in &steps {
            match s.agent {
                None => pts[0].1 = s.cumulative_real_steps,
                Some(m) => pts.push((m + 1, s.cumulative_real_steps)),
            }
        }
        let mut prev = 0;
        for &(x, y) in &pts {
            rows.push(ScalingRow {
                run: dir.display().to_string(),
                method: manifest.method,
                agents_trained: x,
                real_steps: y - prev,
                cumulative_real_steps: y,
            });
            prev = y;
        }
        series.push((format!("{} ({})", manifest.method.name(), dir.display()), pts));
    }
    fs::create_dir_all(out)?;
    write_csv(&out.join("scaling.csv"), &rows)?;
    fs::write(out.join("scaling.svg"), eval::scaling_svg(&series))?;
    write_json(
        &out.join("scaling_manifest.json"),
        &serde_json::json!({ "runs": runs, "code_version": env!("CARGO_PKG_VERSION") }),
    )
}

#[derive(Debug, Serialize)]
struct ScalingRow {
    run: String,
    method: Method,
    agents_trained: usize,
    real_steps: usize,
    cumulative_real_steps: usize,
}
