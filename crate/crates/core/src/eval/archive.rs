//! On-disk populations: `manifest.json` plus one little-endian f32 blob per
//! parameter set, each with its SHA-256.

use super::Population;
use crate::env::Game;
use crate::error::ArchiveError;
use crate::nn::{Activation, Mlp, Module};
use crate::tensor::Tensor;
use crate::trainer::{Agent, Method, NetShape};
use crate::world_model::{WmShape, WorldModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const ARCHIVE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    sha256: String,
    shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MlpEntry {
    activation: Activation,
    #[serde(flatten)]
    blob: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct CriticEntry {
    partner: usize,
    #[serde(flatten)]
    net: MlpEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentEntry {
    id: usize,
    critic_shape: NetShape,
    critic_in: usize,
    actor: MlpEntry,
    critics: Vec<CriticEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WmEntry {
    agent: usize,
    shape: WmShape,
    obs_dim: usize,
    n_actions: usize,
    n_events: usize,
    #[serde(flatten)]
    blob: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    method: Method,
    env: String,
    layout: Option<String>,
    game: Game,
    config: serde_json::Value,
    agents: Vec<AgentEntry>,
    wm_snapshots: Vec<WmEntry>,
}

fn write_blob(dir: &Path, file: String, params: Vec<&Tensor>) -> Result<BlobRef, ArchiveError> {
    let mut bytes = Vec::with_capacity(4 * params.iter().map(|p| p.len()).sum::<usize>());
    for p in &params {
        for v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(&file), &bytes)?;
    Ok(BlobRef {
        file,
        sha256: hex::encode(Sha256::digest(&bytes)),
        shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
    })
}

fn read_blob(dir: &Path, b: &BlobRef) -> Result<Vec<Tensor>, ArchiveError> {
    if b.file.contains(['/', '\\']) || b.file.starts_with('.') {
        return Err(ArchiveError::Invalid(format!("blob name {:?}", b.file)));
    }
    let bytes = fs::read(dir.join(&b.file))?;
    let need: usize = b.shapes.iter().map(|s| 4 * s.iter().product::<usize>()).sum();
    if bytes.len() < need {
        return Err(ArchiveError::Truncated(format!("{}: {} of {need} bytes", b.file, bytes.len())));
    }
    if bytes.len() > need {
        return Err(ArchiveError::Invalid(format!("{}: {} trailing bytes", b.file, bytes.len() - need)));
    }
    if hex::encode(Sha256::digest(&bytes)) != b.sha256 {
        return Err(ArchiveError::Checksum(b.file.clone()));
    }
    let mut vals = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")));
    let mut out = Vec::with_capacity(b.shapes.len());
    for s in &b.shapes {
        let n = s.iter().product();
        out.push(Tensor::new(s.clone(), vals.by_ref().take(n).collect())?);
    }
    Ok(out)
}

fn write_mlp(dir: &Path, file: String, m: &Mlp) -> Result<MlpEntry, ArchiveError> {
    Ok(MlpEntry {
        activation: m.activation(),
        blob: write_blob(dir, file, m.params())?,
    })
}

fn read_mlp(dir: &Path, e: &MlpEntry) -> Result<Mlp, ArchiveError> {
    Ok(Mlp::from_tensors(read_blob(dir, &e.blob)?, e.activation)?)
}

/// Writes `pop` into `dir`, creating it if needed.
pub fn save_population(pop: &Population, dir: &Path) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir)?;
    let mut agents = Vec::with_capacity(pop.len());
    for a in &pop.agents {
        let actor = write_mlp(dir, format!("agent{}_actor.bin", a.id), &a.actor)?;
        let critics = a
            .critics
            .iter()
            .map(|(&k, c)| {
                Ok(CriticEntry {
                    partner: k,
                    net: write_mlp(dir, format!("agent{}_critic{k}.bin", a.id), c)?,
                })
            })
            .collect::<Result<_, ArchiveError>>()?;
        agents.push(AgentEntry {
            id: a.id,
            critic_shape: a.critic_shape().clone(),
            critic_in: a.critic_in(),
            actor,
            critics,
        });
    }
    let wm_snapshots = pop
        .wm_snapshots
        .iter()
        .map(|(&k, wm)| {
            Ok(WmEntry {
                agent: k,
                shape: wm.shape.clone(),
                obs_dim: wm.obs_dim,
                n_actions: wm.n_actions,
                n_events: wm.n_events,
                blob: write_blob(dir, format!("wm{k}.bin"), wm.params())?,
            })
        })
        .collect::<Result<_, ArchiveError>>()?;
    let m = Manifest {
        version: ARCHIVE_VERSION,
        method: pop.method,
        env: pop.game.name(),
        layout: pop.game.as_kitchen().map(|k| k.layout.name.clone()),
        game: pop.game.clone(),
        config: pop.config.clone(),
        agents,
        wm_snapshots,
    };
    let mut text = serde_json::to_vec_pretty(&m)?;
    text.push(b'\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Reads a population written by [`save_population`]; every agent comes
/// back frozen.
pub fn load_population(dir: &Path) -> Result<Population, ArchiveError> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != ARCHIVE_VERSION {
        return Err(ArchiveError::Version {
            found,
            expected: ARCHIVE_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(raw)?;
    let mut agents = Vec::with_capacity(m.agents.len());
    for (i, e) in m.agents.iter().enumerate() {
        if e.id != i {
            return Err(ArchiveError::Invalid(format!("agent {} listed at position {i}", e.id)));
        }
        let actor = read_mlp(dir, &e.actor)?;
        let mut critics = BTreeMap::new();
        for c in &e.critics {
            critics.insert(c.partner, read_mlp(dir, &c.net)?);
        }
        agents.push(Agent::from_parts(e.id, actor, critics, e.critic_shape.clone(), e.critic_in, true));
    }
    let mut wm_snapshots = BTreeMap::new();
    for w in &m.wm_snapshots {
        if w.agent >= agents.len() {
            return Err(ArchiveError::Invalid(format!("snapshot for unknown agent {}", w.agent)));
        }
        let t = read_blob(dir, &w.blob)?;
        let wm = WorldModel::from_tensors(w.shape.clone(), w.obs_dim, w.n_actions, w.n_events, t)?;
        wm_snapshots.insert(w.agent, wm);
    }
    Ok(Population {
        method: m.method,
        game: m.game,
        config: m.config,
        agents,
        wm_snapshots,
    })
}
