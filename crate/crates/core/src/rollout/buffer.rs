use super::{TrajKind, Trajectory};
use crate::env::GameState;
use crate::error::RolloutError;
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

pub const BUFFER_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Sp,
    Xp,
    /// SP with probability `sp_ratio`, XP otherwise.
    Both,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    seq: u64,
    traj: Trajectory,
}

/// Self-play and per-partner cross-play trajectory stores owned by one
/// learner, bounded by a shared step capacity with oldest-first eviction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayBuffer {
    version: u32,
    owner: usize,
    capacity: usize,
    sp_ratio: f64,
    next_seq: u64,
    steps: usize,
    sp: VecDeque<Entry>,
    xp: BTreeMap<usize, VecDeque<Entry>>,
}

/// A stored pre-action state, with its trajectory for context.
#[derive(Clone, Copy, Debug)]
pub struct StateRef<'a> {
    pub traj: &'a Trajectory,
    pub t: usize,
}

impl StateRef<'_> {
    pub fn state(&self) -> &GameState {
        &self.traj.steps[self.t].state
    }

    /// Seat of the buffer owner in the source trajectory (seat 0 for SP).
    pub fn seat_of(&self, agent: usize) -> usize {
        self.traj.seats_of(agent).first().copied().unwrap_or(0)
    }
}

fn sample_from<'a>(store: &[&'a VecDeque<Entry>], n: usize, rng: &mut Rng) -> Vec<StateRef<'a>> {
    let trajs: Vec<&Trajectory> = store.iter().flat_map(|q| q.iter().map(|e| &e.traj)).collect();
    let mut cum = Vec::with_capacity(trajs.len());
    let mut total = 0;
    for t in &trajs {
        total += t.len();
        cum.push(total);
    }
    (0..n)
        .map(|_| {
            let k = rng.gen_range(0..total);
            let i = cum.partition_point(|&c| c <= k);
            let before = if i == 0 { 0 } else { cum[i - 1] };
            StateRef {
                traj: trajs[i],
                t: k - before,
            }
        })
        .collect()
}

impl ReplayBuffer {
    pub fn new(owner: usize, capacity: usize, sp_ratio: f64) -> Self {
        Self {
            version: BUFFER_VERSION,
            owner,
            capacity,
            sp_ratio,
            next_seq: 0,
            steps: 0,
            sp: VecDeque::new(),
            xp: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn total_steps(&self) -> usize {
        self.steps
    }

    pub fn sp_len(&self) -> usize {
        self.sp.len()
    }

    pub fn xp_partners(&self) -> Vec<usize> {
        self.xp.iter().filter(|(_, q)| !q.is_empty()).map(|(&k, _)| k).collect()
    }

    /// Stores a live SP or XP trajectory; evicts the oldest trajectories
    /// across both stores until the capacity holds.
    pub fn add(&mut self, traj: Trajectory) -> Result<(), RolloutError> {
        if traj.len() > self.capacity {
            return Err(RolloutError::TooLarge {
                steps: traj.len(),
                capacity: self.capacity,
            });
        }
        if traj.is_empty() {
            return Ok(());
        }
        let partner = match traj.kind {
            TrajKind::Sp => None,
            TrajKind::Xp => Some(
                traj.partner_of(self.owner)
                    .ok_or_else(|| RolloutError::EmptyBuffer("xp trajectory without the owner".into()))?,
            ),
            TrajKind::Mp | TrajKind::Simulated => {
                return Err(RolloutError::EmptyBuffer("only live SP/XP trajectories are stored".into()))
            }
        };
        while self.steps + traj.len() > self.capacity {
            self.evict_oldest();
        }
        self.steps += traj.len();
        let e = Entry {
            seq: self.next_seq,
            traj,
        };
        self.next_seq += 1;
        match partner {
            None => self.sp.push_back(e),
            Some(k) => self.xp.entry(k).or_default().push_back(e),
        }
        Ok(())
    }

    fn evict_oldest(&mut self) {
        let mut best: Option<(u64, Option<usize>)> = self.sp.front().map(|e| (e.seq, None));
        for (&k, q) in &self.xp {
            if let Some(e) = q.front() {
                if best.is_none_or(|(s, _)| e.seq < s) {
                    best = Some((e.seq, Some(k)));
                }
            }
        }
        let removed = match best {
            Some((_, None)) => self.sp.pop_front(),
            Some((_, Some(k))) => self.xp.get_mut(&k).and_then(|q| q.pop_front()),
            None => None,
        };
        if let Some(e) = removed {
            self.steps -= e.traj.len();
        }
    }

    pub fn sample_states(&self, which: Partition, n: usize, rng: &mut Rng) -> Result<Vec<StateRef<'_>>, RolloutError> {
        let sp: Vec<&VecDeque<Entry>> = if self.sp.is_empty() { vec![] } else { vec![&self.sp] };
        let xp: Vec<&VecDeque<Entry>> = self.xp.values().filter(|q| !q.is_empty()).collect();
        match which {
            Partition::Sp if sp.is_empty() => Err(RolloutError::EmptyBuffer("sp".into())),
            Partition::Xp if xp.is_empty() => Err(RolloutError::EmptyBuffer("xp".into())),
            Partition::Sp => Ok(sample_from(&sp, n, rng)),
            Partition::Xp => Ok(sample_from(&xp, n, rng)),
            Partition::Both => match (sp.is_empty(), xp.is_empty()) {
                (true, true) => Err(RolloutError::EmptyBuffer("sp and xp".into())),
                (false, true) => Ok(sample_from(&sp, n, rng)),
                (true, false) => Ok(sample_from(&xp, n, rng)),
                (false, false) => {
                    let n_sp = (0..n).filter(|_| rng.gen::<f64>() < self.sp_ratio).count();
                    let mut out = sample_from(&sp, n_sp, rng);
                    out.extend(sample_from(&xp, n - n_sp, rng));
                    Ok(out)
                }
            },
        }
    }

    /// States from cross-play against one partner.
    pub fn sample_xp_states(&self, partner: usize, n: usize, rng: &mut Rng) -> Result<Vec<StateRef<'_>>, RolloutError> {
        match self.xp.get(&partner) {
            Some(q) if !q.is_empty() => Ok(sample_from(&[q], n, rng)),
            _ => Err(RolloutError::EmptyBuffer(format!("xp partner {partner}"))),
        }
    }

    /// Partner with the highest mean return over its latest `window` stored
    /// XP trajectories; ties go to the lowest id.
    pub fn max_xp_partner(&self, window: usize) -> Result<usize, RolloutError> {
        let mut best: Option<(usize, f64)> = None;
        for (&k, q) in &self.xp {
            if q.is_empty() {
                continue;
            }
            let recent: Vec<f64> = q.iter().rev().take(window.max(1)).map(|e| e.traj.ret()).collect();
            let mean = recent.iter().sum::<f64>() / recent.len() as f64;
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some((k, mean));
            }
        }
        best.map(|(k, _)| k).ok_or_else(|| RolloutError::EmptyBuffer("xp".into()))
    }

    /// Every stored trajectory of the partition, oldest first within a store.
    pub fn trajectories(&self, which: Partition) -> Vec<&Trajectory> {
        let sp = self.sp.iter().map(|e| &e.traj);
        let xp = self.xp.values().flat_map(|q| q.iter().map(|e| &e.traj));
        match which {
            Partition::Sp => sp.collect(),
            Partition::Xp => xp.collect(),
            Partition::Both => sp.chain(xp).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(std::io::Error::other)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let b: Self = serde_json::from_reader(f).map_err(std::io::Error::other)?;
        if b.version != BUFFER_VERSION {
            return Err(std::io::Error::other(format!(
                "buffer checkpoint version {} (expected {BUFFER_VERSION})",
                b.version
            )));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Game, Mppmr};
    use crate::rollout::Step;

    fn traj(kind: TrajKind, seats: [usize; 2], len: usize, reward: f64) -> Trajectory {
        let g = Game::Mppmr(Mppmr::default());
        let s = g.reset();
        let obs = g.observe(&s);
        let step = |i: usize| {
            let mut st = s.clone();
            if let GameState::Mppmr(m) = &mut st {
                m.t = i;
            }
            Step {
                state: st,
                obs: obs.clone(),
                actions: [0, 0],
                reward,
                events: vec![],
                cont: true,
            }
        };
        Trajectory {
            kind,
            seats,
            steps: (0..len).map(step).collect(),
            final_state: s.clone(),
            final_obs: obs.clone(),
            switch_time: None,
            suffix_seed: None,
            prefix_steps: 0,
        }
    }

    #[test]
    fn single_state_is_returned() {
        let mut b = ReplayBuffer::new(0, 100, 0.5);
        b.add(traj(TrajKind::Sp, [0, 0], 1, 0.0)).unwrap();
        let s = b.sample_states(Partition::Sp, 1, &mut crate::rng::from_u64(0)).unwrap();
        assert_eq!(s[0].t, 0);
        assert!(matches!(
            b.sample_states(Partition::Xp, 1, &mut crate::rng::from_u64(0)),
            Err(RolloutError::EmptyBuffer(_))
        ));
    }

    #[test]
    fn oldest_first_eviction() {
        let mut b = ReplayBuffer::new(0, 10, 0.5);
        for _ in 0..15 {
            b.add(traj(TrajKind::Sp, [0, 0], 1, 0.0)).unwrap();
        }
        assert_eq!(b.total_steps(), 10);
        assert_eq!(b.sp.front().unwrap().seq, 5);
        // eviction crosses partitions by age
        let mut b = ReplayBuffer::new(0, 6, 0.5);
        b.add(traj(TrajKind::Xp, [0, 1], 3, 0.0)).unwrap();
        b.add(traj(TrajKind::Sp, [0, 0], 3, 0.0)).unwrap();
        b.add(traj(TrajKind::Sp, [0, 0], 2, 0.0)).unwrap();
        assert!(b.xp_partners().is_empty());
        assert_eq!(b.total_steps(), 5);
        assert!(matches!(
            b.add(traj(TrajKind::Sp, [0, 0], 7, 0.0)),
            Err(RolloutError::TooLarge { steps: 7, capacity: 6 })
        ));
    }

    #[test]
    fn max_partner_and_ties() {
        let mut b = ReplayBuffer::new(0, 100, 0.5);
        b.add(traj(TrajKind::Xp, [0, 1], 1, 5.0)).unwrap();
        assert_eq!(b.max_xp_partner(10).unwrap(), 1);
        b.add(traj(TrajKind::Xp, [2, 0], 1, 9.0)).unwrap();
        assert_eq!(b.max_xp_partner(10).unwrap(), 2);
        let mut b = ReplayBuffer::new(0, 100, 0.5);
        b.add(traj(TrajKind::Xp, [0, 3], 1, 7.0)).unwrap();
        b.add(traj(TrajKind::Xp, [0, 1], 1, 7.0)).unwrap();
        assert_eq!(b.max_xp_partner(10).unwrap(), 1);
    }

    #[test]
    fn window_uses_latest_trajectories() {
        let mut b = ReplayBuffer::new(0, 100, 0.5);
        b.add(traj(TrajKind::Xp, [0, 1], 1, 100.0)).unwrap();
        b.add(traj(TrajKind::Xp, [0, 1], 1, 0.0)).unwrap();
        b.add(traj(TrajKind::Xp, [0, 2], 1, 1.0)).unwrap();
        assert_eq!(b.max_xp_partner(1).unwrap(), 2);
        assert_eq!(b.max_xp_partner(2).unwrap(), 1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ReplayBuffer::new(0, 100, 0.5);
        b.add(traj(TrajKind::Xp, [0, 1], 4, 2.0)).unwrap();
        let p = dir.path().join("buf.json");
        b.save(&p).unwrap();
        let c = ReplayBuffer::load(&p).unwrap();
        assert_eq!(c.trajectories(Partition::Both), b.trajectories(Partition::Both));
    }
}
