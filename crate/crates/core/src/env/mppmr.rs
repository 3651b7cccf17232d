//! Point-mass rendezvous: two particles in a square arena must meet at one
//! of four landmarks. Dynamics are closed-form and deterministic.

use crate::error::EnvError;
use serde::{Deserialize, Serialize};

pub const N_ACTIONS: usize = 5;
pub const OBS_DIM: usize = 16;
/// `[p1, v1, p2, v2, t/H]`
pub const STATE_DIM: usize = 9;

/// Unit force direction for `{stay, up, down, left, right}`.
const DIRS: [[f64; 2]; N_ACTIONS] = [[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mppmr {
    pub timestep: f64,
    pub damping: f64,
    pub sensitivity: f64,
    /// Half-width of the square arena.
    pub bound: f64,
    pub landmarks: [[f64; 2]; 4],
    pub starts: [[f64; 2]; 2],
    pub horizon: usize,
    /// Subtracted from the reward of the step that leaves the arena.
    pub oob_penalty: f64,
    /// When false the partner-velocity slots of the observation are zero.
    pub partner_velocity: bool,
}

impl Default for Mppmr {
    fn default() -> Self {
        Self {
            timestep: 0.1,
            damping: 0.25,
            sensitivity: 5.0,
            bound: 1.5,
            landmarks: [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
            starts: [[-0.3, 0.0], [0.3, 0.0]],
            horizon: 50,
            oob_penalty: 100.0,
            partner_velocity: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MppmrState {
    pub pos: [[f64; 2]; 2],
    pub vel: [[f64; 2]; 2],
    pub t: usize,
    pub terminated: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl MppmrState {
    pub fn centroid(&self) -> [f64; 2] {
        [
            0.5 * (self.pos[0][0] + self.pos[1][0]),
            0.5 * (self.pos[0][1] + self.pos[1][1]),
        ]
    }
}

impl Mppmr {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.bound > 0.0) {
            return Err(EnvError::Layout("bound must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(EnvError::Layout("damping must lie in [0, 1)".into()));
        }
        if self.horizon == 0 {
            return Err(EnvError::Layout("horizon must be positive".into()));
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if self.landmarks[i] == self.landmarks[j] {
                    return Err(EnvError::Layout("landmarks must be distinct".into()));
                }
            }
        }
        Ok(())
    }

    pub fn reset(&self) -> MppmrState {
        MppmrState {
            pos: self.starts,
            vel: [[0.0; 2]; 2],
            t: 0,
            terminated: false,
        }
    }

    pub fn out_of_bounds(&self, s: &MppmrState) -> bool {
        s.pos.iter().flatten().any(|v| v.abs() > self.bound)
    }

    /// Index of the landmark closest to `p` (lowest index on ties).
    pub fn nearest_landmark(&self, p: [f64; 2]) -> usize {
        let mut best = 0;
        for (i, &l) in self.landmarks.iter().enumerate() {
            if dist(p, l) < dist(p, self.landmarks[best]) {
                best = i;
            }
        }
        best
    }

    /// `1 − dist(nearest landmark, centroid) − dist(p1, p2)`.
    pub fn reward(&self, s: &MppmrState) -> f64 {
        let c = s.centroid();
        let l = self.landmarks[self.nearest_landmark(c)];
        1.0 - dist(l, c) - dist(s.pos[0], s.pos[1])
    }

    pub fn step(&self, s: &MppmrState, a: [usize; 2]) -> Result<(MppmrState, f64, bool), EnvError> {
        if s.terminated || s.t >= self.horizon {
            return Err(EnvError::Terminated { t: s.t });
        }
        let mut next = s.clone();
        for (p, &ai) in a.iter().enumerate() {
            let d = DIRS
                .get(ai)
                .ok_or(EnvError::InvalidAction { player: p, action: ai })?;
            for k in 0..2 {
                let force = self.sensitivity * d[k];
                next.vel[p][k] = s.vel[p][k] * (1.0 - self.damping) + force * self.timestep;
                next.pos[p][k] = s.pos[p][k] + next.vel[p][k] * self.timestep;
            }
        }
        next.t = s.t + 1;
        let oob = self.out_of_bounds(&next);
        next.terminated = oob || next.t == self.horizon;
        let mut r = self.reward(&next);
        if oob {
            r -= self.oob_penalty;
        }
        let done = next.terminated;
        Ok((next, r, done))
    }

    fn block(&self, s: &MppmrState, me: usize) -> Vec<f32> {
        let other = 1 - me;
        let mut o = Vec::with_capacity(OBS_DIM);
        o.extend(s.pos[me].iter().chain(&s.vel[me]).map(|&v| v as f32));
        o.extend(s.pos[other].iter().map(|&v| v as f32));
        if self.partner_velocity {
            o.extend(s.vel[other].iter().map(|&v| v as f32));
        } else {
            o.extend([0.0; 2]);
        }
        for l in &self.landmarks {
            o.push((l[0] - s.pos[me][0]) as f32);
            o.push((l[1] - s.pos[me][1]) as f32);
        }
        o
    }

    /// `[own pos, own vel, partner pos, partner vel, landmark offsets from self]`.
    pub fn observe(&self, s: &MppmrState) -> [Vec<f32>; 2] {
        [self.block(s, 0), self.block(s, 1)]
    }

    pub fn state_features(&self, s: &MppmrState) -> Vec<f32> {
        let mut f: Vec<f32> = s
            .pos[0]
            .iter()
            .chain(&s.vel[0])
            .chain(&s.pos[1])
            .chain(&s.vel[1])
            .map(|&v| v as f32)
            .collect();
        f.push(s.t as f32 / self.horizon as f32);
        f
    }
}
