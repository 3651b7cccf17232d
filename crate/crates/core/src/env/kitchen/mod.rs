//! A small two-chef kitchen: fetch onions, fill a pot with three, wait for
//! the soup to cook, plate it with a bowl and serve it.

mod layout;
pub mod planner;

pub use layout::{Cell, KitchenLayout, Tile, COORDINATION_RING, CRAMPED_ROOM};

use super::{event_reward_to_scalar, EVENTS_PER_PLAYER};
use crate::error::EnvError;
use serde::{Deserialize, Serialize};

pub const N_ACTIONS: usize = 6;
pub const COOK_TIME: u8 = 20;
pub const POT_CAPACITY: u8 = 3;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const NOOP: usize = 4;
pub const INTERACT: usize = 5;

pub const PICKUP_INGREDIENT: usize = 0;
pub const PICKUP_BOWL: usize = 1;
pub const PUT_IN_POT: usize = 2;
pub const PICKUP_SOUP: usize = 3;
pub const DELIVER_SOUP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dir {
    Up,
    Down,
    Left,
    Right,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Down, Dir::Left, Dir::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn offset(self) -> (isize, isize) {
        match self {
            Dir::Up => (-1, 0),
            Dir::Down => (1, 0),
            Dir::Left => (0, -1),
            Dir::Right => (0, 1),
        }
    }

    pub fn from_action(a: usize) -> Option<Dir> {
        Dir::ALL.get(a).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Held {
    Nothing,
    Onion,
    Bowl,
    Soup,
}

impl Held {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotStatus {
    Idle,
    Cooking,
    Ready,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pot {
    pub onions: u8,
    pub timer: u8,
    pub status: PotStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chef {
    pub pos: Cell,
    pub facing: Dir,
    pub held: Held,
}

impl Chef {
    pub fn faced(&self) -> (isize, isize) {
        let (dr, dc) = self.facing.offset();
        (self.pos.0 as isize + dr, self.pos.1 as isize + dc)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KitchenState {
    pub chefs: [Chef; 2],
    pub pots: Vec<Pot>,
    pub t: usize,
    pub terminated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kitchen {
    pub layout: KitchenLayout,
    pub horizon: usize,
}

/// Targets whose nearest-tile offsets appear in observations.
const LANDMARK_TILES: [Tile; 4] = [Tile::OnionSource, Tile::BowlSource, Tile::Pot, Tile::Serve];

impl Kitchen {
    pub fn new(layout: KitchenLayout, horizon: usize) -> Self {
        Self { layout, horizon }
    }

    pub fn builtin(name: &str, horizon: usize) -> Result<Self, EnvError> {
        Ok(Self::new(KitchenLayout::builtin(name)?, horizon))
    }

    pub fn reset(&self) -> KitchenState {
        let chef = |pos| Chef {
            pos,
            facing: Dir::Up,
            held: Held::Nothing,
        };
        KitchenState {
            chefs: [chef(self.layout.starts[0]), chef(self.layout.starts[1])],
            pots: vec![
                Pot {
                    onions: 0,
                    timer: 0,
                    status: PotStatus::Idle
                };
                self.layout.pots.len()
            ],
            t: 0,
            terminated: false,
        }
    }

    fn cell_at(&self, p: (isize, isize)) -> Option<Cell> {
        let (r, c) = p;
        (r >= 0 && c >= 0 && (r as usize) < self.layout.height && (c as usize) < self.layout.width)
            .then_some((r as usize, c as usize))
    }

    fn walkable(&self, p: (isize, isize)) -> Option<Cell> {
        self.cell_at(p).filter(|&c| self.layout.tile(c) == Tile::Floor)
    }

    /// Applies one joint action. Returns the next state, the event vector,
    /// the scalar reward and whether the episode ended.
    pub fn step(&self, s: &KitchenState, a: [usize; 2]) -> Result<(KitchenState, Vec<u8>, f64, bool), EnvError> {
        if s.terminated || s.t >= self.horizon {
            return Err(EnvError::Terminated { t: s.t });
        }
        for (p, &ai) in a.iter().enumerate() {
            if ai >= N_ACTIONS {
                return Err(EnvError::InvalidAction { player: p, action: ai });
            }
        }
        let mut next = s.clone();
        let mut events = vec![0u8; 2 * EVENTS_PER_PLAYER];

        // movement: every move turns the chef; the cell changes only when the
        // target is free floor
        let mut target = [s.chefs[0].pos, s.chefs[1].pos];
        for p in 0..2 {
            if let Some(d) = Dir::from_action(a[p]) {
                next.chefs[p].facing = d;
                let (dr, dc) = d.offset();
                let (r, c) = s.chefs[p].pos;
                if let Some(cell) = self.walkable((r as isize + dr, c as isize + dc)) {
                    target[p] = cell;
                }
            }
        }
        let pos = [s.chefs[0].pos, s.chefs[1].pos];
        let mut moves = [target[0] != pos[0], target[1] != pos[1]];
        if target[0] == target[1] || (target[0] == pos[1] && target[1] == pos[0]) {
            moves = [false, false];
        } else {
            for p in 0..2 {
                let q = 1 - p;
                if target[p] == pos[q] && !moves[q] {
                    moves[p] = false;
                }
            }
        }
        for p in 0..2 {
            if moves[p] {
                next.chefs[p].pos = target[p];
            }
        }

        for p in 0..2 {
            if a[p] == INTERACT {
                if let Some(e) = self.interact(&mut next, p) {
                    events[p * EVENTS_PER_PLAYER + e] = 1;
                }
            }
        }

        for pot in &mut next.pots {
            if pot.status == PotStatus::Cooking {
                pot.timer += 1;
                if pot.timer >= COOK_TIME {
                    pot.status = PotStatus::Ready;
                }
            }
        }
        next.t = s.t + 1;
        next.terminated = next.t == self.horizon;
        let reward = event_reward_to_scalar(&events)?;
        let done = next.terminated;
        Ok((next, events, reward, done))
    }

    fn interact(&self, s: &mut KitchenState, p: usize) -> Option<usize> {
        let cell = self.cell_at(s.chefs[p].faced())?;
        let held = s.chefs[p].held;
        match (self.layout.tile(cell), held) {
            (Tile::OnionSource, Held::Nothing) => {
                s.chefs[p].held = Held::Onion;
                Some(PICKUP_INGREDIENT)
            }
            (Tile::BowlSource, Held::Nothing) => {
                s.chefs[p].held = Held::Bowl;
                Some(PICKUP_BOWL)
            }
            (Tile::Pot, Held::Onion) => {
                let pot = &mut s.pots[self.layout.pot_index(cell)?];
                if pot.status != PotStatus::Idle || pot.onions >= POT_CAPACITY {
                    return None;
                }
                pot.onions += 1;
                if pot.onions == POT_CAPACITY {
                    pot.status = PotStatus::Cooking;
                    pot.timer = 0;
                }
                s.chefs[p].held = Held::Nothing;
                Some(PUT_IN_POT)
            }
            (Tile::Pot, Held::Bowl) => {
                let pot = &mut s.pots[self.layout.pot_index(cell)?];
                if pot.status != PotStatus::Ready {
                    return None;
                }
                *pot = Pot {
                    onions: 0,
                    timer: 0,
                    status: PotStatus::Idle,
                };
                s.chefs[p].held = Held::Soup;
                Some(PICKUP_SOUP)
            }
            (Tile::Serve, Held::Soup) => {
                s.chefs[p].held = Held::Nothing;
                Some(DELIVER_SOUP)
            }
            _ => None,
        }
    }

    fn block_dim(&self) -> usize {
        self.layout.floor.len() + 4 + 4 + 2 * LANDMARK_TILES.len()
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.block_dim() + 3 * self.layout.pots.len() + 1
    }

    fn block(&self, chef: &Chef, out: &mut Vec<f32>) {
        let n = self.layout.floor.len();
        let start = out.len();
        out.resize(start + n + 8, 0.0);
        if let Some(i) = self.layout.floor_index(chef.pos) {
            out[start + i] = 1.0;
        }
        out[start + n + chef.facing.index()] = 1.0;
        out[start + n + 4 + chef.held.index()] = 1.0;
        for t in LANDMARK_TILES {
            let (r, c) = (chef.pos.0 as isize, chef.pos.1 as isize);
            let nearest = self
                .layout
                .cells_of(t)
                .into_iter()
                .min_by_key(|&(tr, tc)| (tr as isize - r).abs() + (tc as isize - c).abs())
                .expect("layout validated");
            out.push((nearest.0 as isize - r) as f32 / self.layout.height as f32);
            out.push((nearest.1 as isize - c) as f32 / self.layout.width as f32);
        }
    }

    /// Per-player vector: `[own block, partner block, pots, t/H]`, where a
    /// block is cell one-hot, facing one-hot, held-item one-hot and offsets
    /// to the nearest onion source, bowl source, pot and serving window.
    pub fn observe(&self, s: &KitchenState) -> [Vec<f32>; 2] {
        let mut pots = Vec::with_capacity(3 * s.pots.len() + 1);
        for pot in &s.pots {
            pots.push(pot.onions as f32 / POT_CAPACITY as f32);
            pots.push(pot.timer as f32 / COOK_TIME as f32);
            pots.push(if pot.status == PotStatus::Ready { 1.0 } else { 0.0 });
        }
        pots.push(s.t as f32 / self.horizon as f32);
        let view = |me: usize| {
            let mut o = Vec::with_capacity(self.obs_dim());
            self.block(&s.chefs[me], &mut o);
            self.block(&s.chefs[1 - me], &mut o);
            o.extend_from_slice(&pots);
            o
        };
        [view(0), view(1)]
    }
}
