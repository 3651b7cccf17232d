//! Scripted chefs: breadth-first navigation toward the next useful tile.

use super::{Cell, Dir, Held, Kitchen, KitchenState, PotStatus, Tile, INTERACT, NOOP, POT_CAPACITY};
use rand::Rng;
use std::collections::VecDeque;

fn goal(s: &KitchenState, p: usize) -> Option<Tile> {
    let me = s.chefs[p];
    let other = s.chefs[1 - p];
    let cooking_or_ready = s.pots.iter().any(|pot| pot.status != PotStatus::Idle);
    let ready = s.pots.iter().any(|pot| pot.status == PotStatus::Ready);
    let carrying_onions = s.chefs.iter().filter(|c| c.held == Held::Onion).count() as u8;
    let missing: u8 = s
        .pots
        .iter()
        .filter(|pot| pot.status == PotStatus::Idle)
        .map(|pot| POT_CAPACITY - pot.onions)
        .sum();
    match me.held {
        Held::Soup => Some(Tile::Serve),
        Held::Onion => (missing > 0).then_some(Tile::Pot),
        Held::Bowl => cooking_or_ready.then_some(Tile::Pot),
        Held::Nothing => {
            let other_plating = matches!(other.held, Held::Bowl | Held::Soup);
            if cooking_or_ready && !other_plating && (p == 0 || other.held != Held::Nothing || ready) {
                Some(Tile::BowlSource)
            } else if missing > carrying_onions {
                Some(Tile::OnionSource)
            } else {
                None
            }
        }
    }
}

/// Shortest first move from `from` to any floor cell adjacent to a tile of
/// kind `want`, treating `blocked` as occupied. Returns the direction of the
/// first step, or the direction to face when already adjacent.
fn route(k: &Kitchen, s: &KitchenState, p: usize, want: Tile) -> Option<(Option<Dir>, Dir)> {
    let l = &k.layout;
    let (from, blocked, held) = (s.chefs[p].pos, s.chefs[1 - p].pos, s.chefs[p].held);
    let adjacent_face = |c: Cell| {
        Dir::ALL.into_iter().find(|d| {
            let (dr, dc) = d.offset();
            let (r, cc) = (c.0 as isize + dr, c.1 as isize + dc);
            r >= 0
                && cc >= 0
                && (r as usize) < l.height
                && (cc as usize) < l.width
                && l.tile((r as usize, cc as usize)) == want
                && pot_useful(k, s, (r as usize, cc as usize), want, held)
        })
    };
    let mut prev: Vec<Option<(Cell, Dir)>> = vec![None; l.width * l.height];
    let mut seen = vec![false; l.width * l.height];
    let idx = |c: Cell| c.0 * l.width + c.1;
    let mut q = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(c) = q.pop_front() {
        if let Some(face) = adjacent_face(c) {
            // walk back to the first step
            let mut cur = c;
            let mut first = None;
            while let Some((pc, d)) = prev[idx(cur)] {
                first = Some(d);
                cur = pc;
            }
            return Some((first, face));
        }
        for d in Dir::ALL {
            let (dr, dc) = d.offset();
            let (r, cc) = (c.0 as isize + dr, c.1 as isize + dc);
            if r < 0 || cc < 0 {
                continue;
            }
            let n = (r as usize, cc as usize);
            if n.0 >= l.height || n.1 >= l.width || l.tile(n) != Tile::Floor || n == blocked || seen[idx(n)] {
                continue;
            }
            seen[idx(n)] = true;
            prev[idx(n)] = Some((c, d));
            q.push_back(n);
        }
    }
    None
}

fn pot_useful(k: &Kitchen, s: &KitchenState, cell: Cell, want: Tile, held: Held) -> bool {
    if want != Tile::Pot {
        return true;
    }
    let Some(i) = k.layout.pot_index(cell) else {
        return false;
    };
    let pot = s.pots[i];
    match held {
        Held::Bowl => pot.status != PotStatus::Idle,
        _ => pot.status == PotStatus::Idle && pot.onions < POT_CAPACITY,
    }
}

/// Deterministic intent of chef `p`; `None` when the partner blocks every
/// route.
fn intent(k: &Kitchen, s: &KitchenState, p: usize) -> Option<usize> {
    let Some(want) = goal(s, p) else {
        return Some(make_room(k, s, p));
    };
    let me = s.chefs[p];
    match route(k, s, p, want)? {
        (None, face) if face == me.facing => {
            // a bowl waits next to a pot that is still cooking
            let cell = {
                let (r, c) = me.faced();
                (r as usize, c as usize)
            };
            if want == Tile::Pot && me.held == Held::Bowl {
                let ready = k
                    .layout
                    .pot_index(cell)
                    .is_some_and(|i| s.pots[i].status == PotStatus::Ready);
                if !ready {
                    return Some(NOOP);
                }
            }
            Some(INTERACT)
        }
        (None, face) => Some(face.index()),
        (Some(step), _) => Some(step.index()),
    }
}

fn target(s: &KitchenState, p: usize, a: usize) -> Option<(isize, isize)> {
    let d = Dir::from_action(a)?;
    let (dr, dc) = d.offset();
    let (r, c) = s.chefs[p].pos;
    Some((r as isize + dr, c as isize + dc))
}

/// Action of scripted chef `p`: head for the next useful tile and interact
/// with it. Chef 1 gives way when both head for the same cell. With
/// probability `eps` a uniformly random action is taken instead.
pub fn scripted_action(k: &Kitchen, s: &KitchenState, p: usize, eps: f64, rng: &mut impl Rng) -> usize {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        return rng.gen_range(0..super::N_ACTIONS);
    }
    // the partner blocks every route: shuffle to break the stand-off
    let a = intent(k, s, p).unwrap_or_else(|| rng.gen_range(0..4));
    if p == 1 {
        if let (Some(mine), Some(theirs)) = (target(s, 1, a), intent(k, s, 0).and_then(|b| target(s, 0, b))) {
            if mine == theirs {
                return NOOP;
            }
        }
    }
    a
}

/// An idle chef standing next to a pot or the serving window steps onto a
/// free cell that is not, so it does not block the partner.
fn make_room(k: &Kitchen, s: &KitchenState, p: usize) -> usize {
    let l = &k.layout;
    let busy = |c: Cell| {
        Dir::ALL.into_iter().any(|d| {
            let (dr, dc) = d.offset();
            let (r, cc) = (c.0 as isize + dr, c.1 as isize + dc);
            r >= 0 && cc >= 0 && matches!(l.tile((r as usize, cc as usize)), Tile::Pot | Tile::Serve)
        })
    };
    let me = s.chefs[p].pos;
    if !busy(me) {
        return NOOP;
    }
    for d in Dir::ALL {
        let (dr, dc) = d.offset();
        let (r, c) = (me.0 as isize + dr, me.1 as isize + dc);
        let n = (r as usize, c as usize);
        if l.tile(n) == Tile::Floor && n != s.chefs[1 - p].pos && !busy(n) {
            return d.index();
        }
    }
    NOOP
}
