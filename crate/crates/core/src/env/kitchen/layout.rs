//! ASCII kitchen maps.
//!
//! Legend: `#` wall, `X` counter, `O` onion source, `B` bowl source,
//! `P` pot, `S` serving window, space floor, `1`/`2` floor cells where the
//! chefs start. Rows are separated by newlines; all rows must have the same
//! width and the border must be non-walkable.

use crate::error::EnvError;
use serde::{Deserialize, Serialize};

pub const CRAMPED_ROOM: &str = "XXPXX\nO  1O\nX2  X\nXBXSX";
pub const COORDINATION_RING: &str = "XXXPX\nX  1P\nB X X\nO2  X\nXOSXX";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tile {
    Floor,
    Counter,
    OnionSource,
    BowlSource,
    Pot,
    Serve,
    Wall,
}

impl Tile {
    fn from_char(c: char) -> Option<Tile> {
        Some(match c {
            ' ' | '1' | '2' => Tile::Floor,
            'X' => Tile::Counter,
            'O' => Tile::OnionSource,
            'B' => Tile::BowlSource,
            'P' => Tile::Pot,
            'S' => Tile::Serve,
            '#' => Tile::Wall,
            _ => return None,
        })
    }

    pub fn symbol(self) -> char {
        match self {
            Tile::Floor => ' ',
            Tile::Counter => 'X',
            Tile::OnionSource => 'O',
            Tile::BowlSource => 'B',
            Tile::Pot => 'P',
            Tile::Serve => 'S',
            Tile::Wall => '#',
        }
    }
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct KitchenLayout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    tiles: Vec<Tile>,
    pub starts: [Cell; 2],
    /// Walkable cells in row-major order.
    pub floor: Vec<Cell>,
    /// Pot cells in row-major order; pot `i` of a state lives at `pots[i]`.
    pub pots: Vec<Cell>,
    map: String,
}

#[derive(Serialize, Deserialize)]
struct RawLayout {
    name: String,
    map: String,
}

impl TryFrom<RawLayout> for KitchenLayout {
    type Error = EnvError;
    fn try_from(r: RawLayout) -> Result<Self, EnvError> {
        KitchenLayout::parse(&r.name, &r.map)
    }
}

impl From<KitchenLayout> for RawLayout {
    fn from(l: KitchenLayout) -> Self {
        RawLayout {
            name: l.name,
            map: l.map,
        }
    }
}

impl KitchenLayout {
    pub fn parse(name: &str, map: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = map.lines().filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height < 3 || width < 3 {
            return Err(EnvError::Layout("map must be at least 3x3".into()));
        }
        let mut tiles = Vec::with_capacity(width * height);
        let mut starts: [Option<Cell>; 2] = [None, None];
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::Layout(format!("row {r} has a different width")));
            }
            for (c, ch) in row.chars().enumerate() {
                let t = Tile::from_char(ch)
                    .ok_or_else(|| EnvError::Layout(format!("unknown symbol {ch:?} at ({r}, {c})")))?;
                if let Some(d) = ch.to_digit(10) {
                    let slot = &mut starts[d as usize - 1];
                    if slot.is_some() {
                        return Err(EnvError::Layout(format!("start {d} appears twice")));
                    }
                    *slot = Some((r, c));
                }
                let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
                if border && t == Tile::Floor {
                    return Err(EnvError::Layout(format!("floor on the border at ({r}, {c})")));
                }
                tiles.push(t);
            }
        }
        let starts = match starts {
            [Some(a), Some(b)] => [a, b],
            _ => return Err(EnvError::Layout("map needs start cells 1 and 2".into())),
        };
        for need in [Tile::Pot, Tile::OnionSource, Tile::BowlSource, Tile::Serve] {
            if !tiles.contains(&need) {
                return Err(EnvError::Layout(format!("map has no {need:?} tile")));
            }
        }
        let cells = |want: Tile| -> Vec<Cell> {
            (0..height)
                .flat_map(|r| (0..width).map(move |c| (r, c)))
                .filter(|&(r, c)| tiles[r * width + c] == want)
                .collect()
        };
        let floor = cells(Tile::Floor);
        let pots = cells(Tile::Pot);
        Ok(Self {
            name: name.to_string(),
            width,
            height,
            starts,
            floor,
            pots,
            map: rows.join("\n"),
            tiles,
        })
    }

    pub fn builtin(name: &str) -> Result<Self, EnvError> {
        match name {
            "cramped_room" => Self::parse(name, CRAMPED_ROOM),
            "coordination_ring" => Self::parse(name, COORDINATION_RING),
            _ => Err(EnvError::Layout(format!("unknown layout {name:?}"))),
        }
    }

    pub fn map(&self) -> &str {
        &self.map
    }

    pub fn tile(&self, (r, c): Cell) -> Tile {
        self.tiles[r * self.width + c]
    }

    pub fn cells_of(&self, t: Tile) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&p| self.tile(p) == t)
            .collect()
    }

    pub fn floor_index(&self, p: Cell) -> Option<usize> {
        self.floor.iter().position(|&q| q == p)
    }

    pub fn pot_index(&self, p: Cell) -> Option<usize> {
        self.pots.iter().position(|&q| q == p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_layouts_parse() {
        let a = KitchenLayout::builtin("cramped_room").unwrap();
        assert_eq!((a.width, a.height), (5, 4));
        assert_eq!(a.starts, [(1, 3), (2, 1)]);
        assert_eq!(a.floor.len(), 6);
        assert_eq!(a.pots, vec![(0, 2)]);
        let b = KitchenLayout::builtin("coordination_ring").unwrap();
        assert_eq!(b.floor.len(), 8);
        assert_eq!(b.pots.len(), 2);
    }

    #[test]
    fn malformed_maps_are_rejected() {
        assert!(KitchenLayout::parse("x", "XXPXX\nO   O\nX2  X\nXBXSX").is_err());
        assert!(KitchenLayout::parse("x", "XXPXX\n   1O\nX2  X\nXBXSX").is_err());
        assert!(KitchenLayout::parse("x", "XXXXX\nO  1O\nX2  X\nXBXSX").is_err());
        assert!(KitchenLayout::parse("x", "XXPXX\nO  1O\nX2  X\nXBXS").is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let a = KitchenLayout::builtin("coordination_ring").unwrap();
        let s = serde_json::to_string(&a).unwrap();
        let b: KitchenLayout = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
