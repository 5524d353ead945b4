use serde::{Deserialize, Serialize};

use super::{AgentState, BoardState, CellKind, Pos, NUM_AGENTS};
use crate::rng::derive_rng;
use rand::Rng;

/// Board layout knobs. Serialized inside experiment configs; unknown keys
/// are rejected so typos fail loudly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub board_size: usize,
    /// Probability an eligible cell is Wood.
    pub wood_density: f64,
    /// Probability an eligible cell is Rigid.
    pub rigid_density: f64,
    /// Probability a destroyed Wood cell drops an item.
    pub item_prob: f64,
    pub max_steps: u32,
    /// Non-agent vertex slots in the object enumeration.
    pub object_cap: usize,
}

impl Default for MapConfig {
    fn default() -> MapConfig {
        MapConfig {
            board_size: 11,
            wood_density: 0.25,
            rigid_density: 0.15,
            item_prob: 0.3,
            max_steps: 500,
            object_cap: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("board size {0} below the 5-cell minimum for corner corridors")]
    TooSmall(usize),
    #[error("wood and rigid densities must be in [0,1] and sum to at most 1")]
    BadDensity,
    #[error("item probability must be in [0,1]")]
    BadItemProb,
    #[error("max_steps must be positive")]
    BadMaxSteps,
    #[error("object_cap must be positive")]
    BadObjectCap,
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.board_size < 5 {
            return Err(MapError::TooSmall(self.board_size));
        }
        let ok = |d: f64| (0.0..=1.0).contains(&d);
        if !ok(self.wood_density) || !ok(self.rigid_density)
            || self.wood_density + self.rigid_density > 1.0
        {
            return Err(MapError::BadDensity);
        }
        if !ok(self.item_prob) {
            return Err(MapError::BadItemProb);
        }
        if self.max_steps == 0 {
            return Err(MapError::BadMaxSteps);
        }
        if self.object_cap == 0 {
            return Err(MapError::BadObjectCap);
        }
        Ok(())
    }

    /// Agent spawn corners in id order; teammates (ids of equal parity)
    /// sit on opposite diagonals.
    pub fn corners(&self) -> [Pos; NUM_AGENTS] {
        let n = self.board_size - 1;
        [
            Pos::new(0, 0),
            Pos::new(0, n),
            Pos::new(n, n),
            Pos::new(n, 0),
        ]
    }

    /// Cells kept Clear at generation: each corner plus two cells along
    /// both adjacent edges, so every agent starts with open moves.
    fn reserved(&self) -> Vec<Pos> {
        let n = self.board_size - 1;
        let mut v = Vec::new();
        for &(r, c, dr, dc) in &[
            (0usize, 0usize, 1isize, 1isize),
            (0, n, 1, -1),
            (n, n, -1, -1),
            (n, 0, -1, 1),
        ] {
            for d in 0..=2isize {
                v.push(Pos::new((r as isize + dr * d) as usize, c));
                v.push(Pos::new(r, (c as isize + dc * d) as usize));
            }
        }
        v.sort();
        v.dedup();
        v
    }
}

/// Generates the starting board for an episode. Identical (seed, layout)
/// pairs produce bit-identical states.
pub fn reset(seed: u64, layout: &MapConfig) -> Result<BoardState, MapError> {
    layout.validate()?;
    let n = layout.board_size;
    let mut rng = derive_rng(seed, "episode", 0);
    let mut cells = vec![CellKind::Clear; n * n];
    let reserved = layout.reserved();
    for row in 0..n {
        for col in 0..n {
            if reserved.binary_search(&Pos::new(row, col)).is_ok() {
                continue;
            }
            let u: f64 = rng.random();
            cells[row * n + col] = if u < layout.rigid_density {
                CellKind::Rigid
            } else if u < layout.rigid_density + layout.wood_density {
                CellKind::Wood
            } else {
                CellKind::Clear
            };
        }
    }
    let agents = layout
        .corners()
        .iter()
        .enumerate()
        .map(|(id, &pos)| AgentState {
            id,
            team: (id % 2) as u8,
            pos,
            alive: true,
            max_bombs: 1,
            blast_power: 1,
            can_kick: false,
        })
        .collect();
    Ok(BoardState {
        cells,
        bombs: Vec::new(),
        items: Vec::new(),
        agents,
        tick: 0,
        rng_seed: seed,
        config: layout.clone(),
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_board() {
        let cfg = MapConfig::default();
        let a = reset(7, &cfg).unwrap();
        let b = reset(7, &cfg).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.agents, b.agents);
        assert_eq!(a.state_hash(), b.state_hash());
    }

    #[test]
    fn fresh_board_has_four_alive_agents_at_tick_zero() {
        let s = reset(7, &MapConfig::default()).unwrap();
        assert_eq!(s.tick, 0);
        assert_eq!(s.agents.iter().filter(|a| a.alive).count(), 4);
        assert!(s.bombs.is_empty() && s.items.is_empty());
        for a in &s.agents {
            assert_eq!(s.cell_at(a.pos), CellKind::Clear);
        }
    }

    #[test]
    fn teammates_spawn_on_opposite_diagonals() {
        let s = reset(3, &MapConfig::default()).unwrap();
        let p: Vec<Pos> = s.agents.iter().map(|a| a.pos).collect();
        assert_eq!(s.agents[0].team, s.agents[2].team);
        assert_eq!(s.agents[1].team, s.agents[3].team);
        assert_eq!(p[0], Pos::new(0, 0));
        assert_eq!(p[2], Pos::new(10, 10));
    }

    #[test]
    fn corner_corridors_stay_clear() {
        for seed in 0..50 {
            let s = reset(seed, &MapConfig::default()).unwrap();
            for a in &s.agents {
                let n = s.size();
                let open = Action::ALL
                    .iter()
                    .filter_map(|act| act.delta())
                    .filter_map(|d| a.pos.offset(d, n))
                    .filter(|&p| s.cell_at(p) == CellKind::Clear)
                    .count();
                assert!(open >= 2, "agent {} boxed in on seed {seed}", a.id);
            }
        }
    }

    #[test]
    fn wood_fraction_tracks_configured_density() {
        let cfg = MapConfig::default();
        let mut wood = 0usize;
        let mut eligible = 0usize;
        let reserved = cfg.reserved();
        for seed in 0..1000 {
            let s = reset(seed, &cfg).unwrap();
            for row in 0..cfg.board_size {
                for col in 0..cfg.board_size {
                    let p = Pos::new(row, col);
                    if reserved.binary_search(&p).is_ok() {
                        continue;
                    }
                    eligible += 1;
                    if s.cell_at(p) == CellKind::Wood {
                        wood += 1;
                    }
                }
            }
        }
        let frac = wood as f64 / eligible as f64;
        let rel = (frac - cfg.wood_density).abs() / cfg.wood_density;
        assert!(rel <= 0.05, "wood fraction {frac} vs density {}", cfg.wood_density);
    }

    #[test]
    fn undersized_board_is_rejected() {
        let cfg = MapConfig {
            board_size: 4,
            ..MapConfig::default()
        };
        assert_eq!(reset(0, &cfg).unwrap_err(), MapError::TooSmall(4));
    }

    #[test]
    fn bad_densities_are_rejected() {
        let cfg = MapConfig {
            wood_density: 0.7,
            rigid_density: 0.5,
            ..MapConfig::default()
        };
        assert_eq!(reset(0, &cfg).unwrap_err(), MapError::BadDensity);
    }

    use super::super::Action;
}
