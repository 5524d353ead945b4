use serde::{Deserialize, Serialize};

use crate::autodiff::{zeros, Arr};

use super::{BoardState, CellKind, ItemKind, Pos, BOMB_FUSE, NUM_AGENTS};

/// Observation tensor depth: terrain, bomb fuses, items, agents.
pub const OBS_PLANES: usize = 4;

const PLANE_TERRAIN: usize = 0;
const PLANE_BOMBS: usize = 1;
const PLANE_ITEMS: usize = 2;
const PLANE_AGENTS: usize = 3;

/// Full-board observation for one agent: an n×n×4 tensor.
///
/// Plane 0 is terrain passability (Clear 1.0, Wood 0.5, Rigid 0.0), plane 1
/// holds bomb fuses normalized by the full fuse (a fresh bomb reads 1.0),
/// plane 2 encodes items (ExtraBomb 0.25, BlastIncrease 0.5, Kick 0.75),
/// and plane 3 marks living agents from the observer's side: self 1.0,
/// ally 0.5, enemy -0.5. Dead agents are not drawn.
pub fn observe(state: &BoardState, agent: usize) -> Arr {
    assert!(agent < NUM_AGENTS, "agent id {agent} out of range");
    let n = state.size();
    let mut planes = zeros(&[n, n, OBS_PLANES]);
    let mut put = |pos: Pos, plane: usize, value: f64| {
        planes[[pos.row, pos.col, plane]] = value;
    };
    for row in 0..n {
        for col in 0..n {
            let v = match state.cell_at(Pos::new(row, col)) {
                CellKind::Clear => 1.0,
                CellKind::Wood => 0.5,
                CellKind::Rigid => 0.0,
            };
            put(Pos::new(row, col), PLANE_TERRAIN, v);
        }
    }
    for bomb in &state.bombs {
        put(bomb.pos, PLANE_BOMBS, f64::from(bomb.fuse) / f64::from(BOMB_FUSE));
    }
    for item in &state.items {
        let v = match item.kind {
            ItemKind::ExtraBomb => 0.25,
            ItemKind::BlastIncrease => 0.5,
            ItemKind::KickAbility => 0.75,
        };
        put(item.pos, PLANE_ITEMS, v);
    }
    let my_team = state.agents[agent].team;
    for a in state.agents.iter().filter(|a| a.alive) {
        let v = if a.id == agent {
            1.0
        } else if a.team == my_team {
            0.5
        } else {
            -0.5
        };
        put(a.pos, PLANE_AGENTS, v);
    }
    planes
}

/// Square window of the observation planes centered on `center`, half-width
/// `half` (so 2·half+1 per side), zero-padded where it hangs off the board.
pub fn crop(planes: &Arr, center: Pos, half: usize) -> Arr {
    let shape = planes.shape();
    assert_eq!(shape.len(), 3, "expected an n×n×planes tensor");
    let (n, depth) = (shape[0], shape[2]);
    let side = 2 * half + 1;
    let mut out = zeros(&[side, side, depth]);
    for wr in 0..side {
        for wc in 0..side {
            let row = center.row as isize + wr as isize - half as isize;
            let col = center.col as isize + wc as isize - half as isize;
            if row < 0 || col < 0 || row >= n as isize || col >= n as isize {
                continue;
            }
            for p in 0..depth {
                out[[wr, wc, p]] = planes[[row as usize, col as usize, p]];
            }
        }
    }
    out
}

/// Vertex categories for graph construction. Declaration order is the
/// canonical sort order for object enumeration; Wall sorts last so wood
/// is dropped first when the object cap bites. Null marks dead-agent
/// slots and tail padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexType {
    Ally,
    Enemy,
    Bomb,
    KickItem,
    BlastItem,
    ExtraBombItem,
    Wall,
    Null,
}

impl VertexType {
    pub const COUNT: usize = 8;

    pub fn index(self) -> usize {
        match self {
            VertexType::Ally => 0,
            VertexType::Enemy => 1,
            VertexType::Bomb => 2,
            VertexType::KickItem => 3,
            VertexType::BlastItem => 4,
            VertexType::ExtraBombItem => 5,
            VertexType::Wall => 6,
            VertexType::Null => 7,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VertexType::Ally => "ally",
            VertexType::Enemy => "enemy",
            VertexType::Bomb => "bomb",
            VertexType::KickItem => "kick_item",
            VertexType::BlastItem => "blast_item",
            VertexType::ExtraBombItem => "extra_bomb_item",
            VertexType::Wall => "wall",
            VertexType::Null => "null",
        }
    }

    /// Inverse of [`index`](VertexType::index).
    pub fn from_index(i: usize) -> Option<VertexType> {
        [
            VertexType::Ally,
            VertexType::Enemy,
            VertexType::Bomb,
            VertexType::KickItem,
            VertexType::BlastItem,
            VertexType::ExtraBombItem,
            VertexType::Wall,
            VertexType::Null,
        ]
        .get(i)
        .copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub kind: VertexType,
    /// None for Null padding and dead agents.
    pub pos: Option<Pos>,
    /// Set on the four agent slots, dead or alive.
    pub agent_id: Option<usize>,
}

/// Fixed-width vertex list: 4 agent slots followed by `object_cap` object
/// slots, Null-padded. `dropped` counts objects that fell past the cap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Enumeration {
    pub vertices: Vec<Vertex>,
    pub dropped: usize,
}

impl Enumeration {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Object slots only (everything after the agent block).
    pub fn objects(&self) -> &[Vertex] {
        &self.vertices[NUM_AGENTS..]
    }
}

const NULL_VERTEX: Vertex = Vertex {
    kind: VertexType::Null,
    pos: None,
    agent_id: None,
};

/// Canonical vertex ordering for one board state: agents first in id order
/// (dead ones become Null but keep their slot), then bombs, items, and wood
/// cells sorted by (kind, row, column) regardless of internal storage
/// order, truncated to the object cap and padded with Null. Ally/Enemy
/// typing follows `perspective_team`; ordering does not, so vertex ids are
/// shared by all observers.
pub fn enumerate_objects(state: &BoardState, perspective_team: u8) -> Enumeration {
    let mut vertices = Vec::with_capacity(NUM_AGENTS + state.config.object_cap);
    for a in &state.agents {
        if a.alive {
            vertices.push(Vertex {
                kind: if a.team == perspective_team {
                    VertexType::Ally
                } else {
                    VertexType::Enemy
                },
                pos: Some(a.pos),
                agent_id: Some(a.id),
            });
        } else {
            vertices.push(Vertex {
                kind: VertexType::Null,
                pos: None,
                agent_id: Some(a.id),
            });
        }
    }

    let mut objects = Vec::new();
    for bomb in &state.bombs {
        objects.push(Vertex {
            kind: VertexType::Bomb,
            pos: Some(bomb.pos),
            agent_id: None,
        });
    }
    for item in &state.items {
        let kind = match item.kind {
            ItemKind::KickAbility => VertexType::KickItem,
            ItemKind::BlastIncrease => VertexType::BlastItem,
            ItemKind::ExtraBomb => VertexType::ExtraBombItem,
        };
        objects.push(Vertex {
            kind,
            pos: Some(item.pos),
            agent_id: None,
        });
    }
    let n = state.size();
    for row in 0..n {
        for col in 0..n {
            if state.cell_at(Pos::new(row, col)) == CellKind::Wood {
                objects.push(Vertex {
                    kind: VertexType::Wall,
                    pos: Some(Pos::new(row, col)),
                    agent_id: None,
                });
            }
        }
    }
    objects.sort_by_key(|v| (v.kind, v.pos.map(|p| (p.row, p.col))));

    let cap = state.config.object_cap;
    let dropped = objects.len().saturating_sub(cap);
    if dropped > 0 {
        log::warn!(
            "board holds {} objects but the vertex cap is {cap}; dropping {dropped}",
            objects.len()
        );
        objects.truncate(cap);
    }
    objects.resize(cap, NULL_VERTEX);
    vertices.extend(objects);
    Enumeration { vertices, dropped }
}
