//! Deterministic bomberman-style team-match environment.
//!
//! A [`BoardState`] is advanced functionally: [`BoardState::step`] returns
//! a fresh state plus rewards, events and a terminal flag, never mutating
//! the input. All randomness (board generation, item drops) flows through
//! a counter-based stream captured inside the state, so a (seed, action
//! sequence) pair replays bit-exactly.
//!
//! Step order within one tick: resolve movement (with bomb kicks), apply
//! item pickups, tick fuses down, resolve explosions, place new bombs,
//! then settle termination. Agents therefore dodge or walk into a blast
//! with their move of the same tick, and a bomb placed this tick starts
//! at full fuse.

mod dynamics;
mod log;
mod map;
mod observe;

pub use log::{
    read_episode, replay_episode, replay_parsed, EpisodeHeader, EpisodeLog, EpisodeLogWriter,
    LogError, ReplayReport, StepRecord,
};
pub use map::{reset, MapConfig, MapError};
pub use observe::{crop, enumerate_objects, observe, Enumeration, Vertex, VertexType, OBS_PLANES};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bytes::Writer;
use crate::rng::{fnv1a64, RngState};

pub const NUM_AGENTS: usize = 4;
/// Agents are killed on blast rays up to this many cells out, always.
pub const KILL_RANGE: usize = 4;
/// A placed bomb explodes when its fuse, starting here, reaches zero.
pub const BOMB_FUSE: u8 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Clear,
    Wood,
    Rigid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Bomb,
    Stop,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Bomb,
        Action::Stop,
    ];

    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Bomb => 4,
            Action::Stop => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// (row, col) displacement for movement actions, None for Bomb/Stop.
    pub fn delta(self) -> Option<(isize, isize)> {
        match self {
            Action::Up => Some((-1, 0)),
            Action::Down => Some((1, 0)),
            Action::Left => Some((0, -1)),
            Action::Right => Some((0, 1)),
            Action::Bomb | Action::Stop => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Pos {
        Pos { row, col }
    }

    /// Offset by a unit delta, None when leaving an n×n board.
    pub fn offset(self, delta: (isize, isize), n: usize) -> Option<Pos> {
        let row = self.row as isize + delta.0;
        let col = self.col as isize + delta.1;
        if row < 0 || col < 0 || row >= n as isize || col >= n as isize {
            None
        } else {
            Some(Pos::new(row as usize, col as usize))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ItemKind {
    ExtraBomb,
    BlastIncrease,
    KickAbility,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bomb {
    pub pos: Pos,
    pub fuse: u8,
    pub owner: usize,
    /// Wood-destruction reach of this bomb, fixed at placement.
    pub blast_power: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub pos: Pos,
    pub kind: ItemKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub team: u8,
    pub pos: Pos,
    pub alive: bool,
    pub max_bombs: u32,
    pub blast_power: u32,
    pub can_kick: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    BombKilledAgent,
    AgentPickedItem,
    AgentWon,
    AgentDied,
    BombDestroyedWood,
}

/// Something notable that happened during one step. `subject` is always
/// an agent id; `object` is the vertex id of the other party in the
/// pre-step enumeration, or None when that object fell past the cap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameEvent {
    pub kind: EventKind,
    pub subject: usize,
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("expected {want} actions, got {got}")]
    WrongArity { want: usize, got: usize },
    #[error("episode already finished")]
    EpisodeOver,
}

#[derive(Clone, Debug)]
pub struct BoardState {
    /// Row-major board_size × board_size terrain.
    pub cells: Vec<CellKind>,
    pub bombs: Vec<Bomb>,
    pub items: Vec<Item>,
    pub agents: Vec<AgentState>,
    pub tick: u32,
    pub rng_seed: u64,
    pub config: MapConfig,
    pub(crate) rng: ChaCha20Rng,
}

/// Result of advancing one tick.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: BoardState,
    pub rewards: [f64; NUM_AGENTS],
    pub events: Vec<GameEvent>,
    pub done: bool,
}

impl BoardState {
    /// Assembles a state directly; used by oracles and scripted-AI tests
    /// that need hand-laid boards. Invariants are the caller's problem.
    pub fn from_parts(
        cells: Vec<CellKind>,
        bombs: Vec<Bomb>,
        items: Vec<Item>,
        agents: Vec<AgentState>,
        config: MapConfig,
        seed: u64,
    ) -> BoardState {
        assert_eq!(cells.len(), config.board_size * config.board_size);
        assert_eq!(agents.len(), NUM_AGENTS);
        BoardState {
            cells,
            bombs,
            items,
            agents,
            tick: 0,
            rng_seed: seed,
            config,
            rng: crate::rng::derive_rng(seed, "episode", 0),
        }
    }

    pub fn size(&self) -> usize {
        self.config.board_size
    }

    pub fn cell_at(&self, pos: Pos) -> CellKind {
        self.cells[pos.row * self.config.board_size + pos.col]
    }

    pub(crate) fn set_cell(&mut self, pos: Pos, kind: CellKind) {
        let n = self.config.board_size;
        self.cells[pos.row * n + pos.col] = kind;
    }

    pub fn bomb_at(&self, pos: Pos) -> Option<&Bomb> {
        self.bombs.iter().find(|b| b.pos == pos)
    }

    pub fn item_at(&self, pos: Pos) -> Option<&Item> {
        self.items.iter().find(|i| i.pos == pos)
    }

    pub fn agent_at(&self, pos: Pos) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.alive && a.pos == pos)
    }

    pub fn active_bombs(&self, owner: usize) -> usize {
        self.bombs.iter().filter(|b| b.owner == owner).count()
    }

    pub fn team_alive(&self, team: u8) -> usize {
        self.agents
            .iter()
            .filter(|a| a.alive && a.team == team)
            .count()
    }

    /// True once a team is eliminated or the step budget is spent.
    pub fn done(&self) -> bool {
        self.team_alive(0) == 0
            || self.team_alive(1) == 0
            || self.tick >= self.config.max_steps
    }

    /// Advances one tick. The input state is untouched; dead agents'
    /// actions are ignored. Errors on wrong arity or a finished episode.
    pub fn step(&self, actions: &[Action]) -> Result<StepOutcome, EnvError> {
        dynamics::advance(self, actions)
    }

    /// Order-sensitive digest of the full integer state plus the RNG
    /// position: two states hash equal iff they will evolve identically.
    pub fn state_hash(&self) -> u64 {
        let mut w = Writer::new();
        for &c in &self.cells {
            w.u8(match c {
                CellKind::Clear => 0,
                CellKind::Wood => 1,
                CellKind::Rigid => 2,
            });
        }
        for b in &self.bombs {
            w.u64(b.pos.row as u64);
            w.u64(b.pos.col as u64);
            w.u8(b.fuse);
            w.u64(b.owner as u64);
            w.u32(b.blast_power);
        }
        for i in &self.items {
            w.u64(i.pos.row as u64);
            w.u64(i.pos.col as u64);
            w.u8(match i.kind {
                ItemKind::ExtraBomb => 0,
                ItemKind::BlastIncrease => 1,
                ItemKind::KickAbility => 2,
            });
        }
        for a in &self.agents {
            w.u64(a.pos.row as u64);
            w.u64(a.pos.col as u64);
            w.u8(a.alive as u8);
            w.u8(a.team);
            w.u32(a.max_bombs);
            w.u32(a.blast_power);
            w.u8(a.can_kick as u8);
        }
        w.u32(self.tick);
        w.u64(self.rng_seed);
        let mut bytes = w.finish();
        RngState::capture(&self.rng).write_to(&mut bytes);
        fnv1a64(&bytes)
    }
}
