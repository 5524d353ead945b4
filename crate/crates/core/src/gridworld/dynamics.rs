use std::collections::BTreeMap;

use rand::Rng;

use super::observe::{enumerate_objects, VertexType};
use super::{
    Action, BoardState, Bomb, CellKind, EnvError, EventKind, GameEvent, Item, ItemKind, Pos,
    StepOutcome, BOMB_FUSE, KILL_RANGE, NUM_AGENTS,
};

const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Vertex ids of the pre-step state, keyed by what events need to cite.
/// Bombs are keyed by their index in `state.bombs` because a kick moves a
/// bomb before its fuse is checked; items and wood never move, so position
/// suffices. Agents occupy vertices 0..3, so an agent id is its vertex id.
struct VertexLookup {
    bombs: BTreeMap<usize, usize>,
    items: BTreeMap<Pos, usize>,
    wood: BTreeMap<Pos, usize>,
}

impl VertexLookup {
    fn new(state: &BoardState) -> VertexLookup {
        // Agent typing is perspective-relative but ordering is not, so any
        // perspective yields the same vertex ids.
        let enumeration = enumerate_objects(state, 0);
        let mut bombs = BTreeMap::new();
        let mut items = BTreeMap::new();
        let mut wood = BTreeMap::new();
        for (id, v) in enumeration.vertices.iter().enumerate() {
            let pos = match v.pos {
                Some(p) => p,
                None => continue,
            };
            match v.kind {
                VertexType::Bomb => {
                    if let Some(idx) = state.bombs.iter().position(|b| b.pos == pos) {
                        bombs.insert(idx, id);
                    }
                }
                VertexType::KickItem | VertexType::BlastItem | VertexType::ExtraBombItem => {
                    items.insert(pos, id);
                }
                VertexType::Wall => {
                    wood.insert(pos, id);
                }
                _ => {}
            }
        }
        VertexLookup { bombs, items, wood }
    }
}

pub(super) fn advance(state: &BoardState, actions: &[Action]) -> Result<StepOutcome, EnvError> {
    if actions.len() != state.agents.len() {
        return Err(EnvError::WrongArity {
            want: state.agents.len(),
            got: actions.len(),
        });
    }
    if state.done() {
        return Err(EnvError::EpisodeOver);
    }
    let lookup = VertexLookup::new(state);
    let mut s = state.clone();
    let mut events = Vec::new();
    let eff: Vec<Action> = s
        .agents
        .iter()
        .zip(actions)
        .map(|(a, &act)| if a.alive { act } else { Action::Stop })
        .collect();

    resolve_movement(&mut s, &eff);
    apply_pickups(&mut s, &lookup, &mut events);
    for b in &mut s.bombs {
        b.fuse -= 1;
    }
    resolve_explosions(&mut s, &lookup, &mut events);
    place_bombs(&mut s, &eff);
    s.tick += 1;
    let (rewards, done) = settle(&s, &mut events);
    debug_assert_invariants(&s);
    Ok(StepOutcome {
        state: s,
        rewards,
        events,
        done,
    })
}

/// Simultaneous movement with bounce-back conflicts and bomb kicks.
///
/// Rules, applied to all living agents at once:
/// - Walking off-board, into Rigid/Wood, or onto a bomb without the kick
///   ability cancels the move.
/// - Two agents after the same cell both bounce; so do two agents trying
///   to swap positions; so does anyone walking into an agent that stays.
/// - A kick-capable agent walking into a bomb pushes it one cell onward
///   if that cell is in-bounds Clear with no bomb, item, or agent; the
///   agent then takes the bomb's old cell. A blocked push cancels the
///   agent's move.
///
/// Conflicts cascade (a bounced agent re-occupies its old cell), so the
/// rules re-run until stable; each pass only converts movers to stayers,
/// bounding the loop by the agent count.
fn resolve_movement(s: &mut BoardState, eff: &[Action]) {
    let n = s.config.board_size;
    let cur: Vec<Pos> = s.agents.iter().map(|a| a.pos).collect();
    let alive: Vec<bool> = s.agents.iter().map(|a| a.alive).collect();
    let mut want = cur.clone();
    for i in 0..NUM_AGENTS {
        if !alive[i] {
            continue;
        }
        let delta = match eff[i].delta() {
            Some(d) => d,
            None => continue,
        };
        let target = match cur[i].offset(delta, n) {
            Some(t) => t,
            None => continue,
        };
        if s.cell_at(target) != CellKind::Clear {
            continue;
        }
        if s.bomb_at(target).is_some() && !s.agents[i].can_kick {
            continue;
        }
        want[i] = target;
    }

    let mut kicks: Vec<(usize, Pos)> = Vec::new();
    for _ in 0..NUM_AGENTS + 1 {
        // Agent-agent conflicts first.
        loop {
            let mut bounced = [false; NUM_AGENTS];
            for i in 0..NUM_AGENTS {
                if !alive[i] || want[i] == cur[i] {
                    continue;
                }
                for j in 0..NUM_AGENTS {
                    if i == j || !alive[j] {
                        continue;
                    }
                    if want[j] == want[i] {
                        bounced[i] = true;
                    }
                    if want[j] == cur[i] && want[i] == cur[j] {
                        bounced[i] = true;
                    }
                }
            }
            if !bounced.iter().any(|&b| b) {
                break;
            }
            for i in 0..NUM_AGENTS {
                if bounced[i] {
                    want[i] = cur[i];
                }
            }
        }
        // Kick attempts in id order; a failed push cancels that move and
        // may create fresh agent conflicts, so restart the outer pass.
        kicks.clear();
        let mut any_failed = false;
        for i in 0..NUM_AGENTS {
            if !alive[i] || want[i] == cur[i] {
                continue;
            }
            let bomb_idx = match s.bombs.iter().position(|b| b.pos == want[i]) {
                Some(b) => b,
                None => continue,
            };
            let delta = (
                want[i].row as isize - cur[i].row as isize,
                want[i].col as isize - cur[i].col as isize,
            );
            let dest = want[i].offset(delta, n);
            let ok = match dest {
                None => false,
                Some(d) => {
                    s.cell_at(d) == CellKind::Clear
                        && s.bomb_at(d).is_none()
                        && !kicks.iter().any(|&(_, kd)| kd == d)
                        && s.item_at(d).is_none()
                        && (0..NUM_AGENTS).all(|j| !alive[j] || (cur[j] != d && want[j] != d))
                }
            };
            match (ok, dest) {
                (true, Some(d)) => kicks.push((bomb_idx, d)),
                _ => {
                    want[i] = cur[i];
                    any_failed = true;
                    break;
                }
            }
        }
        if !any_failed {
            break;
        }
    }
    for &(bomb_idx, dest) in &kicks {
        s.bombs[bomb_idx].pos = dest;
    }
    for i in 0..NUM_AGENTS {
        if alive[i] {
            s.agents[i].pos = want[i];
        }
    }
}

fn apply_pickups(s: &mut BoardState, lookup: &VertexLookup, events: &mut Vec<GameEvent>) {
    for i in 0..NUM_AGENTS {
        if !s.agents[i].alive {
            continue;
        }
        let pos = s.agents[i].pos;
        let idx = match s.items.iter().position(|it| it.pos == pos) {
            Some(idx) => idx,
            None => continue,
        };
        let item = s.items.remove(idx);
        match item.kind {
            ItemKind::ExtraBomb => s.agents[i].max_bombs += 1,
            ItemKind::BlastIncrease => s.agents[i].blast_power += 1,
            ItemKind::KickAbility => s.agents[i].can_kick = true,
        }
        events.push(GameEvent {
            kind: EventKind::AgentPickedItem,
            subject: i,
            object: lookup.items.get(&pos).copied(),
        });
    }
}

/// Blast geometry: each bomb reaching fuse 0 fires four rays plus its own
/// cell. A ray stops at the board edge, at Rigid, and at Wood (destroying
/// the wood when within the bomb's blast_power). Agents die on reached
/// cells within KILL_RANGE. All bombs see the pre-explosion terrain, so
/// simultaneous blasts union their effects; a blast never sets off other
/// bombs or destroys items.
fn resolve_explosions(s: &mut BoardState, lookup: &VertexLookup, events: &mut Vec<GameEvent>) {
    let n = s.config.board_size;
    let terrain = s.cells.clone();
    let exploding: Vec<usize> = (0..s.bombs.len()).filter(|&i| s.bombs[i].fuse == 0).collect();
    if exploding.is_empty() {
        return;
    }
    // (cell -> first bomb index reaching it) for destroyed wood.
    let mut wood_cells: BTreeMap<Pos, usize> = BTreeMap::new();
    for &bi in &exploding {
        let bomb = s.bombs[bi].clone();
        let wood_range = bomb.blast_power as usize;
        let reach = KILL_RANGE.max(wood_range);
        for dir in DIRS {
            let mut p = bomb.pos;
            for d in 1..=reach {
                p = match p.offset(dir, n) {
                    Some(next) => next,
                    None => break,
                };
                match terrain[p.row * n + p.col] {
                    CellKind::Rigid => break,
                    CellKind::Wood => {
                        if d <= wood_range {
                            wood_cells.entry(p).or_insert(bi);
                        }
                        break;
                    }
                    CellKind::Clear => {}
                }
            }
        }
    }

    // Kills: one BombKilledAgent per (covering bomb, victim), plus one
    // AgentDied citing the owner of the first covering bomb.
    for i in 0..NUM_AGENTS {
        if !s.agents[i].alive {
            continue;
        }
        let pos = s.agents[i].pos;
        let covering: Vec<usize> = exploding
            .iter()
            .copied()
            .filter(|&bi| cell_covered_by(s, bi, pos, &terrain))
            .collect();
        if covering.is_empty() {
            continue;
        }
        s.agents[i].alive = false;
        for &bi in &covering {
            events.push(GameEvent {
                kind: EventKind::BombKilledAgent,
                subject: i,
                object: lookup.bombs.get(&bi).copied(),
            });
        }
        events.push(GameEvent {
            kind: EventKind::AgentDied,
            subject: i,
            object: Some(s.bombs[covering[0]].owner),
        });
    }

    // Wood: destroyed cells become Clear and may drop an item. Cells are
    // processed in row-major order so the RNG draw sequence is canonical.
    for (&pos, &bi) in &wood_cells {
        s.set_cell(pos, CellKind::Clear);
        events.push(GameEvent {
            kind: EventKind::BombDestroyedWood,
            subject: s.bombs[bi].owner,
            object: lookup.wood.get(&pos).copied(),
        });
        let u: f64 = s.rng.random();
        if u < s.config.item_prob {
            let v: f64 = s.rng.random();
            let kind = if v < 1.0 / 3.0 {
                ItemKind::ExtraBomb
            } else if v < 2.0 / 3.0 {
                ItemKind::BlastIncrease
            } else {
                ItemKind::KickAbility
            };
            s.items.push(Item { pos, kind });
        }
    }
    s.bombs.retain(|b| b.fuse > 0);
}

/// Whether `pos` lies on bomb `bi`'s blast (kill range), against the given
/// pre-explosion terrain.
fn cell_covered_by(s: &BoardState, bi: usize, pos: Pos, terrain: &[CellKind]) -> bool {
    let n = s.config.board_size;
    let bomb = &s.bombs[bi];
    if bomb.pos == pos {
        return true;
    }
    for dir in DIRS {
        let mut p = bomb.pos;
        for _ in 1..=KILL_RANGE {
            p = match p.offset(dir, n) {
                Some(next) => next,
                None => break,
            };
            if terrain[p.row * n + p.col] != CellKind::Clear {
                break;
            }
            if p == pos {
                return true;
            }
        }
    }
    false
}

fn place_bombs(s: &mut BoardState, eff: &[Action]) {
    for i in 0..NUM_AGENTS {
        if !s.agents[i].alive || eff[i] != Action::Bomb {
            continue;
        }
        let pos = s.agents[i].pos;
        if s.bomb_at(pos).is_some() {
            continue;
        }
        if s.active_bombs(i) >= s.agents[i].max_bombs as usize {
            continue;
        }
        s.bombs.push(Bomb {
            pos,
            fuse: BOMB_FUSE,
            owner: i,
            blast_power: s.agents[i].blast_power,
        });
    }
}

/// Terminal detection and zero-sum rewards: elimination pays every member
/// of the winning team +1 and the losers −1 (dead or not); draws (mutual
/// elimination or timeout) pay zero all around.
fn settle(s: &BoardState, events: &mut Vec<GameEvent>) -> ([f64; NUM_AGENTS], bool) {
    let t0 = s.team_alive(0);
    let t1 = s.team_alive(1);
    let mut rewards = [0.0; NUM_AGENTS];
    if t0 == 0 && t1 == 0 {
        return (rewards, true);
    }
    let winner = if t0 == 0 {
        Some(1u8)
    } else if t1 == 0 {
        Some(0u8)
    } else {
        None
    };
    if let Some(team) = winner {
        for a in &s.agents {
            rewards[a.id] = if a.team == team { 1.0 } else { -1.0 };
        }
        for a in s.agents.iter().filter(|a| a.alive && a.team == team) {
            for e in s.agents.iter().filter(|e| e.team != team) {
                events.push(GameEvent {
                    kind: EventKind::AgentWon,
                    subject: a.id,
                    object: Some(e.id),
                });
            }
        }
        return (rewards, true);
    }
    (rewards, s.tick >= s.config.max_steps)
}

fn debug_assert_invariants(s: &BoardState) {
    if cfg!(debug_assertions) {
        let mut seen = Vec::new();
        for a in s.agents.iter().filter(|a| a.alive) {
            assert!(!seen.contains(&a.pos), "two living agents share {:?}", a.pos);
            seen.push(a.pos);
            assert_eq!(s.cell_at(a.pos), CellKind::Clear);
        }
        for b in &s.bombs {
            assert!(b.fuse >= 1 && b.fuse <= BOMB_FUSE);
            assert_eq!(s.cell_at(b.pos), CellKind::Clear);
        }
        for it in &s.items {
            assert_eq!(s.cell_at(it.pos), CellKind::Clear, "item on blocked cell");
        }
    }
}
