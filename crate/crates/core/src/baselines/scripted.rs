use rand::seq::IndexedRandom;
use rand_chacha::ChaCha20Rng;

use crate::gridworld::{Action, BoardState, CellKind, Pos, KILL_RANGE};
use crate::rng::derive_rng;

/// Escape plans look this many steps ahead: the longest fuse on the board
/// is 10, a bomb placed this step fires 11 steps from now, so by step 12
/// every currently knowable blast has resolved.
const HORIZON: usize = 12;

/// Rule-based opponent. Decision order per step:
///
/// 1. if the current cell is covered by any live bomb, take the move that
///    reaches an uncovered cell soonest (escape);
/// 2. place a bomb when adjacent to Wood or holding an aligned enemy
///    within kill range, provided an escape from the blast exists;
/// 3. walk toward the nearest item;
/// 4. walk toward the nearest enemy;
/// 5. otherwise pick a random survivable move.
///
/// Every candidate move is vetted by a time-expanded escape search before
/// it is considered at all, so the policy never volunteers into a blast it
/// can foresee. Danger is judged pessimistically for fuses ≥ 2 (Wood may
/// be gone by then, so it does not shield) and exactly for fuse-1 bombs
/// (simultaneous explosions see pre-blast terrain, so Wood shields).
pub struct ScriptedPolicy {
    rng: ChaCha20Rng,
}

impl ScriptedPolicy {
    pub fn new(seed: u64, agent_tag: usize) -> ScriptedPolicy {
        ScriptedPolicy {
            rng: derive_rng(seed, "scripted-policy", agent_tag as u64),
        }
    }

    /// Snapshot of the policy's RNG stream, for checkpoint round-trips.
    pub fn rng_state(&self) -> crate::rng::RngState {
        crate::rng::RngState::capture(&self.rng)
    }

    pub fn restore_rng(&mut self, state: &crate::rng::RngState) {
        self.rng = state.restore();
    }

    pub fn act(&mut self, state: &BoardState, agent: usize) -> Action {
        assert!(state.agents[agent].alive, "dead agents do not act");
        let me = &state.agents[agent];
        let danger = DangerMap::build(state);
        let n = state.size();

        // Legal move candidates and the cell each would occupy this step.
        let mut candidates: Vec<(Action, Pos)> = vec![(Action::Stop, me.pos)];
        for dir in [Action::Up, Action::Down, Action::Left, Action::Right] {
            if let Some(target) = me.pos.offset(dir.delta().unwrap(), n) {
                let blocked = state.cell_at(target) != CellKind::Clear
                    || state.bomb_at(target).is_some()
                    || state
                        .agents
                        .iter()
                        .any(|a| a.alive && a.id != agent && a.pos == target);
                if !blocked {
                    candidates.push((dir, target));
                }
            }
        }
        let can_bomb = state.bomb_at(me.pos).is_none()
            && state.active_bombs(agent) < me.max_bombs as usize;

        let survivors: Vec<(Action, Pos)> = candidates
            .iter()
            .copied()
            .filter(|&(_, cell)| danger.escape_time(state, cell).is_some())
            .collect();

        // Doomed: every reachable cell dies to some already-lit fuse. Take
        // whichever cell stays alive longest.
        if survivors.is_empty() {
            return candidates
                .iter()
                .copied()
                .max_by_key(|&(_, cell)| danger.first_fatal_step(cell))
                .map(|(a, _)| a)
                .unwrap_or(Action::Stop);
        }

        // Rule 1: covered right now, run for the nearest uncovered cell.
        if !danger.is_uncovered(me.pos) {
            return survivors
                .iter()
                .copied()
                .min_by_key(|&(_, cell)| danger.escape_time(state, cell).unwrap_or(usize::MAX))
                .map(|(a, _)| a)
                .unwrap();
        }

        // Rule 2: drop a bomb if it accomplishes something and we can
        // provably get away from it.
        if can_bomb && self.bomb_is_worthwhile(state, agent) {
            let with_bomb = danger.with_hypothetical(state, me.pos, me.blast_power);
            if with_bomb.escape_time(state, me.pos).is_some() {
                return Action::Bomb;
            }
        }

        // Rules 3 and 4: chase items, then enemies.
        let item_goals: Vec<Pos> = state.items.iter().map(|i| i.pos).collect();
        if let Some(step) = first_step_toward(state, me.pos, &item_goals) {
            if let Some(&(action, _)) = survivors.iter().find(|&&(_, c)| c == step) {
                return action;
            }
        }
        let enemy_goals: Vec<Pos> = state
            .agents
            .iter()
            .filter(|a| a.alive && a.team != me.team)
            .flat_map(|a| {
                Action::ALL
                    .iter()
                    .filter_map(|d| d.delta())
                    .filter_map(|d| a.pos.offset(d, n))
                    .collect::<Vec<_>>()
            })
            .filter(|&p| state.cell_at(p) == CellKind::Clear && state.bomb_at(p).is_none())
            .collect();
        if let Some(step) = first_step_toward(state, me.pos, &enemy_goals) {
            if let Some(&(action, _)) = survivors.iter().find(|&&(_, c)| c == step) {
                return action;
            }
        }

        // Rule 5: anything survivable.
        survivors
            .choose(&mut self.rng)
            .map(|&(a, _)| a)
            .unwrap_or(Action::Stop)
    }

    /// Offense trigger: Wood in an adjacent cell, or an aligned enemy with
    /// clear sight within kill range (judged on current terrain).
    fn bomb_is_worthwhile(&self, state: &BoardState, agent: usize) -> bool {
        let me = &state.agents[agent];
        let n = state.size();
        for dir in DIRS {
            if let Some(p) = me.pos.offset(dir, n) {
                if state.cell_at(p) == CellKind::Wood {
                    return true;
                }
            }
        }
        for dir in DIRS {
            let mut p = me.pos;
            for _ in 1..=KILL_RANGE {
                p = match p.offset(dir, n) {
                    Some(next) => next,
                    None => break,
                };
                if state.cell_at(p) != CellKind::Clear {
                    break;
                }
                if state
                    .agents
                    .iter()
                    .any(|a| a.alive && a.team != me.team && a.pos == p)
                {
                    return true;
                }
            }
        }
        false
    }
}

const DIRS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Per-cell fuse times of every bomb whose blast can reach that cell.
/// Fuse f means the blast lands while occupying the cell f steps from now
/// (moving this step counts as step 1).
struct DangerMap {
    n: usize,
    fuses: Vec<Vec<u8>>,
}

impl DangerMap {
    fn build(state: &BoardState) -> DangerMap {
        let n = state.size();
        let mut map = DangerMap {
            n,
            fuses: vec![Vec::new(); n * n],
        };
        for bomb in &state.bombs {
            map.add_bomb(state, bomb.pos, bomb.fuse);
        }
        map
    }

    /// The map plus a bomb we are thinking about placing this step: it
    /// would be laid after this step's explosions and fire 11 steps from
    /// now. Its wood-destruction power is irrelevant to kill coverage.
    fn with_hypothetical(&self, state: &BoardState, pos: Pos, _blast_power: u32) -> DangerMap {
        let mut map = DangerMap {
            n: self.n,
            fuses: self.fuses.clone(),
        };
        map.add_bomb(state, pos, 11);
        map
    }

    fn add_bomb(&mut self, state: &BoardState, pos: Pos, fuse: u8) {
        // Fuse-1 blasts geometry is already locked in (simultaneous
        // explosions see pre-blast terrain), so Wood shields; for longer
        // fuses Wood may be destroyed first, so assume it will be.
        let wood_shields = fuse == 1;
        self.fuses[pos.row * self.n + pos.col].push(fuse);
        for dir in DIRS {
            let mut p = pos;
            for _ in 1..=KILL_RANGE {
                p = match p.offset(dir, self.n) {
                    Some(next) => next,
                    None => break,
                };
                match state.cell_at(p) {
                    CellKind::Rigid => break,
                    CellKind::Wood => {
                        if wood_shields {
                            break;
                        }
                    }
                    CellKind::Clear => {
                        self.fuses[p.row * self.n + p.col].push(fuse);
                    }
                }
            }
        }
    }

    fn covering(&self, cell: Pos) -> &[u8] {
        &self.fuses[cell.row * self.n + cell.col]
    }

    fn is_uncovered(&self, cell: Pos) -> bool {
        self.covering(cell).is_empty()
    }

    fn deadly_at(&self, cell: Pos, step: usize) -> bool {
        self.covering(cell).iter().any(|&f| f as usize == step)
    }

    /// No blast lands on `cell` at `step` or later.
    fn clear_from(&self, cell: Pos, step: usize) -> bool {
        self.covering(cell).iter().all(|&f| (f as usize) < step)
    }

    /// Latest step the agent could still be alive when pinned to `cell`.
    fn first_fatal_step(&self, cell: Pos) -> usize {
        self.covering(cell)
            .iter()
            .map(|&f| f as usize)
            .min()
            .unwrap_or(usize::MAX)
    }

    /// Time-expanded escape search. Occupying `start` this step (step 1),
    /// can the agent keep dodging every currently lit fuse? Returns the
    /// earliest step at which it can sit on a cell with nothing left to
    /// dodge, or None when every line dies. Movement model: terrain and
    /// bombs block throughout; other agents are ignored beyond this step
    /// (they move too).
    fn escape_time(&self, state: &BoardState, start: Pos) -> Option<usize> {
        if self.deadly_at(start, 1) {
            return None;
        }
        let mut frontier = vec![start];
        for step in 1..=HORIZON {
            if frontier.iter().any(|&c| self.clear_from(c, step)) {
                return Some(step);
            }
            let mut next: Vec<Pos> = Vec::new();
            let mut next_seen = vec![false; self.n * self.n];
            for &cell in &frontier {
                for target in std::iter::once(cell).chain(
                    DIRS.iter()
                        .filter_map(|&d| cell.offset(d, self.n))
                        .filter(|&t| {
                            state.cell_at(t) == CellKind::Clear && state.bomb_at(t).is_none()
                        }),
                ) {
                    let idx = target.row * self.n + target.col;
                    if !next_seen[idx] && !self.deadly_at(target, step + 1) {
                        next_seen[idx] = true;
                        next.push(target);
                    }
                }
            }
            frontier = next;
            if frontier.is_empty() {
                return None;
            }
        }
        // Beyond the horizon every fuse has burned.
        Some(HORIZON + 1)
    }
}

/// First move of a shortest path from `from` to any goal cell, walking
/// only Clear, bomb-free cells. Direction exploration order makes ties
/// deterministic. None when no goal is reachable (or we already stand on
/// one).
fn first_step_toward(state: &BoardState, from: Pos, goals: &[Pos]) -> Option<Pos> {
    if goals.is_empty() || goals.contains(&from) {
        return None;
    }
    let n = state.size();
    let mut first: Vec<Option<Pos>> = vec![None; n * n];
    let mut queue = std::collections::VecDeque::new();
    first[from.row * n + from.col] = Some(from);
    queue.push_back(from);
    while let Some(cell) = queue.pop_front() {
        for dir in DIRS {
            let next = match cell.offset(dir, n) {
                Some(p) => p,
                None => continue,
            };
            if state.cell_at(next) != CellKind::Clear || state.bomb_at(next).is_some() {
                continue;
            }
            let idx = next.row * n + next.col;
            if first[idx].is_some() {
                continue;
            }
            first[idx] = Some(if cell == from { next } else { first[cell.row * n + cell.col].unwrap() });
            if goals.contains(&next) {
                return first[idx];
            }
            queue.push_back(next);
        }
    }
    None
}

/// Uniform-random policy over the full action set; the zero-skill floor
/// that learned policies are measured against.
pub struct RandomPolicy {
    rng: ChaCha20Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64, agent_tag: usize) -> RandomPolicy {
        RandomPolicy {
            rng: derive_rng(seed, "random-policy", agent_tag as u64),
        }
    }

    pub fn act(&mut self, _state: &BoardState, _agent: usize) -> Action {
        *Action::ALL.choose(&mut self.rng).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{reset, AgentState, BoardState, Bomb, Item, ItemKind, MapConfig};

    fn empty_cells(n: usize) -> Vec<CellKind> {
        vec![CellKind::Clear; n * n]
    }

    fn corner_agents() -> Vec<AgentState> {
        [(0usize, 0usize), (0, 10), (10, 10), (10, 0)]
            .iter()
            .enumerate()
            .map(|(id, &(r, c))| AgentState {
                id,
                team: (id % 2) as u8,
                pos: Pos::new(r, c),
                alive: true,
                max_bombs: 1,
                blast_power: 1,
                can_kick: false,
            })
            .collect()
    }

    fn board(cells: Vec<CellKind>, bombs: Vec<Bomb>, items: Vec<Item>, agents: Vec<AgentState>) -> BoardState {
        BoardState::from_parts(cells, bombs, items, agents, MapConfig::default(), 1)
    }

    #[test]
    fn forced_escape_takes_the_open_neighbor() {
        // Agent stands on its own bomb in a pocket whose only exit is to
        // the right; diagonal safety is two moves away, so it must start
        // moving immediately.
        let mut cells = empty_cells(11);
        for pos in [Pos::new(4, 5), Pos::new(6, 5), Pos::new(5, 4)] {
            cells[pos.row * 11 + pos.col] = CellKind::Rigid;
        }
        let mut agents = corner_agents();
        agents[0].pos = Pos::new(5, 5);
        let bombs = vec![Bomb { pos: Pos::new(5, 5), fuse: 3, owner: 0, blast_power: 1 }];
        let s = board(cells, bombs, Vec::new(), agents);
        let mut policy = ScriptedPolicy::new(0, 0);
        assert_eq!(policy.act(&s, 0), Action::Right);
    }

    #[test]
    fn never_walks_into_an_imminent_blast() {
        // A fuse-1 bomb five cells up the column: its blast stops one row
        // short of the agent, so staying is fine but stepping up joins the
        // blast. The policy must not volunteer.
        let mut agents = corner_agents();
        agents[0].pos = Pos::new(5, 5);
        let bombs = vec![Bomb { pos: Pos::new(0, 5), fuse: 1, owner: 1, blast_power: 1 }];
        let s = board(empty_cells(11), bombs, Vec::new(), agents);
        for trial in 0..20 {
            let mut policy = ScriptedPolicy::new(trial, 0);
            assert_ne!(policy.act(&s, 0), Action::Up, "seed {trial}");
        }
    }

    #[test]
    fn adjacent_wood_with_retreat_places_bomb() {
        let mut cells = empty_cells(11);
        cells[5 * 11 + 6] = CellKind::Wood;
        let mut agents = corner_agents();
        agents[0].pos = Pos::new(5, 5);
        let s = board(cells, Vec::new(), Vec::new(), agents);
        let mut policy = ScriptedPolicy::new(0, 0);
        assert_eq!(policy.act(&s, 0), Action::Bomb);
    }

    #[test]
    fn aligned_enemy_in_range_places_bomb() {
        let mut agents = corner_agents();
        agents[0].pos = Pos::new(5, 5);
        agents[1].pos = Pos::new(5, 8);
        let s = board(empty_cells(11), Vec::new(), Vec::new(), agents);
        let mut policy = ScriptedPolicy::new(0, 0);
        assert_eq!(policy.act(&s, 0), Action::Bomb);
    }

    #[test]
    fn trapped_agent_refuses_to_bomb_itself() {
        // Dead-end pocket (5,5)..(5,7): a bomb laid here covers the whole
        // pocket, so rule 2's escape check must veto it even though Wood
        // sits adjacent.
        let mut cells = empty_cells(11);
        for col in 3..=8 {
            cells[4 * 11 + col] = CellKind::Rigid;
            cells[6 * 11 + col] = CellKind::Rigid;
        }
        cells[5 * 11 + 8] = CellKind::Rigid;
        cells[5 * 11 + 4] = CellKind::Rigid;
        cells[4 * 11 + 5] = CellKind::Wood;
        let mut agents = corner_agents();
        agents[0].pos = Pos::new(5, 5);
        let s = board(cells.clone(), Vec::new(), Vec::new(), agents.clone());
        // The pocket really is sealed except for its interior.
        assert_eq!(cells[5 * 11 + 8], CellKind::Rigid);
        for trial in 0..10 {
            let mut policy = ScriptedPolicy::new(trial, 0);
            assert_ne!(policy.act(&s, 0), Action::Bomb, "seed {trial}");
        }
    }

    #[test]
    fn walks_toward_the_nearest_item() {
        let mut agents = corner_agents();
        agents[0].pos = Pos::new(5, 5);
        let items = vec![Item { pos: Pos::new(5, 8), kind: ItemKind::ExtraBomb }];
        let s = board(empty_cells(11), Vec::new(), items, agents);
        let mut policy = ScriptedPolicy::new(0, 0);
        assert_eq!(policy.act(&s, 0), Action::Right);
    }

    #[test]
    fn decisions_are_deterministic_given_the_seed() {
        let config = MapConfig::default();
        let s = reset(77, &config).unwrap();
        let a: Vec<Action> = (0..4).map(|i| ScriptedPolicy::new(9, i).act(&s, i)).collect();
        let b: Vec<Action> = (0..4).map(|i| ScriptedPolicy::new(9, i).act(&s, i)).collect();
        assert_eq!(a, b);
    }
}
