//! Long-running scripted self-play audit. Replays full games between two
//! scripted teams and checks, with an independent blast model written
//! from scratch in this file, that the policy honors its one-step safety
//! guarantee: whenever an action exists whose destination no currently
//! exploding bomb can reach, the policy picks such an action.
//!
//! Deaths are still possible without breaking the guarantee: an agent can
//! be boxed in with every destination covered, or another agent can
//! contest its escape cell the same tick and bounce it back into the
//! blast. The audit verifies every observed death is one of those two.

use magnet::baselines::ScriptedPolicy;
use magnet::gridworld::{
    reset, Action, BoardState, CellKind, MapConfig, Pos, KILL_RANGE, NUM_AGENTS,
};

/// Cells hit this step by bombs whose fuse reads 1 right now, on the
/// terrain as it stands. Rays stop at the first non-Clear cell; Wood
/// soaks the hit, so cells behind it are safe.
fn exploding_coverage(state: &BoardState) -> Vec<bool> {
    let n = state.size();
    let mut covered = vec![false; n * n];
    for bomb in &state.bombs {
        if bomb.fuse != 1 {
            continue;
        }
        covered[bomb.pos.row * n + bomb.pos.col] = true;
        for delta in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let mut pos = bomb.pos;
            for _ in 0..KILL_RANGE {
                pos = match pos.offset(delta, n) {
                    Some(p) => p,
                    None => break,
                };
                if state.cell_at(pos) != CellKind::Clear {
                    break;
                }
                covered[pos.row * n + pos.col] = true;
            }
        }
    }
    covered
}

/// Where an action would put the agent if nothing else interfered. The
/// scripted policy treats bomb cells as walls (it never kicks) and
/// occupied cells as blocked (stepping at a staying agent just bounces
/// back), so the audit uses the same legality model.
fn isolated_dest(state: &BoardState, from: Pos, action: Action) -> Pos {
    let Some(delta) = action.delta() else {
        return from;
    };
    match from.offset(delta, state.size()) {
        Some(to)
            if state.cell_at(to) == CellKind::Clear
                && state.bomb_at(to).is_none()
                && state.agent_at(to).is_none() =>
        {
            to
        }
        _ => from,
    }
}

struct SoakStats {
    steps: u64,
    episodes: u64,
    wins: [u64; 2],
    draws: u64,
    deaths_trapped: u64,
    deaths_bounced: u64,
    covered_decisions: u64,
}

/// Drives scripted self-play for at least `min_steps` environment steps
/// and `min_episodes` episodes, auditing every decision and death.
fn run_soak(master_seed: u64, min_steps: u64, min_episodes: u64) -> SoakStats {
    let layout = MapConfig::default();
    let mut policies: Vec<ScriptedPolicy> = (0..NUM_AGENTS)
        .map(|id| ScriptedPolicy::new(master_seed, id))
        .collect();
    let mut stats = SoakStats {
        steps: 0,
        episodes: 0,
        wins: [0, 0],
        draws: 0,
        deaths_trapped: 0,
        deaths_bounced: 0,
        covered_decisions: 0,
    };
    while stats.steps < min_steps || stats.episodes < min_episodes {
        let mut state = reset(master_seed ^ stats.episodes, &layout).unwrap();
        loop {
            let covered = exploding_coverage(&state);
            let n = state.size();
            let at = |p: Pos| covered[p.row * n + p.col];
            let mut actions = [Action::Stop; NUM_AGENTS];
            let mut chosen_safe = [false; NUM_AGENTS];
            for id in 0..NUM_AGENTS {
                if !state.agents[id].alive {
                    continue;
                }
                let pos = state.agents[id].pos;
                actions[id] = policies[id].act(&state, id);
                let dest = isolated_dest(&state, pos, actions[id]);
                chosen_safe[id] = !at(dest);
                if !chosen_safe[id] {
                    stats.covered_decisions += 1;
                    let escape = Action::ALL
                        .iter()
                        .find(|&&a| !at(isolated_dest(&state, pos, a)));
                    assert!(
                        escape.is_none(),
                        "step {}: agent {id} at {pos:?} chose {:?} into a blast \
                         although {escape:?} reached open ground",
                        stats.steps,
                        actions[id]
                    );
                }
            }
            let before: Vec<bool> = state.agents.iter().map(|a| a.alive).collect();
            let out = state.step(&actions).unwrap();
            stats.steps += 1;
            for id in 0..NUM_AGENTS {
                if !before[id] || out.state.agents[id].alive {
                    continue;
                }
                let final_pos = out.state.agents[id].pos;
                assert!(
                    at(final_pos),
                    "step {}: agent {id} died at {final_pos:?}, a cell no \
                     fuse-1 bomb covered at decision time",
                    stats.steps
                );
                if chosen_safe[id] {
                    stats.deaths_bounced += 1;
                } else {
                    stats.deaths_trapped += 1;
                }
            }
            let done = out.done;
            if done {
                let r = out.rewards;
                if r[0] > 0.0 {
                    stats.wins[0] += 1;
                } else if r[1] > 0.0 {
                    stats.wins[1] += 1;
                } else {
                    stats.draws += 1;
                }
            }
            state = out.state;
            if done {
                break;
            }
        }
        stats.episodes += 1;
    }
    stats
}

#[test]
fn scripted_self_play_honors_one_step_safety_over_many_games() {
    let stats = run_soak(0xD00B, 100_000, 500);
    println!(
        "soak: {} steps over {} episodes; team wins {:?}, draws {}; \
         deaths trapped {}, bounced {}; covered decisions {}",
        stats.steps,
        stats.episodes,
        stats.wins,
        stats.draws,
        stats.deaths_trapped,
        stats.deaths_bounced,
        stats.covered_decisions
    );
    assert!(stats.steps >= 100_000);
    assert!(stats.episodes >= 500);

    // Mirror-match symmetry: among games somebody actually won, neither
    // team may take more than a 65% share. Timeouts say nothing about
    // either side's strength, so they stay out of the denominator.
    let decisive = stats.wins[0] + stats.wins[1];
    assert!(
        decisive >= 100,
        "only {decisive} decisive games in {} episodes",
        stats.episodes
    );
    for team in 0..2 {
        let share = stats.wins[team] as f64 / decisive as f64;
        assert!(
            (0.35..=0.65).contains(&share),
            "team {team} won {share:.3} of decisive games ({:?})",
            stats.wins
        );
    }
}
