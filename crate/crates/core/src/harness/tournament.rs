//! Head-to-head evaluation between two team policies. Sides alternate
//! every match, each match draws its own seeds, and the report carries a
//! Wilson interval on the A-side win rate. Matches can run across worker
//! threads; because policies reseed per match, the worker count never
//! changes the result.

use std::thread;

use crate::baselines::EpisodeOutcome;
use crate::gridworld::{reset, Action, EnvError, MapConfig, MapError, NUM_AGENTS};
use crate::harness::policy::{side_seed, MatchPolicy, PolicySpec, PolicySpecError};
use crate::rng::{fnv1a64, fnv1a64_extend};
use crate::training::{wilson, WilsonInterval};

/// Shape of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TournamentConfig {
    pub matches: usize,
    pub map: MapConfig,
    pub seed: u64,
    /// Count draws in the win-rate denominator. Off by default: the rate
    /// then reads "share of decisive matches won by A".
    pub include_draws: bool,
    /// Worker threads; matches are dealt round-robin.
    pub workers: usize,
}

impl Default for TournamentConfig {
    fn default() -> TournamentConfig {
        TournamentConfig {
            matches: 100,
            map: MapConfig::default(),
            seed: 0,
            include_draws: false,
            workers: 1,
        }
    }
}

/// Aggregate tournament result from policy A's perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct WinReport {
    pub matches: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub draws: usize,
    /// A's wins over counted matches (see `include_draws`).
    pub rate_a: f64,
    pub ci: WilsonInterval,
    pub include_draws: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TournamentError {
    #[error(transparent)]
    Policy(#[from] PolicySpecError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One full episode: A on team `side_a`, B on the other, both notified
/// after every step. Returns the outcome from A's perspective.
fn play_match(
    pa: &mut dyn MatchPolicy,
    pb: &mut dyn MatchPolicy,
    map: &MapConfig,
    board_seed: u64,
    match_seed: u64,
    side_a: u8,
) -> Result<EpisodeOutcome, TournamentError> {
    let mut state = reset(board_seed, map)?;
    pa.begin_episode(&state, side_a, side_seed(match_seed, 0));
    pb.begin_episode(&state, 1 - side_a, side_seed(match_seed, 1));
    loop {
        let mut actions = [Action::Stop; NUM_AGENTS];
        for (agent, slot) in actions.iter_mut().enumerate() {
            if !state.agents[agent].alive {
                continue;
            }
            let policy: &mut dyn MatchPolicy =
                if agent % 2 == side_a as usize { &mut *pa } else { &mut *pb };
            *slot = policy.act(&state, agent);
        }
        let out = state.step(&actions)?;
        pa.observe_step(&out.state, &actions);
        pb.observe_step(&out.state, &actions);
        let reward_a = out.rewards[side_a as usize];
        state = out.state;
        if out.done {
            return Ok(if reward_a > 0.0 {
                EpisodeOutcome::Win
            } else if reward_a < 0.0 {
                EpisodeOutcome::Loss
            } else {
                EpisodeOutcome::Draw
            });
        }
    }
}

/// Run `cfg.matches` episodes of A against B. Match `i` puts A on team
/// `i % 2` with board and policy seeds derived from `(cfg.seed, i)`, so
/// any subset of matches can be replayed independently; workers only
/// split the loop, and the merge is single-threaded.
pub fn tournament(
    a: &PolicySpec,
    b: &PolicySpec,
    cfg: &TournamentConfig,
) -> Result<WinReport, TournamentError> {
    assert!(cfg.workers >= 1, "tournament needs at least one worker");
    let workers = cfg.workers.min(cfg.matches.max(1));
    type MatchResults = Result<Vec<(usize, EpisodeOutcome)>, TournamentError>;
    let per_worker: Vec<MatchResults> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || -> MatchResults {
                    // Rc-based policies cannot cross threads, so each
                    // worker instantiates its own, one per side.
                    let mut pa = [a.build(0)?, a.build(1)?];
                    let mut pb = [b.build(0)?, b.build(1)?];
                    let mut outcomes = Vec::new();
                    let mut i = w;
                    while i < cfg.matches {
                        let h = fnv1a64_extend(
                            fnv1a64(&cfg.seed.to_le_bytes()),
                            &(i as u64).to_le_bytes(),
                        );
                        let side_a = (i % 2) as u8;
                        let outcome = play_match(
                            &mut *pa[side_a as usize],
                            &mut *pb[1 - side_a as usize],
                            &cfg.map,
                            fnv1a64_extend(h, b"board"),
                            fnv1a64_extend(h, b"match"),
                            side_a,
                        )?;
                        outcomes.push((i, outcome));
                        i += workers;
                    }
                    Ok(outcomes)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("tournament worker panicked")).collect()
    });

    let mut merged = Vec::with_capacity(cfg.matches);
    for r in per_worker {
        merged.extend(r?);
    }
    merged.sort_by_key(|&(i, _)| i);

    let (mut wins_a, mut wins_b, mut draws) = (0usize, 0usize, 0usize);
    for (_, outcome) in merged {
        match outcome {
            EpisodeOutcome::Win => wins_a += 1,
            EpisodeOutcome::Loss => wins_b += 1,
            EpisodeOutcome::Draw => draws += 1,
        }
    }
    let trials = if cfg.include_draws { wins_a + wins_b + draws } else { wins_a + wins_b };
    // No decisive matches leaves the rate undefined; report a vacuous
    // full-width interval rather than poisoning downstream arithmetic.
    let ci = wilson(wins_a, trials).unwrap_or(WilsonInterval { rate: 0.0, low: 0.0, high: 1.0 });
    Ok(WinReport {
        matches: cfg.matches,
        wins_a,
        wins_b,
        draws,
        rate_a: ci.rate,
        ci,
        include_draws: cfg.include_draws,
    })
}

/// One-line human rendering of a report.
pub fn render_report(a: &str, b: &str, r: &WinReport) -> String {
    format!(
        "{a} vs {b}: {} matches, {}-{}-{} (W-L-D), rate_a {:.3} (95% CI {:.3}..{:.3}{})",
        r.matches,
        r.wins_a,
        r.wins_b,
        r.draws,
        r.rate_a,
        r.ci.low,
        r.ci.high,
        if r.include_draws { ", draws counted" } else { "" }
    )
}
