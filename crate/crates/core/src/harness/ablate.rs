//! The 2x2x2 ablation matrix: temporal mixer (SA), graph sharing (GS),
//! and message passing (MG) each toggled on or off. Every cell trains
//! from scratch under the same base config and is then evaluated against
//! the scripted team; rows come back ranked by win rate.

use crate::harness::config::AblationFlags;
use crate::training::magnet::{evaluate_team, train_magnet, TrainConfig, TrainError};
use crate::training::{wilson, WilsonInterval};

/// One trained-and-evaluated cell of the matrix. Draws count against the
/// win rate: the rate is wins over all evaluation games.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub wins: usize,
    pub draws: usize,
    pub games: usize,
    pub win_rate: f64,
    pub ci: WilsonInterval,
}

impl AblationRow {
    pub fn label(&self) -> String {
        self.flags.label()
    }
}

/// Train one run per flag combination, evaluate each against the
/// scripted team for `base.eval_games` games, and rank descending by
/// win rate. The seed and every other knob come from `base`, so two
/// rows differ only in the three toggled axes.
pub fn ablate(base: &TrainConfig, eval_seed: u64) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(8);
    for flags in AblationFlags::all() {
        let cfg = flags.apply(base);
        let out = train_magnet(&cfg)?;
        let stats =
            evaluate_team(&out.pair.online, &cfg.map, cfg.team, cfg.eval_games, eval_seed)?;
        let games = stats.games();
        let ci = wilson(stats.wins, games)
            .unwrap_or(WilsonInterval { rate: 0.0, low: 0.0, high: 1.0 });
        rows.push(AblationRow {
            flags,
            wins: stats.wins,
            draws: stats.draws,
            games,
            win_rate: ci.rate,
            ci,
        });
    }
    rows.sort_by(|x, y| y.win_rate.partial_cmp(&x.win_rate).expect("win rates are finite"));
    Ok(rows)
}

pub const ABLATION_HEADER: &str = "variant,win_rate,ci_low,ci_high,wins,draws,games";

/// Machine-readable rows, full float precision.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{},{},{}\n",
            r.label(),
            r.win_rate,
            r.ci.low,
            r.ci.high,
            r.wins,
            r.draws,
            r.games
        ));
    }
    out
}

/// Aligned table for terminals.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("rank  variant    win_rate  95% CI           wins  draws  games\n");
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{:<4}  {:<9}  {:>7.3}   {:>5.3} .. {:>5.3}   {:>4}  {:>5}  {:>5}\n",
            i + 1,
            r.label(),
            r.win_rate,
            r.ci.low,
            r.ci.high,
            r.wins,
            r.draws,
            r.games
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{EventHeuristics, GraphGenConfig};
    use crate::gridworld::MapConfig;
    use crate::msgpass::MsgPassConfig;

    fn minuscule() -> TrainConfig {
        TrainConfig {
            map: MapConfig {
                board_size: 7,
                wood_density: 0.15,
                rigid_density: 0.1,
                item_prob: 0.3,
                max_steps: 12,
                object_cap: 6,
            },
            net: GraphGenConfig {
                embed_dim: 8,
                filters: 2,
                kernel: 3,
                fuse_width: 8,
                mixer_widths: vec![8, 8],
                head_hidden: 4,
                dropout: 0.0,
            },
            msgpass: MsgPassConfig {
                info_dim: 6,
                init_widths: vec![8],
                message_widths: vec![10],
                choice_widths: vec![12],
                steps: 1,
                crop_half: 1,
            },
            heuristics: EventHeuristics::default(),
            direct_widths: vec![8],
            critic_widths: vec![8],
            seed: 11,
            pretrain_episodes: 1,
            episodes: 1,
            eval_window: 1,
            eval_games: 2,
            buffer_capacity: 64,
            batch: 4,
            update_every: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn the_matrix_yields_eight_ranked_rows() {
        let rows = ablate(&minuscule(), 21).unwrap();
        assert_eq!(rows.len(), 8);
        let mut labels: Vec<String> = rows.iter().map(|r| r.label()).collect();
        for pair in rows.windows(2) {
            assert!(
                pair[0].win_rate >= pair[1].win_rate,
                "rows must rank descending by win rate"
            );
        }
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 8, "every flag combination appears exactly once");
        for r in &rows {
            assert_eq!(r.games, 2);
            assert!(r.ci.low <= r.win_rate && r.win_rate <= r.ci.high);
        }
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.starts_with(ABLATION_HEADER));
        let table = render_ablation(&rows);
        assert!(table.contains("SA+GS+MG+") && table.contains("SA-GS-MG-"));
    }
}
