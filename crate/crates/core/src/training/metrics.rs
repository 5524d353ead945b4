use std::fmt::Write as _;
use std::path::Path;

/// 97.5% normal quantile, for two-sided 95% intervals.
pub const Z95: f64 = 1.959963984540054;

/// Wilson score interval for a binomial proportion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilsonInterval {
    pub rate: f64,
    pub low: f64,
    pub high: f64,
}

impl WilsonInterval {
    /// Whether this interval lies strictly above another (no overlap).
    pub fn strictly_above(&self, other: &WilsonInterval) -> bool {
        self.low > other.high
    }
}

/// 95% Wilson score interval; None when there are no trials.
pub fn wilson(successes: usize, trials: usize) -> Option<WilsonInterval> {
    if trials == 0 {
        return None;
    }
    assert!(successes <= trials, "more successes than trials");
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = Z95;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    Some(WilsonInterval {
        rate: p,
        low: (center - half).max(0.0),
        high: (center + half).min(1.0),
    })
}

/// One evaluation-window record of a training run. Loss columns not
/// produced by a given algorithm are written as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub episode: usize,
    pub win_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub graph_loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

pub const METRIC_HEADER: &str = "episode,win_rate,ci_low,ci_high,graph_loss,critic_loss,actor_loss";

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("metric log i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("metric log line {line} is malformed: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Renders rows as CSV with a fixed column order; full f64 precision so
/// logs round-trip exactly.
pub fn render_metrics(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRIC_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.episode, r.win_rate, r.ci_low, r.ci_high, r.graph_loss, r.critic_loss, r.actor_loss
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<(), MetricError> {
    std::fs::write(path, render_metrics(rows))?;
    Ok(())
}

/// Lines starting with `#` are comments (tools embed config hashes there);
/// the header must be the first non-comment line.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>, MetricError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, header)) if header == METRIC_HEADER => {}
        Some((_, other)) => {
            return Err(MetricError::Malformed {
                line: 1,
                reason: format!("expected header {METRIC_HEADER:?}, found {other:?}"),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(MetricError::Malformed {
                line: i + 1,
                reason: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64, MetricError> {
            s.parse().map_err(|_| MetricError::Malformed {
                line: i + 1,
                reason: format!("bad number {s:?}"),
            })
        };
        rows.push(MetricRow {
            episode: fields[0].parse().map_err(|_| MetricError::Malformed {
                line: i + 1,
                reason: format!("bad episode {:?}", fields[0]),
            })?,
            win_rate: num(fields[1])?,
            ci_low: num(fields[2])?,
            ci_high: num(fields[3])?,
            graph_loss: num(fields[4])?,
            critic_loss: num(fields[5])?,
            actor_loss: num(fields[6])?,
        });
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>, MetricError> {
    parse_metrics(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed independently from the closed-form Wilson
    // expression at z = 1.959963984540054.
    #[test]
    fn wilson_matches_hand_computed_values() {
        let w = wilson(50, 100).unwrap();
        assert!((w.rate - 0.5).abs() < 1e-15);
        assert!((w.low - 0.4038315303659956).abs() < 1e-12);
        assert!((w.high - 0.5961684696340044).abs() < 1e-12);

        let w = wilson(0, 10).unwrap();
        assert_eq!(w.low, 0.0);
        assert!((w.high - 0.2775327998628892).abs() < 1e-12);

        let w = wilson(350, 500).unwrap();
        assert!((w.low - 0.6584321959560773).abs() < 1e-12);
        assert!((w.high - 0.7385180678593017).abs() < 1e-12);
    }

    #[test]
    fn wilson_is_symmetric_under_complement() {
        for (k, n) in [(1usize, 8usize), (3, 17), (40, 41), (250, 500)] {
            let a = wilson(k, n).unwrap();
            let b = wilson(n - k, n).unwrap();
            assert!((a.low - (1.0 - b.high)).abs() < 1e-12);
            assert!((a.high - (1.0 - b.low)).abs() < 1e-12);
        }
    }

    #[test]
    fn wilson_refuses_empty_samples() {
        assert!(wilson(0, 0).is_none());
    }

    #[test]
    fn interval_separation_requires_no_overlap() {
        let lo = wilson(10, 100).unwrap();
        let hi = wilson(90, 100).unwrap();
        assert!(hi.strictly_above(&lo));
        assert!(!lo.strictly_above(&hi));
        assert!(!hi.strictly_above(&hi));
    }

    #[test]
    fn metric_rows_round_trip_through_csv() {
        let rows = vec![
            MetricRow {
                episode: 100,
                win_rate: 0.515,
                ci_low: 0.4038315303659956,
                ci_high: 0.5961684696340044,
                graph_loss: 1.25e-3,
                critic_loss: 0.75,
                actor_loss: -0.125,
            },
            MetricRow {
                episode: 200,
                win_rate: 0.25,
                ci_low: 0.1,
                ci_high: 0.4,
                graph_loss: 0.0,
                critic_loss: 0.5,
                actor_loss: -0.25,
            },
        ];
        let text = render_metrics(&rows);
        assert!(text.starts_with(METRIC_HEADER));
        assert_eq!(parse_metrics(&text).unwrap(), rows);
    }

    #[test]
    fn comment_lines_are_ignored() {
        let mut text = String::from("# config 0xdeadbeef\n");
        text.push_str(METRIC_HEADER);
        text.push_str("\n# midstream note\n1,0.5,0.4,0.6,0,0,0\n");
        let rows = parse_metrics(&text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].episode, 1);
    }

    #[test]
    fn malformed_lines_are_located() {
        let mut text = String::from(METRIC_HEADER);
        text.push_str("\n1,0.5,0.4,0.6,0,0,0\nnot,a,row\n");
        match parse_metrics(&text).unwrap_err() {
            MetricError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
