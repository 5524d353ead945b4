use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{reset, Action, EnvError, GameEvent, MapConfig, MapError};

/// First line of an episode log: everything needed to re-simulate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub seed: u64,
    pub map: MapConfig,
    /// Hash of the experiment config that produced the episode, when one
    /// was in play; lets tooling refuse cross-config mixups.
    pub config_hash: Option<u64>,
    pub initial_hash: u64,
}

/// One line per environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u32,
    /// Action indices, one per agent.
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub events: Vec<GameEvent>,
    pub state_hash: u64,
    pub done: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("episode log i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed episode log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("episode log has no header line")]
    MissingHeader,
    #[error("episode log header holds an invalid map: {0}")]
    BadMap(#[from] MapError),
    #[error("unknown action index {index} at tick {tick}")]
    BadAction { tick: u32, index: u8 },
    #[error("environment rejected logged actions at tick {tick}: {source}")]
    Env { tick: u32, source: EnvError },
    #[error("state hash mismatch at tick {tick}: log says {want:#018x}, replay produced {got:#018x}")]
    HashMismatch { tick: u32, want: u64, got: u64 },
    #[error("initial state hash mismatch: log says {want:#018x}, reset produced {got:#018x}")]
    InitialHashMismatch { want: u64, got: u64 },
}

/// Append-only JSON-lines writer: one header line, then one line per step.
pub struct EpisodeLogWriter {
    out: BufWriter<File>,
}

impl EpisodeLogWriter {
    pub fn create(path: &Path, header: &EpisodeHeader) -> Result<EpisodeLogWriter, LogError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, header).map_err(|source| LogError::Parse {
            line: 1,
            source,
        })?;
        out.write_all(b"\n")?;
        Ok(EpisodeLogWriter { out })
    }

    pub fn append(&mut self, record: &StepRecord) -> Result<(), LogError> {
        serde_json::to_writer(&mut self.out, record).map_err(|source| LogError::Parse {
            line: 0,
            source,
        })?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed episode log, prior to any re-simulation.
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
}

pub fn read_episode(path: &Path) -> Result<EpisodeLog, LogError> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let header_line = lines.next().ok_or(LogError::MissingHeader)??;
    let header: EpisodeHeader =
        serde_json::from_str(&header_line).map_err(|source| LogError::Parse { line: 1, source })?;
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(&line)
            .map_err(|source| LogError::Parse { line: i + 2, source })?;
        steps.push(record);
    }
    Ok(EpisodeLog { header, steps })
}

/// Outcome of a verified replay.
#[derive(Debug, PartialEq, Eq)]
pub struct ReplayReport {
    pub steps: usize,
    pub final_hash: u64,
    pub done: bool,
}

/// Re-simulates a logged episode from its header and checks every recorded
/// state hash along the way, so a log is also a regression test for the
/// dynamics. Returns the per-step verified report or the first divergence.
pub fn replay_episode(path: &Path) -> Result<ReplayReport, LogError> {
    let log = read_episode(path)?;
    replay_parsed(&log)
}

/// Replay over an already-parsed log; `replay_episode` is the file-path
/// wrapper. Callers that want the intermediate states can drive this with
/// a visitor instead.
pub fn replay_parsed(log: &EpisodeLog) -> Result<ReplayReport, LogError> {
    let mut state = reset(log.header.seed, &log.header.map)?;
    let got = state.state_hash();
    if got != log.header.initial_hash {
        return Err(LogError::InitialHashMismatch {
            want: log.header.initial_hash,
            got,
        });
    }
    let mut final_hash = got;
    let mut done = false;
    for record in &log.steps {
        let mut actions = Vec::with_capacity(record.actions.len());
        for &index in &record.actions {
            actions.push(Action::from_index(index as usize).ok_or(LogError::BadAction {
                tick: record.tick,
                index,
            })?);
        }
        let outcome = state.step(&actions).map_err(|source| LogError::Env {
            tick: record.tick,
            source,
        })?;
        state = outcome.state;
        let got = state.state_hash();
        if got != record.state_hash {
            return Err(LogError::HashMismatch {
                tick: record.tick,
                want: record.state_hash,
                got,
            });
        }
        final_hash = got;
        done = outcome.done;
    }
    Ok(ReplayReport {
        steps: log.steps.len(),
        final_hash,
        done,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn write_random_episode(path: &Path, seed: u64, steps: usize) -> EpisodeLog {
        let map = MapConfig::default();
        let mut state = reset(seed, &map).unwrap();
        let header = EpisodeHeader {
            seed,
            map,
            config_hash: Some(0xfeed),
            initial_hash: state.state_hash(),
        };
        let mut writer = EpisodeLogWriter::create(path, &header).unwrap();
        let mut rng = crate::rng::derive_rng(seed, "log-actions", 0);
        let mut records = Vec::new();
        for _ in 0..steps {
            if state.done() {
                break;
            }
            let actions: Vec<u8> = (0..4).map(|_| rng.random_range(0..6u8)).collect();
            let acts: Vec<Action> = actions
                .iter()
                .map(|&i| Action::from_index(i as usize).unwrap())
                .collect();
            let outcome = state.step(&acts).unwrap();
            state = outcome.state;
            let record = StepRecord {
                tick: state.tick,
                actions,
                rewards: outcome.rewards.to_vec(),
                events: outcome.events,
                state_hash: state.state_hash(),
                done: outcome.done,
            };
            writer.append(&record).unwrap();
            records.push(record);
        }
        writer.finish().unwrap();
        EpisodeLog {
            header,
            steps: records,
        }
    }

    #[test]
    fn replay_verifies_every_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.jsonl");
        let written = write_random_episode(&path, 11, 40);
        let report = replay_episode(&path).unwrap();
        assert_eq!(report.steps, written.steps.len());
        assert_eq!(report.final_hash, written.steps.last().unwrap().state_hash);
    }

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.jsonl");
        let written = write_random_episode(&path, 5, 12);
        let read = read_episode(&path).unwrap();
        assert_eq!(read.header, written.header);
        assert_eq!(read.steps, written.steps);
    }

    #[test]
    fn tampered_hash_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.jsonl");
        let mut log = write_random_episode(&path, 7, 20);
        let victim = log.steps.len() / 2;
        log.steps[victim].state_hash ^= 1;
        let err = replay_parsed(&log).unwrap_err();
        match err {
            LogError::HashMismatch { tick, .. } => {
                assert_eq!(tick, log.steps[victim].tick);
            }
            other => panic!("expected a hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            replay_episode(&path).unwrap_err(),
            LogError::MissingHeader
        ));
    }

    #[test]
    fn garbage_line_is_a_parse_error_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.jsonl");
        write_random_episode(&path, 3, 5);
        let mut contents = std::fs::read_to_string(&path).unwrap();
        contents.push_str("not json\n");
        std::fs::write(&path, contents).unwrap();
        match replay_episode(&path).unwrap_err() {
            LogError::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}
