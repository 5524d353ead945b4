//! Binary checkpoint files: a magic header, the config fingerprint and
//! its TOML echo, then the trainer's full state. The format is strictly
//! deterministic, so save, load, save produces byte-identical files and
//! a resumed run continues exactly where the saved one stopped.

use std::path::{Path, PathBuf};

use crate::bytes::{ByteError, Reader, Writer};
use crate::gridworld::{Pos, Vertex, VertexType};
use crate::rng::RngState;
use crate::training::magnet::{AgentSlot, NextSlot, ReplayTransition, TrainerState};
use crate::training::MetricRow;

pub const CHECKPOINT_MAGIC: &str = "MAGNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A saved training run: fingerprint, config echo, full trainer state.
pub struct Checkpoint {
    pub config_hash: u64,
    /// TOML of the `TrainConfig` that produced the state, so evaluation
    /// tools can rebuild the networks from the checkpoint file alone.
    pub config_toml: String,
    pub state: TrainerState,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointFileError {
    #[error("checkpoint not found: {0}")]
    Missing(PathBuf),
    #[error("checkpoint i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupted checkpoint: {0}")]
    Bytes(#[from] ByteError),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

fn write_rng(w: &mut Writer, s: &RngState) {
    w.raw(&s.seed);
    w.u64(s.stream);
    w.u128(s.word_pos);
}

fn read_rng(r: &mut Reader) -> Result<RngState, ByteError> {
    let mut seed = [0u8; 32];
    seed.copy_from_slice(r.raw(32)?);
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    Ok(RngState { seed, stream, word_pos })
}

fn write_f64s(w: &mut Writer, xs: &[f64]) {
    w.u64(xs.len() as u64);
    for &x in xs {
        w.f64(x);
    }
}

fn read_f64s(r: &mut Reader) -> Result<Vec<f64>, ByteError> {
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.f64()?);
    }
    Ok(out)
}

fn write_bytes(w: &mut Writer, bytes: &[u8]) {
    w.u64(bytes.len() as u64);
    w.raw(bytes);
}

fn read_bytes(r: &mut Reader) -> Result<Vec<u8>, ByteError> {
    let n = r.u64()? as usize;
    Ok(r.raw(n)?.to_vec())
}

fn write_vertex(w: &mut Writer, v: &Vertex) {
    w.u8(v.kind.index() as u8);
    match v.pos {
        Some(p) => {
            w.u8(1);
            w.u64(p.row as u64);
            w.u64(p.col as u64);
        }
        None => w.u8(0),
    }
    match v.agent_id {
        Some(a) => {
            w.u8(1);
            w.u64(a as u64);
        }
        None => w.u8(0),
    }
}

fn read_vertex(r: &mut Reader) -> Result<Vertex, ByteError> {
    let kind = VertexType::from_index(r.u8()? as usize)
        .ok_or(ByteError::BadMagic { expected: "vertex kind" })?;
    let pos = if r.u8()? == 1 {
        Some(Pos::new(r.u64()? as usize, r.u64()? as usize))
    } else {
        None
    };
    let agent_id = if r.u8()? == 1 { Some(r.u64()? as usize) } else { None };
    Ok(Vertex { kind, pos, agent_id })
}

fn write_vertices(w: &mut Writer, vs: &[Vertex]) {
    w.u64(vs.len() as u64);
    for v in vs {
        write_vertex(w, v);
    }
}

fn read_vertices(r: &mut Reader) -> Result<Vec<Vertex>, ByteError> {
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_vertex(r)?);
    }
    Ok(out)
}

fn write_slot(w: &mut Writer, s: &AgentSlot) {
    w.arr(&s.planes);
    w.u64(s.vertex_obs.len() as u64);
    for o in &s.vertex_obs {
        w.arr(o);
    }
    w.arr(&s.weights);
    write_vertices(w, &s.vertices);
    w.arr(&s.action);
    w.u8(s.alive as u8);
}

fn read_slot(r: &mut Reader) -> Result<AgentSlot, ByteError> {
    let planes = r.arr()?;
    let n = r.u64()? as usize;
    let mut vertex_obs = Vec::with_capacity(n);
    for _ in 0..n {
        vertex_obs.push(r.arr()?);
    }
    let weights = r.arr()?;
    let vertices = read_vertices(r)?;
    let action = r.arr()?;
    let alive = r.u8()? == 1;
    Ok(AgentSlot { planes, vertex_obs, weights, vertices, action, alive })
}

fn write_next(w: &mut Writer, s: &NextSlot) {
    w.arr(&s.planes);
    w.u64(s.vertex_obs.len() as u64);
    for o in &s.vertex_obs {
        w.arr(o);
    }
    w.arr(&s.weights);
    write_vertices(w, &s.vertices);
    w.u8(s.alive as u8);
}

fn read_next(r: &mut Reader) -> Result<NextSlot, ByteError> {
    let planes = r.arr()?;
    let n = r.u64()? as usize;
    let mut vertex_obs = Vec::with_capacity(n);
    for _ in 0..n {
        vertex_obs.push(r.arr()?);
    }
    let weights = r.arr()?;
    let vertices = read_vertices(r)?;
    let alive = r.u8()? == 1;
    Ok(NextSlot { planes, vertex_obs, weights, vertices, alive })
}

fn write_transition(w: &mut Writer, t: &ReplayTransition) {
    write_slot(w, &t.slots[0]);
    write_slot(w, &t.slots[1]);
    w.f64(t.rewards[0]);
    w.f64(t.rewards[1]);
    match &t.next {
        Some(next) => {
            w.u8(1);
            write_next(w, &next[0]);
            write_next(w, &next[1]);
        }
        None => w.u8(0),
    }
    w.u8(t.done as u8);
}

fn read_transition(r: &mut Reader) -> Result<ReplayTransition, ByteError> {
    let slots = [read_slot(r)?, read_slot(r)?];
    let rewards = [r.f64()?, r.f64()?];
    let next = if r.u8()? == 1 {
        Some([read_next(r)?, read_next(r)?])
    } else {
        None
    };
    let done = r.u8()? == 1;
    Ok(ReplayTransition { slots, rewards, next, done })
}

fn write_metric_row(w: &mut Writer, m: &MetricRow) {
    w.u64(m.episode as u64);
    w.f64(m.win_rate);
    w.f64(m.ci_low);
    w.f64(m.ci_high);
    w.f64(m.graph_loss);
    w.f64(m.critic_loss);
    w.f64(m.actor_loss);
}

fn read_metric_row(r: &mut Reader) -> Result<MetricRow, ByteError> {
    Ok(MetricRow {
        episode: r.u64()? as usize,
        win_rate: r.f64()?,
        ci_low: r.f64()?,
        ci_high: r.f64()?,
        graph_loss: r.f64()?,
        critic_loss: r.f64()?,
        actor_loss: r.f64()?,
    })
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(ckpt.config_hash);
    w.str(&ckpt.config_toml);

    let s = &ckpt.state;
    let mut body = Writer::new();
    body.u64(s.episodes_done);
    body.u64(s.env_steps);
    body.u64(s.wins);
    for blob in &s.param_blobs {
        write_bytes(&mut body, blob);
    }
    for blob in &s.opt_blobs {
        write_bytes(&mut body, blob);
    }
    for rng in &s.rngs {
        write_rng(&mut body, rng);
    }
    for rng in &s.opponent_rngs {
        write_rng(&mut body, rng);
    }
    write_f64s(&mut body, &s.pretrain_losses);
    body.u64(s.metrics.len() as u64);
    for m in &s.metrics {
        write_metric_row(&mut body, m);
    }
    body.u64(s.window_wins);
    body.u64(s.window_games);
    write_f64s(&mut body, &s.window_graph);
    write_f64s(&mut body, &s.window_critic);
    write_f64s(&mut body, &s.window_actor);
    body.u64(s.transitions.len() as u64);
    for t in &s.transitions {
        write_transition(&mut body, t);
    }
    w.block(body);
    w.finish()
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointFileError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointFileError::Version(version));
    }
    let config_hash = r.u64()?;
    let config_toml = r.str()?;

    let mut b = r.block()?;
    let episodes_done = b.u64()?;
    let env_steps = b.u64()?;
    let wins = b.u64()?;
    let mut param_blobs: [Vec<u8>; 6] = Default::default();
    for blob in &mut param_blobs {
        *blob = read_bytes(&mut b)?;
    }
    let mut opt_blobs: [Vec<u8>; 3] = Default::default();
    for blob in &mut opt_blobs {
        *blob = read_bytes(&mut b)?;
    }
    let rngs = [read_rng(&mut b)?, read_rng(&mut b)?, read_rng(&mut b)?];
    let opponent_rngs = [read_rng(&mut b)?, read_rng(&mut b)?];
    let pretrain_losses = read_f64s(&mut b)?;
    let n_metrics = b.u64()? as usize;
    let mut metrics = Vec::with_capacity(n_metrics);
    for _ in 0..n_metrics {
        metrics.push(read_metric_row(&mut b)?);
    }
    let window_wins = b.u64()?;
    let window_games = b.u64()?;
    let window_graph = read_f64s(&mut b)?;
    let window_critic = read_f64s(&mut b)?;
    let window_actor = read_f64s(&mut b)?;
    let n_transitions = b.u64()? as usize;
    let mut transitions = Vec::with_capacity(n_transitions);
    for _ in 0..n_transitions {
        transitions.push(read_transition(&mut b)?);
    }
    b.expect_end()?;
    r.expect_end()?;

    Ok(Checkpoint {
        config_hash,
        config_toml,
        state: TrainerState {
            episodes_done,
            env_steps,
            wins,
            param_blobs,
            opt_blobs,
            rngs,
            opponent_rngs,
            pretrain_losses,
            metrics,
            window_wins,
            window_games,
            window_graph,
            window_critic,
            window_actor,
            transitions,
        },
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointFileError> {
    std::fs::write(path, checkpoint_bytes(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointFileError> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CheckpointFileError::Missing(path.to_path_buf())
        } else {
            CheckpointFileError::Io(e)
        }
    })?;
    parse_checkpoint(&bytes)
}
