//! Operational surface: experiment configs, checkpoints, evaluation
//! tournaments, the ablation matrix, and the gradient-check suite the
//! CLI drives.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod policy;
pub mod tournament;

pub use ablate::{ablate, ablation_csv, render_ablation, AblationRow, ABLATION_HEADER};
pub use checkpoint::{
    load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, CheckpointFileError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{config_hash, AblationFlags, ExperimentConfig};
pub use gradcheck::{render_gradcheck, run_gradcheck, suite_passed, GradcheckRow};
pub use policy::{MatchPolicy, PolicySpec, PolicySpecError};
pub use tournament::{
    render_report, tournament, TournamentConfig, TournamentError, WinReport,
};
