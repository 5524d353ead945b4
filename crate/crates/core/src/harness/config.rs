//! Experiment configuration: the training config plus artifact plumbing,
//! the three ablation axes, and the config fingerprint embedded in every
//! artifact so mixed-up resumes and cross-run comparisons fail loudly.

use serde::{Deserialize, Serialize};

use crate::graphgen::{GraphMode, TemporalMixer};
use crate::rng::fnv1a64;
use crate::training::{TrainConfig, TrainError};

/// A full experiment: what to train and where artifacts go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Directory artifacts are written into (created if absent).
    pub out_dir: String,
    /// File-name prefix for this run's artifacts.
    pub run_name: String,
    /// Episodes between checkpoint writes during training; 0 writes only
    /// the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig::default(),
            out_dir: "runs".to_string(),
            run_name: "run".to_string(),
            checkpoint_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            return Err(TrainError::Config("run_name must be a plain file prefix"));
        }
        self.train.validate()
    }
}

/// Fingerprint of the training-relevant configuration. Artifact paths do
/// not participate, so moving an output directory never poisons a resume;
/// any change to dynamics, networks, or seeds does.
pub fn config_hash(cfg: &TrainConfig) -> u64 {
    let json = serde_json::to_string(cfg).expect("configs always serialize");
    fnv1a64(json.as_bytes())
}

/// One row of the 2x2x2 ablation matrix: self-attention generator core,
/// graph sharing, and message-passing decisions, each on or off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub sa: bool,
    pub gs: bool,
    pub mg: bool,
}

impl AblationFlags {
    /// All 8 combinations, full model first, in descending binary order.
    pub fn all() -> Vec<AblationFlags> {
        let mut out = Vec::with_capacity(8);
        for bits in (0..8u8).rev() {
            out.push(AblationFlags {
                sa: bits & 4 != 0,
                gs: bits & 2 != 0,
                mg: bits & 1 != 0,
            });
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "SA{}GS{}MG{}",
            if self.sa { "+" } else { "-" },
            if self.gs { "+" } else { "-" },
            if self.mg { "+" } else { "-" }
        )
    }

    /// The base config with the three ablation axes overridden.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            mixer: if self.sa { TemporalMixer::SelfAttention } else { TemporalMixer::Dense },
            graph_mode: if self.gs { GraphMode::Shared } else { GraphMode::Individual },
            message_passing: self.mg,
            ..base.clone()
        }
    }
}
