//! Team policies behind one interface, so tournaments and evaluation can
//! mix scripted, random, and trained teams freely. A policy instance is
//! reusable across matches: `begin_episode` reseeds it from the match
//! seed, so behavior depends only on (match seed, side, board), never on
//! earlier matches. That keeps multi-worker tournaments order-free.

use std::path::Path;
use std::rc::Rc;

use rand_chacha::ChaCha20Rng;

use crate::autodiff::ParamSet;
use crate::baselines::{RandomPolicy, ScriptedPolicy};
use crate::graphgen::{build_team_generator, GraphGenInput, RelevanceGraph};
use crate::gridworld::{Action, BoardState, NUM_AGENTS};
use crate::harness::checkpoint::{load_checkpoint, CheckpointFileError};
use crate::msgpass::argmax_action;
use crate::rng::{derive_rng, fnv1a64_extend};
use crate::training::magnet::{DecisionModule, MagnetTeam, TrainConfig};
use crate::training::TrainError;

/// A team's decision maker for evaluation matches.
pub trait MatchPolicy {
    /// Reseed for a fresh episode: initial board, which side this policy
    /// plays (0 or 1), and the match-specific seed.
    fn begin_episode(&mut self, state: &BoardState, team: u8, match_seed: u64);
    /// Action for one of this policy's living agents.
    fn act(&mut self, state: &BoardState, agent: usize) -> Action;
    /// Post-step notification with the executed joint action.
    fn observe_step(&mut self, _next: &BoardState, _actions: &[Action; NUM_AGENTS]) {}
}

/// The scripted rule-based team.
pub struct ScriptedMatchPolicy {
    members: Vec<(usize, ScriptedPolicy)>,
}

impl ScriptedMatchPolicy {
    pub fn new() -> ScriptedMatchPolicy {
        ScriptedMatchPolicy { members: Vec::new() }
    }
}

impl Default for ScriptedMatchPolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl MatchPolicy for ScriptedMatchPolicy {
    fn begin_episode(&mut self, _state: &BoardState, team: u8, match_seed: u64) {
        self.members = [team as usize, team as usize + 2]
            .iter()
            .map(|&a| (a, ScriptedPolicy::new(match_seed, a)))
            .collect();
    }

    fn act(&mut self, state: &BoardState, agent: usize) -> Action {
        let (_, p) = self
            .members
            .iter_mut()
            .find(|(a, _)| *a == agent)
            .expect("agent belongs to this policy's team");
        p.act(state, agent)
    }
}

/// Uniform-random legal moves.
pub struct RandomMatchPolicy {
    members: Vec<(usize, RandomPolicy)>,
}

impl RandomMatchPolicy {
    pub fn new() -> RandomMatchPolicy {
        RandomMatchPolicy { members: Vec::new() }
    }
}

impl Default for RandomMatchPolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl MatchPolicy for RandomMatchPolicy {
    fn begin_episode(&mut self, _state: &BoardState, team: u8, match_seed: u64) {
        self.members = [team as usize, team as usize + 2]
            .iter()
            .map(|&a| (a, RandomPolicy::new(match_seed, a)))
            .collect();
    }

    fn act(&mut self, state: &BoardState, agent: usize) -> Action {
        let (_, p) = self
            .members
            .iter_mut()
            .find(|(a, _)| *a == agent)
            .expect("agent belongs to this policy's team");
        p.act(state, agent)
    }
}

/// A trained team playing greedily: graphs regenerated each tick without
/// dropout, decisions by argmax over action scores.
pub struct MagnetMatchPolicy {
    team: MagnetTeam,
    teammates: [usize; 2],
    inputs: Vec<GraphGenInput>,
    graphs: Vec<Rc<RelevanceGraph>>,
    graphs_tick: Option<u32>,
    rng: ChaCha20Rng,
}

impl MagnetMatchPolicy {
    /// Build from trained parameter blobs. `play_as` decides which pair
    /// of agents the generator takes the perspective of; the trained
    /// parameters are side-agnostic.
    pub fn from_blobs(
        cfg: &TrainConfig,
        graph_blob: &[u8],
        decision_blob: &[u8],
        play_as: u8,
    ) -> Result<MagnetMatchPolicy, TrainError> {
        let mut side_cfg = cfg.clone();
        side_cfg.team = play_as;
        let (graph_params, team_gen) = build_team_generator(&side_cfg.pretrain_config());
        graph_params.apply_bytes(graph_blob)?;
        // Decision nets are per vertex type, so the trained weights fit
        // whichever side the generator takes the perspective of.
        let mut decision_params = ParamSet::new();
        let mut rng = derive_rng(side_cfg.seed, "decision-init", 0);
        let decision = DecisionModule::build(&mut decision_params, &side_cfg, &mut rng);
        decision_params.apply_bytes(decision_blob)?;
        Ok(MagnetMatchPolicy {
            team: MagnetTeam { graph_params, team_gen, decision_params, decision },
            teammates: [play_as as usize, play_as as usize + 2],
            inputs: Vec::new(),
            graphs: Vec::new(),
            graphs_tick: None,
            rng: derive_rng(0, "match-graphs", 0),
        })
    }

    /// Load a checkpoint file and build the policy from its embedded
    /// config echo.
    pub fn from_checkpoint(
        path: &Path,
        play_as: u8,
    ) -> Result<MagnetMatchPolicy, PolicySpecError> {
        let ckpt = load_checkpoint(path)?;
        let cfg: TrainConfig = toml::from_str(&ckpt.config_toml)
            .map_err(|e| PolicySpecError::BadConfigEcho(e.to_string()))?;
        Ok(MagnetMatchPolicy::from_blobs(
            &cfg,
            &ckpt.state.param_blobs[0],
            &ckpt.state.param_blobs[1],
            play_as,
        )?)
    }

    pub fn plays_as(&self) -> u8 {
        self.teammates[0] as u8
    }

    fn refresh_graphs(&mut self, state: &BoardState) {
        if self.graphs_tick != Some(state.tick) {
            self.graphs = self.team.team_gen.team_graphs(&self.inputs, false, &mut self.rng);
            self.graphs_tick = Some(state.tick);
        }
    }
}

impl MatchPolicy for MagnetMatchPolicy {
    fn begin_episode(&mut self, state: &BoardState, team: u8, match_seed: u64) {
        assert_eq!(
            team,
            self.plays_as(),
            "policy was built for side {}, asked to play {team}; build one per side",
            self.plays_as()
        );
        self.rng = derive_rng(match_seed, "match-graphs", team as u64);
        self.inputs = self.team.team_gen.initial_inputs(state, &mut self.rng);
        self.graphs.clear();
        self.graphs_tick = None;
    }

    fn act(&mut self, state: &BoardState, agent: usize) -> Action {
        self.refresh_graphs(state);
        let slot = self
            .teammates
            .iter()
            .position(|&a| a == agent)
            .expect("agent belongs to this policy's team");
        let graph = self.team.team_gen.graph_for(&self.graphs, slot);
        let scores = self.team.score_agent(state, &graph, agent);
        argmax_action(&scores.value())
    }

    fn observe_step(&mut self, next: &BoardState, actions: &[Action; NUM_AGENTS]) {
        if self.graphs_tick.is_some() && !self.graphs.is_empty() {
            self.team
                .team_gen
                .advance_inputs(&mut self.inputs, next, actions, &self.graphs);
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicySpecError {
    #[error("unknown policy {0:?}: expected \"scripted\", \"random\", or a checkpoint path")]
    Unknown(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointFileError),
    #[error("checkpoint embeds an unreadable config: {0}")]
    BadConfigEcho(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// How to construct a team policy; safe to share across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Scripted,
    Random,
    /// Trained parameters plus the config that shapes their networks.
    Magnet {
        cfg: Box<TrainConfig>,
        graph_blob: Vec<u8>,
        decision_blob: Vec<u8>,
    },
}

impl PolicySpec {
    /// Parse a CLI spec: `scripted`, `random`, or a checkpoint path.
    pub fn parse(s: &str) -> Result<PolicySpec, PolicySpecError> {
        match s {
            "scripted" => Ok(PolicySpec::Scripted),
            "random" => Ok(PolicySpec::Random),
            path => {
                let looks_like_path =
                    path.contains('/') || path.contains('.') || Path::new(path).exists();
                if !looks_like_path {
                    return Err(PolicySpecError::Unknown(path.to_string()));
                }
                let ckpt = load_checkpoint(Path::new(path))?;
                let cfg: TrainConfig = toml::from_str(&ckpt.config_toml)
                    .map_err(|e| PolicySpecError::BadConfigEcho(e.to_string()))?;
                let [graph, decision, ..] = ckpt.state.param_blobs;
                Ok(PolicySpec::Magnet {
                    cfg: Box::new(cfg),
                    graph_blob: graph,
                    decision_blob: decision,
                })
            }
        }
    }

    /// Instantiate for one side. Magnet policies bind their side at
    /// construction; scripted/random bind per episode.
    pub fn build(&self, play_as: u8) -> Result<Box<dyn MatchPolicy>, PolicySpecError> {
        Ok(match self {
            PolicySpec::Scripted => Box::new(ScriptedMatchPolicy::new()),
            PolicySpec::Random => Box::new(RandomMatchPolicy::new()),
            PolicySpec::Magnet { cfg, graph_blob, decision_blob } => Box::new(
                MagnetMatchPolicy::from_blobs(cfg, graph_blob, decision_blob, play_as)?,
            ),
        })
    }

    pub fn describe(&self) -> String {
        match self {
            PolicySpec::Scripted => "scripted".to_string(),
            PolicySpec::Random => "random".to_string(),
            PolicySpec::Magnet { cfg, .. } => {
                format!("magnet(seed {}, {} episodes)", cfg.seed, cfg.episodes)
            }
        }
    }
}

/// Per-policy episode seeds, decorrelated by side so self-play matches
/// are not mirrored.
pub fn side_seed(match_seed: u64, side: u8) -> u64 {
    fnv1a64_extend(match_seed, &[b's', b'i', b'd', b'e', side])
}
