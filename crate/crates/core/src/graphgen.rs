//! Relevance-graph generation: a learned map from recent board history to
//! a bounded weight matrix over agents and environment objects.
//!
//! Each step the generator sees the last three observations, the last two
//! of its agent's actions, and the graph it emitted previously, and
//! produces a fresh agents × (agents + object cap) matrix of relevance
//! weights in [0, 1]. Training pulls consecutive matrices toward each
//! other while game events (kills, pickups, wood breaks, wins) pin
//! individual edges to heuristic target weights, so weight concentrates
//! on whatever the simulator says mattered.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{arr_from, zeros, Adam, Arr, ParamSet, Var};
use crate::baselines::ScriptedPolicy;
use crate::gridworld::{
    enumerate_objects, observe, reset, Action, BoardState, Enumeration, EventKind, GameEvent,
    MapConfig, MapError, Vertex, VertexType, NUM_AGENTS, OBS_PLANES,
};
use crate::layers::{AttentionSpec, ConvEncoder, Init, Linear, Mlp, OutputActivation, SelfAttention};
use crate::rng::{derive_rng, fnv1a64};

/// Network that mixes the three state embeddings: a plain dense stack, or
/// a single self-attention block treating them as a length-3 sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMixer {
    Dense,
    SelfAttention,
}

/// Layer sizes for a [`GraphGenerator`]. The defaults are the full-scale
/// stack; tests shrink them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphGenConfig {
    /// Embedding width each observation is encoded to.
    pub embed_dim: usize,
    /// Conv filter count in the state encoder.
    pub filters: usize,
    /// Conv kernel side (odd).
    pub kernel: usize,
    /// Width of the fusion layer that joins embeddings, actions, and the
    /// previous graph.
    pub fuse_width: usize,
    /// Hidden widths of the dense mixer stack.
    pub mixer_widths: Vec<usize>,
    /// Hidden width of the output head.
    pub head_hidden: usize,
    /// Dropout rate on the head's hidden layer during training.
    pub dropout: f64,
}

impl Default for GraphGenConfig {
    fn default() -> GraphGenConfig {
        GraphGenConfig {
            embed_dim: 64,
            filters: 8,
            kernel: 5,
            fuse_width: 128,
            mixer_widths: vec![512, 128, 128],
            head_hidden: 64,
            dropout: 0.1,
        }
    }
}

impl GraphGenConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.embed_dim == 0 || self.filters == 0 || self.fuse_width == 0 || self.head_hidden == 0
        {
            return Err("generator layer widths must be positive");
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err("encoder kernel must be odd");
        }
        if self.mixer_widths.is_empty() || self.mixer_widths.iter().any(|&w| w == 0) {
            return Err("mixer widths must be nonempty and positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One relevance matrix plus the vertex list its columns refer to. Rows
/// are the four agents in id order; columns are the agent slots followed
/// by the capped object slots, in [`enumerate_objects`] order. Weights
/// are sigmoid-bounded to [0, 1] and Null columns are exactly 0.
#[derive(Clone)]
pub struct RelevanceGraph {
    pub weights: Var,
    pub vertices: Vec<Vertex>,
    /// True when teammates read this one matrix instead of owning their own.
    pub shared: bool,
}

/// 1.0 over live vertex columns, 0.0 over Null padding and dead agents.
fn null_mask(vertices: &[Vertex]) -> Arr {
    let mut mask = zeros(&[NUM_AGENTS, vertices.len()]);
    for (col, v) in vertices.iter().enumerate() {
        if v.kind != VertexType::Null {
            for row in 0..NUM_AGENTS {
                mask[[row, col]] = 1.0;
            }
        }
    }
    mask
}

impl RelevanceGraph {
    /// Uniform-random weights over live columns: the stand-in previous
    /// graph for the first step of an episode, drawn fresh per episode.
    pub fn uniform_random(
        enumeration: &Enumeration,
        shared: bool,
        rng: &mut ChaCha20Rng,
    ) -> RelevanceGraph {
        let mask = null_mask(&enumeration.vertices);
        let mut w = zeros(&[NUM_AGENTS, enumeration.len()]);
        for row in 0..NUM_AGENTS {
            for col in 0..enumeration.len() {
                w[[row, col]] = rng.random_range(0.0..1.0) * mask[[row, col]];
            }
        }
        RelevanceGraph {
            weights: Var::constant(w),
            vertices: enumeration.vertices.clone(),
            shared,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Edge type for every (agent row, column) pair: 0 when the column
    /// vertex is itself an agent, 1 when it is an environment object.
    pub fn edge_type(&self, col: usize) -> u8 {
        match self.vertices[col].kind {
            VertexType::Ally | VertexType::Enemy => 0,
            _ => 1,
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights.value()[[row, col]]
    }

    /// Copy whose weights are a plain constant: same numbers, no autodiff
    /// history. Feed this back as the next step's previous graph.
    pub fn detached(&self) -> RelevanceGraph {
        RelevanceGraph {
            weights: self.weights.detach(),
            vertices: self.vertices.clone(),
            shared: self.shared,
        }
    }
}

/// One-hot encoding of an action, matching [`Action::ALL`] order.
pub fn action_one_hot(action: Action) -> Arr {
    let mut v = zeros(&[Action::COUNT]);
    v[[action.index()]] = 1.0;
    v
}

/// Rolling input window for one generator: the last three observations
/// (newest first), the agent's last two actions as one-hots (newest
/// first), the previously emitted graph, and the current vertex
/// enumeration. At the start of an episode the window holds three copies
/// of the initial observation, zero action vectors, and a random graph.
#[derive(Clone)]
pub struct GraphGenInput {
    pub states: [Arr; 3],
    pub actions: [Arr; 2],
    pub prev: RelevanceGraph,
    pub enumeration: Enumeration,
    /// Agent whose perspective the observations and actions follow.
    pub agent: usize,
    pub team: u8,
}

impl GraphGenInput {
    pub fn initial(
        state: &BoardState,
        agent: usize,
        shared: bool,
        rng: &mut ChaCha20Rng,
    ) -> GraphGenInput {
        let team = state.agents[agent].team;
        let obs = observe(state, agent);
        let enumeration = enumerate_objects(state, team);
        let prev = RelevanceGraph::uniform_random(&enumeration, shared, rng);
        GraphGenInput {
            states: [obs.clone(), obs.clone(), obs],
            actions: [zeros(&[Action::COUNT]), zeros(&[Action::COUNT])],
            prev,
            enumeration,
            agent,
            team,
        }
    }

    /// Roll the window forward one step: `state` becomes the newest
    /// observation, `last_action` the newest action, and `graph` (the
    /// matrix just emitted) the previous graph, detached from autodiff.
    pub fn advance(&mut self, state: &BoardState, last_action: Action, graph: &RelevanceGraph) {
        let newest = observe(state, self.agent);
        let prev_state = std::mem::replace(&mut self.states[0], newest);
        self.states[2] = std::mem::replace(&mut self.states[1], prev_state);
        self.actions[1] = std::mem::replace(&mut self.actions[0], action_one_hot(last_action));
        self.prev = graph.detached();
        self.enumeration = enumerate_objects(state, self.team);
    }
}

enum MixerNet {
    Dense(Mlp),
    Attention(SelfAttention),
}

/// The graph-generating network. Observations are embedded by a shared
/// conv encoder; the embeddings, action one-hots, and flattened previous
/// graph fuse into one vector that a mixer network and a sigmoid head
/// turn into the weight matrix.
///
/// The dense mixer runs after fusion. The self-attention mixer instead
/// runs over the three state embeddings as a length-3 sequence before
/// fusion, because concatenation would destroy the only temporal axis it
/// can attend over.
pub struct GraphGenerator {
    encoder: ConvEncoder,
    fuse: Linear,
    mixer: MixerNet,
    head: Mlp,
    dropout: f64,
    rows: usize,
    cols: usize,
}

impl GraphGenerator {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        board_size: usize,
        object_cap: usize,
        mixer: TemporalMixer,
        cfg: &GraphGenConfig,
        rng: &mut ChaCha20Rng,
    ) -> GraphGenerator {
        if let Err(why) = cfg.validate() {
            panic!("invalid generator config: {why}");
        }
        let rows = NUM_AGENTS;
        let cols = NUM_AGENTS + object_cap;
        let flat = rows * cols;
        let encoder = ConvEncoder::new(
            params,
            &format!("{prefix}/enc"),
            board_size,
            board_size,
            OBS_PLANES,
            cfg.filters,
            cfg.kernel,
            cfg.embed_dim,
            rng,
        );
        let fused_in = 3 * cfg.embed_dim + 2 * Action::COUNT + flat;
        let fuse = Linear::new(
            params,
            &format!("{prefix}/fuse"),
            fused_in,
            cfg.fuse_width,
            Init::Kaiming,
            rng,
        );
        let (mixer, head_in) = match mixer {
            TemporalMixer::Dense => {
                let net = Mlp::new(
                    params,
                    &format!("{prefix}/mixer"),
                    cfg.fuse_width,
                    &cfg.mixer_widths,
                    OutputActivation::None,
                    rng,
                );
                let out = *cfg.mixer_widths.last().expect("validated nonempty");
                (MixerNet::Dense(net), out)
            }
            TemporalMixer::SelfAttention => {
                let net = SelfAttention::new(
                    params,
                    &format!("{prefix}/mixer"),
                    AttentionSpec::square(cfg.embed_dim),
                    rng,
                );
                (MixerNet::Attention(net), cfg.fuse_width)
            }
        };
        let head = Mlp::new(
            params,
            &format!("{prefix}/head"),
            head_in,
            &[cfg.head_hidden, flat],
            OutputActivation::Sigmoid,
            rng,
        );
        GraphGenerator {
            encoder,
            fuse,
            mixer,
            head,
            dropout: cfg.dropout,
            rows,
            cols,
        }
    }

    pub fn mixer_kind(&self) -> TemporalMixer {
        match self.mixer {
            MixerNet::Dense(_) => TemporalMixer::Dense,
            MixerNet::Attention(_) => TemporalMixer::SelfAttention,
        }
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Emit the relevance matrix for one input window. `train` enables
    /// dropout in the head; evaluation is deterministic.
    pub fn generate(
        &self,
        input: &GraphGenInput,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> RelevanceGraph {
        assert_eq!(
            input.enumeration.len(),
            self.cols,
            "enumeration width must match the generator's object cap"
        );
        assert_eq!(
            input.prev.weights.shape(),
            vec![self.rows, self.cols],
            "previous graph shape must match the generator output"
        );
        for a in &input.actions {
            assert_eq!(a.shape(), &[Action::COUNT], "action one-hot width");
        }

        let embeds: Vec<Var> = input
            .states
            .iter()
            .map(|s| self.encoder.forward(&Var::constant(s.clone())))
            .collect();
        let a0 = Var::constant(input.actions[0].clone());
        let a1 = Var::constant(input.actions[1].clone());
        let prev_flat = input.prev.weights.detach().flatten();

        let fused = |state_part: &Var| {
            let z = Var::concat(&[state_part, &a0, &a1, &prev_flat], 0);
            self.fuse.forward(&z).relu()
        };
        let pre_head = match &self.mixer {
            MixerNet::Dense(net) => {
                let states = Var::concat(&[&embeds[0], &embeds[1], &embeds[2]], 0);
                net.forward(&fused(&states)).relu()
            }
            MixerNet::Attention(net) => {
                let d = embeds[0].shape()[0];
                let seq = Var::concat(
                    &[
                        &embeds[0].reshape(&[1, d]),
                        &embeds[1].reshape(&[1, d]),
                        &embeds[2].reshape(&[1, d]),
                    ],
                    0,
                );
                fused(&net.forward(&seq).flatten())
            }
        };
        let raw = self
            .head
            .forward_dropout(&pre_head, self.dropout, train, rng)
            .reshape(&[self.rows, self.cols]);
        let masked = raw.mul(&Var::constant(null_mask(&input.enumeration.vertices)));
        assert!(
            masked.value().iter().all(|w| w.is_finite()),
            "generator produced non-finite weights"
        );
        RelevanceGraph {
            weights: masked,
            vertices: input.enumeration.vertices.clone(),
            shared: false,
        }
    }
}

/// Target weights pinned onto edges when game events fire, plus how many
/// steps each firing stays active. All targets live in [0, 1];
/// `persistence` of 1 applies an event to the single step it occurred on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventHeuristics {
    pub bomb_killed_agent: f64,
    pub agent_picked_item: f64,
    pub bomb_destroyed_wood: f64,
    pub agent_won: f64,
    pub agent_died: f64,
    pub persistence: usize,
}

impl Default for EventHeuristics {
    fn default() -> EventHeuristics {
        EventHeuristics {
            bomb_killed_agent: 1.0,
            agent_picked_item: 0.8,
            bomb_destroyed_wood: 0.5,
            agent_won: 0.9,
            agent_died: 1.0,
            persistence: 1,
        }
    }
}

impl EventHeuristics {
    pub fn target(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::BombKilledAgent => self.bomb_killed_agent,
            EventKind::AgentPickedItem => self.agent_picked_item,
            EventKind::BombDestroyedWood => self.bomb_destroyed_wood,
            EventKind::AgentWon => self.agent_won,
            EventKind::AgentDied => self.agent_died,
        }
    }

    /// The edge an event pins: subject agent row, object vertex column.
    /// None when the object fell past the enumeration cap.
    pub fn edge(event: &GameEvent) -> Option<(usize, usize)> {
        event.object.map(|col| (event.subject, col))
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        let targets = [
            self.bomb_killed_agent,
            self.agent_picked_item,
            self.bomb_destroyed_wood,
            self.agent_won,
            self.agent_died,
        ];
        if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err("event target weights must lie in [0, 1]");
        }
        if self.persistence == 0 {
            return Err("event persistence must be at least 1");
        }
        Ok(())
    }
}

/// Two-part training loss for one step's graph: the squared Frobenius
/// distance to the previously emitted matrix, plus, for every active
/// event, the squared gap between the event's edge weight and its
/// heuristic target. The previous graph enters as a constant, so
/// gradient flows into the current matrix only.
pub fn graph_loss(
    current: &RelevanceGraph,
    previous: &RelevanceGraph,
    events: &[GameEvent],
    heuristics: &EventHeuristics,
) -> Var {
    assert_eq!(
        current.weights.shape(),
        previous.weights.shape(),
        "graph shapes must match"
    );
    let diff = current.weights.sub(&previous.weights.detach());
    let mut loss = diff.mul(&diff).sum_all();
    let shape = current.weights.shape();
    for event in events {
        let Some((row, col)) = EventHeuristics::edge(event) else {
            continue;
        };
        assert!(
            row < shape[0] && col < shape[1],
            "event edge ({row}, {col}) outside the graph"
        );
        let w = current.weights.slice(0, row, row + 1).slice(1, col, col + 1);
        let target = Var::constant(arr_from(&[1, 1], vec![heuristics.target(event.kind)]));
        let gap = w.sub(&target);
        loss = loss.add(&gap.mul(&gap).sum_all());
    }
    loss
}

/// Whether teammates share one generator and matrix or own independent
/// ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphMode {
    Shared,
    Individual,
}

/// The graph generators for one team: a single generator whose output
/// both teammates read (Shared), or one generator per teammate with
/// disjoint parameters (Individual). Inputs, generators, and emitted
/// graphs all align index-for-index; [`TeamGraphGen::graph_for`] maps a
/// teammate to its view.
pub struct TeamGraphGen {
    mode: GraphMode,
    agents: [usize; 2],
    gens: Vec<GraphGenerator>,
}

impl TeamGraphGen {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        team: u8,
        map: &MapConfig,
        mode: GraphMode,
        mixer: TemporalMixer,
        cfg: &GraphGenConfig,
        rng: &mut ChaCha20Rng,
    ) -> TeamGraphGen {
        assert!(team < 2, "team must be 0 or 1");
        let agents = [team as usize, team as usize + 2];
        let gens = match mode {
            GraphMode::Shared => vec![GraphGenerator::new(
                params,
                &format!("{prefix}/team"),
                map.board_size,
                map.object_cap,
                mixer,
                cfg,
                rng,
            )],
            GraphMode::Individual => agents
                .iter()
                .map(|id| {
                    GraphGenerator::new(
                        params,
                        &format!("{prefix}/agent{id}"),
                        map.board_size,
                        map.object_cap,
                        mixer,
                        cfg,
                        rng,
                    )
                })
                .collect(),
        };
        TeamGraphGen { mode, agents, gens }
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn teammates(&self) -> [usize; 2] {
        self.agents
    }

    pub fn generator_count(&self) -> usize {
        self.gens.len()
    }

    /// Perspective agent for generator `i`: the lower-id teammate when
    /// shared, each teammate for itself when individual.
    pub fn perspective(&self, i: usize) -> usize {
        match self.mode {
            GraphMode::Shared => self.agents[0],
            GraphMode::Individual => self.agents[i],
        }
    }

    /// Fresh start-of-episode input windows, one per generator.
    pub fn initial_inputs(&self, state: &BoardState, rng: &mut ChaCha20Rng) -> Vec<GraphGenInput> {
        (0..self.gens.len())
            .map(|i| {
                GraphGenInput::initial(
                    state,
                    self.perspective(i),
                    self.mode == GraphMode::Shared,
                    rng,
                )
            })
            .collect()
    }

    /// Emit this step's graphs, one per generator, flagged as shared when
    /// teammates will read the same object.
    pub fn team_graphs(
        &self,
        inputs: &[GraphGenInput],
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Vec<Rc<RelevanceGraph>> {
        assert_eq!(inputs.len(), self.gens.len(), "one input window per generator");
        self.gens
            .iter()
            .zip(inputs)
            .map(|(g, input)| {
                let mut graph = g.generate(input, train, rng);
                graph.shared = self.mode == GraphMode::Shared;
                Rc::new(graph)
            })
            .collect()
    }

    /// The graph teammate `idx` (0 or 1) reads this step. Shared mode
    /// hands both teammates the identical object.
    pub fn graph_for(
        &self,
        graphs: &[Rc<RelevanceGraph>],
        idx: usize,
    ) -> Rc<RelevanceGraph> {
        assert!(idx < 2, "a team has two members");
        match self.mode {
            GraphMode::Shared => graphs[0].clone(),
            GraphMode::Individual => graphs[idx].clone(),
        }
    }

    /// Roll every input window forward after an environment step.
    pub fn advance_inputs(
        &self,
        inputs: &mut [GraphGenInput],
        state: &BoardState,
        actions: &[Action; NUM_AGENTS],
        graphs: &[Rc<RelevanceGraph>],
    ) {
        for (i, input) in inputs.iter_mut().enumerate() {
            input.advance(state, actions[self.perspective(i)], &graphs[i]);
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphConfigError {
    #[error("learning rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("team must be 0 or 1, got {0}")]
    Team(u8),
    #[error("{0}")]
    Net(&'static str),
    #[error("{0}")]
    Heuristics(&'static str),
    #[error(transparent)]
    Board(#[from] MapError),
}

/// Settings for graph pretraining, where scripted policies drive all four
/// agents and only the generator learns.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub episodes: usize,
    pub map: MapConfig,
    pub mode: GraphMode,
    pub mixer: TemporalMixer,
    pub net: GraphGenConfig,
    pub heuristics: EventHeuristics,
    pub lr: f64,
    pub team: u8,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> PretrainConfig {
        PretrainConfig {
            episodes: 500,
            map: MapConfig::default(),
            mode: GraphMode::Shared,
            mixer: TemporalMixer::SelfAttention,
            net: GraphGenConfig::default(),
            heuristics: EventHeuristics::default(),
            lr: 1e-3,
            team: 0,
            seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), GraphConfigError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GraphConfigError::LearningRate(self.lr));
        }
        if self.team >= 2 {
            return Err(GraphConfigError::Team(self.team));
        }
        self.net.validate().map_err(GraphConfigError::Net)?;
        self.heuristics
            .validate()
            .map_err(GraphConfigError::Heuristics)?;
        reset(0, &self.map)?;
        Ok(())
    }
}

/// Deterministic construction of the team generator a [`PretrainConfig`]
/// describes. Checkpoint restores rebuild through here so parameter
/// names and shapes line up.
pub fn build_team_generator(cfg: &PretrainConfig) -> (ParamSet, TeamGraphGen) {
    let mut rng = derive_rng(cfg.seed, "graphgen-init", 0);
    let mut params = ParamSet::new();
    let gen = TeamGraphGen::new(
        &mut params,
        "graphgen",
        cfg.team,
        &cfg.map,
        cfg.mode,
        cfg.mixer,
        &cfg.net,
        &mut rng,
    );
    (params, gen)
}

fn episode_seed(master: u64, episode: usize) -> u64 {
    let mut key = master.to_le_bytes().to_vec();
    key.extend((episode as u64).to_le_bytes());
    key.extend(b"graph-pretrain");
    fnv1a64(&key)
}

/// Trained generator plus the per-episode mean loss curve.
pub struct PretrainOutput {
    pub params: ParamSet,
    pub team_gen: TeamGraphGen,
    pub episode_losses: Vec<f64>,
}

/// Roll scripted self-play episodes and train the generator on each
/// step's graph loss with Adam. Events stay active for the configured
/// persistence window, then expire.
pub fn pretrain_graph(cfg: &PretrainConfig) -> Result<PretrainOutput, GraphConfigError> {
    cfg.validate()?;
    let (params, team_gen) = build_team_generator(cfg);
    let mut opt = Adam::new(cfg.lr);
    let mut rng = derive_rng(cfg.seed, "graphgen-train", 0);
    let mut policies: Vec<ScriptedPolicy> = (0..NUM_AGENTS)
        .map(|a| ScriptedPolicy::new(cfg.seed, a))
        .collect();

    let mut episode_losses = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let mut state = reset(episode_seed(cfg.seed, ep), &cfg.map)?;
        let mut inputs = team_gen.initial_inputs(&state, &mut rng);
        let mut active: VecDeque<(usize, GameEvent)> = VecDeque::new();
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        loop {
            let graphs = team_gen.team_graphs(&inputs, true, &mut rng);
            let mut actions = [Action::Stop; NUM_AGENTS];
            for (a, action) in actions.iter_mut().enumerate() {
                if state.agents[a].alive {
                    *action = policies[a].act(&state, a);
                }
            }
            let out = state
                .step(&actions)
                .expect("pretraining steps live episodes with full arity");
            for e in &out.events {
                active.push_back((cfg.heuristics.persistence, *e));
            }
            let window: Vec<GameEvent> = active.iter().map(|(_, e)| *e).collect();
            let mut loss = graph_loss(&graphs[0], &inputs[0].prev, &window, &cfg.heuristics);
            for i in 1..graphs.len() {
                loss = loss.add(&graph_loss(&graphs[i], &inputs[i].prev, &window, &cfg.heuristics));
            }
            params.zero_grads();
            loss.backward();
            opt.step(&params);
            loss_sum += loss.item();
            steps += 1;
            for slot in active.iter_mut() {
                slot.0 -= 1;
            }
            active.retain(|(left, _)| *left > 0);
            team_gen.advance_inputs(&mut inputs, &out.state, &actions, &graphs);
            state = out.state;
            if out.done {
                break;
            }
        }
        episode_losses.push(loss_sum / steps as f64);
        if (ep + 1) % 50 == 0 {
            log::info!(
                "graph pretraining episode {}/{}: mean loss {:.4}",
                ep + 1,
                cfg.episodes,
                episode_losses[ep]
            );
        }
    }
    Ok(PretrainOutput {
        params,
        team_gen,
        episode_losses,
    })
}

/// Serializable snapshot of one vertex for export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub kind: String,
    pub pos: Option<(usize, usize)>,
    pub agent: Option<usize>,
}

/// Serializable snapshot of a whole relevance graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub shared: bool,
    pub vertices: Vec<VertexRecord>,
    pub weights: Vec<Vec<f64>>,
}

pub fn graph_record(graph: &RelevanceGraph) -> GraphRecord {
    let w = graph.weights.value();
    let cols = graph.vertices.len();
    GraphRecord {
        shared: graph.shared,
        vertices: graph
            .vertices
            .iter()
            .enumerate()
            .map(|(id, v)| VertexRecord {
                id,
                kind: v.kind.label().to_string(),
                pos: v.pos.map(|p| (p.row, p.col)),
                agent: v.agent_id,
            })
            .collect(),
        weights: (0..NUM_AGENTS)
            .map(|r| (0..cols).map(|c| w[[r, c]]).collect())
            .collect(),
    }
}

pub fn graph_json(graph: &RelevanceGraph) -> String {
    serde_json::to_string_pretty(&graph_record(graph)).expect("graph records always serialize")
}

fn vertex_color(kind: VertexType) -> &'static str {
    match kind {
        VertexType::Ally => "red",
        VertexType::Enemy => "purple",
        VertexType::Bomb => "black",
        VertexType::Wall => "green",
        VertexType::KickItem => "gold",
        VertexType::BlastItem => "orange",
        VertexType::ExtraBombItem => "cyan",
        VertexType::Null => "gray",
    }
}

/// Graphviz rendering of a relevance graph. Friendly agents draw red,
/// opponents purple, wood green, bombs black; every edge above
/// `threshold` is emitted with its weight as the label and a length that
/// shrinks as relevance grows. Null vertices and self-edges are skipped.
pub fn graph_dot(graph: &RelevanceGraph, threshold: f64) -> String {
    let w = graph.weights.value();
    let mut out = String::from("digraph relevance {\n  layout=neato;\n  overlap=false;\n");
    for (i, v) in graph.vertices.iter().enumerate() {
        if v.kind == VertexType::Null {
            continue;
        }
        let label = match (v.agent_id, v.pos) {
            (Some(id), _) => format!("{} {id}", v.kind.label()),
            (None, Some(p)) => format!("{} ({},{})", v.kind.label(), p.row, p.col),
            (None, None) => v.kind.label().to_string(),
        };
        writeln!(out, "  v{i} [label=\"{label}\", color={}];", vertex_color(v.kind)).unwrap();
    }
    for row in 0..NUM_AGENTS {
        if graph.vertices[row].kind == VertexType::Null {
            continue;
        }
        for col in 0..graph.vertices.len() {
            if col == row || graph.vertices[col].kind == VertexType::Null {
                continue;
            }
            let weight = w[[row, col]];
            if weight <= threshold {
                continue;
            }
            writeln!(
                out,
                "  v{row} -> v{col} [label=\"{weight:.2}\", len={:.2}];",
                0.2 + 1.8 * (1.0 - weight)
            )
            .unwrap();
        }
    }
    out.push_str("}\n");
    out
}
