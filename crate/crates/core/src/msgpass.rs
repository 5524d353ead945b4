//! Typed message passing over relevance graphs.
//!
//! Each vertex of the graph carries a hidden information vector. A
//! per-type encoder seeds it from the vertex's local observation, then a
//! fixed number of synchronous rounds exchange messages along the graph's
//! weighted edges: every edge feeds each endpoint the other side's message
//! scaled by the edge weight, aggregates arrive summed, and a per-type
//! LSTM folds the sum into the vertex state. Agents read actions off
//! their own vector through a per-type decision head.
//!
//! Networks are owned per vertex *type* and per edge *type*, never per
//! vertex, so the parameter count is independent of the board's object
//! cap and every same-typed vertex shares weights.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{zeros, Arr, ParamSet, Var};
use crate::gridworld::{
    crop, enumerate_objects, observe, Action, BoardState, Vertex, VertexType, BOMB_FUSE,
    KILL_RANGE, NUM_AGENTS, OBS_PLANES,
};
use crate::graphgen::RelevanceGraph;
use crate::layers::{LstmCell, LstmState, Mlp, OutputActivation};

/// Every vertex type in `VertexType::index` order.
const TYPES: [VertexType; VertexType::COUNT] = [
    VertexType::Ally,
    VertexType::Enemy,
    VertexType::Bomb,
    VertexType::KickItem,
    VertexType::BlastItem,
    VertexType::ExtraBombItem,
    VertexType::Wall,
    VertexType::Null,
];

/// Sizes of the message passing networks.
///
/// Width lists give hidden layers only; output widths are implied (the
/// info dimension for encoders and message nets, one score per action for
/// decision heads).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsgPassConfig {
    /// Width of each vertex's hidden information vector.
    pub info_dim: usize,
    /// Hidden widths of the per-type observation encoders.
    pub init_widths: Vec<usize>,
    /// Hidden widths of the per-edge-type message networks.
    pub message_widths: Vec<usize>,
    /// Hidden widths of the per-type decision heads.
    pub choice_widths: Vec<usize>,
    /// Synchronous message passing rounds per decision.
    pub steps: usize,
    /// Local observation crop half-width around each vertex.
    pub crop_half: usize,
}

impl Default for MsgPassConfig {
    fn default() -> MsgPassConfig {
        MsgPassConfig {
            info_dim: 32,
            init_widths: vec![64],
            message_widths: vec![128],
            choice_widths: vec![1024, 256, 64],
            steps: 5,
            crop_half: 2,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("message passing config: {0}")]
pub struct MsgPassConfigError(&'static str);

impl MsgPassConfig {
    pub fn validate(&self) -> Result<(), MsgPassConfigError> {
        if self.info_dim == 0 {
            return Err(MsgPassConfigError("info_dim must be positive"));
        }
        let all = [&self.init_widths, &self.message_widths, &self.choice_widths];
        if all.iter().any(|ws| ws.iter().any(|&w| w == 0)) {
            return Err(MsgPassConfigError("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Length of a vertex observation: type one-hot, normalized position,
/// three type-specific scalars, then a flattened local crop of the
/// observation planes.
pub fn observation_width(crop_half: usize) -> usize {
    let side = 2 * crop_half + 1;
    VertexType::COUNT + 2 + 3 + side * side * OBS_PLANES
}

/// Encode one vertex's local view. Null vertices (padding and dead
/// agents) are all zeros; everything else starts with its type one-hot,
/// position scaled to [0, 1], and three scalars whose meaning depends on
/// the type: agents report team side, kick ability, and blast power;
/// bombs report fuse and blast power; items repeat their pickup code.
pub fn vertex_observation(
    state: &BoardState,
    planes: &Arr,
    vertex: &Vertex,
    crop_half: usize,
) -> Arr {
    let mut o = zeros(&[observation_width(crop_half)]);
    if vertex.kind == VertexType::Null {
        return o;
    }
    let pos = vertex.pos.expect("live vertices carry a position");
    let n = state.size();
    o[[vertex.kind.index()]] = 1.0;
    let base = VertexType::COUNT;
    o[[base]] = pos.row as f64 / (n - 1) as f64;
    o[[base + 1]] = pos.col as f64 / (n - 1) as f64;
    let scalars: [f64; 3] = match vertex.kind {
        VertexType::Ally | VertexType::Enemy => {
            let id = vertex.agent_id.expect("agent vertices carry an id");
            let a = &state.agents[id];
            let side = if vertex.kind == VertexType::Ally { 1.0 } else { 0.0 };
            let kick = if a.can_kick { 1.0 } else { 0.0 };
            [side, kick, a.blast_power as f64 / KILL_RANGE as f64]
        }
        VertexType::Bomb => {
            let b = state.bomb_at(pos).expect("bomb vertex matches a live bomb");
            [
                f64::from(b.fuse) / f64::from(BOMB_FUSE),
                f64::from(b.blast_power) / KILL_RANGE as f64,
                0.0,
            ]
        }
        VertexType::KickItem => [0.75, 0.0, 0.0],
        VertexType::BlastItem => [0.5, 0.0, 0.0],
        VertexType::ExtraBombItem => [0.25, 0.0, 0.0],
        VertexType::Wall => [0.0, 0.0, 0.0],
        VertexType::Null => unreachable!(),
    };
    for (i, s) in scalars.into_iter().enumerate() {
        o[[base + 2 + i]] = s;
    }
    let local = crop(planes, pos, crop_half);
    for (i, &v) in local.iter().enumerate() {
        o[[base + 5 + i]] = v;
    }
    o
}

/// Observations for a whole vertex list, all cropped from the planes of
/// the deciding agent's board view.
pub fn vertex_observations(
    state: &BoardState,
    agent: usize,
    vertices: &[Vertex],
    crop_half: usize,
) -> Vec<Arr> {
    let planes = observe(state, agent);
    vertices
        .iter()
        .map(|v| vertex_observation(state, &planes, v, crop_half))
        .collect()
}

/// Per-vertex-type networks: observation encoders, LSTM accumulators,
/// and (for agent types only) decision heads. Indexed by
/// `VertexType::index`; Null slots hold nothing because Null vertices
/// are inert.
pub struct VertexNets {
    init: Vec<Option<Mlp>>,
    update: Vec<Option<LstmCell>>,
    choice: Vec<Option<Mlp>>,
    info_dim: usize,
}

impl VertexNets {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &MsgPassConfig,
        rng: &mut ChaCha20Rng,
    ) -> VertexNets {
        let obs_dim = observation_width(cfg.crop_half);
        let mut init = Vec::with_capacity(TYPES.len());
        let mut update = Vec::with_capacity(TYPES.len());
        let mut choice = Vec::with_capacity(TYPES.len());
        for (i, t) in TYPES.into_iter().enumerate() {
            assert_eq!(t.index(), i, "TYPES must follow the index order");
            if t == VertexType::Null {
                init.push(None);
                update.push(None);
                choice.push(None);
                continue;
            }
            let label = t.label();
            init.push(Some(Mlp::new(
                params,
                &format!("{prefix}/init/{label}"),
                obs_dim,
                &with_output(&cfg.init_widths, cfg.info_dim),
                OutputActivation::None,
                rng,
            )));
            update.push(Some(LstmCell::new(
                params,
                &format!("{prefix}/up/{label}"),
                cfg.info_dim,
                cfg.info_dim,
                rng,
            )));
            let acts = matches!(t, VertexType::Ally | VertexType::Enemy);
            choice.push(acts.then(|| {
                Mlp::new(
                    params,
                    &format!("{prefix}/choice/{label}"),
                    cfg.info_dim,
                    &with_output(&cfg.choice_widths, Action::COUNT),
                    OutputActivation::None,
                    rng,
                )
            }));
        }
        VertexNets { init, update, choice, info_dim: cfg.info_dim }
    }
}

fn with_output(hidden: &[usize], out: usize) -> Vec<usize> {
    let mut ws = hidden.to_vec();
    ws.push(out);
    ws
}

/// Per-edge-type message networks: index 0 serves edges whose column
/// vertex is an agent, index 1 serves edges into environment objects.
pub struct EdgeNets {
    message: [Mlp; 2],
}

impl EdgeNets {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &MsgPassConfig,
        rng: &mut ChaCha20Rng,
    ) -> EdgeNets {
        let widths = with_output(&cfg.message_widths, cfg.info_dim);
        EdgeNets {
            message: [
                Mlp::new(
                    params,
                    &format!("{prefix}/mess/agents"),
                    cfg.info_dim,
                    &widths,
                    OutputActivation::None,
                    rng,
                ),
                Mlp::new(
                    params,
                    &format!("{prefix}/mess/objects"),
                    cfg.info_dim,
                    &widths,
                    OutputActivation::None,
                    rng,
                ),
            ],
        }
    }
}

/// Hidden vectors of every vertex, one LSTM state per enumeration slot.
/// The LSTM's h half is the vertex's information vector.
#[derive(Clone)]
pub struct InfoState {
    pub slots: Vec<LstmState>,
}

impl InfoState {
    /// The information vector of vertex `v`.
    pub fn mu(&self, v: usize) -> &Var {
        &self.slots[v].h
    }
}

/// Seed every vertex's state from its observation through the encoder of
/// its type. Null vertices stay at zero and never touch a network.
pub fn init_info(nets: &VertexNets, vertices: &[Vertex], obs: &[Arr]) -> InfoState {
    assert_eq!(vertices.len(), obs.len(), "one observation per vertex");
    let slots = vertices
        .iter()
        .zip(obs)
        .map(|(v, o)| match &nets.init[v.kind.index()] {
            Some(net) => LstmState {
                h: net.forward(&Var::constant(o.clone())),
                c: Var::constant(zeros(&[nets.info_dim])),
            },
            None => LstmState::zeros(nets.info_dim),
        })
        .collect();
    InfoState { slots }
}

/// Sum of weighted incoming messages for every vertex under the graph's
/// current weights.
///
/// Each matrix entry (agent row, column) is one bidirectional edge: the
/// column vertex's message reaches the agent and the agent's message
/// reaches the column vertex, both scaled by that single weight. An
/// agent pair therefore exchanges along two parallel edges, one per
/// matrix entry. Self entries and anything touching a Null vertex are
/// skipped, as are zero weights, so a fully zeroed row isolates its
/// agent exactly. Weights enter as plain numbers: gradients flow through
/// messages, never into the graph generator.
pub fn message_aggregates(enets: &EdgeNets, graph: &RelevanceGraph, info: &InfoState) -> Vec<Var> {
    let n = graph.num_vertices();
    assert_eq!(info.slots.len(), n, "info state must cover every vertex");
    let w = graph.weights.value();
    let mut out: Vec<[Option<Var>; 2]> = (0..n).map(|_| [None, None]).collect();
    let mut agg: Vec<Option<Var>> = vec![None; n];
    for row in 0..NUM_AGENTS {
        if graph.vertices[row].kind == VertexType::Null {
            continue;
        }
        for col in 0..n {
            if col == row || graph.vertices[col].kind == VertexType::Null {
                continue;
            }
            let weight = w[[row, col]];
            if weight == 0.0 {
                continue;
            }
            let c = graph.edge_type(col) as usize;
            let inbound = out[col][c]
                .get_or_insert_with(|| enets.message[c].forward(&info.slots[col].h))
                .clone();
            add_term(&mut agg[row], inbound.scale(weight));
            let outbound = out[row][c]
                .get_or_insert_with(|| enets.message[c].forward(&info.slots[row].h))
                .clone();
            add_term(&mut agg[col], outbound.scale(weight));
        }
    }
    let width = info.slots[0].h.len();
    agg.into_iter()
        .map(|a| a.unwrap_or_else(|| Var::constant(zeros(&[width]))))
        .collect()
}

fn add_term(slot: &mut Option<Var>, term: Var) {
    *slot = Some(match slot.take() {
        Some(acc) => acc.add(&term),
        None => term,
    });
}

/// Run `steps` synchronous message passing rounds: aggregate under the
/// current vectors, then advance every live vertex's LSTM on its
/// aggregate. Null vertices pass through untouched.
pub fn propagate(
    vnets: &VertexNets,
    enets: &EdgeNets,
    graph: &RelevanceGraph,
    info: &InfoState,
    steps: usize,
) -> InfoState {
    assert_eq!(
        graph.num_vertices(),
        info.slots.len(),
        "info state must cover every vertex"
    );
    let mut cur = info.clone();
    for step in 0..steps {
        let agg = message_aggregates(enets, graph, &cur);
        let slots: Vec<LstmState> = graph
            .vertices
            .iter()
            .zip(agg)
            .zip(&cur.slots)
            .map(|((v, a), s)| match &vnets.update[v.kind.index()] {
                Some(lstm) => lstm.step(&a, s),
                None => s.clone(),
            })
            .collect();
        cur = InfoState { slots };
        if log::log_enabled!(log::Level::Debug) {
            for (v, s) in cur.slots.iter().enumerate() {
                log::debug!("round {step} mu[{v}] = {:?}", s.h.value().as_slice().unwrap());
            }
        }
    }
    cur
}

/// Action scores for the agent sitting on vertex `vertex`, read through
/// the decision head of its type. Panics on vertices that cannot act:
/// objects, padding, and dead agents.
pub fn choose_action(vnets: &VertexNets, info: &InfoState, vertices: &[Vertex], vertex: usize) -> Var {
    let kind = vertices[vertex].kind;
    let net = vnets.choice[kind.index()].as_ref().unwrap_or_else(|| {
        panic!(
            "vertex {vertex} ({}) has no decision net; only living agents act",
            kind.label()
        )
    });
    net.forward(&info.slots[vertex].h)
}

/// Index of the highest score, lowest index winning ties.
pub fn argmax_action(scores: &Arr) -> Action {
    assert_eq!(scores.len(), Action::COUNT, "one score per action");
    let mut best = 0;
    for i in 1..Action::COUNT {
        if scores[[i]] > scores[[best]] {
            best = i;
        }
    }
    Action::from_index(best).expect("index bounded by Action::COUNT")
}

/// A complete decision pipeline: encode vertex observations, pass
/// messages along a relevance graph, and score the deciding agent's
/// actions.
pub struct MsgPassPolicy {
    pub nets: VertexNets,
    pub edges: EdgeNets,
    pub cfg: MsgPassConfig,
}

impl MsgPassPolicy {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &MsgPassConfig,
        rng: &mut ChaCha20Rng,
    ) -> MsgPassPolicy {
        cfg.validate().expect("config must validate");
        MsgPassPolicy {
            nets: VertexNets::new(params, prefix, cfg, rng),
            edges: EdgeNets::new(params, prefix, cfg, rng),
            cfg: cfg.clone(),
        }
    }

    /// Action scores from precomputed vertex observations. The
    /// observation list must line up with the graph's vertices; `agent`
    /// is the deciding agent's id, which is also its vertex slot.
    pub fn action_vector_from(&self, obs: &[Arr], graph: &RelevanceGraph, agent: usize) -> Var {
        let seeded = init_info(&self.nets, &graph.vertices, obs);
        let settled = propagate(&self.nets, &self.edges, graph, &seeded, self.cfg.steps);
        choose_action(&self.nets, &settled, &graph.vertices, agent)
    }

    /// Action scores straight from a board state. The graph must have
    /// been generated for this exact state.
    pub fn action_vector(&self, state: &BoardState, graph: &RelevanceGraph, agent: usize) -> Var {
        assert!(state.agents[agent].alive, "dead agents do not act");
        let team = state.agents[agent].team;
        assert_eq!(
            enumerate_objects(state, team).vertices,
            graph.vertices,
            "graph vertices must match the current state"
        );
        let obs = vertex_observations(state, agent, &graph.vertices, self.cfg.crop_half);
        self.action_vector_from(&obs, graph, agent)
    }

    /// Greedy action for the agent, lowest index winning ties.
    pub fn act(&self, state: &BoardState, graph: &RelevanceGraph, agent: usize) -> Action {
        argmax_action(&self.action_vector(state, graph, agent).value())
    }
}

#[cfg(test)]
mod tests {
    use std::time::Instant;

    use rand::Rng;

    use super::*;
    use crate::autodiff::{gradcheck, GradCheckOutcome};
    use crate::gridworld::{reset, CellKind, MapConfig, Pos};
    use crate::rng::derive_rng;

    fn tiny_cfg() -> MsgPassConfig {
        MsgPassConfig {
            info_dim: 6,
            init_widths: vec![8],
            message_widths: vec![10],
            choice_widths: vec![12, 8],
            steps: 2,
            crop_half: 1,
        }
    }

    fn small_map() -> MapConfig {
        MapConfig {
            board_size: 7,
            wood_density: 0.2,
            rigid_density: 0.1,
            item_prob: 0.3,
            max_steps: 40,
            object_cap: 10,
        }
    }

    fn build(cfg: &MsgPassConfig, seed: u64) -> (ParamSet, MsgPassPolicy) {
        let mut params = ParamSet::new();
        let mut rng = derive_rng(seed, "msgpass-test", 0);
        let policy = MsgPassPolicy::new(&mut params, "mp", cfg, &mut rng);
        (params, policy)
    }

    /// Two live agents, two dead slots, one bomb.
    fn toy_vertices() -> Vec<Vertex> {
        vec![
            Vertex { kind: VertexType::Ally, pos: Some(Pos::new(0, 0)), agent_id: Some(0) },
            Vertex { kind: VertexType::Enemy, pos: Some(Pos::new(0, 2)), agent_id: Some(1) },
            Vertex { kind: VertexType::Null, pos: None, agent_id: Some(2) },
            Vertex { kind: VertexType::Null, pos: None, agent_id: Some(3) },
            Vertex { kind: VertexType::Bomb, pos: Some(Pos::new(2, 1)), agent_id: None },
        ]
    }

    fn random_obs(vertices: &[Vertex], width: usize, rng: &mut ChaCha20Rng) -> Vec<Arr> {
        vertices
            .iter()
            .map(|v| {
                let mut o = zeros(&[width]);
                if v.kind != VertexType::Null {
                    for i in 0..width {
                        o[[i]] = rng.random_range(-1.0..1.0);
                    }
                }
                o
            })
            .collect()
    }

    fn const_graph(vertices: Vec<Vertex>, w: Arr) -> RelevanceGraph {
        RelevanceGraph { weights: Var::constant(w), vertices, shared: false }
    }

    /// Nonzero weights on rows 0 and 1 toward every live column, rows of
    /// the dead agents left at zero.
    fn toy_graph() -> RelevanceGraph {
        let vertices = toy_vertices();
        let mut w = zeros(&[NUM_AGENTS, vertices.len()]);
        w[[0, 1]] = 0.7;
        w[[0, 4]] = 0.5;
        w[[1, 0]] = 0.3;
        w[[1, 4]] = 0.9;
        const_graph(vertices, w)
    }

    fn zero_params(params: &ParamSet) {
        for (_, v) in params.iter() {
            v.set_value(zeros(&v.shape()));
        }
    }

    fn assert_close(a: &Arr, b: &Arr, tol: f64, what: &str) {
        assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol, "{what}: {x} vs {y}");
        }
    }

    #[test]
    fn observations_encode_type_position_scalars_and_crop() {
        let mut state = reset(11, &small_map()).unwrap();
        let en = enumerate_objects(&state, 0);
        let planes = observe(&state, 0);
        let half = 1;

        let me = &en.vertices[0];
        assert_eq!(me.kind, VertexType::Ally);
        let o = vertex_observation(&state, &planes, me, half);
        assert_eq!(o.len(), observation_width(half));
        let hot: f64 = (0..VertexType::COUNT).map(|i| o[[i]]).sum();
        assert_eq!(o[[VertexType::Ally.index()]], 1.0);
        assert_eq!(hot, 1.0, "exactly one type flag set");
        let pos = me.pos.unwrap();
        let base = VertexType::COUNT;
        assert_eq!(o[[base]], pos.row as f64 / 6.0);
        assert_eq!(o[[base + 1]], pos.col as f64 / 6.0);
        assert_eq!(o[[base + 2]], 1.0, "own side flag");
        assert_eq!(o[[base + 3]], 0.0, "no kick at spawn");
        let agent = &state.agents[0];
        assert_eq!(o[[base + 4]], agent.blast_power as f64 / KILL_RANGE as f64);
        let side = 2 * half + 1;
        let center = base + 5 + ((half * side) + half) * OBS_PLANES;
        for p in 0..OBS_PLANES {
            assert_eq!(o[[center + p]], planes[[pos.row, pos.col, p]]);
        }

        let free = (0..state.size() * state.size())
            .map(|i| Pos::new(i / state.size(), i % state.size()))
            .find(|&p| {
                state.cell_at(p) == CellKind::Clear
                    && state.agent_at(p).is_none()
                    && state.item_at(p).is_none()
            })
            .unwrap();
        state.bombs.push(crate::gridworld::Bomb {
            pos: free,
            fuse: 7,
            owner: 0,
            blast_power: 3,
        });
        let bomb = Vertex { kind: VertexType::Bomb, pos: Some(free), agent_id: None };
        let ob = vertex_observation(&state, &planes, &bomb, half);
        assert_eq!(ob[[VertexType::Bomb.index()]], 1.0);
        assert_eq!(ob[[base + 2]], 0.7, "fuse fraction");
        assert_eq!(ob[[base + 3]], 0.75, "blast fraction");
        assert_eq!(ob[[base + 4]], 0.0);

        let null = Vertex { kind: VertexType::Null, pos: None, agent_id: None };
        let on = vertex_observation(&state, &planes, &null, half);
        assert!(on.iter().all(|&x| x == 0.0), "null vertices observe nothing");
    }

    #[test]
    fn zeroed_encoders_emit_zero_info() {
        let cfg = tiny_cfg();
        let (params, policy) = build(&cfg, 1);
        zero_params(&params);
        let vertices = toy_vertices();
        let mut rng = derive_rng(1, "obs", 0);
        let obs = random_obs(&vertices, observation_width(cfg.crop_half), &mut rng);
        let info = init_info(&policy.nets, &vertices, &obs);
        for (v, slot) in info.slots.iter().enumerate() {
            assert!(slot.h.value().iter().all(|&x| x == 0.0), "h[{v}] nonzero");
            assert!(slot.c.value().iter().all(|&x| x == 0.0), "c[{v}] nonzero");
        }
    }

    #[test]
    fn same_typed_vertices_share_their_encoder() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 2);
        let vertices = vec![
            Vertex { kind: VertexType::Wall, pos: Some(Pos::new(1, 1)), agent_id: None },
            Vertex { kind: VertexType::Wall, pos: Some(Pos::new(3, 2)), agent_id: None },
        ];
        let mut rng = derive_rng(2, "obs", 0);
        let mut o = zeros(&[observation_width(cfg.crop_half)]);
        for i in 0..o.len() {
            o[[i]] = rng.random_range(-1.0..1.0);
        }
        let info = init_info(&policy.nets, &vertices, &[o.clone(), o]);
        assert_eq!(
            info.slots[0].h.value(),
            info.slots[1].h.value(),
            "identical observations through one shared encoder"
        );
    }

    #[test]
    fn zero_propagation_rounds_change_nothing() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 3);
        let graph = toy_graph();
        let mut rng = derive_rng(3, "obs", 0);
        let obs = random_obs(&graph.vertices, observation_width(cfg.crop_half), &mut rng);
        let info = init_info(&policy.nets, &graph.vertices, &obs);
        let out = propagate(&policy.nets, &policy.edges, &graph, &info, 0);
        for (a, b) in info.slots.iter().zip(&out.slots) {
            assert_eq!(a.h.value(), b.h.value());
            assert_eq!(a.c.value(), b.c.value());
        }
    }

    #[test]
    fn propagation_rounds_compose() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 4);
        let graph = toy_graph();
        let mut rng = derive_rng(4, "obs", 0);
        let obs = random_obs(&graph.vertices, observation_width(cfg.crop_half), &mut rng);
        let info = init_info(&policy.nets, &graph.vertices, &obs);
        let two = propagate(&policy.nets, &policy.edges, &graph, &info, 2);
        let one = propagate(&policy.nets, &policy.edges, &graph, &info, 1);
        let one_one = propagate(&policy.nets, &policy.edges, &graph, &one, 1);
        for (a, b) in two.slots.iter().zip(&one_one.slots) {
            assert_eq!(a.h.value(), b.h.value(), "rounds must compose exactly");
            assert_eq!(a.c.value(), b.c.value());
        }
    }

    #[test]
    fn zero_weights_isolate_every_vertex() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 5);
        let vertices = toy_vertices();
        let graph = const_graph(vertices.clone(), zeros(&[NUM_AGENTS, vertices.len()]));
        let mut rng = derive_rng(5, "obs", 0);
        let width = observation_width(cfg.crop_half);
        let obs = random_obs(&vertices, width, &mut rng);
        let mut other = obs.clone();
        for i in 0..width {
            other[4][[i]] = rng.random_range(-1.0..1.0);
        }

        let a = policy.action_vector_from(&obs, &graph, 0);
        let b = policy.action_vector_from(&other, &graph, 0);
        assert_eq!(
            a.value(),
            b.value(),
            "with zero weights the bomb's view cannot reach agent 0"
        );

        let ia = init_info(&policy.nets, &vertices, &obs);
        let ib = init_info(&policy.nets, &vertices, &other);
        let sa = propagate(&policy.nets, &policy.edges, &graph, &ia, 2);
        let sb = propagate(&policy.nets, &policy.edges, &graph, &ib, 2);
        assert_eq!(sa.mu(0).value(), sb.mu(0).value());
        assert_ne!(sa.mu(4).value(), sb.mu(4).value(), "the bomb itself changed");
    }

    #[test]
    fn message_sums_are_invariant_to_object_order() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 6);
        let vertices = vec![
            Vertex { kind: VertexType::Ally, pos: Some(Pos::new(1, 1)), agent_id: Some(0) },
            Vertex { kind: VertexType::Enemy, pos: Some(Pos::new(1, 5)), agent_id: Some(1) },
            Vertex { kind: VertexType::Ally, pos: Some(Pos::new(5, 1)), agent_id: Some(2) },
            Vertex { kind: VertexType::Enemy, pos: Some(Pos::new(5, 5)), agent_id: Some(3) },
            Vertex { kind: VertexType::Bomb, pos: Some(Pos::new(2, 2)), agent_id: None },
            Vertex { kind: VertexType::Wall, pos: Some(Pos::new(3, 3)), agent_id: None },
            Vertex { kind: VertexType::Wall, pos: Some(Pos::new(4, 2)), agent_id: None },
        ];
        let mut rng = derive_rng(6, "weights", 0);
        let mut w = zeros(&[NUM_AGENTS, vertices.len()]);
        for row in 0..NUM_AGENTS {
            for col in 0..vertices.len() {
                if col != row {
                    w[[row, col]] = rng.random_range(0.1..1.0);
                }
            }
        }
        let obs = random_obs(&vertices, observation_width(cfg.crop_half), &mut rng);

        // Rebuild with object slots cycled: new slot i holds old perm[i].
        let perm = [0usize, 1, 2, 3, 6, 4, 5];
        let pv: Vec<Vertex> = perm.iter().map(|&i| vertices[i].clone()).collect();
        let po: Vec<Arr> = perm.iter().map(|&i| obs[i].clone()).collect();
        let mut pw = zeros(&[NUM_AGENTS, vertices.len()]);
        for row in 0..NUM_AGENTS {
            for (new_col, &old_col) in perm.iter().enumerate() {
                pw[[row, new_col]] = w[[row, old_col]];
            }
        }
        let ga = const_graph(vertices.clone(), w);
        let gb = const_graph(pv.clone(), pw);

        let ia = init_info(&policy.nets, &vertices, &obs);
        let ib = init_info(&policy.nets, &pv, &po);
        let sa = propagate(&policy.nets, &policy.edges, &ga, &ia, 2);
        let sb = propagate(&policy.nets, &policy.edges, &gb, &ib, 2);
        for (new_slot, &old_slot) in perm.iter().enumerate() {
            assert_close(
                &sb.mu(new_slot).value(),
                &sa.mu(old_slot).value(),
                1e-12,
                &format!("vertex {old_slot}"),
            );
        }
    }

    #[test]
    fn aggregates_scale_linearly_in_the_edge_weight() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 7);
        let vertices = toy_vertices();
        let mut rng = derive_rng(7, "obs", 0);
        let obs = random_obs(&vertices, observation_width(cfg.crop_half), &mut rng);
        let info = init_info(&policy.nets, &vertices, &obs);

        let single = |weight: f64| {
            let mut w = zeros(&[NUM_AGENTS, vertices.len()]);
            w[[0, 4]] = weight;
            let graph = const_graph(vertices.clone(), w);
            message_aggregates(&policy.edges, &graph, &info)
        };
        let base = single(0.3);
        let doubled = single(0.6);
        let twice = base[0].value().mapv(|x| x * 2.0);
        assert_eq!(doubled[0].value(), twice, "agent aggregate doubles exactly");
        let twice_bomb = base[4].value().mapv(|x| x * 2.0);
        assert_eq!(doubled[4].value(), twice_bomb, "bomb aggregate doubles exactly");
        assert!(base[1].value().iter().all(|&x| x == 0.0), "untouched vertex stays zero");

        let off = single(0.0);
        assert!(off[0].value().iter().all(|&x| x == 0.0));
        assert!(off[4].value().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let (params, policy) = build(&cfg, 8);
        let graph = toy_graph();
        let mut rng = derive_rng(8, "obs", 0);
        let obs = random_obs(&graph.vertices, observation_width(cfg.crop_half), &mut rng);
        let mut probe = zeros(&[Action::COUNT]);
        for i in 0..Action::COUNT {
            probe[[i]] = rng.random_range(-1.0..1.0);
        }
        let direction = Var::constant(probe);

        let inputs: Vec<Var> = params.iter().map(|(_, v)| v.clone()).collect();
        let build_loss = || {
            policy
                .action_vector_from(&obs, &graph, 0)
                .mul(&direction)
                .sum_all()
        };
        let mut grng = derive_rng(8, "gradcheck", 0);
        match gradcheck(&inputs, &build_loss, 3, 1e-5, &mut grng) {
            GradCheckOutcome::Checked(r) => assert!(
                r.passes(1e-4),
                "max rel err {} over {} checks",
                r.max_rel_err,
                r.checks
            ),
            GradCheckOutcome::Degenerate => panic!("every probe landed on a kink"),
        }
    }

    #[test]
    fn gradients_reach_every_network_the_decision_used() {
        let cfg = tiny_cfg();
        let (params, policy) = build(&cfg, 9);
        let graph = toy_graph();
        let mut rng = derive_rng(9, "obs", 0);
        let obs = random_obs(&graph.vertices, observation_width(cfg.crop_half), &mut rng);
        let mut probe = zeros(&[Action::COUNT]);
        for i in 0..Action::COUNT {
            probe[[i]] = rng.random_range(-1.0..1.0);
        }
        params.zero_grads();
        policy
            .action_vector_from(&obs, &graph, 0)
            .mul(&Var::constant(probe))
            .sum_all()
            .backward();

        let group_touched = |group: &str| {
            params
                .iter()
                .filter(|(name, _)| name.contains(group))
                .any(|(_, v)| v.grad().iter().any(|&g| g != 0.0))
        };
        for group in [
            "/init/ally", "/init/enemy", "/init/bomb", "/up/ally", "/up/enemy", "/up/bomb",
            "/mess/agents", "/mess/objects", "/choice/ally",
        ] {
            assert!(group_touched(group), "{group} should receive gradient");
        }
        for group in ["/choice/enemy", "/init/wall", "/up/wall"] {
            assert!(!group_touched(group), "{group} should stay untouched");
        }
    }

    #[test]
    fn an_unseen_agents_move_cannot_leak_into_the_decision() {
        let empty = MapConfig {
            board_size: 11,
            wood_density: 0.0,
            rigid_density: 0.0,
            item_prob: 0.0,
            max_steps: 50,
            object_cap: 10,
        };
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 10);
        let state = reset(5, &empty).unwrap();
        let en = enumerate_objects(&state, 0);
        let graph = const_graph(en.vertices.clone(), zeros(&[NUM_AGENTS, en.len()]));
        let before = policy.action_vector(&state, &graph, 0).value();

        // March the far enemy one cell; agent 0's own crop cannot see it.
        let mut moved = state.clone();
        let me = moved.agents[0].pos;
        let enemy = moved
            .agents
            .iter()
            .position(|a| {
                a.team == 1 && a.pos.row.abs_diff(me.row).max(a.pos.col.abs_diff(me.col)) > 3
            })
            .unwrap();
        let old = moved.agents[enemy].pos;
        moved.agents[enemy].pos = Pos::new(old.row.max(1) - 1 + usize::from(old.row == 0), old.col);
        assert_ne!(moved.agents[enemy].pos, old);

        let en2 = enumerate_objects(&moved, 0);
        let planes = observe(&moved, 0);
        assert_ne!(
            vertex_observation(&moved, &planes, &en2.vertices[enemy], cfg.crop_half),
            vertex_observation(&state, &observe(&state, 0), &en.vertices[enemy], cfg.crop_half),
            "the enemy's own observation did change"
        );
        let graph2 = const_graph(en2.vertices.clone(), zeros(&[NUM_AGENTS, en2.len()]));
        let after = policy.action_vector(&moved, &graph2, 0).value();
        assert_eq!(before, after, "zero-weight vertices are invisible to the decision");
    }

    #[test]
    fn zeroed_decision_heads_tie_break_to_up() {
        let cfg = tiny_cfg();
        let (params, policy) = build(&cfg, 11);
        zero_params(&params);
        let state = reset(12, &small_map()).unwrap();
        let en = enumerate_objects(&state, 0);
        let mut rng = derive_rng(11, "graph", 0);
        let graph = RelevanceGraph::uniform_random(&en, false, &mut rng);
        assert_eq!(policy.act(&state, &graph, 0), Action::Up);
        let scores = policy.action_vector(&state, &graph, 0).value();
        assert!(scores.iter().all(|&s| s == 0.0), "zero nets score all actions equal");
    }

    #[test]
    fn decisions_are_deterministic() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 12);
        let state = reset(13, &small_map()).unwrap();
        let en = enumerate_objects(&state, 0);
        let mut rng = derive_rng(12, "graph", 0);
        let graph = RelevanceGraph::uniform_random(&en, false, &mut rng);
        let a = policy.action_vector(&state, &graph, 0).value();
        let b = policy.action_vector(&state, &graph, 0).value();
        assert_eq!(a, b, "same state, same graph, same scores");
    }

    #[test]
    fn parameter_count_ignores_the_object_cap() {
        let cfg = tiny_cfg();
        let (params, policy) = build(&cfg, 13);
        let count = params.len();
        let mut rng = derive_rng(13, "graph", 0);
        for cap in [10usize, 30] {
            let map = MapConfig { object_cap: cap, ..small_map() };
            let state = reset(20, &map).unwrap();
            let en = enumerate_objects(&state, 0);
            assert_eq!(en.len(), NUM_AGENTS + cap);
            let graph = RelevanceGraph::uniform_random(&en, false, &mut rng);
            let scores = policy.action_vector(&state, &graph, 0);
            assert_eq!(scores.len(), Action::COUNT);
        }
        assert_eq!(params.len(), count, "vertex count never mints parameters");
    }

    #[test]
    fn a_full_size_decision_fits_the_latency_budget() {
        let cfg = MsgPassConfig::default();
        let (_params, policy) = build(&cfg, 14);
        let state = reset(3, &MapConfig::default()).unwrap();
        let en = enumerate_objects(&state, 0);
        let mut rng = derive_rng(14, "graph", 0);
        let graph = RelevanceGraph::uniform_random(&en, false, &mut rng);
        policy.act(&state, &graph, 0);
        let start = Instant::now();
        policy.act(&state, &graph, 0);
        let elapsed = start.elapsed();
        assert!(
            elapsed.as_millis() < 50,
            "one decision took {} us, budget is 50 ms",
            elapsed.as_micros()
        );
    }

    #[test]
    #[should_panic(expected = "has no decision net")]
    fn choosing_for_a_dead_agent_panics() {
        let cfg = tiny_cfg();
        let (_params, policy) = build(&cfg, 15);
        let vertices = toy_vertices();
        let mut rng = derive_rng(15, "obs", 0);
        let obs = random_obs(&vertices, observation_width(cfg.crop_half), &mut rng);
        let info = init_info(&policy.nets, &vertices, &obs);
        choose_action(&policy.nets, &info, &vertices, 2);
    }

    #[test]
    fn argmax_prefers_the_lowest_index() {
        let mut scores = zeros(&[Action::COUNT]);
        assert_eq!(argmax_action(&scores), Action::Up);
        scores[[1]] = 1.0;
        scores[[3]] = 1.0;
        assert_eq!(argmax_action(&scores), Action::Down);
    }

    #[test]
    fn config_parses_from_toml_and_rejects_unknown_keys() {
        let cfg: MsgPassConfig = toml::from_str("info_dim = 16\nsteps = 3\n").unwrap();
        assert_eq!(cfg.info_dim, 16);
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.choice_widths, vec![1024, 256, 64]);
        cfg.validate().unwrap();
        assert!(toml::from_str::<MsgPassConfig>("breadth = 2\n").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(MsgPassConfig::default().validate().is_ok());
        let mut cfg = tiny_cfg();
        cfg.info_dim = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.message_widths = vec![16, 0];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.steps = 0;
        assert!(cfg.validate().is_ok(), "zero rounds is legal and means no messaging");
    }
}
