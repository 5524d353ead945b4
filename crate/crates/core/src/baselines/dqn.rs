//! Deep Q-learning on the gridworld: a conv-plus-FC value network over
//! the 4-plane observation tensor and a 6-wide context vector, trained
//! with a target network, FIFO replay, and epsilon-greedy exploration.
//!
//! Two board scenarios are built in. `Standard` is the full 2v2 game
//! against scripted opponents with the alternating teammate scheme: one
//! agent learns while its ally runs a frozen snapshot of an earlier
//! policy, and every few episodes the snapshot is refreshed from the
//! learner. Which snapshot generation the ally runs is one-hot encoded
//! into the context vector so the learner can condition on it.
//! `StaticTarget` is a small open board against a single stationary
//! enemy, used for fast end-to-end learning checks.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{arr_from, zeros, Adam, Arr, Padding, ParamSet, Var};
use crate::gridworld::{
    observe, reset, Action, AgentState, BoardState, CellKind, MapConfig, MapError, Pos,
    NUM_AGENTS, OBS_PLANES,
};
use crate::layers::{init_array, Init, Mlp, OutputActivation};
use crate::rng::{derive_rng, fnv1a64};
use crate::training::{wilson, MetricRow, ReplayBuffer};

use super::scripted::{RandomPolicy, ScriptedPolicy};

/// Width of the auxiliary context vector fed beside the observation.
pub const CONTEXT_DIM: usize = 6;

/// Architecture scale of a [`QNetwork`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnSpec {
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub fc_layers: usize,
    pub fc_width: usize,
}

impl DqnSpec {
    /// Small stack sized for fast local runs: 2 conv layers of 8 filters,
    /// then 2 fully connected layers 64 wide.
    pub fn compact() -> DqnSpec {
        DqnSpec {
            conv_layers: 2,
            filters: 8,
            kernel: 3,
            fc_layers: 2,
            fc_width: 64,
        }
    }

    /// Full-depth variant: 5 conv layers of 64 3x3 filters feeding 3
    /// fully connected layers 128 wide.
    pub fn full() -> DqnSpec {
        DqnSpec {
            conv_layers: 5,
            filters: 64,
            kernel: 3,
            fc_layers: 3,
            fc_width: 128,
        }
    }
}

impl Default for DqnSpec {
    fn default() -> DqnSpec {
        DqnSpec::compact()
    }
}

/// Action-value network: a stack of same-padded stride-1 convolutions
/// over the `[n, n, 4]` observation, flattened and joined with the
/// context vector, then a fully connected head producing one Q-value per
/// action (always 6 outputs).
pub struct QNetwork {
    convs: Vec<(Var, Var)>,
    head: Mlp,
    board: usize,
}

impl QNetwork {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        board: usize,
        spec: &DqnSpec,
        rng: &mut ChaCha20Rng,
    ) -> QNetwork {
        assert!(spec.conv_layers > 0 && spec.fc_layers > 0, "empty network");
        assert!(spec.kernel % 2 == 1, "conv kernel must be odd");
        let mut convs = Vec::with_capacity(spec.conv_layers);
        let mut channels = OBS_PLANES;
        for i in 0..spec.conv_layers {
            let fan_in = spec.kernel * spec.kernel * channels;
            let kernel = params.param(
                &format!("{prefix}/conv{i}/k"),
                init_array(
                    &[spec.kernel, spec.kernel, channels, spec.filters],
                    Init::Kaiming,
                    fan_in,
                    spec.filters,
                    rng,
                ),
            );
            let bias = params.param(&format!("{prefix}/conv{i}/b"), zeros(&[spec.filters]));
            convs.push((kernel, bias));
            channels = spec.filters;
        }
        let mut widths = vec![spec.fc_width; spec.fc_layers - 1];
        widths.push(Action::COUNT);
        let head = Mlp::new(
            params,
            &format!("{prefix}/head"),
            board * board * channels + CONTEXT_DIM,
            &widths,
            OutputActivation::None,
            rng,
        );
        QNetwork { convs, head, board }
    }

    /// Q-values for every action, shape `[6]`.
    pub fn forward(&self, obs: &Var, context: &Var) -> Var {
        assert_eq!(
            obs.shape(),
            vec![self.board, self.board, OBS_PLANES],
            "q network observation shape"
        );
        assert_eq!(context.shape(), vec![CONTEXT_DIM], "q network context shape");
        let mut h = obs.clone();
        for (kernel, bias) in &self.convs {
            h = h.conv2d(kernel, 1, Padding::Same).add(bias).relu();
        }
        self.head.forward(&Var::concat(&[&h.flatten(), context], 0))
    }
}

/// Highest-value action under `net`, lowest index on ties.
pub fn greedy_action(net: &QNetwork, obs: &Arr, context: &Arr) -> Action {
    let q = net
        .forward(&Var::constant(obs.clone()), &Var::constant(context.clone()))
        .value();
    let mut best = 0;
    for a in 1..Action::COUNT {
        if q[[a]] > q[[best]] {
            best = a;
        }
    }
    Action::from_index(best).expect("q head emits one value per action")
}

/// Context vector announcing which ally policy snapshot is in play.
pub fn context_for_generation(generation: u64) -> Arr {
    let mut v = zeros(&[CONTEXT_DIM]);
    v[[(generation % CONTEXT_DIM as u64) as usize]] = 1.0;
    v
}

/// One stored step of experience for the learner.
#[derive(Clone, Debug)]
pub struct Transition {
    pub obs: Arr,
    pub context: Arr,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Arr,
    pub next_context: Arr,
    pub terminal: bool,
}

/// Mean squared temporal-difference error over a minibatch:
///
/// ```text
/// L = mean_i (Q(s_i, a_i) - y_i)^2
/// y_i = r_i                                   if terminal
///     = r_i + gamma * max_a Q_target(s'_i, a) otherwise
/// ```
///
/// Targets are plain numbers, so no gradient flows into the target
/// network or through the bootstrap term.
pub fn dqn_loss(online: &QNetwork, target: &QNetwork, batch: &[&Transition], gamma: f64) -> Var {
    assert!(!batch.is_empty(), "dqn loss needs at least one transition");
    let mut total: Option<Var> = None;
    for t in batch {
        assert!(t.action < Action::COUNT, "action index out of range");
        let y = if t.terminal {
            t.reward
        } else {
            let next_q = target
                .forward(
                    &Var::constant(t.next_obs.clone()),
                    &Var::constant(t.next_context.clone()),
                )
                .value();
            t.reward + gamma * next_q.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        };
        let q = online.forward(
            &Var::constant(t.obs.clone()),
            &Var::constant(t.context.clone()),
        );
        let diff = q
            .slice(0, t.action, t.action + 1)
            .sub(&Var::constant(arr_from(&[1], vec![y])));
        let sq = diff.mul(&diff);
        total = Some(match total {
            Some(acc) => acc.add(&sq),
            None => sq,
        });
    }
    total.unwrap().scale(1.0 / batch.len() as f64)
}

/// Board scenario a DQN run trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DqnScenario {
    /// Full 2v2 board versus the scripted AI, ally running a frozen
    /// snapshot that is refreshed from the learner on a schedule.
    Standard,
    /// Small open board, single stationary enemy, no teammates. The
    /// learner wins by bombing the enemy without killing itself.
    StaticTarget,
}

/// Knobs for [`train_dqn`]. Intervals are counted in environment steps
/// for `train_interval` / epsilon decay and in gradient steps for
/// `target_sync_interval`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub spec: DqnSpec,
    pub scenario: DqnScenario,
    pub board_size: usize,
    pub episodes: usize,
    pub max_steps: u32,
    pub gamma: f64,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Transitions that must be buffered before gradient steps start.
    pub warmup: usize,
    /// Environment steps per gradient step.
    pub train_interval: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync_interval: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    /// Episodes between ally snapshot refreshes (Standard scenario).
    pub ally_refresh_episodes: usize,
    /// Episodes per metric row.
    pub eval_window: usize,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> DqnConfig {
        DqnConfig {
            spec: DqnSpec::compact(),
            scenario: DqnScenario::Standard,
            board_size: 11,
            episodes: 200,
            max_steps: 300,
            gamma: 0.99,
            lr: 1e-3,
            buffer_capacity: 100_000,
            batch_size: 32,
            warmup: 256,
            train_interval: 4,
            target_sync_interval: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            ally_refresh_episodes: 50,
            eval_window: 50,
            seed: 7,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DqnConfigError {
    #[error("board layout: {0}")]
    Board(#[from] MapError),
    #[error("gamma must lie in [0, 1], got {0}")]
    Gamma(f64),
    #[error("epsilon schedule must lie in [0, 1] with start >= end")]
    Epsilon,
    #[error("{0} must be positive")]
    Zero(&'static str),
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), DqnConfigError> {
        self.map_config().validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DqnConfigError::Gamma(self.gamma));
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end)
            || self.epsilon_start < self.epsilon_end
        {
            return Err(DqnConfigError::Epsilon);
        }
        for (value, name) in [
            (self.episodes, "episodes"),
            (self.buffer_capacity, "buffer_capacity"),
            (self.batch_size, "batch_size"),
            (self.train_interval, "train_interval"),
            (self.target_sync_interval, "target_sync_interval"),
            (self.ally_refresh_episodes, "ally_refresh_episodes"),
            (self.eval_window, "eval_window"),
        ] {
            if value == 0 {
                return Err(DqnConfigError::Zero(name));
            }
        }
        if self.lr <= 0.0 {
            return Err(DqnConfigError::Zero("lr"));
        }
        Ok(())
    }

    fn map_config(&self) -> MapConfig {
        MapConfig {
            board_size: self.board_size,
            max_steps: self.max_steps,
            ..MapConfig::default()
        }
    }
}

/// How one episode ended for the learner's team.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeOutcome {
    Win,
    Loss,
    Draw,
}

fn outcome_from_reward(r: f64) -> EpisodeOutcome {
    if r > 0.0 {
        EpisodeOutcome::Win
    } else if r < 0.0 {
        EpisodeOutcome::Loss
    } else {
        EpisodeOutcome::Draw
    }
}

/// Open board with the learner in one corner, a stationary enemy in the
/// middle, and the other two agent slots dead from the start.
pub fn static_target_board(n: usize, max_steps: u32, seed: u64) -> BoardState {
    let config = MapConfig {
        board_size: n,
        wood_density: 0.0,
        rigid_density: 0.0,
        item_prob: 0.0,
        max_steps,
        object_cap: 12,
    };
    let mid = n / 2;
    let agent = |id: usize, pos: Pos, alive: bool| AgentState {
        id,
        team: (id % 2) as u8,
        pos,
        alive,
        max_bombs: 1,
        blast_power: 2,
        can_kick: false,
    };
    let agents = vec![
        agent(0, Pos::new(0, 0), true),
        agent(1, Pos::new(mid, mid), true),
        agent(2, Pos::new(n - 1, n - 1), false),
        agent(3, Pos::new(0, n - 1), false),
    ];
    BoardState::from_parts(
        vec![CellKind::Clear; n * n],
        Vec::new(),
        Vec::new(),
        agents,
        config,
        seed,
    )
}

const LEARNER: usize = 0;
const ALLY: usize = 2;

/// Stepwise DQN training state. [`train_dqn`] drives this to completion;
/// tests drive it episode by episode to observe schedules.
pub struct DqnTrainer {
    cfg: DqnConfig,
    params: ParamSet,
    online: QNetwork,
    target_params: ParamSet,
    target: QNetwork,
    ally_params: ParamSet,
    ally: QNetwork,
    ally_generation: u64,
    opt: Adam,
    buffer: ReplayBuffer<Transition>,
    rng: ChaCha20Rng,
    opponents: Vec<ScriptedPolicy>,
    env_steps: usize,
    grad_steps: usize,
    episodes_done: usize,
    window_losses: Vec<f64>,
}

impl DqnTrainer {
    pub fn new(cfg: DqnConfig) -> Result<DqnTrainer, DqnConfigError> {
        cfg.validate()?;
        let mut init_rng = derive_rng(cfg.seed, "dqn-init", 0);
        let mut params = ParamSet::new();
        let online = QNetwork::new(&mut params, "q", cfg.board_size, &cfg.spec, &mut init_rng);
        let mut target_params = ParamSet::new();
        let target = QNetwork::new(
            &mut target_params,
            "q",
            cfg.board_size,
            &cfg.spec,
            &mut init_rng,
        );
        let mut ally_params = ParamSet::new();
        let ally = QNetwork::new(
            &mut ally_params,
            "q",
            cfg.board_size,
            &cfg.spec,
            &mut init_rng,
        );
        let bytes = params.to_bytes();
        target_params
            .apply_bytes(&bytes)
            .expect("clone of identical layout");
        ally_params
            .apply_bytes(&bytes)
            .expect("clone of identical layout");
        let opt = Adam::new(cfg.lr);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        let rng = derive_rng(cfg.seed, "dqn-explore", 0);
        let opponents = vec![
            ScriptedPolicy::new(cfg.seed, 1),
            ScriptedPolicy::new(cfg.seed, 3),
        ];
        Ok(DqnTrainer {
            cfg,
            params,
            online,
            target_params,
            target,
            ally_params,
            ally,
            ally_generation: 0,
            opt,
            buffer,
            rng,
            opponents,
            env_steps: 0,
            grad_steps: 0,
            episodes_done: 0,
            window_losses: Vec::new(),
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn gradient_steps(&self) -> usize {
        self.grad_steps
    }

    pub fn online_params(&self) -> &ParamSet {
        &self.params
    }

    pub fn target_state_bytes(&self) -> Vec<u8> {
        self.target_params.to_bytes()
    }

    /// Mean minibatch loss since the last call; NaN when no gradient
    /// step has run in the window.
    pub fn drain_window_loss(&mut self) -> f64 {
        let mean = if self.window_losses.is_empty() {
            f64::NAN
        } else {
            self.window_losses.iter().sum::<f64>() / self.window_losses.len() as f64
        };
        self.window_losses.clear();
        mean
    }

    fn epsilon(&self) -> f64 {
        let t = (self.env_steps as f64 / self.cfg.epsilon_decay_steps as f64).min(1.0);
        self.cfg.epsilon_start + (self.cfg.epsilon_end - self.cfg.epsilon_start) * t
    }

    fn episode_board(&self, index: usize) -> BoardState {
        let mut key = self.cfg.seed.to_le_bytes().to_vec();
        key.extend_from_slice(&(index as u64).to_le_bytes());
        let seed = fnv1a64(&key);
        match self.cfg.scenario {
            DqnScenario::Standard => reset(seed, &self.cfg.map_config())
                .expect("map config was validated at construction"),
            DqnScenario::StaticTarget => {
                static_target_board(self.cfg.board_size, self.cfg.max_steps, seed)
            }
        }
    }

    fn context(&self) -> Arr {
        match self.cfg.scenario {
            DqnScenario::Standard => context_for_generation(self.ally_generation),
            DqnScenario::StaticTarget => zeros(&[CONTEXT_DIM]),
        }
    }

    fn learn_if_due(&mut self) {
        if self.buffer.len() < self.cfg.warmup.max(self.cfg.batch_size)
            || self.env_steps % self.cfg.train_interval != 0
        {
            return;
        }
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng);
        let loss = dqn_loss(&self.online, &self.target, &batch, self.cfg.gamma);
        self.window_losses.push(loss.item());
        self.params.zero_grads();
        loss.backward();
        self.opt.step(&self.params);
        self.grad_steps += 1;
        if self.grad_steps % self.cfg.target_sync_interval == 0 {
            self.target_params
                .apply_bytes(&self.params.to_bytes())
                .expect("target mirrors online layout");
        }
    }

    /// Plays one episode, learning as it goes, and reports how it ended.
    pub fn run_episode(&mut self) -> EpisodeOutcome {
        let mut state = self.episode_board(self.episodes_done);
        let ctx = self.context();
        // The learner's most recent transition is held back until the next
        // step confirms the episode continues, because the team reward only
        // lands on the final step.
        let mut held: Option<Transition> = None;
        let outcome = loop {
            let learner_view = if state.agents[LEARNER].alive {
                let obs = observe(&state, LEARNER);
                let action = if self.rng.random::<f64>() < self.epsilon() {
                    Action::ALL[self.rng.random_range(0..Action::COUNT)]
                } else {
                    greedy_action(&self.online, &obs, &ctx)
                };
                Some((obs, action))
            } else {
                None
            };
            let mut actions = [Action::Stop; NUM_AGENTS];
            if let Some((_, action)) = &learner_view {
                actions[LEARNER] = *action;
            }
            if self.cfg.scenario == DqnScenario::Standard {
                if state.agents[ALLY].alive {
                    actions[ALLY] = greedy_action(&self.ally, &observe(&state, ALLY), &ctx);
                }
                for (slot, id) in [(0usize, 1usize), (1, 3)] {
                    if state.agents[id].alive {
                        actions[id] = self.opponents[slot].act(&state, id);
                    }
                }
            }
            let out = state.step(&actions).expect("episode still running");
            self.env_steps += 1;
            if let Some((obs, action)) = learner_view {
                if let Some(t) = held.take() {
                    self.buffer.push(t);
                }
                held = Some(Transition {
                    obs,
                    context: ctx.clone(),
                    action: action.index(),
                    reward: 0.0,
                    next_obs: observe(&out.state, LEARNER),
                    next_context: ctx.clone(),
                    terminal: false,
                });
            }
            let finished = if out.done {
                if let Some(mut t) = held.take() {
                    t.reward = out.rewards[LEARNER];
                    t.terminal = true;
                    self.buffer.push(t);
                }
                Some(outcome_from_reward(out.rewards[LEARNER]))
            } else {
                None
            };
            self.learn_if_due();
            state = out.state;
            if let Some(o) = finished {
                break o;
            }
        };
        self.episodes_done += 1;
        if self.cfg.scenario == DqnScenario::Standard
            && self.episodes_done % self.cfg.ally_refresh_episodes == 0
        {
            self.ally_params
                .apply_bytes(&self.params.to_bytes())
                .expect("ally mirrors online layout");
            self.ally_generation += 1;
        }
        outcome
    }
}

/// Result of a [`train_dqn`] run. Win rates count draws as non-wins; the
/// random baseline replays the same scenario with uniformly random
/// learner (and ally) actions for comparison.
#[derive(Clone, Debug)]
pub struct DqnRunReport {
    pub episodes: usize,
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
    pub metrics: Vec<MetricRow>,
    pub final_window_win_rate: f64,
    pub random_baseline_win_rate: f64,
    pub random_baseline_episodes: usize,
}

/// Runs the configured scenario to completion, one metric row per
/// `eval_window` episodes, then measures the random-policy baseline.
pub fn train_dqn(cfg: &DqnConfig) -> Result<DqnRunReport, DqnConfigError> {
    let mut trainer = DqnTrainer::new(cfg.clone())?;
    let (mut wins, mut losses, mut draws) = (0usize, 0usize, 0usize);
    let mut window_wins = 0usize;
    let mut window_count = 0usize;
    let mut metrics = Vec::new();
    let mut final_window_win_rate = 0.0;
    for ep in 1..=cfg.episodes {
        match trainer.run_episode() {
            EpisodeOutcome::Win => {
                wins += 1;
                window_wins += 1;
            }
            EpisodeOutcome::Loss => losses += 1,
            EpisodeOutcome::Draw => draws += 1,
        }
        window_count += 1;
        if ep % cfg.eval_window == 0 || ep == cfg.episodes {
            let rate = window_wins as f64 / window_count as f64;
            let ci = wilson(window_wins, window_count).expect("window is never empty");
            let loss_mean = trainer.drain_window_loss();
            metrics.push(MetricRow {
                episode: ep,
                win_rate: rate,
                ci_low: ci.low,
                ci_high: ci.high,
                graph_loss: 0.0,
                critic_loss: if loss_mean.is_nan() { 0.0 } else { loss_mean },
                actor_loss: 0.0,
            });
            final_window_win_rate = rate;
            window_wins = 0;
            window_count = 0;
        }
        if ep % 100 == 0 {
            log::info!(
                "dqn episode {ep}/{}: {wins} wins {losses} losses {draws} draws",
                cfg.episodes
            );
        }
    }
    let random_baseline_episodes = cfg.episodes.min(500);
    let baseline_wins = random_rollouts(cfg, random_baseline_episodes);
    Ok(DqnRunReport {
        episodes: cfg.episodes,
        wins,
        losses,
        draws,
        metrics,
        final_window_win_rate,
        random_baseline_win_rate: baseline_wins as f64 / random_baseline_episodes as f64,
        random_baseline_episodes,
    })
}

/// Wins scored by a uniformly random learner (and random ally in the
/// Standard scenario) over `episodes` fresh episodes.
fn random_rollouts(cfg: &DqnConfig, episodes: usize) -> usize {
    let mut learner = RandomPolicy::new(cfg.seed, 100);
    let mut ally = RandomPolicy::new(cfg.seed, 102);
    let mut opponents = vec![
        ScriptedPolicy::new(cfg.seed, 101),
        ScriptedPolicy::new(cfg.seed, 103),
    ];
    let mut wins = 0;
    for ep in 0..episodes {
        let mut key = cfg.seed.to_le_bytes().to_vec();
        key.extend_from_slice(&(ep as u64).to_le_bytes());
        key.extend_from_slice(b"baseline");
        let seed = fnv1a64(&key);
        let mut state = match cfg.scenario {
            DqnScenario::Standard => {
                reset(seed, &cfg.map_config()).expect("config validated by caller")
            }
            DqnScenario::StaticTarget => {
                static_target_board(cfg.board_size, cfg.max_steps, seed)
            }
        };
        loop {
            let mut actions = [Action::Stop; NUM_AGENTS];
            actions[LEARNER] = learner.act(&state, LEARNER);
            if cfg.scenario == DqnScenario::Standard {
                if state.agents[ALLY].alive {
                    actions[ALLY] = ally.act(&state, ALLY);
                }
                for (slot, id) in [(0usize, 1usize), (1, 3)] {
                    if state.agents[id].alive {
                        actions[id] = opponents[slot].act(&state, id);
                    }
                }
            }
            let out = state.step(&actions).expect("episode still running");
            if out.done {
                if out.rewards[LEARNER] > 0.0 {
                    wins += 1;
                }
                break;
            }
            state = out.state;
        }
    }
    wins
}
