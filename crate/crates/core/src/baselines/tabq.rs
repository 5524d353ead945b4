/// Dense Q-table over a discrete state/action space with the one-step
/// temporal-difference update
///
/// ```text
/// Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))
/// ```
///
/// where the bootstrap term is dropped on terminal transitions. Small and
/// exact on purpose: it anchors the learning-rule tests that the function
/// approximators are compared against.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    q: Vec<f64>,
}

impl QTable {
    pub fn new(states: usize, actions: usize) -> QTable {
        assert!(states > 0 && actions > 0);
        QTable {
            states,
            actions,
            q: vec![0.0; states * actions],
        }
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.check(state, action);
        self.q[state * self.actions + action]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.check(state, action);
        self.q[state * self.actions + action] = value;
    }

    /// max_a Q(state, a).
    pub fn best_value(&self, state: usize) -> f64 {
        assert!(state < self.states, "state {state} out of range");
        (0..self.actions)
            .map(|a| self.get(state, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// argmax_a Q(state, a), lowest index on ties.
    pub fn greedy(&self, state: usize) -> usize {
        let best = self.best_value(state);
        (0..self.actions)
            .position(|a| self.get(state, a) == best)
            .expect("an action set is never empty")
    }

    /// One TD(0) update; `next` is None on terminal transitions.
    pub fn update(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next: Option<usize>,
        alpha: f64,
        gamma: f64,
    ) {
        self.check(state, action);
        let bootstrap = match next {
            Some(s) => gamma * self.best_value(s),
            None => 0.0,
        };
        let idx = state * self.actions + action;
        self.q[idx] += alpha * (reward + bootstrap - self.q[idx]);
    }

    fn check(&self, state: usize, action: usize) {
        assert!(state < self.states, "state {state} out of range");
        assert!(action < self.actions, "action {action} out of range");
    }
}
