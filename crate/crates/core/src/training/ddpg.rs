//! Deterministic-policy actor-critic primitives: Gaussian exploration
//! over action score vectors, soft target tracking across parameter
//! sets, and the critic/actor losses. The trainer in this module's
//! sibling wires them to the full graph policy; everything here is small
//! enough to verify against closed forms.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{zeros, Arr, ParamSet, Var};
use crate::gridworld::Action;
use crate::msgpass::argmax_action;

/// Add i.i.d. Gaussian noise to each action score and pick the argmax.
/// Returns the executed action and the noisy vector, which is what goes
/// into replay. With `sigma == 0.0` the rng is left untouched and the
/// choice is the plain greedy one.
pub fn explore(mean: &Arr, sigma: f64, rng: &mut ChaCha20Rng) -> (Action, Arr) {
    assert!(sigma >= 0.0, "noise scale must be nonnegative");
    assert_eq!(mean.len(), Action::COUNT, "one score per action");
    if sigma == 0.0 {
        return (argmax_action(mean), mean.clone());
    }
    let noisy = mean.mapv(|m| m + sigma * rng.sample::<f64, _>(StandardNormal));
    (argmax_action(&noisy), noisy)
}

/// Linear noise schedule from `start` at episode 0 down to `end` at the
/// final episode.
pub fn annealed_sigma(start: f64, end: f64, episode: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        return end;
    }
    let progress = (episode as f64 / (episodes - 1) as f64).clamp(0.0, 1.0);
    start + (end - start) * progress
}

/// Blend every target parameter toward its online twin:
/// target <- tau * online + (1 - tau) * target. The sets must hold the
/// same names with the same shapes.
pub fn soft_update(online: &ParamSet, target: &ParamSet, tau: f64) {
    assert!(0.0 < tau && tau <= 1.0, "tau must lie in (0, 1]");
    assert_eq!(online.len(), target.len(), "parameter sets must mirror each other");
    for (name, o) in online.iter() {
        let t = target.get(name).expect("target set mirrors online names");
        let blended = &o.value() * tau + &t.value() * (1.0 - tau);
        t.set_value(blended);
    }
}

/// One sampled batch as the critic sees it: online Q-values with
/// gradients attached, and the plain-number ingredients of the
/// bootstrapped regression target.
pub struct CriticBatch {
    /// Q(s, a) from the online critic, shape [batch, 1].
    pub q: Var,
    pub rewards: Vec<f64>,
    /// Q_target(s', mu_target(s')) per sample; ignored at terminals.
    pub next_q: Vec<f64>,
    pub done: Vec<bool>,
}

/// Mean squared error between Q(s, a) and y = r + gamma * next_q, with
/// y collapsing to r at terminal transitions. The target side is plain
/// numbers, so gradients flow only into the online critic.
pub fn critic_loss(batch: &CriticBatch, gamma: f64) -> Var {
    let n = batch.rewards.len();
    assert!(n > 0, "critic batch must be nonempty");
    assert_eq!(batch.q.shape(), vec![n, 1], "one Q value per sample");
    assert_eq!(batch.next_q.len(), n);
    assert_eq!(batch.done.len(), n);
    let mut y = zeros(&[n, 1]);
    for i in 0..n {
        y[[i, 0]] = if batch.done[i] {
            batch.rewards[i]
        } else {
            batch.rewards[i] + gamma * batch.next_q[i]
        };
    }
    let diff = batch.q.sub(&Var::constant(y));
    diff.mul(&diff).mean()
}

/// Deterministic policy gradient objective: minimize -mean Q(s, mu(s)).
/// The Q values must be built with the actor's outputs feeding the
/// critic; stepping only the actor's optimizer keeps the critic fixed.
pub fn actor_loss(q_of_mu: &Var) -> Var {
    assert!(q_of_mu.len() > 0, "actor batch must be nonempty");
    q_of_mu.mean().neg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{arr_from, Adam};
    use crate::layers::{Mlp, OutputActivation};
    use crate::rng::derive_rng;

    #[test]
    fn zero_noise_is_greedy_and_leaves_the_rng_alone() {
        let mean = arr_from(&[6], vec![0.1, 0.9, 0.3, 0.2, 0.0, -1.0]);
        let mut rng = derive_rng(1, "explore", 0);
        let before = rng.clone();
        let (action, stored) = explore(&mean, 0.0, &mut rng);
        assert_eq!(action, Action::Down);
        assert_eq!(stored, mean);
        assert_eq!(
            rng.random::<u64>(),
            before.clone().random::<u64>(),
            "sigma 0 must not consume randomness"
        );
    }

    #[test]
    fn overwhelming_noise_spreads_actions_uniformly() {
        let mean = arr_from(&[6], vec![1.0, -0.5, 0.3, 0.0, 2.0, -1.0]);
        let mut rng = derive_rng(2, "explore", 0);
        let mut counts = [0usize; 6];
        let draws = 10_000;
        for _ in 0..draws {
            let (action, _) = explore(&mean, 1e6, &mut rng);
            counts[action.index()] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let rate = c as f64 / draws as f64;
            assert!(
                (rate - 1.0 / 6.0).abs() <= 0.03,
                "action {i} rate {rate} strays from uniform"
            );
        }
    }

    #[test]
    fn seeded_exploration_reproduces_its_action_sequence() {
        let mean = arr_from(&[6], vec![0.2, 0.1, 0.0, -0.1, 0.3, 0.4]);
        let run = || {
            let mut rng = derive_rng(3, "explore", 0);
            (0..50)
                .map(|_| explore(&mean, 0.5, &mut rng).0)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn the_noise_schedule_is_linear_and_clamped() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(annealed_sigma(0.5, 0.05, 0, 10), 0.5));
        assert!(close(annealed_sigma(0.5, 0.05, 9, 10), 0.05));
        assert!(close(annealed_sigma(0.5, 0.05, 5, 11), 0.275));
        assert!(
            close(annealed_sigma(0.5, 0.05, 0, 1), 0.05),
            "single episode jumps to the floor"
        );
        assert!(
            close(annealed_sigma(0.5, 0.05, 99, 10), 0.05),
            "past the end stays clamped"
        );
    }

    fn pair_of_sets(seed: u64) -> (ParamSet, ParamSet) {
        let mut rng = derive_rng(seed, "soft", 0);
        let mut online = ParamSet::new();
        let mut target = ParamSet::new();
        for (name, shape) in [("a", vec![3usize, 2]), ("b", vec![4usize])] {
            let o: Vec<f64> = (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let t: Vec<f64> = (0..o.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            online.param(name, arr_from(&shape, o));
            target.param(name, arr_from(&shape, t));
        }
        (online, target)
    }

    #[test]
    fn full_blend_copies_online_exactly() {
        let (online, target) = pair_of_sets(4);
        soft_update(&online, &target, 1.0);
        for (name, o) in online.iter() {
            assert_eq!(o.value(), target.get(name).unwrap().value());
        }
    }

    #[test]
    fn small_blend_moves_one_percent_of_the_way() {
        let mut online = ParamSet::new();
        let mut target = ParamSet::new();
        online.param("w", arr_from(&[1], vec![1.0]));
        target.param("w", arr_from(&[1], vec![0.0]));
        soft_update(&online, &target, 0.01);
        let got = target.get("w").unwrap().value()[[0]];
        assert!((got - 0.01).abs() < 1e-15);
    }

    #[test]
    fn repeated_blends_converge_geometrically() {
        let (online, target) = pair_of_sets(5);
        let distance = |a: &ParamSet, b: &ParamSet| -> f64 {
            a.iter()
                .map(|(name, o)| {
                    let t = b.get(name).unwrap().value();
                    (&o.value() - &t).mapv(|d| d * d).sum()
                })
                .sum::<f64>()
                .sqrt()
        };
        let tau = 0.25;
        let mut prev = distance(&online, &target);
        for _ in 0..30 {
            soft_update(&online, &target, tau);
            let next = distance(&online, &target);
            assert!(
                next <= (1.0 - tau) * prev + 1e-12,
                "distance must shrink by the blend factor: {next} vs {prev}"
            );
            prev = next;
        }
        assert!(prev < 1e-3, "thirty quarter-blends should all but close the gap");
    }

    #[test]
    #[should_panic(expected = "tau must lie in (0, 1]")]
    fn zero_tau_is_rejected() {
        let (online, target) = pair_of_sets(6);
        soft_update(&online, &target, 0.0);
    }

    #[test]
    fn terminal_targets_collapse_to_the_reward() {
        let batch = CriticBatch {
            q: Var::constant(zeros(&[1, 1])),
            rewards: vec![1.0],
            next_q: vec![123.0],
            done: vec![true],
        };
        let loss = critic_loss(&batch, 0.99);
        assert!((loss.item() - 1.0).abs() < 1e-12, "y = r at terminals, so (0 - 1)^2 = 1");
    }

    #[test]
    fn a_perfect_critic_pays_nothing() {
        let gamma = 0.9;
        let rewards = vec![0.5, -1.0, 0.0];
        let next_q = vec![2.0, 1.0, -3.0];
        let done = vec![false, false, true];
        let mut q = zeros(&[3, 1]);
        for i in 0..3 {
            q[[i, 0]] = if done[i] { rewards[i] } else { rewards[i] + gamma * next_q[i] };
        }
        let batch = CriticBatch { q: Var::constant(q), rewards, next_q, done };
        assert_eq!(critic_loss(&batch, gamma).item(), 0.0);
    }

    #[test]
    fn zero_discount_regresses_on_raw_rewards() {
        let batch = CriticBatch {
            q: Var::constant(zeros(&[2, 1])),
            rewards: vec![2.0, -2.0],
            next_q: vec![10.0, 10.0],
            done: vec![false, false],
        };
        let loss = critic_loss(&batch, 0.0);
        assert!((loss.item() - 4.0).abs() < 1e-12, "gamma 0 ignores the bootstrap");
    }

    #[test]
    #[should_panic(expected = "critic batch must be nonempty")]
    fn an_empty_critic_batch_is_rejected() {
        let batch = CriticBatch {
            q: Var::constant(zeros(&[0, 1])),
            rewards: vec![],
            next_q: vec![],
            done: vec![],
        };
        critic_loss(&batch, 0.9);
    }

    #[test]
    fn a_critic_blind_to_actions_gives_the_actor_no_gradient() {
        let mut params = ParamSet::new();
        let theta = params.param("theta", arr_from(&[1], vec![0.7]));
        // Q depends on the state constant only; the actor output is
        // multiplied by zero, mimicking a critic with zeroed action
        // weights.
        let q = theta.scale(0.0).add(&Var::constant(arr_from(&[1], vec![5.0])));
        let loss = actor_loss(&q);
        params.zero_grads();
        loss.backward();
        assert!(theta.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn the_one_dimensional_actor_walks_to_the_optimum() {
        // Critic oracle Q(s, a) = -(a - 3)^2 with actor mu = theta.
        let mut params = ParamSet::new();
        let theta = params.param("theta", arr_from(&[1], vec![-1.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            let diff = theta.sub(&Var::constant(arr_from(&[1], vec![3.0])));
            let q = diff.mul(&diff).neg();
            let loss = actor_loss(&q);
            params.zero_grads();
            loss.backward();
            opt.step(&mut params);
        }
        let got = theta.value()[[0]];
        assert!((got - 3.0).abs() <= 0.1, "theta settled at {got}");
    }

    #[test]
    fn the_critic_fits_a_fixed_synthetic_dataset() {
        let mut rng = derive_rng(7, "critic-fit", 0);
        let samples = 32;
        let in_dim = 4;
        let mut xs = zeros(&[samples, in_dim]);
        let mut ys = zeros(&[samples, 1]);
        for i in 0..samples {
            let mut dot = 0.0;
            for j in 0..in_dim {
                let v: f64 = rng.random_range(-1.0..1.0);
                xs[[i, j]] = v;
                dot += v * (j as f64 + 0.5);
            }
            ys[[i, 0]] = (dot).sin() + 0.3 * dot;
        }
        let mut params = ParamSet::new();
        let net = Mlp::new(
            &mut params,
            "critic",
            in_dim,
            &[16, 16, 1],
            OutputActivation::None,
            &mut rng,
        );
        let x = Var::constant(xs);
        let y = Var::constant(ys);
        let mut opt = Adam::new(1e-2);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..2000 {
            let pred = net.forward(&x);
            let diff = pred.sub(&y);
            let loss = diff.mul(&diff).mean();
            last = loss.item();
            first.get_or_insert(last);
            params.zero_grads();
            loss.backward();
            opt.step(&mut params);
        }
        let first = first.unwrap();
        assert!(
            last < 0.01 * first,
            "regression stalled: started {first}, ended {last}"
        );
    }
}
