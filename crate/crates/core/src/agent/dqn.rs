use rand::Rng;

use super::{epsilon_schedule, select_action, td0_target, EpisodeRow, Hyperparams, TrainingRecord};
use crate::data::Dataset;
use crate::env::{render, ClassificationEnv, Color, OverlayState};
use crate::error::{Error, Result};
use crate::eval;
use crate::numerics::{Tape, Tensor};
use crate::qnet::{ArchitectureConfig, HeadKind, QNetwork};
use crate::replay::{ReplayBuffer, Transition};

/// Resolves a stored state representation to the network input.
pub trait StateView<S> {
    fn view<'s>(&'s self, state: &'s S) -> &'s Tensor<f32>;
}

/// States stored as fully rendered tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Rendered;

impl StateView<Tensor<f32>> for Rendered {
    fn view<'s>(&'s self, state: &'s Tensor<f32>) -> &'s Tensor<f32> {
        state
    }
}

/// Compact state: which dataset image, under which overlay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub image: usize,
    pub color: Color,
}

/// Red and green renders of every image in a dataset.
#[derive(Clone, Debug)]
pub struct RenderCache {
    red: Vec<Tensor<f32>>,
    green: Vec<Tensor<f32>>,
}

impl RenderCache {
    pub fn new(dataset: &Dataset, alpha: f32) -> Result<Self> {
        let mut red = Vec::with_capacity(dataset.len());
        let mut green = Vec::with_capacity(dataset.len());
        for img in dataset.items() {
            red.push(render(img, Color::Red, alpha)?);
            green.push(render(img, Color::Green, alpha)?);
        }
        Ok(Self { red, green })
    }

    pub fn red(&self) -> &[Tensor<f32>] {
        &self.red
    }
}

impl StateView<StateKey> for RenderCache {
    fn view<'s>(&'s self, state: &'s StateKey) -> &'s Tensor<f32> {
        match state.color {
            Color::Red => &self.red[state.image],
            Color::Green => &self.green[state.image],
        }
    }
}

fn as_pair(q: (f32, f32)) -> (f64, f64) {
    (f64::from(q.0), f64::from(q.1))
}

/// One DQN update on `batch`.
///
/// Each prediction is regressed onto a target equal to itself except at the
/// taken action, which gets the TD(0) target computed from the current
/// network. Returns the pre-update MSE.
pub fn dqn_train_step<S, V: StateView<S>>(
    net: &mut QNetwork<f32>,
    batch: &[&Transition<S>],
    states: &V,
    h: &Hyperparams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }
    net.expect_head(HeadKind::QHead)?;
    // Transitions sharing a state tensor share one recorded forward pass.
    let mut distinct: Vec<&Tensor<f32>> = Vec::new();
    let slot_of = |distinct: &mut Vec<&'_ Tensor<f32>>, t: &Tensor<f32>| -> Option<usize> {
        distinct.iter().position(|d| std::ptr::eq(*d, t))
    };
    let mut state_slots = Vec::with_capacity(batch.len());
    for t in batch {
        let x = states.view(&t.state);
        let slot = match slot_of(&mut distinct, x) {
            Some(i) => i,
            None => {
                distinct.push(x);
                distinct.len() - 1
            }
        };
        state_slots.push(slot);
    }

    let (loss, grads, vars) = {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let mut outputs = Vec::with_capacity(distinct.len());
        for x in &distinct {
            let xv = tape.constant_ref(x);
            outputs.push(net.record(&mut tape, &vars, xv)?);
        }
        let mut terms = Vec::with_capacity(batch.len());
        for (t, &slot) in batch.iter().zip(&state_slots) {
            let target = if t.terminal {
                f64::from(t.reward.value())
            } else {
                let next = states.view(&t.next_state);
                let next_q = match distinct.iter().position(|d| std::ptr::eq(*d, next)) {
                    Some(i) => {
                        let q = tape.value(outputs[i]);
                        (q[0], q[1])
                    }
                    None => net.q_forward(next)?,
                };
                td0_target(t.reward, as_pair(next_q), h.gamma)
            };
            let q = outputs[slot];
            let mut y = tape.value(q).to_vec();
            y[t.action] = target as f32;
            let y = tape.constant(Tensor::new(vec![y.len()], y)?);
            terms.push(tape.mse(q, y)?);
        }
        let loss = tape.mean(&terms)?;
        let value = f64::from(tape.value(loss)[0]);
        (value, tape.backward(loss)?, vars)
    };
    net.zero_grad();
    net.accumulate_gradients(&grads, &vars)?;
    net.adam_update(&h.adam())?;
    Ok(loss)
}

pub(super) fn check_inputs(train: &Dataset, test: &Dataset, arch: &ArchitectureConfig, channels: usize) -> Result<()> {
    train.require_both_classes()?;
    test.require_both_classes()?;
    for d in [train, test] {
        let e = d.extents().expect("nonempty");
        if (e.height, e.width) != (arch.height, arch.width) {
            return Err(Error::InvalidArchitecture(format!(
                "network input is {}×{}, dataset {} is {}×{}",
                arch.height,
                arch.width,
                d.name(),
                e.height,
                e.width
            )));
        }
    }
    if arch.channels != channels {
        return Err(Error::InvalidArchitecture(format!(
            "expected {channels} input channels, config has {}",
            arch.channels
        )));
    }
    Ok(())
}

fn sample_image<R: Rng + ?Sized>(by_class: &[Vec<usize>; 2], rng: &mut R) -> usize {
    let class = &by_class[rng.random_range(0..2)];
    class[rng.random_range(0..class.len())]
}

/// ε-greedy TD(0) training of a fresh DQN.
///
/// Every episode draws an image (class first, uniformly), starts from the red
/// overlay and takes `steps_per_episode` actions. Every step pushes one
/// transition and, once the memory holds a full batch, runs one update.
/// Greedy train and test accuracy are measured after each episode; the
/// recorded ε is the one in effect at the episode's first step.
pub fn train_rl<R: Rng + ?Sized>(
    train: &Dataset,
    test: &Dataset,
    h: &Hyperparams,
    arch: &ArchitectureConfig,
    rng: &mut R,
) -> Result<(QNetwork<f32>, TrainingRecord)> {
    h.validate()?;
    check_inputs(train, test, arch, 3)?;
    if arch.head != HeadKind::QHead {
        return Err(Error::HeadMismatch {
            expected: HeadKind::QHead.name(),
            actual: arch.head.name(),
        });
    }
    let mut net = QNetwork::build(arch, rng)?;
    let env = ClassificationEnv::new(h.steps_per_episode)?;
    let cache = RenderCache::new(train, h.alpha_overlay)?;
    let test_red = RenderCache::new(test, h.alpha_overlay)?;
    let by_class = train.indices_by_class();
    let mut memory = ReplayBuffer::new(h.memory_capacity)?;
    let mut record = TrainingRecord::default();
    let mut global_step = 0u64;

    for episode in 1..=h.episodes {
        let mut image = sample_image(&by_class, rng);
        let mut state = env.reset(&train.items()[image]);
        let mut reward_sum = 0i64;
        let mut losses = Vec::new();
        let episode_epsilon = epsilon_schedule(global_step, h);
        while !env.is_done(&state) {
            let epsilon = epsilon_schedule(global_step, h);
            let key = StateKey {
                image,
                color: state.color,
            };
            let q = net.q_forward(cache.view(&key))?;
            let action = select_action(as_pair(q), epsilon, rng);
            let (next, reward) = env.step(&state, action)?;
            reward_sum += i64::from(reward.value());
            let next_key = StateKey {
                image,
                color: next.color,
            };
            let terminal = h.terminal_last_step && env.is_done(&next);
            memory.push(Transition::new(key, action, reward, next_key)?.terminal(terminal));
            if memory.len() >= h.batch_size {
                let batch = memory.sample(h.batch_size, rng)?;
                losses.push(dqn_train_step(&mut net, &batch, &cache, h)?);
            }
            global_step += 1;
            state = next;
            if h.per_step_image && !env.is_done(&state) {
                image = sample_image(&by_class, rng);
                state = OverlayState {
                    image: &train.items()[image],
                    ..state
                };
            }
        }
        let train_acc = eval::rl_accuracy(&net, train, cache.red())?;
        let test_acc = eval::rl_accuracy(&net, test, test_red.red())?;
        record.rows.push(EpisodeRow {
            episode,
            epsilon: Some(episode_epsilon),
            mean_reward: Some(reward_sum as f64 / h.steps_per_episode as f64),
            train_acc,
            test_acc,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        });
    }
    record.total_steps = global_step;
    record.transitions_pushed = memory.pushed();
    Ok((net, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Reward;
    use crate::qnet::ConvSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            height: 8,
            width: 8,
            channels: 3,
            conv: vec![ConvSpec::new(4, 2), ConvSpec::new(4, 2)],
            hidden: [8, 8],
            head: HeadKind::QHead,
        }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::new(vec![8, 8, 3], (0..192).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_transition_loss_matches_hand_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net: QNetwork<f32> = QNetwork::build(&tiny_arch(), &mut rng).unwrap();
        let (s, s2) = (random_state(&mut rng), random_state(&mut rng));
        let h = Hyperparams::default();
        let q = as_pair(net.q_forward(&s).unwrap());
        let q2 = as_pair(net.q_forward(&s2).unwrap());
        let target = -1.0 + 0.99 * q2.0.max(q2.1);
        let expected = (q.1 - target).powi(2) / 2.0;
        let t = Transition::new(s, 1, Reward::Wrong, s2).unwrap();
        let loss = dqn_train_step(&mut net, &[&t], &Rendered, &h).unwrap();
        assert!(
            (loss - expected).abs() <= 1e-6 * expected.max(1.0),
            "{loss} vs {expected}"
        );
    }

    #[test]
    fn terminal_transition_targets_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut net: QNetwork<f32> = QNetwork::build(&tiny_arch(), &mut rng).unwrap();
        let (s, s2) = (random_state(&mut rng), random_state(&mut rng));
        let q = as_pair(net.q_forward(&s).unwrap());
        let t = Transition::new(s, 0, Reward::Correct, s2).unwrap().terminal(true);
        let loss = dqn_train_step(&mut net, &[&t], &Rendered, &Hyperparams::default()).unwrap();
        let expected = (q.0 - 1.0).powi(2) / 2.0;
        assert!((loss - expected).abs() <= 1e-6 * expected.max(1.0));
    }

    #[test]
    fn zero_error_batch_leaves_parameters() {
        // gamma = 0 with a +1 reward: first make Q(s, 0) exactly 1 via the
        // head bias so the target equals the prediction.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut net: QNetwork<f32> = QNetwork::build(&tiny_arch(), &mut rng).unwrap();
        let s = Tensor::zeros(vec![8, 8, 3]).unwrap();
        let last = net.layers_mut().last_mut().unwrap();
        last.bias.values_mut()[0] = 1.0;
        let before: Vec<_> = net.layers().iter().map(|l| l.weights.clone()).collect();
        let h = Hyperparams {
            gamma: 0.0,
            ..Default::default()
        };
        let t = Transition::new(s.clone(), 0, Reward::Correct, s).unwrap();
        let loss = dqn_train_step(&mut net, &[&t], &Rendered, &h).unwrap();
        assert_eq!(loss, 0.0);
        for (l, b) in net.layers().iter().zip(before) {
            assert_eq!(l.weights.values(), b.values());
        }
    }

    #[test]
    fn repeated_updates_close_the_td_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut net: QNetwork<f32> = QNetwork::build(&tiny_arch(), &mut rng).unwrap();
        let (s, s2) = (random_state(&mut rng), random_state(&mut rng));
        let h = Hyperparams {
            lr: 1e-3,
            ..Default::default()
        };
        let t = Transition::new(s.clone(), 1, Reward::Correct, s2.clone()).unwrap();
        let gap = |net: &QNetwork<f32>| {
            let q = as_pair(net.q_forward(&s).unwrap());
            let q2 = as_pair(net.q_forward(&s2).unwrap());
            (q.1 - td0_target(Reward::Correct, q2, h.gamma)).abs()
        };
        let mut prev = gap(&net);
        let first = prev;
        let mut violations = 0;
        for _ in 0..50 {
            dqn_train_step(&mut net, &[&t], &Rendered, &h).unwrap();
            let g = gap(&net);
            if g >= prev {
                violations += 1;
            }
            prev = g;
        }
        assert!(violations <= 5, "{violations} non-monotone steps");
        assert!(prev < first);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut net: QNetwork<f32> = QNetwork::build(&tiny_arch(), &mut rng).unwrap();
        let batch: Vec<&Transition<Tensor<f32>>> = Vec::new();
        assert!(dqn_train_step(&mut net, &batch, &Rendered, &Hyperparams::default()).is_err());
    }
}
