use rand::seq::SliceRandom;
use rand::Rng;

use super::dqn::check_inputs;
use super::{EpisodeRow, Hyperparams, TrainingRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::numerics::{Tape, Tensor};
use crate::qnet::{ArchitectureConfig, HeadKind, QNetwork};

/// Supervised BCE training of the sigmoid-head CNN on raw grayscale images.
///
/// Each epoch shuffles the training set and takes one Adam step per
/// minibatch. The recorded loss is the sample-weighted mean of the
/// pre-update minibatch losses.
pub fn train_sdl<R: Rng + ?Sized>(
    train: &Dataset,
    test: &Dataset,
    h: &Hyperparams,
    arch: &ArchitectureConfig,
    rng: &mut R,
) -> Result<(QNetwork<f32>, TrainingRecord)> {
    h.validate()?;
    check_inputs(train, test, arch, 1)?;
    if arch.head != HeadKind::SigmoidHead {
        return Err(Error::HeadMismatch {
            expected: HeadKind::SigmoidHead.name(),
            actual: arch.head.name(),
        });
    }
    let mut net = QNetwork::build(arch, rng)?;
    let inputs: Vec<Tensor<f32>> = train.items().iter().map(|i| i.to_tensor()).collect();
    let labels: Vec<f32> = train.items().iter().map(|i| i.label().index() as f32).collect();
    let test_inputs: Vec<Tensor<f32>> = test.items().iter().map(|i| i.to_tensor()).collect();
    let adam = h.adam();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut record = TrainingRecord::default();

    for epoch in 1..=h.sdl_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(h.batch_size) {
            let (loss, grads, vars) = {
                let mut tape = Tape::new();
                let vars = net.register(&mut tape);
                let mut terms = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let x = tape.constant_ref(&inputs[i]);
                    let p = net.record(&mut tape, &vars, x)?;
                    terms.push(tape.bce(p, labels[i])?);
                }
                let loss = tape.mean(&terms)?;
                let value = f64::from(tape.value(loss)[0]);
                (value, tape.backward(loss)?, vars)
            };
            net.zero_grad();
            net.accumulate_gradients(&grads, &vars)?;
            net.adam_update(&adam)?;
            loss_sum += loss * chunk.len() as f64;
            record.total_steps += chunk.len() as u64;
        }
        record.rows.push(EpisodeRow {
            episode: epoch,
            epsilon: None,
            mean_reward: None,
            train_acc: eval::sdl_accuracy(&net, train, &inputs)?,
            test_acc: eval::sdl_accuracy(&net, test, &test_inputs)?,
            loss: Some(loss_sum / train.len() as f64),
        });
    }
    Ok((net, record))
}
