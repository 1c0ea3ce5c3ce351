//! Testing protocol: one greedy step from the red initial state (RL), or a
//! 0.5 threshold on the sigmoid output (supervised).

use serde::{Deserialize, Serialize};

use crate::agent::greedy_action;
use crate::data::Dataset;
use crate::env::{Class, ClassificationEnv, ClassifiedImage};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::qnet::{HeadKind, QNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rl,
    Sdl,
}

impl Method {
    pub fn head(self) -> HeadKind {
        match self {
            Method::Rl => HeadKind::QHead,
            Method::Sdl => HeadKind::SigmoidHead,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Rl => "rl",
            Method::Sdl => "sdl",
        }
    }

    pub fn for_head(head: HeadKind) -> Self {
        match head {
            HeadKind::QHead => Method::Rl,
            HeadKind::SigmoidHead => Method::Sdl,
        }
    }
}

/// One evaluated image. For RL the scores are `(q0, q1)`; for the
/// supervised network they are `(1 - p, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub image_id: String,
    pub true_label: Class,
    pub predicted: Class,
    pub score0: f64,
    pub score1: f64,
}

impl PredictionRow {
    pub fn correct(&self) -> bool {
        self.true_label == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub method: Method,
    pub rows: Vec<PredictionRow>,
    pub accuracy: f64,
}

impl EvaluationReport {
    pub fn from_rows(method: Method, rows: Vec<PredictionRow>) -> Self {
        let accuracy = accuracy_of(rows.iter().map(PredictionRow::correct));
        Self { method, rows, accuracy }
    }
}

fn accuracy_of(correct: impl Iterator<Item = bool>) -> f64 {
    let (mut hits, mut n) = (0usize, 0usize);
    for c in correct {
        hits += usize::from(c);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Threshold convention: `p >= 0.5` is a tumor.
pub fn threshold(p: f64) -> Class {
    if p >= 0.5 {
        Class::Tumor
    } else {
        Class::Normal
    }
}

fn class_of_action(a: usize) -> Class {
    Class::from_index(a).expect("greedy action is 0 or 1")
}

fn rl_scores(net: &QNetwork<f32>, state: &Tensor<f32>) -> Result<(f64, f64)> {
    let (q0, q1) = net.q_forward(state)?;
    Ok((f64::from(q0), f64::from(q1)))
}

/// Greedy class from the Q values of the image's initial (red) state.
pub fn rl_predict(net: &QNetwork<f32>, image: &ClassifiedImage, alpha: f32) -> Result<Class> {
    net.expect_head(HeadKind::QHead)?;
    let state = ClassificationEnv::default().reset(image).render(alpha)?;
    Ok(class_of_action(greedy_action(rl_scores(net, &state)?)))
}

pub fn sdl_predict(net: &QNetwork<f32>, image: &ClassifiedImage) -> Result<Class> {
    net.expect_head(HeadKind::SigmoidHead)?;
    Ok(threshold(f64::from(net.sdl_forward(&image.to_tensor())?)))
}

pub(crate) fn rl_accuracy(net: &QNetwork<f32>, dataset: &Dataset, red_states: &[Tensor<f32>]) -> Result<f64> {
    let mut correct = Vec::with_capacity(dataset.len());
    for (img, state) in dataset.items().iter().zip(red_states) {
        let predicted = class_of_action(greedy_action(rl_scores(net, state)?));
        correct.push(predicted == img.label());
    }
    Ok(accuracy_of(correct.into_iter()))
}

pub(crate) fn sdl_accuracy(net: &QNetwork<f32>, dataset: &Dataset, inputs: &[Tensor<f32>]) -> Result<f64> {
    let mut correct = Vec::with_capacity(dataset.len());
    for (img, x) in dataset.items().iter().zip(inputs) {
        correct.push(threshold(f64::from(net.sdl_forward(x)?)) == img.label());
    }
    Ok(accuracy_of(correct.into_iter()))
}

/// Per-image predictions over the whole dataset plus aggregate accuracy.
pub fn evaluate(net: &QNetwork<f32>, dataset: &Dataset, method: Method, alpha: f32) -> Result<EvaluationReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("cannot evaluate an empty dataset".into()));
    }
    net.expect_head(method.head())?;
    let env = ClassificationEnv::default();
    let rows = dataset
        .items()
        .iter()
        .map(|img| {
            let (score0, score1, predicted) = match method {
                Method::Rl => {
                    let q = rl_scores(net, &env.reset(img).render(alpha)?)?;
                    (q.0, q.1, class_of_action(greedy_action(q)))
                }
                Method::Sdl => {
                    let p = f64::from(net.sdl_forward(&img.to_tensor())?);
                    (1.0 - p, p, threshold(p))
                }
            };
            Ok(PredictionRow {
                image_id: img.id().to_string(),
                true_label: img.label(),
                predicted,
                score0,
                score1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_rows(method, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::ArchitectureConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(correct: bool) -> PredictionRow {
        PredictionRow {
            image_id: "x".into(),
            true_label: Class::Tumor,
            predicted: if correct { Class::Tumor } else { Class::Normal },
            score0: 0.0,
            score1: 0.0,
        }
    }

    #[test]
    fn accuracy_counts() {
        let all = EvaluationReport::from_rows(Method::Rl, (0..30).map(|_| row(true)).collect());
        assert_eq!(all.accuracy, 1.0);
        let some = EvaluationReport::from_rows(Method::Sdl, (0..30).map(|i| row(i < 17)).collect());
        assert!((some.accuracy - 0.5667).abs() < 1e-4);
        let none = EvaluationReport::from_rows(Method::Sdl, (0..30).map(|_| row(false)).collect());
        assert_eq!(none.accuracy, 0.0);
    }

    #[test]
    fn threshold_convention() {
        assert_eq!(threshold(0.5), Class::Tumor);
        assert_eq!(threshold(0.49), Class::Normal);
        assert_eq!(threshold(0.7), Class::Tumor);
        assert_eq!(greedy_action((0.2, 0.7)), 1);
    }

    #[test]
    fn predictions_ignore_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let arch = ArchitectureConfig::dqn().with_extents(16, 16);
        let net: QNetwork<f32> = QNetwork::build(&arch, &mut rng).unwrap();
        for _ in 0..10 {
            let px: Vec<f32> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
            let a = ClassifiedImage::new("a", 16, 16, px, Class::Normal).unwrap();
            let b = a.clone().with_label(Class::Tumor);
            assert_eq!(rl_predict(&net, &a, 0.1).unwrap(), rl_predict(&net, &b, 0.1).unwrap());
        }
    }

    #[test]
    fn untrained_sdl_predicts_tumor_on_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let net: QNetwork<f32> = QNetwork::build(&ArchitectureConfig::sdl(), &mut rng).unwrap();
        let img = ClassifiedImage::new("z", 64, 64, vec![0.0; 4096], Class::Normal).unwrap();
        assert_eq!(sdl_predict(&net, &img).unwrap(), Class::Tumor);
        assert!(matches!(rl_predict(&net, &img, 0.1), Err(Error::HeadMismatch { .. })));
    }
}
