//! The classification MDP.
//!
//! A state is a grayscale image tinted red or green. Each action is a class
//! prediction: a correct prediction earns `+1` and turns the overlay green,
//! a wrong one earns `-1` and turns it red. Transitions ignore the prior
//! color entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Number of actions (one per class).
pub const N_ACTIONS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Normal = 0,
    Tumor = 1,
}

impl Class {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Class::Normal),
            1 => Some(Class::Tumor),
            _ => None,
        }
    }

    /// Directory name used for on-disk datasets.
    pub fn dir_name(self) -> &'static str {
        match self {
            Class::Normal => "normal",
            Class::Tumor => "tumor",
        }
    }
}

/// A grayscale image in `[0, 1]` with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifiedImage {
    id: String,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    label: Class,
}

impl ClassifiedImage {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<f32>, label: Class) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}×{width} image with {} pixels",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            id: id.into(),
            height,
            width,
            pixels,
            label,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn label(&self) -> Class {
        self.label
    }

    pub fn with_label(mut self, label: Class) -> Self {
        self.label = label;
        self
    }

    /// `H×W×1` tensor of the raw grayscale values.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.height, self.width, 1], self.pixels.clone()).expect("validated extents")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
}

impl Color {
    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reward {
    Correct,
    Wrong,
}

impl Reward {
    pub fn value(self) -> i32 {
        match self {
            Reward::Correct => 1,
            Reward::Wrong => -1,
        }
    }

    pub fn from_value(v: i32) -> Option<Self> {
        match v {
            1 => Some(Reward::Correct),
            -1 => Some(Reward::Wrong),
            _ => None,
        }
    }
}

/// An image seen through a colored overlay at a given step of an episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlayState<'a> {
    pub image: &'a ClassifiedImage,
    pub color: Color,
    /// 1-based index of the step about to be taken.
    pub step_index: usize,
}

impl OverlayState<'_> {
    pub fn render(&self, alpha: f32) -> Result<Tensor<f32>> {
        render(self.image, self.color, alpha)
    }
}

/// Episode rules: everything except the image is fixed by `n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassificationEnv {
    n_steps: usize,
}

impl Default for ClassificationEnv {
    fn default() -> Self {
        Self { n_steps: 5 }
    }
}

impl ClassificationEnv {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("an episode needs at least one step".into()));
        }
        Ok(Self { n_steps })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Initial state: red overlay, step 1.
    pub fn reset<'a>(&self, image: &'a ClassifiedImage) -> OverlayState<'a> {
        OverlayState {
            image,
            color: Color::Red,
            step_index: 1,
        }
    }

    pub fn step<'a>(&self, state: &OverlayState<'a>, action: usize) -> Result<(OverlayState<'a>, Reward)> {
        let predicted = Class::from_index(action).ok_or(Error::InvalidAction(action))?;
        if state.step_index > self.n_steps {
            return Err(Error::EpisodeExhausted { n_steps: self.n_steps });
        }
        let (color, reward) = transition(state.image.label(), predicted);
        let next = OverlayState {
            image: state.image,
            color,
            step_index: state.step_index + 1,
        };
        Ok((next, reward))
    }

    /// True once all `n_steps` actions of the episode have been taken.
    pub fn is_done(&self, state: &OverlayState<'_>) -> bool {
        state.step_index > self.n_steps
    }
}

/// Next overlay color and reward for predicting `predicted` on an image of
/// class `label`.
pub fn transition(label: Class, predicted: Class) -> (Color, Reward) {
    if predicted == label {
        (Color::Green, Reward::Correct)
    } else {
        (Color::Red, Reward::Wrong)
    }
}

/// Blends the grayscale image with `color`: `(1 - alpha)·gray + alpha·color`
/// per channel, producing an `H×W×3` tensor.
pub fn render(image: &ClassifiedImage, color: Color, alpha: f32) -> Result<Tensor<f32>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("overlay alpha {alpha} outside (0, 1)")));
    }
    let tint = color.rgb().map(|c| alpha * c);
    let keep = 1.0 - alpha;
    let mut out = Vec::with_capacity(image.pixels.len() * 3);
    for &g in &image.pixels {
        for t in tint {
            out.push((keep * g + t).clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![image.height, image.width, 3], out)
}
