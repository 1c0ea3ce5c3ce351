//! Image classification posed as a Markov decision process and solved with
//! ε-greedy TD(0) Q-learning on a deep Q-network, plus a supervised CNN
//! baseline trained on the same images.
//!
//! A state is a grayscale image under a red or green overlay. The agent
//! predicts a class at every step; a correct prediction yields `+1` and a
//! green overlay, a wrong one `-1` and a red overlay. At test time the class
//! is the greedy action in the red initial state.

pub mod agent;
pub mod cli;
pub mod data;
pub mod env;
mod error;
pub mod eval;
pub mod numerics;
pub mod qnet;
pub mod replay;

pub use error::{Error, Result};
