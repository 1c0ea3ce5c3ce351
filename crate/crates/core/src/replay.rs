//! Fixed-capacity FIFO replay memory with uniform batch sampling.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::env::Reward;
use crate::error::{Error, Result};

/// One `(state, action, reward, next_state)` row of the replay memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: Reward,
    pub next_state: S,
    /// Set when `next_state` ends the episode and bootstrapping is disabled
    /// for it.
    pub terminal: bool,
}

impl<S> Transition<S> {
    pub fn new(state: S, action: usize, reward: Reward, next_state: S) -> Result<Self> {
        if action > 1 {
            return Err(Error::InvalidAction(action));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            terminal: false,
        })
    }

    pub fn terminal(mut self, terminal: bool) -> Self {
        self.terminal = terminal;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
    pushed: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of pushes over the buffer's lifetime.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends `item`, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        self.pushed += 1;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `n` distinct entries chosen uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&T>> {
        if n == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if self.items.len() < n {
            return Err(Error::InsufficientMemory {
                have: self.items.len(),
                need: n,
            });
        }
        Ok(index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
