use std::collections::VecDeque;

use crate::error::{Error, Result};

pub const HISTORY_LEN: usize = 79;
pub const ROLLOUT_LEN: usize = 20;
pub const WINDOW_LEN: usize = HISTORY_LEN + 1 + ROLLOUT_LEN;

/// The most recent `(s, a)` pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    pairs: VecDeque<Vec<f32>>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        HistoryBuffer {
            capacity,
            state_dim,
            action_dim,
            pairs: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pair_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn push(&mut self, state: &[f32], action: &[f32]) -> Result<()> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::shape(format!(
                "history pair is ({}, {}), expected ({}, {})",
                state.len(),
                action.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        let mut pair = Vec::with_capacity(self.pair_dim());
        pair.extend_from_slice(state);
        pair.extend_from_slice(action);
        self.pairs.push_back(pair);
        Ok(())
    }

    /// Exactly `capacity` pairs, zero-padded on the oldest side.
    pub fn padded_into(&self, out: &mut Vec<f32>) {
        let pad = (self.capacity - self.pairs.len()) * self.pair_dim();
        out.extend(std::iter::repeat_n(0.0, pad));
        for p in &self.pairs {
            out.extend_from_slice(p);
        }
    }

    pub fn padded(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.capacity * self.pair_dim());
        self.padded_into(&mut v);
        v
    }
}
