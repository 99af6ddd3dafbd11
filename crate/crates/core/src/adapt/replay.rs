//! Episode-segmented replay of `(s, a)` pairs for world-model windows.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Episode {
    id: u64,
    pairs: Vec<f32>,
}

impl Episode {
    fn len(&self, pair_dim: usize) -> usize {
        self.pairs.len() / pair_dim
    }
}

/// A window cut from a single episode.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub episode: u64,
    pub start: usize,
    pub pairs: Vec<f32>,
}

/// Completed and in-progress episodes from every environment, bounded by
/// a total step count. The oldest completed episodes are evicted first.
#[derive(Debug, Clone)]
pub struct WindowReplay {
    pair_dim: usize,
    window: usize,
    capacity: usize,
    done: VecDeque<Episode>,
    live: Vec<Episode>,
    next_id: u64,
    stored: usize,
}

impl WindowReplay {
    pub fn new(num_envs: usize, pair_dim: usize, window: usize, capacity: usize) -> Self {
        let mut r = WindowReplay {
            pair_dim,
            window,
            capacity,
            done: VecDeque::new(),
            live: Vec::with_capacity(num_envs),
            next_id: 0,
            stored: 0,
        };
        for _ in 0..num_envs {
            let id = r.fresh_id();
            r.live.push(Episode { id, pairs: Vec::new() });
        }
        r
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id - 1
    }

    pub fn window_len(&self) -> usize {
        self.window
    }

    pub fn stored_steps(&self) -> usize {
        self.stored
    }

    /// Appends one transition of environment `env`; `done` closes its episode.
    pub fn push(&mut self, env: usize, state: &[f32], action: &[f32], done: bool) -> Result<()> {
        if state.len() + action.len() != self.pair_dim {
            return Err(Error::shape("replay pair has the wrong size"));
        }
        let ep = self
            .live
            .get_mut(env)
            .ok_or_else(|| Error::shape(format!("replay has no environment {env}")))?;
        ep.pairs.extend_from_slice(state);
        ep.pairs.extend_from_slice(action);
        self.stored += 1;
        if done {
            let id = self.fresh_id();
            let finished = std::mem::replace(&mut self.live[env], Episode { id, pairs: Vec::new() });
            if finished.len(self.pair_dim) >= self.window {
                self.done.push_back(finished);
            } else {
                self.stored -= finished.len(self.pair_dim);
            }
        }
        while self.stored > self.capacity {
            match self.done.pop_front() {
                Some(old) => self.stored -= old.len(self.pair_dim),
                None => break,
            }
        }
        Ok(())
    }

    fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.done.iter().chain(self.live.iter())
    }

    /// Number of distinct window start positions.
    pub fn num_windows(&self) -> usize {
        self.episodes()
            .map(|e| (e.len(self.pair_dim) + 1).saturating_sub(self.window))
            .sum()
    }

    /// A window drawn uniformly over all valid start positions.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<WindowSample> {
        let total = self.num_windows();
        if total == 0 {
            return None;
        }
        let mut k = rng.gen_range(0..total);
        for e in self.episodes() {
            let n = (e.len(self.pair_dim) + 1).saturating_sub(self.window);
            if k < n {
                let d = self.pair_dim;
                return Some(WindowSample {
                    episode: e.id,
                    start: k,
                    pairs: e.pairs[k * d..(k + self.window) * d].to_vec(),
                });
            }
            k -= n;
        }
        None
    }

    /// `count` windows laid end to end.
    pub fn sample_batch<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Option<Vec<f32>> {
        let mut out = Vec::with_capacity(count * self.window * self.pair_dim);
        for _ in 0..count {
            out.extend(self.sample(rng)?.pairs);
        }
        Some(out)
    }

    /// Checks that a window really is a contiguous run of one episode.
    pub fn verify(&self, w: &WindowSample) -> bool {
        let d = self.pair_dim;
        w.pairs.len() == self.window * d
            && self.episodes().any(|e| {
                e.id == w.episode
                    && e.len(d) >= w.start + self.window
                    && e.pairs[w.start * d..(w.start + self.window) * d] == w.pairs[..]
            })
    }
}
