//! Append-only replay buffer of interaction transitions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::Transition;

/// Unbounded, insertion-ordered store of transitions.
///
/// Writers need `&mut`, so any `&ReplayBuffer` held by a reader is a
/// consistent snapshot.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    orientations: usize,
    transitions: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(orientations: usize) -> Self {
        Self {
            orientations,
            transitions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.transitions.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    /// Appends a transition after checking its action against the scene.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.action.check(t.scene.mask(), self.orientations)?;
        self.transitions.push(t);
        Ok(())
    }

    /// Draws `k` transitions uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Result<Vec<Transition>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        if self.transitions.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let n = self.transitions.len();
        Ok((0..k)
            .map(|_| self.transitions[rng.random_range(0..n)].clone())
            .collect())
    }
}
