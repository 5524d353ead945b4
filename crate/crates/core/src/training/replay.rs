use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Bounded FIFO experience store with uniform minibatch sampling.
///
/// Pushing beyond capacity evicts the oldest entry, so the buffer always
/// holds the most recent `capacity` transitions in insertion order.
/// Sampling is with replacement; a minibatch may repeat entries when the
/// buffer is small.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> ReplayBuffer<T> {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
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

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn sample(&self, batch: usize, rng: &mut ChaCha20Rng) -> Vec<&T> {
        assert!(!self.items.is_empty(), "cannot sample an empty buffer");
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}
