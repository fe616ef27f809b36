use std::collections::VecDeque;

use rand::Rng;

use crate::error::{invalid, Result};

/// Fixed-capacity FIFO store of past episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
    inserted: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return invalid("replay buffer capacity must be positive");
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            inserted: 0,
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

    /// Total number of pushes, including evicted items.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends an item, evicting the oldest one when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        self.inserted += 1;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// `size` distinct items drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<&T>> {
        if size == 0 || size > self.items.len() {
            return invalid(format!(
                "cannot sample {size} items from a buffer holding {}",
                self.items.len()
            ));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}
