use std::collections::VecDeque;

use rand::Rng;

use super::{QError, Transition};

/// Bounded FIFO of transitions with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>, QError> {
        if self.entries.len() < k || k == 0 {
            return Err(QError::BufferTooSmall {
                have: self.entries.len(),
                need: k.max(1),
            });
        }
        Ok((0..k)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ActionIndex;
    use crate::qlearn::StateVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(id: u64) -> Transition {
        Transition {
            game_id: id,
            turn: 0,
            state: StateVector(vec![0; 4]),
            action: ActionIndex(0),
            reward: 0.0,
            next_state: StateVector(vec![0; 4]),
            done: true,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2);
        for id in [1, 2, 3] {
            buf.push(t(id));
        }
        let ids: Vec<u64> = buf.iter().map(|t| t.game_id).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn seeded_sampling() {
        let mut buf = ReplayBuffer::new(10);
        for id in 0..10 {
            buf.push(t(id));
        }
        let a: Vec<u64> = buf.sample(5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().iter().map(|t| t.game_id).collect();
        let b: Vec<u64> = buf.sample(5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().iter().map(|t| t.game_id).collect();
        assert_eq!(a, b);
        assert!(matches!(
            buf.sample(11, &mut ChaCha8Rng::seed_from_u64(4)),
            Err(QError::BufferTooSmall { have: 10, need: 11 })
        ));
    }
}
