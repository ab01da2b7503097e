//! Replay buffer: fixed-capacity ring with FIFO eviction and uniform
//! sampling with replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Transition;

#[derive(Debug, Clone)]
pub struct ReplayBuffer<S, A> {
    capacity: usize,
    items: Vec<Transition<S, A>>,
    write: usize,
    rng: ChaCha8Rng,
}

impl<S: Copy, A: Copy> ReplayBuffer<S, A> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            write: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition<S, A>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Draws `n` transitions uniformly with replacement.
    pub fn sample(&mut self, n: usize) -> Vec<Transition<S, A>> {
        assert!(!self.items.is_empty(), "cannot sample from an empty buffer");
        (0..n)
            .map(|_| self.items[self.rng.random_range(0..self.items.len())])
            .collect()
    }

    /// Contents in insertion (FIFO) order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<S, A>> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.write
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

/// Fans one environment interaction out to every candidate's buffer: buffer
/// `i` stores the transition with `rewards[i]`. The `(s, a, s_next,
/// terminal)` fields are identical across buffers.
pub fn push_shared<S: Copy, A: Copy>(
    buffers: &mut [ReplayBuffer<S, A>],
    s: S,
    a: A,
    s_next: S,
    rewards: &[f64],
    terminal: bool,
) {
    assert_eq!(
        buffers.len(),
        rewards.len(),
        "one reward per candidate buffer"
    );
    for (buf, &reward) in buffers.iter_mut().zip(rewards) {
        buf.push(Transition {
            s,
            a,
            s_next,
            reward,
            terminal,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Move;
    use crate::grid::Cell;

    fn t(n: i32) -> Transition<Cell, Move> {
        Transition {
            s: Cell::new(n, 0),
            a: Move::Up,
            s_next: Cell::new(n, 1),
            reward: n as f64,
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction_when_full() {
        let mut buf = ReplayBuffer::new(2, 0);
        buf.push(t(0));
        buf.push(t(1));
        buf.push(t(2));
        assert_eq!(buf.len(), 2);
        let kept: Vec<i32> = buf.iter().map(|t| t.s.x).collect();
        assert_eq!(kept, vec![1, 2]);
    }

    #[test]
    fn shared_push_grows_every_buffer() {
        let mut buffers: Vec<ReplayBuffer<Cell, Move>> =
            (0..3).map(|i| ReplayBuffer::new(10, i)).collect();
        push_shared(
            &mut buffers,
            Cell::new(0, 0),
            Move::Right,
            Cell::new(1, 0),
            &[-1.0, -1.0, 99.0],
            false,
        );
        for buf in &buffers {
            assert_eq!(buf.len(), 1);
        }
        // Only the reached candidate's stored reward carries the goal bonus.
        let rewards: Vec<f64> = buffers.iter().map(|b| b.iter().next().unwrap().reward).collect();
        assert_eq!(rewards, vec![-1.0, -1.0, 99.0]);
    }

    #[test]
    fn sampling_is_close_to_uniform() {
        // 1e5 draws from 10 items: each expected 1e4, sigma ~ 94.9.
        let mut buf = ReplayBuffer::new(16, 42);
        for i in 0..10 {
            buf.push(t(i));
        }
        let mut counts = [0u32; 10];
        for tr in buf.sample(100_000) {
            counts[tr.s.x as usize] += 1;
        }
        let sigma = (100_000.0f64 * 0.1 * 0.9).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - 10_000.0).abs() < 5.0 * sigma,
                "count {c} outside 5 sigma"
            );
        }
    }

    #[test]
    fn sampling_is_seeded_deterministic() {
        let mut a = ReplayBuffer::new(8, 7);
        let mut b = ReplayBuffer::new(8, 7);
        for i in 0..5 {
            a.push(t(i));
            b.push(t(i));
        }
        assert_eq!(a.sample(20), b.sample(20));
    }
}
