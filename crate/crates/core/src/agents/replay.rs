use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::Rng;

/// One agent decision. `next` is `None` for the agent's last decision of the
/// episode; the frozen-network outputs are cached since they never change.
#[derive(Debug, Clone)]
pub struct Transition<S> {
    pub state: S,
    pub action: u8,
    pub reward: f64,
    pub frozen_q: [f64; 2],
    pub next: Option<(S, [f64; 2])>,
}

impl<S> Transition<S> {
    pub fn done(&self) -> bool {
        self.next.is_none()
    }
}

/// Fixed-capacity FIFO with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> ReplayBuffer<T> {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
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

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<T> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// A buffer several collectors can append to while a learner samples.
#[derive(Debug)]
pub struct SharedReplayBuffer<T> {
    inner: Arc<Mutex<ReplayBuffer<T>>>,
}

impl<T> Clone for SharedReplayBuffer<T> {
    fn clone(&self) -> Self {
        SharedReplayBuffer {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Clone> SharedReplayBuffer<T> {
    pub fn new(capacity: usize) -> SharedReplayBuffer<T> {
        SharedReplayBuffer {
            inner: Arc::new(Mutex::new(ReplayBuffer::new(capacity))),
        }
    }

    pub fn push(&self, item: T) {
        self.inner.lock().expect("replay lock").push(item);
    }

    pub fn extend(&self, items: impl IntoIterator<Item = T>) {
        let mut buf = self.inner.lock().expect("replay lock");
        for it in items {
            buf.push(it);
        }
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<T> {
        self.inner.lock().expect("replay lock").sample(n, rng)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("replay lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hist = [0u32; 50];
        for i in b.sample_indices(100_000, &mut rng) {
            hist[i] += 1;
        }
        let expect = 100_000.0 / 50.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new(49.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn empty_buffer_samples_nothing() {
        let b: ReplayBuffer<u8> = ReplayBuffer::new(4);
        assert!(b.sample(8, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }

    #[test]
    fn concurrent_writers_respect_capacity() {
        let shared = SharedReplayBuffer::new(1_000);
        let handles: Vec<_> = (0..4)
            .map(|w| {
                let buf = shared.clone();
                std::thread::spawn(move || {
                    for i in 0..500 {
                        buf.push(w * 1_000 + i);
                    }
                })
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while shared.len() < 1_000 {
            let _ = shared.sample(4, &mut rng);
            std::thread::yield_now();
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(shared.len(), 1_000);
    }
}
