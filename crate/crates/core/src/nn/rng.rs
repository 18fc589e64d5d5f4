use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Seeded random stream whose position can be saved and restored.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable snapshot of an [`RngState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub counter: u128,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, fully determined by this stream's seed and `label`.
    pub fn fork(&self, label: u64) -> RngState {
        RngState::new(splitmix(self.seed ^ splitmix(label.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            counter: self.inner.get_word_pos(),
        }
    }

    pub fn restore(s: RngSnapshot) -> Self {
        let mut r = RngState::new(s.seed);
        r.inner.set_word_pos(s.counter);
        r
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<X>(&mut self, v: &mut [X]) {
        use rand::seq::SliceRandom;
        v.shuffle(&mut self.inner);
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(RngState::new(8).next_u64(), RngState::new(7).next_u64());
    }

    #[test]
    fn snapshot_resumes_stream() {
        let mut a = RngState::new(3);
        for _ in 0..17 {
            a.normal();
        }
        let mut b = RngState::restore(a.snapshot());
        for _ in 0..50 {
            assert_eq!(a.uniform(), b.uniform());
        }
    }

    #[test]
    fn forks_differ() {
        let r = RngState::new(1);
        assert_ne!(r.fork(0).next_u64(), r.fork(1).next_u64());
        assert_eq!(r.fork(5).next_u64(), RngState::new(1).fork(5).next_u64());
    }
}
