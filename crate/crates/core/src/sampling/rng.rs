//! Seeded pseudo-random streams.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// ChaCha8 generator keyed by `(seed, stream)`.
///
/// The same pair yields the same sequence on every platform. Child streams are
/// derived by hashing, so jobs that run in parallel can each own one.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream identified by `tag`; does not consume state.
    pub fn derive(&self, tag: u64) -> SeededRng {
        SeededRng::new(self.seed, splitmix64(splitmix64(self.stream) ^ tag))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }
}

impl rand::RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n × d` iid standard normals, filled row by row.
pub fn normal_draws(rng: &mut SeededRng, n: usize, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        for c in 0..d {
            out[(i, c)] = rng.standard_normal();
        }
    }
    out
}
