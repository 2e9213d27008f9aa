//! Deterministic labeled RNG streams.
//!
//! Every stochastic component owns a stream derived from the run's root seed
//! and a string label (e.g. `transfer/step0012/probe05`). Streams are
//! independent of scheduling, so parallel and sequential execution see the
//! same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const FNV_BASES: [u64; 4] = [
    0xcbf2_9ce4_8422_2325,
    0x9ae1_6a3b_2f90_404f,
    0x6c62_272e_07bb_0142,
    0x27d4_eb2f_1654_67c5,
];

fn fnv1a(base: u64, bytes: &[u8]) -> u64 {
    let mut h = base;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Factory for labeled random streams. Copy-cheap; share freely.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamFactory {
    root: u64,
}

impl StreamFactory {
    pub fn new(root_seed: u64) -> Self {
        Self { root: root_seed }
    }

    pub fn root_seed(&self) -> u64 {
        self.root
    }

    fn seed_bytes(&self, label: &str) -> [u8; 32] {
        let mut buf = Vec::with_capacity(8 + label.len());
        buf.extend_from_slice(&self.root.to_le_bytes());
        buf.extend_from_slice(label.as_bytes());
        let mut seed = [0u8; 32];
        for (i, base) in FNV_BASES.iter().enumerate() {
            let h = fnv1a(*base, &buf);
            seed[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
        }
        seed
    }

    /// The stream for `label`. Same (root, label) always yields the same
    /// stream, regardless of call order or thread.
    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes(label))
    }

    /// A child factory whose streams are all namespaced under `label`.
    pub fn child(&self, label: &str) -> StreamFactory {
        let seed = self.seed_bytes(label);
        let mut first = [0u8; 8];
        first.copy_from_slice(&seed[..8]);
        StreamFactory { root: u64::from_le_bytes(first) }
    }
}

/// Standard normal draw via Box-Muller. Consumes exactly two uniforms.
pub fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            let r = (-2.0 * u1.ln()).sqrt();
            return r * (std::f64::consts::TAU * u2).cos();
        }
    }
}
