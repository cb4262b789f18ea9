//! Deterministic random streams with cheap substream derivation.
//!
//! Reproducibility across runs and thread counts is a hard contract, so the
//! generator is pinned rather than delegated to a library whose stream could
//! drift between versions:
//!
//! - state evolution is splitmix64 (Weyl increment `0x9E3779B97F4A7C15`
//!   followed by the Stafford mix13 avalanche);
//! - the substream for index `j` seeds a fresh state from
//!   `mix13(master_seed ^ mix13(j * GOLDEN + SALT))`;
//! - uniforms take the top 53 bits; Gaussians are Box-Muller pairs with the
//!   second variate cached.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const SALT: u64 = 0xD1B54A32D192ED03;

/// Stafford mix13 finalizer: a 64-bit avalanche permutation.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// A seeded, owned random stream. `(master_seed, stream_index)` fully
/// determines the sequence.
#[derive(Clone, Debug)]
pub struct RandomStream {
    master_seed: u64,
    stream_index: u64,
    state: u64,
    spare_gauss: Option<f64>,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let state = mix64(master_seed ^ mix64(stream_index.wrapping_mul(GOLDEN).wrapping_add(SALT)));
        RandomStream {
            master_seed,
            stream_index,
            state,
            spare_gauss: None,
        }
    }

    /// Derive the substream for path/replica `j`. Independent of how much of
    /// this stream has already been consumed.
    pub fn substream(&self, j: u64) -> Self {
        RandomStream::new(
            self.master_seed,
            mix64(self.stream_index ^ j.wrapping_mul(GOLDEN).wrapping_add(1)),
        )
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal variate (Box-Muller, spare cached).
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gauss.take() {
            return z;
        }
        // Shift u1 away from zero so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gauss = Some(r * theta.sin());
        r * theta.cos()
    }
}
