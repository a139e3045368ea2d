//! Seed derivation and Brownian increment sources.
//!
//! Every path draws its noise from its own ChaCha stream whose seed is a
//! function of `(master seed, path index, stream tag)` only, so batch results
//! never depend on how paths are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SddeError};

/// Stream tags separating independent uses of randomness for the same path index.
pub mod stream {
    /// Brownian increments of a base path (shared by both sides of a coupling).
    pub const BASE_NOISE: u64 = 0x6261_7365;
    /// Long-run trajectories used as stationary proxies.
    pub const STATIONARY: u64 = 0x7374_6174;
    /// Independent replicate batches.
    pub const REPLICATE: u64 = 0x7265_706c;
    /// Anything else (probe clouds, resampling).
    pub const AUXILIARY: u64 = 0x6175_7869;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer; a bijection on u64
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of one stream from the master seed.
///
/// For a fixed `(master, stream_tag)` the map `path_index -> seed` is injective,
/// because each stage is a bijection of the previous state.
pub fn derive_seed(master: u64, path_index: u64, stream_tag: u64) -> u64 {
    let h = mix(master.wrapping_add(GOLDEN));
    let h = mix(h ^ stream_tag.wrapping_mul(GOLDEN).rotate_left(17));
    mix(h ^ path_index)
}

/// Source of Brownian increments `dW ~ N(0, dt I_m)`.
pub trait NoiseSource {
    fn next_increment(&mut self, out: &mut [f64]) -> Result<()>;
}

/// Fresh Gaussian increments from a seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
    sd: f64,
}

impl GaussianNoise {
    pub fn new(seed: u64, dt: f64) -> Self {
        GaussianNoise {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sd: dt.sqrt(),
        }
    }

    /// Stream for path `index` of a batch.
    pub fn for_path(master: u64, index: usize, dt: f64) -> Self {
        Self::new(derive_seed(master, index as u64, stream::BASE_NOISE), dt)
    }
}

impl NoiseSource for GaussianNoise {
    fn next_increment(&mut self, out: &mut [f64]) -> Result<()> {
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = self.sd * z;
        }
        Ok(())
    }
}

/// Replays recorded increments, e.g. the noise stored on a [`crate::PathGrid`].
#[derive(Debug, Clone)]
pub struct ReplayNoise<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> ReplayNoise<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        ReplayNoise { data, pos: 0 }
    }
}

impl NoiseSource for ReplayNoise<'_> {
    fn next_increment(&mut self, out: &mut [f64]) -> Result<()> {
        let end = self.pos + out.len();
        if end > self.data.len() {
            return Err(SddeError::InvalidGrid("replayed noise stream exhausted".into()));
        }
        out.copy_from_slice(&self.data[self.pos..end]);
        self.pos = end;
        Ok(())
    }
}
