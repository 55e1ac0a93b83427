//! Counter-based random streams keyed by `(purpose, level pair, sample index)`.
//!
//! Every sample of every estimator member owns its own stream, so results do
//! not depend on how samples are scheduled across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

/// Source of the standard normal and unit exponential numbers that drive a
/// particle path.
pub trait DrawSource {
    fn normal(&mut self) -> f64;
    fn exponential(&mut self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawKind {
    Normal,
    Exponential,
}

/// Purpose tags separating otherwise identical keys.
pub mod purpose {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const PILOT_CORRELATION: u64 = 0x5248_4f00;
    pub const AD_NULL: u64 = 0x4144_4e55;
    pub const CHECK_RN: u64 = 0x4348_524e;
    pub const ORACLE: u64 = 0x4f52_434c;
    /// Fresh coarse draws when a coupled exponential budget is exhausted.
    pub const RESERVE: u64 = 0x5253_5256;
}

/// Identifier of a (fine, coarse) level pair; single-level samples use
/// `coarse = None`.
#[inline]
pub fn pair_id(fine: u32, coarse: Option<u32>) -> u64 {
    ((fine as u64) << 32) | coarse.map_or(0xffff_ffff, |c| c as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub purpose: u64,
    pub pair: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(purpose: u64, pair: u64, index: u64) -> Self {
        Self { purpose, pair, index }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct DrawStream {
    key: StreamKey,
    rng: ChaCha8Rng,
    counter: u64,
}

impl DrawStream {
    /// Opens the stream for `key` under a root seed. The ChaCha key is
    /// derived from `(root, purpose, pair)` and the sample index selects the
    /// ChaCha stream, so replaying a key reproduces its draws exactly.
    pub fn new(root_seed: u64, key: StreamKey) -> Self {
        let mut h = splitmix64(root_seed);
        h = splitmix64(h ^ key.purpose);
        h = splitmix64(h ^ key.pair);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(key.index);
        Self { key, rng, counter: 0 }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Number of draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn draw(&mut self, kind: DrawKind) -> f64 {
        self.counter += 1;
        match kind {
            DrawKind::Normal => self.rng.sample(StandardNormal),
            DrawKind::Exponential => {
                let u: f64 = self.rng.sample(Open01);
                -u.ln()
            }
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(Open01)
    }
}

impl DrawSource for DrawStream {
    #[inline]
    fn normal(&mut self) -> f64 {
        self.draw(DrawKind::Normal)
    }

    #[inline]
    fn exponential(&mut self) -> f64 {
        self.draw(DrawKind::Exponential)
    }
}

/// Replays a fixed list of draws, then falls back to an inner source.
/// Useful for forcing particular paths in tests.
#[derive(Debug, Clone)]
pub struct ScriptedDraws<S> {
    normals: std::collections::VecDeque<f64>,
    exponentials: std::collections::VecDeque<f64>,
    fallback: S,
}

impl<S: DrawSource> ScriptedDraws<S> {
    pub fn new(normals: Vec<f64>, exponentials: Vec<f64>, fallback: S) -> Self {
        Self {
            normals: normals.into(),
            exponentials: exponentials.into(),
            fallback,
        }
    }
}

impl<S: DrawSource> DrawSource for ScriptedDraws<S> {
    fn normal(&mut self) -> f64 {
        self.normals.pop_front().unwrap_or_else(|| self.fallback.normal())
    }

    fn exponential(&mut self) -> f64 {
        self.exponentials.pop_front().unwrap_or_else(|| self.fallback.exponential())
    }
}
