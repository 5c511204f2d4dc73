//! Deterministic index sampling.
//!
//! Every random role in a run (the two anchor batches, the inner batch at
//! each step, the `(i, j)` pairs and the output selection) gets its own
//! ChaCha8 stream derived from the master seed and the role coordinates
//! `(s, k, t)`. Streams never share draws, and restructuring the loops does
//! not change which numbers a role sees.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("cannot draw {size} distinct indices from [{n}]")]
    TooManyDistinct { n: usize, size: usize },
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("index range must be non-empty")]
    EmptyRange,
}

/// How a single batch is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    WithReplacement,
    WithoutReplacement,
}

/// Batch policy used by the solver and the verification code.
///
/// `Auto` draws with replacement when the batch is smaller than `n` and
/// uses the exact cover `0..n` when it is exactly `n`, which is the case the
/// indicator terms `𝕀(A < n)`, `𝕀(D < n)` of the variance bounds describe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SamplingPolicy {
    #[default]
    Auto,
    WithReplacement,
    WithoutReplacement,
}

/// What a policy resolves to for a concrete `(n, size)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    /// The full index set in natural order; no draws consumed.
    Cover,
    Random(SampleMode),
}

impl SamplingPolicy {
    pub fn resolve(self, n: usize, size: usize) -> BatchKind {
        match self {
            SamplingPolicy::Auto if size == n => BatchKind::Cover,
            SamplingPolicy::Auto | SamplingPolicy::WithReplacement => BatchKind::Random(SampleMode::WithReplacement),
            SamplingPolicy::WithoutReplacement => BatchKind::Random(SampleMode::WithoutReplacement),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SamplingPolicy::Auto => "auto",
            SamplingPolicy::WithReplacement => "with_replacement",
            SamplingPolicy::WithoutReplacement => "without_replacement",
        }
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SamplingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(SamplingPolicy::Auto),
            "with_replacement" => Ok(SamplingPolicy::WithReplacement),
            "without_replacement" => Ok(SamplingPolicy::WithoutReplacement),
            other => Err(format!("unknown sampling policy '{other}'")),
        }
    }
}

/// A list of component indices in `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexBatch {
    pub indices: Vec<usize>,
    pub mode: SampleMode,
    /// Number of draws the source stream had produced before this batch.
    pub draw_position: u64,
}

impl IndexBatch {
    /// Wraps an explicit index list (used by enumeration and hand examples).
    pub fn from_indices(indices: Vec<usize>, mode: SampleMode) -> Self {
        Self { indices, mode, draw_position: 0 }
    }

    /// The exact cover `0..n`.
    pub fn cover(n: usize) -> Self {
        Self::from_indices((0..n).collect(), SampleMode::WithoutReplacement)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A seeded random stream that counts its draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), draws: 0 }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.draws += 1;
        self.rng.random_range(0..n)
    }

    /// Uniform real in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    /// Direct access for distribution sampling (data generation).
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Draws `size` indices from `0..n`.
pub fn sample(n: usize, size: usize, mode: SampleMode, stream: &mut RngStream) -> Result<IndexBatch, SampleError> {
    if n == 0 {
        return Err(SampleError::EmptyRange);
    }
    if size == 0 {
        return Err(SampleError::EmptyBatch);
    }
    let draw_position = stream.draws;
    let indices = match mode {
        SampleMode::WithReplacement => (0..size).map(|_| stream.index(n)).collect(),
        SampleMode::WithoutReplacement => {
            if size > n {
                return Err(SampleError::TooManyDistinct { n, size });
            }
            stream.draws += size as u64;
            index::sample(&mut stream.rng, n, size).into_vec()
        }
    };
    Ok(IndexBatch { indices, mode, draw_position })
}

/// Draws a batch according to `policy`.
pub fn sample_with_policy(
    n: usize,
    size: usize,
    policy: SamplingPolicy,
    stream: &mut RngStream,
) -> Result<IndexBatch, SampleError> {
    match policy.resolve(n, size) {
        BatchKind::Cover => Ok(IndexBatch { draw_position: stream.draws, ..IndexBatch::cover(n) }),
        BatchKind::Random(mode) => sample(n, size, mode, stream),
    }
}

/// Random roles inside a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamRole {
    AnchorInner,
    AnchorOuter,
    InnerBatch,
    Pair,
    OutputSelection,
    Verification,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::AnchorInner => 0x11,
            StreamRole::AnchorOuter => 0x22,
            StreamRole::InnerBatch => 0x33,
            StreamRole::Pair => 0x44,
            StreamRole::OutputSelection => 0x55,
            StreamRole::Verification => 0x66,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives independent per-role streams from a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSplitter {
    master: u64,
}

impl StreamSplitter {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed_for(&self, role: StreamRole, s: u64, k: u64, t: u64) -> u64 {
        let mut h = splitmix64(self.master ^ splitmix64(role.tag()));
        for coord in [s, k, t] {
            h = splitmix64(h ^ splitmix64(coord.wrapping_add(0xA5A5)));
        }
        h
    }

    pub fn stream(&self, role: StreamRole, s: u64, k: u64, t: u64) -> RngStream {
        RngStream::from_seed(self.seed_for(role, s, k, t))
    }
}

/// `(i, j)` pair for step `(s, k)` and mini-batch slot `t`.
pub fn draw_pair(splitter: &StreamSplitter, n: usize, s: usize, k: usize, t: usize) -> (usize, usize) {
    let mut stream = splitter.stream(StreamRole::Pair, s as u64, k as u64, t as u64);
    let i = stream.index(n);
    let j = stream.index(n);
    (i, j)
}
