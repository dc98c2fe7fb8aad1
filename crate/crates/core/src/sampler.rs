//! Bernoulli sampling of observed events and case-control sampling of
//! non-event dyads from the risk set.
//!
//! All randomness for event `seq` derives from `seed ^ mix(seq)`, so the
//! inclusion decision and the control draws of an event do not depend on
//! any other event, nor on `p`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::ingest::{ArticleId, UserId};

/// Name of the generator behind every sampled quantity.
pub const RNG_ALGORITHM: &str = "chacha8";

const INCLUDE_TAG: u64 = 0x5eed_e7e7_0000_0001;
const CONTROL_TAG: u64 = 0x5eed_c0c0_0000_0002;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("event sampling probability must lie in (0, 1], got {0}")]
    Probability(f64),
    #[error("number of controls must be at least 1")]
    Controls,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    p: f64,
    m: usize,
    seed: u64,
}

impl SampleConfig {
    pub fn new(p: f64, m: usize, seed: u64) -> Result<Self, SampleError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(SampleError::Probability(p));
        }
        if m == 0 {
            return Err(SampleError::Controls);
        }
        Ok(SampleConfig { p, m, seed })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SampleConfig { seed, ..self }
    }

    /// Whether event `seq` belongs to the sample.
    #[inline]
    pub fn includes(&self, seq: u64) -> bool {
        self.p >= 1.0 || unit_interval(mix64(self.event_key(seq) ^ INCLUDE_TAG)) < self.p
    }

    /// Generator for the control draws of event `seq`.
    pub fn control_rng(&self, seq: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.event_key(seq) ^ CONTROL_TAG))
    }

    #[inline]
    fn event_key(&self, seq: u64) -> u64 {
        self.seed ^ mix64(seq)
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of indices.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(root), |acc, &k| mix64(acc ^ mix64(k)))
}

#[inline]
fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inclusion flags for events `0..n`.
pub fn sample_events(n: usize, cfg: &SampleConfig) -> Vec<bool> {
    (0..n as u64).map(|seq| cfg.includes(seq)).collect()
}

/// Outcome of drawing the controls of one stratum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawStatus {
    /// `m` controls drawn.
    Sampled,
    /// `m` equals the number of non-case dyads: all of them are controls.
    Exhaustive,
    /// Fewer than `m` non-case dyads exist; all of them are controls.
    Clamped,
    /// The case is the only dyad in the risk set.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlDraw {
    pub controls: Vec<(UserId, ArticleId)>,
    pub status: DrawStatus,
}

impl ControlDraw {
    /// Whether every non-case dyad of the risk set is a control.
    pub fn covers_risk_set(&self) -> bool {
        matches!(self.status, DrawStatus::Exhaustive | DrawStatus::Clamped)
    }
}

/// Draws `m` controls uniformly without replacement from
/// `(0..n_users x 0..n_articles) \ {case}`.
///
/// Uses rejection of collisions with the case and with earlier draws. When
/// more than half of the non-case dyads are requested, an index sample over
/// the enumerated non-case dyads is drawn instead, which is equally uniform
/// and avoids long rejection runs.
pub fn sample_controls<R: Rng + ?Sized>(
    n_users: usize,
    n_articles: usize,
    case: (UserId, ArticleId),
    m: usize,
    rng: &mut R,
) -> ControlDraw {
    let size = n_users as u64 * n_articles as u64;
    let available = size.saturating_sub(1);
    if available == 0 {
        return ControlDraw {
            controls: Vec::new(),
            status: DrawStatus::Degenerate,
        };
    }
    let case_index = case.0 .0 as u64 * n_articles as u64 + case.1 .0 as u64;
    let decode = |i: u64| {
        // Skip over the case position.
        let i = if i >= case_index { i + 1 } else { i };
        (
            UserId((i / n_articles as u64) as u32),
            ArticleId((i % n_articles as u64) as u32),
        )
    };

    if m as u64 >= available {
        return ControlDraw {
            controls: (0..available).map(decode).collect(),
            status: if m as u64 == available {
                DrawStatus::Exhaustive
            } else {
                DrawStatus::Clamped
            },
        };
    }

    if 2 * m as u64 > available {
        let picks = index::sample(rng, available as usize, m);
        return ControlDraw {
            controls: picks.into_iter().map(|i| decode(i as u64)).collect(),
            status: DrawStatus::Sampled,
        };
    }

    let mut controls = Vec::with_capacity(m);
    let mut seen: FxHashSet<(u32, u32)> = FxHashSet::default();
    while controls.len() < m {
        let u = UserId(rng.gen_range(0..n_users) as u32);
        let a = ArticleId(rng.gen_range(0..n_articles) as u32);
        if (u, a) == case || !seen.insert((u.0, a.0)) {
            continue;
        }
        controls.push((u, a));
    }
    ControlDraw {
        controls,
        status: DrawStatus::Sampled,
    }
}
