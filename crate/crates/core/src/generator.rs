//! Event streams drawn from a known model on a small closed population.
//!
//! At each step every dyad of the population competes with weight
//! `exp(theta . s(u, a))`; one dyad is drawn, the event is recorded, and the
//! clock moves on by a fixed step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{ArticleId, Event, EventLog, IngestError, NodeUniverse, Timestamp, UserId};
use crate::network::{DecayConfig, NetworkError, PastEventNetwork};
use crate::sampler::mix64;
use crate::stats::{RiskSetRows, StatVector, NUM_STATS};

/// Largest population the generator accepts by default.
pub const DEFAULT_MAX_DYADS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_users: usize,
    pub n_articles: usize,
    pub theta: [f64; NUM_STATS],
    pub n_events: usize,
    /// Seconds between consecutive events.
    pub time_step: Timestamp,
    pub start_time: Timestamp,
    pub decay: DecayConfig,
    pub seed: u64,
    pub max_dyads: usize,
}

impl SimConfig {
    /// Default decay, a time step of one fiftieth of the halflife, and a
    /// start at time zero.
    pub fn new(
        n_users: usize,
        n_articles: usize,
        theta: [f64; NUM_STATS],
        n_events: usize,
        seed: u64,
    ) -> Self {
        let decay = DecayConfig::default();
        SimConfig {
            n_users,
            n_articles,
            theta,
            n_events,
            time_step: default_time_step(&decay),
            start_time: 0,
            decay,
            seed,
            max_dyads: DEFAULT_MAX_DYADS,
        }
    }

    pub fn n_dyads(&self) -> usize {
        self.n_users.saturating_mul(self.n_articles)
    }
}

pub fn default_time_step(decay: &DecayConfig) -> Timestamp {
    ((decay.halflife() / 50.0).round() as Timestamp).max(1)
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("population of {0} dyads is too small (need at least 2)")]
    TooSmall(usize),
    #[error("population of {dyads} dyads exceeds the limit of {limit}")]
    TooLarge { dyads: usize, limit: usize },
    #[error("time step must be positive, got {0}")]
    TimeStep(Timestamp),
    #[error("theta must be finite")]
    Theta,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

fn eta(theta: &[f64; NUM_STATS], s: &StatVector) -> f64 {
    s.to_array().iter().zip(theta).map(|(x, t)| x * t).sum()
}

/// Draws a stream of `cfg.n_events` events.
///
/// Users are named `u<i>` and articles `a<j>` by population index; in the
/// returned log they are interned in order of first appearance, exactly as
/// reading the written stream back would intern them.
pub fn simulate(cfg: &SimConfig) -> Result<EventLog, SimError> {
    let dyads = cfg.n_dyads();
    if dyads < 2 {
        return Err(SimError::TooSmall(dyads));
    }
    if dyads > cfg.max_dyads {
        return Err(SimError::TooLarge {
            dyads,
            limit: cfg.max_dyads,
        });
    }
    if cfg.time_step <= 0 {
        return Err(SimError::TimeStep(cfg.time_step));
    }
    if cfg.theta.iter().any(|t| !t.is_finite()) {
        return Err(SimError::Theta);
    }

    let (nu, na) = (cfg.n_users, cfg.n_articles);
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed));
    let mut net = PastEventNetwork::new(cfg.decay);
    let mut universe = NodeUniverse::new();
    let mut events = Vec::with_capacity(cfg.n_events);

    let mut row = Vec::with_capacity(na);
    let mut isolated = vec![0.0; na];
    // Weights of the rows of users with live edges, back to back.
    let mut active_weights: Vec<f64> = Vec::new();
    let mut user_total = vec![0.0; nu];
    let mut user_slot = vec![usize::MAX; nu];

    for i in 0..cfg.n_events {
        let t = cfg.start_time + i as Timestamp * cfg.time_step;
        let view = net.view(t)?;
        let mut rows = RiskSetRows::new(view, na);

        rows.isolated_row(&mut row);
        let etas: Vec<f64> = row.iter().map(|s| eta(&cfg.theta, s)).collect();
        let mut shift = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        active_weights.clear();
        let mut active_etas: Vec<f64> = Vec::new();
        for u in 0..nu {
            let user = UserId(u as u32);
            if view.user_degree(user) == 0 {
                user_slot[u] = usize::MAX;
                continue;
            }
            user_slot[u] = active_etas.len() / na;
            rows.user_row(user, &mut row);
            for s in &row {
                let e = eta(&cfg.theta, s);
                shift = shift.max(e);
                active_etas.push(e);
            }
        }

        let mut iso_total = 0.0;
        for (w, e) in isolated.iter_mut().zip(&etas) {
            *w = (e - shift).exp();
            iso_total += *w;
        }
        active_weights.extend(active_etas.iter().map(|e| (e - shift).exp()));
        let mut total = 0.0;
        for u in 0..nu {
            user_total[u] = match user_slot[u] {
                usize::MAX => iso_total,
                k => active_weights[k * na..(k + 1) * na].iter().sum(),
            };
            total += user_total[u];
        }

        let mut target = rng.gen::<f64>() * total;
        let mut user = nu - 1;
        for (u, &w) in user_total.iter().enumerate() {
            if target < w {
                user = u;
                break;
            }
            target -= w;
        }
        let weights = match user_slot[user] {
            usize::MAX => &isolated[..],
            k => &active_weights[k * na..(k + 1) * na],
        };
        let mut article = na - 1;
        for (a, &w) in weights.iter().enumerate() {
            if target < w {
                article = a;
                break;
            }
            target -= w;
        }

        let seq = i as u64;
        net.add_unit(UserId(user as u32), ArticleId(article as u32), t)?;
        events.push(Event {
            user: universe.intern_user(&format!("u{user}"), seq)?,
            article: universe.intern_article(&format!("a{article}"), seq)?,
            time: t,
            seq,
        });
    }
    Ok(EventLog { events, universe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{read_events, write_events, EventFormat};

    fn counts(log: &EventLog) -> std::collections::HashMap<(String, String), usize> {
        let mut c = std::collections::HashMap::new();
        for e in &log.events {
            let key = (
                log.universe.user_name(e.user).to_string(),
                log.universe.article_name(e.article).to_string(),
            );
            *c.entry(key).or_insert(0) += 1;
        }
        c
    }

    #[test]
    fn zero_theta_is_uniform() {
        let n = 100_000;
        let log = simulate(&SimConfig::new(5, 5, [0.0; NUM_STATS], n, 1)).unwrap();
        let c = counts(&log);
        assert_eq!(c.len(), 25);
        let expected = n as f64 / 25.0;
        let sigma = (n as f64 * (1.0 / 25.0) * (24.0 / 25.0)).sqrt();
        for (dyad, &k) in &c {
            assert!(
                (k as f64 - expected).abs() < 3.0 * sigma,
                "{dyad:?}: {k} vs {expected}"
            );
        }
    }

    #[test]
    fn strong_repetition_concentrates() {
        let log = simulate(&SimConfig::new(5, 5, [8.0, 0.0, 0.0, 0.0, 0.0], 2000, 3)).unwrap();
        let top = counts(&log).into_values().max().unwrap();
        assert!(top as f64 > 0.5 * 2000.0, "top dyad has {top} events");
    }

    #[test]
    fn fixed_seed_reproduces() {
        let cfg = SimConfig::new(6, 4, [0.5, 0.3, 0.2, 0.1, 0.0], 500, 9);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.events, b.events);
        let c = simulate(&SimConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn written_stream_reads_back_identically() {
        let cfg = SimConfig::new(4, 7, [0.5, 0.3, 0.2, 0.1, 0.0], 300, 2);
        let log = simulate(&cfg).unwrap();
        assert!(log
            .events
            .windows(2)
            .all(|w| w[1].time - w[0].time == cfg.time_step));
        let mut buf = Vec::new();
        write_events(&mut buf, &log.events, &log.universe, b',').unwrap();
        let back = read_events(&buf[..], &EventFormat::default()).unwrap();
        assert_eq!(back.events, log.events);
        assert_eq!(back.universe.n_users(), log.universe.n_users());
    }

    #[test]
    fn invalid_configs() {
        let theta = [0.0; NUM_STATS];
        assert!(matches!(
            simulate(&SimConfig::new(1, 1, theta, 5, 0)),
            Err(SimError::TooSmall(1))
        ));
        let big = SimConfig {
            max_dyads: 10,
            ..SimConfig::new(4, 4, theta, 5, 0)
        };
        assert!(matches!(
            simulate(&big),
            Err(SimError::TooLarge { dyads: 16, .. })
        ));
        let step = SimConfig {
            time_step: 0,
            ..SimConfig::new(2, 2, theta, 5, 0)
        };
        assert!(matches!(simulate(&step), Err(SimError::TimeStep(0))));
        assert_eq!(default_time_step(&DecayConfig::default()), 51_840);
    }
}
