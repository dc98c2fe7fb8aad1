//! From-scratch reference evaluation of weights and statistics.
//!
//! Everything here recomputes from the raw event prefix with no incremental
//! state, in quadratic or worse time. Only for tests.

use crate::ingest::{ArticleId, Event, Timestamp, UserId};
use crate::network::DecayConfig;
use crate::stats::StatVector;

/// Decayed weight of `(user, article)` at `t` from the events in `prefix`.
///
/// Walks the dyad's events in order. The accumulated value is dropped to
/// zero whenever it has decayed below the threshold before the next event,
/// and the final value is zero if it is below the threshold at `t`.
pub fn weight(
    prefix: &[Event],
    user: UserId,
    article: ArticleId,
    t: Timestamp,
    cfg: &DecayConfig,
) -> f64 {
    let eps = cfg.prune_epsilon();
    let decay = |v: f64, dt: i64| v * (-(dt as f64) / cfg.halflife()).exp2();
    let mut value = 0.0;
    let mut last: Option<Timestamp> = None;
    for e in prefix
        .iter()
        .filter(|e| e.user == user && e.article == article && e.time <= t)
    {
        if let Some(prev) = last {
            value = decay(value, e.time - prev);
            if value < eps {
                value = 0.0;
            }
        }
        value += 1.0;
        last = Some(e.time);
    }
    match last {
        Some(prev) => {
            let v = decay(value, t - prev);
            if v < eps {
                0.0
            } else {
                v
            }
        }
        None => 0.0,
    }
}

/// Weights of every dyad `n_users x n_articles`, row-major by user.
pub fn weight_matrix(
    prefix: &[Event],
    n_users: usize,
    n_articles: usize,
    t: Timestamp,
    cfg: &DecayConfig,
) -> Vec<f64> {
    let mut w = vec![0.0; n_users * n_articles];
    for u in 0..n_users {
        for a in 0..n_articles {
            w[u * n_articles + a] = weight(prefix, UserId(u as u32), ArticleId(a as u32), t, cfg);
        }
    }
    w
}

pub fn weighted_in(
    prefix: &[Event],
    n_users: usize,
    article: ArticleId,
    t: Timestamp,
    cfg: &DecayConfig,
) -> f64 {
    (0..n_users)
        .map(|u| weight(prefix, UserId(u as u32), article, t, cfg))
        .sum()
}

pub fn weighted_out(
    prefix: &[Event],
    n_articles: usize,
    user: UserId,
    t: Timestamp,
    cfg: &DecayConfig,
) -> f64 {
    (0..n_articles)
        .map(|a| weight(prefix, user, ArticleId(a as u32), t, cfg))
        .sum()
}

/// All five statistics of `(user, article)` from a dense weight matrix.
pub fn stat_vector_from_weights(
    w: &[f64],
    n_users: usize,
    n_articles: usize,
    user: UserId,
    article: ArticleId,
) -> StatVector {
    let (u, a) = (user.index(), article.index());
    let at = |i: usize, j: usize| {
        if i < n_users && j < n_articles {
            w[i * n_articles + j]
        } else {
            0.0
        }
    };
    let repetition = at(u, a);
    let popularity: f64 = (0..n_users).map(|i| at(i, a)).sum();
    let activity: f64 = (0..n_articles).map(|j| at(u, j)).sum();
    let mut four_cycle = 0.0;
    for u2 in (0..n_users).filter(|&i| i != u) {
        for a2 in (0..n_articles).filter(|&j| j != a) {
            four_cycle += at(u, a2).min(at(u2, a2)).min(at(u2, a));
        }
    }
    StatVector::from_raw(repetition, popularity, activity, four_cycle)
}

/// All five statistics of `(user, article)` at `t` from the event prefix.
pub fn stat_vector(
    prefix: &[Event],
    n_users: usize,
    n_articles: usize,
    user: UserId,
    article: ArticleId,
    t: Timestamp,
    cfg: &DecayConfig,
) -> StatVector {
    let w = weight_matrix(prefix, n_users, n_articles, t, cfg);
    stat_vector_from_weights(&w, n_users, n_articles, user, article)
}
