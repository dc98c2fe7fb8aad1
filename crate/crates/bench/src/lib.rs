//! Shared fixtures for the benchmarks.

use remkit::generator::{simulate, SimConfig};
use remkit::EventLog;

/// A simulated stream on `n_users x n_articles` with mild dependence on
/// every statistic.
pub fn stream(n_users: usize, n_articles: usize, n_events: usize, seed: u64) -> EventLog {
    let cfg = SimConfig::new(
        n_users,
        n_articles,
        [1.0, 0.8, 0.6, 0.3, -0.1],
        n_events,
        seed,
    );
    simulate(&cfg).expect("valid fixture config")
}
