#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remkit::{read_events, EventFormat, EventLog};

/// A random ordered stream on up to `n_users x n_articles` nodes with
/// integer gaps in `0..max_gap` (zero gaps give same-second ties).
pub fn random_stream(
    seed: u64,
    n_events: usize,
    n_users: usize,
    n_articles: usize,
    max_gap: i64,
) -> EventLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 1_000_000i64;
    let mut text = String::new();
    for _ in 0..n_events {
        t += rng.gen_range(0..max_gap);
        let u = rng.gen_range(0..n_users);
        let a = rng.gen_range(0..n_articles);
        text.push_str(&format!("u{u},a{a},{t}\n"));
    }
    read_events(text.as_bytes(), &EventFormat::default()).unwrap()
}
