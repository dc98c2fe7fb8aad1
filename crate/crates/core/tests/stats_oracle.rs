mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remkit::oracle;
use remkit::stats::{four_cycle_raw, FourCycleStrategy, RiskSetRows, StatEvaluator};
use remkit::{ArticleId, DecayConfig, PastEventNetwork, StatVector, UserId};

fn assert_close(got: &StatVector, want: &StatVector, context: &str) {
    for (g, w) in got.to_array().iter().zip(want.to_array()) {
        assert!((g - w).abs() < 1e-9, "{context}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn statistics_match_oracle(
        seed in any::<u64>(),
        n_events in 1usize..250,
        n_users in 1usize..10,
        n_articles in 1usize..10,
        halflife in 10.0f64..300.0,
    ) {
        let log = common::random_stream(seed, n_events, n_users, n_articles, 30);
        let cfg = DecayConfig::new(halflife, 0.01).unwrap();
        let (nu, na) = (log.universe.n_users(), log.universe.n_articles());
        let mut net = PastEventNetwork::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for (i, e) in log.events.iter().enumerate() {
            if rng.gen_bool(0.15) {
                let w = oracle::weight_matrix(&log.events[..i], nu, na, e.time, &cfg);
                let view = net.view(e.time).unwrap();
                // Cutoff 0 forces the cost-based choice among all three.
                let evaluators = [StatEvaluator::default(), StatEvaluator::new(0.0)];
                for _ in 0..5 {
                    let (u, a) = (UserId(rng.gen_range(0..nu) as u32), ArticleId(rng.gen_range(0..na) as u32));
                    let want = oracle::stat_vector_from_weights(&w, nu, na, u, a);
                    for ev in &evaluators {
                        assert_close(&ev.stat_vector(&view, u, a), &want, "evaluator");
                    }
                    assert_close(&remkit::stats::stat_vector(&view, u, a), &want, "free function");
                }
                let mut table = RiskSetRows::new(view, na);
                table.fill(nu, &mut rows);
                for u in 0..nu {
                    for a in 0..na {
                        let (user, article) = (UserId(u as u32), ArticleId(a as u32));
                        let want = oracle::stat_vector_from_weights(&w, nu, na, user, article);
                        assert_close(&rows[u * na + a], &want, "risk-set rows");
                    }
                }
            }
            net.apply_event(e).unwrap();
        }
    }

    #[test]
    fn raw_statistics_decay_monotonically(
        seed in any::<u64>(),
        n_events in 1usize..150,
    ) {
        let log = common::random_stream(seed, n_events, 5, 5, 20);
        let mut net = PastEventNetwork::new(DecayConfig::new(50.0, 0.01).unwrap());
        for e in &log.events {
            net.apply_event(e).unwrap();
        }
        let start = log.events.last().unwrap().time;
        let mut previous: Option<Vec<[f64; 4]>> = None;
        for dt in [0, 1, 10, 40, 100, 300, 400] {
            let view = net.view(start + dt).unwrap();
            let mut raw = Vec::new();
            for u in 0..5 {
                for a in 0..5 {
                    let (user, article) = (UserId(u), ArticleId(a));
                    raw.push([
                        view.weight(user, article),
                        view.weighted_in(article),
                        view.weighted_out(user),
                        four_cycle_raw(&view, user, article, FourCycleStrategy::Pairs),
                    ]);
                }
            }
            if let Some(prev) = &previous {
                for (now, before) in raw.iter().zip(prev) {
                    for k in 0..4 {
                        prop_assert!(now[k] <= before[k] + 1e-12);
                    }
                }
            }
            previous = Some(raw);
        }
    }
}

#[test]
fn every_strategy_matches_oracle_on_dense_network() {
    let log = common::random_stream(17, 600, 12, 12, 3);
    let cfg = DecayConfig::new(400.0, 0.01).unwrap();
    let mut net = PastEventNetwork::new(cfg);
    for e in &log.events {
        net.apply_event(e).unwrap();
    }
    let t = log.events.last().unwrap().time;
    let (nu, na) = (log.universe.n_users(), log.universe.n_articles());
    let w = oracle::weight_matrix(&log.events, nu, na, t, &cfg);
    let view = net.view(t).unwrap();
    for u in 0..nu {
        for a in 0..na {
            let (user, article) = (UserId(u as u32), ArticleId(a as u32));
            let want = oracle::stat_vector_from_weights(&w, nu, na, user, article).four_cycle;
            for s in [
                FourCycleStrategy::Pairs,
                FourCycleStrategy::FromUser,
                FourCycleStrategy::FromArticle,
            ] {
                let got = four_cycle_raw(&view, user, article, s).ln_1p();
                assert!((got - want).abs() < 1e-9, "{s:?} at ({u},{a})");
            }
        }
    }
}
