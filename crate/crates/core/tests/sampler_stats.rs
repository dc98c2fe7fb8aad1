use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remkit::sampler::{sample_controls, sample_events, DrawStatus};
use remkit::{ArticleId, SampleConfig, UserId};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

#[test]
fn inclusion_count_is_binomial() {
    let n = 1_000_000u64;
    let p = 1e-4;
    let binomial = Binomial::new(p, n).unwrap();
    let (lo, hi) = (binomial.inverse_cdf(0.0005), binomial.inverse_cdf(0.9995));
    assert!(lo >= 40 && hi <= 170, "interval [{lo}, {hi}]");
    for seed in 0..20 {
        let cfg = SampleConfig::new(p, 5, seed).unwrap();
        let k = sample_events(n as usize, &cfg)
            .iter()
            .filter(|&&b| b)
            .count() as u64;
        assert!(
            (lo..=hi).contains(&k),
            "seed {seed}: {k} outside [{lo}, {hi}]"
        );
    }
}

#[test]
fn controls_are_uniform() {
    // 4 x 5 risk set, 3 controls per draw, 1e5 draws: counts over the 19
    // non-case dyads should look uniform.
    let (nu, na, m) = (4usize, 5usize, 3usize);
    let case = (UserId(2), ArticleId(3));
    let mut counts = vec![0u64; nu * na];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 100_000;
    for _ in 0..draws {
        let d = sample_controls(nu, na, case, m, &mut rng);
        assert_eq!(d.status, DrawStatus::Sampled);
        for (u, a) in d.controls {
            counts[u.index() * na + a.index()] += 1;
        }
    }
    assert_eq!(counts[2 * na + 3], 0);
    let expected = (draws * m) as f64 / (nu * na - 1) as f64;
    let stat: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 2 * na + 3)
        .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((nu * na - 2) as f64)
        .unwrap()
        .inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");

    // The index-sampling branch (more than half of the dyads requested).
    let m = 15;
    let mut counts = vec![0u64; nu * na];
    for _ in 0..draws {
        for (u, a) in sample_controls(nu, na, case, m, &mut rng).controls {
            counts[u.index() * na + a.index()] += 1;
        }
    }
    let expected = (draws * m) as f64 / 19.0;
    let stat: f64 = counts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 2 * na + 3)
        .map(|(_, &c)| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn selection_frequency_on_large_risk_set() {
    // |U| = |A| = 100, m = 5: every non-case dyad has probability 5/9999 per
    // draw. Check the dyads next to the case in index order, where an
    // off-by-one in skipping the case would show, and a few distant ones.
    let (n, m, reps) = (100usize, 5usize, 10_000usize);
    let case = (UserId(40), ArticleId(60));
    let watched = [
        (40, 59),
        (40, 61),
        (39, 60),
        (41, 60),
        (0, 0),
        (99, 99),
        (40, 99),
        (41, 0),
    ];
    let mut counts = [0usize; 8];
    let mut total = vec![0u32; n * n];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..reps {
        for (u, a) in sample_controls(n, n, case, m, &mut rng).controls {
            total[u.index() * n + a.index()] += 1;
            if let Some(k) = watched.iter().position(|&w| w == (u.0, a.0)) {
                counts[k] += 1;
            }
        }
    }
    let q = m as f64 / (n * n - 1) as f64;
    let mean = reps as f64 * q;
    let sd = (reps as f64 * q * (1.0 - q)).sqrt();
    for (w, &c) in watched.iter().zip(&counts) {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{w:?}: {c}");
    }
    assert_eq!(total[40 * n + 60], 0);
    assert_eq!(total.iter().map(|&c| c as usize).sum::<usize>(), reps * m);
}
