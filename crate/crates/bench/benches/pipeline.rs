use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use remkit::estimator::{fit, loglik_grad_hess};
use remkit::stats::{four_cycle_raw, FourCycleStrategy, RiskSetRows};
use remkit::{
    replay, ArticleId, FitOptions, PastEventNetwork, ReplayConfig, RiskSet, SampleConfig, UserId,
};
use remkit_bench::stream;

fn bench_replay(c: &mut Criterion) {
    let log = stream(30, 30, 5_000, 1);
    let mut group = c.benchmark_group("replay");
    group.sample_size(10);
    for m in [5usize, 50, 899] {
        let cfg = ReplayConfig {
            risk_set: RiskSet::Closed {
                n_users: 30,
                n_articles: 30,
            },
            ..ReplayConfig::default()
        };
        let sample = SampleConfig::new(1.0, m, 0).unwrap();
        group.bench_with_input(BenchmarkId::new("m", m), &sample, |b, s| {
            b.iter(|| replay(&log.events, std::slice::from_ref(s), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_four_cycle(c: &mut Criterion) {
    let log = stream(60, 60, 20_000, 2);
    let mut net = PastEventNetwork::new(Default::default());
    for e in &log.events {
        net.apply_event(e).unwrap();
    }
    let t = log.events.last().unwrap().time + 1;
    let view = net.view(t).unwrap();
    let mut group = c.benchmark_group("four_cycle");
    for (name, strategy) in [
        ("pairs", FourCycleStrategy::Pairs),
        ("from_user", FourCycleStrategy::FromUser),
        ("from_article", FourCycleStrategy::FromArticle),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut total = 0.0;
                for u in 0..60 {
                    total += four_cycle_raw(&view, UserId(u), ArticleId(u % 7), strategy);
                }
                total
            })
        });
    }
    group.bench_function("risk_set_rows", |b| {
        let mut rows = Vec::new();
        b.iter(|| {
            let mut table = RiskSetRows::new(view, 60);
            table.fill(60, &mut rows);
            rows.len()
        })
    });
    group.finish();
}

fn bench_estimator(c: &mut Criterion) {
    let log = stream(30, 30, 5_000, 3);
    let cfg = ReplayConfig::default();
    let sample = SampleConfig::new(1.0, 20, 0).unwrap();
    let table = replay(&log.events, &[sample], &cfg).unwrap().remove(0);
    let design = table.design();
    let theta = [1.0, 0.8, 0.6, 0.3, -0.1];
    let mut group = c.benchmark_group("estimator");
    group.bench_function("loglik_grad_hess", |b| {
        b.iter(|| loglik_grad_hess(&design, &theta))
    });
    group.sample_size(20);
    group.bench_function("fit", |b| {
        b.iter(|| fit(&design, &FitOptions::default()).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_replay, bench_four_cycle, bench_estimator);
criterion_main!(benches);
