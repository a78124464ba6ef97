use criterion::{black_box, criterion_group, criterion_main, Criterion};
use replab_core::stats::{chi2_p_upper, f_p_upper, t_p_two_sided};
use replab_core::{one_way_anova, two_way_anova, welch_t_test};

fn bench_kernels(c: &mut Criterion) {
    c.bench_function("t_p_two_sided", |b| {
        b.iter(|| t_p_two_sided(black_box(2.1), black_box(37.0)))
    });
    c.bench_function("f_p_upper", |b| {
        b.iter(|| f_p_upper(black_box(4.7), black_box(2.0), black_box(120.0)))
    });
    c.bench_function("chi2_p_upper", |b| {
        b.iter(|| chi2_p_upper(black_box(6.5), black_box(3.0)))
    });
}

fn bench_tests(c: &mut Criterion) {
    let a: Vec<f64> = (0..180).map(|i| 4.0 + (i % 7) as f64 * 0.3).collect();
    let b: Vec<f64> = (0..182).map(|i| 3.6 + (i % 5) as f64 * 0.4).collect();
    c.bench_function("welch_t_362", |bench| {
        bench.iter(|| welch_t_test(black_box(&a), black_box(&b)).unwrap())
    });

    let groups: Vec<Vec<f64>> = (0..3)
        .map(|g| (0..120).map(|i| g as f64 + (i % 9) as f64 * 0.25).collect())
        .collect();
    c.bench_function("one_way_anova_3x120", |bench| {
        bench.iter(|| one_way_anova(black_box(&groups)).unwrap())
    });

    let rows: Vec<(String, String, f64)> = (0..240)
        .map(|i| {
            (
                if i % 2 == 0 { "a1" } else { "a2" }.to_string(),
                if (i / 2) % 2 == 0 { "b1" } else { "b2" }.to_string(),
                (i % 11) as f64 * 0.5 + (i % 2) as f64,
            )
        })
        .collect();
    c.bench_function("two_way_anova_240", |bench| {
        bench.iter(|| two_way_anova(black_box(&rows)).unwrap())
    });
}

criterion_group!(benches, bench_kernels, bench_tests);
criterion_main!(benches);
