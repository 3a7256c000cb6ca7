use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mfsmooth::bench::bench_instance;
use mfsmooth::simsmooth::{draw_from_pseudo, draw_many, gen_pseudo, Backend, THREADS_ENV};
use mfsmooth::synth::MissingRecipe;

fn backends(c: &mut Criterion) {
    let mut g = c.benchmark_group("backend");
    g.sample_size(10);
    for (n, p) in [(40, 6), (120, 6)] {
        let (plan, y) = bench_instance(n, 1, p, 500, MissingRecipe::Bracket, 0.95, 1).unwrap();
        let pseudo = gen_pseudo(&plan, 1, 0);
        for b in Backend::FAST {
            g.bench_with_input(
                BenchmarkId::new(b.name(), format!("n{n}_p{p}")),
                &b,
                |bch, &b| bch.iter(|| black_box(draw_from_pseudo(&plan, &y, b, &pseudo).unwrap())),
            );
        }
    }
    g.finish();
}

/// 32 draws with one worker thread against the default pool. Building with
/// `--no-default-features` replaces the pool by a plain loop.
fn draws(c: &mut Criterion) {
    let mut g = c.benchmark_group("draw_many");
    g.sample_size(10);
    let (plan, y) = bench_instance(40, 1, 6, 500, MissingRecipe::Bracket, 0.95, 2).unwrap();
    let parallel = if cfg!(feature = "parallel") {
        "pool"
    } else {
        "sequential"
    };
    for (label, cap) in [("one_thread", Some("1")), (parallel, None)] {
        match cap {
            Some(k) => std::env::set_var(THREADS_ENV, k),
            None => std::env::remove_var(THREADS_ENV),
        }
        g.bench_function(label, |bch| {
            bch.iter(|| black_box(draw_many(&plan, &y, Backend::Adaptive, 32, 3).unwrap()))
        });
    }
    std::env::remove_var(THREADS_ENV);
    g.finish();
}

criterion_group!(benches, backends, draws);
criterion_main!(benches);
