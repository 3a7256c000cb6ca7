use mfsmooth::linalg::max_rel_diff;
use mfsmooth::oracle::{oracle_joint, oracle_smooth, SMOOTH_CAP};
use mfsmooth::simsmooth::{draw_latent, draw_many, gen_pseudo, Backend, THREADS_ENV};
use mfsmooth::synth::{make_instance, random_edge};
use mfsmooth::{
    build_aggregation, detect_pattern, AggregationScheme, Calendar, CovFactors, InitMode, Plan,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(
    seed: u64,
    n_m: usize,
    n_q: usize,
    p: usize,
    t_len: usize,
    edge: &[usize],
) -> (Plan, DMatrix<f64>) {
    let scheme = if p < 3 {
        AggregationScheme::skip_sampling()
    } else {
        AggregationScheme::average()
    };
    let agg = build_aggregation(&scheme, n_m, n_q, p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = make_instance(&mut rng, &agg, t_len, edge, 0.95, Calendar::default()).unwrap();
    let pat = detect_pattern(&inst.data, p, agg.p_q()).unwrap();
    let plan = Plan::new(inst.params, agg, pat, InitMode::Stationary).unwrap();
    (plan, inst.data.values().clone())
}

#[test]
fn pseudo_samples_have_zero_mean() {
    let (plan, _) = instance(3, 2, 1, 3, 20, &[0, 1]);
    let k = 10_000;
    let t = 15;
    let n = 3;
    let (mut s, mut s2) = (vec![0.0; n], vec![0.0; n]);
    for stream in 0..k {
        let ps = gen_pseudo(&plan, 99, stream);
        for j in 0..n {
            let v = ps.x[(t, j)];
            s[j] += v;
            s2[j] += v * v;
        }
    }
    for j in 0..n {
        let mean = s[j] / k as f64;
        let var = s2[j] / k as f64 - mean * mean;
        let z = mean / (var / k as f64).sqrt();
        assert!(z.abs() < 4.0, "variable {j}: mean {mean:.4}, z {z:.2}");
    }
}

#[test]
fn single_draw_matches_draw_latent() {
    let (plan, y) = instance(4, 3, 1, 3, 24, &[0, 1, 2]);
    for b in Backend::FAST {
        let one = draw_many(&plan, &y, b, 1, 17).unwrap();
        assert_eq!(one[0], draw_latent(&plan, &y, b, 17).unwrap());
    }
}

#[test]
fn thread_cap_does_not_change_draws() {
    let (plan, y) = instance(5, 4, 1, 4, 30, &[0, 1, 2, 3]);
    std::env::set_var(THREADS_ENV, "1");
    let a = draw_many(&plan, &y, Backend::Adaptive, 12, 5).unwrap();
    std::env::set_var(THREADS_ENV, "3");
    let b = draw_many(&plan, &y, Backend::Adaptive, 12, 5).unwrap();
    std::env::remove_var(THREADS_ENV);
    assert_eq!(a, b);
    let c = draw_many(&plan, &y, Backend::Adaptive, 12, 6).unwrap();
    assert_ne!(a[0].x, c[0].x);
}

#[test]
fn small_noise_draws_approach_the_smoothed_mean() {
    let (plan, y) = instance(6, 3, 1, 3, 24, &[0, 1, 2]);
    let n = plan.params().n();
    let tiny = plan
        .params()
        .with_cov_factors(CovFactors::Constant(DMatrix::identity(n, n) * 1e-9))
        .unwrap();
    let plan = Plan::new(
        tiny,
        plan.agg().clone(),
        plan.pattern().clone(),
        InitMode::Stationary,
    )
    .unwrap();
    for b in Backend::FAST {
        let mean = b.smooth(&plan, &y).unwrap().means;
        let draw = draw_latent(&plan, &y, b, 1).unwrap().x;
        let (d, _) = max_rel_diff(&mean, &draw);
        assert!(d < 1e-6, "{b}: {d:.2e}");
    }
}

#[test]
fn every_monthly_variable_missing_at_the_edge() {
    for (seed, p) in [(7u64, 3usize), (8, 4), (9, 2)] {
        let (plan, y) = instance(seed, 3, 1, p, 30, &[2, 2, 2]);
        assert_eq!(plan.pattern().unobserved(29).len(), 3);
        let joint =
            oracle_joint(plan.params(), plan.agg(), plan.pattern(), &y, plan.init()).unwrap();
        for b in Backend::FAST {
            let m = b.smooth(&plan, &y).unwrap().means;
            let (d, _) = max_rel_diff(&joint.output.means, &m);
            assert!(d < 1e-10, "p={p} {b}: {d:.2e}");
        }
    }
}

#[test]
fn balanced_monthly_only_smoother_returns_observations() {
    let (plan, y) = instance(10, 3, 0, 2, 20, &[0, 0, 0]);
    let sm = oracle_smooth(
        plan.params(),
        plan.agg(),
        plan.pattern(),
        &y,
        plan.init(),
        SMOOTH_CAP,
    )
    .unwrap();
    assert_eq!(sm.output.means, y);
    for b in Backend::FAST {
        assert_eq!(b.smooth(&plan, &y).unwrap().means, y);
    }
}

fn shapes() -> impl Strategy<Value = (u64, usize, usize, usize, usize, usize)> {
    (
        0u64..10_000,
        1usize..5,
        prop_oneof![Just(1usize), Just(2)],
        2usize..5,
        14usize..30,
        1usize..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backends_and_oracle_agree((seed, n_m, n_q, p, t_len, len) in shapes()) {
        prop_assume!((n_m + n_q) * t_len <= 200);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edge = random_edge(&mut rng, n_m, len);
        let (plan, y) = instance(seed, n_m, n_q, p, t_len, &edge);
        let joint = oracle_joint(plan.params(), plan.agg(), plan.pattern(), &y, plan.init()).unwrap();
        let mut draws = vec![];
        for b in Backend::FAST {
            let m = b.smooth(&plan, &y).unwrap().means;
            prop_assert!(max_rel_diff(&joint.output.means, &m).0 < 1e-8);
            draws.push(draw_latent(&plan, &y, b, seed).unwrap().x);
        }
        for d in &draws[1..] {
            prop_assert!(max_rel_diff(&draws[0], d).0 < 1e-8);
        }
    }
}
