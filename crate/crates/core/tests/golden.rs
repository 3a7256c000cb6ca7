use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use mfsmooth::io::{matrix_hash, read_golden, write_golden, Golden};
use mfsmooth::linalg::max_rel_diff;
use mfsmooth::oracle::oracle_joint;
use mfsmooth::simsmooth::{draw_latent, param_hash, Backend};
use mfsmooth::synth::{make_instance, Instance};
use mfsmooth::{build_aggregation, detect_pattern, AggregationScheme, Calendar, InitMode, Plan};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BLESS_ENV: &str = "MFSMOOTH_BLESS";

struct Case {
    name: &'static str,
    seed: u64,
    n_m: usize,
    n_q: usize,
    p: usize,
    t_len: usize,
    edge: &'static [usize],
    scheme: fn() -> AggregationScheme,
}

const CASES: &[Case] = &[
    Case {
        name: "four_variable",
        seed: 101,
        n_m: 3,
        n_q: 1,
        p: 3,
        t_len: 18,
        edge: &[0, 1, 2],
        scheme: AggregationScheme::average,
    },
    Case {
        name: "two_quarterly",
        seed: 202,
        n_m: 4,
        n_q: 2,
        p: 4,
        t_len: 30,
        edge: &[0, 1, 3, 3],
        scheme: AggregationScheme::average,
    },
    Case {
        name: "skip_sampled",
        seed: 303,
        n_m: 2,
        n_q: 1,
        p: 2,
        t_len: 24,
        edge: &[1, 2],
        scheme: AggregationScheme::skip_sampling,
    },
];

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.csv"))
}

fn build(case: &Case) -> (Instance, Plan, String) {
    let agg = build_aggregation(&(case.scheme)(), case.n_m, case.n_q, case.p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let inst = make_instance(
        &mut rng,
        &agg,
        case.t_len,
        case.edge,
        0.95,
        Calendar::default(),
    )
    .unwrap();
    let pat = detect_pattern(&inst.data, case.p, agg.p_q()).unwrap();
    let plan = Plan::new(inst.params.clone(), agg, pat, InitMode::Stationary).unwrap();
    let hash = format!(
        "{}:{}",
        &param_hash(&plan)[..16],
        &matrix_hash(inst.data.values())[..16]
    );
    (inst, plan, hash)
}

fn check(name: &str, case: &Case, hash: &str, names: &[String], got: &DMatrix<f64>, tol: f64) {
    let path = golden_path(name);
    if std::env::var_os(BLESS_ENV).is_some() {
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), case.seed.to_string());
        meta.insert("instance".into(), hash.to_owned());
        meta.insert(
            "shape".into(),
            format!(
                "n_m={} n_q={} p={} T={}",
                case.n_m, case.n_q, case.p, case.t_len
            ),
        );
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let g = Golden {
            meta,
            names: names.to_vec(),
            values: got.clone(),
        };
        write_golden(File::create(&path).unwrap(), &g).unwrap();
        return;
    }
    let g = read_golden(BufReader::new(File::open(&path).unwrap_or_else(|e| {
        panic!(
            "{}: {e}; run with {BLESS_ENV}=1 to create it",
            path.display()
        )
    })))
    .unwrap();
    assert_eq!(g.meta["seed"], case.seed.to_string());
    assert_eq!(
        g.meta["instance"], hash,
        "{name}: instance generator changed"
    );
    assert_eq!(g.names, names);
    let (d, at) = max_rel_diff(&g.values, got);
    assert!(d <= tol, "{name}: {d:.3e} at {at:?}");
}

#[test]
fn conditional_means_match_golden() {
    for case in CASES {
        let (inst, plan, hash) = build(case);
        let y = inst.data.values();
        let names = inst.data.names().to_vec();
        let joint =
            oracle_joint(plan.params(), plan.agg(), plan.pattern(), y, plan.init()).unwrap();
        check(case.name, case, &hash, &names, &joint.output.means, 1e-12);
        for b in Backend::FAST {
            let m = b.smooth(&plan, y).unwrap().means;
            check(case.name, case, &hash, &names, &m, 1e-10);
        }
        check(
            &format!("{}_variance", case.name),
            case,
            &hash,
            &names,
            &joint.output.variances,
            1e-12,
        );
    }
}

#[test]
fn seeded_draws_match_golden() {
    for case in CASES {
        let (inst, plan, hash) = build(case);
        let y = inst.data.values();
        let names = inst.data.names().to_vec();
        for b in Backend::FAST {
            let d = draw_latent(&plan, y, b, case.seed).unwrap();
            check(
                &format!("{}_draw", case.name),
                case,
                &hash,
                &names,
                &d.x,
                1e-10,
            );
        }
    }
}
