use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfsmooth::io::{read_archive, write_archive, Config};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mfsmooth"));
    c.env_remove("RUST_LOG");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Simulates the smoke instance into `dir`.
fn simulate(dir: &Path) {
    let cfg = configs().join("smoke.toml");
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(dir)]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("T_b=10"), "{}", text(&o));
}

fn smooth(dir: &Path, backend: &str, draws: usize, out: &Path) -> Output {
    let cfg = configs().join("smoke.toml");
    run(&[
        "smooth",
        "--config",
        p(&cfg),
        "--data",
        p(&dir.join("data.csv")),
        "--params",
        p(&dir.join("params.json")),
        "--backend",
        backend,
        "--draws",
        &draws.to_string(),
        "--seed",
        "42",
        "--out",
        p(out),
    ])
}

#[test]
fn smoke_simulation_writes_files() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    for f in ["data.csv", "latent.csv", "params.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let data = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 13);
    assert_eq!(data.lines().next().unwrap(), "m1,m2,m3,q1");
    assert!(data
        .lines()
        .last()
        .unwrap()
        .starts_with(|c: char| c == '-' || c.is_ascii_digit()));
}

#[test]
fn backends_agree_through_compare() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    let a = dir.path().join("baseline.mfsd");
    let b = dir.path().join("adaptive.mfsd");
    let c = dir.path().join("blocked.mfsd");
    for (backend, out) in [("baseline", &a), ("adaptive", &b), ("blocked", &c)] {
        let o = smooth(dir.path(), backend, 25, out);
        assert!(o.status.success(), "{}", text(&o));
        assert!(text(&o).contains("ms/draw"));
    }
    for other in [&b, &c] {
        let o = run(&["compare", p(&a), p(other), "--tol", "1e-8"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    }
    let o = run(&["compare", p(&a), p(&a)]);
    assert!(
        text(&o).contains("max relative difference 0.000e0"),
        "{}",
        text(&o)
    );
}

#[test]
fn perturbed_archive_fails_with_location() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    let a = dir.path().join("a.mfsd");
    assert!(smooth(dir.path(), "adaptive", 3, &a).status.success());
    let mut arch = read_archive(std::fs::File::open(&a).unwrap()).unwrap();
    arch.draws[1][(11, 2)] += 1e-3;
    let b = dir.path().join("b.mfsd");
    let (t, n) = arch.shape().unwrap();
    write_archive(
        std::fs::File::create(&b).unwrap(),
        t,
        n,
        arch.n_q,
        &arch.draws,
    )
    .unwrap();
    let o = run(&["compare", p(&a), p(&b)]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(
        text(&o).contains("draw 1, t 11, variable 2"),
        "{}",
        text(&o)
    );
}

#[test]
fn shape_mismatch_exits_2() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    let a = dir.path().join("a.mfsd");
    let b = dir.path().join("b.mfsd");
    assert!(smooth(dir.path(), "adaptive", 3, &a).status.success());
    assert!(smooth(dir.path(), "adaptive", 2, &b).status.success());
    let o = run(&["compare", p(&a), p(&b)]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("shape mismatch"));
}

#[test]
fn zero_draws_give_an_empty_archive() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    let a = dir.path().join("empty.mfsd");
    let o = smooth(dir.path(), "baseline", 0, &a);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let arch = read_archive(std::fs::File::open(&a).unwrap()).unwrap();
    assert!(arch.draws.is_empty());
}

#[test]
fn missing_data_file_exits_2() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    std::fs::remove_file(dir.path().join("data.csv")).unwrap();
    let o = smooth(dir.path(), "adaptive", 1, &dir.path().join("x.mfsd"));
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("data.csv"), "{}", text(&o));
}

#[test]
fn csv_output_is_long_format() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path());
    let out = dir.path().join("draws.csv");
    let o = smooth(dir.path(), "oracle", 2, &out);
    assert!(o.status.success(), "{}", text(&o));
    let s = std::fs::read_to_string(&out).unwrap();
    let mut lines = s.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# backend=oracle seed=42 param_hash="));
    assert_eq!(lines.next().unwrap(), "draw,t,variable,value");
    assert_eq!(lines.count(), 2 * 12 * 4);
}

#[test]
fn bad_config_names_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nn_m = 3\nn_q = 1\np = 3\nlag = 4\n").unwrap();
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let t = text(&o);
    assert!(t.contains("lag") && t.contains("line 5"), "{t}");
}

#[test]
fn unknown_backend_is_a_usage_error() {
    let o = run(&[
        "smooth",
        "--config",
        "x",
        "--data",
        "x",
        "--params",
        "x",
        "--backend",
        "dense",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_cell_bench_writes_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("grid.toml");
    std::fs::write(
        &cfg,
        "[bench]\nn = [8]\nn_q = [1]\np = [3]\nt = 40\nbackends = [\"adaptive\"]\nreps = 2\nwarmup = 1\n",
    )
    .unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&["bench", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o));
    let s = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = s.lines().collect();
    assert!(lines[0].starts_with("# os="));
    assert_eq!(lines[1], "n,n_q,p,backend,ms_per_iter,reps");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("8,1,3,adaptive,"));
    assert!(dir.path().join("t_relative.csv").exists());
}

#[test]
fn shipped_configs_are_valid() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = Config::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if let Some(b) = &cfg.bench {
            b.validate().unwrap();
            assert_eq!(b.t, 500);
        }
        if let Some(m) = &cfg.model {
            m.aggregation().unwrap();
        }
    }
    let fig3 = Config::load(&configs().join("fig3.toml"))
        .unwrap()
        .bench
        .unwrap();
    assert_eq!(fig3.n, (1..=12).map(|k| 10 * k).collect::<Vec<_>>());
    assert_eq!(fig3.n_q, vec![1, 3]);
    assert_eq!(fig3.p, vec![6]);
    let fig4 = Config::load(&configs().join("fig4.toml"))
        .unwrap()
        .bench
        .unwrap();
    assert_eq!(fig4.p, (3..=13).collect::<Vec<_>>());
    assert_eq!(fig4.n, vec![20, 120]);
}
