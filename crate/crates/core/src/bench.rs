//! Timing grids over model size and lag length.
//!
//! Each cell simulates one instance with a two-period ragged edge, generates
//! every pseudo sample up front and times only the smoothing of
//! `warmup + reps` draws, reporting the median of the last `reps`.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::InitMode;
use crate::model::aggregation::{build_aggregation, AggregationScheme};
use crate::model::pattern::{detect_pattern, Calendar};
use crate::plan::Plan;
use crate::simsmooth::{draw_from_pseudo, gen_pseudo, Backend};
use crate::synth::{make_instance, two_period_edge, MissingRecipe};

/// A timing grid: every combination of `n`, `p` and backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    #[serde(default = "default_n_q")]
    pub n_q: Vec<usize>,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default)]
    pub recipe: MissingRecipe,
    #[serde(default = "default_backends")]
    pub backends: Vec<Backend>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub radius_bound: f64,
}

fn default_n_q() -> Vec<usize> {
    vec![1]
}
fn default_t() -> usize {
    500
}
fn default_backends() -> Vec<Backend> {
    Backend::FAST.to_vec()
}
fn default_reps() -> usize {
    20
}
fn default_warmup() -> usize {
    3
}
fn default_radius() -> f64 {
    0.95
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.n_q.is_empty() || self.p.is_empty() || self.backends.is_empty()
        {
            return Err(Error::Config(
                "bench grid needs at least one n, n_q, p and backend".into(),
            ));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.backends.contains(&Backend::Oracle) {
            return Err(Error::Config(
                "the oracle backend is not benchmarked".into(),
            ));
        }
        for &p in &self.p {
            if p < 3 {
                return Err(Error::Config(format!("p = {p}: averaging needs p >= 3")));
            }
            if self.t < 2 * p + 4 {
                return Err(Error::Config(format!(
                    "T = {} is too short for p = {p}",
                    self.t
                )));
            }
        }
        for &n in &self.n {
            for &n_q in &self.n_q {
                two_period_edge(n.saturating_sub(n_q), n_q, self.recipe).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("n = {n}, n_q = {n_q}: {m}")),
                    e => e,
                })?;
            }
        }
        Ok(())
    }
}

/// One timed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub n_q: usize,
    pub p: usize,
    pub backend: Backend,
    pub ms_per_iter: f64,
    pub reps: usize,
}

/// Plan and data for one grid cell.
pub fn bench_instance(
    n: usize,
    n_q: usize,
    p: usize,
    t_len: usize,
    recipe: MissingRecipe,
    radius_bound: f64,
    seed: u64,
) -> Result<(Plan, DMatrix<f64>)> {
    let n_m = n - n_q;
    let agg = build_aggregation(&AggregationScheme::average(), n_m, n_q, p)?;
    let edge = two_period_edge(n_m, n_q, recipe)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inst = make_instance(
        &mut rng,
        &agg,
        t_len,
        &edge,
        radius_bound,
        Calendar::default(),
    )?;
    let pattern = detect_pattern(&inst.data, p, agg.p_q())?;
    let plan = Plan::new(inst.params, agg, pattern, InitMode::Stationary)?;
    Ok((plan, inst.data.values().clone()))
}

/// Median milliseconds per draw of `backend`, and every timed sample.
pub fn time_backend(
    plan: &Plan,
    y: &DMatrix<f64>,
    backend: Backend,
    reps: usize,
    warmup: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let pseudo: Vec<_> = (0..warmup + reps)
        .map(|k| gen_pseudo(plan, seed, k as u64))
        .collect();
    let mut times = Vec::with_capacity(reps);
    for (k, ps) in pseudo.iter().enumerate() {
        let start = Instant::now();
        let x = draw_from_pseudo(plan, y, backend, ps)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(&x);
        if k >= warmup {
            times.push(ms);
        }
    }
    Ok((median(&mut times.clone()), times))
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let k = xs.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Runs every cell of the grid; `progress` sees each row as it completes.
pub fn run_grid(cfg: &BenchConfig, mut progress: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rows = vec![];
    for &p in &cfg.p {
        for &n_q in &cfg.n_q {
            for &n in &cfg.n {
                let (plan, y) =
                    bench_instance(n, n_q, p, cfg.t, cfg.recipe, cfg.radius_bound, cfg.seed)?;
                for &backend in &cfg.backends {
                    let (ms, _) = time_backend(&plan, &y, backend, cfg.reps, cfg.warmup, cfg.seed)?;
                    let row = BenchRow {
                        n,
                        n_q,
                        p,
                        backend,
                        ms_per_iter: ms,
                        reps: cfg.reps,
                    };
                    progress(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

/// Operating system, architecture, logical CPUs and CPU model if known.
pub fn machine_info() -> String {
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown".into());
    format!(
        "os={} arch={} logical_cpus={cpus} cpu=\"{model}\" threads_used=1",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Long-format timing CSV with a commented machine header.
pub fn write_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "# {}", machine_info())?;
    writeln!(w, "n,n_q,p,backend,ms_per_iter,reps")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{}",
            r.n, r.n_q, r.p, r.backend, r.ms_per_iter, r.reps
        )?;
    }
    Ok(())
}

/// Cost of each backend relative to the baseline in the same cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeCost {
    pub n: usize,
    pub n_q: usize,
    pub p: usize,
    pub adaptive: Option<f64>,
    pub blocked: Option<f64>,
}

pub fn relative_costs(rows: &[BenchRow]) -> Vec<RelativeCost> {
    let mut out: Vec<RelativeCost> = vec![];
    let find = |n: usize, n_q: usize, p: usize, b: Backend| {
        rows.iter()
            .find(|r| r.n == n && r.n_q == n_q && r.p == p && r.backend == b)
            .map(|r| r.ms_per_iter)
    };
    for r in rows {
        if out
            .iter()
            .any(|c| c.n == r.n && c.n_q == r.n_q && c.p == r.p)
        {
            continue;
        }
        let base = find(r.n, r.n_q, r.p, Backend::Baseline);
        let ratio = |b| match (find(r.n, r.n_q, r.p, b), base) {
            (Some(x), Some(b0)) if b0 > 0.0 => Some(x / b0),
            _ => None,
        };
        out.push(RelativeCost {
            n: r.n,
            n_q: r.n_q,
            p: r.p,
            adaptive: ratio(Backend::Adaptive),
            blocked: ratio(Backend::Blocked),
        });
    }
    out
}

pub fn write_relative_csv<W: Write>(mut w: W, costs: &[RelativeCost]) -> Result<()> {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    writeln!(w, "n,n_q,p,adaptive_over_baseline,blocked_over_baseline")?;
    for c in costs {
        writeln!(
            w,
            "{},{},{},{},{}",
            c.n,
            c.n_q,
            c.p,
            cell(c.adaptive),
            cell(c.blocked)
        )?;
    }
    Ok(())
}
