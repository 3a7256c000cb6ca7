#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mfsmooth::bench::{relative_costs, run_grid, write_csv, write_relative_csv};
use mfsmooth::io::{
    read_archive, read_data_file, read_params_json, write_archive, write_data_csv, write_draws_csv,
    write_params_json, Config,
};
use mfsmooth::simsmooth::{thread_cap, Backend, Smoother};
use mfsmooth::synth::{make_instance, two_period_edge};

#[derive(Parser)]
#[command(
    name = "mfsmooth",
    version,
    about = "Simulation smoothing for mixed-frequency VARs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a random stable VAR and a ragged-edge data set.
    Simulate {
        /// TOML file with [model] and optionally [simulate].
        #[arg(long)]
        config: PathBuf,
        /// Overrides simulate.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for data.csv, params.json and latent.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the latent monthly panel given data and parameters.
    Smooth {
        /// TOML file with [model].
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "adaptive")]
        backend: Backend,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `.csv` writes long-format CSV, anything else a binary archive.
        #[arg(long, default_value = "draws.mfsd")]
        out: PathBuf,
    },
    /// Time backends over a grid of model sizes and lag lengths.
    Bench {
        /// TOML file with [bench].
        #[arg(long)]
        config: PathBuf,
        /// Restricts the grid to these backends.
        #[arg(long)]
        backend: Vec<Backend>,
        /// Overrides bench.reps.
        #[arg(long)]
        reps: Option<usize>,
        /// Overrides bench.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Timing CSV; the relative-cost table goes next to it as `<stem>_relative.csv`.
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Compare two draw archives elementwise.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

/// Failure that maps to exit code 1.
#[derive(Debug)]
struct ToleranceExceeded;

impl std::fmt::Display for ToleranceExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("difference exceeds tolerance")
    }
}

impl std::error::Error for ToleranceExceeded {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate { config, seed, out } => simulate(&config, seed, &out),
        Cmd::Smooth {
            config,
            data,
            params,
            backend,
            draws,
            seed,
            out,
        } => smooth(&config, &data, &params, backend, draws, seed, &out),
        Cmd::Bench {
            config,
            backend,
            reps,
            seed,
            out,
        } => bench(&config, backend, reps, seed, &out),
        Cmd::Compare { a, b, tol } => compare(&a, &b, tol),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ToleranceExceeded>() => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn simulate(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = Config::load(config)?;
    let model = cfg.model()?;
    let mut sim = cfg.simulate.clone().unwrap_or_default();
    if let Some(s) = seed {
        sim.seed = s;
    }
    let agg = model.aggregation()?;
    let edge = match &sim.edge {
        Some(e) => e.clone(),
        None => two_period_edge(model.n_m, model.n_q, sim.recipe)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let inst = make_instance(
        &mut rng,
        &agg,
        sim.t,
        &edge,
        sim.radius_bound,
        model.calendar(),
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let names = inst.data.names().to_vec();
    write_data_csv(create(&out.join("data.csv"))?, &names, inst.data.values())?;
    write_data_csv(create(&out.join("latent.csv"))?, &names, &inst.latent)?;
    let mut w = create(&out.join("params.json"))?;
    write_params_json(&mut w, &inst.params)?;
    w.flush()?;
    let pat = mfsmooth::detect_pattern(&inst.data, model.p, agg.p_q())?;
    println!(
        "simulated T={} n_m={} n_q={} p={} T_b={} seed={} -> {}",
        sim.t,
        model.n_m,
        model.n_q,
        model.p,
        pat.t_b(),
        sim.seed,
        out.display()
    );
    Ok(())
}

fn smooth(
    config: &Path,
    data: &Path,
    params: &Path,
    backend: Backend,
    n_draws: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = Config::load(config)?;
    let model = cfg.model()?;
    let data = read_data_file(data, model.n_q, model.calendar())?;
    let f = File::open(params).with_context(|| format!("cannot open {}", params.display()))?;
    let params = read_params_json(BufReader::new(f))?;
    model.check_params(&params)?;
    let sm = Smoother::new(params, model.aggregation()?, &data, model.init_mode()?)?;
    info!("T_b = {}, T = {}", sm.plan().pattern().t_b(), data.t_len());

    let start = Instant::now();
    let draws = sm.draw_many(backend, n_draws, seed)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let threads = thread_cap().map_or_else(|| "all".to_string(), |k| k.to_string());
    println!(
        "{n_draws} draws with {backend} in {ms:.1} ms ({:.3} ms/draw, threads={threads})",
        if n_draws > 0 {
            ms / n_draws as f64
        } else {
            0.0
        }
    );

    let names = data.names().to_vec();
    if out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let mut w = create(out)?;
        write_draws_csv(&mut w, &names, &draws)?;
        w.flush()?;
    } else {
        let xs: Vec<_> = draws.into_iter().map(|d| d.x).collect();
        summarize(&names, &xs);
        write_archive(create(out)?, data.t_len(), names.len(), data.n_q(), &xs)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Mean and standard deviation across draws in the last row.
fn summarize(names: &[String], xs: &[nalgebra::DMatrix<f64>]) {
    if xs.len() < 2 {
        return;
    }
    let t = xs[0].nrows() - 1;
    let k = xs.len() as f64;
    println!("last period (t = {t}): variable, mean, sd");
    for (j, name) in names.iter().enumerate() {
        let mean = xs.iter().map(|x| x[(t, j)]).sum::<f64>() / k;
        let var = xs.iter().map(|x| (x[(t, j)] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        println!("  {name}, {mean:.6}, {:.6}", var.sqrt());
    }
}

fn bench(
    config: &Path,
    backends: Vec<Backend>,
    reps: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let cfg = Config::load(config)?;
    let mut grid = cfg
        .bench
        .ok_or_else(|| anyhow!("{}: missing [bench] table", config.display()))?;
    if !backends.is_empty() {
        grid.backends = backends;
    }
    if let Some(r) = reps {
        grid.reps = r;
    }
    if let Some(s) = seed {
        grid.seed = s;
    }
    let rows = run_grid(&grid, |r| {
        println!(
            "n={:>4} n_q={} p={:>2} {:>8}: {:>10.3} ms/draw",
            r.n, r.n_q, r.p, r.backend, r.ms_per_iter
        )
    })?;
    let mut w = create(out)?;
    write_csv(&mut w, &rows)?;
    w.flush()?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    let rel = out.with_file_name(format!("{stem}_relative.csv"));
    let mut w = create(&rel)?;
    write_relative_csv(&mut w, &relative_costs(&rows))?;
    w.flush()?;
    println!("wrote {} and {}", out.display(), rel.display());
    Ok(())
}

fn open_archive(path: &Path) -> Result<mfsmooth::io::Archive> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_archive(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn compare(a: &Path, b: &Path, tol: f64) -> Result<()> {
    if !(tol >= 0.0) {
        bail!("--tol must be non-negative");
    }
    let (x, y) = (open_archive(a)?, open_archive(b)?);
    if x.draws.len() != y.draws.len() || x.shape() != y.shape() || x.n_q != y.n_q {
        bail!(
            "shape mismatch: {} draws of {:?} (n_q={}) vs {} draws of {:?} (n_q={})",
            x.draws.len(),
            x.shape(),
            x.n_q,
            y.draws.len(),
            y.shape(),
            y.n_q
        );
    }
    let mut worst = (0.0, 0, 0, 0);
    for (k, (p, q)) in x.draws.iter().zip(&y.draws).enumerate() {
        let (d, (t, j)) = mfsmooth::linalg::max_rel_diff(p, q);
        if d > worst.0 || d.is_nan() {
            worst = (d, k, t, j);
        }
    }
    let (d, k, t, j) = worst;
    println!(
        "compared {} draws: max relative difference {d:.3e} at draw {k}, t {t}, variable {j} (tol {tol:.1e})",
        x.draws.len()
    );
    if d <= tol {
        Ok(())
    } else {
        Err(ToleranceExceeded.into())
    }
}
