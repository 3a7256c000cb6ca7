//! Simulation smoothing: draws of the whole latent monthly panel from its
//! distribution given the data and the parameters.
//!
//! A draw is `E[x | y - y+] + x+`, where `(x+, y+)` is simulated from the model
//! with the intercept removed and the conditional mean is computed with the
//! intercept kept.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::run_adaptive;
use crate::baseline::run_baseline;
use crate::blocked::run_blocked;
use crate::error::{Error, Result};
use crate::kalman::InitMode;
use crate::linalg::rel_diff;
use crate::model::aggregation::Aggregation;
use crate::model::params::VarParams;
use crate::model::pattern::{detect_pattern, MixedFreqData};
use crate::oracle::{oracle_smooth, SMOOTH_CAP};
use crate::plan::{BackendOutput, Plan};

/// Tolerance for quarterly aggregates of a draw.
pub const AGGREGATION_TOL: f64 = 1e-8;

/// Environment variable capping the threads used by [`draw_many`].
pub const THREADS_ENV: &str = "MF_SMOOTH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Baseline,
    Blocked,
    Adaptive,
    /// Full companion smoother; small instances only.
    Oracle,
}

impl Backend {
    pub const FAST: [Backend; 3] = [Backend::Baseline, Backend::Blocked, Backend::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Baseline => "baseline",
            Backend::Blocked => "blocked",
            Backend::Adaptive => "adaptive",
            Backend::Oracle => "oracle",
        }
    }

    /// Smoothed latent series of `y` under `plan`.
    pub fn smooth(self, plan: &Plan, y: &DMatrix<f64>) -> Result<BackendOutput> {
        match self {
            Backend::Baseline => run_baseline(plan, y),
            Backend::Blocked => run_blocked(plan, y),
            Backend::Adaptive => run_adaptive(plan, y),
            Backend::Oracle => {
                let out = oracle_smooth(
                    plan.params(),
                    plan.agg(),
                    plan.pattern(),
                    y,
                    plan.init(),
                    SMOOTH_CAP,
                )?;
                Ok(BackendOutput {
                    means: out.output.means,
                    stats: Default::default(),
                })
            }
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Backend::Baseline),
            "blocked" => Ok(Backend::Blocked),
            "adaptive" => Ok(Backend::Adaptive),
            "oracle" => Ok(Backend::Oracle),
            other => Err(Error::Config(format!(
                "unknown backend `{other}` (expected baseline, blocked, adaptive or oracle)"
            ))),
        }
    }
}

/// A path simulated from the model without intercept, and its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    /// `T x n` simulated latent path.
    pub x: DMatrix<f64>,
    /// `T x n` observation of `x` with the data's missingness (NaN elsewhere).
    pub y: DMatrix<f64>,
    pub seed: u64,
    pub stream: u64,
}

/// One draw of the latent panel.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    /// `T x n`.
    pub x: DMatrix<f64>,
    pub seed: u64,
    /// Draw index; selects the generator stream.
    pub stream: u64,
    pub backend: Backend,
    /// SHA-256 of the parameters, aggregation and initialization.
    pub param_hash: String,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates `(x+, y+)` with generator stream `stream` of `seed`.
///
/// Monthly presample rows are zero, the quarterly presample block is drawn
/// from `N(0, P0)` and later rows follow the VAR without intercept.
pub fn gen_pseudo(plan: &Plan, seed: u64, stream: u64) -> PseudoSample {
    let mut rng = rng_for(seed, stream);
    let params = plan.params();
    let (n_m, n_q, n, p) = (params.n_m(), params.n_q(), params.n(), params.p());
    let pattern = plan.pattern();
    let t_len = pattern.t_len();
    let mut normal = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));

    let mut x = DMatrix::zeros(t_len, n);
    let dev = plan.init_sqrt() * normal(n_q * (p + 1));
    for g in 0..p {
        for i in 0..n_q {
            x[(p - 1 - g, n_m + i)] = dev[g * n_q + i];
        }
    }
    for t in p..t_len {
        let mut row = params.chol_at(t) * normal(n);
        for j in 1..=p {
            row.gemv(1.0, params.lag(j), &x.row(t - j).transpose(), 1.0);
        }
        x.row_mut(t).copy_from(&row.transpose());
    }
    let y = observe_like(plan, &x);
    PseudoSample { x, y, seed, stream }
}

/// Applies the observation map of `plan`'s pattern to a latent panel.
pub fn observe_like(plan: &Plan, x: &DMatrix<f64>) -> DMatrix<f64> {
    let agg = plan.agg();
    let pattern = plan.pattern();
    let (n_m, n_q) = (agg.n_m, agg.n_q);
    let mut y = DMatrix::from_element(x.nrows(), x.ncols(), f64::NAN);
    for t in 0..x.nrows() {
        for &v in pattern.observed(t) {
            y[(t, v)] = x[(t, v)];
        }
        for &i in pattern.quarterly_observed(t) {
            y[(t, n_m + i)] = aggregate(agg, x, t, i, n_q);
        }
    }
    // presample monthly rows are observed by construction
    for t in 0..plan.params().p().min(x.nrows()) {
        for v in 0..n_m {
            y[(t, v)] = x[(t, v)];
        }
    }
    y
}

fn aggregate(agg: &Aggregation, x: &DMatrix<f64>, t: usize, i: usize, n_q: usize) -> f64 {
    let mut s = 0.0;
    for l in 0..agg.p_q() {
        for i2 in 0..n_q {
            let w = agg.lambda_qq[(i, l * n_q + i2)];
            if w != 0.0 {
                s += w * x[(t - l, agg.n_m + i2)];
            }
        }
    }
    s
}

/// Completes a pseudo sample into a draw with the chosen backend.
pub fn draw_from_pseudo(
    plan: &Plan,
    y: &DMatrix<f64>,
    backend: Backend,
    pseudo: &PseudoSample,
) -> Result<DMatrix<f64>> {
    let y_star = y - &pseudo.y;
    let mean = backend.smooth(plan, &y_star)?.means;
    let mut x = mean + &pseudo.x;
    let pattern = plan.pattern();
    for t in 0..x.nrows() {
        if t < plan.params().p() {
            for v in 0..plan.params().n_m() {
                x[(t, v)] = y[(t, v)];
            }
        } else {
            for &v in pattern.observed(t) {
                x[(t, v)] = y[(t, v)];
            }
        }
    }
    Ok(x)
}

/// Verifies that a draw reproduces the monthly data exactly and the quarterly
/// data within [`AGGREGATION_TOL`].
pub fn check_draw(plan: &Plan, y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    let pattern = plan.pattern();
    let agg = plan.agg();
    for t in 0..x.nrows() {
        let monthly: Vec<usize> = if t < plan.params().p() {
            (0..agg.n_m).collect()
        } else {
            pattern.observed(t).to_vec()
        };
        for v in monthly {
            if x[(t, v)] != y[(t, v)] {
                return Err(Error::Data(format!(
                    "draw differs from observed monthly value at ({t}, {v})"
                )));
            }
        }
        for &i in pattern.quarterly_observed(t) {
            let got = aggregate(agg, x, t, i, agg.n_q);
            let want = y[(t, agg.n_m + i)];
            if rel_diff(got, want) > AGGREGATION_TOL {
                return Err(Error::Data(format!(
                    "quarterly aggregate of draw at ({t}, {i}) is {got}, data is {want}"
                )));
            }
        }
    }
    Ok(())
}

/// Hex SHA-256 of everything besides the data that determines a draw.
pub fn param_hash(plan: &Plan) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(plan.params()).expect("parameters serialize"));
    h.update(serde_json::to_vec(&plan.agg().scheme).expect("scheme serializes"));
    h.update(serde_json::to_vec(&plan.init_mode()).expect("init mode serializes"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn draw_with_hash(
    plan: &Plan,
    y: &DMatrix<f64>,
    backend: Backend,
    seed: u64,
    stream: u64,
    hash: &str,
) -> Result<LatentDraw> {
    let pseudo = gen_pseudo(plan, seed, stream);
    let x = draw_from_pseudo(plan, y, backend, &pseudo)?;
    if cfg!(debug_assertions) {
        check_draw(plan, y, &x)?;
    }
    Ok(LatentDraw {
        x,
        seed,
        stream,
        backend,
        param_hash: hash.to_owned(),
    })
}

/// One draw using stream 0 of `seed`.
pub fn draw_latent(
    plan: &Plan,
    y: &DMatrix<f64>,
    backend: Backend,
    seed: u64,
) -> Result<LatentDraw> {
    draw_with_hash(plan, y, backend, seed, 0, &param_hash(plan))
}

/// `n_draws` draws; draw `k` uses stream `k` of `seed`, so the output does not
/// depend on how the draws are scheduled.
pub fn draw_many(
    plan: &Plan,
    y: &DMatrix<f64>,
    backend: Backend,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<LatentDraw>> {
    let hash = param_hash(plan);
    let one = |k: usize| draw_with_hash(plan, y, backend, seed, k as u64, &hash);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || {
            (0..n_draws)
                .into_par_iter()
                .map(one)
                .collect::<Result<Vec<_>>>()
        };
        match thread_cap() {
            Some(k) => rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(run),
            None => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_draws).map(one).collect()
    }
}

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}

/// Parameters, aggregation and data bound together for repeated drawing.
#[derive(Debug)]
pub struct Smoother {
    plan: Plan,
    y: DMatrix<f64>,
}

impl Smoother {
    pub fn new(
        params: VarParams,
        agg: Aggregation,
        data: &MixedFreqData,
        init_mode: InitMode,
    ) -> Result<Self> {
        if data.n_q() != params.n_q() || data.n_m() != params.n_m() {
            return Err(Error::Dimension(format!(
                "data has {}+{} variables, model has {}+{}",
                data.n_m(),
                data.n_q(),
                params.n_m(),
                params.n_q()
            )));
        }
        let pattern = detect_pattern(data, params.p(), agg.p_q())?;
        let plan = Plan::new(params, agg, pattern, init_mode)?;
        Ok(Self {
            plan,
            y: data.values().clone(),
        })
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn smoothed_mean(&self, backend: Backend) -> Result<BackendOutput> {
        backend.smooth(&self.plan, &self.y)
    }

    pub fn draw(&self, backend: Backend, seed: u64) -> Result<LatentDraw> {
        draw_latent(&self.plan, &self.y, backend, seed)
    }

    pub fn draw_many(
        &self,
        backend: Backend,
        n_draws: usize,
        seed: u64,
    ) -> Result<Vec<LatentDraw>> {
        draw_many(&self.plan, &self.y, backend, n_draws, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::aggregation::{build_aggregation, AggregationScheme};
    use crate::model::params::CovFactors;
    use crate::model::pattern::ObservationPattern;

    #[test]
    fn zero_noise_pseudo_path_is_deterministic_propagation() {
        let (n_m, n_q, p) = (2, 1, 3);
        let n = n_m + n_q;
        let lags = (1..=p)
            .map(|j| DMatrix::from_fn(n, n, |r, c| 0.1 / j as f64 * (1.0 + r as f64 - c as f64)))
            .collect();
        let params = VarParams::new_unchecked_noise(
            n_m,
            n_q,
            DVector::from_element(n, 5.0),
            lags,
            CovFactors::Constant(DMatrix::zeros(n, n)),
        )
        .unwrap();
        let agg = build_aggregation(&AggregationScheme::average(), n_m, n_q, p).unwrap();
        let t_len = 12;
        let monthly: Vec<Vec<bool>> = (0..t_len).map(|t| vec![t < 11, t < 10]).collect();
        let quarterly: Vec<Vec<bool>> = (0..t_len).map(|t| vec![(t + 1) % 3 == 0]).collect();
        let pat = ObservationPattern::from_masks(&monthly, &quarterly, p, 3).unwrap();
        let plan = Plan::new(params.clone(), agg, pat, InitMode::diffuse()).unwrap();
        let ps = gen_pseudo(&plan, 9, 0);
        assert!(ps.x.rows(p - 1, 1).iter().any(|&v| v != 0.0));
        for t in p..t_len {
            let mut want = DVector::zeros(n);
            for j in 1..=p {
                want += params.lag(j) * ps.x.row(t - j).transpose();
            }
            assert!((ps.x.row(t).transpose() - &want).amax() <= 1e-14 * want.amax().max(1.0));
        }
        let again = gen_pseudo(&plan, 9, 0);
        assert_eq!(ps.x, again.x);
        assert!(ps
            .y
            .iter()
            .zip(again.y.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_ne!(ps.x, gen_pseudo(&plan, 9, 1).x);
    }

    #[test]
    fn backend_names_round_trip() {
        for b in [
            Backend::Baseline,
            Backend::Blocked,
            Backend::Adaptive,
            Backend::Oracle,
        ] {
            assert_eq!(b.name().parse::<Backend>().unwrap(), b);
        }
        assert!("dense".parse::<Backend>().is_err());
    }
}
