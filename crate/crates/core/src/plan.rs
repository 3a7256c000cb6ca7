//! Everything that can be prepared once per (parameters, pattern) pair and
//! reused across draws.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::adaptive::index::AdaptiveIndex;
use crate::error::{Error, Result};
use crate::kalman::{
    filter_step, init_state, smooth_all, FilterRecord, FilterState, InitMode, Period, StepOptions,
    SystemMatrices,
};
use crate::linalg::psd_sqrt;
use crate::model::aggregation::Aggregation;
use crate::model::compact::obs_layout;
use crate::model::companion::{build_companion_system, companion_transition};
use crate::model::params::{CovFactors, VarParams};
use crate::model::pattern::ObservationPattern;
use crate::system::{instantiate_all, ObsLayout, StateSpaceSystem, SystemBuilder};

/// Counters describing which code paths a run went through.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Filtering steps in the compact form, including the initial state.
    pub compact_steps: usize,
    /// Filtering steps in the companion form (dense or blocked).
    pub companion_steps: usize,
    /// Adaptive steps whose state carries at least one monthly variable.
    pub augmented_steps: usize,
}

impl RunStats {
    pub fn edge_steps(&self) -> usize {
        self.companion_steps + self.augmented_steps
    }
}

/// Smoothed latent series and run counters.
#[derive(Debug, Clone)]
pub struct BackendOutput {
    /// `T x n`: observed entries copied from the input, latent entries smoothed.
    pub means: DMatrix<f64>,
    pub stats: RunStats,
}

/// Companion-form pieces used by the ragged edge of the baseline and blocked
/// backends.
#[derive(Debug)]
pub struct CompanionPlan {
    pub f1: DMatrix<f64>,
    pub fc: DVector<f64>,
    /// `n x np` lag block `(Pi_1 ... Pi_p)`.
    pub pi: DMatrix<f64>,
    /// Systems for `t = T_b..T-1`.
    pub systems: Vec<Arc<SystemMatrices>>,
    pub monthly: Vec<Vec<usize>>,
    pub quarterly: Vec<Vec<usize>>,
}

#[derive(Debug)]
pub struct Plan {
    params: VarParams,
    agg: Aggregation,
    pattern: ObservationPattern,
    init_mode: InitMode,
    init: FilterState,
    init_sqrt: DMatrix<f64>,
    initial: Period,
    systems: Vec<StateSpaceSystem>,
    compact_next: Option<StateSpaceSystem>,
    companion: OnceLock<CompanionPlan>,
}

impl Plan {
    pub fn new(
        params: VarParams,
        agg: Aggregation,
        pattern: ObservationPattern,
        init_mode: InitMode,
    ) -> Result<Self> {
        let (n_m, n_q, p) = (params.n_m(), params.n_q(), params.p());
        if agg.n_m != n_m || agg.n_q != n_q || agg.p != p {
            return Err(Error::Dimension(
                "aggregation was built for a different model".into(),
            ));
        }
        if pattern.n_m() != n_m || pattern.n_q() != n_q {
            return Err(Error::Dimension(format!(
                "pattern has {}+{} variables, model has {n_m}+{n_q}",
                pattern.n_m(),
                pattern.n_q()
            )));
        }
        if pattern.t_b() < p + 1 {
            return Err(Error::UnsupportedPattern(format!(
                "need at least p + 1 = {} balanced periods",
                p + 1
            )));
        }
        if let CovFactors::TimeVarying(ws) = params.cov_factors() {
            if ws.len() != pattern.t_len() {
                return Err(Error::Dimension(format!(
                    "{} covariance factors for {} data rows",
                    ws.len(),
                    pattern.t_len()
                )));
            }
        }
        let init = init_state(&params, init_mode)?;
        let init_sqrt = psd_sqrt(&init.p);
        let t_len = pattern.t_len();
        let (systems, compact_next, initial) = {
            let mut b = SystemBuilder::new(&params, &agg);
            let mut systems = Vec::with_capacity(t_len - p);
            for t in p..t_len {
                let idx = AdaptiveIndex::from_pattern(&pattern, t)?;
                systems.push(b.build(t, idx, obs_layout(&pattern, t, p))?);
            }
            let compact_next = if pattern.t_b() < t_len {
                Some(b.build(
                    pattern.t_b(),
                    AdaptiveIndex::compact(n_m, n_q),
                    ObsLayout::default(),
                )?)
            } else {
                None
            };
            let initial = b.initial(init.dim())?;
            (systems, compact_next, initial)
        };
        Ok(Self {
            params,
            agg,
            pattern,
            init_mode,
            init,
            init_sqrt,
            initial,
            systems,
            compact_next,
            companion: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &VarParams {
        &self.params
    }

    pub fn agg(&self) -> &Aggregation {
        &self.agg
    }

    pub fn pattern(&self) -> &ObservationPattern {
        &self.pattern
    }

    pub fn init_mode(&self) -> InitMode {
        self.init_mode
    }

    /// Distribution of the initial compact state at row `p - 1`.
    pub fn init(&self) -> &FilterState {
        &self.init
    }

    pub fn init_sqrt(&self) -> &DMatrix<f64> {
        &self.init_sqrt
    }

    /// Compact/adaptive system of filtering period `t`.
    pub fn system(&self, t: usize) -> &StateSpaceSystem {
        &self.systems[t - self.params.p()]
    }

    pub fn companion(&self) -> &CompanionPlan {
        self.companion.get_or_init(|| {
            let params = &self.params;
            let n = params.n();
            let f1 = companion_transition(params);
            let mut fc = DVector::zeros(f1.nrows());
            fc.rows_mut(0, n).copy_from(params.intercept());
            let mut systems = vec![];
            let mut monthly = vec![];
            let mut quarterly = vec![];
            for t in self.pattern.t_b()..self.pattern.t_len() {
                let cs = build_companion_system(params, &self.agg, &self.pattern, t);
                let obs = cs.z.nrows();
                systems.push(Arc::new(
                    SystemMatrices::new(cs.z, DMatrix::zeros(obs, n), cs.f1, cs.h)
                        .expect("companion dimensions are consistent"),
                ));
                monthly.push(cs.monthly);
                quarterly.push(cs.quarterly);
            }
            CompanionPlan {
                f1,
                fc,
                pi: params.stacked_lags(),
                systems,
                monthly,
                quarterly,
            }
        })
    }

    /// Companion period `t >= T_b` with its observation vector.
    pub fn companion_period(&self, t: usize, y: &DMatrix<f64>) -> (Period, DVector<f64>) {
        let cp = self.companion();
        let k = t - self.pattern.t_b();
        let mats = cp.systems[k].clone();
        let n_m = self.params.n_m();
        let layout = ObsLayout {
            monthly: cp.monthly[k].clone(),
            quarterly: cp.quarterly[k].clone(),
            presample: vec![],
        };
        let obs = layout.gather(y, t, n_m);
        (
            Period {
                c: DVector::zeros(obs.len()),
                d: cp.fc.clone(),
                mats,
            },
            obs,
        )
    }

    /// Compact transition into period `T_b`, used where the baseline leaves the
    /// compact form.
    pub fn compact_next(&self, y: &DMatrix<f64>) -> Option<Period> {
        self.compact_next
            .as_ref()
            .map(|s| s.instantiate(y, self.params.n_m()).0)
    }

    /// Filters from the initial state through period `end - 1` with the
    /// compact/adaptive systems. `tail` is the transition following the last
    /// period, if any; its prediction is returned.
    pub fn filter_chain(
        &self,
        y: &DMatrix<f64>,
        end: usize,
        tail: Option<&Period>,
        opts: StepOptions,
    ) -> Result<(Vec<FilterRecord>, Option<FilterState>)> {
        let p = self.params.p();
        let periods = instantiate_all(&self.systems[..end - p], y, self.params.n_m());
        let mut records = Vec::with_capacity(end + 1 - p);
        let mut state = self.init.clone();
        let mut cur = (self.initial.clone(), DVector::zeros(0));
        let mut periods = periods.into_iter();
        let mut t = p - 1;
        loop {
            let next = periods.next();
            let next_period = match &next {
                Some((np, _)) => Some(np),
                None => tail,
            };
            let (rec, pred) = filter_step(&state, &cur.0, next_period, &cur.1, t, opts)?;
            records.push(rec);
            match next {
                Some(nx) => {
                    state = pred.expect("prediction requested");
                    cur = nx;
                    t += 1;
                }
                None => return Ok((records, pred)),
            }
        }
    }

    /// Filters the compact form through `T_b - 1`, predicting into `T_b`.
    /// Returns the records and the compact prediction at `T_b`.
    pub fn filter_balanced_part(
        &self,
        y: &DMatrix<f64>,
    ) -> Result<(Vec<FilterRecord>, FilterState)> {
        let tail = self
            .compact_next(y)
            .ok_or_else(|| Error::UnsupportedPattern("panel has no ragged edge".into()))?;
        let (records, pred) =
            self.filter_chain(y, self.pattern.t_b(), Some(&tail), StepOptions::default())?;
        Ok((records, pred.expect("tail transition given")))
    }

    /// Smooths compact records backwards from `r` and writes their latent entries.
    pub fn smooth_balanced_part(
        &self,
        records: &[FilterRecord],
        r: DVector<f64>,
        means: &mut DMatrix<f64>,
    ) {
        let p = self.params.p();
        let sm = smooth_all(records, r);
        for (k, a) in sm.smoothed.iter().enumerate() {
            self.extract_adaptive(p - 1 + k, a, means);
        }
    }

    /// Writes the latent entries held by a smoothed compact/adaptive state of
    /// period `t` into `out`.
    pub fn extract_adaptive(&self, t: usize, alpha: &DVector<f64>, out: &mut DMatrix<f64>) {
        let p = self.params.p();
        let n_m = self.params.n_m();
        let n_q = self.params.n_q();
        if t + 1 == p {
            for g in 0..p {
                for i in 0..n_q {
                    out[(p - 1 - g, n_m + i)] = alpha[g * n_q + i];
                }
            }
            return;
        }
        let head = self.system(t).index.head();
        for (j, &v) in head.iter().enumerate() {
            out[(t, v)] = alpha[j];
        }
    }

    /// Writes `x_t` from a smoothed companion state of period `t` into `out`,
    /// keeping observed monthly entries.
    pub fn extract_companion(&self, t: usize, alpha: &DVector<f64>, out: &mut DMatrix<f64>) {
        let n_m = self.params.n_m();
        for v in self.pattern.unobserved(t) {
            out[(t, *v)] = alpha[*v];
        }
        for i in 0..self.params.n_q() {
            out[(t, n_m + i)] = alpha[n_m + i];
        }
    }

    /// Checks that `y` is a `T x n` matrix.
    pub fn check_values(&self, y: &DMatrix<f64>) -> Result<()> {
        let want = (self.pattern.t_len(), self.params.n());
        if y.shape() != want {
            return Err(Error::Dimension(format!(
                "data is {}x{}, expected {}x{}",
                y.nrows(),
                y.ncols(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }
}
