//! Per-period system templates for the compact and adaptive formulations.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::adaptive::builders::{
    build_adaptive_c, build_adaptive_d, build_adaptive_gh, build_adaptive_t, build_adaptive_z,
    expand_selected,
};
use crate::adaptive::index::AdaptiveIndex;
use crate::error::Result;
use crate::kalman::{Period, SystemMatrices};
use crate::model::aggregation::Aggregation;
use crate::model::params::VarParams;

/// Which entries of the data enter the observation vector of one period.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ObsLayout {
    /// Observed monthly variables at `t`.
    pub monthly: Vec<usize>,
    /// Quarterly variables (within the quarterly block) observed at `t`.
    pub quarterly: Vec<usize>,
    /// Quarterly observations `(row, variable)` from presample rows, attached
    /// to the first filtering period.
    pub presample: Vec<(usize, usize)>,
}

impl ObsLayout {
    pub fn len(&self) -> usize {
        self.monthly.len() + self.quarterly.len() + self.presample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gathers the observation vector of period `t` from a `T x n` value matrix.
    pub fn gather(&self, y: &DMatrix<f64>, t: usize, n_m: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        let mut k = 0;
        for &v in &self.monthly {
            out[k] = y[(t, v)];
            k += 1;
        }
        for &i in &self.quarterly {
            out[k] = y[(t, n_m + i)];
            k += 1;
        }
        for &(r, i) in &self.presample {
            out[k] = y[(r, n_m + i)];
            k += 1;
        }
        out
    }
}

#[derive(Debug)]
struct Parts {
    mats: Arc<SystemMatrices>,
    c_mat: DMatrix<f64>,
    d_mat: DMatrix<f64>,
    c_const: DVector<f64>,
    d_const: DVector<f64>,
}

/// One period of the compact/adaptive model: system matrices plus the loadings
/// `C_t`, `D_t` of the exogenous lags and the intercept terms.
#[derive(Debug, Clone)]
pub struct StateSpaceSystem {
    pub t: usize,
    pub index: AdaptiveIndex,
    pub obs: ObsLayout,
    p: usize,
    parts: Arc<Parts>,
}

impl StateSpaceSystem {
    pub fn mats(&self) -> &Arc<SystemMatrices> {
        &self.parts.mats
    }

    pub fn c_mat(&self) -> &DMatrix<f64> {
        &self.parts.c_mat
    }

    pub fn d_mat(&self) -> &DMatrix<f64> {
        &self.parts.d_mat
    }

    pub fn state_dim(&self) -> usize {
        self.parts.mats.state_dim()
    }

    /// Exogenous vector `y_{O_{t-1}, t-1..t-p}` (variable-major).
    pub fn exogenous(&self, y: &DMatrix<f64>) -> DVector<f64> {
        let p = self.p;
        let mut x = DVector::zeros(self.index.o_prev.len() * p);
        for (wp, &w) in self.index.o_prev.iter().enumerate() {
            for j in 1..=p {
                x[wp * p + j - 1] = y[(self.t - j, w)];
            }
        }
        x
    }

    /// Fills in `c_t` and `d_t` for the values `y` and returns the period with
    /// its observation vector.
    pub fn instantiate(&self, y: &DMatrix<f64>, n_m: usize) -> (Period, DVector<f64>) {
        let parts = &*self.parts;
        let (c, d) = if parts.c_mat.ncols() == 0 {
            (parts.c_const.clone(), parts.d_const.clone())
        } else {
            let x = self.exogenous(y);
            (
                &parts.c_mat * &x + &parts.c_const,
                &parts.d_mat * &x + &parts.d_const,
            )
        };
        let obs = self.obs.gather(y, self.t, n_m);
        (
            Period {
                mats: parts.mats.clone(),
                c,
                d,
            },
            obs,
        )
    }
}

/// Instantiates consecutive systems. Each run of periods sharing one template
/// gets its exogenous terms from a single matrix product.
pub fn instantiate_all(
    systems: &[StateSpaceSystem],
    y: &DMatrix<f64>,
    n_m: usize,
) -> Vec<(Period, DVector<f64>)> {
    let mut out = Vec::with_capacity(systems.len());
    let mut start = 0;
    while start < systems.len() {
        let parts = &systems[start].parts;
        let mut end = start + 1;
        while end < systems.len() && Arc::ptr_eq(&systems[end].parts, parts) {
            end += 1;
        }
        let run = &systems[start..end];
        if parts.c_mat.ncols() == 0 {
            out.extend(run.iter().map(|s| s.instantiate(y, n_m)));
        } else {
            let mut x = DMatrix::zeros(parts.c_mat.ncols(), run.len());
            for (k, s) in run.iter().enumerate() {
                x.set_column(k, &s.exogenous(y));
            }
            let c = &parts.c_mat * &x;
            let d = &parts.d_mat * &x;
            for (k, s) in run.iter().enumerate() {
                out.push((
                    Period {
                        mats: parts.mats.clone(),
                        c: c.column(k) + &parts.c_const,
                        d: d.column(k) + &parts.d_const,
                    },
                    s.obs.gather(y, s.t, n_m),
                ));
            }
        }
        start = end;
    }
    out
}

type CacheKey = (AdaptiveIndex, ObsLayout, usize, usize);

/// Builds and deduplicates period systems.
pub struct SystemBuilder<'a> {
    params: &'a VarParams,
    agg: &'a Aggregation,
    cache: HashMap<CacheKey, Arc<Parts>>,
}

impl<'a> SystemBuilder<'a> {
    pub fn new(params: &'a VarParams, agg: &'a Aggregation) -> Self {
        Self {
            params,
            agg,
            cache: HashMap::new(),
        }
    }

    /// System for period `t` under index sets `index` and observations `obs`.
    pub fn build(
        &mut self,
        t: usize,
        index: AdaptiveIndex,
        obs: ObsLayout,
    ) -> Result<StateSpaceSystem> {
        let p = self.params.p();
        // presample rows sit at fixed offsets from t, so they are part of the key
        let offset = if obs.presample.is_empty() { 0 } else { t };
        let key = (
            index.clone(),
            obs.clone(),
            self.params.chol_index(t),
            offset,
        );
        let parts = match self.cache.get(&key) {
            Some(p) => p.clone(),
            None => {
                let parts = Arc::new(self.make_parts(t, &index, &obs)?);
                self.cache.insert(key, parts.clone());
                parts
            }
        };
        Ok(StateSpaceSystem {
            t,
            index,
            obs,
            p,
            parts,
        })
    }

    fn make_parts(&self, t: usize, index: &AdaptiveIndex, obs: &ObsLayout) -> Result<Parts> {
        let (params, agg) = (self.params, self.agg);
        let (n, p, n_m) = (params.n(), params.p(), params.n_m());
        let idx_obs = AdaptiveIndex {
            o: obs.monthly.clone(),
            ..index.clone()
        };
        let nq_rows = obs.quarterly.len();
        let z_sel = build_adaptive_z(params, agg, &idx_obs, &obs.quarterly);
        let mut z = expand_selected(&z_sel, index, p + 1);
        let c_core = build_adaptive_c(params, &idx_obs, nq_rows);
        let (g_core, h) = build_adaptive_gh(params, &idx_obs, nq_rows, t);
        let tm = build_adaptive_t(params, index);
        let d_mat = build_adaptive_d(params, index);
        let k = index.k();
        let nu = index.u.len();
        let extra = obs.presample.len();
        let rows = z.nrows() + extra;
        let mut c_mat = DMatrix::zeros(rows, c_core.ncols());
        c_mat.view_mut((0, 0), c_core.shape()).copy_from(&c_core);
        let mut g = DMatrix::zeros(rows, n);
        g.view_mut((0, 0), g_core.shape()).copy_from(&g_core);
        if extra > 0 {
            let base = z.nrows();
            let mut zz = DMatrix::zeros(rows, z.ncols());
            zz.view_mut((0, 0), z.shape()).copy_from(&z);
            let n_q = agg.n_q;
            for (e, &(r, i)) in obs.presample.iter().enumerate() {
                for l in 0..agg.p_q() {
                    let grp = t - r + l;
                    for i2 in 0..n_q {
                        zz[(base + e, grp * k + nu + i2)] = agg.lambda_qq[(i, l * n_q + i2)];
                    }
                }
            }
            z = zz;
        }
        let mut c_const = DVector::zeros(rows);
        for (r, &v) in obs.monthly.iter().enumerate() {
            c_const[r] = params.intercept()[v];
        }
        let mut d_const = DVector::zeros(tm.nrows());
        for (r, &v) in index.head().iter().enumerate() {
            d_const[r] = params.intercept()[v];
        }
        debug_assert!(n_m + agg.n_q == n);
        Ok(Parts {
            mats: Arc::new(SystemMatrices::new(z, g, tm, h)?),
            c_mat,
            d_mat,
            c_const,
            d_const,
        })
    }

    /// Placeholder period for the initial state: no observations and no incoming
    /// transition.
    pub fn initial(&self, dim: usize) -> Result<Period> {
        let n = self.params.n();
        Ok(Period {
            mats: Arc::new(SystemMatrices::new(
                DMatrix::zeros(0, dim),
                DMatrix::zeros(0, n),
                DMatrix::zeros(dim, 0),
                DMatrix::zeros(dim, n),
            )?),
            c: DVector::zeros(0),
            d: DVector::zeros(dim),
        })
    }
}
