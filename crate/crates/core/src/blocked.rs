//! Companion-form recursions evaluated block by block.
//!
//! The companion state `(x_t', ..., x_{t-p}')'` is observed through a selection
//! of its first group plus `Lambda_qq` on the quarterly entries of the first
//! `p_q` groups, and the transition is a shift below a single block row. Each
//! product is formed only on the blocks where it is non-zero.

use nalgebra::{DMatrix, DVector};

use crate::adaptive::run_adaptive;
use crate::baseline::{compact_part, companion_to_compact, lift_to_companion};
use crate::error::Result;
use crate::kalman::FilterState;
use crate::linalg::{spd_factor, symmetrize};
use crate::model::aggregation::Aggregation;
use crate::plan::{BackendOutput, Plan, RunStats};

/// Scalar multiplications performed by the blocked operations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub mults: u64,
}

impl OpCount {
    fn gemm(&mut self, m: usize, k: usize, n: usize) {
        self.mults += (m * k * n) as u64;
    }
}

/// Observation structure of one companion period.
#[derive(Debug, Clone)]
pub struct BlockLayout<'a> {
    pub n_m: usize,
    pub n_q: usize,
    pub p: usize,
    pub monthly: &'a [usize],
    pub quarterly: &'a [usize],
    pub agg: &'a Aggregation,
}

impl BlockLayout<'_> {
    fn n(&self) -> usize {
        self.n_m + self.n_q
    }

    fn dim(&self) -> usize {
        self.n() * (self.p + 1)
    }

    fn obs(&self) -> usize {
        self.monthly.len() + self.quarterly.len()
    }

    /// State positions of the quarterly entries that `Lambda_qq` loads on.
    fn qcols(&self) -> Vec<usize> {
        let n = self.n();
        let mut cols = Vec::with_capacity(self.agg.p_q() * self.n_q);
        for l in 0..self.agg.p_q() {
            for i in 0..self.n_q {
                cols.push(l * n + self.n_m + i);
            }
        }
        cols
    }

    /// Rows of `Lambda_qq` for the observed quarterly variables.
    fn lambda(&self) -> DMatrix<f64> {
        let lq = &self.agg.lambda_qq;
        DMatrix::from_fn(self.quarterly.len(), lq.ncols(), |r, c| {
            lq[(self.quarterly[r], c)]
        })
    }

    /// `Z a`.
    fn observe(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.obs());
        for (r, &v) in self.monthly.iter().enumerate() {
            out[r] = a[v];
        }
        if !self.quarterly.is_empty() {
            let aq = DVector::from_iterator(self.qcols().len(), self.qcols().iter().map(|&c| a[c]));
            let lq = self.lambda() * aq;
            out.rows_mut(self.monthly.len(), lq.len()).copy_from(&lq);
        }
        out
    }

    /// `Z' u`.
    fn scatter(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (r, &v) in self.monthly.iter().enumerate() {
            out[v] += u[r];
        }
        if !self.quarterly.is_empty() {
            let uq = u.rows(self.monthly.len(), self.quarterly.len());
            let back = self.lambda().tr_mul(&uq);
            for (k, &c) in self.qcols().iter().enumerate() {
                out[c] += back[k];
            }
        }
        out
    }
}

/// `M_t = P_t Z_t'` and `F_t = Z_t M_t`.
///
/// The bracket `[P^{.,q} Lambda_qq']` is formed once; its monthly rows give the
/// off-diagonal block of `F_t` and its quarterly rows the lower-right block.
pub fn blocked_f(
    p: &DMatrix<f64>,
    lay: &BlockLayout,
    ops: &mut OpCount,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = lay.dim();
    let (nm_obs, nq_obs) = (lay.monthly.len(), lay.quarterly.len());
    let mut m = DMatrix::zeros(dim, nm_obs + nq_obs);
    for (r, &v) in lay.monthly.iter().enumerate() {
        m.column_mut(r).copy_from(&p.column(v));
    }
    let qcols = lay.qcols();
    if nq_obs > 0 {
        let lam = lay.lambda();
        let pq = DMatrix::from_fn(dim, qcols.len(), |i, j| p[(i, qcols[j])]);
        let bracket = &pq * lam.transpose();
        ops.gemm(dim, qcols.len(), nq_obs);
        m.view_mut((0, nm_obs), (dim, nq_obs)).copy_from(&bracket);
    }
    let mut f = DMatrix::zeros(nm_obs + nq_obs, nm_obs + nq_obs);
    for (c, &w) in lay.monthly.iter().enumerate() {
        for (r, &v) in lay.monthly.iter().enumerate() {
            f[(r, c)] = p[(v, w)];
        }
    }
    if nq_obs > 0 {
        for (r, &v) in lay.monthly.iter().enumerate() {
            for k in 0..nq_obs {
                let x = m[(v, nm_obs + k)];
                f[(r, nm_obs + k)] = x;
                f[(nm_obs + k, r)] = x;
            }
        }
        let lam = lay.lambda();
        let mq = DMatrix::from_fn(qcols.len(), nq_obs, |i, j| m[(qcols[i], nm_obs + j)]);
        let fqq = &lam * mq;
        ops.gemm(nq_obs, qcols.len(), nq_obs);
        f.view_mut((nm_obs, nm_obs), (nq_obs, nq_obs))
            .copy_from(&fqq);
    }
    symmetrize(&mut f);
    (f, m)
}

/// `K_t = T_{t+1} M_t F_t^{-1}` and `L_{t+1} = T_{t+1} - K_t Z_t` from
/// `MF = M_t F_t^{-1}`.
///
/// `K_t` is `(Pi [MF^{1:p}] ; [MF^{1:p}])`. `L` starts as the companion transition
/// and only the columns `Z_t` loads on are modified.
pub fn blocked_k(
    mf: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    lay: &BlockLayout,
    ops: &mut OpCount,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = lay.n();
    let np = n * lay.p;
    let dim = lay.dim();
    let obs = lay.obs();
    let mf_top = mf.rows(0, np);
    let mut k = DMatrix::zeros(dim, obs);
    let head = pi * mf_top;
    ops.gemm(n, np, obs);
    k.view_mut((0, 0), (n, obs)).copy_from(&head);
    k.view_mut((n, 0), (np, obs)).copy_from(&mf_top);

    let mut l = DMatrix::zeros(dim, dim);
    l.view_mut((0, 0), (n, np)).copy_from(pi);
    for i in n..dim {
        l[(i, i - n)] = 1.0;
    }
    for (r, &v) in lay.monthly.iter().enumerate() {
        let mut col = l.column_mut(v);
        col -= k.column(r);
    }
    let nq_obs = lay.quarterly.len();
    if nq_obs > 0 {
        let kq = k.columns(lay.monthly.len(), nq_obs);
        let kl = kq * lay.lambda();
        ops.gemm(dim, nq_obs, kl.ncols());
        for (j, &c) in lay.qcols().iter().enumerate() {
            let mut col = l.column_mut(c);
            col -= kl.column(j);
        }
    }
    (k, l)
}

/// Prediction `a_{t+1} = (Pi a^{1:p} + Pi_c ; a^{1:p})` and
/// `P_{t+1} = [[B Pi' + Sigma, B], [B', P^{1:p,1:p}]]` with `B = Pi P^{1:p,1:p}`.
pub fn blocked_predict(
    a_filt: &DVector<f64>,
    p_filt_top: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    intercept: &DVector<f64>,
    sigma: &DMatrix<f64>,
    ops: &mut OpCount,
) -> FilterState {
    let n = pi.nrows();
    let np = pi.ncols();
    let dim = n + np;
    let a_top = a_filt.rows(0, np);
    let mut a = DVector::zeros(dim);
    a.rows_mut(0, n).copy_from(&(pi * a_top + intercept));
    a.rows_mut(n, np).copy_from(&a_top);
    let b = pi * p_filt_top;
    ops.gemm(n, np, np);
    let mut p = DMatrix::zeros(dim, dim);
    let mut tl = &b * pi.transpose() + sigma;
    ops.gemm(n, np, n);
    symmetrize(&mut tl);
    p.view_mut((0, 0), (n, n)).copy_from(&tl);
    p.view_mut((0, n), (n, np)).copy_from(&b);
    p.view_mut((n, 0), (np, n)).copy_from(&b.transpose());
    p.view_mut((n, n), (np, np)).copy_from(p_filt_top);
    FilterState { a, p }
}

/// `r_{t-1} = L_{t+1}' r_t + Z_t' F_t^{-1} v_t`, with the second term scattered
/// from its monthly and quarterly blocks.
pub fn blocked_smooth_r(
    l: &DMatrix<f64>,
    r: &DVector<f64>,
    finv_v: &DVector<f64>,
    lay: &BlockLayout,
) -> DVector<f64> {
    let mut out = lay.scatter(finv_v);
    if !r.is_empty() {
        out += l.tr_mul(r);
    }
    out
}

/// What the backward pass keeps from a blocked step.
#[derive(Debug, Clone)]
pub struct BlockedRecord {
    pub t: usize,
    pub a_filt: DVector<f64>,
    /// Predicted covariance `P_t`; `N_{t+1} r = P_t (L_{t+1}' r)` since `G_t = 0`.
    pub p_pred: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub finv_v: DVector<f64>,
}

/// Blocked filter over `t = T_b..T-1` from the predicted state at `T_b`.
pub fn blocked_filter(
    plan: &Plan,
    y: &DMatrix<f64>,
    start: FilterState,
    ops: &mut OpCount,
) -> Result<Vec<BlockedRecord>> {
    let params = plan.params();
    let (n_m, n_q, p) = (params.n_m(), params.n_q(), params.p());
    let np = (n_m + n_q) * p;
    let (t_b, t_len) = (plan.pattern().t_b(), plan.pattern().t_len());
    let cp = plan.companion();
    let mut state = start;
    let mut out = Vec::with_capacity(t_len - t_b);
    for t in t_b..t_len {
        let k = t - t_b;
        let lay = BlockLayout {
            n_m,
            n_q,
            p,
            monthly: &cp.monthly[k],
            quarterly: &cp.quarterly[k],
            agg: plan.agg(),
        };
        let mut yv = DVector::zeros(lay.obs());
        for (r, &v) in lay.monthly.iter().enumerate() {
            yv[r] = y[(t, v)];
        }
        for (r, &i) in lay.quarterly.iter().enumerate() {
            yv[lay.monthly.len() + r] = y[(t, n_m + i)];
        }
        let v = yv - lay.observe(&state.a);
        let (f, m) = blocked_f(&state.p, &lay, ops);
        let (finv_v, mf) = if lay.obs() == 0 {
            (DVector::zeros(0), DMatrix::zeros(state.a.len(), 0))
        } else {
            let chol = spd_factor(f, t)?;
            (chol.solve_vec(&v), chol.solve(&m.transpose()).transpose())
        };
        let a_filt = &state.a + &m * &finv_v;
        let last = t + 1 == t_len;
        let (l, next) = if last {
            (DMatrix::zeros(0, state.a.len()), None)
        } else {
            let mut top =
                state.p.view((0, 0), (np, np)) - mf.rows(0, np) * m.rows(0, np).transpose();
            ops.gemm(np, lay.obs(), np);
            symmetrize(&mut top);
            let (_, l) = blocked_k(&mf, &cp.pi, &lay, ops);
            let sigma = params.sigma_at(t + 1);
            let next = blocked_predict(&a_filt, &top, &cp.pi, params.intercept(), &sigma, ops);
            (l, Some(next))
        };
        out.push(BlockedRecord {
            t,
            a_filt,
            p_pred: state.p,
            l,
            finv_v,
        });
        match next {
            Some(nx) => state = nx,
            None => break,
        }
    }
    Ok(out)
}

/// Backward pass over blocked records; returns the smoothed states.
pub fn blocked_smooth(plan: &Plan, records: &[BlockedRecord]) -> Vec<DVector<f64>> {
    let params = plan.params();
    let (n_m, n_q, p) = (params.n_m(), params.n_q(), params.p());
    let cp = plan.companion();
    let t_b = plan.pattern().t_b();
    let mut r = DVector::zeros(0);
    let mut out = vec![DVector::zeros(0); records.len()];
    for (k, rec) in records.iter().enumerate().rev() {
        let lay = BlockLayout {
            n_m,
            n_q,
            p,
            monthly: &cp.monthly[rec.t - t_b],
            quarterly: &cp.quarterly[rec.t - t_b],
            agg: plan.agg(),
        };
        let w = if r.is_empty() {
            DVector::zeros(rec.a_filt.len())
        } else {
            rec.l.tr_mul(&r)
        };
        out[k] = if r.is_empty() {
            rec.a_filt.clone()
        } else {
            &rec.a_filt + &rec.p_pred * &w
        };
        r = w + lay.scatter(&rec.finv_v);
    }
    out
}

/// Smoothed latent series with the ragged edge handled by blocked filtering.
pub fn run_blocked(plan: &Plan, y: &DMatrix<f64>) -> Result<BackendOutput> {
    run_blocked_counted(plan, y, &mut OpCount::default())
}

pub fn run_blocked_counted(
    plan: &Plan,
    y: &DMatrix<f64>,
    ops: &mut OpCount,
) -> Result<BackendOutput> {
    plan.check_values(y)?;
    let pattern = plan.pattern();
    if pattern.is_balanced() {
        return run_adaptive(plan, y);
    }
    let params = plan.params();
    let (n_m, n_q, p) = (params.n_m(), params.n_q(), params.p());
    let np = (n_m + n_q) * p;
    let t_b = pattern.t_b();

    let (compact, pred) = plan.filter_balanced_part(y)?;
    let last = compact.last().expect("nonempty");
    let lifted = lift_to_companion(&last.a_filt, &last.p_filt, y, last.t, n_m, n_q, p);
    let top = lifted.p.view((0, 0), (np, np)).into_owned();
    let start = blocked_predict(
        &lifted.a,
        &top,
        &plan.companion().pi,
        params.intercept(),
        &params.sigma_at(t_b),
        ops,
    );
    let edge = blocked_filter(plan, y, start, ops)?;
    let smoothed = blocked_smooth(plan, &edge);

    let mut means = y.clone();
    for (k, a) in smoothed.iter().enumerate() {
        plan.extract_companion(t_b + k, a, &mut means);
    }
    let alpha_hat = compact_part(&smoothed[0], n_m, n_q, p);
    let r = companion_to_compact(&alpha_hat, &pred.a, &pred.p);
    plan.smooth_balanced_part(&compact, r, &mut means);

    Ok(BackendOutput {
        means,
        stats: RunStats {
            compact_steps: compact.len(),
            companion_steps: edge.len(),
            augmented_steps: 0,
        },
    })
}
