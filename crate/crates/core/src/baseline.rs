//! Compact filtering on the balanced sample, dense companion-form filtering and
//! smoothing on the ragged edge, and the transitions between the two.

use nalgebra::{DMatrix, DVector};

use crate::adaptive::run_adaptive;
use crate::error::Result;
use crate::kalman::{filter_step, smooth_all, FilterRecord, FilterState, StepOptions};
use crate::linalg::{pinv_sym, symmetrize};
use crate::plan::{BackendOutput, Plan, RunStats};

/// Embeds filtered compact moments at period `t` into the companion state
/// `(x_t', ..., x_{t-p}')'`: monthly entries are the (known) data, quarterly
/// entries come from the compact state.
pub fn lift_to_companion(
    a_filt: &DVector<f64>,
    p_filt: &DMatrix<f64>,
    y: &DMatrix<f64>,
    t: usize,
    n_m: usize,
    n_q: usize,
    p: usize,
) -> FilterState {
    let n = n_m + n_q;
    let dim = n * (p + 1);
    let mut a = DVector::zeros(dim);
    let mut pm = DMatrix::zeros(dim, dim);
    for g in 0..=p {
        for v in 0..n_m {
            a[g * n + v] = y[(t - g, v)];
        }
        for i in 0..n_q {
            a[g * n + n_m + i] = a_filt[g * n_q + i];
        }
        for h in 0..=p {
            for i in 0..n_q {
                for j in 0..n_q {
                    pm[(g * n + n_m + i, h * n + n_m + j)] = p_filt[(g * n_q + i, h * n_q + j)];
                }
            }
        }
    }
    FilterState { a, p: pm }
}

/// Lift followed by one dense companion prediction into period `t + 1`.
pub fn compact_to_companion(plan: &Plan, record: &FilterRecord, y: &DMatrix<f64>) -> FilterState {
    let params = plan.params();
    let t = record.t;
    let lifted = lift_to_companion(
        &record.a_filt,
        &record.p_filt,
        y,
        t,
        params.n_m(),
        params.n_q(),
        params.p(),
    );
    let cp = plan.companion();
    let next = &cp.systems[t + 1 - plan.pattern().t_b()];
    let a = &cp.f1 * &lifted.a + &cp.fc;
    let mut p = &cp.f1 * &lifted.p * cp.f1.transpose() + &next.hh;
    symmetrize(&mut p);
    FilterState { a, p }
}

/// The compact state `(x_{q,t}', ..., x_{q,t-p}')'` inside a companion vector.
pub fn compact_part(alpha: &DVector<f64>, n_m: usize, n_q: usize, p: usize) -> DVector<f64> {
    let n = n_m + n_q;
    DVector::from_fn(n_q * (p + 1), |k, _| {
        let (g, i) = (k / n_q.max(1), k % n_q.max(1));
        alpha[g * n + n_m + i]
    })
}

/// `r = P^+ (alpha_hat - a)`, the starting value of the compact backward pass.
///
/// `P` is singular whenever the data pin down linear combinations of the state
/// (quarterly aggregates); the pseudo-inverse acts on its support, which contains
/// `alpha_hat - a`.
pub fn companion_to_compact(
    alpha_hat: &DVector<f64>,
    a_pred: &DVector<f64>,
    p_pred: &DMatrix<f64>,
) -> DVector<f64> {
    let pinv = pinv_sym(p_pred);
    if log::log_enabled!(log::Level::Debug) {
        let rank = pinv.rank(1e-12);
        if rank < p_pred.nrows() {
            log::debug!(
                "compact prediction covariance has rank {rank} of {}; using its pseudo-inverse",
                p_pred.nrows()
            );
        }
    }
    pinv * (alpha_hat - a_pred)
}

/// Dense companion filtering over `t = T_b..T-1` from the predicted state at `T_b`.
pub(crate) fn companion_filter(
    plan: &Plan,
    y: &DMatrix<f64>,
    start: FilterState,
) -> Result<Vec<FilterRecord>> {
    let (t_b, t_len) = (plan.pattern().t_b(), plan.pattern().t_len());
    let mut state = start;
    let mut records = Vec::with_capacity(t_len - t_b);
    let (mut cur, mut cur_y) = plan.companion_period(t_b, y);
    for t in t_b..t_len {
        let next = (t + 1 < t_len).then(|| plan.companion_period(t + 1, y));
        let (rec, pred) = filter_step(
            &state,
            &cur,
            next.as_ref().map(|x| &x.0),
            &cur_y,
            t,
            StepOptions::default(),
        )?;
        records.push(rec);
        if let Some((np, ny)) = next {
            state = pred.expect("prediction requested");
            cur = np;
            cur_y = ny;
        }
    }
    Ok(records)
}

/// Smoothed latent series by the compact/companion procedure.
pub fn run_baseline(plan: &Plan, y: &DMatrix<f64>) -> Result<BackendOutput> {
    plan.check_values(y)?;
    let pattern = plan.pattern();
    if pattern.is_balanced() {
        return run_adaptive(plan, y);
    }
    let params = plan.params();
    let (n_m, n_q, p) = (params.n_m(), params.n_q(), params.p());
    let t_b = pattern.t_b();

    let (compact, pred) = plan.filter_balanced_part(y)?;
    let start = compact_to_companion(plan, compact.last().expect("nonempty"), y);
    let edge = companion_filter(plan, y, start)?;

    let sm = smooth_all(&edge, DVector::zeros(0));
    let mut means = y.clone();
    for (k, a) in sm.smoothed.iter().enumerate() {
        plan.extract_companion(t_b + k, a, &mut means);
    }
    let alpha_hat = compact_part(&sm.smoothed[0], n_m, n_q, p);
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
