//! Adaptive filtering: the compact state is augmented, period by period, with
//! exactly the monthly variables that are unobserved.

pub mod builders;
pub mod index;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kalman::{smooth_all, FilterRecord, StepOptions};
use crate::plan::{BackendOutput, Plan, RunStats};

pub use builders::{
    build_adaptive_c, build_adaptive_d, build_adaptive_gh, build_adaptive_t, build_adaptive_z,
    flop_count, mult_count,
};
pub use index::AdaptiveIndex;

/// Filter records for every period from the initial state (row `p - 1`) to `T - 1`.
pub fn filter_adaptive(
    plan: &Plan,
    y: &DMatrix<f64>,
    opts: StepOptions,
) -> Result<Vec<FilterRecord>> {
    plan.check_values(y)?;
    let (records, _) = plan.filter_chain(y, plan.pattern().t_len(), None, opts)?;
    Ok(records)
}

/// Smoothed latent series from the adaptive recursions.
///
/// On a balanced panel this is the compact filter and smoother; the baseline and
/// blocked backends call it for that case too.
pub fn run_adaptive(plan: &Plan, y: &DMatrix<f64>) -> Result<BackendOutput> {
    let records = filter_adaptive(plan, y, StepOptions::default())?;
    let sm = smooth_all(&records, DVector::zeros(0));
    let p = plan.params().p();
    let pattern = plan.pattern();
    let mut means = y.clone();
    let mut stats = RunStats::default();
    for (k, a) in sm.smoothed.iter().enumerate() {
        let t = p - 1 + k;
        plan.extract_adaptive(t, a, &mut means);
        if pattern.unobserved(t).is_empty() {
            stats.compact_steps += 1;
        } else {
            stats.augmented_steps += 1;
        }
    }
    Ok(BackendOutput { means, stats })
}
