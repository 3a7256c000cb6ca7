//! Synthetic instances: stable random VARs, simulated panels and ragged edges.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::aggregation::Aggregation;
use crate::model::companion::spectral_radius;
use crate::model::params::{CovFactors, VarParams};
use crate::model::pattern::{Calendar, MixedFreqData};

/// How many monthly variables go missing in both of the last two periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingRecipe {
    /// 1 for `n <= 40`, 2 for `n <= 80`, 3 above.
    #[default]
    Bracket,
    /// `ceil(0.025 n)`.
    Proportional,
}

impl MissingRecipe {
    pub fn missing_at_both(self, n: usize) -> usize {
        match self {
            MissingRecipe::Bracket => match n {
                0..=40 => 1,
                41..=80 => 2,
                _ => 3,
            },
            MissingRecipe::Proportional => (0.025 * n as f64 - 1e-9).ceil() as usize,
        }
    }
}

/// Number of fully observed monthly variables, `ceil(0.3 n)`.
pub fn fully_observed_count(n: usize) -> usize {
    (0.3 * n as f64 - 1e-9).ceil() as usize
}

/// Trailing missing periods per monthly variable for a two-period edge:
/// fully observed first, then missing at `T - 1` only, then missing at both.
pub fn two_period_edge(n_m: usize, n_q: usize, recipe: MissingRecipe) -> Result<Vec<usize>> {
    let n = n_m + n_q;
    let full = fully_observed_count(n);
    let both = recipe.missing_at_both(n);
    if full + both > n_m {
        return Err(Error::Config(format!(
            "{n_m} monthly variables cannot hold {full} fully observed and {both} missing at both edge periods"
        )));
    }
    let mut out = vec![0; n_m];
    for (v, e) in out.iter_mut().enumerate().skip(full) {
        *e = if v >= n_m - both { 2 } else { 1 };
    }
    Ok(out)
}

/// Random VAR with spectral radius at most `radius_bound`, a small random
/// intercept and a lower-triangular factor with positive diagonal.
pub fn random_var<R: Rng>(
    rng: &mut R,
    n_m: usize,
    n_q: usize,
    p: usize,
    radius_bound: f64,
) -> Result<VarParams> {
    let n = n_m + n_q;
    let scale = 0.5 / ((n * p) as f64).sqrt();
    let lags = (0..p)
        .map(|_| DMatrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let intercept = DVector::from_fn(n, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.random_range(0.5..1.5)
        } else if j < i {
            0.3 * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    let params = VarParams::new(n_m, n_q, intercept, lags, CovFactors::Constant(w))?;
    let rho = spectral_radius(&params);
    Ok(if rho > radius_bound {
        params.with_rescaled_dynamics(radius_bound / rho * (1.0 - 1e-6))
    } else {
        params
    })
}

/// Simulates `t_len` rows of the latent monthly process after `burn_in` rows
/// started at zero.
pub fn simulate_latent<R: Rng>(
    rng: &mut R,
    params: &VarParams,
    t_len: usize,
    burn_in: usize,
) -> DMatrix<f64> {
    let (n, p) = (params.n(), params.p());
    let total = t_len + burn_in;
    let mut x = DMatrix::zeros(total, n);
    let mut e = DVector::zeros(n);
    for t in 0..total {
        let mut row = params.intercept().clone();
        for j in 1..=p.min(t) {
            row += params.lag(j) * x.row(t - j).transpose();
        }
        for s in e.iter_mut() {
            *s = StandardNormal.sample(rng);
        }
        let w = params.chol_at(t.saturating_sub(burn_in));
        row += w * &e;
        x.row_mut(t).copy_from(&row.transpose());
    }
    x.rows(burn_in, t_len).into_owned()
}

/// Quarterly aggregates at quarter-end rows of a latent panel; NaN elsewhere.
pub fn aggregate_quarterly(
    latent: &DMatrix<f64>,
    agg: &Aggregation,
    calendar: Calendar,
) -> DMatrix<f64> {
    let (n_m, n_q, p_q) = (agg.n_m, agg.n_q, agg.p_q());
    let t_len = latent.nrows();
    DMatrix::from_fn(t_len, n_q, |t, i| {
        if !calendar.is_quarter_end(t) || t + 1 < p_q {
            return f64::NAN;
        }
        let mut s = 0.0;
        for l in 0..p_q {
            for i2 in 0..n_q {
                s += agg.lambda_qq[(i, l * n_q + i2)] * latent[(t - l, n_m + i2)];
            }
        }
        s
    })
}

/// Observed panel from a latent one: monthly variable `v` is missing in its
/// last `edge[v]` rows, quarterly columns hold aggregates at quarter ends.
pub fn observe(
    latent: &DMatrix<f64>,
    agg: &Aggregation,
    calendar: Calendar,
    edge: &[usize],
) -> Result<MixedFreqData> {
    let (n_m, n_q) = (agg.n_m, agg.n_q);
    if edge.len() != n_m {
        return Err(Error::Dimension(format!(
            "edge lengths given for {} of {n_m} monthly variables",
            edge.len()
        )));
    }
    let t_len = latent.nrows();
    let q = aggregate_quarterly(latent, agg, calendar);
    let values = DMatrix::from_fn(t_len, n_m + n_q, |t, v| {
        if v < n_m {
            if t + edge[v] >= t_len {
                f64::NAN
            } else {
                latent[(t, v)]
            }
        } else {
            q[(t, v - n_m)]
        }
    });
    MixedFreqData::new(values, n_q, calendar)
}

/// A model together with one simulated data set.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: VarParams,
    pub latent: DMatrix<f64>,
    pub data: MixedFreqData,
}

/// Random VAR, simulated panel and the given monotone edge.
pub fn make_instance<R: Rng>(
    rng: &mut R,
    agg: &Aggregation,
    t_len: usize,
    edge: &[usize],
    radius_bound: f64,
    calendar: Calendar,
) -> Result<Instance> {
    let params = random_var(rng, agg.n_m, agg.n_q, agg.p, radius_bound)?;
    let latent = simulate_latent(rng, &params, t_len, 100);
    let data = observe(&latent, agg, calendar, edge)?;
    Ok(Instance {
        params,
        latent,
        data,
    })
}

/// Random monotone edge: every monthly variable gets `0..=max_len` trailing
/// missing periods and at least one variable gets exactly `max_len`.
pub fn random_edge<R: Rng>(rng: &mut R, n_m: usize, max_len: usize) -> Vec<usize> {
    let mut edge: Vec<usize> = (0..n_m).map(|_| rng.random_range(0..=max_len)).collect();
    if max_len > 0 && !edge.contains(&max_len) {
        let v = rng.random_range(0..n_m);
        edge[v] = max_len;
    }
    edge
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::aggregation::{build_aggregation, AggregationScheme};
    use crate::model::pattern::detect_pattern;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recipe_counts() {
        assert_eq!(MissingRecipe::Bracket.missing_at_both(10), 1);
        assert_eq!(MissingRecipe::Bracket.missing_at_both(40), 1);
        assert_eq!(MissingRecipe::Bracket.missing_at_both(50), 2);
        assert_eq!(MissingRecipe::Bracket.missing_at_both(80), 2);
        assert_eq!(MissingRecipe::Bracket.missing_at_both(90), 3);
        assert_eq!(MissingRecipe::Bracket.missing_at_both(120), 3);
        assert_eq!(MissingRecipe::Proportional.missing_at_both(10), 1);
        assert_eq!(MissingRecipe::Proportional.missing_at_both(120), 3);
        assert_eq!(MissingRecipe::Proportional.missing_at_both(50), 2);
        assert_eq!(fully_observed_count(10), 3);
        assert_eq!(fully_observed_count(120), 36);
    }

    #[test]
    fn two_period_edge_layout() {
        let e = two_period_edge(119, 1, MissingRecipe::Bracket).unwrap();
        assert_eq!(e.iter().filter(|&&x| x == 0).count(), 36);
        assert_eq!(e.iter().filter(|&&x| x == 2).count(), 3);
        assert_eq!(e.iter().filter(|&&x| x == 1).count(), 80);
    }

    #[test]
    fn random_var_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let params = random_var(&mut rng, 5, 2, 4, 0.95).unwrap();
            assert!(spectral_radius(&params) <= 0.95 + 1e-9);
        }
    }

    #[test]
    fn smoke_instance_passes_pattern_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let agg = build_aggregation(&AggregationScheme::average(), 3, 1, 3).unwrap();
        let inst =
            make_instance(&mut rng, &agg, 12, &[0, 1, 2], 0.95, Calendar::default()).unwrap();
        let pat = detect_pattern(&inst.data, 3, 3).unwrap();
        assert_eq!(pat.t_b(), 10);
        // quarterly values are the aggregates of the latent path
        let t = 8;
        let want = (inst.latent[(6, 3)] + inst.latent[(7, 3)] + inst.latent[(8, 3)]) / 3.0;
        assert!((inst.data.values()[(t, 3)] - want).abs() < 1e-14);
    }
}
