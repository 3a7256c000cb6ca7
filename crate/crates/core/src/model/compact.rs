use super::aggregation::Aggregation;
use super::params::VarParams;
use super::pattern::ObservationPattern;
use crate::adaptive::index::AdaptiveIndex;
use crate::error::{Error, Result};
use crate::system::{ObsLayout, StateSpaceSystem, SystemBuilder};

/// Observation layout of filtering period `t >= p`; the first period also
/// carries the quarterly observations made during the presample.
pub fn obs_layout(pattern: &ObservationPattern, t: usize, p: usize) -> ObsLayout {
    let presample = if t == p {
        (0..p)
            .flat_map(|r| pattern.quarterly_observed(r).iter().map(move |&i| (r, i)))
            .collect()
    } else {
        vec![]
    };
    ObsLayout {
        monthly: pattern.observed(t).to_vec(),
        quarterly: pattern.quarterly_observed(t).to_vec(),
        presample,
    }
}

/// Compact form at period `t` (0-based, `p <= t < T_b`): the state holds the
/// quarterly variables and `p` of their lags; observed monthly lags are exogenous.
pub fn build_compact_system(
    params: &VarParams,
    agg: &Aggregation,
    pattern: &ObservationPattern,
    t: usize,
) -> Result<StateSpaceSystem> {
    if t >= pattern.t_b() {
        return Err(Error::WrongFormulation {
            t,
            t_b: pattern.t_b(),
        });
    }
    let p = params.p();
    if t < p {
        return Err(Error::Config(format!(
            "period {t} belongs to the presample (first {p} rows)"
        )));
    }
    let mut builder = SystemBuilder::new(params, agg);
    builder.build(
        t,
        AdaptiveIndex::compact(params.n_m(), params.n_q()),
        obs_layout(pattern, t, p),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::aggregation::{build_aggregation, AggregationScheme};
    use crate::model::params::CovFactors;
    use nalgebra::{DMatrix, DVector};

    fn params() -> VarParams {
        let lags = (1..=3)
            .map(|j| DMatrix::from_fn(4, 4, |r, c| 0.01 * (j * 100 + r * 10 + c) as f64))
            .collect();
        VarParams::new(
            3,
            1,
            DVector::zeros(4),
            lags,
            CovFactors::Constant(DMatrix::identity(4, 4)),
        )
        .unwrap()
    }

    fn pattern(t_len: usize, t_b: usize) -> ObservationPattern {
        let monthly: Vec<Vec<bool>> = (0..t_len).map(|t| vec![t < t_b; 3]).collect();
        let quarterly: Vec<Vec<bool>> = (0..t_len).map(|t| vec![(t + 1) % 3 == 0]).collect();
        ObservationPattern::from_masks(&monthly, &quarterly, 3, 3).unwrap()
    }

    #[test]
    fn state_dimension_independent_of_monthly_count() {
        let agg = build_aggregation(&AggregationScheme::average(), 3, 1, 3).unwrap();
        let pat = pattern(12, 10);
        for t in 3..10 {
            let sys = build_compact_system(&params(), &agg, &pat, t).unwrap();
            assert_eq!(sys.state_dim(), 4);
        }
    }

    #[test]
    fn beyond_balanced_sample_is_rejected() {
        let agg = build_aggregation(&AggregationScheme::average(), 3, 1, 3).unwrap();
        let pat = pattern(12, 10);
        assert!(matches!(
            build_compact_system(&params(), &agg, &pat, 10),
            Err(Error::WrongFormulation { t: 10, t_b: 10 })
        ));
    }

    #[test]
    fn zero_dynamics_identity_noise() {
        let p0 = VarParams::new(
            3,
            1,
            DVector::zeros(4),
            vec![DMatrix::zeros(4, 4); 3],
            CovFactors::Constant(DMatrix::identity(4, 4)),
        )
        .unwrap();
        let agg = build_aggregation(&AggregationScheme::average(), 3, 1, 3).unwrap();
        let pat = pattern(12, 12);
        let sys = build_compact_system(&p0, &agg, &pat, 4).unwrap();
        let m = sys.mats();
        assert!(m.z.rows(0, 3).iter().all(|&v| v == 0.0));
        assert_eq!(m.g, DMatrix::identity(4, 4).rows(0, 3).into_owned());
    }
}
