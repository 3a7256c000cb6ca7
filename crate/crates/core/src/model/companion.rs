use nalgebra::{DMatrix, DVector};

use super::aggregation::Aggregation;
use super::params::VarParams;
use super::pattern::ObservationPattern;
use crate::linalg::{spectral_radius_dense, spectral_radius_gelfand};

/// Companion form with `p + 1` lags: state `(x_t', x_{t-1}', ..., x_{t-p}')'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionSystem {
    pub n: usize,
    pub p: usize,
    /// `F_1(Pi)`, `n(p+1) x n(p+1)`.
    pub f1: DMatrix<f64>,
    /// `F_c(Pi)`, the intercept stacked over zeros.
    pub fc: DVector<f64>,
    /// `(W_t', 0)'`; `Omega(Sigma_t) = H H'`.
    pub h: DMatrix<f64>,
    /// Loading of the observed entries at `t` on the state.
    pub z: DMatrix<f64>,
    /// Observed monthly variables in the order of the rows of `z`.
    pub monthly: Vec<usize>,
    /// Observed quarterly variables (within the quarterly block) after the monthly rows.
    pub quarterly: Vec<usize>,
}

impl CompanionSystem {
    pub fn dim(&self) -> usize {
        self.n * (self.p + 1)
    }

    pub fn omega(&self) -> DMatrix<f64> {
        &self.h * self.h.transpose()
    }
}

/// `F_1(Pi)` for `p + 1` lags: `(Pi_1 ... Pi_p 0)` over the shift `(I_{np} 0)`.
pub fn companion_transition(params: &VarParams) -> DMatrix<f64> {
    let (n, p) = (params.n(), params.p());
    let dim = n * (p + 1);
    let mut f1 = DMatrix::zeros(dim, dim);
    f1.view_mut((0, 0), (n, n * p))
        .copy_from(&params.stacked_lags());
    for i in n..dim {
        f1[(i, i - n)] = 1.0;
    }
    f1
}

pub fn build_companion_system(
    params: &VarParams,
    agg: &Aggregation,
    pattern: &ObservationPattern,
    t: usize,
) -> CompanionSystem {
    let (n, n_m, p) = (params.n(), params.n_m(), params.p());
    let dim = n * (p + 1);
    let f1 = companion_transition(params);
    let mut fc = DVector::zeros(dim);
    fc.rows_mut(0, n).copy_from(params.intercept());
    let mut h = DMatrix::zeros(dim, n);
    h.view_mut((0, 0), (n, n)).copy_from(params.chol_at(t));
    let monthly = pattern.observed(t).to_vec();
    let quarterly = pattern.quarterly_observed(t).to_vec();
    let mut z = DMatrix::zeros(monthly.len() + quarterly.len(), dim);
    for (r, &v) in monthly.iter().enumerate() {
        z[(r, v)] = 1.0;
    }
    let lq = agg.expand_qq(p + 1);
    for (k, &i) in quarterly.iter().enumerate() {
        z.row_mut(monthly.len() + k).copy_from(&lq.row(i));
    }
    debug_assert!(n_m + agg.n_q == n);
    CompanionSystem {
        n,
        p,
        f1,
        fc,
        h,
        z,
        monthly,
        quarterly,
    }
}

/// Largest companion eigenvalue modulus of the VAR.
///
/// Exact for moderate sizes; for large companions the Gelfand limit
/// `||A^k||^{1/k}` is evaluated with `k = 2^14` by repeated squaring.
pub fn spectral_radius(params: &VarParams) -> f64 {
    let (n, p) = (params.n(), params.p());
    let np = n * p;
    let mut a = DMatrix::zeros(np, np);
    a.view_mut((0, 0), (n, np))
        .copy_from(&params.stacked_lags());
    for i in n..np {
        a[(i, i - n)] = 1.0;
    }
    if np <= 600 {
        spectral_radius_dense(&a)
    } else {
        spectral_radius_gelfand(&a, 14)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::aggregation::{build_aggregation, AggregationScheme};
    use crate::model::params::CovFactors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, n_m: usize, n_q: usize, p: usize) -> VarParams {
        let n = n_m + n_q;
        let lags = (0..p)
            .map(|_| DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3)))
            .collect();
        let w = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if i > j {
                0.2
            } else {
                0.0
            }
        });
        VarParams::new(
            n_m,
            n_q,
            DVector::from_fn(n, |i, _| 0.1 * i as f64),
            lags,
            CovFactors::Constant(w),
        )
        .unwrap()
    }

    #[test]
    fn shift_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = random_params(&mut rng, 3, 1, 3);
        let f1 = companion_transition(&params);
        assert_eq!(f1.shape(), (16, 16));
        for i in 4..16 {
            for j in 0..16 {
                assert_eq!(f1[(i, j)], if j + 4 == i { 1.0 } else { 0.0 });
            }
        }
        for i in 0..4 {
            for j in 12..16 {
                assert_eq!(f1[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn diagonal_var1() {
        let params = VarParams::new(
            1,
            1,
            DVector::zeros(2),
            vec![DMatrix::identity(2, 2) * 0.5],
            CovFactors::Constant(DMatrix::identity(2, 2)),
        )
        .unwrap();
        let f1 = companion_transition(&params);
        assert_eq!(f1.view((0, 0), (2, 2)), DMatrix::identity(2, 2) * 0.5);
        assert!((spectral_radius(&params) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn companion_recursion_reproduces_var() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = rng.random_range(1..5);
            let params = random_params(&mut rng, 2, 1, p);
            let n = 3;
            let agg = build_aggregation(&AggregationScheme::skip_sampling(), 2, 1, p).unwrap();
            let pat = crate::model::pattern::ObservationPattern::from_masks(
                &vec![vec![true; 2]; p + 2],
                &vec![vec![false]; p + 2],
                p,
                1,
            )
            .unwrap();
            let sys = build_companion_system(&params, &agg, &pat, 0);
            let mut path: Vec<DVector<f64>> = (0..=p)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            // state holds x_t first
            let mut z = DVector::zeros(n * (p + 1));
            for g in 0..=p {
                z.rows_mut(g * n, n).copy_from(&path[p - g]);
            }
            for _ in 0..20 {
                let e = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                z = &sys.f1 * &z + &sys.fc + &sys.h * &e;
                let k = path.len();
                let mut x = params.intercept() + params.chol_at(0) * &e;
                for j in 1..=p {
                    x += params.lag(j) * &path[k - j];
                }
                path.push(x);
                let last = path.last().unwrap();
                assert!((z.rows(0, n) - last).amax() < 1e-12);
                assert!((z.rows(n, n) - &path[k - 1]).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn gelfand_estimate_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&mut rng, 40, 1, 16);
        let exact = {
            let np = 41 * 16;
            let mut a = DMatrix::zeros(np, np);
            a.view_mut((0, 0), (41, np))
                .copy_from(&params.stacked_lags());
            for i in 41..np {
                a[(i, i - 41)] = 1.0;
            }
            spectral_radius_dense(&a)
        };
        let est = spectral_radius(&params);
        assert!((est / exact - 1.0).abs() < 0.01, "{est} vs {exact}");
    }
}
