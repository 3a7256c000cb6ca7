//! Reference computations for small instances: a full companion-form filter and
//! smoother over every period, and direct conditioning of the joint Gaussian of
//! all latent and observed entries.
//!
//! Both share the model used by the backends: monthly presample rows are fixed
//! at their data values, the quarterly presample block is `N(a0, P0)`, and rows
//! `t >= p` follow the VAR.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::FilterState;
use crate::linalg::symmetrize;
use crate::model::aggregation::Aggregation;
use crate::model::params::VarParams;
use crate::model::pattern::ObservationPattern;

/// Default cap on the companion dimension `n (p + 1)` for [`oracle_smooth`].
pub const SMOOTH_CAP: usize = 60;
/// Cap on `T n` for [`oracle_joint`].
pub const JOINT_CAP: usize = 200;

/// Conditional moments of the latent series.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    /// `T x n`: observed entries copied, latent entries replaced by conditional means.
    pub means: DMatrix<f64>,
    /// `T x n` conditional variances, zero at observed entries.
    pub variances: DMatrix<f64>,
}

/// Smoothed companion moments at every row from `p - 1` to `T - 1`.
#[derive(Debug, Clone)]
pub struct CompanionMoments {
    pub output: OracleOutput,
    pub states: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

/// Conditional mean and covariance of the latent entries, listed as `(row, var)`.
#[derive(Debug, Clone)]
pub struct JointMoments {
    pub output: OracleOutput,
    pub latent: Vec<(usize, usize)>,
    pub covariance: DMatrix<f64>,
}

fn check_inputs(
    params: &VarParams,
    agg: &Aggregation,
    pattern: &ObservationPattern,
    y: &DMatrix<f64>,
    init: &FilterState,
) -> Result<()> {
    let (n, p, n_q) = (params.n(), params.p(), params.n_q());
    if y.shape() != (pattern.t_len(), n) || agg.n_q != n_q || agg.p != p {
        return Err(Error::Dimension(
            "oracle inputs disagree on dimensions".into(),
        ));
    }
    if init.dim() != n_q * (p + 1) {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, expected {}",
            init.dim(),
            n_q * (p + 1)
        )));
    }
    Ok(())
}

/// Textbook companion filter and smoother in predicted form.
///
/// The state at row `t` is `(x_t', ..., x_{t-p}')'`. The recursion starts at
/// row `p - 1`, where the quarterly presample observations are attached.
pub fn oracle_smooth(
    params: &VarParams,
    agg: &Aggregation,
    pattern: &ObservationPattern,
    y: &DMatrix<f64>,
    init: &FilterState,
    cap: usize,
) -> Result<CompanionMoments> {
    check_inputs(params, agg, pattern, y, init)?;
    let (n_m, n_q, n, p) = (params.n_m(), params.n_q(), params.n(), params.p());
    let dim = n * (p + 1);
    if dim > cap {
        return Err(Error::OracleTooLarge {
            what: "companion state",
            size: dim,
            cap,
        });
    }
    let t_len = pattern.t_len();
    let lq = &agg.lambda_qq;
    let p_q = agg.p_q();

    let mut tr = DMatrix::zeros(dim, dim);
    for j in 0..p {
        tr.view_mut((0, j * n), (n, n)).copy_from(params.lag(j + 1));
    }
    for i in n..dim {
        tr[(i, i - n)] = 1.0;
    }
    let mut d = DVector::zeros(dim);
    d.rows_mut(0, n).copy_from(params.intercept());

    // initial state at row p - 1
    let mut a = DVector::zeros(dim);
    let mut pm = DMatrix::zeros(dim, dim);
    for g in 0..=p {
        if g < p {
            for v in 0..n_m {
                a[g * n + v] = y[(p - 1 - g, v)];
            }
        }
        for i in 0..n_q {
            a[g * n + n_m + i] = init.a[g * n_q + i];
            for h in 0..=p {
                for j in 0..n_q {
                    pm[(g * n + n_m + i, h * n + n_m + j)] = init.p[(g * n_q + i, h * n_q + j)];
                }
            }
        }
    }

    struct Step {
        z: DMatrix<f64>,
        finv_v: DVector<f64>,
        finv_z: DMatrix<f64>,
        k: DMatrix<f64>,
        a: DVector<f64>,
        p: DMatrix<f64>,
    }

    let mut steps = Vec::with_capacity(t_len + 1 - p);
    for t in p - 1..t_len {
        // observation rows: (coefficients over the state, value)
        let mut rows: Vec<(DVector<f64>, f64)> = vec![];
        let quarterly_row = |r: usize, i: usize, off: usize| {
            let mut z = DVector::zeros(dim);
            for l in 0..p_q {
                for i2 in 0..n_q {
                    z[(off + l) * n + n_m + i2] += lq[(i, l * n_q + i2)];
                }
            }
            (z, y[(r, n_m + i)])
        };
        if t + 1 == p {
            for r in 0..p {
                for &i in pattern.quarterly_observed(r) {
                    rows.push(quarterly_row(r, i, t - r));
                }
            }
        } else {
            for &v in pattern.observed(t) {
                let mut z = DVector::zeros(dim);
                z[v] = 1.0;
                rows.push((z, y[(t, v)]));
            }
            for &i in pattern.quarterly_observed(t) {
                rows.push(quarterly_row(t, i, 0));
            }
        }
        let k_obs = rows.len();
        let z = DMatrix::from_fn(k_obs, dim, |r, c| rows[r].0[c]);
        let yv = DVector::from_fn(k_obs, |r, _| rows[r].1);
        let v = &yv - &z * &a;
        let (finv_v, finv_z, pzt_finv) = if k_obs == 0 {
            (
                DVector::zeros(0),
                DMatrix::zeros(0, dim),
                DMatrix::zeros(dim, 0),
            )
        } else {
            let mut f = &z * &pm * z.transpose();
            symmetrize(&mut f);
            let chol = Cholesky::new(f).ok_or(Error::SingularInnovation {
                t,
                condition: f64::INFINITY,
            })?;
            let finv_z = chol.solve(&z);
            let pzt_finv = &pm * finv_z.transpose();
            (chol.solve(&v), finv_z, pzt_finv)
        };
        let k = &tr * &pzt_finv;
        let a_next = &tr * &a + &k * &v + &d;
        let l = &tr - &k * &z;
        let mut p_next = &tr * &pm * l.transpose();
        if t + 1 < t_len {
            let w = params.chol_at(t + 1);
            let ww = w * w.transpose();
            let mut top = p_next.view_mut((0, 0), (n, n));
            top += &ww;
        }
        symmetrize(&mut p_next);
        steps.push(Step {
            z,
            finv_v,
            finv_z,
            k,
            a: a.clone(),
            p: pm.clone(),
        });
        a = a_next;
        pm = p_next;
    }

    let mut r = DVector::zeros(dim);
    let mut nmat = DMatrix::zeros(dim, dim);
    let mut states = vec![DVector::zeros(0); steps.len()];
    let mut covariances = vec![DMatrix::zeros(0, 0); steps.len()];
    for (s, st) in steps.iter().enumerate().rev() {
        let l = &tr - &st.k * &st.z;
        r = st.z.transpose() * &st.finv_v + l.transpose() * &r;
        nmat = st.z.transpose() * &st.finv_z + l.transpose() * &nmat * &l;
        symmetrize(&mut nmat);
        states[s] = &st.a + &st.p * &r;
        let mut v = &st.p - &st.p * &nmat * &st.p;
        symmetrize(&mut v);
        covariances[s] = v;
    }

    let mut means = y.clone();
    let mut variances = DMatrix::zeros(t_len, n);
    for g in 0..p {
        let row = p - 1 - g;
        for i in 0..n_q {
            let c = g * n + n_m + i;
            means[(row, n_m + i)] = states[0][c];
            variances[(row, n_m + i)] = covariances[0][(c, c)];
        }
    }
    for (s, st) in states.iter().enumerate().skip(1) {
        let t = p - 1 + s;
        for &v in pattern.unobserved(t) {
            means[(t, v)] = st[v];
            variances[(t, v)] = covariances[s][(v, v)];
        }
        for i in 0..n_q {
            means[(t, n_m + i)] = st[n_m + i];
            variances[(t, n_m + i)] = covariances[s][(n_m + i, n_m + i)];
        }
    }
    Ok(CompanionMoments {
        output: OracleOutput { means, variances },
        states,
        covariances,
    })
}

/// Conditions the stacked Gaussian of all entries on the observed ones.
///
/// Every entry of rows `t >= p` and every quarterly presample entry is written
/// as `mu + B xi`, where `xi` stacks the initial quarterly block and the
/// standardized shocks.
pub fn oracle_joint(
    params: &VarParams,
    agg: &Aggregation,
    pattern: &ObservationPattern,
    y: &DMatrix<f64>,
    init: &FilterState,
) -> Result<JointMoments> {
    check_inputs(params, agg, pattern, y, init)?;
    let (n_m, n_q, n, p) = (params.n_m(), params.n_q(), params.n(), params.p());
    let t_len = pattern.t_len();
    if t_len * n > JOINT_CAP {
        return Err(Error::OracleTooLarge {
            what: "joint panel T*n",
            size: t_len * n,
            cap: JOINT_CAP,
        });
    }
    let n0 = n_q * (p + 1);
    let nxi = n0 + (t_len - p) * n;

    // xi = (init block, e_p, ..., e_{T-1}); init block ~ N(a0, P0), shocks ~ N(0, I)
    let mut xi_mean = DVector::zeros(nxi);
    xi_mean.rows_mut(0, n0).copy_from(&init.a);
    let mut xi_cov = DMatrix::identity(nxi, nxi);
    xi_cov.view_mut((0, 0), (n0, n0)).copy_from(&init.p);

    // x[(t, v)] = mu + b_row . xi, with b as an (T*n) x nxi matrix
    let idx = |t: usize, v: usize| t * n + v;
    let mut mu = DVector::zeros(t_len * n);
    let mut b = DMatrix::zeros(t_len * n, nxi);
    for t in 0..p {
        for v in 0..n_m {
            mu[idx(t, v)] = y[(t, v)];
        }
        for i in 0..n_q {
            b[(idx(t, n_m + i), (p - 1 - t) * n_q + i)] = 1.0;
        }
    }
    for t in p..t_len {
        for v in 0..n {
            let mut m = params.intercept()[v];
            let mut row = DVector::zeros(nxi);
            for j in 1..=p {
                let pj = params.lag(j);
                for w in 0..n {
                    let c = pj[(v, w)];
                    if c != 0.0 {
                        m += c * mu[idx(t - j, w)];
                        row.axpy(c, &b.row(idx(t - j, w)).transpose(), 1.0);
                    }
                }
            }
            let wt = params.chol_at(t);
            for s in 0..n {
                row[n0 + (t - p) * n + s] += wt[(v, s)];
            }
            mu[idx(t, v)] = m;
            b.row_mut(idx(t, v)).copy_from(&row.transpose());
        }
    }

    // observed functionals
    let p_q = agg.p_q();
    let lq = &agg.lambda_qq;
    let mut obs_rows: Vec<DVector<f64>> = vec![];
    let mut obs_vals: Vec<f64> = vec![];
    let mut latent = vec![];
    for t in 0..t_len {
        for v in 0..n_m {
            if t < p || pattern.monthly_observed(t, v) {
                if t >= p {
                    obs_rows.push(b.row(idx(t, v)).transpose());
                    obs_vals.push(y[(t, v)] - mu[idx(t, v)]);
                }
            } else {
                latent.push((t, v));
            }
        }
        for i in 0..n_q {
            latent.push((t, n_m + i));
            if pattern.quarterly_is_observed(t, i) {
                let mut row = DVector::zeros(nxi);
                let mut m = 0.0;
                for l in 0..p_q {
                    for i2 in 0..n_q {
                        let w = lq[(i, l * n_q + i2)];
                        if w != 0.0 {
                            row.axpy(w, &b.row(idx(t - l, n_m + i2)).transpose(), 1.0);
                            m += w * mu[idx(t - l, n_m + i2)];
                        }
                    }
                }
                obs_rows.push(row);
                obs_vals.push(y[(t, n_m + i)] - m);
            }
        }
    }
    // shift the observation residuals and latent means by the xi mean
    let bo = DMatrix::from_fn(obs_rows.len(), nxi, |r, c| obs_rows[r][c]);
    let resid = DVector::from_vec(obs_vals) - &bo * &xi_mean;
    let bl = DMatrix::from_fn(latent.len(), nxi, |r, c| {
        b[(idx(latent[r].0, latent[r].1), c)]
    });
    let mean_l =
        DVector::from_fn(latent.len(), |r, _| mu[idx(latent[r].0, latent[r].1)]) + &bl * &xi_mean;

    let bo_s = &bo * &xi_cov;
    let mut soo = &bo_s * bo.transpose();
    symmetrize(&mut soo);
    let slo = &bl * &xi_cov * bo.transpose();
    let mut sll = &bl * &xi_cov * bl.transpose();
    symmetrize(&mut sll);
    let (cond_mean, mut cond_cov) = if bo.nrows() == 0 {
        (mean_l, sll)
    } else {
        let chol = Cholesky::new(soo).ok_or(Error::SingularInnovation {
            t: 0,
            condition: f64::INFINITY,
        })?;
        let gain = chol.solve(&slo.transpose()).transpose();
        (mean_l + &gain * resid, sll - &gain * slo.transpose())
    };
    symmetrize(&mut cond_cov);

    let mut means = y.clone();
    let mut variances = DMatrix::zeros(t_len, n);
    for (k, &(t, v)) in latent.iter().enumerate() {
        means[(t, v)] = cond_mean[k];
        variances[(t, v)] = cond_cov[(k, k)];
    }
    Ok(JointMoments {
        output: OracleOutput { means, variances },
        latent,
        covariance: cond_cov,
    })
}
