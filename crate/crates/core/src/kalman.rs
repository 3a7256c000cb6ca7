//! Filtering and smoothing recursions shared by every formulation.
//!
//! The system is
//!
//! ```text
//! y_t     = Z_t a_t     + c_t + G_t e_t
//! alpha_t = T_t a_{t-1} + d_t + H_t e_t
//! ```
//!
//! with the same `e_t ~ N(0, I)` in both equations. A step at period `t` updates
//! the predicted moments of `alpha_t` with `y_t` and, when the next period's
//! transition is supplied, predicts `alpha_{t+1}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_factor, symmetrize, SpdFactor};
use crate::model::params::VarParams;

/// Time-invariant parts of one period's system together with the products the
/// filter needs every time (`H G'`, `H H'` and the noise part of `F_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub z: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub hg: DMatrix<f64>,
    pub gg: DMatrix<f64>,
    pub hh: DMatrix<f64>,
    /// `G G' + Z H G' + (Z H G')'`.
    pub f_noise: DMatrix<f64>,
    /// Present when observations outnumber states and `f_noise` is well
    /// conditioned; `F_t^{-1}` is then applied through state-sized matrices.
    pub noise_solve: Option<NoiseSolve>,
}

/// Products with `N^{-1}`, `N = G G' + Z H G' + (Z H G')'`, fixed per system.
///
/// With `A = Z' N^{-1} Z` and `C = (I + A P)^{-1}`,
/// `F^{-1} = N^{-1} - N^{-1} Z P C Z' N^{-1}` for `F = N + Z P Z'`, so
/// `Z' F^{-1} = C Z' N^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSolve {
    factor: SpdFactor,
    ninv_z: DMatrix<f64>,
    a: DMatrix<f64>,
    /// `Z' N^{-1} G H'`.
    b1: DMatrix<f64>,
    /// `H G' N^{-1} G H'`.
    b2: DMatrix<f64>,
}

/// Largest condition estimate of `N` for which [`NoiseSolve`] is used.
const NOISE_SOLVE_CONDITION: f64 = 1e8;

impl NoiseSolve {
    fn new(z: &DMatrix<f64>, hg: &DMatrix<f64>, f_noise: &DMatrix<f64>) -> Option<Self> {
        let factor = SpdFactor::new(f_noise.clone())?;
        if !(factor.condition_estimate() <= NOISE_SOLVE_CONDITION) {
            return None;
        }
        let ninv_z = factor.solve(z);
        let gh = hg.transpose();
        let ninv_gh = factor.solve(&gh);
        let a = z.tr_mul(&ninv_z);
        let b1 = z.tr_mul(&ninv_gh);
        let mut b2 = hg * &ninv_gh;
        symmetrize(&mut b2);
        Some(Self {
            factor,
            ninv_z,
            a,
            b1,
            b2,
        })
    }
}

impl SystemMatrices {
    pub fn new(z: DMatrix<f64>, g: DMatrix<f64>, t: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != g.nrows() {
            return Err(Error::Dimension(format!(
                "Z has {} rows but G has {}",
                z.nrows(),
                g.nrows()
            )));
        }
        if z.ncols() != t.nrows() || t.nrows() != h.nrows() {
            return Err(Error::Dimension(format!(
                "state dimension disagrees: Z {}x{}, T {}x{}, H {}x{}",
                z.nrows(),
                z.ncols(),
                t.nrows(),
                t.ncols(),
                h.nrows(),
                h.ncols()
            )));
        }
        if g.ncols() != h.ncols() {
            return Err(Error::Dimension(
                "G and H load different shock vectors".into(),
            ));
        }
        let hg = &h * g.transpose();
        let gg = &g * g.transpose();
        let hh = &h * h.transpose();
        let zhg = &z * &hg;
        let mut f_noise = &gg + &zhg + zhg.transpose();
        symmetrize(&mut f_noise);
        let noise_solve = if z.nrows() > t.nrows() {
            NoiseSolve::new(&z, &hg, &f_noise)
        } else {
            None
        };
        Ok(Self {
            z,
            g,
            t,
            h,
            hg,
            gg,
            hh,
            f_noise,
            noise_solve,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn prev_dim(&self) -> usize {
        self.t.ncols()
    }
}

/// One period of a state-space model with its constant terms filled in.
#[derive(Debug, Clone)]
pub struct Period {
    pub mats: Arc<SystemMatrices>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
}

/// Predicted moments of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub a: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl FilterState {
    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

/// Everything the backward pass needs from one filtering step.
///
/// `l` and `n` are `L_{t+1}` and `N_{t+1}`; both are empty (zero rows or columns)
/// at the last period, where no transition follows.
#[derive(Debug, Clone)]
pub struct FilterRecord {
    pub t: usize,
    pub v: DVector<f64>,
    pub finv_v: DVector<f64>,
    pub zt_finv_v: DVector<f64>,
    /// `M_t = P_t Z_t' + H_t G_t'`.
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub a_filt: DVector<f64>,
    pub p_filt: DMatrix<f64>,
    /// `Z' F^{-1} Z`, kept only when smoothed covariances are requested.
    pub zt_finv_z: Option<DMatrix<f64>>,
}

/// State of the backward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    pub r: DVector<f64>,
    pub smoothed: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepOptions {
    pub keep_covariance_terms: bool,
}

/// What the transition needs from the update: `M F^{-1}`, or `M F^{-1} Z` when
/// the update ran in state-sized coordinates.
enum Gain {
    None,
    Dense(DMatrix<f64>),
    Reduced(DMatrix<f64>),
}

/// One step of the filter at period `t`.
///
/// Returns the record and, if `next` is given, the predicted moments of the
/// following period's state.
pub fn filter_step(
    state: &FilterState,
    sys: &Period,
    next: Option<&Period>,
    y: &DVector<f64>,
    t: usize,
    opts: StepOptions,
) -> Result<(FilterRecord, Option<FilterState>)> {
    let mats = &*sys.mats;
    let dim = state.dim();
    if mats.state_dim() != dim {
        return Err(Error::Dimension(format!(
            "period {t}: state has dimension {dim}, system expects {}",
            mats.state_dim()
        )));
    }
    if y.len() != mats.obs_dim() || sys.c.len() != y.len() {
        return Err(Error::Dimension(format!(
            "period {t}: {} observations for a system with {} rows",
            y.len(),
            mats.obs_dim()
        )));
    }
    let nobs = y.len();

    let mut zt_finv_v = DVector::zeros(dim);
    let mut zt_finv_z = opts.keep_covariance_terms.then(|| DMatrix::zeros(dim, dim));
    let (v, finv_v, m, gain, a_filt, p_filt) = if nobs == 0 {
        (
            DVector::zeros(0),
            DVector::zeros(0),
            DMatrix::zeros(dim, 0),
            Gain::None,
            state.a.clone(),
            state.p.clone(),
        )
    } else {
        let v = y - &mats.z * &state.a - &sys.c;
        let pz = &state.p * mats.z.transpose();
        let m = &pz + &mats.hg;
        match &mats.noise_solve {
            Some(ns) if dim > 0 => {
                let p = &state.p;
                let u = ns.factor.solve_vec(&v);
                let lu = (DMatrix::identity(dim, dim) + &ns.a * p).lu();
                let fail = || Error::SingularInnovation {
                    t,
                    condition: f64::INFINITY,
                };
                let zfv = lu.solve(&mats.z.tr_mul(&u)).ok_or_else(fail)?;
                let x = lu.solve(&ns.a).ok_or_else(fail)?;
                let y1 = lu.solve(&ns.b1).ok_or_else(fail)?;
                let b1p = ns.b1.tr_mul(p);
                let hfv = &mats.hg * &u - &b1p * &zfv;
                let w2 = &ns.b2 - &b1p * &y1;
                let a_filt = &state.a + p * &zfv + hfv;
                let px = p * &x;
                let mfz = &px + y1.transpose();
                let mut mfm = &px * p + p * &y1 + y1.tr_mul(p) + w2;
                symmetrize(&mut mfm);
                let mut p_filt = p - mfm;
                symmetrize(&mut p_filt);
                let finv_v = &u - &ns.ninv_z * (p * &zfv);
                zt_finv_v = zfv;
                if let Some(zfz) = zt_finv_z.as_mut() {
                    *zfz = x;
                    symmetrize(zfz);
                }
                (v, finv_v, m, Gain::Reduced(mfz), a_filt, p_filt)
            }
            _ => {
                let mut f = &mats.z * &pz + &mats.f_noise;
                symmetrize(&mut f);
                let chol = spd_factor(f, t)?;
                let finv_v = chol.solve_vec(&v);
                let mf = chol.solve(&m.transpose()).transpose();
                let a_filt = &state.a + &m * &finv_v;
                let mut p_filt = &state.p - &mf * m.transpose();
                symmetrize(&mut p_filt);
                zt_finv_v = mats.z.tr_mul(&finv_v);
                if let Some(zfz) = zt_finv_z.as_mut() {
                    *zfz = mats.z.transpose() * chol.solve(&mats.z);
                }
                (v, finv_v, m, Gain::Dense(mf), a_filt, p_filt)
            }
        }
    };

    let (l, n, predicted) = match next {
        Some(nx) => {
            let tn = &nx.mats.t;
            if tn.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "period {t}: next transition expects a state of dimension {}, have {dim}",
                    tn.ncols()
                )));
            }
            let l = match &gain {
                Gain::None => tn.clone(),
                Gain::Dense(mf) => tn - (tn * mf) * &mats.z,
                Gain::Reduced(mfz) => tn - tn * mfz,
            };
            let n = &p_filt * tn.transpose();
            let a_next = tn * &a_filt + &nx.d;
            let mut p_next = tn * &n + &nx.mats.hh;
            symmetrize(&mut p_next);
            (
                l,
                n,
                Some(FilterState {
                    a: a_next,
                    p: p_next,
                }),
            )
        }
        None => (DMatrix::zeros(0, dim), DMatrix::zeros(dim, 0), None),
    };

    Ok((
        FilterRecord {
            t,
            v,
            finv_v,
            zt_finv_v,
            m,
            l,
            n,
            a_filt,
            p_filt,
            zt_finv_z,
        },
        predicted,
    ))
}

/// One backward step: returns `a_{t|T}` and `r_{t-1}` from `r_t`.
pub fn smooth_step(record: &FilterRecord, r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    debug_assert_eq!(r.len(), record.l.nrows());
    if r.is_empty() {
        return (record.a_filt.clone(), record.zt_finv_v.clone());
    }
    let a = &record.a_filt + &record.n * r;
    let r_prev = record.l.tr_mul(r) + &record.zt_finv_v;
    (a, r_prev)
}

/// Backward step for the smoothed covariance: returns `V_t` and `J_{t-1}` from `J_t`.
pub fn smooth_cov_step(record: &FilterRecord, j: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let zfz = record
        .zt_finv_z
        .as_ref()
        .expect("covariance terms were not kept during filtering");
    if j.is_empty() {
        return (record.p_filt.clone(), zfz.clone());
    }
    let mut v = &record.p_filt - &record.n * j * record.n.transpose();
    symmetrize(&mut v);
    let mut j_prev = zfz + record.l.transpose() * j * &record.l;
    symmetrize(&mut j_prev);
    (v, j_prev)
}

/// Runs the backward pass over a full sequence of records.
pub fn smooth_all(records: &[FilterRecord], r_last: DVector<f64>) -> SmootherState {
    let mut r = r_last;
    let mut smoothed = vec![DVector::zeros(0); records.len()];
    for (k, rec) in records.iter().enumerate().rev() {
        let (a, r_prev) = smooth_step(rec, &r);
        smoothed[k] = a;
        r = r_prev;
    }
    SmootherState { r, smoothed }
}

/// How the initial state distribution is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum InitMode {
    /// Unconditional moments of the stationary VAR.
    #[default]
    Stationary,
    /// Zero mean and `kappa * I` covariance.
    DiffuseProxy { kappa: f64 },
}

impl InitMode {
    pub const DEFAULT_KAPPA: f64 = 1e4;

    pub fn diffuse() -> Self {
        InitMode::DiffuseProxy {
            kappa: Self::DEFAULT_KAPPA,
        }
    }
}

/// Solves `X = A X A' + Q` by the doubling algorithm.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension(
            "Lyapunov equation needs square A and Q".into(),
        ));
    }
    let mut ak = a.clone();
    let mut x = q.clone();
    for _ in 0..100 {
        let ax = &ak * &x;
        let step = &ax * ak.transpose();
        x += &step;
        symmetrize(&mut x);
        let scale = x.amax().max(f64::MIN_POSITIVE);
        if !scale.is_finite() {
            break;
        }
        if step.amax() <= 1e-17 * scale {
            return Ok(x);
        }
        ak = &ak * &ak;
    }
    Err(Error::Initialization(
        "Lyapunov iteration did not converge; the VAR is not stationary, use the diffuse-proxy initialization"
            .into(),
    ))
}

/// Autocovariances `Gamma(0), ..., Gamma(h_max)` of a stationary VAR, with
/// `Gamma(h) = E[(x_t - mu)(x_{t-h} - mu)']`, under covariance factor `w`.
pub fn autocovariances(
    params: &VarParams,
    w: &DMatrix<f64>,
    h_max: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let (n, p) = (params.n(), params.p());
    let np = n * p;
    let mut a = DMatrix::zeros(np, np);
    a.view_mut((0, 0), (n, np))
        .copy_from(&params.stacked_lags());
    for i in n..np {
        a[(i, i - n)] = 1.0;
    }
    let mut q = DMatrix::zeros(np, np);
    q.view_mut((0, 0), (n, n)).copy_from(&(w * w.transpose()));
    let s = solve_discrete_lyapunov(&a, &q)?;
    let mut gamma: Vec<DMatrix<f64>> = (0..p.min(h_max + 1))
        .map(|h| s.view((0, h * n), (n, n)).into_owned())
        .collect();
    let gam = |g: &Vec<DMatrix<f64>>, k: isize| -> DMatrix<f64> {
        if k >= 0 {
            g[k as usize].clone()
        } else {
            g[(-k) as usize].transpose()
        }
    };
    while gamma.len() <= h_max {
        let h = gamma.len() as isize;
        let mut next = DMatrix::zeros(n, n);
        for j in 1..=p {
            next += params.lag(j) * gam(&gamma, h - j as isize);
        }
        gamma.push(next);
    }
    Ok(gamma)
}

/// Unconditional mean `(I - Pi_1 - ... - Pi_p)^{-1} Pi_c`.
pub fn unconditional_mean(params: &VarParams) -> Result<DVector<f64>> {
    let n = params.n();
    let mut a = DMatrix::identity(n, n);
    for pi in params.lags() {
        a -= pi;
    }
    a.lu()
        .solve(params.intercept())
        .ok_or_else(|| Error::Initialization("I - sum(Pi_j) is singular".into()))
}

/// Distribution of the initial compact state
/// `(x_{q,p-1}', ..., x_{q,-1}')'`, which has `p + 1` groups of `n_q`.
pub fn init_state(params: &VarParams, mode: InitMode) -> Result<FilterState> {
    let (n_m, n_q, p) = (params.n_m(), params.n_q(), params.p());
    let dim = n_q * (p + 1);
    match mode {
        InitMode::DiffuseProxy { kappa } => {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::Config(format!(
                    "diffuse kappa must be positive, got {kappa}"
                )));
            }
            Ok(FilterState {
                a: DVector::zeros(dim),
                p: DMatrix::identity(dim, dim) * kappa,
            })
        }
        InitMode::Stationary => {
            let rho = crate::model::companion::spectral_radius(params);
            if !(rho < 1.0) {
                return Err(Error::Initialization(format!(
                    "spectral radius {rho:.6} is not below one; use the diffuse-proxy initialization"
                )));
            }
            let mu = unconditional_mean(params)?;
            let gamma = autocovariances(params, params.chol_at(0), p)?;
            let mut a = DVector::zeros(dim);
            let mut pm = DMatrix::zeros(dim, dim);
            for g in 0..=p {
                for i in 0..n_q {
                    a[g * n_q + i] = mu[n_m + i];
                }
                for h in g..=p {
                    // Cov(x_{q,s-g}, x_{q,s-h}) = Gamma(h - g)_{qq}
                    let blk = gamma[h - g].view((n_m, n_m), (n_q, n_q));
                    pm.view_mut((g * n_q, h * n_q), (n_q, n_q)).copy_from(&blk);
                    if h != g {
                        pm.view_mut((h * n_q, g * n_q), (n_q, n_q))
                            .copy_from(&blk.transpose());
                    }
                }
            }
            symmetrize(&mut pm);
            Ok(FilterState { a, p: pm })
        }
    }
}
