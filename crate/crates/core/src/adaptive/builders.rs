//! System matrices of the adaptive formulation.
//!
//! The state at `t` stacks `p + 1` groups `(x_{U_t,t-g}', x_{q,t-g}')'`,
//! `g = 0..=p`. Exogenous vectors collect the observed lags
//! `y_{O_{t-1}, t-1..t-p}` variable by variable, lags ascending.
//!
//! With `U_t = U_{t-1}` empty these reduce to the compact form.

use nalgebra::DMatrix;

use super::index::AdaptiveIndex;
use crate::model::aggregation::Aggregation;
use crate::model::params::VarParams;

/// `T_t`: `(p+1)k_t x (p+1)k_{t-1}`.
pub fn build_adaptive_t(params: &VarParams, idx: &AdaptiveIndex) -> DMatrix<f64> {
    let p = params.p();
    let (k, kp) = (idx.k(), idx.k_prev());
    let (head, prev) = (idx.head(), idx.head_prev());
    let mut t = DMatrix::zeros((p + 1) * k, (p + 1) * kp);
    for (i, &a) in head.iter().enumerate() {
        for j in 1..=p {
            let pi = params.lag(j);
            for (bp, &b) in prev.iter().enumerate() {
                t[(i, (j - 1) * kp + bp)] = pi[(a, b)];
            }
        }
    }
    let map = idx.prev_in_current();
    for g in 1..=p {
        for (bp, &r) in map.iter().enumerate() {
            t[(g * k + r, (g - 1) * kp + bp)] = 1.0;
        }
    }
    t
}

/// `D_t`: `(p+1)k_t x p|O_{t-1}|`.
pub fn build_adaptive_d(params: &VarParams, idx: &AdaptiveIndex) -> DMatrix<f64> {
    let p = params.p();
    let k = idx.k();
    let head = idx.head();
    let mut d = DMatrix::zeros((p + 1) * k, p * idx.o_prev.len());
    for (i, &a) in head.iter().enumerate() {
        for (wp, &w) in idx.o_prev.iter().enumerate() {
            for j in 1..=p {
                d[(i, wp * p + j - 1)] = params.lag(j)[(a, w)];
            }
        }
    }
    for i in idx.newly_latent() {
        let col = idx
            .pos_o_prev(head[i])
            .expect("newly latent variables were observed")
            * p;
        for g in 1..=p {
            d[(g * k + i, col + g - 1)] = 1.0;
        }
    }
    d
}

/// `Z_t` on the selected coordinates `(I_{p+1} (x) J_t') alpha_t`:
/// `(|O_t| + |quarterly|) x (p+1)k_{t-1}`.
pub fn build_adaptive_z(
    params: &VarParams,
    agg: &Aggregation,
    idx: &AdaptiveIndex,
    quarterly: &[usize],
) -> DMatrix<f64> {
    let p = params.p();
    let kp = idx.k_prev();
    let prev = idx.head_prev();
    let nu = idx.u_prev.len();
    let mut z = DMatrix::zeros(idx.o.len() + quarterly.len(), (p + 1) * kp);
    for (r, &v) in idx.o.iter().enumerate() {
        for j in 1..=p {
            let pi = params.lag(j);
            for (bp, &b) in prev.iter().enumerate() {
                z[(r, j * kp + bp)] = pi[(v, b)];
            }
        }
    }
    let n_q = agg.n_q;
    for (r, &i) in quarterly.iter().enumerate() {
        for l in 0..agg.p_q() {
            for i2 in 0..n_q {
                z[(idx.o.len() + r, l * kp + nu + i2)] = agg.lambda_qq[(i, l * n_q + i2)];
            }
        }
    }
    z
}

/// `C_t`: `(|O_t| + |quarterly|) x p|O_{t-1}|`; quarterly rows are zero.
pub fn build_adaptive_c(
    params: &VarParams,
    idx: &AdaptiveIndex,
    n_quarterly: usize,
) -> DMatrix<f64> {
    let p = params.p();
    let mut c = DMatrix::zeros(idx.o.len() + n_quarterly, p * idx.o_prev.len());
    for (r, &v) in idx.o.iter().enumerate() {
        for (wp, &w) in idx.o_prev.iter().enumerate() {
            for j in 1..=p {
                c[(r, wp * p + j - 1)] = params.lag(j)[(v, w)];
            }
        }
    }
    c
}

/// `G_t` (rows `O_t` of `W_t` over zero quarterly rows) and `H_t` (rows `U_t`
/// and `q` of `W_t` over zeros).
pub fn build_adaptive_gh(
    params: &VarParams,
    idx: &AdaptiveIndex,
    n_quarterly: usize,
    t: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = (params.n(), params.p());
    let w = params.chol_at(t);
    let mut g = DMatrix::zeros(idx.o.len() + n_quarterly, n);
    for (r, &v) in idx.o.iter().enumerate() {
        g.row_mut(r).copy_from(&w.row(v));
    }
    let k = idx.k();
    let mut h = DMatrix::zeros((p + 1) * k, n);
    for (r, &v) in idx.head().iter().enumerate() {
        h.row_mut(r).copy_from(&w.row(v));
    }
    (g, h)
}

/// Scatters the columns of a loading on the selected coordinates into the full
/// `(p+1)k_t`-dimensional state.
pub fn expand_selected(z: &DMatrix<f64>, idx: &AdaptiveIndex, groups: usize) -> DMatrix<f64> {
    let (k, kp) = (idx.k(), idx.k_prev());
    debug_assert_eq!(z.ncols(), groups * kp);
    let map = idx.prev_in_current();
    let mut out = DMatrix::zeros(z.nrows(), groups * k);
    for g in 0..groups {
        for (bp, &r) in map.iter().enumerate() {
            out.column_mut(g * k + r).copy_from(&z.column(g * kp + bp));
        }
    }
    out
}

/// Multiplication tally `rows^3 * inner^3`.
pub fn mult_count(rows: u64, inner: u64) -> u64 {
    rows.pow(3) * inner.pow(3)
}

/// Conventional flop count `rows * inner * (inner + rows)` for `A B A'` with
/// `A` of size `rows x inner`.
pub fn flop_count(rows: u64, inner: u64) -> u64 {
    rows * inner * (inner + rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_tallies() {
        assert_eq!(mult_count(20, 80), 4_096_000_000);
        assert_eq!(mult_count(14, 8), 1_404_928);
        assert_eq!(mult_count(1, 1), 1);
        assert_eq!(flop_count(2, 3), 30);
    }
}
