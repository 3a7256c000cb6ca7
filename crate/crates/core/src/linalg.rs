//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest condition number (estimated from the Cholesky diagonal) accepted for `F_t`.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Relative eigenvalue cutoff used by [`pinv_sym`].
pub const PINV_RELATIVE_TOL: f64 = 1e-10;

/// Replace `m` by `(m + m') / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Block size of [`SpdFactor`].
const BLOCK: usize = 48;

/// Lower Cholesky factor `L` of a symmetric positive definite matrix, computed
/// and applied block by block so the bulk of the work is matrix products.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    /// Factorizes `a`; `None` unless every pivot is positive.
    pub fn new(mut a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut k0 = 0;
        while k0 < n {
            let kb = BLOCK.min(n - k0);
            let diag = Cholesky::new(a.view((k0, k0), (kb, kb)).into_owned())?.unpack();
            a.view_mut((k0, k0), (kb, kb)).copy_from(&diag);
            let below = n - k0 - kb;
            if below > 0 {
                // L21 = A21 L11^{-T}
                let mut panel = a.view((k0 + kb, k0), (below, kb)).transpose();
                diag.solve_lower_triangular_mut(&mut panel);
                let l21 = panel.transpose();
                a.view_mut((k0 + kb, k0), (below, kb)).copy_from(&l21);
                let mut a22 = a.view_mut((k0 + kb, k0 + kb), (below, below));
                a22.gemm(-1.0, &l21, &panel, 1.0);
            }
            k0 += kb;
        }
        a.fill_upper_triangle(0.0, 1);
        Some(Self { l: a })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `(max l_ii / min l_ii)^2`, a lower bound on the 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..self.l.nrows() {
            let d = self.l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if lo > 0.0 {
            (hi / lo).powi(2)
        } else {
            f64::INFINITY
        }
    }

    /// Overwrites `b` with `L^{-1} b`.
    pub fn solve_lower_mut(&self, b: &mut DMatrix<f64>) {
        let n = self.l.nrows();
        let mut k0 = 0;
        while k0 < n {
            let kb = BLOCK.min(n - k0);
            let lkk = self.l.view((k0, k0), (kb, kb));
            let mut bk = b.rows_mut(k0, kb);
            lkk.solve_lower_triangular_mut(&mut bk);
            let below = n - k0 - kb;
            if below > 0 {
                let xk = b.rows(k0, kb).into_owned();
                let lik = self.l.view((k0 + kb, k0), (below, kb));
                b.rows_mut(k0 + kb, below).gemm(-1.0, &lik, &xk, 1.0);
            }
            k0 += kb;
        }
    }

    /// Overwrites `b` with `L^{-T} b`.
    pub fn solve_upper_mut(&self, b: &mut DMatrix<f64>) {
        let n = self.l.nrows();
        let mut k1 = n;
        while k1 > 0 {
            let kb = BLOCK.min(k1);
            let k0 = k1 - kb;
            let lkk = self.l.view((k0, k0), (kb, kb));
            let mut bk = b.rows_mut(k0, kb);
            lkk.tr_solve_lower_triangular_mut(&mut bk);
            if k0 > 0 {
                let xk = b.rows(k0, kb).into_owned();
                let lki = self.l.view((k0, 0), (kb, k0));
                b.rows_mut(0, k0).gemm_tr(-1.0, &lki, &xk, 1.0);
            }
            k1 = k0;
        }
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_lower_mut(&mut x);
        self.solve_upper_mut(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }
}

/// Cholesky factorization of an innovation covariance with a cheap conditioning
/// check; see [`SpdFactor::condition_estimate`].
pub fn spd_factor(f: DMatrix<f64>, t: usize) -> Result<SpdFactor> {
    let chol = SpdFactor::new(f).ok_or(Error::SingularInnovation {
        t,
        condition: f64::INFINITY,
    })?;
    let condition = chol.condition_estimate();
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovation { t, condition });
    }
    Ok(chol)
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `PINV_RELATIVE_TOL * max(|lambda|)` are treated as zero.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cut = max * PINV_RELATIVE_TOL;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= cut || lam == 0.0 {
            continue;
        }
        let u = eig.eigenvectors.column(k);
        out.ger(1.0 / lam, &u, &u, 1.0);
    }
    symmetrize(&mut out);
    out
}

/// A square root `S` with `S S' = m` for a symmetric positive semidefinite `m`.
///
/// Uses Cholesky when it succeeds and falls back to the eigen-decomposition with
/// negative eigenvalues clipped at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut s = eig.eigenvectors.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let w = lam.max(0.0).sqrt();
        s.column_mut(k).scale_mut(w);
    }
    s
}

/// Elementwise difference scaled by `max(|a|, |b|, 1)`.
#[inline]
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest [`rel_diff`] over two equally shaped matrices, with its location.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, (usize, usize)) {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_rel_diff");
    let mut worst = (0.0, (0, 0));
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let d = rel_diff(a[(i, j)], b[(i, j)]);
            if d > worst.0 || d.is_nan() {
                worst = (d, (i, j));
                if d.is_nan() {
                    return (f64::NAN, (i, j));
                }
            }
        }
    }
    worst
}

/// Copy the rows `rows` and columns `cols` of `m` into a new matrix.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Gather entries of `v` at `idx`.
pub fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Spectral radius of a square matrix from its complex eigenvalues.
///
/// Falls back to [`spectral_radius_gelfand`] when the Schur iteration does not
/// converge, which happens for some nilpotent inputs.
pub fn spectral_radius_dense(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    match m.clone().try_schur(f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .fold(0.0f64, |a, z| a.max(z.norm())),
        None => spectral_radius_gelfand(m, 14),
    }
}

/// `||A^(2^k)||^(1 / 2^k)` with rescaling at every squaring.
pub fn spectral_radius_gelfand(m: &DMatrix<f64>, squarings: usize) -> f64 {
    let mut a = m.clone();
    let mut log_scale = 0.0f64;
    let mut k = 1.0f64;
    for _ in 0..squarings {
        let s = a.norm();
        if s == 0.0 {
            return 0.0;
        }
        a /= s;
        log_scale += s.ln() / k;
        a = &a * &a;
        k *= 2.0;
    }
    let s = a.norm();
    if s == 0.0 {
        return 0.0;
    }
    (log_scale + s.ln() / k).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_singular_projector() {
        // rank-one matrix u u'
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let m = &u * u.transpose();
        let p = pinv_sym(&m);
        let back = &m * &p * &m;
        assert!((back - &m).abs().max() < 1e-12);
        // pinv(u u') = u u' / |u|^4
        let expect = &m / 81.0;
        assert!((p - expect).abs().max() < 1e-14);
    }

    #[test]
    fn spd_factor_rejects_singular() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_factor(f, 7),
            Err(Error::SingularInnovation { t: 7, .. })
        ));
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(spd_factor(f, 0).is_err());
        let f = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(spd_factor(f, 0).is_ok());
    }

    #[test]
    fn blocked_factor_matches_reference() {
        for n in [1, 5, 47, 48, 49, 130] {
            let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5);
            let f = &a * a.transpose() + DMatrix::identity(n, n);
            let ours = SpdFactor::new(f.clone()).unwrap();
            let reference = Cholesky::new(f.clone()).unwrap();
            assert!((ours.l() - reference.l()).amax() < 1e-12);
            let b = DMatrix::from_fn(n, 3, |i, j| (i + 2 * j) as f64);
            assert!((&f * ours.solve(&b) - &b).amax() < 1e-9 * b.amax());
            let v = b.column(1).into_owned();
            assert!((ours.solve_vec(&v) - reference.solve(&v)).amax() < 1e-10);
        }
        assert!(SpdFactor::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
    }

    #[test]
    fn psd_sqrt_handles_semidefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&m);
        assert!((&s * s.transpose() - m).abs().max() < 1e-12);
    }

    #[test]
    fn rel_diff_floors_scale_at_one() {
        assert_eq!(rel_diff(1e-20, 0.0), 1e-20);
        assert!((rel_diff(200.0, 201.0) - 1.0 / 201.0).abs() < 1e-15);
    }
}
