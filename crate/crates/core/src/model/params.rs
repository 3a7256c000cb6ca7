use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cholesky factors `W_t` of the innovation covariance `Sigma_t = W_t W_t'`.
///
/// The constant case stores a single factor that is shared by every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factors", rename_all = "snake_case")]
pub enum CovFactors {
    Constant(DMatrix<f64>),
    /// One factor per data row.
    TimeVarying(Vec<DMatrix<f64>>),
}

/// Parameters of the high-frequency VAR(p)
/// `x_t = c + Pi_1 x_{t-1} + ... + Pi_p x_{t-p} + W_t e_t`.
///
/// Variables are ordered monthly first, then quarterly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct VarParams {
    n_m: usize,
    n_q: usize,
    intercept: DVector<f64>,
    lags: Vec<DMatrix<f64>>,
    chol: CovFactors,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    n_m: usize,
    n_q: usize,
    intercept: DVector<f64>,
    lags: Vec<DMatrix<f64>>,
    chol: CovFactors,
}

impl TryFrom<RawParams> for VarParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        Self::new(r.n_m, r.n_q, r.intercept, r.lags, r.chol)
    }
}

impl VarParams {
    pub fn new(
        n_m: usize,
        n_q: usize,
        intercept: DVector<f64>,
        lags: Vec<DMatrix<f64>>,
        chol: CovFactors,
    ) -> Result<Self> {
        let params = Self {
            n_m,
            n_q,
            intercept,
            lags,
            chol,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds parameters without checking the Cholesky-factor invariants.
    ///
    /// Dimensions are still checked. Used for degenerate-noise experiments.
    #[cfg(test)]
    pub(crate) fn new_unchecked_noise(
        n_m: usize,
        n_q: usize,
        intercept: DVector<f64>,
        lags: Vec<DMatrix<f64>>,
        chol: CovFactors,
    ) -> Result<Self> {
        let params = Self {
            n_m,
            n_q,
            intercept,
            lags,
            chol,
        };
        params.validate_dims()?;
        Ok(params)
    }

    fn validate_dims(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Config("model has no variables".into()));
        }
        if self.lags.is_empty() {
            return Err(Error::Config("lag order p must be at least 1".into()));
        }
        if self.intercept.len() != n {
            return Err(Error::Dimension(format!(
                "intercept has length {}, expected n = {n}",
                self.intercept.len()
            )));
        }
        for (j, pi) in self.lags.iter().enumerate() {
            if pi.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "lag matrix Pi_{} is {}x{}, expected {n}x{n}",
                    j + 1,
                    pi.nrows(),
                    pi.ncols()
                )));
            }
        }
        let factors: &[DMatrix<f64>] = match &self.chol {
            CovFactors::Constant(w) => std::slice::from_ref(w),
            CovFactors::TimeVarying(ws) => {
                if ws.is_empty() {
                    return Err(Error::Config(
                        "time-varying covariance with no factors".into(),
                    ));
                }
                ws
            }
        };
        for w in factors {
            if w.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "Cholesky factor is {}x{}, expected {n}x{n}",
                    w.nrows(),
                    w.ncols()
                )));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.validate_dims()?;
        let factors: Vec<&DMatrix<f64>> = match &self.chol {
            CovFactors::Constant(w) => vec![w],
            CovFactors::TimeVarying(ws) => ws.iter().collect(),
        };
        for (k, w) in factors.into_iter().enumerate() {
            for i in 0..w.nrows() {
                if !(w[(i, i)] > 0.0) {
                    return Err(Error::Config(format!(
                        "Cholesky factor {k} has non-positive diagonal entry at ({i},{i})"
                    )));
                }
                for j in (i + 1)..w.ncols() {
                    if w[(i, j)] != 0.0 {
                        return Err(Error::Config(format!(
                            "Cholesky factor {k} is not lower triangular: entry ({i},{j}) = {}",
                            w[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n(&self) -> usize {
        self.n_m + self.n_q
    }

    /// Lag order `p`.
    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    /// Lag matrix `Pi_j` for `j = 1..=p`.
    pub fn lag(&self, j: usize) -> &DMatrix<f64> {
        &self.lags[j - 1]
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    pub fn cov_factors(&self) -> &CovFactors {
        &self.chol
    }

    /// Cholesky factor `W_t` for data row `t`.
    pub fn chol_at(&self, t: usize) -> &DMatrix<f64> {
        match &self.chol {
            CovFactors::Constant(w) => w,
            CovFactors::TimeVarying(ws) => &ws[t.min(ws.len() - 1)],
        }
    }

    /// Index of the factor used at row `t`; constant factors always map to 0.
    pub fn chol_index(&self, t: usize) -> usize {
        match &self.chol {
            CovFactors::Constant(_) => 0,
            CovFactors::TimeVarying(ws) => t.min(ws.len() - 1),
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self.chol, CovFactors::TimeVarying(_))
    }

    /// `Sigma_t = W_t W_t'`.
    pub fn sigma_at(&self, t: usize) -> DMatrix<f64> {
        let w = self.chol_at(t);
        w * w.transpose()
    }

    /// Transition block `(Pi_1 ... Pi_p)` of the companion form, `n x np`.
    pub fn stacked_lags(&self) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = DMatrix::zeros(n, n * p);
        for (j, pi) in self.lags.iter().enumerate() {
            out.view_mut((0, j * n), (n, n)).copy_from(pi);
        }
        out
    }

    /// Returns a copy with every lag matrix `Pi_j` scaled by `c^j`, which
    /// scales every companion eigenvalue by `c`.
    pub fn with_rescaled_dynamics(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (j, pi) in out.lags.iter_mut().enumerate() {
            *pi *= c.powi(j as i32 + 1);
        }
        out
    }

    /// Returns a copy with a different intercept.
    pub fn with_intercept(&self, intercept: DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.intercept = intercept;
        out.validate_dims()?;
        Ok(out)
    }

    /// Returns a copy with a different covariance factor sequence.
    pub fn with_cov_factors(&self, chol: CovFactors) -> Result<Self> {
        Self::new(
            self.n_m,
            self.n_q,
            self.intercept.clone(),
            self.lags.clone(),
            chol,
        )
    }
}
