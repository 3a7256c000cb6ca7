use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    IntraQuarterlyAverage,
    CustomWeights,
}

/// How a quarterly observation is formed from its latent monthly values.
///
/// `weights[l]` multiplies the value `l` months before the observation month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationScheme {
    pub kind: AggregationKind,
    pub weights: Vec<f64>,
}

impl AggregationScheme {
    /// Intra-quarterly average: weights `(1/3, 1/3, 1/3)`.
    pub fn average() -> Self {
        Self {
            kind: AggregationKind::IntraQuarterlyAverage,
            weights: vec![1.0 / 3.0; 3],
        }
    }

    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config(
                "aggregation needs at least one weight".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("aggregation weights must be finite".into()));
        }
        Ok(Self {
            kind: AggregationKind::CustomWeights,
            weights,
        })
    }

    /// Skip sampling: the quarterly value equals the latent value of its last month.
    pub fn skip_sampling() -> Self {
        Self {
            kind: AggregationKind::CustomWeights,
            weights: vec![1.0],
        }
    }

    /// Number of high-frequency lags entering the aggregate.
    pub fn p_q(&self) -> usize {
        self.weights.len()
    }

    fn check(&self) -> Result<()> {
        match self.kind {
            AggregationKind::IntraQuarterlyAverage => {
                if self.weights.len() != 3 || self.weights.iter().any(|&w| w != 1.0 / 3.0) {
                    return Err(Error::Config(
                        "intra-quarterly average must use weights (1/3, 1/3, 1/3)".into(),
                    ));
                }
            }
            AggregationKind::CustomWeights => {
                if self.weights.is_empty() {
                    return Err(Error::Config(
                        "aggregation needs at least one weight".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Expanded aggregation matrices.
///
/// * `lambda` is `n x np` and maps the stacked `(x_t', ..., x_{t-p+1}')'` to the
///   observables (identity on the monthly block).
/// * `lambda_q` holds the quarterly rows of `lambda`.
/// * `lambda_qq` is the `n_q x n_q p_q` core obtained by deleting the columns of
///   `lambda_q` that belong to monthly variables or to lags beyond `p_q - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub scheme: AggregationScheme,
    pub n_m: usize,
    pub n_q: usize,
    pub p: usize,
    pub lambda: DMatrix<f64>,
    pub lambda_q: DMatrix<f64>,
    pub lambda_qq: DMatrix<f64>,
}

impl Aggregation {
    pub fn p_q(&self) -> usize {
        self.scheme.p_q()
    }

    pub fn weights(&self) -> &[f64] {
        &self.scheme.weights
    }

    /// Columns of `lambda_q` kept in `lambda_qq`, in order.
    pub fn kept_columns(&self) -> Vec<usize> {
        let n = self.n_m + self.n_q;
        let mut cols = Vec::with_capacity(self.n_q * self.p_q());
        for l in 0..self.p_q() {
            for i in 0..self.n_q {
                cols.push(l * n + self.n_m + i);
            }
        }
        cols
    }

    /// Re-inserts the deleted zero columns of `lambda_qq`, giving an
    /// `n_q x n * width` matrix (`width` lag blocks).
    pub fn expand_qq(&self, width: usize) -> DMatrix<f64> {
        let n = self.n_m + self.n_q;
        let mut out = DMatrix::zeros(self.n_q, n * width);
        for (k, &c) in self.kept_columns().iter().enumerate() {
            if c < n * width {
                out.column_mut(c).copy_from(&self.lambda_qq.column(k));
            }
        }
        out
    }
}

/// Expands `scheme` into `(Lambda, Lambda_q, Lambda_qq)` for a VAR(p) with
/// `n_m` monthly and `n_q` quarterly variables.
pub fn build_aggregation(
    scheme: &AggregationScheme,
    n_m: usize,
    n_q: usize,
    p: usize,
) -> Result<Aggregation> {
    scheme.check()?;
    let p_q = scheme.p_q();
    if p < p_q {
        return Err(Error::Config(format!(
            "lag order p = {p} is smaller than the {p_q} months entering the aggregate"
        )));
    }
    let n = n_m + n_q;
    let mut lambda = DMatrix::zeros(n, n * p);
    for i in 0..n_m {
        lambda[(i, i)] = 1.0;
    }
    let mut lambda_qq = DMatrix::zeros(n_q, n_q * p_q);
    for (l, &w) in scheme.weights.iter().enumerate() {
        for i in 0..n_q {
            lambda[(n_m + i, l * n + n_m + i)] = w;
            lambda_qq[(i, l * n_q + i)] = w;
        }
    }
    let lambda_q = lambda.rows(n_m, n_q).into_owned();
    Ok(Aggregation {
        scheme: scheme.clone(),
        n_m,
        n_q,
        p,
        lambda,
        lambda_q,
        lambda_qq,
    })
}
