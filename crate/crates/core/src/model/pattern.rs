use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quarter-end calendar.
///
/// Row `t` (0-based) closes a quarter when `(t + 1) % 3 == offset % 3`, so the
/// default offset of 0 puts quarter ends at months 3, 6, 9, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Calendar {
    pub offset: usize,
}

impl Calendar {
    pub fn is_quarter_end(&self, t: usize) -> bool {
        (t + 1) % 3 == self.offset % 3
    }
}

/// A `T x n` panel of monthly and quarterly observations.
///
/// Missing entries are stored as NaN together with an explicit mask. Quarterly
/// columns come last and may only hold values in quarter-end months.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFreqData {
    names: Vec<String>,
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
    n_m: usize,
    n_q: usize,
    calendar: Calendar,
}

impl MixedFreqData {
    /// Wraps a value matrix in which NaN marks a missing entry.
    pub fn new(values: DMatrix<f64>, n_q: usize, calendar: Calendar) -> Result<Self> {
        let n = values.ncols();
        let names = (0..n)
            .map(|j| {
                if j < n - n_q.min(n) {
                    format!("m{}", j + 1)
                } else {
                    format!("q{}", j + 1 - (n - n_q))
                }
            })
            .collect();
        Self::with_names(names, values, n_q, calendar)
    }

    pub fn with_names(
        names: Vec<String>,
        values: DMatrix<f64>,
        n_q: usize,
        calendar: Calendar,
    ) -> Result<Self> {
        let n = values.ncols();
        if n_q > n {
            return Err(Error::Data(format!("n_q = {n_q} exceeds column count {n}")));
        }
        if names.len() != n {
            return Err(Error::Data(format!(
                "{} column names for {n} columns",
                names.len()
            )));
        }
        let n_m = n - n_q;
        let observed = values.map(|v| !v.is_nan());
        for t in 0..values.nrows() {
            for i in 0..n_q {
                let j = n_m + i;
                if observed[(t, j)] {
                    if values[(t, j)].is_infinite() {
                        return Err(Error::Data(format!(
                            "infinite value at row {t}, column {j}"
                        )));
                    }
                    if !calendar.is_quarter_end(t) {
                        return Err(Error::Data(format!(
                            "quarterly column '{}' has a value in row {t}, which is not a quarter-end month",
                            names[j]
                        )));
                    }
                }
            }
            for j in 0..n_m {
                if observed[(t, j)] && values[(t, j)].is_infinite() {
                    return Err(Error::Data(format!(
                        "infinite value at row {t}, column {j}"
                    )));
                }
            }
        }
        Ok(Self {
            names,
            values,
            observed,
            n_m,
            n_q,
            calendar,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_observed(&self, t: usize, j: usize) -> bool {
        self.observed[(t, j)]
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn t_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn calendar(&self) -> Calendar {
        self.calendar
    }

    /// Copy of the data with a different value matrix but the same missingness.
    pub fn with_values(&self, values: DMatrix<f64>) -> Self {
        assert_eq!(values.shape(), self.values.shape());
        let mut out = self.clone();
        out.values = values;
        for j in 0..out.values.ncols() {
            for t in 0..out.values.nrows() {
                if !out.observed[(t, j)] {
                    out.values[(t, j)] = f64::NAN;
                }
            }
        }
        out
    }
}

/// Which monthly variables are observed in each period, where the balanced part
/// of the sample ends, and which quarterly variables are observed when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPattern {
    t_len: usize,
    t_b: usize,
    n_m: usize,
    n_q: usize,
    observed: Vec<Vec<usize>>,
    unobserved: Vec<Vec<usize>>,
    quarterly: Vec<Vec<usize>>,
}

impl ObservationPattern {
    /// Builds a pattern from observation masks.
    ///
    /// `monthly[t][i]` and `quarterly[t][i]` flag observed entries. `p` is the lag
    /// order and `p_q` the aggregation window; the first `p` rows are the presample.
    pub fn from_masks(
        monthly: &[Vec<bool>],
        quarterly: &[Vec<bool>],
        p: usize,
        p_q: usize,
    ) -> Result<Self> {
        let t_len = monthly.len();
        if quarterly.len() != t_len {
            return Err(Error::Data(
                "monthly and quarterly masks differ in length".into(),
            ));
        }
        let n_m = monthly.first().map_or(0, |r| r.len());
        let n_q = quarterly.first().map_or(0, |r| r.len());
        if monthly.iter().any(|r| r.len() != n_m) || quarterly.iter().any(|r| r.len() != n_q) {
            return Err(Error::Data("ragged observation mask".into()));
        }
        let t_b = monthly
            .iter()
            .position(|row| row.iter().any(|&o| !o))
            .unwrap_or(t_len);
        if t_b < p + 1 {
            return Err(Error::UnsupportedPattern(format!(
                "need at least p + 1 = {} fully observed leading periods, found {t_b}",
                p + 1
            )));
        }
        let mut observed = Vec::with_capacity(t_len);
        let mut unobserved = Vec::with_capacity(t_len);
        let mut q_obs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let o: Vec<usize> = (0..n_m).filter(|&i| monthly[t][i]).collect();
            let u: Vec<usize> = (0..n_m).filter(|&i| !monthly[t][i]).collect();
            if t > t_b {
                let prev: &Vec<usize> = &unobserved[t - 1];
                if let Some(&v) = prev.iter().find(|v| !u.contains(v)) {
                    return Err(Error::UnsupportedPattern(format!(
                        "monthly variable {} is missing at row {} but observed again at row {t}; \
                         the ragged edge must be monotone",
                        v + 1,
                        t - 1
                    )));
                }
            }
            let q: Vec<usize> = (0..n_q).filter(|&i| quarterly[t][i]).collect();
            if !q.is_empty() && t + 1 < p_q {
                return Err(Error::UnsupportedPattern(format!(
                    "quarterly observation at row {t} needs {} preceding months",
                    p_q - 1
                )));
            }
            observed.push(o);
            unobserved.push(u);
            q_obs.push(q);
        }
        Ok(Self {
            t_len,
            t_b,
            n_m,
            n_q,
            observed,
            unobserved,
            quarterly: q_obs,
        })
    }

    /// Number of periods `T`.
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Number of leading periods in which every monthly variable is observed.
    pub fn t_b(&self) -> usize {
        self.t_b
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    /// `O_t`: observed monthly variables (0-based, ascending).
    pub fn observed(&self, t: usize) -> &[usize] {
        &self.observed[t]
    }

    /// `U_t`: unobserved monthly variables (0-based, ascending).
    pub fn unobserved(&self, t: usize) -> &[usize] {
        &self.unobserved[t]
    }

    /// Quarterly variables (0-based within the quarterly block) observed at `t`.
    pub fn quarterly_observed(&self, t: usize) -> &[usize] {
        &self.quarterly[t]
    }

    pub fn is_balanced(&self) -> bool {
        self.t_b == self.t_len
    }

    /// Number of ragged-edge periods `T - T_b`.
    pub fn edge_len(&self) -> usize {
        self.t_len - self.t_b
    }

    pub fn monthly_observed(&self, t: usize, i: usize) -> bool {
        self.observed[t].binary_search(&i).is_ok()
    }

    pub fn quarterly_is_observed(&self, t: usize, i: usize) -> bool {
        self.quarterly[t].binary_search(&i).is_ok()
    }
}

/// Derives the observation pattern of `data` for a VAR(p) with aggregation window `p_q`.
pub fn detect_pattern(data: &MixedFreqData, p: usize, p_q: usize) -> Result<ObservationPattern> {
    let (t_len, n_m, n_q) = (data.t_len(), data.n_m(), data.n_q());
    let monthly: Vec<Vec<bool>> = (0..t_len)
        .map(|t| (0..n_m).map(|i| data.is_observed(t, i)).collect())
        .collect();
    let quarterly: Vec<Vec<bool>> = (0..t_len)
        .map(|t| (0..n_q).map(|i| data.is_observed(t, n_m + i)).collect())
        .collect();
    ObservationPattern::from_masks(&monthly, &quarterly, p, p_q)
}
