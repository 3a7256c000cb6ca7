use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::pattern::ObservationPattern;

/// Index sets for one adaptive period.
///
/// The state head at `t` holds `(x_{U_t,t}', x_{q,t}')'`, so the group size is
/// `k_t = |U_t| + n_q`. `J_t` selects from that head the entries that were also
/// latent at `t - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AdaptiveIndex {
    pub n_m: usize,
    pub n_q: usize,
    pub u: Vec<usize>,
    pub o: Vec<usize>,
    pub u_prev: Vec<usize>,
    pub o_prev: Vec<usize>,
}

impl AdaptiveIndex {
    pub fn new(n_m: usize, n_q: usize, u: Vec<usize>, u_prev: Vec<usize>) -> Result<Self> {
        let check = |s: &[usize]| s.windows(2).all(|w| w[0] < w[1]) && s.iter().all(|&v| v < n_m);
        if !check(&u) || !check(&u_prev) {
            return Err(Error::Dimension(
                "unobserved index sets must be sorted and within the monthly block".into(),
            ));
        }
        if let Some(v) = u_prev.iter().find(|v| u.binary_search(v).is_err()) {
            return Err(Error::UnsupportedPattern(format!(
                "monthly variable {} is latent at t - 1 but observed at t",
                v + 1
            )));
        }
        let o = (0..n_m).filter(|v| u.binary_search(v).is_err()).collect();
        let o_prev = (0..n_m)
            .filter(|v| u_prev.binary_search(v).is_err())
            .collect();
        Ok(Self {
            n_m,
            n_q,
            u,
            o,
            u_prev,
            o_prev,
        })
    }

    /// Compact period: every monthly variable observed at `t` and `t - 1`.
    pub fn compact(n_m: usize, n_q: usize) -> Self {
        Self::new(n_m, n_q, vec![], vec![]).expect("empty sets are valid")
    }

    pub fn from_pattern(pattern: &ObservationPattern, t: usize) -> Result<Self> {
        let u_prev = if t == 0 {
            vec![]
        } else {
            pattern.unobserved(t - 1).to_vec()
        };
        Self::new(
            pattern.n_m(),
            pattern.n_q(),
            pattern.unobserved(t).to_vec(),
            u_prev,
        )
    }

    /// Group size `k_t = |U_t| + n_q`.
    pub fn k(&self) -> usize {
        self.u.len() + self.n_q
    }

    pub fn k_prev(&self) -> usize {
        self.u_prev.len() + self.n_q
    }

    /// Variables in one state group at `t`, monthly then quarterly (0-based over all `n`).
    pub fn head(&self) -> Vec<usize> {
        self.u
            .iter()
            .copied()
            .chain((0..self.n_q).map(|i| self.n_m + i))
            .collect()
    }

    pub fn head_prev(&self) -> Vec<usize> {
        self.u_prev
            .iter()
            .copied()
            .chain((0..self.n_q).map(|i| self.n_m + i))
            .collect()
    }

    /// For every entry of the `t - 1` head, its position in the `t` head.
    pub fn prev_in_current(&self) -> Vec<usize> {
        let head = self.head();
        self.head_prev()
            .iter()
            .map(|v| head.iter().position(|w| w == v).expect("monotone sets"))
            .collect()
    }

    /// Positions in the `t` head of variables that turned latent at `t`.
    pub fn newly_latent(&self) -> Vec<usize> {
        self.u
            .iter()
            .enumerate()
            .filter(|(_, v)| self.u_prev.binary_search(v).is_err())
            .map(|(i, _)| i)
            .collect()
    }

    /// `J_t`, `k_t x k_{t-1}`.
    pub fn j_matrix(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.k(), self.k_prev());
        for (c, r) in self.prev_in_current().into_iter().enumerate() {
            j[(r, c)] = 1.0;
        }
        j
    }

    /// `J_{perp,t}`: the identity columns missing from `J_t`.
    pub fn j_perp_matrix(&self) -> DMatrix<f64> {
        let fresh = self.newly_latent();
        let mut j = DMatrix::zeros(self.k(), fresh.len());
        for (c, r) in fresh.into_iter().enumerate() {
            j[(r, c)] = 1.0;
        }
        j
    }

    /// Position of monthly variable `v` in `O_{t-1}`.
    pub fn pos_o_prev(&self, v: usize) -> Option<usize> {
        self.o_prev.binary_search(&v).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn second_edge_period_indices() {
        let idx = AdaptiveIndex::new(3, 1, vec![1, 2], vec![2]).unwrap();
        assert_eq!(idx.k(), 3);
        assert_eq!(idx.k_prev(), 2);
        assert_eq!(idx.o, vec![0]);
        assert_eq!(idx.o_prev, vec![0, 1]);
        assert_eq!(
            idx.j_matrix(),
            DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        );
        assert_eq!(
            idx.j_perp_matrix(),
            DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0])
        );
    }

    #[test]
    fn latent_variable_may_not_reappear() {
        assert!(AdaptiveIndex::new(3, 1, vec![1], vec![2]).is_err());
    }

    fn monotone_sets() -> impl Strategy<Value = (usize, usize, Vec<usize>, Vec<usize>)> {
        (1usize..7, 0usize..3).prop_flat_map(|(n_m, n_q)| {
            (
                Just(n_m),
                Just(n_q),
                proptest::collection::vec(any::<bool>(), n_m),
                proptest::collection::vec(any::<bool>(), n_m),
            )
                .prop_map(|(n_m, n_q, a, b)| {
                    let u_prev: Vec<usize> = (0..n_m).filter(|&i| a[i] && b[i]).collect();
                    let u: Vec<usize> = (0..n_m).filter(|&i| a[i]).collect();
                    (n_m, n_q, u, u_prev)
                })
        })
    }

    proptest! {
        #[test]
        fn selection_identity((n_m, n_q, u, u_prev) in monotone_sets(), seed in 0u64..1000) {
            let idx = AdaptiveIndex::new(n_m, n_q, u, u_prev).unwrap();
            let x: Vec<f64> = (0..n_m + n_q).map(|i| (i as f64 + 1.0) * (seed as f64 + 0.5)).collect();
            let head = nalgebra::DVector::from_iterator(idx.k(), idx.head().into_iter().map(|v| x[v]));
            let prev = nalgebra::DVector::from_iterator(idx.k_prev(), idx.head_prev().into_iter().map(|v| x[v]));
            prop_assert_eq!(idx.j_matrix().transpose() * head, prev);
        }

        #[test]
        fn j_and_complement_permute_identity((n_m, n_q, u, u_prev) in monotone_sets()) {
            let idx = AdaptiveIndex::new(n_m, n_q, u, u_prev).unwrap();
            let (j, jp) = (idx.j_matrix(), idx.j_perp_matrix());
            let k = idx.k();
            prop_assert_eq!(j.ncols() + jp.ncols(), k);
            let mut seen = vec![0usize; k];
            for m in [&j, &jp] {
                for c in 0..m.ncols() {
                    let nz: Vec<usize> = (0..k).filter(|&r| m[(r, c)] != 0.0).collect();
                    prop_assert_eq!(nz.len(), 1);
                    prop_assert_eq!(m[(nz[0], c)], 1.0);
                    seen[nz[0]] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
