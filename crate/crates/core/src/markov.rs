//! Finite-state CTMC source and the submatrix extractions used to build the
//! per-state absorbing chains.
//!
//! Library APIs index states from 0. Everything that crosses a file or
//! command-line boundary uses 1-based state labels.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Row-sum residual below which a row is silently renormalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Validated generator of an irreducible CTMC with no absorbing states.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    q: DMatrix<f64>,
}

impl GeneratorMatrix {
    /// Validates `q` and renormalizes the diagonal so that every row sums to
    /// zero. Rows whose residual is at least [`ROW_SUM_TOLERANCE`] are
    /// rejected.
    pub fn new(mut q: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = q.shape();
        if rows != cols || rows < 2 {
            return Err(Error::BadShape { rows, cols });
        }
        let n = rows;
        for i in 0..n {
            for k in 0..n {
                let v = q[(i, k)];
                if !v.is_finite() {
                    return Err(Error::NonFiniteEntry { row: i, col: k });
                }
                if i != k && v < 0.0 {
                    return Err(Error::NegativeOffDiagonal { row: i, col: k, value: v });
                }
            }
        }
        for i in 0..n {
            let residual: f64 = q.row(i).iter().sum();
            if residual.abs() >= ROW_SUM_TOLERANCE {
                return Err(Error::NonzeroRowSum { row: i, residual });
            }
            let off: f64 = (0..n).filter(|&k| k != i).map(|k| q[(i, k)]).sum();
            q[(i, i)] = -off;
        }
        for i in 0..n {
            if q[(i, i)] >= 0.0 {
                return Err(Error::AbsorbingState { state: i, rate: -q[(i, i)] });
            }
        }
        let g = Self { q };
        if !g.is_irreducible() {
            return Err(Error::Reducible);
        }
        Ok(g)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::BadShape { rows: n, cols: bad.len() });
        }
        Self::new(DMatrix::from_fn(n, n, |i, k| rows[i][k]))
    }

    /// Symmetric source: every off-diagonal rate is `sigma / (n - 1)`.
    pub fn symmetric(n: usize, sigma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::BadShape { rows: n, cols: n });
        }
        let off = sigma / (n - 1) as f64;
        Self::new(DMatrix::from_fn(n, n, |i, k| if i == k { -sigma } else { off }))
    }

    /// Dense random generator: off-diagonal weights uniform on `(0, 1)`,
    /// each row scaled to a holding rate uniform on `[0.5, 1.5)`.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::BadShape { rows: n, cols: n });
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            let sigma = rng.random_range(0.5..1.5);
            let weights: Vec<f64> = (0..n).map(|k| if k == i { 0.0 } else { 1.0 - rng.random::<f64>() }).collect();
            let total: f64 = weights.iter().sum();
            for (k, w) in weights.into_iter().enumerate() {
                q[(i, k)] = sigma * w / total;
            }
            q[(i, i)] = -sigma;
        }
        Self::new(q)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rate(&self, i: usize, k: usize) -> f64 {
        self.q[(i, k)]
    }

    /// `sigma_i = -q_ii`.
    pub fn holding_rate(&self, i: usize) -> f64 {
        -self.q[(i, i)]
    }

    pub fn holding_rates(&self) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| self.holding_rate(i))
    }

    pub fn min_holding_rate(&self) -> f64 {
        (0..self.n()).map(|i| self.holding_rate(i)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_holding_rate(&self) -> f64 {
        (0..self.n()).map(|i| self.holding_rate(i)).fold(0.0, f64::max)
    }

    /// Embedded jump chain `p_ik = q_ik / sigma_i` with a zero diagonal.
    pub fn jump_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, k| if i == k { 0.0 } else { self.q[(i, k)] / self.holding_rate(i) })
    }

    /// Holding rates together with the embedded jump matrix.
    pub fn holding_and_jump(&self) -> (DVector<f64>, DMatrix<f64>) {
        (self.holding_rates(), self.jump_matrix())
    }

    /// Deletes row and column `j`, returning the reduced generator block and
    /// the rates into and out of `j`.
    pub fn remove_state(&self, j: usize) -> Result<StateRemoval> {
        let n = self.n();
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, len: n });
        }
        let kept: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        let reduced = DMatrix::from_fn(n - 1, n - 1, |r, c| self.q[(kept[r], kept[c])]);
        let col_to_j = DVector::from_fn(n - 1, |r, _| self.q[(kept[r], j)]);
        let row_from_j = DVector::from_fn(n - 1, |c, _| self.q[(j, kept[c])]);
        Ok(StateRemoval { reduced, col_to_j, row_from_j, removed_index: j })
    }

    fn is_irreducible(&self) -> bool {
        let n = self.n();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(i) = queue.pop_front() {
                for (k, seen_k) in seen.iter_mut().enumerate() {
                    let rate = if forward { self.q[(i, k)] } else { self.q[(k, i)] };
                    if k != i && rate > 0.0 && !*seen_k {
                        *seen_k = true;
                        queue.push_back(k);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

/// Generator with one state deleted.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRemoval {
    /// `Q` without row and column `removed_index`, order preserved.
    pub reduced: DMatrix<f64>,
    /// Column `removed_index` of `Q` without the diagonal entry.
    pub col_to_j: DVector<f64>,
    /// Row `removed_index` of `Q` without the diagonal entry.
    pub row_from_j: DVector<f64>,
    pub removed_index: usize,
}

impl StateRemoval {
    /// Original state index for each retained position.
    pub fn kept_states(&self) -> Vec<usize> {
        (0..=self.reduced.nrows()).filter(|&i| i != self.removed_index).collect()
    }
}
