//! Dense LU helpers shared by the phase-type and model code.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Pivot-ratio level above which a solve is logged as ill-conditioned.
const COND_WARN: f64 = 1e12;

/// LU factorization with partial pivoting.
pub struct Lu {
    inner: LU<f64, Dyn, Dyn>,
    context: &'static str,
}

impl Lu {
    pub fn new(m: DMatrix<f64>, context: &'static str) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        let inner = m.lu();
        let u = inner.u();
        let diag = u.diagonal();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for d in diag.iter() {
            lo = lo.min(d.abs());
            hi = hi.max(d.abs());
        }
        if lo == 0.0 || !lo.is_finite() || lo <= hi * f64::EPSILON * 1e-2 {
            return Err(Error::SingularMatrix(context));
        }
        // Pivot ratio is a lower bound on the 2-norm condition number.
        if hi / lo > COND_WARN {
            log::warn!("{context}: pivot ratio {:e} exceeds {COND_WARN:e}", hi / lo);
        }
        Ok(Self { inner, context })
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.inner.solve(b).ok_or(Error::SingularMatrix(self.context))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.context));
        }
        Ok(x)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self.inner.solve(b).ok_or(Error::SingularMatrix(self.context))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.context));
        }
        Ok(x)
    }
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// Row vector `row * M^{-1}`, returned as a column.
pub fn row_solve(m: &DMatrix<f64>, row: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    Lu::new(m.transpose(), context)?.solve_vec(row)
}
