//! Absorbing CTMCs and phase-type distributions.
//!
//! An absorbing chain is the triple `(A, B, beta)`: `A` holds the rates
//! among the `K` transient states, `B` the rates into the `L` absorbing
//! states and `beta` the initial distribution over transient states. The
//! time to absorption is phase-type distributed with parameters
//! `(A, beta)`.
//!
//! Row vectors are stored as `DVector`s; `x^T M` is computed as
//! `M.tr_mul(x)`.
//!
//! The embedded jump chain divides each row by its own diagonal entry,
//! `d_ik = a_ik / (-a_ii)`. Some printed forms divide by the column's
//! diagonal instead, which does not give a substochastic matrix in general.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ones, row_solve, Lu};

/// Poisson weights below this are dropped from uniformization sums.
const POISSON_TAIL: f64 = 1e-18;

/// Conditioning events lighter than this are rejected.
pub const CONDITIONING_FLOOR: f64 = 1e-14;

const STRUCTURE_TOL: f64 = 1e-12;

fn uniformization_rate(a: &DMatrix<f64>) -> f64 {
    a.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()))
}

/// `P = I + A / rate`.
fn uniformized(a: &DMatrix<f64>, rate: f64) -> DMatrix<f64> {
    let mut p = a / rate;
    for i in 0..p.nrows() {
        p[(i, i)] += 1.0;
    }
    p
}

/// Poisson(`x`) weights until the tail is negligible. `x` is at most a few
/// units on every call path, so the recursion never underflows at `k = 0`.
fn poisson_weights(x: f64) -> Vec<f64> {
    let mut w = vec![(-x).exp()];
    let mut k = 0usize;
    loop {
        k += 1;
        let next = w[k - 1] * x / k as f64;
        w.push(next);
        if (k as f64) > x && next < POISSON_TAIL {
            break;
        }
    }
    w
}

/// `exp(hA)` by uniformization, for `h * rate <= 1`.
fn exp_small(a: &DMatrix<f64>, rate: f64, h: f64) -> DMatrix<f64> {
    let k = a.nrows();
    let p = uniformized(a, rate);
    let weights = poisson_weights(rate * h);
    let mut term = DMatrix::identity(k, k);
    let mut sum = &term * weights[0];
    for w in &weights[1..] {
        term = &term * &p;
        sum += &term * *w;
    }
    sum
}

/// Row vector `row * exp(hA)` for `h * rate <= 1`.
fn row_exp_small(p: &DMatrix<f64>, rate: f64, row: &DVector<f64>, h: f64) -> DVector<f64> {
    if h == 0.0 {
        return row.clone();
    }
    let weights = poisson_weights(rate * h);
    let mut term = row.clone();
    let mut sum = &term * weights[0];
    for w in &weights[1..] {
        term = p.tr_mul(&term);
        sum += &term * *w;
    }
    sum
}

/// Matrix exponential `exp(tA)` by uniformization over a step of at most one
/// mean holding time, followed by repeated squaring.
pub fn mat_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time {t} must be finite and nonnegative")));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::BadShape { rows: a.nrows(), cols: a.ncols() });
    }
    let k = a.nrows();
    let rate = uniformization_rate(a);
    if rate == 0.0 || t == 0.0 {
        if a.iter().any(|x| *x != 0.0) && t != 0.0 {
            // Zero diagonal but nonzero off-diagonal: not a subgenerator.
            return Err(Error::ZeroDiagonal { index: 0 });
        }
        return Ok(DMatrix::identity(k, k));
    }
    let squarings = (rate * t).log2().ceil().max(0.0) as i32;
    let h = t / 2f64.powi(squarings);
    let mut e = exp_small(a, rate, h);
    for _ in 0..squarings {
        e = &e * &e;
    }
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix exponential"));
    }
    Ok(e)
}

/// Evaluates `row * exp(tA)` for many `t` against a fixed `A`.
///
/// Holds `exp(2^k h A)` for `h = 1 / rate`, grown by squaring on demand. A
/// query decomposes `t = m h + r` and applies one short uniformization sum
/// for `r` plus one vector-matrix product per set bit of `m`.
pub struct ExpPropagator {
    uniform: DMatrix<f64>,
    rate: f64,
    step: f64,
    powers: Vec<DMatrix<f64>>,
}

impl ExpPropagator {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let rate = uniformization_rate(a);
        if rate == 0.0 {
            return Err(Error::ZeroDiagonal { index: 0 });
        }
        let step = 1.0 / rate;
        let first = exp_small(a, rate, step);
        Ok(Self { uniform: uniformized(a, rate), rate, step, powers: vec![first] })
    }

    pub fn row_exp(&mut self, row: &DVector<f64>, t: f64) -> DVector<f64> {
        let whole = (t / self.step).floor();
        let rem = (t - whole * self.step).max(0.0);
        let mut v = row_exp_small(&self.uniform, self.rate, row, rem);
        let mut m = whole as u64;
        let mut bit = 0usize;
        while m > 0 {
            if bit == self.powers.len() {
                let last = &self.powers[bit - 1];
                let sq = last * last;
                self.powers.push(sq);
            }
            if m & 1 == 1 {
                v = self.powers[bit].tr_mul(&v);
                if v.iter().all(|x| *x == 0.0) {
                    break;
                }
            }
            m >>= 1;
            bit += 1;
        }
        v
    }
}

fn check_subgenerator(a: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = a.shape();
    if rows != cols || rows == 0 {
        return Err(Error::BadShape { rows, cols });
    }
    for i in 0..rows {
        for k in 0..cols {
            let v = a[(i, k)];
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: k });
            }
            if i != k && v < 0.0 {
                return Err(Error::NegativeOffDiagonal { row: i, col: k, value: v });
            }
        }
        if a[(i, i)] >= 0.0 {
            return Err(Error::ZeroDiagonal { index: i });
        }
    }
    Ok(())
}

fn check_initial(beta: &DVector<f64>, k: usize) -> Result<()> {
    if beta.len() != k {
        return Err(Error::InvalidChain(format!("initial vector has {} entries, expected {k}", beta.len())));
    }
    if beta.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
        return Err(Error::InvalidChain("initial vector has negative entries".into()));
    }
    if (beta.sum() - 1.0).abs() > STRUCTURE_TOL {
        return Err(Error::InvalidChain(format!("initial vector sums to {}", beta.sum())));
    }
    Ok(())
}

/// Phase-type distribution `PH(A, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseType {
    a: DMatrix<f64>,
    beta: DVector<f64>,
}

impl PhaseType {
    pub fn new(a: DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        check_subgenerator(&a)?;
        for i in 0..a.nrows() {
            let s: f64 = a.row(i).iter().sum();
            if s > STRUCTURE_TOL * a[(i, i)].abs().max(1.0) {
                return Err(Error::InvalidChain(format!("row {i} of A has positive sum {s:e}")));
            }
        }
        check_initial(&beta, a.nrows())?;
        Ok(Self { a, beta })
    }

    /// `PH([-rate], [1])`.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, -rate), DVector::from_element(1, 1.0))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    /// `beta * exp(tA)`: transient occupancy at time `t`.
    pub fn occupancy(&self, t: f64) -> Result<DVector<f64>> {
        Ok(mat_exp(&self.a, t)?.tr_mul(&self.beta))
    }

    /// `F(t) = 1 - beta exp(tA) 1`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok((1.0 - self.occupancy(t)?.sum()).clamp(0.0, 1.0))
    }

    /// `f(t) = -beta exp(tA) A 1`.
    pub fn pdf(&self, t: f64) -> Result<f64> {
        let exit = -(&self.a * ones(self.a.nrows()));
        Ok(self.occupancy(t)?.dot(&exit).max(0.0))
    }

    fn inverse_ones(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let lu = Lu::new(self.a.clone(), "phase-type moments")?;
        let u = lu.solve_vec(&ones(self.a.nrows()))?;
        let v = lu.solve_vec(&u)?;
        Ok((u, v))
    }

    /// `(E[T], E[T^2]) = (-beta A^-1 1, 2 beta A^-2 1)`.
    pub fn moments(&self) -> Result<(f64, f64)> {
        let (u, v) = self.inverse_ones()?;
        Ok((-self.beta.dot(&u), 2.0 * self.beta.dot(&v)))
    }

    /// `(E[T | T < tau], E[T^2 | T < tau])`.
    ///
    /// Uses `E[T; T<tau] = -tau S1 + S u - beta u` and
    /// `E[T^2; T<tau] = -tau^2 S1 + 2 tau S u - 2 S v + 2 beta v` with
    /// `S = beta exp(tau A)`, `u = A^-1 1`, `v = A^-2 1`.
    pub fn conditional_moments(&self, tau: f64) -> Result<(f64, f64)> {
        let s = self.occupancy(tau)?;
        let survival = s.sum();
        let mass = 1.0 - survival;
        if mass < CONDITIONING_FLOOR {
            return Err(Error::ConditioningOnNull { probability: mass });
        }
        let (u, v) = self.inverse_ones()?;
        let first = -tau * survival + s.dot(&u) - self.beta.dot(&u);
        let second = -tau * tau * survival + 2.0 * tau * s.dot(&u) - 2.0 * s.dot(&v) + 2.0 * self.beta.dot(&v);
        Ok((first / mass, second / mass))
    }
}

/// Absorbing CTMC `(A, B, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    beta: DVector<f64>,
}

impl AbsorbingChain {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, beta: DVector<f64>) -> Result<Self> {
        check_subgenerator(&a)?;
        let k = a.nrows();
        if b.nrows() != k || b.ncols() == 0 {
            return Err(Error::InvalidChain(format!("B is {}x{}, expected {k} rows", b.nrows(), b.ncols())));
        }
        if b.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidChain("B has negative entries".into()));
        }
        for i in 0..k {
            let s = a.row(i).sum() + b.row(i).sum();
            if s.abs() > STRUCTURE_TOL * a[(i, i)].abs().max(1.0) {
                return Err(Error::InvalidChain(format!("row {i} of [A | B] sums to {s:e}")));
            }
        }
        check_initial(&beta, k)?;
        Ok(Self { a, b, beta })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn transient_count(&self) -> usize {
        self.a.nrows()
    }

    pub fn absorbing_count(&self) -> usize {
        self.b.ncols()
    }

    pub fn phase_type(&self) -> PhaseType {
        PhaseType { a: self.a.clone(), beta: self.beta.clone() }
    }

    /// `-beta A^-1 B`: probability of ending in each absorbing state.
    pub fn absorption_probs(&self) -> Result<DVector<f64>> {
        let r = row_solve(&self.a, &self.beta, "absorption probabilities")?;
        Ok(-self.b.tr_mul(&r))
    }

    /// Expected visits to each transient state, `beta (I - D)^-1`.
    pub fn visit_counts(&self) -> Result<DVector<f64>> {
        let d = embedded_dtmc(&self.a)?;
        let k = d.nrows();
        let m = DMatrix::identity(k, k) - d;
        row_solve(&m, &self.beta, "fundamental matrix")
    }

    /// Total expected transient visits, `beta (I - D)^-1 1`.
    pub fn expected_visits(&self) -> Result<f64> {
        Ok(self.visit_counts()?.sum())
    }
}

/// Transient-to-transient jump probabilities of the embedded chain:
/// `d_ik = a_ik / (-a_ii)` off the diagonal, zero on it.
pub fn embedded_dtmc(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = a.nrows();
    for i in 0..k {
        if !(a[(i, i)] < 0.0) {
            return Err(Error::ZeroDiagonal { index: i });
        }
    }
    Ok(DMatrix::from_fn(k, k, |i, c| if i == c { 0.0 } else { a[(i, c)] / -a[(i, i)] }))
}
