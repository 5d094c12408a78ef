//! Semi-Markov model embedded at synchronization points.
//!
//! A cycle starts when source and monitor re-synchronize at state `j`. The
//! source holds there for `H_j ~ Exp(sigma_j)`, then desynchronizes. The
//! waiting phase `Y1` runs over the states other than `j` until either the
//! source drifts back to `j` or the AoII reaches the threshold `tau_j`. In the
//! second case the transmission phase `Y2` runs the same source dynamics with
//! an extra delivery rate `mu` out of every transient state, and ends at `S_j`
//! by drift or at `S_i` by delivering `i`.
//!
//! Absorbing columns of `Y2` are ordered `[S_j | retained states ascending]`.
//! All transition probabilities out of `Y2` are `-w A2^-1 B2` with
//! `w = beta1 exp(tau A1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ones, Lu};
use crate::markov::GeneratorMatrix;
use crate::phasetype::{embedded_dtmc, AbsorbingChain, ExpPropagator};

/// Waiting phases that survive with less than this probability never
/// reach the threshold.
pub const NEVER_TRANSMIT_SURVIVAL: f64 = 1e-14;

/// Multiple of the slowest mean holding time used as the threshold cap.
pub const TAU_CAP_SCALE: f64 = 1e4;

/// Largest threshold considered; beyond it the source effectively never
/// transmits.
pub fn tau_cap(g: &GeneratorMatrix) -> f64 {
    TAU_CAP_SCALE / g.min_holding_rate()
}

/// One threshold per monitor estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy(Vec<f64>);

impl ThresholdPolicy {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if let Some((state, &value)) = tau.iter().enumerate().find(|(_, t)| !(**t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidThreshold { state, value });
        }
        Ok(Self(tau))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn uniform(n: usize, tau: f64) -> Result<Self> {
        Self::new(vec![tau; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Expected per-cycle quantities for a cycle starting at `S_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleModel {
    pub j: usize,
    /// Probability the waiting phase ends by drift before the threshold.
    pub kappa: f64,
    /// Expected AoII area over the cycle.
    pub a: f64,
    /// Expected number of initiated transmissions.
    pub c: f64,
    /// Expected cycle length, including the in-sync holding time.
    pub d: f64,
    /// Probability of each next synchronization state.
    pub p_row: Vec<f64>,
}

fn check_rate(mu: f64, what: &str) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} must be positive and finite, got {mu}")));
    }
    Ok(())
}

fn check_state(g: &GeneratorMatrix, j: usize) -> Result<()> {
    if j >= g.n() {
        return Err(Error::IndexOutOfRange { index: j, len: g.n() });
    }
    Ok(())
}

/// Waiting-phase chain `Y1` for `S_j`: `(Q^(-j), q^(j), q_r^(j) / sigma_j)`.
pub fn build_y1(g: &GeneratorMatrix, j: usize) -> Result<AbsorbingChain> {
    let r = g.remove_state(j)?;
    let k = r.reduced.nrows();
    let beta = r.row_from_j / g.holding_rate(j);
    AbsorbingChain::new(r.reduced, DMatrix::from_column_slice(k, 1, r.col_to_j.as_slice()), beta)
}

/// `A2 = Q^(-j) - mu I` and `B2 = [q^(j) | mu I]`.
fn transmission_blocks(g: &GeneratorMatrix, j: usize, mu: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = g.remove_state(j)?;
    let k = r.reduced.nrows();
    let mut a2 = r.reduced;
    for i in 0..k {
        a2[(i, i)] -= mu;
    }
    let mut b2 = DMatrix::zeros(k, k + 1);
    b2.set_column(0, &r.col_to_j);
    for i in 0..k {
        b2[(i, i + 1)] = mu;
    }
    Ok((a2, b2))
}

/// Transmission-phase chain `Y2` for `S_j` entered after threshold `tau_j`,
/// together with `kappa_j`.
pub fn build_y2(g: &GeneratorMatrix, j: usize, mu: f64, tau_j: f64) -> Result<(AbsorbingChain, f64)> {
    check_rate(mu, "service rate")?;
    ThresholdPolicy::new(vec![tau_j])?;
    let y1 = build_y1(g, j)?;
    let w = crate::phasetype::mat_exp(y1.a(), tau_j)?.tr_mul(y1.beta());
    let survival = w.sum();
    if survival < NEVER_TRANSMIT_SURVIVAL {
        return Err(Error::ThresholdAbsorbsAll { survival });
    }
    let kappa = if tau_j == 0.0 { 0.0 } else { (1.0 - survival).clamp(0.0, 1.0) };
    let (a2, b2) = transmission_blocks(g, j, mu)?;
    Ok((AbsorbingChain::new(a2, b2, w / survival)?, kappa))
}

/// Per-`(g, j, mu)` factorizations reused across thresholds.
///
/// Everything except `w = beta1 exp(tau A1)` is independent of `tau`, and
/// `A1`, `A2 = A1 - mu I` commute, so each query costs a row propagation plus
/// a handful of dot products.
pub struct CycleEvaluator {
    j: usize,
    n: usize,
    kept: Vec<usize>,
    inv_sigma: f64,
    cap: f64,
    beta1: DVector<f64>,
    propagator: ExpPropagator,
    /// `U1 1 - U2 1`
    gap_u: DVector<f64>,
    /// `V2 1 - V1 1`
    gap_v: DVector<f64>,
    beta_u1: f64,
    beta_v1: f64,
    /// `(I - D)^-1 1` for the transmission phase.
    visits: DVector<f64>,
    /// `-A2^-1 B2`
    absorb: DMatrix<f64>,
}

impl CycleEvaluator {
    pub fn new(g: &GeneratorMatrix, j: usize, mu: f64) -> Result<Self> {
        check_rate(mu, "service rate")?;
        check_state(g, j)?;
        let y1 = build_y1(g, j)?;
        let (a2, b2) = transmission_blocks(g, j, mu)?;
        let k = a2.nrows();
        let one = ones(k);

        let lu1 = Lu::new(y1.a().clone(), "waiting-phase generator")?;
        let u1 = lu1.solve_vec(&one)?;
        let v1 = lu1.solve_vec(&u1)?;
        let lu2 = Lu::new(a2.clone(), "transmission-phase generator")?;
        let u2 = lu2.solve_vec(&one)?;
        let v2 = lu2.solve_vec(&u2)?;
        let absorb = -lu2.solve_mat(&b2)?;

        let d = embedded_dtmc(&a2)?;
        let visits = Lu::new(DMatrix::identity(k, k) - d, "fundamental matrix")?.solve_vec(&one)?;

        let beta1 = y1.beta().clone();
        Ok(Self {
            j,
            n: g.n(),
            kept: (0..g.n()).filter(|&i| i != j).collect(),
            inv_sigma: 1.0 / g.holding_rate(j),
            cap: tau_cap(g),
            beta_u1: beta1.dot(&u1),
            beta_v1: beta1.dot(&v1),
            propagator: ExpPropagator::new(y1.a())?,
            beta1,
            gap_u: &u1 - &u2,
            gap_v: &v2 - &v1,
            visits,
            absorb,
        })
    }

    pub fn state(&self) -> usize {
        self.j
    }

    pub fn tau_cap(&self) -> f64 {
        self.cap
    }

    /// Cycle quantities at threshold `tau` (clamped to the cap).
    pub fn evaluate(&mut self, tau: f64) -> CycleModel {
        let tau = tau.clamp(0.0, self.cap);
        let w = if tau == 0.0 { self.beta1.clone() } else { self.propagator.row_exp(&self.beta1, tau) };
        let survival = w.sum();
        let mut p_row = vec![0.0; self.n];
        if survival < NEVER_TRANSMIT_SURVIVAL {
            p_row[self.j] = 1.0;
            return CycleModel {
                j: self.j,
                kappa: 1.0,
                a: self.beta_v1,
                c: 0.0,
                d: -self.beta_u1 + self.inv_sigma,
                p_row,
            };
        }
        let kappa = if tau == 0.0 { 0.0 } else { (1.0 - survival).clamp(0.0, 1.0) };
        let w_gap_u = w.dot(&self.gap_u);
        let d = w_gap_u - self.beta_u1 + self.inv_sigma;
        let a = tau * w_gap_u + self.beta_v1 + w.dot(&self.gap_v);
        let c = w.dot(&self.visits);
        let exits = self.absorb.tr_mul(&w);
        p_row[self.j] = exits[0].max(0.0) + kappa;
        for (pos, &i) in self.kept.iter().enumerate() {
            p_row[i] = exits[pos + 1].max(0.0);
        }
        CycleModel { j: self.j, kappa, a, c, d, p_row }
    }
}

/// Compact matrix forms of `(a_j, c_j, d_j, p_j)`.
pub fn cycle_costs(g: &GeneratorMatrix, j: usize, mu: f64, tau_j: f64) -> Result<CycleModel> {
    ThresholdPolicy::new(vec![tau_j])?;
    let model = CycleEvaluator::new(g, j, mu)?.evaluate(tau_j);
    #[cfg(debug_assertions)]
    {
        let other = cycle_costs_conditional(g, j, mu, tau_j)?;
        let scale = model.a.abs().max(model.d).max(1.0);
        debug_assert!((model.a - other.a).abs() <= 1e-9 * scale, "a: {} vs {}", model.a, other.a);
        debug_assert!((model.d - other.d).abs() <= 1e-9 * scale, "d: {} vs {}", model.d, other.d);
        debug_assert!((model.c - other.c).abs() <= 1e-9 * model.c.max(1.0), "c: {} vs {}", model.c, other.c);
    }
    Ok(model)
}

/// The same quantities assembled from conditional phase-type moments:
/// `d = F E[T1 | T1<tau] + (1-F)(tau + E[T2]) + 1/sigma_j`,
/// `a = F E[T1^2 | T1<tau]/2 + (1-F)(tau^2/2 + tau E[T2] + E[T2^2]/2)`,
/// `c = (1-F) E[visits of Y2]`, and transition probabilities from the
/// absorption probabilities of `Y2`.
pub fn cycle_costs_conditional(g: &GeneratorMatrix, j: usize, mu: f64, tau_j: f64) -> Result<CycleModel> {
    check_rate(mu, "service rate")?;
    ThresholdPolicy::new(vec![tau_j])?;
    let tau = tau_j.min(tau_cap(g));
    let y1 = build_y1(g, j)?;
    let waiting = y1.phase_type();
    let f = waiting.cdf(tau)?;
    let inv_sigma = 1.0 / g.holding_rate(j);
    let n = g.n();
    let (mut a, mut d) = (0.0, inv_sigma);
    if f >= crate::phasetype::CONDITIONING_FLOOR {
        let (m1, m2) = waiting.conditional_moments(tau)?;
        a += f * m2 / 2.0;
        d += f * m1;
    }
    let mut p_row = vec![0.0; n];
    p_row[j] = f;
    let mut c = 0.0;
    match build_y2(g, j, mu, tau) {
        Ok((y2, _)) => {
            let reach = 1.0 - f;
            let (t1, t2) = y2.phase_type().moments()?;
            d += reach * (tau + t1);
            a += reach * (tau * tau / 2.0 + tau * t1 + t2 / 2.0);
            c = reach * y2.expected_visits()?;
            let probs = y2.absorption_probs()?;
            p_row[j] += reach * probs[0];
            let kept = (0..n).filter(|&i| i != j);
            for (pos, i) in kept.enumerate() {
                p_row[i] = reach * probs[pos + 1];
            }
        }
        Err(Error::ThresholdAbsorbsAll { .. }) => p_row[j] = 1.0,
        Err(e) => return Err(e),
    }
    Ok(CycleModel { j, kappa: f, a, c, d, p_row })
}

/// Row `p_j.` of the synchronization chain.
pub fn transition_row(g: &GeneratorMatrix, j: usize, mu: f64, tau_j: f64) -> Result<Vec<f64>> {
    Ok(cycle_costs(g, j, mu, tau_j)?.p_row)
}

/// Synchronization chain `P(tau)` with its stationary law and the
/// renewal-reward averages.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncChain {
    pub p: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub maoii: f64,
    pub rate: f64,
}

impl SyncChain {
    /// Solves `pi = 1^T (P + 1 1^T - I)^-1` and forms
    /// `MAoII = sum pi a / sum pi d`, `R = sum pi c / sum pi d`.
    pub fn from_cycles(cycles: &[CycleModel]) -> Result<Self> {
        let n = cycles.len();
        let p = DMatrix::from_fn(n, n, |r, c| cycles[r].p_row[c]);
        let mut m = &p + DMatrix::from_element(n, n, 1.0);
        for i in 0..n {
            m[(i, i)] -= 1.0;
        }
        let lu = Lu::new(m.transpose(), "synchronization chain").map_err(|_| Error::SingularChain)?;
        let pi = lu.solve_vec(&ones(n)).map_err(|_| Error::SingularChain)?;
        let pi = pi.map(|x| x.max(0.0));
        let (mut sa, mut sc, mut sd) = (0.0, 0.0, 0.0);
        for (k, cyc) in cycles.iter().enumerate() {
            sa += pi[k] * cyc.a;
            sc += pi[k] * cyc.c;
            sd += pi[k] * cyc.d;
        }
        Ok(Self { p, pi, maoii: sa / sd, rate: sc / sd })
    }
}

/// One evaluator per synchronization state.
pub fn evaluators(g: &GeneratorMatrix, mu: f64) -> Result<Vec<CycleEvaluator>> {
    (0..g.n()).map(|j| CycleEvaluator::new(g, j, mu)).collect()
}

pub fn sync_chain(g: &GeneratorMatrix, mu: f64, tau: &ThresholdPolicy) -> Result<SyncChain> {
    if tau.len() != g.n() {
        return Err(Error::InvalidArgument(format!("{} thresholds for {} states", tau.len(), g.n())));
    }
    let cycles: Vec<CycleModel> =
        evaluators(g, mu)?.iter_mut().zip(tau.as_slice()).map(|(ev, &t)| ev.evaluate(t)).collect();
    SyncChain::from_cycles(&cycles)
}

/// Cycle of the Poisson-sampling baseline at state `j`: while desynchronized
/// and before the first sample, samples arrive at rate `gamma`; afterwards
/// the source behaves as in the transmission phase.
///
/// The chain has `2K` transient states `[waiting | transmitting]`. Every
/// entry into a transmitting state starts a transmission.
pub fn poisson_cycle(g: &GeneratorMatrix, j: usize, mu: f64, gamma: f64) -> Result<CycleModel> {
    check_rate(mu, "service rate")?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("sampling intensity must be nonnegative, got {gamma}")));
    }
    let y1 = build_y1(g, j)?;
    let (a2, b2) = transmission_blocks(g, j, mu)?;
    let k = a2.nrows();
    let n = g.n();
    let mut a = DMatrix::zeros(2 * k, 2 * k);
    let mut b = DMatrix::zeros(2 * k, n);
    for r in 0..k {
        for c in 0..k {
            a[(r, c)] = y1.a()[(r, c)];
            a[(k + r, k + c)] = a2[(r, c)];
        }
        a[(r, r)] -= gamma;
        a[(r, k + r)] = gamma;
        b[(r, 0)] = b2[(r, 0)];
        for c in 0..n {
            b[(k + r, c)] = b2[(r, c)];
        }
    }
    let mut beta = DVector::zeros(2 * k);
    beta.rows_mut(0, k).copy_from(y1.beta());
    let chain = AbsorbingChain::new(a, b, beta)?;
    let (t1, t2) = chain.phase_type().moments()?;
    let visits = chain.visit_counts()?;
    let c = visits.rows(k, k).sum();
    let probs = chain.absorption_probs()?;
    let mut p_row = vec![0.0; n];
    p_row[j] = probs[0].max(0.0);
    for (pos, i) in (0..n).filter(|&i| i != j).enumerate() {
        p_row[i] = probs[pos + 1].max(0.0);
    }

    let mut first_exit = DMatrix::zeros(k, 2);
    first_exit.set_column(0, &y1.b().column(0));
    first_exit.set_column(1, &DVector::from_element(k, gamma));
    let mut waiting = y1.a().clone();
    for r in 0..k {
        waiting[(r, r)] -= gamma;
    }
    let kappa = AbsorbingChain::new(waiting, first_exit, y1.beta().clone())?.absorption_probs()?[0];

    Ok(CycleModel { j, kappa, a: t2 / 2.0, c, d: t1 + 1.0 / g.holding_rate(j), p_row })
}

pub fn poisson_sync_chain(g: &GeneratorMatrix, mu: f64, gamma: f64) -> Result<SyncChain> {
    let cycles = (0..g.n()).map(|j| poisson_cycle(g, j, mu, gamma)).collect::<Result<Vec<_>>>()?;
    SyncChain::from_cycles(&cycles)
}
