//! Average-cost policy iteration over per-estimate thresholds, Lagrangian
//! bisection for the sampling-rate budget, and exhaustive-grid references.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::markov::GeneratorMatrix;
use crate::model::{evaluators, CycleEvaluator, CycleModel, SyncChain, ThresholdPolicy};

/// Points in the coarse scan that precedes golden-section refinement.
const PRESCAN_POINTS: usize = 64;

/// Golden-section shrink factor, `(sqrt(5) - 1) / 2`.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stopping tolerance on successive average costs.
    pub eps_eta: f64,
    /// Tolerance on `|R - b|` in the multiplier search.
    pub eps_lambda: f64,
    /// Width at which threshold searches stop.
    pub eps_tau: f64,
    pub max_policy_iters: usize,
    pub max_bisect_iters: usize,
    /// Growth factor of the threshold search bracket.
    pub tau_search_expansion: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_eta: 1e-2,
            eps_lambda: 1e-2,
            eps_tau: 1e-4,
            max_policy_iters: 200,
            max_bisect_iters: 60,
            tau_search_expansion: 2.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.eps_eta, self.eps_lambda, self.eps_tau];
        if positive.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if self.max_policy_iters == 0 || self.max_bisect_iters == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1".into()));
        }
        if !(self.tau_search_expansion > 1.0) {
            return Err(Error::InvalidArgument("tau_search_expansion must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationCapHit,
    BudgetSlackAtZeroLambda,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    pub tau: ThresholdPolicy,
    pub lambda: f64,
    /// Long-run average Lagrangian cost.
    pub eta: f64,
    /// Relative values, last entry pinned to 0.
    pub v: Vec<f64>,
    pub maoii: f64,
    pub rate: f64,
    /// Policy-iteration passes of the final solve.
    pub policy_iterations: usize,
    /// Multiplier evaluations after the zero-multiplier solve.
    pub bisection_steps: usize,
    pub status: SolveStatus,
    /// Average cost after each value-determination step.
    pub eta_history: Vec<f64>,
    /// `(lambda, R)` for every multiplier tried, in order.
    pub lambda_trace: Vec<(f64, f64)>,
}

/// Solves `v_j = a_j + lambda c_j - eta d_j + sum_i p_ji v_i` with
/// `v_{N-1} = 0` as one dense system in `(v_0, .., v_{N-2}, eta)`.
pub fn value_determination(cycles: &[CycleModel], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let n = cycles.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no cycles".into()));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (r, cyc) in cycles.iter().enumerate() {
        for i in 0..n - 1 {
            m[(r, i)] = if r == i { 1.0 } else { 0.0 } - cyc.p_row[i];
        }
        m[(r, n - 1)] = cyc.d;
        rhs[r] = cyc.a + lambda * cyc.c;
    }
    let x = Lu::new(m, "value determination").and_then(|lu| lu.solve_vec(&rhs)).map_err(|_| Error::SingularSystem)?;
    let eta = x[n - 1];
    let mut v: Vec<f64> = x.iter().take(n - 1).copied().collect();
    v.push(0.0);
    Ok((eta, v))
}

/// Outcome of one threshold improvement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub tau: f64,
    /// Improvement objective at `tau`.
    pub objective: f64,
}

struct Objective<'a> {
    ev: &'a mut CycleEvaluator,
    v: &'a [f64],
    eta: f64,
    lambda: f64,
    evaluations: usize,
}

impl Objective<'_> {
    /// `h_j(tau) = a + lambda c - eta d + sum_i p_ji v_i`, plus the
    /// never-transmit flag.
    fn eval(&mut self, tau: f64) -> (f64, bool) {
        self.evaluations += 1;
        let m = self.ev.evaluate(tau);
        let future: f64 = m.p_row.iter().zip(self.v).map(|(p, v)| p * v).sum();
        (m.a + self.lambda * m.c - self.eta * m.d + future, m.c == 0.0 && m.kappa == 1.0)
    }
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0 < b.0)
}

fn golden_section(obj: &mut Objective<'_>, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = obj.eval(x1).0;
    let mut f2 = obj.eval(x2).0;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = obj.eval(x1).0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = obj.eval(x2).0;
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn improve_with(
    ev: &mut CycleEvaluator,
    v: &[f64],
    eta: f64,
    lambda: f64,
    current: f64,
    initial_scale: f64,
    cfg: &SolverConfig,
) -> ThresholdChoice {
    let cap = ev.tau_cap();
    let mut obj = Objective { ev, v, eta, lambda, evaluations: 0 };

    // (tau, h), kept sorted by tau.
    let mut points: Vec<(f64, f64)> = vec![(0.0, obj.eval(0.0).0)];
    let mut upper = initial_scale.clamp(cfg.eps_tau, cap);
    loop {
        points.push((upper, obj.eval(upper).0));
        let k = points.len();
        let rising = k >= 3 && points[k - 3].1 < points[k - 2].1 && points[k - 2].1 < points[k - 1].1;
        if rising || upper >= cap {
            break;
        }
        upper = (upper * cfg.tau_search_expansion).min(cap);
    }
    for i in 1..PRESCAN_POINTS - 1 {
        let t = upper * i as f64 / (PRESCAN_POINTS - 1) as f64;
        points.push((t, obj.eval(t).0));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|a, b| a.0 == b.0);

    let mut best_idx = 0;
    for (i, p) in points.iter().enumerate() {
        if p.1 < points[best_idx].1 {
            best_idx = i;
        }
    }
    let mut best = points[best_idx];
    let lo = points[best_idx.saturating_sub(1)].0;
    let hi = points[(best_idx + 1).min(points.len() - 1)].0;
    if hi > lo {
        let refined = golden_section(&mut obj, lo, hi, cfg.eps_tau);
        if better(refined, best) {
            best = refined;
        }
    }
    let at_cap = (cap, obj.eval(cap).0);
    if better(at_cap, best) {
        best = at_cap;
    }
    let (_, never) = obj.eval(best.0);
    if never {
        best.0 = cap;
    }

    let current = current.clamp(0.0, cap);
    let (h_current, _) = obj.eval(current);
    log::trace!("threshold search for state {}: {} evaluations", obj.ev.state(), obj.evaluations);
    if best.1 < h_current - 1e-12 * h_current.abs().max(1.0) {
        ThresholdChoice { tau: best.0, objective: best.1 }
    } else {
        ThresholdChoice { tau: current, objective: h_current }
    }
}

/// Minimizes the policy-improvement objective for state `j` over
/// `[0, TAU_CAP]`. The current threshold is kept unless another one is
/// strictly better.
#[allow(clippy::too_many_arguments)]
pub fn improve_threshold(
    g: &GeneratorMatrix,
    mu: f64,
    j: usize,
    v: &[f64],
    eta: f64,
    lambda: f64,
    current: f64,
    cfg: &SolverConfig,
) -> Result<ThresholdChoice> {
    cfg.validate()?;
    if v.len() != g.n() {
        return Err(Error::InvalidArgument(format!("{} relative values for {} states", v.len(), g.n())));
    }
    let mut ev = CycleEvaluator::new(g, j, mu)?;
    let scale = search_scale(g, j);
    Ok(improve_with(&mut ev, v, eta, lambda, current, scale, cfg))
}

/// Initial bracket for the threshold search: a quarter of the slowest mean
/// holding time among the states the source can drift to.
fn search_scale(g: &GeneratorMatrix, j: usize) -> f64 {
    let slowest = (0..g.n()).filter(|&i| i != j).map(|i| g.holding_rate(i)).fold(f64::INFINITY, f64::min);
    0.25 / slowest
}

/// One pass of model build and value determination at `tau`.
fn evaluate_policy(evs: &mut [CycleEvaluator], tau: &[f64], lambda: f64) -> Result<(Vec<CycleModel>, f64, Vec<f64>)> {
    let cycles: Vec<CycleModel> = evs.iter_mut().zip(tau).map(|(ev, &t)| ev.evaluate(t)).collect();
    let (eta, v) = value_determination(&cycles, lambda)?;
    Ok((cycles, eta, v))
}

/// Policy iteration for the Lagrangian cost `MAoII + lambda R`, started from
/// zero thresholds. Stops when successive average costs differ by at most
/// `eps_eta` or the policy repeats.
pub fn policy_iteration(g: &GeneratorMatrix, mu: f64, lambda: f64, cfg: &SolverConfig) -> Result<PolicySolution> {
    cfg.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("multiplier must be nonnegative, got {lambda}")));
    }
    let n = g.n();
    let scales: Vec<f64> = (0..n).map(|j| search_scale(g, j)).collect();
    let mut tau = vec![0.0; n];
    let mut history = Vec::new();
    let mut status = SolveStatus::IterationCapHit;
    let mut last = None;
    for iteration in 1..=cfg.max_policy_iters {
        let mut evs = evaluators(g, mu)?;
        let (cycles, eta, v) = evaluate_policy(&mut evs, &tau, lambda)?;
        let settled = history.last().is_some_and(|prev: &f64| (eta - prev).abs() <= cfg.eps_eta);
        history.push(eta);
        if settled {
            last = Some((cycles, eta, v, iteration));
            status = SolveStatus::Converged;
            break;
        }
        let next: Vec<f64> = evs
            .par_iter_mut()
            .enumerate()
            .map(|(j, ev)| improve_with(ev, &v, eta, lambda, tau[j], scales[j], cfg).tau)
            .collect();
        let unchanged = next == tau;
        last = Some((cycles, eta, v, iteration));
        if unchanged {
            status = SolveStatus::Converged;
            break;
        }
        tau = next;
    }
    let (cycles, eta, v, iterations) = last.expect("at least one iteration");
    if status == SolveStatus::IterationCapHit {
        log::warn!("policy iteration hit the cap of {} passes at lambda {lambda}", cfg.max_policy_iters);
    }
    let chain = SyncChain::from_cycles(&cycles)?;
    Ok(PolicySolution {
        tau: ThresholdPolicy::new(tau)?,
        lambda,
        eta,
        v,
        maoii: chain.maoii,
        rate: chain.rate,
        policy_iterations: iterations,
        bisection_steps: 0,
        status,
        eta_history: history,
        lambda_trace: vec![(lambda, chain.rate)],
    })
}

/// Finds the multiplier whose policy meets the budget `b`.
///
/// Returns the zero-multiplier policy when it already satisfies the
/// budget. Otherwise the upper multiplier is found by doubling from 1 and
/// the interval is bisected until `|R - b| <= eps_lambda`.
pub fn lagrange_bisection(g: &GeneratorMatrix, mu: f64, b: f64, cfg: &SolverConfig) -> Result<PolicySolution> {
    cfg.validate()?;
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidArgument(format!("budget must be positive, got {b}")));
    }
    let mut trace = Vec::new();
    let finish = |mut sol: PolicySolution, trace: &mut Vec<(f64, f64)>, steps: usize| {
        trace.push((sol.lambda, sol.rate));
        sol.lambda_trace = trace.clone();
        sol.bisection_steps = steps;
        sol
    };

    let free = policy_iteration(g, mu, 0.0, cfg)?;
    if free.rate <= b {
        let mut sol = finish(free, &mut trace, 0);
        sol.status = SolveStatus::BudgetSlackAtZeroLambda;
        return Ok(sol);
    }
    trace.push((0.0, free.rate));

    let mut steps = 0;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut upper = loop {
        let sol = policy_iteration(g, mu, hi, cfg)?;
        steps += 1;
        if sol.rate <= b {
            break sol;
        }
        trace.push((hi, sol.rate));
        if steps >= cfg.max_bisect_iters {
            return Err(Error::BisectionFailed { iterations: steps, lambda: hi, rate: sol.rate, budget: b });
        }
        lo = hi;
        hi *= 2.0;
    };
    if (upper.rate - b).abs() <= cfg.eps_lambda {
        return Ok(finish(upper, &mut trace, steps));
    }
    let mut bisect = 0;
    while bisect < cfg.max_bisect_iters {
        bisect += 1;
        let mid = 0.5 * (lo + hi);
        let sol = policy_iteration(g, mu, mid, cfg)?;
        steps += 1;
        if (sol.rate - b).abs() <= cfg.eps_lambda {
            return Ok(finish(sol, &mut trace, steps));
        }
        trace.push((mid, sol.rate));
        if sol.rate >= b {
            lo = mid;
        } else {
            hi = mid;
            upper = sol;
        }
    }
    Err(Error::BisectionFailed { iterations: steps, lambda: upper.lambda, rate: upper.rate, budget: b })
}

/// Best feasible point found by exhaustive search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub tau: Vec<f64>,
    pub maoii: f64,
    pub rate: f64,
}

/// `(tau, MAoII, R)` over `values^N`, in lexicographic order of the grid
/// indices with the first state varying slowest.
pub fn evaluate_grid(g: &GeneratorMatrix, mu: f64, values: &[f64]) -> Result<Vec<(Vec<f64>, f64, f64)>> {
    let n = g.n();
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let table: Vec<Vec<CycleModel>> =
        evaluators(g, mu)?.into_par_iter().map(|mut ev| values.iter().map(|&t| ev.evaluate(t)).collect()).collect();
    let m = values.len();
    let total = m.checked_pow(n as u32).ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
    (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0usize; n];
            let mut rest = flat;
            for j in (0..n).rev() {
                idx[j] = rest % m;
                rest /= m;
            }
            let cycles: Vec<CycleModel> = idx.iter().enumerate().map(|(j, &k)| table[j][k].clone()).collect();
            let chain = SyncChain::from_cycles(&cycles)?;
            Ok((idx.iter().map(|&k| values[k]).collect(), chain.maoii, chain.rate))
        })
        .collect()
}

fn grid_values(step: f64, tau_hi: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(tau_hi >= 0.0) || !step.is_finite() || !tau_hi.is_finite() {
        return Err(Error::InvalidArgument(format!("bad grid step {step} or range {tau_hi}")));
    }
    let count = (tau_hi / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| k as f64 * step).collect())
}

fn pick_feasible(points: impl IntoIterator<Item = (Vec<f64>, f64, f64)>, b: f64) -> Result<GridOptimum> {
    let mut best: Option<GridOptimum> = None;
    for (tau, maoii, rate) in points {
        if rate <= b && best.as_ref().is_none_or(|o| maoii < o.maoii) {
            best = Some(GridOptimum { tau, maoii, rate });
        }
    }
    best.ok_or(Error::InfeasibleBudget { budget: b })
}

/// Exhaustive constrained minimum of MAoII over `[0, tau_hi]^N` with the
/// given step. Limited to `N <= 4`.
pub fn grid_search_oracle(g: &GeneratorMatrix, mu: f64, b: f64, step: f64, tau_hi: f64) -> Result<GridOptimum> {
    if g.n() > 4 {
        return Err(Error::InvalidArgument(format!("grid oracle supports N <= 4, got {}", g.n())));
    }
    let values = grid_values(step, tau_hi)?;
    pick_feasible(evaluate_grid(g, mu, &values)?, b)
}

/// Best common threshold for all states by one-dimensional exhaustive
/// search over `[0, tau_hi]`.
pub fn single_threshold_search(g: &GeneratorMatrix, mu: f64, b: f64, step: f64, tau_hi: f64) -> Result<GridOptimum> {
    let values = grid_values(step, tau_hi)?;
    let n = g.n();
    let mut evs = evaluators(g, mu)?;
    let points = values
        .iter()
        .map(|&t| {
            let cycles: Vec<CycleModel> = evs.iter_mut().map(|ev| ev.evaluate(t)).collect();
            let chain = SyncChain::from_cycles(&cycles)?;
            Ok((vec![t; n], chain.maoii, chain.rate))
        })
        .collect::<Result<Vec<_>>>()?;
    pick_feasible(points, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sync_chain, tau_cap};
    use approx::assert_abs_diff_eq;

    fn q1() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(&[vec![-0.6, 0.6], vec![0.75, -0.75]]).unwrap()
    }

    fn q2() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(&[vec![-1.025, 1.0, 0.025], vec![0.05, -0.75, 0.7], vec![0.4, 0.01, -0.41]]).unwrap()
    }

    fn cycles_at(g: &GeneratorMatrix, mu: f64, tau: &[f64]) -> Vec<CycleModel> {
        evaluators(g, mu).unwrap().iter_mut().zip(tau).map(|(ev, &t)| ev.evaluate(t)).collect()
    }

    #[test]
    fn symmetric_values_vanish() {
        let g = GeneratorMatrix::symmetric(2, 1.0).unwrap();
        let cycles = cycles_at(&g, 1.0, &[0.4, 0.4]);
        let (eta, v) = value_determination(&cycles, 2.0).unwrap();
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-12);
        assert_eq!(v[1], 0.0);
        let c = &cycles[0];
        assert_abs_diff_eq!(eta, (c.a + 2.0 * c.c) / c.d, epsilon = 1e-12);
    }

    #[test]
    fn average_cost_matches_renewal_ratio() {
        let g = q1();
        let cycles = cycles_at(&g, 1.0, &[1.0, 1.0]);
        let (eta, _) = value_determination(&cycles, 0.0).unwrap();
        let chain = sync_chain(&g, 1.0, &ThresholdPolicy::uniform(2, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(eta, chain.maoii, epsilon = 1e-8);

        let g = q2();
        let tau = [0.3, 1.2, 2.0];
        let cycles = cycles_at(&g, 5.0, &tau);
        let chain = SyncChain::from_cycles(&cycles).unwrap();
        for lambda in [0.0, 0.7, 4.0] {
            let (eta, v) = value_determination(&cycles, lambda).unwrap();
            let (mut sa, mut sc, mut sd) = (0.0, 0.0, 0.0);
            for (k, c) in cycles.iter().enumerate() {
                sa += chain.pi[k] * c.a;
                sc += chain.pi[k] * c.c;
                sd += chain.pi[k] * c.d;
            }
            assert_abs_diff_eq!(eta, (sa + lambda * sc) / sd, epsilon = 1e-8);
            for (j, c) in cycles.iter().enumerate() {
                let future: f64 = c.p_row.iter().zip(&v).map(|(p, x)| p * x).sum();
                let residual = c.a + lambda * c.c - eta * c.d + future - v[j];
                assert!(residual.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn free_sampling_sends_immediately() {
        let cfg = SolverConfig::default();
        for g in [q1(), q2()] {
            let cycles = cycles_at(&g, 1.0, &vec![0.0; g.n()]);
            let (eta, v) = value_determination(&cycles, 0.0).unwrap();
            for j in 0..g.n() {
                let choice = improve_threshold(&g, 1.0, j, &v, eta, 0.0, 0.7, &cfg).unwrap();
                assert_eq!(choice.tau, 0.0);
                // Coarse scan confirms the minimum sits at zero.
                let mut ev = CycleEvaluator::new(&g, j, 1.0).unwrap();
                let h = |m: CycleModel| m.a - eta * m.d + m.p_row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
                let h0 = h(ev.evaluate(0.0));
                for k in 1..200 {
                    assert!(h(ev.evaluate(k as f64 * 0.05)) >= h0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn expensive_sampling_never_transmits() {
        let g = q2();
        let cfg = SolverConfig::default();
        let cycles = cycles_at(&g, 1.0, &[0.0; 3]);
        let lambda = 1e4;
        let (eta, v) = value_determination(&cycles, lambda).unwrap();
        for j in 0..3 {
            let choice = improve_threshold(&g, 1.0, j, &v, eta, lambda, 0.0, &cfg).unwrap();
            assert_eq!(choice.tau, tau_cap(&g));
        }
    }

    #[test]
    fn improvement_never_worsens_the_objective() {
        let g = q2();
        let cfg = SolverConfig::default();
        let current = [0.5, 2.0, 0.1];
        let cycles = cycles_at(&g, 1.0, &current);
        let (eta, v) = value_determination(&cycles, 1.5).unwrap();
        let mut evs = evaluators(&g, 1.0).unwrap();
        for j in 0..3 {
            let choice = improve_threshold(&g, 1.0, j, &v, eta, 1.5, current[j], &cfg).unwrap();
            let m = evs[j].evaluate(current[j]);
            let h_cur = m.a + 1.5 * m.c - eta * m.d + m.p_row.iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
            assert!(choice.objective <= h_cur + 1e-12);
        }
    }

    #[test]
    fn policy_iteration_at_zero_multiplier() {
        let g = q2();
        let sol = policy_iteration(&g, 1.0, 0.0, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.tau.as_slice().iter().all(|&t| t == 0.0));
        let chain = sync_chain(&g, 1.0, &ThresholdPolicy::zeros(3)).unwrap();
        assert_abs_diff_eq!(sol.maoii, chain.maoii, epsilon = 1e-12);
        assert_eq!(*sol.v.last().unwrap(), 0.0);
    }

    #[test]
    fn average_cost_is_monotone() {
        let cfg = SolverConfig { eps_eta: 1e-12, ..SolverConfig::default() };
        for (g, lambda) in [(q1(), 1.0), (q2(), 0.5), (q2(), 3.0)] {
            let sol = policy_iteration(&g, 1.0, lambda, &cfg).unwrap();
            for pair in sol.eta_history.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10, "{:?}", sol.eta_history);
            }
        }
    }

    #[test]
    fn symmetric_sources_share_one_threshold() {
        let g = GeneratorMatrix::symmetric(3, 1.0).unwrap();
        let cfg = SolverConfig::default();
        for lambda in [0.1, 1.0, 10.0] {
            let sol = policy_iteration(&g, 1.0, lambda, &cfg).unwrap();
            let t = sol.tau.as_slice();
            assert!((t[0] - t[1]).abs() <= 10.0 * cfg.eps_tau && (t[1] - t[2]).abs() <= 10.0 * cfg.eps_tau, "{t:?}");
        }
    }

    #[test]
    fn slack_budget_returns_zero_multiplier() {
        let g = q2();
        let sol = lagrange_bisection(&g, 1.0, 100.0, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::BudgetSlackAtZeroLambda);
        assert_eq!(sol.lambda, 0.0);
        assert!(sol.tau.as_slice().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn binding_budget_is_met() {
        let g = q2();
        let cfg = SolverConfig::default();
        for b in [0.1, 0.3] {
            let sol = lagrange_bisection(&g, 1.0, b, &cfg).unwrap();
            assert!(sol.lambda > 0.0);
            assert!((sol.rate - b).abs() <= cfg.eps_lambda, "rate {} for budget {b}", sol.rate);
        }
    }

    #[test]
    fn oracle_examples() {
        let g = q1();
        let best = grid_search_oracle(&g, 1.0, 100.0, 0.1, 2.0).unwrap();
        assert_eq!(best.tau, vec![0.0, 0.0]);
        let sym = GeneratorMatrix::symmetric(2, 1.0).unwrap();
        let best = grid_search_oracle(&sym, 1.0, 0.2, 0.05, 5.0).unwrap();
        assert!(best.rate <= 0.2);
        // Mirrored thresholds give the same point, and ties keep the first.
        let swapped = sync_chain(&sym, 1.0, &ThresholdPolicy::new(vec![best.tau[1], best.tau[0]]).unwrap()).unwrap();
        assert_abs_diff_eq!(swapped.maoii, best.maoii, epsilon = 1e-12);
        assert!(best.tau[0] <= best.tau[1]);
        assert!(grid_search_oracle(&GeneratorMatrix::symmetric(5, 1.0).unwrap(), 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(matches!(grid_search_oracle(&g, 1.0, 1e-9, 0.5, 1.0), Err(Error::InfeasibleBudget { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SolverConfig { eps_tau: 0.0, ..SolverConfig::default() };
        assert!(policy_iteration(&q1(), 1.0, 0.0, &cfg).is_err());
        assert!(lagrange_bisection(&q1(), 1.0, 0.0, &SolverConfig::default()).is_err());
    }
}
