//! Batch front end: one subcommand per experiment mode, JSON configs in,
//! CSV and JSON artifacts out.
//!
//! Exit codes: 0 success, 1 validation failure, 2 config error, 3 numerical
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::markov::GeneratorMatrix;
use crate::model::{build_y1, cycle_costs, cycle_costs_conditional, poisson_sync_chain, sync_chain, ThresholdPolicy};
use crate::phasetype::mat_exp;
use crate::sim::{
    calibrate_poisson, replay, simulate, simulate_with_trace, EventKind, SamplingPolicy, Script, ScriptEvent,
    SimConfig, DEFAULT_CYCLES,
};
use crate::solver::{
    evaluate_grid, grid_search_oracle, lagrange_bisection, policy_iteration, single_threshold_search, SolverConfig,
};

/// Environment variable that relocates relative output paths.
pub const OUT_DIR_ENV: &str = "AOII_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const SWEEP_HEADER: &str =
    "mu,b,policy,maoii_analytic,maoii_sim,rate_sim,rate_analytic,stderr_maoii,stderr_rate,param";
pub const CONTOUR_HEADER: &str = "tau1,tau2,maoii,rate";
pub const OPTIMA_HEADER: &str = "b,method,tau1,tau2,maoii,rate";
pub const SCALING_HEADER: &str = "N,seconds_per_policy_iteration";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(Error),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e)
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solve,
    Simulate,
    SweepBudget,
    Contour,
    Validate,
    Scaling,
}

impl Mode {
    fn default_output(self) -> &'static str {
        match self {
            Mode::Solve => "solve.json",
            Mode::Simulate => "simulate.json",
            Mode::SweepBudget => "sweep_budget.csv",
            Mode::Contour => "contour.csv",
            Mode::Validate => "validate.json",
            Mode::Scaling => "scaling.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub step: f64,
    pub tau_max: f64,
}

/// One experiment. Generator rows are given in full, diagonal included;
/// state `i` of the file is row `i`, labelled `i + 1` in outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub generator: Option<Vec<Vec<f64>>>,
    pub mu: Option<f64>,
    pub mus: Option<Vec<f64>>,
    pub budget: Option<f64>,
    pub budgets: Option<Vec<f64>>,
    pub policy: Option<SamplingPolicy>,
    pub cycles: Option<u64>,
    pub seed: Option<u64>,
    /// Threshold grid for contour mode.
    pub grid: Option<GridSpec>,
    /// One-dimensional grid for the single-threshold baseline.
    pub single_threshold_grid: Option<GridSpec>,
    pub solver: SolverConfig,
    /// State counts for scaling mode.
    pub sizes: Option<Vec<usize>>,
    /// Multiplier used in scaling mode.
    pub lambda: Option<f64>,
    /// Cycles of event trace written next to simulate output.
    pub trace_cycles: Option<u64>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn generator(&self) -> CliResult<GeneratorMatrix> {
        let rows = self.generator.as_ref().ok_or_else(|| CliError::Config("missing generator".into()))?;
        Ok(GeneratorMatrix::from_rows(rows)?)
    }

    fn mu(&self) -> CliResult<f64> {
        let mu = match (self.mu, self.mus.as_deref()) {
            (Some(mu), _) => mu,
            (None, Some([mu, ..])) => *mu,
            _ => return Err(CliError::Config("missing mu".into())),
        };
        positive(mu, "mu")
    }

    fn mus(&self) -> CliResult<Vec<f64>> {
        let mus = match (&self.mus, self.mu) {
            (Some(m), _) => m.clone(),
            (None, Some(mu)) => vec![mu],
            _ => return Err(CliError::Config("missing mu or mus".into())),
        };
        nonempty(mus, "mus")?.into_iter().map(|m| positive(m, "mu")).collect()
    }

    fn budget(&self) -> CliResult<f64> {
        positive(self.budget.ok_or_else(|| CliError::Config("missing budget".into()))?, "budget")
    }

    fn budgets(&self) -> CliResult<Vec<f64>> {
        let b = match (&self.budgets, self.budget) {
            (Some(b), _) => b.clone(),
            (None, Some(b)) => vec![b],
            _ => return Err(CliError::Config("missing budget or budgets".into())),
        };
        nonempty(b, "budgets")?.into_iter().map(|b| positive(b, "budget")).collect()
    }

    fn cycles(&self) -> CliResult<u64> {
        match self.cycles.unwrap_or(DEFAULT_CYCLES) {
            0 => Err(CliError::Config("cycles must be at least 1".into())),
            c => Ok(c),
        }
    }

    fn check_mode(&self, mode: Mode) -> CliResult<()> {
        match self.mode {
            Some(m) if m != mode => Err(CliError::Config(format!("config is for mode {m:?}, not {mode:?}"))),
            _ => Ok(()),
        }
    }
}

fn positive(x: f64, what: &str) -> CliResult<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Config(format!("{what} must be positive, got {x}")))
    }
}

fn nonempty<T>(v: Vec<T>, what: &str) -> CliResult<Vec<T>> {
    if v.is_empty() {
        Err(CliError::Config(format!("{what} must not be empty")))
    } else {
        Ok(v)
    }
}

/// Nine significant digits, fixed scientific layout.
pub fn fmt9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

/// Rounds to nine significant digits for JSON output.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        fmt9(x).parse().unwrap_or(x)
    } else {
        x
    }
}

fn json_num(x: f64) -> Value {
    if x.is_finite() {
        json!(round9(x))
    } else {
        Value::Null
    }
}

fn json_vec(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| json_num(x)).collect())
}

/// Solution record for one budget.
pub fn run_solve(cfg: &ExperimentConfig) -> CliResult<Value> {
    let g = cfg.generator()?;
    let mu = cfg.mu()?;
    cfg.solver.validate()?;
    let sol = lagrange_bisection(&g, mu, cfg.budget()?, &cfg.solver)?;
    Ok(json!({
        "tau": json_vec(sol.tau.as_slice()),
        "lambda": json_num(sol.lambda),
        "maoii": json_num(sol.maoii),
        "rate": json_num(sol.rate),
        "eta": json_num(sol.eta),
        "iterations": sol.policy_iterations,
        "bisection_steps": sol.bisection_steps,
        "status": format!("{:?}", sol.status),
    }))
}

fn analytic_for(g: &GeneratorMatrix, mu: f64, policy: &SamplingPolicy) -> Option<(f64, f64)> {
    let chain = match policy {
        SamplingPolicy::Thresholds(t) => sync_chain(g, mu, &ThresholdPolicy::new(t.clone()).ok()?),
        SamplingPolicy::SingleThreshold(t) => sync_chain(g, mu, &ThresholdPolicy::uniform(g.n(), *t).ok()?),
        SamplingPolicy::Poisson(gamma) if *gamma > 0.0 => poisson_sync_chain(g, mu, *gamma),
        SamplingPolicy::Poisson(_) => return None,
    };
    chain.ok().map(|c| (c.maoii, c.rate))
}

/// Simulation record plus the optional line-delimited trace.
pub fn run_simulate(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Value, Option<String>)> {
    let g = cfg.generator()?;
    let mu = cfg.mu()?;
    let policy = cfg.policy.clone().ok_or_else(|| CliError::Config("missing policy".into()))?;
    let sim_cfg = SimConfig::new(g.clone(), mu, policy.clone()).with_cycles(cfg.cycles()?).with_seed(seed);
    let res = simulate(&sim_cfg)?;
    let trace = match cfg.trace_cycles {
        Some(k) => Some(simulate_with_trace(&sim_cfg, k)?.1.to_records()),
        None => None,
    };
    let analytic = analytic_for(&g, mu, &policy);
    let record = json!({
        "maoii_hat": json_num(res.maoii_hat),
        "rate_hat": json_num(res.rate_hat),
        "stderr_maoii": json_num(res.stderr_maoii),
        "stderr_rate": json_num(res.stderr_rate),
        "cycles_run": res.cycles_run,
        "transmissions": res.transmissions,
        "preemptions": res.preemptions,
        "maoii_analytic": analytic.map_or(Value::Null, |a| json_num(a.0)),
        "rate_analytic": analytic.map_or(Value::Null, |a| json_num(a.1)),
        "seed": seed,
    });
    Ok((record, trace))
}

struct SweepRow {
    mu: f64,
    b: f64,
    policy: &'static str,
    maoii_analytic: f64,
    maoii_sim: f64,
    rate_sim: f64,
    rate_analytic: f64,
    stderr_maoii: f64,
    stderr_rate: f64,
    param: f64,
}

/// Budget sweep comparing the solver against both baselines. Rows are
/// ordered by `mu`, then budget, then policy.
pub fn run_sweep_budget(cfg: &ExperimentConfig, seed: u64) -> CliResult<String> {
    let g = cfg.generator()?;
    let mus = cfg.mus()?;
    let budgets = cfg.budgets()?;
    let cycles = cfg.cycles()?;
    cfg.solver.validate()?;
    let single_grid = cfg.single_threshold_grid.unwrap_or(GridSpec { step: 0.01, tau_max: 10.0 });
    let points: Vec<(usize, f64, f64)> = mus
        .iter()
        .flat_map(|&mu| budgets.iter().map(move |&b| (mu, b)))
        .enumerate()
        .map(|(i, (mu, b))| (i, mu, b))
        .collect();

    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|&(i, mu, b)| -> CliResult<Vec<SweepRow>> {
            let run = |policy: SamplingPolicy, k: u64| {
                let sim_cfg = SimConfig::new(g.clone(), mu, policy)
                    .with_cycles(cycles)
                    .with_seed(seed)
                    .with_replication(3 * i as u64 + k);
                simulate(&sim_cfg)
            };
            let sol = lagrange_bisection(&g, mu, b, &cfg.solver)?;
            let sim_c = run(SamplingPolicy::Thresholds(sol.tau.as_slice().to_vec()), 0)?;
            let single = single_threshold_search(&g, mu, b, single_grid.step, single_grid.tau_max)?;
            let sim_s = run(SamplingPolicy::SingleThreshold(single.tau[0]), 1)?;
            let gamma = calibrate_poisson(&g, mu, b, cfg.solver.eps_lambda)?;
            let exact_p = poisson_sync_chain(&g, mu, gamma)?;
            let sim_p = run(SamplingPolicy::Poisson(gamma), 2)?;
            let row = |policy, maoii_analytic, rate_analytic, sim: &crate::sim::SimResult, param| SweepRow {
                mu,
                b,
                policy,
                maoii_analytic,
                maoii_sim: sim.maoii_hat,
                rate_sim: sim.rate_hat,
                rate_analytic,
                stderr_maoii: sim.stderr_maoii,
                stderr_rate: sim.stderr_rate,
                param,
            };
            Ok(vec![
                row("csmdp", sol.maoii, sol.rate, &sim_c, sol.lambda),
                row("single_threshold", single.maoii, single.rate, &sim_s, single.tau[0]),
                row("poisson", exact_p.maoii, exact_p.rate, &sim_p, gamma),
            ])
        })
        .collect::<CliResult<_>>()?;

    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows.iter().flatten() {
        let nums = [r.maoii_analytic, r.maoii_sim, r.rate_sim, r.rate_analytic, r.stderr_maoii, r.stderr_rate, r.param];
        out.push_str(&format!("{},{},{}", fmt9(r.mu), fmt9(r.b), r.policy));
        for x in nums {
            out.push(',');
            out.push_str(&fmt9(x));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Grid CSV over `(tau1, tau2)` and the per-budget optima CSV.
pub fn run_contour(cfg: &ExperimentConfig) -> CliResult<(String, String)> {
    let g = cfg.generator()?;
    if g.n() != 2 {
        return Err(Error::NotBinary { n: g.n() }.into());
    }
    let mu = cfg.mu()?;
    let spec = cfg.grid.unwrap_or(GridSpec { step: 0.05, tau_max: 5.0 });
    if !(spec.step > 0.0) || !(spec.tau_max >= 0.0) {
        return Err(CliError::Config(format!("bad grid {spec:?}")));
    }
    let values: Vec<f64> =
        (0..=(spec.tau_max / spec.step + 1e-9).floor() as usize).map(|k| k as f64 * spec.step).collect();
    let mut grid = format!("{CONTOUR_HEADER}\n");
    for (tau, maoii, rate) in evaluate_grid(&g, mu, &values)? {
        grid.push_str(&format!("{},{},{},{}\n", fmt9(tau[0]), fmt9(tau[1]), fmt9(maoii), fmt9(rate)));
    }

    let budgets = match (&cfg.budgets, cfg.budget) {
        (None, None) => Vec::new(),
        _ => cfg.budgets()?,
    };
    cfg.solver.validate()?;
    let optima: Vec<[String; 2]> = budgets
        .par_iter()
        .map(|&b| -> CliResult<[String; 2]> {
            let oracle = grid_search_oracle(&g, mu, b, spec.step, spec.tau_max)?;
            let sol = lagrange_bisection(&g, mu, b, &cfg.solver)?;
            let line = |method: &str, tau: &[f64], maoii: f64, rate: f64| {
                format!("{},{method},{},{},{},{}\n", fmt9(b), fmt9(tau[0]), fmt9(tau[1]), fmt9(maoii), fmt9(rate))
            };
            Ok([
                line("oracle", &oracle.tau, oracle.maoii, oracle.rate),
                line("csmdp", sol.tau.as_slice(), sol.maoii, sol.rate),
            ])
        })
        .collect::<CliResult<_>>()?;
    let mut table = format!("{OPTIMA_HEADER}\n");
    for pair in optima {
        table.push_str(&pair[0]);
        table.push_str(&pair[1]);
    }
    Ok((grid, table))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn q1_rows() -> Vec<Vec<f64>> {
    vec![vec![-0.6, 0.6], vec![0.75, -0.75]]
}

fn q2_rows() -> Vec<Vec<f64>> {
    vec![vec![-1.025, 1.0, 0.025], vec![0.05, -0.75, 0.7], vec![0.4, 0.01, -0.41]]
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: String, passed: bool, detail: String) {
        self.0.push(Check { name, passed, detail });
    }
}

fn validate_generator(checks: &mut Checks, label: &str, g: &GeneratorMatrix, mus: &[f64], seed: u64, cycles: u64) {
    let q = g.q();
    let (s, t) = (0.4, 1.1);
    let gap = (mat_exp(q, s + t).and_then(|a| Ok(a - mat_exp(q, s)? * mat_exp(q, t)?))).map(|d| d.amax());
    match gap {
        Ok(gap) => checks.add(format!("{label}/semigroup"), gap < 1e-9, format!("max gap {gap:e}")),
        Err(e) => checks.add(format!("{label}/semigroup"), false, e.to_string()),
    }

    let n = g.n();
    for j in 0..n {
        let ph = build_y1(g, j).map(|y| y.phase_type());
        let detail = ph.and_then(|ph| {
            let (m1, m2) = ph.moments()?;
            let hi = 60.0 * m1;
            let mass = simpson(|t| ph.pdf(t).unwrap_or(f64::NAN), 0.0, hi, 20_000);
            let first = simpson(|t| t * ph.pdf(t).unwrap_or(f64::NAN), 0.0, hi, 20_000);
            let second = simpson(|t| t * t * ph.pdf(t).unwrap_or(f64::NAN), 0.0, hi, 20_000);
            Ok(((mass - 1.0).abs(), (first - m1).abs(), (second - m2).abs() / m2.max(1.0)))
        });
        match detail {
            Ok((dm, d1, d2)) => checks.add(
                format!("{label}/phase_type/{}", j + 1),
                dm < 1e-6 && d1 < 1e-6 && d2 < 1e-6,
                format!("mass {dm:e}, first moment {d1:e}, second moment {d2:e}"),
            ),
            Err(e) => checks.add(format!("{label}/phase_type/{}", j + 1), false, e.to_string()),
        }
    }

    for &mu in mus {
        let (mut row_gap, mut formula_gap, mut kappa_ok) = (0.0f64, 0.0f64, true);
        let mut failure = None;
        for j in 0..n {
            let mut prev = -1.0;
            for k in 0..40 {
                let tau = 0.15 * k as f64;
                match (cycle_costs(g, j, mu, tau), cycle_costs_conditional(g, j, mu, tau)) {
                    (Ok(c), Ok(d)) => {
                        row_gap = row_gap.max((c.p_row.iter().sum::<f64>() - 1.0).abs());
                        for (x, y) in [(c.a, d.a), (c.c, d.c), (c.d, d.d)] {
                            formula_gap = formula_gap.max((x - y).abs() / x.abs().max(1.0));
                        }
                        kappa_ok &= c.kappa >= prev - 1e-12;
                        prev = c.kappa;
                    }
                    (Err(e), _) | (_, Err(e)) => failure = Some(e.to_string()),
                }
            }
        }
        let fail = |x: String| failure.clone().unwrap_or(x);
        checks.add(
            format!("{label}/mu={mu}/row_sums"),
            failure.is_none() && row_gap < 1e-9,
            fail(format!("max gap {row_gap:e}")),
        );
        checks.add(
            format!("{label}/mu={mu}/compact_vs_conditional"),
            failure.is_none() && formula_gap < 1e-9,
            fail(format!("max relative gap {formula_gap:e}")),
        );
        checks.add(format!("{label}/mu={mu}/kappa_monotone"), failure.is_none() && kappa_ok, fail(String::new()));

        let tau: Vec<f64> = (1..=n).map(|k| k as f64).collect();
        let policy = SamplingPolicy::Thresholds(tau.clone());
        let sim_cfg = SimConfig::new(g.clone(), mu, policy).with_seed(seed).with_cycles(cycles);
        let outcome = sync_chain(g, mu, &ThresholdPolicy::new(tau).expect("positive thresholds"))
            .and_then(|exact| Ok((exact, simulate(&sim_cfg)?)));
        match outcome {
            Ok((exact, sim)) => {
                let ok = (sim.maoii_hat - exact.maoii).abs() <= 3.0 * sim.stderr_maoii
                    && (sim.rate_hat - exact.rate).abs() <= 3.0 * sim.stderr_rate;
                checks.add(
                    format!("{label}/mu={mu}/simulation_vs_analytic"),
                    ok,
                    format!(
                        "maoii {:.6} vs {:.6} (se {:.2e}), rate {:.6} vs {:.6} (se {:.2e})",
                        sim.maoii_hat, exact.maoii, sim.stderr_maoii, sim.rate_hat, exact.rate, sim.stderr_rate
                    ),
                );
            }
            Err(e) => checks.add(format!("{label}/mu={mu}/simulation_vs_analytic"), false, e.to_string()),
        }
        match simulate_with_trace(&sim_cfg, 1_000) {
            Ok((_, trace)) => {
                let r = trace.check_invariants();
                checks.add(format!("{label}/mu={mu}/trace_invariants"), r.is_ok(), r.err().unwrap_or_default());
            }
            Err(e) => checks.add(format!("{label}/mu={mu}/trace_invariants"), false, e.to_string()),
        }
    }
}

fn sample_path_check(checks: &mut Checks) {
    let script = Script {
        x0: 0,
        x_hat0: 1,
        events: vec![
            ScriptEvent::Service { time: 2.0 },
            ScriptEvent::Jump { time: 4.0, to: 1 },
            ScriptEvent::Jump { time: 7.0, to: 0 },
            ScriptEvent::Jump { time: 8.0, to: 1 },
            ScriptEvent::Service { time: 9.0 },
        ],
    };
    let g = GeneratorMatrix::symmetric(2, 1.0).expect("valid source");
    match replay(&g, &script, &[0.5, 1.0]) {
        Ok(trace) => {
            let at7: Vec<EventKind> = trace.events.iter().filter(|e| e.time == 7.0).map(|e| e.kind).collect();
            let ok =
                at7.contains(&EventKind::SyncByDrift) && !at7.iter().any(|k| matches!(k, EventKind::TxDeliver { .. }));
            checks.add("sample_path_replay".into(), ok, format!("events at t=7: {at7:?}, area {}", trace.area()));
        }
        Err(e) => checks.add("sample_path_replay".into(), false, e.to_string()),
    }
}

/// Runs the property suites on the config generator, or on both reference
/// sources when none is given.
pub fn run_validate(cfg: &ExperimentConfig, seed: u64) -> ValidationReport {
    let sources: Vec<(String, Vec<Vec<f64>>)> = match &cfg.generator {
        Some(rows) => vec![("generator".into(), rows.clone())],
        None => vec![("q1".into(), q1_rows()), ("q2".into(), q2_rows())],
    };
    let mus = cfg.mus().unwrap_or_else(|_| vec![1.0, 5.0]);
    let cycles = cfg.cycles.unwrap_or(DEFAULT_CYCLES).max(1);
    let mut checks = Checks(Vec::new());
    for (label, rows) in sources {
        match GeneratorMatrix::from_rows(&rows) {
            Ok(g) => {
                checks.add(format!("{label}/generator"), true, String::new());
                validate_generator(&mut checks, &label, &g, &mus, seed, cycles);
            }
            Err(e) => checks.add(format!("{label}/generator"), false, format!("{e:?}")),
        }
    }
    sample_path_check(&mut checks);
    ValidationReport { passed: checks.0.iter().all(|c| c.passed), checks: checks.0 }
}

/// Policy-iteration timings on seeded random sources, one thread.
pub fn run_scaling(cfg: &ExperimentConfig, seed: u64) -> CliResult<String> {
    let sizes = nonempty(cfg.sizes.clone().unwrap_or_else(|| vec![16, 32, 64]), "sizes")?;
    let lambda = cfg.lambda.unwrap_or(1.0);
    let mu = cfg.mu().unwrap_or(1.0);
    cfg.solver.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = format!("{SCALING_HEADER}\n");
    for n in sizes {
        let g = GeneratorMatrix::random(n, seed.wrapping_add(n as u64))?;
        let secs = pool.install(|| -> CliResult<f64> {
            let start = Instant::now();
            let sol = policy_iteration(&g, mu, lambda, &cfg.solver)?;
            Ok(start.elapsed().as_secs_f64() / sol.policy_iterations as f64)
        })?;
        log::info!("N={n}: {secs:.3e} s per policy iteration");
        out.push_str(&format!("{n},{}\n", fmt9(secs)));
    }
    Ok(out)
}

#[derive(Parser, Debug)]
#[command(name = "aoii", version, about = "Threshold sampling for minimum average AoII under a rate budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; relative paths honor AOII_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the budget-constrained threshold problem.
    Solve(CommonArgs),
    /// Monte Carlo estimate of MAoII and sampling rate for one policy.
    Simulate(CommonArgs),
    /// Compare the solver with both baselines over a budget grid.
    SweepBudget(CommonArgs),
    /// Evaluate a binary source over a threshold grid.
    Contour(CommonArgs),
    /// Run the property suites.
    Validate(CommonArgs),
    /// Time policy iteration on random sources.
    Scaling(CommonArgs),
}

fn resolve_output(explicit: Option<&Path>, cfg: &ExperimentConfig, mode: Mode) -> PathBuf {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(mode.default_output()));
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path,
    }
}

/// `<stem><suffix>.<ext>` next to `path`.
fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable record");
    s.push('\n');
    s
}

fn dispatch(mode: Mode, args: &CommonArgs) -> CliResult<()> {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if mode == Mode::Validate => ExperimentConfig::default(),
        None => return Err(CliError::Config("--config is required".into())),
    };
    cfg.check_mode(mode)?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let out = resolve_output(args.out.as_deref(), &cfg, mode);
    match mode {
        Mode::Solve => write(&out, &pretty(&run_solve(&cfg)?)),
        Mode::Simulate => {
            let (record, trace) = run_simulate(&cfg, seed)?;
            write(&out, &pretty(&record))?;
            match trace {
                Some(t) => write(&sibling(&out, "_trace", "csv"), &t),
                None => Ok(()),
            }
        }
        Mode::SweepBudget => write(&out, &run_sweep_budget(&cfg, seed)?),
        Mode::Contour => {
            let (grid, optima) = run_contour(&cfg)?;
            write(&out, &grid)?;
            write(&sibling(&out, "_optima", "csv"), &optima)
        }
        Mode::Validate => {
            let report = run_validate(&cfg, seed);
            write(&out, &pretty(&report))?;
            if report.passed {
                Ok(())
            } else {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(CliError::Validation(failed.join(", ")))
            }
        }
        Mode::Scaling => write(&out, &run_scaling(&cfg, seed)?),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (mode, common) = match &cli.command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::SweepBudget(a) => (Mode::SweepBudget, a),
        Command::Contour(a) => (Mode::Contour, a),
        Command::Validate(a) => (Mode::Validate, a),
        Command::Scaling(a) => (Mode::Scaling, a),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = common.jobs {
        builder = builder.num_threads(jobs.max(1));
    }
    let outcome = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(mode, common)),
        Err(e) => Err(CliError::Config(e.to_string())),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("aoii: {e}");
            e.exit_code()
        }
    }
}
