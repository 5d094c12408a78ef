//! C ABI for the AoII threshold-sampling library.
//!
//! Sources are passed around as opaque `AoiiGenerator` handles. Every
//! fallible call returns an `AoiiStatus`; on failure a description is
//! available from `aoii_last_error_message` on the same thread. States are
//! indexed from 0 and matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use aoii::model::{poisson_sync_chain, sync_chain, ThresholdPolicy};
use aoii::sim::{simulate, SamplingPolicy, SimConfig, SimResult};
use aoii::solver::{lagrange_bisection, SolveStatus, SolverConfig};
use aoii::{Error, GeneratorMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AoiiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidGenerator = 2,
    InvalidArgument = 3,
    BufferTooSmall = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AoiiSolveStatus {
    Converged = 0,
    IterationCapHit = 1,
    BudgetSlackAtZeroLambda = 2,
}

/// Opaque handle to a validated CTMC generator.
pub struct AoiiGenerator {
    inner: GeneratorMatrix,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AoiiSyncResult {
    pub maoii: f64,
    pub rate: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiiSolution {
    pub lambda: f64,
    pub maoii: f64,
    pub rate: f64,
    pub eta: f64,
    pub policy_iterations: u32,
    pub bisection_steps: u32,
    pub status: AoiiSolveStatus,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AoiiSimResult {
    pub maoii_hat: f64,
    pub rate_hat: f64,
    pub stderr_maoii: f64,
    pub stderr_rate: f64,
    pub cycles_run: u64,
    pub transmissions: u64,
    pub preemptions: u64,
}

impl From<SimResult> for AoiiSimResult {
    fn from(r: SimResult) -> Self {
        Self {
            maoii_hat: r.maoii_hat,
            rate_hat: r.rate_hat,
            stderr_maoii: r.stderr_maoii,
            stderr_rate: r.stderr_rate,
            cycles_run: r.cycles_run,
            transmissions: r.transmissions,
            preemptions: r.preemptions,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AoiiStatus {
    match e {
        Error::BadShape { .. }
        | Error::NonFiniteEntry { .. }
        | Error::NegativeOffDiagonal { .. }
        | Error::NonzeroRowSum { .. }
        | Error::AbsorbingState { .. }
        | Error::Reducible => AoiiStatus::InvalidGenerator,
        e if e.is_input_error() => AoiiStatus::InvalidArgument,
        _ => AoiiStatus::Numerical,
    }
}

struct Failure(AoiiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AoiiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AoiiStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AoiiStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AoiiStatus::NullPointer, format!("{what} is null"))
}

unsafe fn generator<'a>(g: *const AoiiGenerator) -> Result<&'a GeneratorMatrix, Failure> {
    g.as_ref().map(|g| &g.inner).ok_or_else(|| null("generator"))
}

unsafe fn thresholds<'a>(tau: *const f64, len: usize, n: usize) -> Result<&'a [f64], Failure> {
    if tau.is_null() {
        return Err(null("tau"));
    }
    if len != n {
        return Err(Failure(AoiiStatus::InvalidArgument, format!("{len} thresholds for {n} states")));
    }
    Ok(slice::from_raw_parts(tau, len))
}

/// Builds a generator from `n * n` row-major rates. The handle must be
/// released with `aoii_generator_free`.
///
/// # Safety
/// `rates` must point to `n * n` readable doubles and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn aoii_generator_new(rates: *const f64, n: usize, out: *mut *mut AoiiGenerator) -> AoiiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if rates.is_null() {
            return Err(null("rates"));
        }
        let len = n.checked_mul(n).ok_or_else(|| Failure(AoiiStatus::InvalidArgument, "size overflow".into()))?;
        let data = slice::from_raw_parts(rates, len);
        let rows: Vec<Vec<f64>> = data.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        let inner = GeneratorMatrix::from_rows(&rows)?;
        *out = Box::into_raw(Box::new(AoiiGenerator { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `g` must be null or a handle from `aoii_generator_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aoii_generator_free(g: *mut AoiiGenerator) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aoii_generator_states(g: *const AoiiGenerator) -> usize {
    g.as_ref().map_or(0, |g| g.inner.n())
}

/// Long-run MAoII and sampling rate of a threshold vector.
///
/// # Safety
/// `g` must be a live handle, `tau` must hold `n` doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn aoii_sync_chain(
    g: *const AoiiGenerator,
    mu: f64,
    tau: *const f64,
    n: usize,
    out: *mut AoiiSyncResult,
) -> AoiiStatus {
    guard(|| {
        let g = generator(g)?;
        let tau = thresholds(tau, n, g.n())?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let chain = sync_chain(g, mu, &ThresholdPolicy::new(tau.to_vec())?)?;
        *out = AoiiSyncResult { maoii: chain.maoii, rate: chain.rate };
        Ok(())
    })
}

/// Long-run MAoII and sampling rate of the Poisson baseline.
///
/// # Safety
/// `g` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoii_poisson_sync_chain(
    g: *const AoiiGenerator,
    mu: f64,
    gamma: f64,
    out: *mut AoiiSyncResult,
) -> AoiiStatus {
    guard(|| {
        let g = generator(g)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let chain = poisson_sync_chain(g, mu, gamma)?;
        *out = AoiiSyncResult { maoii: chain.maoii, rate: chain.rate };
        Ok(())
    })
}

/// Solves the budget-constrained problem with default tolerances and
/// writes the thresholds to `tau_out`.
///
/// # Safety
/// `g` must be a live handle, `tau_out` must have room for `tau_len`
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aoii_solve(
    g: *const AoiiGenerator,
    mu: f64,
    budget: f64,
    tau_out: *mut f64,
    tau_len: usize,
    out: *mut AoiiSolution,
) -> AoiiStatus {
    guard(|| {
        let g = generator(g)?;
        if tau_out.is_null() {
            return Err(null("tau_out"));
        }
        if tau_len < g.n() {
            return Err(Failure(
                AoiiStatus::BufferTooSmall,
                format!("need {} thresholds, buffer holds {tau_len}", g.n()),
            ));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let sol = lagrange_bisection(g, mu, budget, &SolverConfig::default())?;
        slice::from_raw_parts_mut(tau_out, g.n()).copy_from_slice(sol.tau.as_slice());
        *out = AoiiSolution {
            lambda: sol.lambda,
            maoii: sol.maoii,
            rate: sol.rate,
            eta: sol.eta,
            policy_iterations: sol.policy_iterations as u32,
            bisection_steps: sol.bisection_steps as u32,
            status: match sol.status {
                SolveStatus::Converged => AoiiSolveStatus::Converged,
                SolveStatus::IterationCapHit => AoiiSolveStatus::IterationCapHit,
                SolveStatus::BudgetSlackAtZeroLambda => AoiiSolveStatus::BudgetSlackAtZeroLambda,
            },
        };
        Ok(())
    })
}

unsafe fn run_sim(
    g: *const AoiiGenerator,
    mu: f64,
    policy: impl FnOnce(usize) -> Result<SamplingPolicy, Failure>,
    cycles: u64,
    seed: u64,
    out: *mut AoiiSimResult,
) -> AoiiStatus {
    guard(|| {
        let g = generator(g)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cfg = SimConfig::new(g.clone(), mu, policy(g.n())?).with_cycles(cycles).with_seed(seed);
        *out = simulate(&cfg)?.into();
        Ok(())
    })
}

/// Simulates a threshold policy for `cycles` synchronization cycles.
///
/// # Safety
/// `g` must be a live handle, `tau` must hold `n` doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn aoii_simulate_thresholds(
    g: *const AoiiGenerator,
    mu: f64,
    tau: *const f64,
    n: usize,
    cycles: u64,
    seed: u64,
    out: *mut AoiiSimResult,
) -> AoiiStatus {
    run_sim(g, mu, |states| Ok(SamplingPolicy::Thresholds(thresholds(tau, n, states)?.to_vec())), cycles, seed, out)
}

/// Simulates the Poisson baseline at intensity `gamma`.
///
/// # Safety
/// `g` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoii_simulate_poisson(
    g: *const AoiiGenerator,
    mu: f64,
    gamma: f64,
    cycles: u64,
    seed: u64,
    out: *mut AoiiSimResult,
) -> AoiiStatus {
    run_sim(g, mu, |_| Ok(SamplingPolicy::Poisson(gamma)), cycles, seed, out)
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aoii_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aoii_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
