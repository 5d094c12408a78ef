//! Event-driven simulation of the source, the threshold-triggered sender and
//! the preemptive exponential channel.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::GeneratorMatrix;
use crate::model::poisson_sync_chain;

/// Default horizon in synchronization cycles.
pub const DEFAULT_CYCLES: u64 = 100_000;

/// Batches used for the standard errors.
pub const BATCHES: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    /// One threshold per monitor estimate.
    Thresholds(Vec<f64>),
    SingleThreshold(f64),
    /// Sampling instants at rate `gamma` while desynchronized.
    Poisson(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub generator: GeneratorMatrix,
    pub mu: f64,
    pub policy: SamplingPolicy,
    pub cycles: u64,
    pub seed: u64,
    /// Index mixed into the seed so parallel replications get independent
    /// streams.
    pub replication: u64,
    pub warmup_cycles: u64,
}

impl SimConfig {
    pub fn new(generator: GeneratorMatrix, mu: f64, policy: SamplingPolicy) -> Self {
        Self { generator, mu, policy, cycles: DEFAULT_CYCLES, seed: 0, replication: 0, warmup_cycles: 0 }
    }

    pub fn with_cycles(mut self, cycles: u64) -> Self {
        self.cycles = cycles;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replication(mut self, replication: u64) -> Self {
        self.replication = replication;
        self
    }

    fn validate(&self) -> Result<Trigger> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!("service rate must be positive, got {}", self.mu)));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidArgument("cycles must be at least 1".into()));
        }
        Trigger::from_policy(&self.policy, self.generator.n())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub maoii_hat: f64,
    pub rate_hat: f64,
    pub cycles_run: u64,
    pub transmissions: u64,
    pub preemptions: u64,
    pub stderr_maoii: f64,
    pub stderr_rate: f64,
    pub total_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    SourceJump { from: usize, to: usize },
    TxStart { state: usize },
    TxPreempt,
    TxDeliver { state: usize },
    SyncByDrift,
    SyncByDelivery,
}

impl EventKind {
    pub fn is_sync(&self) -> bool {
        matches!(self, EventKind::SyncByDrift | EventKind::SyncByDelivery)
    }
}

impl fmt::Display for EventKind {
    /// States are printed 1-based.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::SourceJump { from, to } => write!(f, "source_jump:{}>{}", from + 1, to + 1),
            EventKind::TxStart { state } => write!(f, "tx_start:{}", state + 1),
            EventKind::TxPreempt => write!(f, "tx_preempt"),
            EventKind::TxDeliver { state } => write!(f, "tx_deliver:{}", state + 1),
            EventKind::SyncByDrift => write!(f, "sync_by_drift"),
            EventKind::SyncByDelivery => write!(f, "sync_by_delivery"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
    pub aoii_after: f64,
    /// Source state after the event.
    pub x: usize,
    /// Monitor estimate after the event.
    pub x_hat: usize,
}

/// Ordered events of one sample path. Several events may share an instant,
/// e.g. a jump, the preemption it causes and the resulting sync.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }

    /// Exact integral of AoII up to the last event, counting the desync
    /// already under way at the first event.
    pub fn area(&self) -> f64 {
        let lead = self.events.first().map_or(0.0, |e| 0.5 * e.aoii_after * e.aoii_after);
        lead + self
            .events
            .windows(2)
            .map(|w| {
                let (e, next) = (&w[0], &w[1]);
                if e.x == e.x_hat {
                    0.0
                } else {
                    let dt = next.time - e.time;
                    e.aoii_after * dt + 0.5 * dt * dt
                }
            })
            .sum::<f64>()
    }

    /// Checks ordering, slope-1 growth of AoII, and that AoII vanishes
    /// exactly when source and monitor agree (or at the instant they part).
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut desync_since: Option<f64> = None;
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if e.time < prev {
                return Err(format!("event {i} at {} precedes {prev}", e.time));
            }
            prev = e.time;
            if e.kind.is_sync() && (e.aoii_after != 0.0 || e.x != e.x_hat) {
                return Err(format!("event {i}: sync with AoII {} and states {}/{}", e.aoii_after, e.x, e.x_hat));
            }
            if e.x == e.x_hat {
                if e.aoii_after != 0.0 {
                    return Err(format!("event {i}: AoII {} while in sync", e.aoii_after));
                }
                desync_since = None;
                continue;
            }
            let start = *desync_since.get_or_insert(e.time - e.aoii_after);
            let expected = e.time - start;
            if (e.aoii_after - expected).abs() > 1e-9 * e.time.abs().max(1.0) {
                return Err(format!("event {i}: AoII {} but desync began at {start}", e.aoii_after));
            }
            if e.aoii_after == 0.0 && e.time != start {
                return Err(format!("event {i}: zero AoII while desynchronized"));
            }
        }
        Ok(())
    }

    /// Line-delimited `time,kind,aoii_after` records with a header.
    pub fn to_records(&self) -> String {
        let mut out = String::from("time,kind,aoii_after\n");
        for e in &self.events {
            out.push_str(&format!("{:.9e},{},{:.9e}\n", e.time, e.kind, e.aoii_after));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScriptEvent {
    Jump {
        time: f64,
        to: usize,
    },
    /// A service completion; ignored when nothing is in flight.
    Service {
        time: f64,
    },
}

impl ScriptEvent {
    pub fn time(&self) -> f64 {
        match *self {
            ScriptEvent::Jump { time, .. } | ScriptEvent::Service { time } => time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    /// Source state at time 0.
    pub x0: usize,
    /// Monitor estimate at time 0. A mismatch starts a desync at time 0.
    pub x_hat0: usize,
    pub events: Vec<ScriptEvent>,
}

#[derive(Debug, Clone)]
enum Trigger {
    Thresholds(Vec<f64>),
    Poisson(f64),
}

impl Trigger {
    fn from_policy(policy: &SamplingPolicy, n: usize) -> Result<Self> {
        match policy {
            SamplingPolicy::Thresholds(tau) => {
                if tau.len() != n {
                    return Err(Error::InvalidArgument(format!("{} thresholds for {n} states", tau.len())));
                }
                if let Some((state, &value)) = tau.iter().enumerate().find(|(_, t)| !(**t >= 0.0)) {
                    return Err(Error::InvalidThreshold { state, value });
                }
                Ok(Trigger::Thresholds(tau.clone()))
            }
            SamplingPolicy::SingleThreshold(t) => Trigger::from_policy(&SamplingPolicy::Thresholds(vec![*t; n]), n),
            SamplingPolicy::Poisson(gamma) => {
                if !(*gamma >= 0.0) || !gamma.is_finite() {
                    return Err(Error::InvalidArgument(format!("sampling intensity must be nonnegative, got {gamma}")));
                }
                Ok(Trigger::Poisson(*gamma))
            }
        }
    }
}

/// Sender, channel and monitor state shared by simulation and replay.
struct Machine {
    trigger: Trigger,
    x: usize,
    x_hat: usize,
    desync_since: Option<f64>,
    triggered: bool,
    in_flight: Option<usize>,
    transmissions: u64,
    preemptions: u64,
    /// AoII area of completed desync periods.
    area: f64,
    trace: Option<Vec<TraceEvent>>,
}

impl Machine {
    fn new(trigger: Trigger, x: usize, x_hat: usize, record: bool) -> Self {
        Self {
            trigger,
            x,
            x_hat,
            desync_since: (x != x_hat).then_some(0.0),
            triggered: false,
            in_flight: None,
            transmissions: 0,
            preemptions: 0,
            area: 0.0,
            trace: record.then(Vec::new),
        }
    }

    fn aoii(&self, t: f64) -> f64 {
        self.desync_since.map_or(0.0, |s| t - s)
    }

    fn emit(&mut self, t: f64, kind: EventKind) {
        let aoii_after = self.aoii(t);
        let (x, x_hat) = (self.x, self.x_hat);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent { time: t, kind, aoii_after, x, x_hat });
        }
    }

    /// Time at which the threshold trigger fires, if one is pending.
    fn threshold_at(&self) -> Option<f64> {
        match (&self.trigger, self.desync_since) {
            (Trigger::Thresholds(tau), Some(s)) if !self.triggered => Some(s + tau[self.x_hat]),
            _ => None,
        }
    }

    fn start_tx(&mut self, t: f64) {
        self.in_flight = Some(self.x);
        self.transmissions += 1;
        self.emit(t, EventKind::TxStart { state: self.x });
    }

    fn fire(&mut self, t: f64) {
        self.triggered = true;
        self.start_tx(t);
    }

    fn close_desync(&mut self, t: f64) {
        let elapsed = self.aoii(t);
        self.area += 0.5 * elapsed * elapsed;
        self.desync_since = None;
        self.triggered = false;
    }

    /// Applies a source jump; returns true when it resynchronizes.
    fn jump(&mut self, t: f64, to: usize) -> bool {
        let from = self.x;
        self.x = to;
        if self.desync_since.is_none() {
            self.desync_since = Some(t);
            self.triggered = false;
            self.emit(t, EventKind::SourceJump { from, to });
            if self.threshold_at().is_some_and(|at| at <= t) {
                self.fire(t);
            }
            return false;
        }
        let resync = to == self.x_hat;
        if resync {
            self.close_desync(t);
        }
        self.emit(t, EventKind::SourceJump { from, to });
        if self.in_flight.take().is_some() {
            self.preemptions += 1;
            self.emit(t, EventKind::TxPreempt);
        }
        if resync {
            self.emit(t, EventKind::SyncByDrift);
        } else if self.triggered {
            self.start_tx(t);
        }
        resync
    }

    /// Completes the in-flight transmission, if any; returns true on sync.
    fn deliver(&mut self, t: f64) -> bool {
        let Some(state) = self.in_flight.take() else {
            return false;
        };
        self.emit(t, EventKind::TxDeliver { state });
        self.x_hat = state;
        self.close_desync(t);
        self.emit(t, EventKind::SyncByDelivery);
        true
    }
}

/// Runs a scripted sample path. Threshold triggers are generated
/// internally; jumps and service completions come from the script.
pub fn replay(g: &GeneratorMatrix, script: &Script, thresholds: &[f64]) -> Result<EventTrace> {
    let n = g.n();
    for &s in [script.x0, script.x_hat0].iter() {
        if s >= n {
            return Err(Error::IndexOutOfRange { index: s, len: n });
        }
    }
    let trigger = Trigger::from_policy(&SamplingPolicy::Thresholds(thresholds.to_vec()), n)?;
    let mut prev = f64::NEG_INFINITY;
    for (index, e) in script.events.iter().enumerate() {
        let time = e.time();
        if !(time > prev) || !time.is_finite() || time < 0.0 {
            return Err(Error::NonMonotoneScript { index, time });
        }
        prev = time;
        if let ScriptEvent::Jump { to, .. } = *e {
            if to >= n {
                return Err(Error::IndexOutOfRange { index: to, len: n });
            }
            if to == script_state_before(script, index) {
                return Err(Error::InvalidArgument(format!("script event {index} jumps to the current state")));
            }
        }
    }
    let mut m = Machine::new(trigger, script.x0, script.x_hat0, true);
    if script.events.is_empty() {
        return Ok(EventTrace::default());
    }
    if m.threshold_at().is_some_and(|at| at <= 0.0) {
        m.fire(0.0);
    }
    for e in &script.events {
        let time = e.time();
        if let Some(at) = m.threshold_at().filter(|&at| at <= time) {
            m.fire(at);
        }
        match *e {
            ScriptEvent::Jump { to, .. } => {
                m.jump(time, to);
            }
            ScriptEvent::Service { .. } => {
                m.deliver(time);
            }
        }
    }
    Ok(EventTrace { events: m.trace.take().unwrap_or_default() })
}

fn script_state_before(script: &Script, index: usize) -> usize {
    script.events[..index]
        .iter()
        .rev()
        .find_map(|e| match *e {
            ScriptEvent::Jump { to, .. } => Some(to),
            ScriptEvent::Service { .. } => None,
        })
        .unwrap_or(script.x0)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for replication `replication` of master seed `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(splitmix64(seed ^ splitmix64(replication)))
}

fn exponential(rng: &mut impl Rng, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.random();
    -(-u).ln_1p() / rate
}

struct JumpSampler {
    rates: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl JumpSampler {
    fn new(g: &GeneratorMatrix) -> Self {
        let (rates, jump) = g.holding_and_jump();
        let n = g.n();
        let cumulative = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                (0..n)
                    .map(|k| {
                        acc += jump[(i, k)];
                        acc
                    })
                    .collect()
            })
            .collect();
        Self { rates: rates.iter().copied().collect(), cumulative }
    }

    fn next(&self, rng: &mut impl Rng, from: usize) -> usize {
        let row = &self.cumulative[from];
        let u = rng.random::<f64>() * row[row.len() - 1];
        row.iter().position(|&c| u < c).unwrap_or_else(|| row.iter().rposition(|&c| c > 0.0).unwrap_or(0))
    }
}

#[derive(Default, Clone, Copy)]
struct Totals {
    time: f64,
    area: f64,
    transmissions: u64,
}

fn simulate_inner(cfg: &SimConfig, record: bool) -> Result<(SimResult, EventTrace)> {
    let trigger = cfg.validate()?;
    let sampler = JumpSampler::new(&cfg.generator);
    let mut rng = replication_rng(cfg.seed, cfg.replication);
    let gamma = match trigger {
        Trigger::Poisson(gamma) => gamma,
        Trigger::Thresholds(_) => 0.0,
    };
    let mut m = Machine::new(trigger, 0, 0, record);
    let total_cycles = cfg.warmup_cycles + cfg.cycles;
    let batches = BATCHES.min(cfg.cycles);
    let per_batch = cfg.cycles / batches;
    let mut batch_totals = vec![Totals::default(); batches as usize];
    let mut totals = Totals::default();
    let (mut t, mut cycle_start, mut area_mark, mut tx_mark) = (0.0, 0.0, 0.0, 0u64);
    let (mut tx_base, mut preempt_base) = (0, 0);
    let mut cycle = 0u64;

    while cycle < total_cycles {
        let synced = if m.desync_since.is_none() {
            t += exponential(&mut rng, sampler.rates[m.x]);
            let to = sampler.next(&mut rng, m.x);
            m.jump(t, to)
        } else if !m.triggered {
            let jump_at = t + exponential(&mut rng, sampler.rates[m.x]);
            let fire_at = match m.threshold_at() {
                Some(at) => at,
                None => t + exponential(&mut rng, gamma),
            };
            if fire_at < jump_at {
                t = fire_at;
                m.fire(t);
                false
            } else {
                t = jump_at;
                let to = sampler.next(&mut rng, m.x);
                m.jump(t, to)
            }
        } else {
            let sigma = sampler.rates[m.x];
            t += exponential(&mut rng, sigma + cfg.mu);
            if rng.random::<f64>() * (sigma + cfg.mu) < cfg.mu {
                m.deliver(t)
            } else {
                let to = sampler.next(&mut rng, m.x);
                m.jump(t, to)
            }
        };
        if !synced {
            continue;
        }
        cycle += 1;
        if cycle <= cfg.warmup_cycles {
            if cycle == cfg.warmup_cycles {
                tx_base = m.transmissions;
                preempt_base = m.preemptions;
            }
        } else {
            let c =
                Totals { time: t - cycle_start, area: m.area - area_mark, transmissions: m.transmissions - tx_mark };
            let b = (((cycle - cfg.warmup_cycles - 1) / per_batch) as usize).min(batch_totals.len() - 1);
            for acc in [&mut batch_totals[b], &mut totals] {
                acc.time += c.time;
                acc.area += c.area;
                acc.transmissions += c.transmissions;
            }
        }
        cycle_start = t;
        area_mark = m.area;
        tx_mark = m.transmissions;
    }
    let trace = m.trace.take().unwrap_or_default();
    finish(totals, &batch_totals, cycle, &m, tx_base, preempt_base, trace, cfg)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    totals: Totals,
    batch_totals: &[Totals],
    cycle: u64,
    m: &Machine,
    tx_base: u64,
    preempt_base: u64,
    trace: Vec<TraceEvent>,
    cfg: &SimConfig,
) -> Result<(SimResult, EventTrace)> {
    let filled: Vec<&Totals> = batch_totals.iter().filter(|b| b.time > 0.0).collect();
    let stderr = |f: &dyn Fn(&Totals) -> f64| {
        let k = filled.len() as f64;
        if k < 2.0 {
            return f64::NAN;
        }
        let vals: Vec<f64> = filled.iter().map(|b| f(b)).collect();
        let mean = vals.iter().sum::<f64>() / k;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    };
    let result = SimResult {
        maoii_hat: totals.area / totals.time,
        rate_hat: totals.transmissions as f64 / totals.time,
        cycles_run: cycle.saturating_sub(cfg.warmup_cycles),
        transmissions: m.transmissions - tx_base,
        preemptions: m.preemptions - preempt_base,
        stderr_maoii: stderr(&|b| b.area / b.time),
        stderr_rate: stderr(&|b| b.transmissions as f64 / b.time),
        total_time: totals.time,
    };
    if !result.maoii_hat.is_finite() || !result.rate_hat.is_finite() {
        return Err(Error::NonFinite("simulation estimates"));
    }
    Ok((result, EventTrace { events: trace }))
}

/// Estimates MAoII and the sampling rate over `cfg.cycles` regenerative
/// cycles started in sync at state 0.
pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    simulate_inner(cfg, false).map(|(r, _)| r)
}

/// Like [`simulate`] but stops after `cycles` cycles and returns the full
/// event trace.
pub fn simulate_with_trace(cfg: &SimConfig, cycles: u64) -> Result<(SimResult, EventTrace)> {
    let cfg = SimConfig { cycles: cycles.max(1), warmup_cycles: 0, ..cfg.clone() };
    simulate_inner(&cfg, true)
}

/// Analytic sampling rate of the Poisson policy.
pub fn poisson_rate(g: &GeneratorMatrix, mu: f64, gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    Ok(poisson_sync_chain(g, mu, gamma)?.rate)
}

/// Upper limit for the Poisson intensity, relative to the fastest rate in
/// the system.
pub const GAMMA_CAP_SCALE: f64 = 1e6;

/// Poisson intensity whose analytic sampling rate is within `eps` of `b`.
/// Returns the intensity cap when even near-continuous sampling stays under
/// the budget.
pub fn calibrate_poisson(g: &GeneratorMatrix, mu: f64, b: f64, eps: f64) -> Result<f64> {
    if !(b > 0.0) || !b.is_finite() || !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("bad budget {b} or tolerance {eps}")));
    }
    let cap = GAMMA_CAP_SCALE * g.max_holding_rate().max(mu);
    let (mut lo, mut hi) = (0.0, 1.0);
    loop {
        let r = poisson_rate(g, mu, hi)?;
        if (r - b).abs() <= eps {
            return Ok(hi);
        }
        if r > b {
            break;
        }
        if hi >= cap {
            log::info!("budget {b} exceeds the Poisson rate at the intensity cap");
            return Ok(cap);
        }
        lo = hi;
        hi = (hi * 2.0).min(cap);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = poisson_rate(g, mu, mid)?;
        if (r - b).abs() <= eps {
            return Ok(mid);
        }
        if r > b {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::CalibrationFailed { budget: b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cycle_costs, sync_chain, tau_cap, ThresholdPolicy};

    fn q1() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(&[vec![-0.6, 0.6], vec![0.75, -0.75]]).unwrap()
    }

    fn q2() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(&[vec![-1.025, 1.0, 0.025], vec![0.05, -0.75, 0.7], vec![0.4, 0.01, -0.41]]).unwrap()
    }

    fn fig2_script() -> Script {
        Script {
            x0: 0,
            x_hat0: 1,
            events: vec![
                ScriptEvent::Service { time: 2.0 },
                ScriptEvent::Jump { time: 4.0, to: 1 },
                ScriptEvent::Jump { time: 7.0, to: 0 },
                ScriptEvent::Jump { time: 8.0, to: 1 },
                ScriptEvent::Service { time: 9.0 },
            ],
        }
    }

    fn times_of(trace: &EventTrace, pred: impl Fn(&EventKind) -> bool) -> Vec<f64> {
        trace.events.iter().filter(|e| pred(&e.kind)).map(|e| e.time).collect()
    }

    #[test]
    fn fig2_replay() {
        let trace = replay(&q1(), &fig2_script(), &[0.5, 1.0]).unwrap();
        trace.check_invariants().unwrap();
        assert_eq!(times_of(&trace, |k| *k == EventKind::SyncByDrift), vec![7.0]);
        assert_eq!(times_of(&trace, |k| *k == EventKind::SyncByDelivery), vec![2.0, 9.0]);
        assert_eq!(times_of(&trace, |k| matches!(k, EventKind::TxDeliver { .. })), vec![2.0, 9.0]);
        assert_eq!(times_of(&trace, |k| matches!(k, EventKind::TxStart { .. })), vec![1.0, 4.5, 8.5]);
        assert_eq!(times_of(&trace, |k| *k == EventKind::TxPreempt), vec![7.0]);
        assert!((trace.area() - 7.0).abs() < 1e-12);
        let drift = trace.events.iter().find(|e| e.kind == EventKind::SyncByDrift).unwrap();
        assert_eq!(drift.aoii_after, 0.0);
    }

    #[test]
    fn preemption_restarts_with_new_value() {
        let g = GeneratorMatrix::symmetric(3, 1.0).unwrap();
        let script = Script {
            x0: 0,
            x_hat0: 0,
            events: vec![
                ScriptEvent::Jump { time: 1.0, to: 1 },
                ScriptEvent::Jump { time: 2.5, to: 2 },
                ScriptEvent::Service { time: 3.0 },
            ],
        };
        let trace = replay(&g, &script, &[1.0, 1.0, 1.0]).unwrap();
        trace.check_invariants().unwrap();
        let kinds: Vec<EventKind> = trace.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::SourceJump { from: 0, to: 1 },
                EventKind::TxStart { state: 1 },
                EventKind::SourceJump { from: 1, to: 2 },
                EventKind::TxPreempt,
                EventKind::TxStart { state: 2 },
                EventKind::TxDeliver { state: 2 },
                EventKind::SyncByDelivery,
            ]
        );
        let last = trace.events.last().unwrap();
        assert_eq!((last.x, last.x_hat), (2, 2));
        assert!((trace.area() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_script() {
        let trace = replay(&q1(), &Script { x0: 0, x_hat0: 0, events: vec![] }, &[0.0, 0.0]).unwrap();
        assert!(trace.is_empty());
        assert_eq!(trace.area(), 0.0);
        assert_eq!(trace.to_records(), "time,kind,aoii_after\n");
    }

    #[test]
    fn script_must_move_forward() {
        let script = Script {
            x0: 0,
            x_hat0: 0,
            events: vec![ScriptEvent::Jump { time: 1.0, to: 1 }, ScriptEvent::Service { time: 1.0 }],
        };
        assert!(matches!(replay(&q1(), &script, &[0.0, 0.0]), Err(Error::NonMonotoneScript { index: 1, .. })));
        let stay = Script { x0: 0, x_hat0: 0, events: vec![ScriptEvent::Jump { time: 1.0, to: 0 }] };
        assert!(replay(&q1(), &stay, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn records_are_one_based() {
        let trace = replay(&q1(), &fig2_script(), &[0.5, 1.0]).unwrap();
        let text = trace.to_records();
        assert!(text.lines().nth(1).unwrap().contains("tx_start:1"));
        assert!(text.contains("source_jump:1>2"));
        assert_eq!(text.lines().count(), trace.len() + 1);
    }

    #[test]
    fn seed_determinism() {
        let cfg =
            SimConfig::new(q2(), 1.0, SamplingPolicy::Thresholds(vec![0.3, 0.6, 1.0])).with_cycles(2_000).with_seed(7);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = simulate(&cfg.clone().with_replication(1)).unwrap();
        assert_ne!(simulate(&cfg).unwrap(), other);
    }

    #[test]
    fn zero_thresholds_match_analysis() {
        let g = q1();
        let cfg = SimConfig::new(g.clone(), 1.0, SamplingPolicy::Thresholds(vec![0.0, 0.0])).with_seed(11);
        let sim = simulate(&cfg).unwrap();
        let exact = sync_chain(&g, 1.0, &ThresholdPolicy::zeros(2)).unwrap();
        assert!((sim.maoii_hat - exact.maoii).abs() <= 3.0 * sim.stderr_maoii, "{sim:?} vs {exact:?}");
        assert!((sim.rate_hat - exact.rate).abs() <= 3.0 * sim.stderr_rate, "{sim:?} vs {exact:?}");
    }

    #[test]
    fn poisson_without_sampling_drifts() {
        let g = q2();
        let cfg = SimConfig::new(g.clone(), 1.0, SamplingPolicy::Poisson(0.0)).with_seed(3).with_cycles(20_000);
        let sim = simulate(&cfg).unwrap();
        assert_eq!(sim.rate_hat, 0.0);
        assert_eq!(sim.transmissions, 0);
        let drift = cycle_costs(&g, 0, 1.0, tau_cap(&g)).unwrap();
        let expected = drift.a / drift.d;
        assert!((sim.maoii_hat - expected).abs() <= 3.0 * sim.stderr_maoii, "{} vs {expected}", sim.maoii_hat);
    }

    #[test]
    fn poisson_matches_analysis() {
        let g = q2();
        let gamma = 0.8;
        let exact = poisson_sync_chain(&g, 1.0, gamma).unwrap();
        let sim = simulate(&SimConfig::new(g, 1.0, SamplingPolicy::Poisson(gamma)).with_seed(5)).unwrap();
        assert!((sim.maoii_hat - exact.maoii).abs() <= 3.0 * sim.stderr_maoii, "{sim:?} vs {exact:?}");
        assert!((sim.rate_hat - exact.rate).abs() <= 3.0 * sim.stderr_rate, "{sim:?} vs {exact:?}");
    }

    #[test]
    fn simulated_traces_keep_invariants() {
        for (g, policy) in [
            (q1(), SamplingPolicy::Thresholds(vec![0.0, 0.4])),
            (q2(), SamplingPolicy::Thresholds(vec![0.2, 0.0, 1.5])),
            (q2(), SamplingPolicy::Poisson(2.0)),
        ] {
            let cfg = SimConfig::new(g, 1.0, policy).with_seed(9);
            let (res, trace) = simulate_with_trace(&cfg, 500).unwrap();
            assert_eq!(res.cycles_run, 500);
            trace.check_invariants().unwrap();
            let syncs = trace.events.iter().filter(|e| e.kind.is_sync()).count();
            assert_eq!(syncs, 500);
            assert!((trace.area() - res.maoii_hat * res.total_time).abs() < 1e-6 * trace.area().max(1.0));
            let delivered = trace.events.iter().filter(|e| matches!(e.kind, EventKind::TxDeliver { .. }));
            for e in delivered {
                assert_eq!(e.kind, EventKind::TxDeliver { state: e.x });
            }
        }
    }

    #[test]
    fn calibration_examples() {
        let g = q2();
        let gamma = calibrate_poisson(&g, 1.0, 0.5, 1e-2).unwrap();
        assert!((poisson_rate(&g, 1.0, gamma).unwrap() - 0.5).abs() <= 1e-2);
        let tiny = calibrate_poisson(&g, 1.0, 1e-4, 1e-5).unwrap();
        assert!(tiny < 1e-2);
        let slack = calibrate_poisson(&g, 1.0, 100.0, 1e-2).unwrap();
        assert_eq!(slack, GAMMA_CAP_SCALE * g.max_holding_rate());
    }

    #[test]
    fn rejects_bad_configs() {
        let g = q1();
        assert!(simulate(&SimConfig::new(g.clone(), 0.0, SamplingPolicy::Poisson(1.0))).is_err());
        assert!(simulate(&SimConfig::new(g.clone(), 1.0, SamplingPolicy::Poisson(-1.0))).is_err());
        assert!(simulate(&SimConfig::new(g.clone(), 1.0, SamplingPolicy::Thresholds(vec![1.0]))).is_err());
        assert!(simulate(&SimConfig::new(g, 1.0, SamplingPolicy::SingleThreshold(1.0)).with_cycles(0)).is_err());
    }
}
