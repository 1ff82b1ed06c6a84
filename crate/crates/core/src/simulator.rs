//! Discrete-event simulation of the source, the estimate and the AoII
//! process under a transmission policy.
//!
//! The run starts at an SP with source and estimate in state 0 and records
//! one regenerative cycle per SP. Within a cycle the AoII is zero while in
//! sync and grows with slope one while out of sync, so a cycle with
//! out-of-sync time `T` contributes area `T²/2`; the simulator also sums the
//! trapezoid of every inter-event piece and checks the two agree.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::ctmc::{ChannelSpec, GeneratorMatrix};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::optimizer::Policy;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub cycles: u64,
    pub seed: u64,
    pub policy: Policy,
    pub source: GeneratorMatrix,
    pub channel: ChannelSpec,
    /// Keep one record per cycle.
    pub trace: bool,
    /// Keep every event (meant for short audit runs).
    pub event_log: bool,
}

impl SimConfig {
    pub fn new(source: GeneratorMatrix, channel: ChannelSpec, policy: Policy, cycles: u64, seed: u64) -> Self {
        SimConfig { cycles, seed, policy, source, channel, trace: false, event_log: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub maoii_hat: f64,
    pub rate_hat: f64,
    pub stderr_maoii: f64,
    pub stderr_rate: f64,
    pub cycle_count: u64,
}

/// Per-cycle record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub index: u64,
    /// SP value at the start of the cycle.
    pub from: usize,
    /// SP value at the end of the cycle.
    pub to: usize,
    pub duration: f64,
    pub out_of_sync: f64,
    pub area: f64,
    pub attempts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// The source changed state.
    Jump,
    /// A transmission started (threshold passed, entry into a state whose
    /// threshold already passed, or a Poisson sample).
    Transmit,
    /// The in-flight transmission was discarded by a source change.
    Preempt,
    /// A transmission was delivered; the estimate takes the source value.
    Delivery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub source: usize,
    pub estimate: usize,
    pub aoii: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub result: SimResult,
    pub trace: Vec<CycleRecord>,
    pub events: Vec<Event>,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    Ok(run(&SimConfig { trace: false, event_log: false, ..cfg.clone() })?.result)
}

/// Like [`simulate`], also returning the trace and event log when enabled.
pub fn run(cfg: &SimConfig) -> Result<SimOutput> {
    if cfg.cycles == 0 {
        return Err(Error::invalid("simulation needs at least one cycle"));
    }
    let g = &cfg.source;
    let n = g.n();
    cfg.policy.validate(n)?;
    let rules = Rules::new(&cfg.policy, n);
    let jumps = g.jump_probs();
    let mu = cfg.channel.mu;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);

    let cap = usize::try_from(cfg.cycles).unwrap_or(usize::MAX).min(1 << 24);
    let mut per_cycle = Vec::with_capacity(cap);
    let mut trace = Vec::new();
    let mut events = Vec::new();
    let mut clock = 0.0;
    let mut sp = 0usize;

    for index in 0..cfg.cycles {
        let j = sp;
        let hold = exp(&mut rng, g.sigma(j));
        clock += hold;
        let mut src = pick(&mut rng, &jumps, j);
        let mut u = 0.0;
        let mut trapezoids = 0.0;
        let mut attempts = 0u64;
        let mut sending = false;
        let log = |kind, src, u: f64, events: &mut Vec<Event>, clock: f64| {
            if cfg.event_log {
                events.push(Event { time: clock, kind, source: src, estimate: j, aoii: u });
            }
        };
        log(EventKind::Jump, src, 0.0, &mut events, clock);
        let end = loop {
            if !sending && rules.due(j, src, u) {
                sending = true;
                attempts += 1;
                log(EventKind::Transmit, src, u, &mut events, clock);
            }
            let t_jump = exp(&mut rng, g.sigma(src));
            let t_done = if sending { exp(&mut rng, mu) } else { f64::INFINITY };
            let t_cross = if sending { f64::INFINITY } else { rules.crossing(j, src, u) };
            let t_sample = match rules.sampling() {
                Some(rate) if rate > 0.0 => exp(&mut rng, rate),
                _ => f64::INFINITY,
            };
            let dt = t_jump.min(t_done).min(t_cross).min(t_sample);
            trapezoids += dt * (u + 0.5 * dt);
            u += dt;
            clock += dt;
            if dt == t_jump {
                let next = pick(&mut rng, &jumps, src);
                if sending {
                    sending = false;
                    log(EventKind::Preempt, src, u, &mut events, clock);
                }
                src = next;
                log(EventKind::Jump, src, u, &mut events, clock);
                if src == j {
                    break j;
                }
            } else if dt == t_done {
                log(EventKind::Delivery, src, u, &mut events, clock);
                break src;
            } else if dt == t_cross {
                // the transmission starts at the top of the loop
                u = u.max(rules.threshold(j, src));
            } else {
                attempts += 1;
                sending = true;
                log(EventKind::Transmit, src, u, &mut events, clock);
            }
        };
        let area = 0.5 * u * u;
        debug_assert!(
            (trapezoids - area).abs() <= 1e-9 * (1.0 + area),
            "area audit failed: {trapezoids} vs {area}"
        );
        let duration = hold + u;
        per_cycle.push((duration, area, attempts as f64));
        if cfg.trace {
            trace.push(CycleRecord { index, from: j, to: end, duration, out_of_sync: u, area, attempts });
        }
        sp = end;
    }

    let (maoii_hat, stderr_maoii) = ratio(&per_cycle, |c| c.1);
    let (rate_hat, stderr_rate) = ratio(&per_cycle, |c| c.2);
    Ok(SimOutput {
        result: SimResult { maoii_hat, rate_hat, stderr_maoii, stderr_rate, cycle_count: cfg.cycles },
        trace,
        events,
    })
}

/// Regenerative ratio estimate `ΣX_k / ΣD_k` with the delta-method standard
/// error `sqrt(Σ(X_k - r D_k)² / ((n-1) n)) / D̄`.
fn ratio(cycles: &[(f64, f64, f64)], x: impl Fn(&(f64, f64, f64)) -> f64) -> (f64, f64) {
    let n = cycles.len() as f64;
    let sd: f64 = cycles.iter().map(|c| c.0).sum();
    let sx: f64 = cycles.iter().map(&x).sum();
    let r = sx / sd;
    if cycles.len() < 2 {
        return (r, 0.0);
    }
    let ss: f64 = cycles.iter().map(|c| (x(c) - r * c.0).powi(2)).sum();
    (r, (ss / ((n - 1.0) * n)).sqrt() / (sd / n))
}

fn exp(rng: &mut Xoshiro256PlusPlus, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

fn pick(rng: &mut Xoshiro256PlusPlus, jumps: &DenseMatrix, from: usize) -> usize {
    let u: f64 = rng.gen();
    let row = jumps.row(from);
    let mut acc = 0.0;
    let mut last = from;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// When a policy transmits.
enum Rules {
    Thresholds(Vec<Vec<f64>>),
    Poisson(f64),
}

impl Rules {
    fn new(pol: &Policy, n: usize) -> Self {
        match pol {
            Policy::Esat(t) => Rules::Thresholds(t.clone()),
            Policy::Eat(t) => Rules::Thresholds(t.iter().map(|&x| vec![x; n]).collect()),
            Policy::St(t) => Rules::Thresholds(vec![vec![*t; n]; n]),
            Policy::Ps(g) => Rules::Poisson(*g),
        }
    }

    fn threshold(&self, j: usize, i: usize) -> f64 {
        match self {
            Rules::Thresholds(t) => t[j][i],
            Rules::Poisson(_) => f64::INFINITY,
        }
    }

    fn due(&self, j: usize, i: usize, u: f64) -> bool {
        u >= self.threshold(j, i)
    }

    fn crossing(&self, j: usize, i: usize, u: f64) -> f64 {
        let t = self.threshold(j, i);
        if t.is_finite() {
            (t - u).max(0.0)
        } else {
            f64::INFINITY
        }
    }

    fn sampling(&self) -> Option<f64> {
        match self {
            Rules::Poisson(g) => Some(*g),
            Rules::Thresholds(_) => None,
        }
    }
}

/// Replays an event log and checks that no delivery follows a source change
/// without a fresh transmission in between, and that every transmission is
/// either delivered or preempted before the next one starts.
pub fn audit_events(events: &[Event]) -> std::result::Result<(), String> {
    let mut in_flight = false;
    for (k, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::Jump => {
                if in_flight {
                    return Err(format!("event {k}: source changed with a transmission still in flight"));
                }
            }
            EventKind::Transmit => {
                in_flight = true;
            }
            EventKind::Preempt => {
                if !in_flight {
                    return Err(format!("event {k}: preemption without a transmission"));
                }
                in_flight = false;
            }
            EventKind::Delivery => {
                if !in_flight {
                    return Err(format!("event {k}: delivery of a stale or missing transmission"));
                }
                in_flight = false;
            }
        }
    }
    Ok(())
}
