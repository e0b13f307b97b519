//! Simulated wall-clock time.
//!
//! One gradient evaluation costs one time unit and sending one model-sized
//! message to the neighbours costs `c` units. A *round* is `tau` local
//! iterations followed by whatever communication the algorithm needs. All
//! arithmetic is exact over `i64` rationals.
//!
//! | algorithm | round makespan       |
//! |-----------|----------------------|
//! | `oldsgd`  | `max(tau, c)`        |
//! | `ldsgd`   | `tau + c`            |
//! | `kgt`     | `max(tau, c) + c`    |
//! | `led`     | `tau + c`            |
//! | `lugt`    | `tau + 2c`           |
//! | `lsgd`    | `tau + 2(n-1)c/n`    |
//! | `dsgd`    | `tau (1 + c)`        |
//! | `olgt`    | `max(tau, 2c)`       |
//! | `oled`    | `max(tau, c)`        |
//!
//! [`build_timeline`] produces the explicit per-agent schedule these values
//! are the makespans of.

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::algorithms::Algorithm;
use crate::error::{Error, Result};

/// Algorithms that have a runtime model. A superset of the simulated ones:
/// `kgt` is timed but not simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimedAlgorithm {
    Oldsgd,
    Ldsgd,
    Kgt,
    Led,
    Lugt,
    Lsgd,
    Dsgd,
    Olgt,
    Oled,
}

impl TimedAlgorithm {
    /// The six algorithms of the published runtime comparison.
    pub const COMPARED: [TimedAlgorithm; 6] = [
        TimedAlgorithm::Oldsgd,
        TimedAlgorithm::Ldsgd,
        TimedAlgorithm::Kgt,
        TimedAlgorithm::Led,
        TimedAlgorithm::Lugt,
        TimedAlgorithm::Lsgd,
    ];

    pub const ALL: [TimedAlgorithm; 9] = [
        TimedAlgorithm::Oldsgd,
        TimedAlgorithm::Ldsgd,
        TimedAlgorithm::Kgt,
        TimedAlgorithm::Led,
        TimedAlgorithm::Lugt,
        TimedAlgorithm::Lsgd,
        TimedAlgorithm::Dsgd,
        TimedAlgorithm::Olgt,
        TimedAlgorithm::Oled,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TimedAlgorithm::Oldsgd => "oldsgd",
            TimedAlgorithm::Ldsgd => "ldsgd",
            TimedAlgorithm::Kgt => "kgt",
            TimedAlgorithm::Led => "led",
            TimedAlgorithm::Lugt => "lugt",
            TimedAlgorithm::Lsgd => "lsgd",
            TimedAlgorithm::Dsgd => "dsgd",
            TimedAlgorithm::Olgt => "olgt",
            TimedAlgorithm::Oled => "oled",
        }
    }

    /// Whether transmission runs concurrently with local computation.
    pub fn overlaps(self) -> bool {
        matches!(
            self,
            TimedAlgorithm::Oldsgd | TimedAlgorithm::Olgt | TimedAlgorithm::Oled | TimedAlgorithm::Kgt
        )
    }
}

impl From<Algorithm> for TimedAlgorithm {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Oldsgd => TimedAlgorithm::Oldsgd,
            Algorithm::Ldsgd => TimedAlgorithm::Ldsgd,
            Algorithm::Dsgd => TimedAlgorithm::Dsgd,
            Algorithm::Lsgd => TimedAlgorithm::Lsgd,
            Algorithm::Olgt => TimedAlgorithm::Olgt,
            Algorithm::Lugt => TimedAlgorithm::Lugt,
            Algorithm::Oled => TimedAlgorithm::Oled,
            Algorithm::Led => TimedAlgorithm::Led,
        }
    }
}

impl fmt::Display for TimedAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for TimedAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TimedAlgorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Config(format!("no runtime model for algorithm id {s:?}")))
    }
}

/// Communication delay `c` (in gradient-evaluation units) and agent count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    c: Rational64,
    n: usize,
}

impl CostModel {
    pub fn new(c: Rational64, n: usize) -> Result<Self> {
        if c <= Rational64::from_integer(0) {
            return Err(Error::Config(format!("communication cost must be positive, got {c}")));
        }
        if n == 0 {
            return Err(Error::Config("cost model needs at least one agent".into()));
        }
        Ok(Self { c, n })
    }

    /// Converts `c` to the nearest small rational (exact for integers and
    /// short decimals).
    pub fn from_f64(c: f64, n: usize) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Config(format!("communication cost must be positive, got {c}")));
        }
        let r = Rational64::approximate_float(c)
            .ok_or_else(|| Error::Config(format!("cannot represent c = {c} as a rational")))?;
        Self::new(r, n)
    }

    pub fn c(&self) -> Rational64 {
        self.c
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn int(v: usize) -> Rational64 {
    Rational64::from_integer(v as i64)
}

/// Makespan of one round of `tau` local iterations.
pub fn round_runtime(alg: TimedAlgorithm, tau: usize, cm: &CostModel) -> Result<Rational64> {
    if tau == 0 {
        return Err(Error::Config("tau must be >= 1".into()));
    }
    let t = int(tau);
    let c = cm.c;
    let two = int(2);
    Ok(match alg {
        TimedAlgorithm::Oldsgd | TimedAlgorithm::Oled => t.max(c),
        TimedAlgorithm::Ldsgd | TimedAlgorithm::Led => t + c,
        TimedAlgorithm::Kgt => t.max(c) + c,
        TimedAlgorithm::Lugt => t + two * c,
        TimedAlgorithm::Lsgd => t + two * int(cm.n - 1) * c / int(cm.n),
        TimedAlgorithm::Dsgd => t * (int(1) + c),
        TimedAlgorithm::Olgt => t.max(two * c),
    })
}

/// `round_runtime / tau`, the per-iteration cost.
pub fn normalized_runtime(alg: TimedAlgorithm, tau: usize, cm: &CostModel) -> Result<Rational64> {
    Ok(round_runtime(alg, tau, cm)? / int(tau))
}

/// Simulated time after `iterations` fine-grained iterations: complete
/// rounds at their makespan plus one unit per iteration of the running round.
pub fn elapsed(alg: TimedAlgorithm, tau: usize, cm: &CostModel, iterations: u64) -> Result<Rational64> {
    let round = round_runtime(alg, tau, cm)?;
    if alg == TimedAlgorithm::Dsgd {
        return Ok(Rational64::from_integer(iterations as i64) * (int(1) + cm.c));
    }
    let full = (iterations / tau as u64) as i64;
    let rem = (iterations % tau as u64) as i64;
    Ok(round * full + rem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Compute,
    Transmit,
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub kind: IntervalKind,
    pub start: Rational64,
    pub end: Rational64,
}

impl Interval {
    pub fn len(&self) -> Rational64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Explicit per-agent schedule of compute, transmit and idle intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub algorithm: TimedAlgorithm,
    pub tau: usize,
    pub agents: Vec<Vec<Interval>>,
    /// Time at which each round's consensus completes.
    pub round_ends: Vec<Rational64>,
}

#[derive(Serialize)]
struct IntervalJson {
    kind: IntervalKind,
    start: f64,
    end: f64,
}

#[derive(Serialize)]
struct TimelineJson<'a> {
    algorithm: &'a str,
    tau: usize,
    makespan: f64,
    agents: Vec<Vec<IntervalJson>>,
}

fn to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl Timeline {
    pub fn makespan(&self) -> Rational64 {
        self.round_ends.last().copied().unwrap_or_default()
    }

    /// Lengths of the individual rounds.
    pub fn round_lengths(&self) -> Vec<Rational64> {
        let mut prev = Rational64::from_integer(0);
        self.round_ends
            .iter()
            .map(|&e| {
                let l = e - prev;
                prev = e;
                l
            })
            .collect()
    }

    fn total(&self, agent: usize, kind: IntervalKind) -> Rational64 {
        self.agents[agent]
            .iter()
            .filter(|iv| iv.kind == kind)
            .map(Interval::len)
            .sum()
    }

    pub fn idle_time(&self, agent: usize) -> Rational64 {
        self.total(agent, IntervalKind::Idle)
    }

    pub fn compute_time(&self, agent: usize) -> Rational64 {
        self.total(agent, IntervalKind::Compute)
    }

    /// Checks the structural invariants: compute and idle intervals of an
    /// agent never overlap each other, and transmits overlap computation
    /// only for overlapping algorithms.
    pub fn check(&self) -> Result<()> {
        for (a, ivs) in self.agents.iter().enumerate() {
            for (k, p) in ivs.iter().enumerate() {
                for q in &ivs[k + 1..] {
                    if !p.overlaps(q) {
                        continue;
                    }
                    let busy = |iv: &Interval| iv.kind != IntervalKind::Transmit;
                    let transmit_compute = (p.kind == IntervalKind::Transmit
                        && q.kind == IntervalKind::Compute)
                        || (q.kind == IntervalKind::Transmit && p.kind == IntervalKind::Compute);
                    if (busy(p) && busy(q)) || (transmit_compute && !self.algorithm.overlaps()) {
                        return Err(Error::Config(format!(
                            "agent {a}: {:?} and {:?} intervals overlap",
                            p.kind, q.kind
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// JSON document `{algorithm, tau, makespan, agents: [[{kind, start, end}]]}`.
    pub fn to_json(&self) -> String {
        let doc = TimelineJson {
            algorithm: self.algorithm.id(),
            tau: self.tau,
            makespan: to_f64(self.makespan()),
            agents: self
                .agents
                .iter()
                .map(|ivs| {
                    ivs.iter()
                        .map(|iv| IntervalJson {
                            kind: iv.kind,
                            start: to_f64(iv.start),
                            end: to_f64(iv.end),
                        })
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("timeline serialises")
    }
}

/// Per-agent schedule builder. Each agent owns one compute unit and one
/// outgoing link, both serial.
struct Agent {
    intervals: Vec<Interval>,
    compute_free: Rational64,
    link_free: Rational64,
}

impl Agent {
    fn push(&mut self, kind: IntervalKind, start: Rational64, end: Rational64) {
        if end > start {
            self.intervals.push(Interval { kind, start, end });
        }
    }

    fn compute(&mut self, units: usize) {
        let s = self.compute_free;
        let e = s + int(units);
        self.push(IntervalKind::Compute, s, e);
        self.compute_free = e;
    }

    /// Starts a transmission of length `len` no earlier than `at`; returns
    /// its completion time.
    fn transmit(&mut self, at: Rational64, len: Rational64) -> Rational64 {
        let s = at.max(self.link_free);
        let e = s + len;
        self.push(IntervalKind::Transmit, s, e);
        self.link_free = e;
        e
    }

    /// Blocks the compute unit until `until`.
    fn wait(&mut self, until: Rational64) {
        if until > self.compute_free {
            let s = self.compute_free;
            self.push(IntervalKind::Idle, s, until);
            self.compute_free = until;
        }
    }
}

/// Builds the explicit schedule for `rounds` rounds on `cm.n()` symmetric
/// agents. Agents are homogeneous, so a consensus waits only for the
/// agent's own computation and for the neighbours' messages, which finish
/// when its own would.
pub fn build_timeline(
    alg: TimedAlgorithm,
    tau: usize,
    cm: &CostModel,
    rounds: usize,
) -> Result<Timeline> {
    if tau == 0 || rounds == 0 {
        return Err(Error::Config("timeline needs tau >= 1 and rounds >= 1".into()));
    }
    let c = cm.c;
    let n = cm.n;
    let zero = Rational64::from_integer(0);
    let mut agents: Vec<Agent> = (0..n)
        .map(|_| Agent {
            intervals: Vec::new(),
            compute_free: zero,
            link_free: zero,
        })
        .collect();
    let mut round_ends = Vec::with_capacity(rounds);
    let mut start = zero;
    for _ in 0..rounds {
        let mut end = start;
        for a in &mut agents {
            let boundary = match alg {
                TimedAlgorithm::Oldsgd | TimedAlgorithm::Oled | TimedAlgorithm::Olgt => {
                    // The models sent at the previous boundary travel while
                    // this round computes.
                    let payload = if alg == TimedAlgorithm::Olgt { int(2) * c } else { c };
                    let arrived = a.transmit(start, payload);
                    a.compute(tau);
                    a.wait(arrived);
                    a.compute_free
                }
                TimedAlgorithm::Kgt => {
                    let x_arrived = a.transmit(start, c);
                    a.compute(tau);
                    let z_start = a.compute_free.max(x_arrived);
                    let z_arrived = a.transmit(z_start, c);
                    a.wait(z_arrived);
                    a.compute_free
                }
                TimedAlgorithm::Ldsgd | TimedAlgorithm::Led | TimedAlgorithm::Lugt => {
                    let payload = if alg == TimedAlgorithm::Lugt { int(2) * c } else { c };
                    a.compute(tau);
                    let arrived = a.transmit(a.compute_free, payload);
                    a.wait(arrived);
                    a.compute_free
                }
                TimedAlgorithm::Lsgd => {
                    // Ring all-reduce: reduce-scatter then all-gather, each
                    // n-1 steps moving a 1/n chunk.
                    a.compute(tau);
                    let chunk = c / int(n);
                    let mut at = a.compute_free;
                    for _ in 0..2 * (n - 1) {
                        at = a.transmit(at, chunk);
                    }
                    a.wait(at);
                    a.compute_free
                }
                TimedAlgorithm::Dsgd => {
                    for _ in 0..tau {
                        a.compute(1);
                        let arrived = a.transmit(a.compute_free, c);
                        a.wait(arrived);
                    }
                    a.compute_free
                }
            };
            end = end.max(boundary);
        }
        for a in &mut agents {
            a.wait(end);
        }
        round_ends.push(end);
        start = end;
    }
    Ok(Timeline {
        algorithm: alg,
        tau,
        agents: agents.into_iter().map(|a| a.intervals).collect(),
        round_ends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(v: i64) -> Rational64 {
        Rational64::from_integer(v)
    }

    fn cm(c: i64, n: usize) -> CostModel {
        CostModel::new(r(c), n).unwrap()
    }

    #[test]
    fn published_examples() {
        let m = cm(5, 8);
        assert_eq!(round_runtime(TimedAlgorithm::Oldsgd, 5, &m).unwrap(), r(5));
        assert_eq!(round_runtime(TimedAlgorithm::Ldsgd, 5, &m).unwrap(), r(10));
        assert_eq!(
            round_runtime(TimedAlgorithm::Lsgd, 5, &m).unwrap(),
            Rational64::new(1375, 100)
        );
        assert_eq!(round_runtime(TimedAlgorithm::Oldsgd, 10, &cm(1, 8)).unwrap(), r(10));
    }

    #[test]
    fn normalized_values_at_tau_equal_c() {
        for n in [2usize, 4, 8, 16, 32] {
            for c in [1i64, 5] {
                let m = cm(c, n);
                let tau = c as usize;
                let norm = |a| normalized_runtime(a, tau, &m).unwrap();
                assert_eq!(norm(TimedAlgorithm::Oldsgd), r(1));
                assert_eq!(norm(TimedAlgorithm::Ldsgd), r(2));
                assert_eq!(norm(TimedAlgorithm::Kgt), r(2));
                assert_eq!(norm(TimedAlgorithm::Led), r(2));
                assert_eq!(norm(TimedAlgorithm::Lugt), r(3));
                assert_eq!(
                    norm(TimedAlgorithm::Lsgd),
                    r(1) + Rational64::new(2 * (n as i64 - 1), n as i64)
                );
            }
        }
    }

    #[test]
    fn hand_drawn_schedules() {
        let t = build_timeline(TimedAlgorithm::Oldsgd, 5, &cm(3, 4), 2).unwrap();
        assert_eq!(t.makespan(), r(10));
        assert_eq!(t.idle_time(0), r(0));

        let t = build_timeline(TimedAlgorithm::Ldsgd, 5, &cm(3, 4), 2).unwrap();
        assert_eq!(t.makespan(), r(16));
        assert_eq!(t.idle_time(0), r(6));

        let t = build_timeline(TimedAlgorithm::Oldsgd, 2, &cm(5, 4), 2).unwrap();
        assert_eq!(t.makespan(), r(10));
        assert_eq!(t.idle_time(0), r(6));
        assert_eq!(t.round_lengths(), vec![r(5), r(5)]);
    }

    #[test]
    fn elapsed_examples() {
        let m = cm(5, 8);
        assert_eq!(elapsed(TimedAlgorithm::Oldsgd, 5, &m, 10).unwrap(), r(10));
        assert_eq!(elapsed(TimedAlgorithm::Ldsgd, 5, &m, 10).unwrap(), r(20));
        assert_eq!(elapsed(TimedAlgorithm::Ldsgd, 5, &m, 12).unwrap(), r(22));
        for a in TimedAlgorithm::ALL {
            assert_eq!(elapsed(a, 3, &m, 0).unwrap(), r(0));
        }
    }

    #[test]
    fn timelines_match_formulas_and_invariants() {
        for a in TimedAlgorithm::ALL {
            for tau in [1usize, 3, 5, 10] {
                for c in [Rational64::new(1, 2), r(1), r(5)] {
                    for n in [1usize, 2, 5] {
                        let m = CostModel::new(c, n).unwrap();
                        let t = build_timeline(a, tau, &m, 3).unwrap();
                        let want = round_runtime(a, tau, &m).unwrap();
                        assert!(t.round_lengths().iter().all(|&l| l == want), "{a} {tau} {c} {n}");
                        t.check().unwrap();
                        if a == TimedAlgorithm::Oldsgd && c <= int(tau) {
                            assert_eq!(t.idle_time(0), r(0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fractional_cost_is_exact() {
        let m = CostModel::from_f64(0.25, 4).unwrap();
        assert_eq!(m.c(), Rational64::new(1, 4));
        assert!(CostModel::from_f64(0.0, 4).is_err());
        assert!("kgt".parse::<TimedAlgorithm>().is_ok());
        assert!("xyz".parse::<TimedAlgorithm>().is_err());
    }

    #[test]
    fn json_export_lists_every_agent() {
        let t = build_timeline(TimedAlgorithm::Kgt, 2, &cm(1, 3), 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["agents"].as_array().unwrap().len(), 3);
        assert_eq!(v["makespan"], 3.0);
    }
}
