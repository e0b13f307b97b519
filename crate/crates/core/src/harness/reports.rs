use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{mean_grad_norm_sq, run, run_experiment};
use super::sweep::run_many;
use super::trace::RunTrace;
use crate::algorithms::{Algorithm, LdsgdVariant, Simulation};
use crate::error::{Error, Result};
use crate::theory::{theorem1_rhs, TheoryConstants};
use crate::topology::TopologyKind;
use crate::vecops;

/// Simulated time of the first row whose loss is at most `target`.
pub fn time_to_target(trace: &RunTrace, target: f64) -> Option<f64> {
    trace
        .rows
        .iter()
        .find(|r| !r.diverged && r.loss <= target)
        .map(|r| r.simulated_time)
}

/// Geometric mean; `None` for an empty slice or non-positive entries.
pub fn geomean(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupEntry {
    pub algorithm: String,
    pub c: f64,
    /// The `tau` with the smallest seed-averaged time to target.
    pub best_tau: Option<usize>,
    pub time_to_target: Option<f64>,
    /// This algorithm's time divided by the reference algorithm's time.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub target_loss: f64,
    pub reference: String,
    pub entries: Vec<SpeedupEntry>,
    /// Geometric mean of the speedups over the `c` values, per algorithm.
    pub geomean: BTreeMap<String, Option<f64>>,
    pub warnings: Vec<String>,
}

impl SpeedupReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn entry(&self, algorithm: &str, c: f64) -> Option<&SpeedupEntry> {
        self.entries.iter().find(|e| e.algorithm == algorithm && e.c == c)
    }
}

/// `(algorithm, c as bits)`.
type GroupKey = (String, u64);

/// Best-`tau` time to target per `(algorithm, c)`, relative to OLDSGD.
///
/// Times of runs that differ only by seed are averaged; a `tau` counts as
/// unreachable if any of its seeds misses the target.
pub fn speedup_report(traces: &[RunTrace], target_loss: f64) -> Result<SpeedupReport> {
    if !target_loss.is_finite() {
        return Err(Error::Report("target loss must be finite".into()));
    }
    let reference = Algorithm::Oldsgd.id().to_string();
    let mut groups: BTreeMap<GroupKey, BTreeMap<usize, Vec<Option<f64>>>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((t.meta.algorithm.clone(), t.meta.c.to_bits()))
            .or_default()
            .entry(t.meta.tau)
            .or_default()
            .push(time_to_target(t, target_loss));
    }
    let best: BTreeMap<(String, u64), Option<(usize, f64)>> = groups
        .into_iter()
        .map(|(key, by_tau)| {
            let best = by_tau
                .into_iter()
                .filter_map(|(tau, times)| {
                    let reached: Option<Vec<f64>> = times.into_iter().collect();
                    reached.map(|v| (tau, v.iter().sum::<f64>() / v.len() as f64))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            (key, best)
        })
        .collect();

    let cs: Vec<u64> = {
        let mut v: Vec<u64> = best.keys().map(|k| k.1).collect();
        v.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
        v.dedup();
        v
    };
    let mut reference_time = BTreeMap::new();
    for &c in &cs {
        match best.get(&(reference.clone(), c)) {
            Some(Some((_, time))) => {
                reference_time.insert(c, *time);
            }
            Some(None) => {
                return Err(Error::Report(format!(
                    "{reference} never reaches loss {target_loss} at c = {}",
                    f64::from_bits(c)
                )))
            }
            None => {
                return Err(Error::Report(format!(
                    "no {reference} traces at c = {}",
                    f64::from_bits(c)
                )))
            }
        }
    }

    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut per_alg: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut algorithms: Vec<String> = best.keys().map(|k| k.0.clone()).collect();
    algorithms.dedup();
    for alg in &algorithms {
        per_alg.entry(alg.clone()).or_default();
        for &c in &cs {
            let Some(b) = best.get(&(alg.clone(), c)) else {
                continue;
            };
            let speedup = b.map(|(_, time)| time / reference_time[&c]);
            if b.is_none() {
                warnings.push(format!(
                    "{alg} at c = {} never reaches loss {target_loss}; excluded from the geometric mean",
                    f64::from_bits(c)
                ));
            }
            if let Some(s) = speedup {
                per_alg.get_mut(alg).expect("inserted above").push(s);
            }
            entries.push(SpeedupEntry {
                algorithm: alg.clone(),
                c: f64::from_bits(c),
                best_tau: b.map(|x| x.0),
                time_to_target: b.map(|x| x.1),
                speedup,
            });
        }
    }
    let geomean = per_alg.into_iter().map(|(a, v)| (a, geomean(&v))).collect();
    Ok(SpeedupReport {
        target_loss,
        reference,
        entries,
        geomean,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub n: usize,
    pub time_to_target: Option<f64>,
    /// Single-agent time divided by this row's time.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityReport {
    pub target_loss: f64,
    pub algorithm: String,
    pub tau: usize,
    pub rows: Vec<ScalabilityRow>,
}

impl ScalabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Time to `base.target_loss` on rings of each size in `n_list`, relative
/// to a single agent. The single-agent run is always included first.
pub fn scalability_report(base: &RunConfig, n_list: &[usize], workers: usize) -> Result<ScalabilityReport> {
    let target = base
        .target_loss
        .ok_or_else(|| Error::Report("scalability needs target_loss in the config".into()))?;
    if n_list.contains(&0) {
        return Err(Error::Config("agent counts must be >= 1".into()));
    }
    let mut ns = vec![1];
    ns.extend(n_list.iter().copied().filter(|&n| n != 1));
    let configs: Vec<RunConfig> = ns
        .iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.topology.kind = TopologyKind::Ring;
            cfg.topology.n = n;
            cfg.output = None;
            cfg
        })
        .collect();
    let traces = run_many(&configs, workers, |cfg| Ok(run(cfg)?.trace))?;
    let mut times = Vec::with_capacity(ns.len());
    for (n, t) in ns.iter().zip(traces) {
        let t = t.map_err(|e| Error::Report(format!("run with n = {n} failed: {e}")))?;
        times.push(time_to_target(&t, target));
    }
    let t1 = times[0].ok_or_else(|| {
        Error::Report(format!("the single-agent run never reaches loss {target}"))
    })?;
    let rows = ns
        .into_iter()
        .zip(times)
        .map(|(n, time)| ScalabilityRow {
            n,
            time_to_target: time,
            speedup: time.map(|t| t1 / t),
        })
        .collect();
    Ok(ScalabilityReport {
        target_loss: target,
        algorithm: base.algorithm.id().to_string(),
        tau: base.hyperparams.tau,
        rows,
    })
}

/// Empirical left-hand side of the convergence bound against its
/// right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub alpha: f64,
    pub iterations: u64,
    pub seeds: Vec<u64>,
    /// Seed average of `(1/T) sum_{t<T} |grad f(x_bar^t)|^2`.
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs / lhs`; above 1 means the bound holds.
    pub slack_ratio: f64,
    pub holds: bool,
    pub constants: TheoryConstants,
}

impl BoundCheck {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Runs `base` once per seed (every iterate recorded) and compares the
/// seed-averaged gradient norm with the bound at the run's step size.
pub fn verify_bound(base: &RunConfig, seeds: &[u64], workers: usize) -> Result<BoundCheck> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one seed".into()));
    }
    let exp = base.instantiate()?;
    let constants = exp.theory_constants()?;
    let horizon = exp.hp.iterations;
    let rhs = theorem1_rhs(&constants, exp.hp.alpha, horizon)?;
    let configs: Vec<RunConfig> = seeds
        .iter()
        .map(|&s| {
            let mut cfg = base.clone();
            cfg.hyperparams.seed = s;
            cfg.metrics.cadence = 1;
            cfg.stop_on_target = false;
            cfg.output = None;
            cfg
        })
        .collect();
    let traces = run_many(&configs, workers, |cfg| {
        let exp = cfg.instantiate()?;
        Ok(run_experiment(cfg, &exp)?.trace)
    })?;
    let mut total = 0.0;
    for (s, t) in seeds.iter().zip(traces) {
        let t = t.map_err(|e| Error::Report(format!("seed {s}: {e}")))?;
        total += mean_grad_norm_sq(&t, horizon)
            .ok_or_else(|| Error::Report(format!("seed {s} stopped before {horizon} iterations")))?;
    }
    let lhs = total / seeds.len() as f64;
    Ok(BoundCheck {
        alpha: exp.hp.alpha,
        iterations: horizon,
        seeds: seeds.to_vec(),
        lhs,
        rhs,
        slack_ratio: rhs / lhs,
        holds: lhs <= rhs,
        constants,
    })
}

/// Largest observed violation of each structural property along one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub algorithm: String,
    pub iterations: u64,
    /// `max_t |x_bar^{t+1} - (x_bar^t - alpha mean_i g_i^t)| / max(1, |x_bar^{t+1}|)`
    /// for the methods whose average follows SGD.
    pub average_identity_max_deviation: Option<f64>,
    /// `max_k |sum_i y_i - alpha sum_i g_i| / max(1, |alpha sum_i g_i|)` for
    /// the tracking methods.
    pub tracker_conservation_max_deviation: Option<f64>,
    /// For zero step size: rounds where the consensus error failed to
    /// contract by `lambda2^2` (up to 1e-9).
    pub gossip_contraction_violations: Option<u64>,
    /// Largest relative gap between the recorded average trace and a
    /// recomputation from the agents.
    pub xbar_trace_max_deviation: f64,
}

impl InvariantReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

pub fn verify_invariants(config: &RunConfig) -> Result<InvariantReport> {
    let exp = config.instantiate()?;
    let alg = exp.algorithm;
    let alpha = exp.hp.alpha;
    let mut sim = Simulation::new(
        alg,
        exp.suite.as_ref(),
        exp.noise,
        &exp.mixing,
        &exp.hp,
        exp.models.clone(),
    )?;
    sim.swarm_mut().record_xbar();
    let sgd_like = matches!(alg, Algorithm::Oldsgd | Algorithm::Dsgd | Algorithm::Lsgd)
        || (alg == Algorithm::Ldsgd && exp.hp.ldsgd_variant == LdsgdVariant::AdaptThenCombine);
    let tracking = matches!(alg, Algorithm::Olgt | Algorithm::Lugt);
    let gossip = alpha == 0.0 && alg == Algorithm::Oldsgd;
    let tau = exp.hp.tau as u64;
    let lambda2_sq = exp.mixing.lambda2().powi(2);

    let mut avg_dev: f64 = 0.0;
    let mut track_dev: f64 = 0.0;
    let mut violations = 0u64;
    let mut xbar_dev: f64 = 0.0;
    let mut last_round_error = sim.swarm().consensus_error();
    for _ in 0..exp.hp.iterations {
        let before = sim.swarm().average();
        sim.step()?;
        let s = sim.swarm();
        if s.diverged {
            break;
        }
        let after = s.average();
        if sgd_like {
            let mut predicted = before;
            let gbar = vecops::mean(&s.drawn);
            vecops::axpy(-alpha, &gbar, &mut predicted);
            let dev = vecops::dist_sq(&after, &predicted).sqrt() / vecops::norm(&after).max(1.0);
            avg_dev = avg_dev.max(dev);
        }
        if tracking {
            let d = after.len();
            let mut ysum = vec![0.0; d];
            let mut gsum = vec![0.0; d];
            for a in &s.agents {
                let st = a.tracking().expect("tracking state");
                vecops::add_assign(&mut ysum, &st.y);
                vecops::axpy(alpha, &st.last_grad, &mut gsum);
            }
            let dev = vecops::dist_sq(&ysum, &gsum).sqrt() / vecops::norm(&gsum).max(1.0);
            track_dev = track_dev.max(dev);
        }
        if gossip && s.t % tau == 0 {
            let e = s.consensus_error();
            if e > lambda2_sq * last_round_error + 1e-9 {
                violations += 1;
            }
            last_round_error = e;
        }
        if let Some(recorded) = s.xbar_trace.as_ref().and_then(|v| v.last()) {
            let dev = vecops::dist_sq(recorded, &after).sqrt() / vecops::norm(&after).max(1.0);
            xbar_dev = xbar_dev.max(dev);
        }
    }
    Ok(InvariantReport {
        algorithm: alg.id().to_string(),
        iterations: sim.swarm().t,
        average_identity_max_deviation: sgd_like.then_some(avg_dev),
        tracker_conservation_max_deviation: tracking.then_some(track_dev),
        gossip_contraction_violations: gossip.then_some(violations),
        xbar_trace_max_deviation: xbar_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace::{RunStatus, TraceMeta, TraceRow};

    fn trace(alg: &str, tau: usize, c: f64, seed: u64, losses: &[(f64, f64)]) -> RunTrace {
        RunTrace {
            meta: TraceMeta {
                algorithm: alg.into(),
                tau,
                c,
                n: 2,
                seed,
                alpha: 0.1,
            },
            config_json: String::new(),
            status: RunStatus::BudgetExhausted,
            rows: losses
                .iter()
                .enumerate()
                .map(|(k, &(time, loss))| TraceRow {
                    iteration: k as u64,
                    simulated_time: time,
                    loss,
                    grad_norm_sq: 0.0,
                    consensus_error: 0.0,
                    diverged: false,
                })
                .collect(),
        }
    }

    #[test]
    fn time_to_target_examples() {
        let t = trace("oldsgd", 1, 1.0, 0, &[(0.0, 5.0), (2.0, 3.0), (4.0, 1.0), (6.0, 0.5)]);
        assert_eq!(time_to_target(&t, 10.0), Some(0.0));
        assert_eq!(time_to_target(&t, 1.0), Some(4.0));
        assert_eq!(time_to_target(&t, 0.1), None);
    }

    #[test]
    fn geomean_examples() {
        let g = geomean(&[1.23, 1.26, 1.50, 1.62, 1.95, 2.65]).unwrap();
        assert!((g - 1.64).abs() < 0.005, "{g}");
        assert_eq!(geomean(&[1.7]).unwrap(), 1.7);
        assert!(geomean(&[]).is_none());
    }

    #[test]
    fn speedup_ratio_and_best_tau() {
        let traces = vec![
            trace("oldsgd", 1, 1.0, 0, &[(0.0, 2.0), (10.0, 0.5)]),
            trace("oldsgd", 5, 1.0, 0, &[(0.0, 2.0), (12.0, 0.5)]),
            trace("ldsgd", 1, 1.0, 0, &[(0.0, 2.0), (30.0, 0.5)]),
            trace("ldsgd", 5, 1.0, 0, &[(0.0, 2.0), (20.0, 0.5)]),
            trace("lugt", 5, 1.0, 0, &[(0.0, 2.0), (20.0, 1.5)]),
        ];
        let r = speedup_report(&traces, 1.0).unwrap();
        let old = r.entry("oldsgd", 1.0).unwrap();
        assert_eq!(old.speedup, Some(1.0));
        assert_eq!(old.best_tau, Some(1));
        let ld = r.entry("ldsgd", 1.0).unwrap();
        assert_eq!(ld.speedup, Some(2.0));
        assert_eq!(ld.best_tau, Some(5));
        assert_eq!(r.entry("lugt", 1.0).unwrap().speedup, None);
        assert_eq!(r.geomean["lugt"], None);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(speedup_report(&traces, 1.0).unwrap(), r);
    }

    #[test]
    fn unreachable_reference_is_an_error() {
        let traces = vec![trace("oldsgd", 1, 1.0, 0, &[(0.0, 2.0)])];
        assert!(matches!(speedup_report(&traces, 1.0), Err(Error::Report(_))));
    }

    #[test]
    fn seeds_are_averaged() {
        let traces = vec![
            trace("oldsgd", 1, 1.0, 0, &[(0.0, 2.0), (10.0, 0.5)]),
            trace("oldsgd", 1, 1.0, 1, &[(0.0, 2.0), (20.0, 0.5)]),
        ];
        let r = speedup_report(&traces, 1.0).unwrap();
        assert_eq!(r.entry("oldsgd", 1.0).unwrap().time_to_target, Some(15.0));
    }
}
