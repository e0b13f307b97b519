use num_rational::Rational64;

use super::config::{Experiment, RunConfig};
use super::trace::{RunStatus, RunTrace, TraceMeta, TraceRow};
use crate::algorithms::{Simulation, SwarmState};
use crate::error::Result;
use crate::timemodel::{elapsed, TimedAlgorithm};
use crate::vecops;

/// A finished run: the trace plus the final swarm.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub swarm: SwarmState,
    /// First recorded iteration whose loss met the target.
    pub target_iteration: Option<u64>,
}

pub(crate) fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Runs `config` and writes its trace to `config.output` when set.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let exp = config.instantiate()?;
    let outcome = run_experiment(config, &exp)?;
    if let Some(path) = &config.output {
        outcome.trace.write(path)?;
    }
    Ok(outcome)
}

/// Runs an already instantiated experiment without touching the file system.
pub fn run_experiment(config: &RunConfig, exp: &Experiment) -> Result<RunOutcome> {
    let mut sim = Simulation::new(
        exp.algorithm,
        exp.suite.as_ref(),
        exp.noise,
        &exp.mixing,
        &exp.hp,
        exp.models.clone(),
    )?;
    let timed = TimedAlgorithm::from(exp.algorithm);
    let cadence = config.metrics.cadence;
    let total = exp.hp.iterations;
    let mut grad = vec![0.0; exp.suite.dim()];
    let mut rows = Vec::new();
    let mut target_iteration = None;

    let mut record = |sim: &Simulation<'_>, rows: &mut Vec<TraceRow>| -> Result<TraceRow> {
        let swarm = sim.swarm();
        let t = swarm.t;
        let xbar = swarm.average();
        let (loss, grad_norm_sq) = if vecops::all_finite(&xbar) {
            exp.suite.gradient(&xbar, &mut grad);
            (exp.suite.loss(&xbar), vecops::norm_sq(&grad))
        } else {
            (f64::NAN, f64::NAN)
        };
        let row = TraceRow {
            iteration: t,
            simulated_time: rational_to_f64(elapsed(timed, exp.hp.tau, &exp.cost, t)?),
            loss,
            grad_norm_sq,
            consensus_error: swarm.consensus_error(),
            diverged: swarm.diverged,
        };
        rows.push(row);
        Ok(row)
    };

    let first = record(&sim, &mut rows)?;
    let hits = |row: &TraceRow| matches!(config.target_loss, Some(target) if row.loss <= target);
    if hits(&first) {
        target_iteration = Some(0);
    }
    let stop_early = |target_iteration: Option<u64>| config.stop_on_target && target_iteration.is_some();
    while sim.swarm().t < total && !sim.swarm().diverged && !stop_early(target_iteration) {
        sim.step()?;
        let t = sim.swarm().t;
        if t % cadence == 0 || t == total || sim.swarm().diverged {
            let row = record(&sim, &mut rows)?;
            if target_iteration.is_none() && !row.diverged && hits(&row) {
                target_iteration = Some(t);
            }
        }
    }
    if stop_early(target_iteration) && rows.last().map(|r| r.iteration) != Some(sim.swarm().t) {
        record(&sim, &mut rows)?;
    }

    let swarm = sim.swarm().clone();
    let status = if swarm.diverged {
        RunStatus::Diverged
    } else if target_iteration.is_some() {
        RunStatus::Converged
    } else {
        RunStatus::BudgetExhausted
    };
    let trace = RunTrace {
        meta: TraceMeta {
            algorithm: exp.algorithm.id().to_string(),
            tau: exp.hp.tau,
            c: config.cost.c,
            n: exp.suite.num_agents(),
            seed: exp.hp.seed,
            alpha: exp.hp.alpha,
        },
        config_json: RunConfig {
            output: None,
            ..config.clone()
        }
        .to_json_line(),
        status,
        rows,
    };
    Ok(RunOutcome {
        trace,
        swarm,
        target_iteration,
    })
}

/// `(1/T) sum_{t<T} |grad f(x_bar^t)|^2` from a trace recorded at cadence 1.
pub fn mean_grad_norm_sq(trace: &RunTrace, horizon: u64) -> Option<f64> {
    let vals: Vec<f64> = trace
        .rows
        .iter()
        .filter(|r| r.iteration < horizon)
        .map(|r| r.grad_norm_sq)
        .collect();
    if vals.len() as u64 != horizon {
        return None;
    }
    Some(vals.iter().sum::<f64>() / horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(alg: &str, extra: &str) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{
                "schema_version": 1,
                "algorithm": "{alg}",
                "topology": {{"kind": "ring", "n": 1}},
                "objective": {{"kind": "quadratic", "d": 4, "l_min": 0.5, "seed": 2}},
                "hyperparams": {{"alpha": 0.5, "tau": 3, "iterations": 50, "seed": 1}},
                "cost": {{"c": 2}}{extra}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_agent_gradient_descent_decreases() {
        let out = run(&config("oldsgd", "")).unwrap();
        let losses: Vec<f64> = out.trace.rows.iter().map(|r| r.loss).collect();
        assert_eq!(losses.len(), 51);
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(out.trace.status, RunStatus::BudgetExhausted);
    }

    #[test]
    fn simulated_time_follows_time_model() {
        let cfg = config("ldsgd", r#", "metrics": {"cadence": 4}"#);
        let out = run(&cfg).unwrap();
        let its: Vec<u64> = out.trace.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(its.first(), Some(&0));
        assert_eq!(its.last(), Some(&50));
        assert!(its.windows(2).all(|w| w[0] < w[1]));
        for r in &out.trace.rows {
            // tau = 3, c = 2: 5 time units per full round plus one per leftover step.
            let want = (r.iteration / 3) * 5 + r.iteration % 3;
            assert_eq!(r.simulated_time, want as f64);
        }
    }

    #[test]
    fn stops_on_target() {
        let cfg = config("oldsgd", r#", "target_loss": 1e9, "stop_on_target": true"#);
        let out = run(&cfg).unwrap();
        assert_eq!(out.target_iteration, Some(0));
        assert_eq!(out.trace.rows.len(), 1);
        assert_eq!(out.trace.status, RunStatus::Converged);
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let mut cfg = config("dsgd", "");
        cfg.hyperparams.alpha = crate::harness::StepSize::Fixed(10.0);
        cfg.hyperparams.iterations = 10_000;
        let out = run(&cfg).unwrap();
        assert_eq!(out.trace.status, RunStatus::Diverged);
        assert!(out.trace.final_row().unwrap().diverged);
        assert!(out.trace.rows.len() < 10_000);
    }

    #[test]
    fn writes_atomically_and_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config("oldsgd", "");
        cfg.noise = crate::objectives::NoiseModel::Additive { sigma: 1.0 };
        cfg.output = Some(dir.path().join("a.csv"));
        run(&cfg).unwrap();
        cfg.output = Some(dir.path().join("b.csv"));
        run(&cfg).unwrap();
        let a = std::fs::read(dir.path().join("a.csv")).unwrap();
        let b = std::fs::read(dir.path().join("b.csv")).unwrap();
        assert_eq!(a, b);
    }
}
