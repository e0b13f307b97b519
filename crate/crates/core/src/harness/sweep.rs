use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, DEFAULT_TAUS};
use super::run::run;
use super::trace::RunTrace;
use crate::algorithms::Algorithm;
use crate::error::{Error, Result};

/// Environment variable selecting the worker-pool size (default 1).
pub const WORKERS_ENV: &str = "OLDSGD_WORKERS";

/// Cartesian product of run parameters; every other field comes from the
/// base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_taus")]
    pub tau: Vec<usize>,
    pub c: Vec<f64>,
    pub algorithm: Vec<Algorithm>,
    pub seed: Vec<u64>,
}

fn default_taus() -> Vec<usize> {
    DEFAULT_TAUS.to_vec()
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("tau", self.tau.is_empty()),
            ("c", self.c.is_empty()),
            ("algorithm", self.algorithm.is_empty()),
            ("seed", self.seed.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("sweep grid has an empty {name} list")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tau.len() * self.c.len() * self.algorithm.len() * self.seed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in order algorithm, c, tau, seed.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &algorithm in &self.algorithm {
            for &c in &self.c {
                for &tau in &self.tau {
                    for &seed in &self.seed {
                        out.push(SweepPoint {
                            algorithm,
                            tau,
                            c,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub tau: usize,
    pub c: f64,
    pub seed: u64,
}

impl SweepPoint {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.algorithm = self.algorithm;
        cfg.hyperparams.tau = self.tau;
        cfg.hyperparams.seed = self.seed;
        cfg.cost.c = self.c;
        cfg.output = None;
        cfg
    }

    /// File name used when a sweep writes its traces to a directory.
    pub fn file_name(&self) -> String {
        format!("{}_tau{}_c{}_seed{}.csv", self.algorithm, self.tau, self.c, self.seed)
    }
}

/// Outcome of one grid point; failures are kept, not propagated.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub point: SweepPoint,
    pub trace: std::result::Result<RunTrace, String>,
}

/// Worker count from [`WORKERS_ENV`], defaulting to 1.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1)
}

/// Runs `configs` on a pool of `workers` threads; results keep input order.
pub fn run_many<T, F>(items: &[T], workers: usize, f: F) -> Result<Vec<std::result::Result<RunTrace, String>>>
where
    T: Sync,
    F: Fn(&T) -> Result<RunTrace> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        items
            .par_iter()
            .map(|it| f(it).map_err(|e| e.to_string()))
            .collect()
    }))
}

/// One run per grid point. With `out_dir`, each successful trace is also
/// written there under [`SweepPoint::file_name`].
pub fn sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepResult>> {
    grid.validate()?;
    base.validate()?;
    let points = grid.points();
    let traces = run_many(&points, workers, |p| {
        let trace = run(&p.apply(base))?.trace;
        if let Some(dir) = out_dir {
            trace.write(&dir.join(p.file_name()))?;
        }
        Ok(trace)
    })?;
    Ok(points
        .into_iter()
        .zip(traces)
        .map(|(point, trace)| SweepResult { point, trace })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json(
            r#"{
                "schema_version": 1,
                "algorithm": "oldsgd",
                "topology": {"kind": "ring", "n": 4},
                "objective": {"kind": "quadratic", "d": 2},
                "noise": {"kind": "additive", "sigma": 0.1},
                "hyperparams": {"alpha": 0.05, "tau": 1, "iterations": 20},
                "metrics": {"cadence": 10}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn grid_is_cartesian_and_ordered() {
        let grid = SweepGrid {
            tau: DEFAULT_TAUS.to_vec(),
            c: vec![1.0, 5.0],
            algorithm: vec![Algorithm::Oldsgd],
            seed: vec![0, 1, 2],
        };
        assert_eq!(grid.len(), 48);
        let res = sweep(&base(), &grid, 3, None).unwrap();
        assert_eq!(res.len(), 48);
        assert!(res.iter().all(|r| r.trace.is_ok()));
        assert_eq!(res[0].point.seed, 0);
        assert_eq!(res[1].point.seed, 1);
        assert_eq!(res[3].point.tau, 3);
        assert_eq!(res[24].point.c, 5.0);
        let serial = sweep(&base(), &grid, 1, None).unwrap();
        for (a, b) in res.iter().zip(&serial) {
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn empty_lists_are_rejected() {
        let grid = SweepGrid {
            tau: vec![1],
            c: vec![1.0],
            algorithm: vec![],
            seed: vec![0],
        };
        assert!(matches!(sweep(&base(), &grid, 1, None), Err(Error::Config(_))));
    }

    #[test]
    fn failures_are_recorded_per_point() {
        let mut b = base();
        b.objective = super::super::config::ObjectiveSpec::Quadratic(crate::objectives::QuadraticSpec {
            l_min: 2.0,
            l_max: 1.0,
            ..crate::objectives::QuadraticSpec::new(2)
        });
        let grid = SweepGrid {
            tau: vec![1, 2],
            c: vec![1.0],
            algorithm: vec![Algorithm::Oldsgd],
            seed: vec![0],
        };
        let res = sweep(&b, &grid, 1, None).unwrap();
        assert_eq!(res.len(), 2);
        assert!(res.iter().all(|r| r.trace.is_err()));
    }

    #[test]
    fn default_tau_grid() {
        let g: SweepGrid =
            serde_json::from_str(r#"{"c": [1], "algorithm": ["ldsgd"], "seed": [0]}"#).unwrap();
        assert_eq!(g.tau, vec![1, 3, 5, 10, 15, 20, 30, 40]);
    }
}
