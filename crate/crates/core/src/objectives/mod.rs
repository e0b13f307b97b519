//! Per-agent objectives and stochastic gradient oracles.
//!
//! The global objective is the agent average `f = (1/n) sum_i f_i`, which is
//! the normalization under which the smoothness, variance and heterogeneity
//! constants are stated.

mod logistic;
mod noise;
mod quadratic;

use std::fmt::Debug;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use logistic::{
    partition_dataset, Dataset, LogisticSpec, LogisticSuite, Partition, Sample, SyntheticDataset,
    DATASET_VERSION,
};
pub use noise::{stochastic_gradient, NoiseModel};
pub use quadratic::{QuadraticSpec, QuadraticSuite};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::vecops;

/// A collection of `n` local objectives over a shared `d`-dimensional model.
pub trait Objective: Debug + Send + Sync {
    fn num_agents(&self) -> usize;

    fn dim(&self) -> usize;

    fn local_loss(&self, agent: usize, x: &[f64]) -> f64;

    /// Writes the exact gradient of `f_agent` at `x` into `out`.
    fn local_gradient(&self, agent: usize, x: &[f64], out: &mut [f64]);

    /// Sampled-data gradient, for suites backed by a dataset.
    fn minibatch_gradient(
        &self,
        _agent: usize,
        _x: &[f64],
        _rng: &mut Stream,
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Config(
            "minibatch noise requires a dataset-backed objective".into(),
        ))
    }

    fn loss(&self, x: &[f64]) -> f64 {
        let n = self.num_agents();
        (0..n).map(|i| self.local_loss(i, x)).sum::<f64>() / n as f64
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.num_agents();
        let mut buf = vec![0.0; self.dim()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            self.local_gradient(i, x, &mut buf);
            vecops::add_assign(out, &buf);
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    /// Smoothness constant `L` (exact or a documented upper bound).
    fn smoothness(&self) -> f64;

    /// Whether [`Objective::smoothness`] is exact rather than a bound.
    fn smoothness_is_exact(&self) -> bool {
        false
    }

    /// Analytic `(zeta2, P)` if the suite knows them by construction.
    fn analytic_heterogeneity(&self) -> Option<(f64, f64)> {
        None
    }

    /// Lower bound `f*` of the global objective.
    fn optimum_value(&self) -> f64;
}

/// Exact gradient of `f_agent` at `x`.
pub fn full_gradient(suite: &dyn Objective, agent: usize, x: &[f64]) -> Result<Vec<f64>> {
    check_point(suite, agent, x)?;
    let mut out = vec![0.0; suite.dim()];
    suite.local_gradient(agent, x, &mut out);
    Ok(out)
}

pub(crate) fn check_point(suite: &dyn Objective, agent: usize, x: &[f64]) -> Result<()> {
    if x.len() != suite.dim() {
        return Err(Error::Config(format!(
            "model has dimension {}, objective expects {}",
            x.len(),
            suite.dim()
        )));
    }
    if agent >= suite.num_agents() {
        return Err(Error::Config(format!(
            "agent {agent} out of range 0..{}",
            suite.num_agents()
        )));
    }
    if !vecops::all_finite(x) {
        return Err(Error::NumericDomain("non-finite model".into()));
    }
    Ok(())
}

/// Heterogeneity constants of the bound
/// `(1/n) sum_i |grad f_i(x) - grad f(x)|^2 <= zeta2 + P |grad f(x)|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heterogeneity {
    pub zeta2: f64,
    pub p: f64,
    /// `true` when the values come from sampling rather than construction.
    pub estimate: bool,
}

/// Analytic constants when available; otherwise the largest observed
/// dissimilarity over a fixed Gaussian probe set, with `P = 0`.
pub fn heterogeneity_constants(suite: &dyn Objective) -> Heterogeneity {
    if let Some((zeta2, p)) = suite.analytic_heterogeneity() {
        return Heterogeneity {
            zeta2,
            p,
            estimate: false,
        };
    }
    let n = suite.num_agents();
    let d = suite.dim();
    let mut rng = crate::rng::setup_stream(0x4e7e, 0);
    let mut zeta2 = 0.0_f64;
    let mut gi = vec![0.0; d];
    let mut g = vec![0.0; d];
    for probe in 0..64 {
        let x: Vec<f64> = if probe == 0 {
            vec![0.0; d]
        } else {
            (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        suite.gradient(&x, &mut g);
        let mut h = 0.0;
        for i in 0..n {
            suite.local_gradient(i, &x, &mut gi);
            h += vecops::dist_sq(&gi, &g);
        }
        zeta2 = zeta2.max(h / n as f64);
    }
    Heterogeneity {
        zeta2,
        p: 0.0,
        estimate: true,
    }
}

/// `L` for the suite: exact `lambda_max(A)` for quadratics, the documented
/// bound for logistic regression.
pub fn smoothness_constant(suite: &dyn Objective) -> f64 {
    suite.smoothness()
}
