use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_point, Objective};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// How a stochastic gradient departs from the exact local gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `g = grad f_i(x) + sigma * z`, `z ~ N(0, I/d)`, so
    /// `E|g - grad f_i|^2 = sigma^2` and `M = 0`.
    Additive { sigma: f64 },
    /// `g = (1 + m u) grad f_i(x)`, `u ~ N(0, 1)`, so the variance is
    /// `m^2 |grad f_i|^2`: `sigma^2 = 0`, `M = m^2`.
    Multiplicative { m: f64 },
    /// Sampled-batch gradient of a dataset-backed objective.
    Minibatch,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Additive { sigma: 0.0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Additive { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")))
            }
            NoiseModel::Multiplicative { m } if !(m >= 0.0 && m.is_finite()) => {
                Err(Error::Config(format!("m must be finite and >= 0, got {m}")))
            }
            _ => Ok(()),
        }
    }

    /// `(sigma^2, M)` of the variance bound, when known in closed form.
    pub fn variance_constants(&self) -> Option<(f64, f64)> {
        match *self {
            NoiseModel::Additive { sigma } => Some((sigma * sigma, 0.0)),
            NoiseModel::Multiplicative { m } => Some((0.0, m * m)),
            NoiseModel::Minibatch => None,
        }
    }
}

/// Draws one stochastic gradient of `f_agent` at `x` from `rng`.
pub fn stochastic_gradient(
    suite: &dyn Objective,
    noise: &NoiseModel,
    agent: usize,
    x: &[f64],
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    check_point(suite, agent, x)?;
    let d = suite.dim();
    let mut g = vec![0.0; d];
    match *noise {
        NoiseModel::Additive { sigma } => {
            suite.local_gradient(agent, x, &mut g);
            if sigma > 0.0 {
                let scale = sigma / (d as f64).sqrt();
                for gi in &mut g {
                    *gi += scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        NoiseModel::Multiplicative { m } => {
            suite.local_gradient(agent, x, &mut g);
            if m > 0.0 {
                let factor = 1.0 + m * rng.sample::<f64, _>(StandardNormal);
                g.iter_mut().for_each(|gi| *gi *= factor);
            }
        }
        NoiseModel::Minibatch => suite.minibatch_gradient(agent, x, rng, &mut g)?,
    }
    Ok(g)
}
