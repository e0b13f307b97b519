//! Decentralized update rules behind one lock-step interface.
//!
//! | id       | update                                                     |
//! |----------|------------------------------------------------------------|
//! | `oldsgd` | local steps; consensus mixes models from the previous boundary, then subtracts the accumulated local gradients |
//! | `ldsgd`  | local steps; consensus mixes fresh `x_j - alpha g_j`         |
//! | `dsgd`   | combine-then-adapt every iteration                         |
//! | `lsgd`   | local steps; exact global average at each boundary         |
//! | `olgt`   | gradient tracking with local steps and stale boundary models |
//! | `lugt`   | gradient tracking with local steps and fresh boundary models |
//! | `oled`   | local exact diffusion mixing round-start models            |
//! | `led`    | local exact diffusion mixing post-local-step models        |
//!
//! Overlap of communication with computation is represented logically by
//! the stale inbox; its wall-clock effect lives in [`crate::timemodel`].

mod diffusion;
mod dsgd;
mod state;
mod tracking;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use diffusion::{step_led, step_oled};
pub use dsgd::{step_dsgd_cta, step_ldsgd, step_lsgd, step_oldsgd};
pub use state::{
    consensus_error, AgentState, Aux, DiffusionState, SwarmState, TrackingState, DIVERGENCE_FACTOR,
};
pub use tracking::{step_lugt, step_olgt};

use crate::error::{Error, Result};
use crate::objectives::{stochastic_gradient, NoiseModel, Objective};
use crate::rng;
use crate::topology::MixingMatrix;
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Oldsgd,
    Ldsgd,
    Dsgd,
    Lsgd,
    Olgt,
    Lugt,
    Oled,
    Led,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Oldsgd,
        Algorithm::Ldsgd,
        Algorithm::Dsgd,
        Algorithm::Lsgd,
        Algorithm::Olgt,
        Algorithm::Lugt,
        Algorithm::Oled,
        Algorithm::Led,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Oldsgd => "oldsgd",
            Algorithm::Ldsgd => "ldsgd",
            Algorithm::Dsgd => "dsgd",
            Algorithm::Lsgd => "lsgd",
            Algorithm::Olgt => "olgt",
            Algorithm::Lugt => "lugt",
            Algorithm::Oled => "oled",
            Algorithm::Led => "led",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm id {s:?}")))
    }
}

/// Which reading of the local-DSGD consensus line to run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LdsgdVariant {
    /// `x_i = sum_j w_ij (x_j - alpha g_j)`.
    #[default]
    AdaptThenCombine,
    /// `x_i = sum_j w_ij (x_j - alpha g_i)`, literally as usually printed.
    AsPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Step size `alpha > 0`.
    pub alpha: f64,
    /// Local steps per communication round.
    pub tau: usize,
    /// Total iterations `T`.
    pub iterations: u64,
    pub seed: u64,
    /// Outer step `eta` of the tracking methods; `y` already carries `alpha`.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Correction weight of the exact-diffusion methods; defaults to `alpha`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Optional cap on the norm of each drawn gradient.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub ldsgd_variant: LdsgdVariant,
}

fn default_eta() -> f64 {
    1.0
}

impl Hyperparams {
    pub fn new(alpha: f64, tau: usize, iterations: u64, seed: u64) -> Self {
        Self {
            alpha,
            tau,
            iterations,
            seed,
            eta: 1.0,
            beta: None,
            grad_clip: None,
            ldsgd_variant: LdsgdVariant::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if matches!(self.beta, Some(b) if !(b.is_finite() && b >= 0.0)) {
            return Err(Error::Config("beta must be finite and >= 0".into()));
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.alpha)
    }
}

/// Everything a step reads but never writes.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub suite: &'a dyn Objective,
    pub noise: NoiseModel,
    pub mixing: &'a MixingMatrix,
    pub hp: &'a Hyperparams,
}

impl StepContext<'_> {
    /// Stochastic gradient of agent `i` at `x`, keyed by the iterate index
    /// `iteration` that `x` belongs to.
    pub(crate) fn draw(&self, agent: usize, x: &[f64], iteration: u64) -> Result<Vec<f64>> {
        let mut stream = rng::stream(self.hp.seed, agent, iteration, 0);
        let mut g = stochastic_gradient(self.suite, &self.noise, agent, x, &mut stream)?;
        if let Some(cap) = self.hp.grad_clip {
            let norm = vecops::norm(&g);
            if norm > cap {
                let s = cap / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok(g)
    }
}

/// Initialises algorithm-specific state for `models` (one per agent).
pub fn init_swarm(
    algorithm: Algorithm,
    models: Vec<Vec<f64>>,
    ctx: &StepContext<'_>,
) -> Result<SwarmState> {
    let n = ctx.suite.num_agents();
    let d = ctx.suite.dim();
    if models.len() != n || ctx.mixing.n() != n {
        return Err(Error::Config(format!(
            "{} initial models and a {}-agent mixing matrix for a {n}-agent objective",
            models.len(),
            ctx.mixing.n()
        )));
    }
    if models.iter().any(|x| x.len() != d) {
        return Err(Error::Config(format!("initial models must have dimension {d}")));
    }
    ctx.hp.validate()?;
    ctx.noise.validate()?;
    let mut swarm = SwarmState::new(models);
    match algorithm {
        Algorithm::Oldsgd => dsgd::init_inbox(&mut swarm, ctx.mixing),
        Algorithm::Ldsgd | Algorithm::Dsgd | Algorithm::Lsgd => {}
        Algorithm::Olgt => tracking::init(&mut swarm, ctx, true)?,
        Algorithm::Lugt => tracking::init(&mut swarm, ctx, false)?,
        Algorithm::Oled => diffusion::init(&mut swarm, ctx, true)?,
        Algorithm::Led => diffusion::init(&mut swarm, ctx, false)?,
    }
    Ok(swarm)
}

/// Advances `swarm` by one iteration of `algorithm`. A diverged swarm is
/// left untouched.
pub fn step(algorithm: Algorithm, swarm: &mut SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    if swarm.diverged {
        return Ok(());
    }
    let outcome = match algorithm {
        Algorithm::Oldsgd => step_oldsgd(swarm, ctx),
        Algorithm::Ldsgd => step_ldsgd(swarm, ctx),
        Algorithm::Dsgd => step_dsgd_cta(swarm, ctx),
        Algorithm::Lsgd => step_lsgd(swarm, ctx),
        Algorithm::Olgt => step_olgt(swarm, ctx),
        Algorithm::Lugt => step_lugt(swarm, ctx),
        Algorithm::Oled => step_oled(swarm, ctx),
        Algorithm::Led => step_led(swarm, ctx),
    };
    match outcome {
        Ok(()) => {
            swarm.after_step();
            Ok(())
        }
        // A non-finite iterate reached a gradient oracle.
        Err(Error::NumericDomain(_)) => {
            swarm.diverged = true;
            Ok(())
        }
        Err(e) => Err(e),
    }
}

pub(crate) fn check_shape(swarm: &SwarmState, ctx: &StepContext<'_>) -> Result<()> {
    let d = ctx.suite.dim();
    if swarm.n() != ctx.suite.num_agents()
        || swarm.n() != ctx.mixing.n()
        || swarm.agents.iter().any(|a| a.x.len() != d)
    {
        return Err(Error::Config("swarm, objective and mixing matrix disagree in shape".into()));
    }
    Ok(())
}

/// An algorithm bound to its objective, mixing matrix and state.
#[derive(Debug)]
pub struct Simulation<'a> {
    algorithm: Algorithm,
    ctx: StepContext<'a>,
    swarm: SwarmState,
}

impl<'a> Simulation<'a> {
    pub fn new(
        algorithm: Algorithm,
        suite: &'a dyn Objective,
        noise: NoiseModel,
        mixing: &'a MixingMatrix,
        hp: &'a Hyperparams,
        models: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let ctx = StepContext {
            suite,
            noise,
            mixing,
            hp,
        };
        let swarm = init_swarm(algorithm, models, &ctx)?;
        Ok(Self {
            algorithm,
            ctx,
            swarm,
        })
    }

    /// Every agent starts from the zero model.
    pub fn from_zero(
        algorithm: Algorithm,
        suite: &'a dyn Objective,
        noise: NoiseModel,
        mixing: &'a MixingMatrix,
        hp: &'a Hyperparams,
    ) -> Result<Self> {
        let models = vec![vec![0.0; suite.dim()]; suite.num_agents()];
        Self::new(algorithm, suite, noise, mixing, hp, models)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn context(&self) -> &StepContext<'a> {
        &self.ctx
    }

    pub fn swarm(&self) -> &SwarmState {
        &self.swarm
    }

    pub fn swarm_mut(&mut self) -> &mut SwarmState {
        &mut self.swarm
    }

    pub fn step(&mut self) -> Result<()> {
        step(self.algorithm, &mut self.swarm, &self.ctx)
    }

    /// Steps `count` times or until divergence.
    pub fn run(&mut self, count: u64) -> Result<()> {
        for _ in 0..count {
            if self.swarm.diverged {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn average_loss(&self) -> f64 {
        self.ctx.suite.loss(&self.swarm.average())
    }

    pub fn average_grad_norm_sq(&self) -> f64 {
        let mut g = vec![0.0; self.ctx.suite.dim()];
        self.ctx.suite.gradient(&self.swarm.average(), &mut g);
        vecops::norm_sq(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.id().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.id()));
        }
        assert!("kgt".parse::<Algorithm>().is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::new(0.1, 0, 10, 0).validate().is_err());
        assert!(Hyperparams::new(0.1, 1, 0, 0).validate().is_err());
        assert!(Hyperparams::new(f64::NAN, 1, 1, 0).validate().is_err());
        assert!(Hyperparams::new(0.1, 5, 10, 0).validate().is_ok());
    }
}
