use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Algorithm, Hyperparams, LdsgdVariant};
use crate::error::{Error, Result};
use crate::objectives::{
    heterogeneity_constants, LogisticSpec, LogisticSuite, NoiseModel, Objective, QuadraticSpec,
    QuadraticSuite,
};
use crate::rng;
use crate::theory::{max_step_size, TheoryConstants};
use crate::timemodel::CostModel;
use crate::topology::{MixingMatrix, TopologySpec};
use crate::vecops;

pub const SCHEMA_VERSION: u32 = 1;

/// Default local-step grid of the sweeps.
pub const DEFAULT_TAUS: [usize; 8] = [1, 3, 5, 10, 15, 20, 30, 40];

/// One experiment, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    pub topology: TopologySpec,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    pub hyperparams: HyperparamsSpec,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub init: InitSpec,
    /// Loss of the average model that counts as converged.
    #[serde(default)]
    pub target_loss: Option<f64>,
    /// Stop as soon as `target_loss` is reached.
    #[serde(default)]
    pub stop_on_target: bool,
    /// Where `run` writes the trace CSV.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
}

/// A fixed step size or a rule resolved against the instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Fixed(f64),
    Rule(StepSizeRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSizeRule {
    /// The largest step size admitted by the convergence bound.
    MaxStepSize,
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Fixed(0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamsSpec {
    #[serde(default)]
    pub alpha: StepSize,
    pub tau: usize,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub ldsgd_variant: LdsgdVariant,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Communication time per consensus, in gradient evaluations.
    pub c: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { c: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Record a trace row every `cadence` iterations (the final iterate is
    /// always recorded).
    pub cadence: u64,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self { cadence: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Every agent starts at the origin.
    #[default]
    Zeros,
    /// Independent `N(0, scale^2 I)` draws per agent, seeded by the run seed.
    Gaussian { scale: f64 },
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Single-line JSON, used for the trace header.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.metrics.cadence == 0 {
            return Err(Error::Config("metrics.cadence must be >= 1".into()));
        }
        if self.topology.n == 0 {
            return Err(Error::Config("topology.n must be >= 1".into()));
        }
        if !(self.cost.c.is_finite() && self.cost.c > 0.0) {
            return Err(Error::Config(format!("cost.c must be positive, got {}", self.cost.c)));
        }
        if let StepSize::Fixed(a) = self.hyperparams.alpha {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::Config(format!("alpha must be finite and >= 0, got {a}")));
            }
        }
        if matches!(self.target_loss, Some(t) if !t.is_finite()) {
            return Err(Error::Config("target_loss must be finite".into()));
        }
        if let InitSpec::Gaussian { scale } = self.init {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(Error::Config("init scale must be finite and >= 0".into()));
            }
        }
        self.noise.validate()
    }

    /// Builds the objective, mixing matrix and resolved hyperparameters.
    pub fn instantiate(&self) -> Result<Experiment> {
        self.validate()?;
        let n = self.topology.n;
        let suite: Box<dyn Objective> = match &self.objective {
            ObjectiveSpec::Quadratic(spec) => Box::new(QuadraticSuite::synthetic(spec, n)?),
            ObjectiveSpec::Logistic(spec) => Box::new(LogisticSuite::from_spec(spec, n)?),
        };
        let mixing = self.topology.mixing()?;
        let models = initial_models(&self.init, self.hyperparams.seed, n, suite.dim());
        let cost = CostModel::from_f64(self.cost.c, n)?;
        let hs = &self.hyperparams;
        let mut hp = Hyperparams {
            alpha: 0.0,
            tau: hs.tau,
            iterations: hs.iterations,
            seed: hs.seed,
            eta: hs.eta,
            beta: hs.beta,
            grad_clip: hs.grad_clip,
            ldsgd_variant: hs.ldsgd_variant,
        };
        let mut exp = Experiment {
            algorithm: self.algorithm,
            suite,
            mixing,
            noise: self.noise,
            hp: hp.clone(),
            cost,
            models,
        };
        hp.alpha = match hs.alpha {
            StepSize::Fixed(a) => a,
            StepSize::Rule(StepSizeRule::MaxStepSize) => max_step_size(&exp.theory_constants()?)?,
        };
        hp.validate()?;
        exp.hp = hp;
        Ok(exp)
    }
}

fn initial_models(init: &InitSpec, seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    match *init {
        InitSpec::Zeros => vec![vec![0.0; d]; n],
        InitSpec::Gaussian { scale } => {
            let mut stream = rng::setup_stream(seed, 7);
            (0..n)
                .map(|_| {
                    (0..d)
                        .map(|_| scale * stream.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        }
    }
}

/// A configuration turned into concrete objects.
#[derive(Debug)]
pub struct Experiment {
    pub algorithm: Algorithm,
    pub suite: Box<dyn Objective>,
    pub mixing: MixingMatrix,
    pub noise: NoiseModel,
    pub hp: Hyperparams,
    pub cost: CostModel,
    pub models: Vec<Vec<f64>>,
}

impl Experiment {
    /// Constants of the convergence bound for this instance. Heterogeneity
    /// comes from construction when the suite knows it, otherwise from
    /// sampling; minibatch noise has no closed-form variance and is rejected.
    pub fn theory_constants(&self) -> Result<TheoryConstants> {
        let (sigma2, m) = self.noise.variance_constants().ok_or_else(|| {
            Error::Config("theory constants need a noise model with known variance".into())
        })?;
        let het = heterogeneity_constants(self.suite.as_ref());
        Ok(TheoryConstants {
            l: self.suite.smoothness(),
            sigma2,
            m,
            zeta2: het.zeta2,
            p_het: het.p,
            p: self.mixing.p(),
            tau: self.hp.tau,
            n: self.suite.num_agents(),
            f0: self.suite.loss(&vecops::mean(&self.models)),
            fstar: self.suite.optimum_value(),
        })
    }
}
