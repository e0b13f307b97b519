use std::collections::BTreeMap;

use crate::vecops;

/// One agent's view of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Current local model. For the exact-diffusion family this is the inner
    /// iterate of the running round.
    pub x: Vec<f64>,
    /// Sum of the gradients drawn since the last consensus step.
    pub grad_accum: Vec<f64>,
    /// Models of `j` in `N_i ∪ {i}` as of the last consensus boundary.
    /// Empty for algorithms that mix fresh models.
    pub stale_inbox: BTreeMap<usize, Vec<f64>>,
    pub aux: Aux,
}

/// Algorithm-specific per-agent state.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    Tracking(TrackingState),
    Diffusion(DiffusionState),
}

/// Gradient-tracking state (OLGT / LUGT).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingState {
    /// Tracking variable `y_i^k`, initialised to `alpha * g_i^0`.
    pub y: Vec<f64>,
    /// Gradient drawn at the current `x`.
    pub last_grad: Vec<f64>,
    /// `sum_{t=s}^{k-1} y_i^t` since the last boundary `s`.
    pub y_accum: Vec<f64>,
    /// `sum_{t=s}^{k-1} (g_i^{t+1} - g_i^t)` since the last boundary.
    pub grad_diff_accum: Vec<f64>,
    /// `y_j^s` of neighbours at the last boundary (overlapping variant only).
    pub y_inbox: BTreeMap<usize, Vec<f64>>,
}

/// Exact-diffusion state (OLED / LED).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    /// Correction `y_i^r` for the running round.
    pub y: Vec<f64>,
    /// `x_i^r`, the model the round started from.
    pub round_start: Vec<f64>,
    /// Gradient drawn at `x_i^r`.
    pub round_start_grad: Vec<f64>,
    /// Gradient drawn at the current inner iterate.
    pub last_grad: Vec<f64>,
}

impl AgentState {
    pub(crate) fn new(x: Vec<f64>) -> Self {
        let d = x.len();
        Self {
            x,
            grad_accum: vec![0.0; d],
            stale_inbox: BTreeMap::new(),
            aux: Aux::None,
        }
    }

    pub fn tracking(&self) -> Option<&TrackingState> {
        match &self.aux {
            Aux::Tracking(s) => Some(s),
            _ => None,
        }
    }

    pub fn diffusion(&self) -> Option<&DiffusionState> {
        match &self.aux {
            Aux::Diffusion(s) => Some(s),
            _ => None,
        }
    }
}

/// All agents, advanced in lock step.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub agents: Vec<AgentState>,
    /// Number of completed iterations.
    pub t: u64,
    /// Gradients drawn during the most recent step, one per agent.
    pub drawn: Vec<Vec<f64>>,
    pub diverged: bool,
    /// `max(1, max_i |x_i^0|)`; divergence is declared beyond `1e6` times this.
    pub initial_scale: f64,
    /// Average model after every step, when recording is enabled.
    pub xbar_trace: Option<Vec<Vec<f64>>>,
}

/// Divergence threshold relative to the initial model scale.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

impl SwarmState {
    pub(crate) fn new(models: Vec<Vec<f64>>) -> Self {
        let initial_scale = models.iter().map(|x| vecops::norm(x)).fold(1.0, f64::max);
        let n = models.len();
        Self {
            agents: models.into_iter().map(AgentState::new).collect(),
            t: 0,
            drawn: vec![Vec::new(); n],
            diverged: false,
            initial_scale,
            xbar_trace: None,
        }
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn models(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.x.clone()).collect()
    }

    /// `x_bar = (1/n) sum_i x_i`.
    pub fn average(&self) -> Vec<f64> {
        let d = self.agents[0].x.len();
        let mut out = vec![0.0; d];
        for a in &self.agents {
            vecops::add_assign(&mut out, &a.x);
        }
        let inv = 1.0 / self.n() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    pub fn consensus_error(&self) -> f64 {
        consensus_error(self)
    }

    /// Starts recording `x_bar` after every step (including the current one).
    pub fn record_xbar(&mut self) {
        self.xbar_trace = Some(vec![self.average()]);
    }

    pub(crate) fn after_step(&mut self) {
        let limit = DIVERGENCE_FACTOR * self.initial_scale;
        if self
            .agents
            .iter()
            .any(|a| !vecops::all_finite(&a.x) || vecops::norm(&a.x) > limit)
        {
            self.diverged = true;
        }
        if self.xbar_trace.is_some() {
            let xbar = self.average();
            if let Some(trace) = self.xbar_trace.as_mut() {
                trace.push(xbar);
            }
        }
    }
}

/// `sum_i |x_i - x_bar|^2`, the squared Frobenius distance of the stacked
/// models from their mean.
pub fn consensus_error(swarm: &SwarmState) -> f64 {
    let xbar = swarm.average();
    swarm.agents.iter().map(|a| vecops::dist_sq(&a.x, &xbar)).sum()
}
