use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::{io, vecops};

/// Version tag written into dataset files.
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Binary label in `{0, 1}`.
    pub label: u8,
    /// Cluster id the sample was drawn from; used for label-skewed splits.
    pub group: usize,
}

/// A flat labelled dataset before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn groups(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.group).collect()
    }
}

/// Per-agent sample index lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<Vec<usize>>,
    /// Fraction of each agent's quota taken from its designated groups.
    pub skew: f64,
}

/// Splits samples (identified by their group ids) across `n` agents.
///
/// Agent `i` first draws `floor(skew * quota_i)` samples from its designated
/// groups, then every agent tops up to its quota from the shuffled pool of
/// whatever is left. With `n >= G` groups agent `i` is designated group
/// `i mod G` (so groups are shared round-robin when agents outnumber them);
/// with `n < G` agent `i` owns every group `g` with `g mod n == i`.
pub fn partition_dataset(groups: &[usize], n: usize, skew: f64, seed: u64) -> Result<Partition> {
    if n == 0 {
        return Err(Error::Config("partition needs at least one agent".into()));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::Config(format!("skew must lie in [0, 1], got {skew}")));
    }
    let total = groups.len();
    let mut rng = rng::setup_stream(seed, 2);
    let labels: Vec<usize> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let g_count = labels.len();

    let mut pools: Vec<Vec<usize>> = labels
        .iter()
        .map(|&label| (0..total).filter(|&k| groups[k] == label).collect())
        .collect();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let quota = |i: usize| total / n + usize::from(i < total % n);
    let designated = |i: usize| -> Vec<usize> {
        if g_count == 0 {
            Vec::new()
        } else if n >= g_count {
            vec![i % g_count]
        } else {
            (0..g_count).filter(|g| g % n == i).collect()
        }
    };

    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, slot) in assignment.iter_mut().enumerate() {
        // The epsilon keeps e.g. 0.7 * 30 from flooring to 20.
        let want = ((skew * quota(i) as f64) + 1e-9).floor() as usize;
        let owned = designated(i);
        let mut k = 0;
        while slot.len() < want && owned.iter().any(|&g| !pools[g].is_empty()) {
            let g = owned[k % owned.len()];
            if let Some(idx) = pools[g].pop() {
                slot.push(idx);
            }
            k += 1;
        }
    }
    let mut rest: Vec<usize> = pools.into_iter().flatten().collect();
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    for (i, slot) in assignment.iter_mut().enumerate() {
        while slot.len() < quota(i) {
            match rest.pop() {
                Some(idx) => slot.push(idx),
                None => break,
            }
        }
        slot.sort_unstable();
    }
    Ok(Partition { assignment, skew })
}

/// Parameters of the seeded synthetic logistic-regression task.
///
/// Features come from `groups` Gaussian clusters; labels from a planted
/// linear model. The partition is label-skewed by cluster id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    pub d: usize,
    pub samples_per_agent: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub skew: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_groups() -> usize {
    10
}
fn default_mu() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}
fn default_spread() -> f64 {
    1.0
}

impl LogisticSpec {
    pub fn dataset(&self, n: usize) -> Result<Dataset> {
        if self.d == 0 || self.groups == 0 {
            return Err(Error::Config("logistic task needs d >= 1 and groups >= 1".into()));
        }
        let mut rng = rng::setup_stream(self.seed, 3);
        let centres: Vec<Vec<f64>> = (0..self.groups)
            .map(|_| {
                (0..self.d)
                    .map(|_| self.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let planted: Vec<f64> = (0..self.d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / (self.d as f64).sqrt())
            .collect();
        let samples = (0..n * self.samples_per_agent)
            .map(|k| {
                let group = k % self.groups;
                let features: Vec<f64> = centres[group]
                    .iter()
                    .map(|c| c + rng.sample::<f64, _>(StandardNormal) / (self.d as f64).sqrt())
                    .collect();
                let margin = vecops::dot(&planted, &features)
                    + 0.1 * rng.sample::<f64, _>(StandardNormal);
                Sample {
                    features,
                    label: u8::from(margin > 0.0),
                    group,
                }
            })
            .collect();
        Ok(Dataset { d: self.d, samples })
    }

    /// Generates, partitions and packages the dataset for `n` agents.
    pub fn synthetic(&self, n: usize) -> Result<SyntheticDataset> {
        let data = self.dataset(n)?;
        let part = partition_dataset(&data.groups(), n, self.skew, self.seed)?;
        Ok(SyntheticDataset::from_partition(&data, &part, self.seed))
    }
}

/// Serialized dataset with its agent split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub version: u32,
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub agents: Vec<Vec<Sample>>,
}

impl SyntheticDataset {
    pub fn from_partition(data: &Dataset, part: &Partition, seed: u64) -> Self {
        Self {
            version: DATASET_VERSION,
            seed,
            d: data.d,
            n: part.assignment.len(),
            agents: part
                .assignment
                .iter()
                .map(|idx| idx.iter().map(|&k| data.samples[k].clone()).collect())
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::json(path, e))?;
        io::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ds: Self = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        if ds.version != DATASET_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported dataset version {}",
                path.display(),
                ds.version
            )));
        }
        if ds.agents.len() != ds.n {
            return Err(Error::Config(format!("{}: agent count mismatch", path.display())));
        }
        Ok(ds)
    }
}

/// Ridge-regularized logistic loss per agent:
/// `f_i(x) = mean_k log(1 + exp(-s_k a_k^T x)) + mu/2 |x|^2`, `s_k = 2 y_k - 1`.
#[derive(Debug)]
pub struct LogisticSuite {
    d: usize,
    /// Per agent: row-major features and signed labels.
    features: Vec<Vec<f64>>,
    signs: Vec<Vec<f64>>,
    mu: f64,
    batch_size: usize,
    l_bound: f64,
    f_star: OnceLock<f64>,
}

impl LogisticSuite {
    pub fn new(data: &SyntheticDataset, mu: f64, batch_size: usize) -> Result<Self> {
        if mu < 0.0 {
            return Err(Error::Config("ridge coefficient must be non-negative".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if data.agents.is_empty() || data.agents.iter().any(Vec::is_empty) {
            return Err(Error::Config("every agent needs at least one sample".into()));
        }
        let d = data.d;
        let mut features = Vec::with_capacity(data.n);
        let mut signs = Vec::with_capacity(data.n);
        let mut worst_mean_sq = 0.0_f64;
        for agent in &data.agents {
            if agent.iter().any(|s| s.features.len() != d || s.label > 1) {
                return Err(Error::Config("malformed sample".into()));
            }
            features.push(agent.iter().flat_map(|s| s.features.iter().copied()).collect());
            signs.push(agent.iter().map(|s| 2.0 * f64::from(s.label) - 1.0).collect());
            let mean_sq =
                agent.iter().map(|s| vecops::norm_sq(&s.features)).sum::<f64>() / agent.len() as f64;
            worst_mean_sq = worst_mean_sq.max(mean_sq);
        }
        Ok(Self {
            d,
            features,
            signs,
            mu,
            batch_size,
            l_bound: 0.25 * worst_mean_sq + mu,
            f_star: OnceLock::new(),
        })
    }

    pub fn from_spec(spec: &LogisticSpec, n: usize) -> Result<Self> {
        Self::new(&spec.synthetic(n)?, spec.mu, spec.batch_size)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn sample_count(&self, agent: usize) -> usize {
        self.signs[agent].len()
    }

    fn row(&self, agent: usize, k: usize) -> &[f64] {
        &self.features[agent][k * self.d..(k + 1) * self.d]
    }

    /// Adds `weight * grad(loss_k)` into `out` for one sample.
    fn accumulate_sample(&self, agent: usize, k: usize, x: &[f64], weight: f64, out: &mut [f64]) {
        let a = self.row(agent, k);
        let s = self.signs[agent][k];
        let coeff = -s * sigmoid(-s * vecops::dot(a, x));
        vecops::axpy(weight * coeff, a, out);
    }

    /// Approximates `f*` by gradient descent with step `1/L` on the global
    /// objective. The loss is convex, so this is a tight estimate when `mu > 0`.
    fn solve_optimum(&self) -> f64 {
        let mut x = vec![0.0; self.d];
        let mut g = vec![0.0; self.d];
        let step = 1.0 / self.l_bound;
        for _ in 0..20_000 {
            self.gradient(&x, &mut g);
            if vecops::norm_sq(&g) < 1e-22 {
                break;
            }
            vecops::axpy(-step, &g, &mut x);
        }
        self.loss(&x)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Objective for LogisticSuite {
    fn num_agents(&self) -> usize {
        self.signs.len()
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn local_loss(&self, agent: usize, x: &[f64]) -> f64 {
        let m = self.sample_count(agent);
        let data: f64 = (0..m)
            .map(|k| softplus(-self.signs[agent][k] * vecops::dot(self.row(agent, k), x)))
            .sum::<f64>()
            / m as f64;
        data + 0.5 * self.mu * vecops::norm_sq(x)
    }

    fn local_gradient(&self, agent: usize, x: &[f64], out: &mut [f64]) {
        let m = self.sample_count(agent);
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = 1.0 / m as f64;
        for k in 0..m {
            self.accumulate_sample(agent, k, x, w, out);
        }
        vecops::axpy(self.mu, x, out);
    }

    fn minibatch_gradient(
        &self,
        agent: usize,
        x: &[f64],
        rng: &mut Stream,
        out: &mut [f64],
    ) -> Result<()> {
        let m = self.sample_count(agent);
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = 1.0 / self.batch_size as f64;
        for _ in 0..self.batch_size {
            let k = rng.random_range(0..m);
            self.accumulate_sample(agent, k, x, w, out);
        }
        vecops::axpy(self.mu, x, out);
        Ok(())
    }

    fn smoothness(&self) -> f64 {
        self.l_bound
    }

    fn optimum_value(&self) -> f64 {
        *self.f_star.get_or_init(|| self.solve_optimum())
    }
}
