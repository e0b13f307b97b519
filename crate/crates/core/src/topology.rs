//! Communication graphs and doubly stochastic mixing matrices.
//!
//! A [`MixingMatrix`] carries its second-largest eigenvalue magnitude
//! `lambda2` and the spectral constant `p = 1 - lambda2^2`, which governs
//! the per-round contraction of the consensus error.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row/column sums of a doubly stochastic matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Undirected communication graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Self-loops are rejected and
    /// duplicate pairs (in either orientation) collapse to one edge.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("graph needs at least one agent".into()));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({a}, {b}) references an agent outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self-loop at agent {a}")));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges as `(min, max)` pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `i`, excluding `i` itself, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Breadth-first reachability from agent 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        reached == self.n
    }
}

/// Undirected ring: agent `i` talks to `(i - 1) mod n` and `(i + 1) mod n`.
pub fn build_ring(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("ring needs n >= 2, got {n}")));
    }
    Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
}

/// Complete graph on `n` agents; `n = 1` is the singleton with no edges.
pub fn build_complete(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidTopology("complete graph needs n >= 1".into()));
    }
    Graph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
}

/// Doubly stochastic weight matrix with its spectral constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    /// Row-major `n x n`.
    weights: Vec<f64>,
    /// Non-zero entries of each row, ascending by column.
    rows: Vec<Vec<(usize, f64)>>,
    lambda2: f64,
    p: f64,
}

impl MixingMatrix {
    /// Validates a dense row-major matrix and computes its spectrum.
    ///
    /// The matrix must be symmetric, entrywise non-negative and doubly
    /// stochastic within [`STOCHASTIC_TOL`].
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 || weights.len() != n * n {
            return Err(Error::InvalidTopology(format!(
                "expected {n}x{n} weights, got {} entries",
                weights.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidTopology(format!("w[{i}][{j}] = {w} is not a weight")));
                }
                if (w - weights[j * n + i]).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidTopology(format!("w[{i}][{j}] breaks symmetry")));
                }
            }
            let row: f64 = weights[i * n..(i + 1) * n].iter().sum();
            let col: f64 = (0..n).map(|r| weights[r * n + i]).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidTopology(format!(
                    "row/column {i} sums to {row}/{col}, not 1"
                )));
            }
        }
        let lambda2 = second_eigenvalue_magnitude(n, &weights);
        Ok(Self::assemble(n, weights, lambda2))
    }

    fn assemble(n: usize, weights: Vec<f64>, lambda2: f64) -> Self {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let w = weights[i * n + j];
                        (w != 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Self {
            n,
            weights,
            rows,
            lambda2,
            p: 1.0 - lambda2 * lambda2,
        }
    }

    /// `W = I`: no mixing at all. Only useful for isolating local dynamics.
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        let lambda2 = if n > 1 { 1.0 } else { 0.0 };
        Self::assemble(n, weights, lambda2)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Second-largest eigenvalue magnitude.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Spectral constant `1 - lambda2^2`.
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Non-zero `(j, w_ij)` entries of row `i`, ascending in `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Writes `sum_j w_ij * v_j` into `out`, summing over `j` in ascending
    /// order starting from zero. Every averaging step in the simulator goes
    /// through here, so two algorithms that mix the same inputs with the same
    /// row produce identical bits.
    pub fn mix_into<'a, F>(&self, i: usize, mut model: F, out: &mut [f64])
    where
        F: FnMut(usize) -> &'a [f64],
    {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(j, w) in &self.rows[i] {
            let v = model(j);
            for (o, vj) in out.iter_mut().zip(v) {
                *o += w * vj;
            }
        }
    }

    /// Row-major CSV, 17 significant digits per entry.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let line: Vec<String> = (0..self.n)
                .map(|j| format!("{:.16e}", self.weight(i, j)))
                .collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn as_dense(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.weights)
    }
}

/// Metropolis-Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, with the remainder on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::InvalidTopology("graph is disconnected".into()));
    }
    let n = g.n();
    let mut weights = vec![0.0; n * n];
    for (a, b) in g.edges() {
        let w = 1.0 / (1 + g.degree(a).max(g.degree(b))) as f64;
        weights[a * n + b] = w;
        weights[b * n + a] = w;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| weights[i * n + j]).sum();
        weights[i * n + i] = 1.0 - off;
    }
    MixingMatrix::from_dense(n, weights)
}

/// Exact averaging: every entry `1/n`, `lambda2 = 0`.
pub fn uniform_complete_weights(n: usize) -> Result<MixingMatrix> {
    if n == 0 {
        return Err(Error::InvalidTopology("need at least one agent".into()));
    }
    let w = 1.0 / n as f64;
    Ok(MixingMatrix::assemble(n, vec![w; n * n], 0.0))
}

/// Largest `|lambda|` once the consensus eigenvalue (the one nearest 1) is
/// removed from the spectrum.
fn second_eigenvalue_magnitude(n: usize, weights: &[f64]) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, weights));
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let (top, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .expect("n > 1");
    values.swap_remove(top);
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).min(1.0)
}

/// Topology as described in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub weights: WeightRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Complete,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    Metropolis,
    /// `1/n` everywhere; only meaningful on the complete graph.
    Uniform,
}

impl TopologySpec {
    pub fn graph(&self) -> Result<Graph> {
        match self.kind {
            // A one-agent "ring" is the singleton.
            TopologyKind::Ring if self.n == 1 => build_complete(1),
            TopologyKind::Ring => build_ring(self.n),
            TopologyKind::Complete => build_complete(self.n),
        }
    }

    pub fn mixing(&self) -> Result<MixingMatrix> {
        match self.weights {
            WeightRule::Metropolis => metropolis_weights(&self.graph()?),
            WeightRule::Uniform if self.kind == TopologyKind::Complete || self.n == 1 => {
                uniform_complete_weights(self.n)
            }
            WeightRule::Uniform => Err(Error::InvalidTopology(
                "uniform weights require the complete graph".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Metropolis weights on a ring with n >= 4 are the circulant
    /// (1/3, 1/3, 1/3), whose eigenvalues are 1/3 + 2/3 cos(2 pi k / n).
    fn ring_lambda2_closed_form(n: usize) -> f64 {
        (1..n)
            .map(|k| {
                (1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn ring_neighbors() {
        let g = build_ring(4).unwrap();
        assert_eq!(g.neighbors(0), &[1, 3]);
        let g = build_ring(2).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.edge_count(), 1);
        let g = build_ring(9).unwrap();
        assert!((0..9).all(|i| g.degree(i) == 2));
        assert!(g.is_connected());
    }

    #[test]
    fn ring_rejects_small_n() {
        assert!(matches!(build_ring(1), Err(Error::InvalidTopology(_))));
        assert!(matches!(build_ring(0), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn complete_graphs() {
        assert_eq!(build_complete(3).unwrap().edge_count(), 3);
        assert_eq!(build_complete(1).unwrap().edge_count(), 0);
        let g = build_complete(5).unwrap();
        assert!((0..5).all(|i| g.degree(i) == 4));
    }

    #[test]
    fn metropolis_on_triangle_is_exact_average() {
        let w = metropolis_weights(&build_ring(3).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((w.weight(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(w.lambda2() < 1e-12);
        assert!((w.p() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metropolis_singleton() {
        let w = metropolis_weights(&build_complete(1).unwrap()).unwrap();
        assert_eq!(w.weight(0, 0), 1.0);
        assert_eq!(w.lambda2(), 0.0);
        assert_eq!(w.p(), 1.0);
    }

    #[test]
    fn metropolis_ring4_golden() {
        // Spectrum of circ(1/3, 1/3, 0, 1/3) is {1, 1/3, 1/3, -1/3}.
        let w = metropolis_weights(&build_ring(4).unwrap()).unwrap();
        assert!((w.lambda2() - 1.0 / 3.0).abs() < 1e-12, "{}", w.lambda2());
        assert!((w.p() - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn ring_lambda2_matches_circulant_spectrum() {
        for n in 4..=32 {
            let w = metropolis_weights(&build_ring(n).unwrap()).unwrap();
            assert!((w.lambda2() - ring_lambda2_closed_form(n)).abs() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn ring_lambda2_nondecreasing_and_below_one() {
        let mut prev = 0.0;
        for n in 3..=32 {
            let w = metropolis_weights(&build_ring(n).unwrap()).unwrap();
            assert!(w.lambda2() < 1.0);
            assert!(w.lambda2() + 1e-12 >= prev, "n = {n}");
            prev = w.lambda2();
        }
    }

    #[test]
    fn metropolis_rejects_disconnected() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(metropolis_weights(&g), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn metropolis_support_follows_graph() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
        let w = metropolis_weights(&g).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j && !g.has_edge(i, j) {
                    assert_eq!(w.weight(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn uniform_weights() {
        let w = uniform_complete_weights(8).unwrap();
        assert!((0..8).all(|i| (0..8).all(|j| w.weight(i, j) == 0.125)));
        assert_eq!(uniform_complete_weights(1).unwrap().weight(0, 0), 1.0);
        let w = uniform_complete_weights(2).unwrap();
        assert_eq!(w.as_dense(), DMatrix::from_element(2, 2, 0.5));
        assert_eq!(w.lambda2(), 0.0);
        assert_eq!(w.p(), 1.0);
    }

    #[test]
    fn eigen_residual_is_small() {
        let w = metropolis_weights(&build_ring(7).unwrap()).unwrap();
        let dense = w.as_dense();
        let eig = SymmetricEigen::new(dense.clone());
        for k in 0..7 {
            let v = eig.eigenvectors.column(k);
            let r = &dense * v - v * eig.eigenvalues[k];
            assert!(r.norm() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trips_through_parse() {
        let w = metropolis_weights(&build_ring(5).unwrap()).unwrap();
        let csv = w.to_csv();
        let parsed: Vec<f64> = csv
            .lines()
            .flat_map(|l| l.split(',').map(|s| s.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect();
        assert_eq!(parsed.len(), 25);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(parsed[i * 5 + j], w.weight(i, j));
            }
        }
    }

    #[test]
    fn uniform_rule_requires_complete() {
        let spec = TopologySpec {
            kind: TopologyKind::Ring,
            n: 4,
            weights: WeightRule::Uniform,
        };
        assert!(spec.mixing().is_err());
    }
}
