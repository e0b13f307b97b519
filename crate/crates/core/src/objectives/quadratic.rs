use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::rng;
use crate::vecops;

/// `f_i(x) = s_i/2 x^T A x - b_i^T x` with `A` shared by every agent and
/// per-agent curvature scales `s_i` averaging to one.
///
/// With all `s_i = 1`, `grad f_i - grad f = b_bar - b_i` is constant in `x`, so
/// the heterogeneity bound holds with `P = 0` and
/// `zeta2 = (1/n) sum |b_i - b_bar|^2`. Unequal scales couple the disagreement
/// between agents to the average model and give `P > 0`.
#[derive(Debug, Clone)]
pub struct QuadraticSuite {
    d: usize,
    /// Row-major `d x d`.
    a: Vec<f64>,
    offsets: Vec<Vec<f64>>,
    scales: Vec<f64>,
    mean_offset: Vec<f64>,
    l_max: f64,
    l_min: f64,
    minimizer: Vec<f64>,
    f_star: f64,
}

impl QuadraticSuite {
    /// `a` is row-major `d x d`; one offset vector per agent.
    pub fn new(d: usize, a: Vec<f64>, offsets: Vec<Vec<f64>>) -> Result<Self> {
        let n = offsets.len();
        Self::with_scales(d, a, offsets, vec![1.0; n])
    }

    /// Like [`QuadraticSuite::new`] with curvature scale `scales[i]` on agent
    /// `i`. The scales must be positive and average to one.
    pub fn with_scales(
        d: usize,
        a: Vec<f64>,
        offsets: Vec<Vec<f64>>,
        scales: Vec<f64>,
    ) -> Result<Self> {
        if scales.len() != offsets.len() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("need one positive curvature scale per agent".into()));
        }
        let mean_scale = scales.iter().sum::<f64>() / scales.len() as f64;
        if (mean_scale - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "curvature scales must average to one, got {mean_scale}"
            )));
        }
        if d == 0 || a.len() != d * d {
            return Err(Error::Config(format!("A must be {d}x{d}")));
        }
        if offsets.is_empty() || offsets.iter().any(|b| b.len() != d) {
            return Err(Error::Config("need one offset of length d per agent".into()));
        }
        if !vecops::all_finite(&a) || offsets.iter().any(|b| !vecops::all_finite(b)) {
            return Err(Error::NumericDomain("non-finite quadratic data".into()));
        }
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * scale {
                    return Err(Error::Config("A must be symmetric".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &a));
        let l_max = eig.eigenvalues.max();
        let l_min = eig.eigenvalues.min();
        if l_min < -1e-12 * scale {
            return Err(Error::Config(format!(
                "A must be positive semidefinite (min eigenvalue {l_min})"
            )));
        }
        let mean_offset = vecops::mean(&offsets);

        // x* = A^+ b_bar, using only the range of A.
        let cutoff = 1e-12 * l_max.max(1.0);
        let bbar = DVector::from_column_slice(&mean_offset);
        let mut x = DVector::zeros(d);
        for k in 0..d {
            let v = eig.eigenvectors.column(k);
            let lambda = eig.eigenvalues[k];
            let coeff = v.dot(&bbar);
            if lambda > cutoff {
                x += v * (coeff / lambda);
            } else if coeff.abs() > 1e-9 * bbar.norm().max(1.0) {
                return Err(Error::NumericDomain(
                    "mean offset is outside the range of A; f is unbounded below".into(),
                ));
            }
        }
        let minimizer: Vec<f64> = x.iter().copied().collect();
        let mut suite = Self {
            d,
            a,
            offsets,
            scales,
            mean_offset,
            l_max,
            l_min: l_min.max(0.0),
            minimizer,
            f_star: 0.0,
        };
        suite.f_star = suite.loss(&suite.minimizer);
        Ok(suite)
    }

    /// Seeded synthetic instance; see [`QuadraticSpec`].
    pub fn synthetic(spec: &QuadraticSpec, n: usize) -> Result<Self> {
        let d = spec.d;
        if d == 0 || n == 0 {
            return Err(Error::Config("quadratic needs d >= 1 and n >= 1".into()));
        }
        if !(spec.l_min > 0.0 && spec.l_max >= spec.l_min) {
            return Err(Error::Config(format!(
                "need 0 < l_min <= l_max, got [{}, {}]",
                spec.l_min, spec.l_max
            )));
        }
        if spec.zeta2 < 0.0 || spec.bbar_norm < 0.0 {
            return Err(Error::Config("zeta2 and bbar_norm must be non-negative".into()));
        }
        let mut rng = rng::setup_stream(spec.seed, 1);
        let spectrum: Vec<f64> = if d == 1 {
            vec![spec.l_max]
        } else {
            (0..d)
                .map(|k| spec.l_min + (spec.l_max - spec.l_min) * k as f64 / (d - 1) as f64)
                .collect()
        };
        let a = if spec.rotate && d > 1 {
            let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = g.qr().q();
            let m = &q * DMatrix::from_diagonal(&DVector::from_vec(spectrum)) * q.transpose();
            let sym = (&m + m.transpose()) * 0.5;
            (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| sym[(i, j)])
                .collect()
        } else {
            let mut a = vec![0.0; d * d];
            for (k, l) in spectrum.into_iter().enumerate() {
                a[k * d + k] = l;
            }
            a
        };

        let mut bbar: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let s = vecops::norm(&bbar);
        bbar.iter_mut().for_each(|v| *v *= spec.bbar_norm / s);

        let mut deltas: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let centre = vecops::mean(&deltas);
        for delta in &mut deltas {
            for (v, c) in delta.iter_mut().zip(&centre) {
                *v -= c;
            }
        }
        let spread = deltas.iter().map(|v| vecops::norm_sq(v)).sum::<f64>() / n as f64;
        let scale = if n > 1 && spread > 0.0 {
            (spec.zeta2 / spread).sqrt()
        } else {
            0.0
        };
        let offsets = deltas
            .into_iter()
            .map(|delta| bbar.iter().zip(&delta).map(|(b, v)| b + scale * v).collect())
            .collect();
        if !(0.0..1.0).contains(&spec.curvature_spread) {
            return Err(Error::Config(format!(
                "curvature_spread must lie in [0, 1), got {}",
                spec.curvature_spread
            )));
        }
        // Evenly spaced on [1 - spread, 1 + spread], so the mean is exactly one
        // up to rounding; the middle value is pinned to 1 for odd n.
        let scales: Vec<f64> = (0..n)
            .map(|i| {
                let u = if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
                1.0 + spec.curvature_spread * u
            })
            .collect();
        Self::with_scales(d, a, offsets, scales)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    pub fn mean_offset(&self) -> &[f64] {
        &self.mean_offset
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    /// Smallest eigenvalue of `A` (clamped at zero).
    pub fn l_min(&self) -> f64 {
        self.l_min
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = vecops::dot(&self.a[i * self.d..(i + 1) * self.d], x);
        }
    }
}

impl Objective for QuadraticSuite {
    fn num_agents(&self) -> usize {
        self.offsets.len()
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn local_loss(&self, agent: usize, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.d];
        self.apply(x, &mut ax);
        0.5 * self.scales[agent] * vecops::dot(x, &ax) - vecops::dot(&self.offsets[agent], x)
    }

    fn local_gradient(&self, agent: usize, x: &[f64], out: &mut [f64]) {
        self.apply(x, out);
        let s = self.scales[agent];
        for (o, b) in out.iter_mut().zip(&self.offsets[agent]) {
            *o = s * *o - b;
        }
    }

    fn loss(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.d];
        self.apply(x, &mut ax);
        0.5 * vecops::dot(x, &ax) - vecops::dot(&self.mean_offset, x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.apply(x, out);
        for (o, b) in out.iter_mut().zip(&self.mean_offset) {
            *o -= b;
        }
    }

    fn smoothness(&self) -> f64 {
        self.l_max * self.scales.iter().fold(0.0_f64, |m, &s| m.max(s))
    }

    fn smoothness_is_exact(&self) -> bool {
        true
    }

    fn analytic_heterogeneity(&self) -> Option<(f64, f64)> {
        let n = self.offsets.len();
        let zeta2 = self
            .offsets
            .iter()
            .map(|b| vecops::dist_sq(b, &self.mean_offset))
            .sum::<f64>()
            / n as f64;
        if self.scales.iter().all(|&s| s == 1.0) {
            return Some((zeta2, 0.0));
        }
        // grad f_i - grad f = (s_i - 1)(grad f + b_bar) - (b_i - b_bar); split
        // with |u + v|^2 <= 2|u|^2 + 2|v|^2.
        let var = self.scales.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n as f64;
        let z = self
            .offsets
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| {
                b.iter()
                    .zip(&self.mean_offset)
                    .map(|(bi, m)| ((s - 1.0) * m - (bi - m)).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        Some((2.0 * z, 2.0 * var))
    }

    fn optimum_value(&self) -> f64 {
        self.f_star
    }
}

/// Parameters of a seeded synthetic [`QuadraticSuite`].
///
/// `A` has eigenvalues evenly spaced on `[l_min, l_max]` (optionally rotated
/// by a random orthogonal matrix); the mean offset has norm `bbar_norm`; the
/// per-agent offsets are spread around it so that `zeta2` is hit exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub d: usize,
    #[serde(default = "one")]
    pub l_max: f64,
    #[serde(default = "one")]
    pub l_min: f64,
    #[serde(default)]
    pub zeta2: f64,
    #[serde(default = "one")]
    pub bbar_norm: f64,
    #[serde(default = "yes")]
    pub rotate: bool,
    #[serde(default)]
    pub seed: u64,
    /// Agent curvature scales are spread evenly over `1 -/+ curvature_spread`.
    #[serde(default)]
    pub curvature_spread: f64,
}

impl QuadraticSpec {
    /// Unit spectrum, unit mean offset, homogeneous agents.
    pub fn new(d: usize) -> Self {
        Self {
            d,
            l_max: 1.0,
            l_min: 1.0,
            zeta2: 0.0,
            bbar_norm: 1.0,
            rotate: true,
            seed: 0,
            curvature_spread: 0.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{full_gradient, heterogeneity_constants, smoothness_constant};

    fn identity_suite(offsets: Vec<Vec<f64>>) -> QuadraticSuite {
        let d = offsets[0].len();
        let mut a = vec![0.0; d * d];
        (0..d).for_each(|k| a[k * d + k] = 1.0);
        QuadraticSuite::new(d, a, offsets).unwrap()
    }

    #[test]
    fn gradient_of_half_norm() {
        let s = identity_suite(vec![vec![0.0, 0.0]]);
        assert_eq!(full_gradient(&s, 0, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let s = identity_suite(vec![vec![1.0, 0.0]]);
        assert_eq!(full_gradient(&s, 0, &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_point_is_rejected() {
        let s = identity_suite(vec![vec![0.0, 0.0]]);
        assert!(matches!(
            full_gradient(&s, 0, &[f64::NAN, 0.0]),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn heterogeneity_examples() {
        let s = identity_suite(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let h = heterogeneity_constants(&s);
        assert_eq!((h.zeta2, h.p, h.estimate), (1.0, 0.0, false));
        let s = identity_suite(vec![vec![0.3, 2.0]; 4]);
        assert_eq!(heterogeneity_constants(&s).zeta2, 0.0);
        let s = identity_suite(vec![vec![0.3, 2.0]]);
        let h = heterogeneity_constants(&s);
        assert_eq!((h.zeta2, h.p), (0.0, 0.0));
    }

    #[test]
    fn smoothness_is_top_eigenvalue() {
        let s = QuadraticSuite::new(2, vec![1.0, 0.0, 0.0, 4.0], vec![vec![0.0; 2]]).unwrap();
        assert!((smoothness_constant(&s) - 4.0).abs() < 1e-12);
        let s = identity_suite(vec![vec![0.0; 3]]);
        assert!((smoothness_constant(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minimizer_and_optimum() {
        let s = QuadraticSuite::new(2, vec![2.0, 0.0, 0.0, 4.0], vec![vec![2.0, 4.0], vec![0.0, 0.0]])
            .unwrap();
        // b_bar = (1, 2), x* = (0.5, 0.5), f* = -1/2 b_bar^T x* = -0.75
        assert!(vecops::dist_sq(s.minimizer(), &[0.5, 0.5]) < 1e-24);
        assert!((s.optimum_value() + 0.75).abs() < 1e-12);
    }

    #[test]
    fn singular_a_out_of_range_is_unbounded() {
        let r = QuadraticSuite::new(2, vec![1.0, 0.0, 0.0, 0.0], vec![vec![0.0, 1.0]]);
        assert!(matches!(r, Err(Error::NumericDomain(_))));
        let s = QuadraticSuite::new(2, vec![1.0, 0.0, 0.0, 0.0], vec![vec![1.0, 0.0]]).unwrap();
        assert!((s.optimum_value() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn synthetic_hits_targets() {
        let spec = QuadraticSpec {
            d: 12,
            l_max: 2.0,
            l_min: 0.5,
            zeta2: 1.0,
            bbar_norm: 1.5,
            rotate: true,
            seed: 9,
            curvature_spread: 0.0,
        };
        let s = QuadraticSuite::synthetic(&spec, 8).unwrap();
        assert!((s.smoothness() - 2.0).abs() < 1e-10);
        assert!((s.l_min() - 0.5).abs() < 1e-10);
        let (zeta2, p) = s.analytic_heterogeneity().unwrap();
        assert!((zeta2 - 1.0).abs() < 1e-12);
        assert_eq!(p, 0.0);
        assert!((vecops::norm(s.mean_offset()) - 1.5).abs() < 1e-12);
        let mut g = vec![0.0; 12];
        s.gradient(s.minimizer(), &mut g);
        assert!(vecops::norm(&g) < 1e-10);
    }

    #[test]
    fn curvature_spread_keeps_global_objective() {
        let base = QuadraticSpec {
            d: 5,
            l_min: 0.5,
            zeta2: 0.3,
            seed: 4,
            ..QuadraticSpec::new(5)
        };
        let flat = QuadraticSuite::synthetic(&base, 6).unwrap();
        let spread = QuadraticSuite::synthetic(&QuadraticSpec { curvature_spread: 0.5, ..base }, 6).unwrap();
        assert!((spread.smoothness() - 1.5).abs() < 1e-12);
        let x = [0.3, -1.0, 2.0, 0.1, 0.7];
        assert!((flat.loss(&x) - spread.loss(&x)).abs() < 1e-12);
        // The bound must dominate the realised heterogeneity at any point.
        let (zeta2, p) = spread.analytic_heterogeneity().unwrap();
        assert!(p > 0.0);
        let mut g = vec![0.0; 5];
        let mut gi = vec![0.0; 5];
        for x in [[0.0; 5], x, [5.0, -3.0, 1.0, 0.0, 2.0]] {
            spread.gradient(&x, &mut g);
            let lhs = (0..6)
                .map(|i| {
                    spread.local_gradient(i, &x, &mut gi);
                    vecops::dist_sq(&gi, &g)
                })
                .sum::<f64>()
                / 6.0;
            assert!(lhs <= p * vecops::norm_sq(&g) + zeta2 + 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        assert!(QuadraticSuite::new(2, vec![1.0, 0.5, 0.0, 1.0], vec![vec![0.0; 2]]).is_err());
        assert!(QuadraticSuite::new(2, vec![1.0, 0.0, 0.0, -1.0], vec![vec![0.0; 2]]).is_err());
    }
}
