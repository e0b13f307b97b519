//! Step-size caps and convergence bounds for overlapping local DSGD,
//! evaluated as plain arithmetic so runs can be checked against them.
//!
//! Notation: `L` smoothness; `(sigma2, M)` bound the average gradient noise
//! by `sigma2 + (M/n) sum_i |grad f_i(x_i)|^2`; `(zeta2, P)` bound the
//! average heterogeneity by `zeta2 + P |grad f(x)|^2`; `p = 1 - lambda2^2`
//! is the spectral constant.
//! Caps whose denominator contains `M` are treated as `+inf` when `M = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub l: f64,
    pub sigma2: f64,
    pub m: f64,
    pub zeta2: f64,
    /// Multiplicative heterogeneity constant `P`.
    pub p_het: f64,
    /// Spectral constant `p = 1 - lambda2^2`.
    pub p: f64,
    pub tau: usize,
    pub n: usize,
    /// `f(x_bar^0)`.
    pub f0: f64,
    pub fstar: f64,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConstants(what.to_string()));
        if !(self.l.is_finite() && self.l > 0.0) {
            return bad("L must be positive");
        }
        if !(self.p.is_finite() && self.p > 0.0 && self.p <= 1.0) {
            return bad("spectral constant p must lie in (0, 1]");
        }
        if self.tau == 0 || self.n == 0 {
            return bad("tau and n must be >= 1");
        }
        for (name, v) in [
            ("sigma2", self.sigma2),
            ("M", self.m),
            ("zeta2", self.zeta2),
            ("P", self.p_het),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConstants(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.f0.is_finite() && self.fstar.is_finite()) {
            return bad("f0 and f* must be finite");
        }
        Ok(())
    }

    fn two_tau_m(&self) -> f64 {
        2.0 * self.tau as f64 + self.m
    }

    /// `C = 12 (2 tau + M) n (P + 1) / p`.
    pub fn c(&self) -> f64 {
        12.0 * self.two_tau_m() * self.n as f64 * (self.p_het + 1.0) / self.p
    }

    /// `D = 6 ((2 tau + M) n zeta2 + n sigma2) / p`.
    pub fn d(&self) -> f64 {
        let n = self.n as f64;
        6.0 * (self.two_tau_m() * n * self.zeta2 + n * self.sigma2) / self.p
    }
}

/// The five individual step-size caps, in the order they are usually listed.
pub fn step_size_caps(tc: &TheoryConstants) -> Result<[f64; 5]> {
    tc.validate()?;
    let (l, n, tau, p) = (tc.l, tc.n as f64, tc.tau as f64, tc.p);
    let over_m = |num: f64| if tc.m == 0.0 { f64::INFINITY } else { num / tc.m };
    Ok([
        1.0 / l,
        over_m(n / (4.0 * l * (tc.p_het + 1.0))),
        over_m(n / l),
        p / (16.0 * l * (3.0 * tau * tc.two_tau_m()).sqrt()),
        (p * n / (2.0 * tc.c() * tau)).sqrt() / (32.0 * l),
    ])
}

/// Largest step size for which the bound of [`theorem1_rhs`] is guaranteed.
pub fn max_step_size(tc: &TheoryConstants) -> Result<f64> {
    Ok(step_size_caps(tc)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Right-hand side of the bound on `(1/T) sum_t E|grad f(x_bar^t)|^2`,
/// without checking the step-size precondition.
pub fn theorem1_rhs_unchecked(tc: &TheoryConstants, alpha: f64, t: u64) -> Result<f64> {
    tc.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) || t == 0 {
        return Err(Error::InvalidConstants("need alpha > 0 and T >= 1".into()));
    }
    let (l, n, tau, p) = (tc.l, tc.n as f64, tc.tau as f64, tc.p);
    let descent = 8.0 * (tc.f0 - tc.fstar) / (alpha * t as f64);
    let noise = 8.0 * alpha * l / n * (tc.sigma2 / 2.0 + tc.m * tc.zeta2);
    let consensus = 1024.0 * l * l / n * tc.d() * tau / p * alpha * alpha;
    Ok(descent + noise + consensus)
}

/// As [`theorem1_rhs_unchecked`], but refuses step sizes above
/// [`max_step_size`].
pub fn theorem1_rhs(tc: &TheoryConstants, alpha: f64, t: u64) -> Result<f64> {
    let cap = max_step_size(tc)?;
    if alpha > cap {
        return Err(Error::StepSizeTooLarge { alpha, cap });
    }
    theorem1_rhs_unchecked(tc, alpha, t)
}

/// Smallest horizon `T` for which `alpha = sqrt(n / T)` satisfies every cap.
pub fn corollary1_min_t(tc: &TheoryConstants) -> Result<u64> {
    tc.validate()?;
    let (l, n, tau, p, m) = (tc.l, tc.n as f64, tc.tau as f64, tc.p, tc.m);
    let l2 = l * l;
    let ph1 = tc.p_het + 1.0;
    let terms = [
        n * l2,
        16.0 * l2 * m * m * ph1 * ph1 / n,
        l2 * m * m / n,
        768.0 * n * l2 * tau * tc.two_tau_m() / (p * p),
        24576.0 * n * l2 * tau * tc.two_tau_m() * ph1 / (p * p),
    ];
    let max = terms.into_iter().fold(0.0, f64::max);
    if max > u64::MAX as f64 {
        return Err(Error::InvalidConstants("minimum horizon overflows".into()));
    }
    Ok(max.ceil() as u64)
}
