//! Gauss-Legendre quadrature on `(0, T)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default node count.
pub const DEFAULT_NODES: usize = 15;

/// Default power of the grading map `s = T u^k`.
pub const DEFAULT_GRADING: u32 = 3;

/// Gauss-Legendre rule on `(-1, 1)` with an optional power grading toward
/// the origin when mapped onto `(0, T)`.
///
/// With grading `k`, the integral over `(0, T)` is computed as
/// `∫_0^1 f(T u^k) k u^(k-1) T du`, which removes the `s^(ξ-1)` endpoint
/// singularity of Weibull-type hazards while keeping polynomials of degree
/// below `2n / k` exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub grading: u32,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(DEFAULT_NODES, DEFAULT_GRADING).expect("default rule")
    }
}

impl QuadratureRule {
    /// `n`-point Gauss-Legendre rule (nodes by Newton iteration on P_n).
    pub fn gauss_legendre(n: usize, grading: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("quadrature needs at least one node".into()));
        }
        if grading == 0 {
            return Err(Error::Config("quadrature grading must be >= 1".into()));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights, grading })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `(0, upper)`.
    pub fn mapped(&self, upper: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let k = self.grading as i32;
        let kf = self.grading as f64;
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| {
            let u = 0.5 * (x + 1.0);
            let s = upper * u.powi(k);
            let jac = 0.5 * upper * kf * u.powi(k - 1);
            (s, w * jac)
        })
    }

    /// Approximate `∫_0^upper f(s) ds`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, upper: f64, mut f: F) -> f64 {
        self.mapped(upper).map(|(s, w)| w * f(s)).sum()
    }
}

/// `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `∫_0^upper exp(log_hazard(s)) ds` for an arbitrary log-hazard function.
///
/// Fails when the integrand is not finite at some node.
pub fn cumulative_hazard_fn<F: FnMut(f64) -> f64>(
    rule: &QuadratureRule,
    upper: f64,
    mut log_hazard: F,
) -> Result<f64> {
    let mut total = 0.0;
    for (s, w) in rule.mapped(upper) {
        let lh = log_hazard(s);
        let h = lh.exp();
        if !h.is_finite() {
            return Err(Error::NonFiniteHazard { subject: usize::MAX, class: usize::MAX, node: s, log_hazard: lh });
        }
        total += w * h;
    }
    Ok(total)
}
