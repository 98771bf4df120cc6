//! Spline bases: natural cubic splines for the longitudinal time effect and
//! clamped B-splines for the log baseline hazard.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knot set of a natural cubic spline (no intercept column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSplineSpec {
    pub internal_knots: Vec<f64>,
    pub boundary_knots: (f64, f64),
}

/// Knot set of a clamped B-spline basis of the given degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineSpec {
    pub degree: usize,
    pub internal_knots: Vec<f64>,
    pub boundary: (f64, f64),
}

fn check_knots(internal: &[f64], lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("invalid boundary knots ({lo}, {hi})")));
    }
    if let (Some(first), Some(last)) = (internal.first(), internal.last()) {
        if !(lo < *first && *last < hi) {
            return Err(Error::Config(format!(
                "internal knots must lie strictly inside ({lo}, {hi})"
            )));
        }
    }
    if internal.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("internal knots must be strictly increasing".into()));
    }
    Ok(())
}

impl NaturalSplineSpec {
    pub fn validate(&self) -> Result<()> {
        check_knots(&self.internal_knots, self.boundary_knots.0, self.boundary_knots.1)
    }

    pub fn dimension(&self) -> usize {
        self.internal_knots.len() + 1
    }
}

impl BSplineSpec {
    pub fn validate(&self) -> Result<()> {
        check_knots(&self.internal_knots, self.boundary.0, self.boundary.1)
    }

    pub fn dimension(&self) -> usize {
        self.internal_knots.len() + self.degree + 1
    }

    /// Knot vector with each boundary knot repeated `degree + 1` times.
    pub fn augmented_knots(&self) -> Vec<f64> {
        clamped_knots(self.degree, &self.internal_knots, self.boundary)
    }
}

fn clamped_knots(degree: usize, internal: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    let mut k = Vec::with_capacity(internal.len() + 2 * (degree + 1));
    k.extend(std::iter::repeat_n(lo, degree + 1));
    k.extend_from_slice(internal);
    k.extend(std::iter::repeat_n(hi, degree + 1));
    k
}

/// Index `mu` of the non-degenerate knot span containing `x`; the right end
/// of the knot vector belongs to the last non-degenerate span.
fn find_span(knots: &[f64], x: f64) -> usize {
    let last = knots.len() - 1;
    let mut hi_span = last;
    while hi_span > 0 && !(knots[hi_span - 1] < knots[hi_span]) {
        hi_span -= 1;
    }
    let hi_span = hi_span.saturating_sub(1);
    if x >= knots[hi_span + 1] {
        return hi_span;
    }
    // partition_point gives the first knot strictly greater than x
    let upper = knots.partition_point(|&k| k <= x);
    upper.saturating_sub(1).min(hi_span)
}

/// Values of all `knots.len() - degree - 1` basis functions at `x`,
/// written into `out` (triangular Cox-de Boor scheme).
pub(crate) fn bspline_values(knots: &[f64], degree: usize, x: f64, out: &mut [f64]) {
    let nb = knots.len() - degree - 1;
    debug_assert_eq!(out.len(), nb);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mu = find_span(knots, x);
    let mut n = [0.0f64; 16];
    let mut left = [0.0f64; 16];
    let mut right = [0.0f64; 16];
    assert!(degree < 15, "degree too large");
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[mu + 1 - j];
        right[j] = knots[mu + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for r in 0..=degree {
        let idx = mu as isize - degree as isize + r as isize;
        if idx >= 0 && (idx as usize) < nb {
            out[idx as usize] = n[r];
        }
    }
}

/// `order`-th derivative of every basis function at `x`.
pub(crate) fn bspline_derivatives(knots: &[f64], degree: usize, x: f64, order: usize) -> Vec<f64> {
    let nb = knots.len() - degree - 1;
    if order == 0 {
        let mut out = vec![0.0; nb];
        bspline_values(knots, degree, x, &mut out);
        return out;
    }
    if order > degree {
        return vec![0.0; nb];
    }
    let lower = bspline_derivatives(knots, degree - 1, x, order - 1);
    let p = degree as f64;
    (0..nb)
        .map(|i| {
            let d1 = knots[i + degree] - knots[i];
            let d2 = knots[i + degree + 1] - knots[i + 1];
            let a = if d1 > 0.0 { lower[i] / d1 } else { 0.0 };
            let b = if d2 > 0.0 { lower[i + 1] / d2 } else { 0.0 };
            p * (a - b)
        })
        .collect()
}

/// Evaluate the B-spline basis `B_1(t)..B_dim(t)`.
///
/// Returns a domain error when `t` lies outside the boundary.
pub fn bspline_basis(t: f64, spec: &BSplineSpec) -> Result<Vec<f64>> {
    BSplineBasis::new(spec.clone())?.eval(t)
}

/// Precomputed B-spline basis.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    spec: BSplineSpec,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(spec: BSplineSpec) -> Result<Self> {
        spec.validate()?;
        let knots = spec.augmented_knots();
        Ok(Self { spec, knots })
    }

    pub fn spec(&self) -> &BSplineSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.spec.boundary;
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain(format!("t = {t} outside B-spline boundary [{lo}, {hi}]")));
        }
        let mut out = vec![0.0; self.dimension()];
        bspline_values(&self.knots, self.spec.degree, t, &mut out);
        Ok(out)
    }

    /// Evaluate after clamping `t` into the boundary interval.
    pub fn eval_clamped_into(&self, t: f64, out: &mut [f64]) {
        let (lo, hi) = self.spec.boundary;
        bspline_values(&self.knots, self.spec.degree, t.clamp(lo, hi), out);
    }

    pub fn eval_clamped(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.eval_clamped_into(t, &mut out);
        out
    }
}

/// Natural cubic spline basis row at `t` (dimension `internal_knots + 1`).
pub fn natural_cubic_basis(t: f64, spec: &NaturalSplineSpec) -> Result<Vec<f64>> {
    Ok(NaturalSplineBasis::new(spec.clone())?.eval(t))
}

/// Natural cubic spline basis without intercept column.
///
/// Built from the cubic B-spline basis on the clamped knot vector: the first
/// column is dropped and the remaining columns are projected onto the null
/// space of the second-derivative constraints at both boundary knots using the
/// trailing columns of a Householder QR factor. Outside the boundary each
/// function continues linearly.
#[derive(Debug, Clone)]
pub struct NaturalSplineBasis {
    spec: NaturalSplineSpec,
    knots: Vec<f64>,
    /// (K+3) x (K+1), row-major.
    projection: Vec<f64>,
}

impl NaturalSplineBasis {
    pub fn new(spec: NaturalSplineSpec) -> Result<Self> {
        spec.validate()?;
        let knots = clamped_knots(3, &spec.internal_knots, spec.boundary_knots);
        let (lo, hi) = spec.boundary_knots;
        let m = spec.internal_knots.len() + 3;
        let c_lo = bspline_derivatives(&knots, 3, lo, 2);
        let c_hi = bspline_derivatives(&knots, 3, hi, 2);
        // constraint matrix transposed: m x 2
        let mut a = vec![0.0; m * 2];
        for r in 0..m {
            a[r * 2] = c_lo[r + 1];
            a[r * 2 + 1] = c_hi[r + 1];
        }
        let q = householder_q(&mut a, m, 2);
        let k1 = m - 2;
        let mut projection = vec![0.0; m * k1];
        for r in 0..m {
            for c in 0..k1 {
                projection[r * k1 + c] = q[r * m + c + 2];
            }
        }
        Ok(Self { spec, knots, projection })
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    fn raw(&self, t: f64) -> Vec<f64> {
        let (lo, hi) = self.spec.boundary_knots;
        if t < lo || t > hi {
            let edge = if t < lo { lo } else { hi };
            let v = bspline_derivatives(&self.knots, 3, edge, 0);
            let d = bspline_derivatives(&self.knots, 3, edge, 1);
            v.iter().zip(&d).map(|(v, d)| v + (t - edge) * d).collect()
        } else {
            bspline_derivatives(&self.knots, 3, t, 0)
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let raw = self.raw(t);
        let m = raw.len() - 1;
        let k1 = self.dimension();
        let mut out = vec![0.0; k1];
        for r in 0..m {
            let v = raw[r + 1];
            if v != 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += v * self.projection[r * k1 + c];
                }
            }
        }
        out
    }
}

/// Full orthogonal factor Q (m x m, row-major) of the Householder QR of the
/// m x n row-major matrix `a` (overwritten).
fn householder_q(a: &mut [f64], m: usize, n: usize) -> Vec<f64> {
    let mut q = vec![0.0; m * m];
    for i in 0..m {
        q[i * m + i] = 1.0;
    }
    for k in 0..n.min(m) {
        let norm = (k..m).map(|r| a[r * n + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = a[k * n + k];
        let beta = if alpha >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; m];
        v[k] = alpha - beta;
        for r in k + 1..m {
            v[r] = a[r * n + k];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        // A <- H A
        for c in 0..n {
            let dot: f64 = (k..m).map(|r| v[r] * a[r * n + c]).sum();
            let f = 2.0 * dot / vtv;
            for r in k..m {
                a[r * n + c] -= f * v[r];
            }
        }
        // Q <- Q H
        for r in 0..m {
            let dot: f64 = (k..m).map(|c| q[r * m + c] * v[c]).sum();
            let f = 2.0 * dot / vtv;
            for c in k..m {
                q[r * m + c] -= f * v[c];
            }
        }
    }
    q
}

/// Knots at probabilities `j / (count + 1)` of the empirical distribution,
/// using linear interpolation between order statistics.
pub fn knots_from_quantiles(event_times: &[f64], count: usize) -> Result<Vec<f64>> {
    if event_times.is_empty() || count == 0 {
        return Err(Error::Config("quantile knots need data and count >= 1".into()));
    }
    let mut sorted = event_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if count >= distinct.len() {
        return Err(Error::DegenerateKnots(format!(
            "{count} knots requested from {} distinct values",
            distinct.len()
        )));
    }
    let n = sorted.len();
    Ok((1..=count)
        .map(|j| {
            let p = j as f64 / (count + 1) as f64;
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}

/// `count` equally spaced knots strictly inside `(lo, hi)`.
pub fn knots_equidistant(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi - lo) / (count + 1) as f64;
    (1..=count).map(|j| lo + step * j as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive definition, used as an independent check.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let last = knots[knots.len() - 1];
            let in_span = knots[i] <= x && x < knots[i + 1];
            // right end belongs to the last non-degenerate span
            let at_end = x == last && knots[i + 1] == last && knots[i] < knots[i + 1];
            return if in_span || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    fn hazard_spec() -> BSplineSpec {
        BSplineSpec {
            degree: 2,
            internal_knots: knots_equidistant(0.0, 19.25, 8),
            boundary: (0.0, 19.25),
        }
    }

    #[test]
    fn degree_zero_without_knots_is_indicator() {
        let spec = BSplineSpec { degree: 0, internal_knots: vec![], boundary: (0.0, 5.0) };
        for t in [0.0, 1.3, 5.0] {
            assert_eq!(bspline_basis(t, &spec).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn quadratic_with_eight_knots_has_dimension_eleven_and_unit_sum() {
        let spec = hazard_spec();
        assert_eq!(spec.dimension(), 11);
        for k in 1..200 {
            let t = 19.25 * k as f64 / 200.0;
            let row = bspline_basis(t, &spec).unwrap();
            assert_eq!(row.len(), 11);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.iter().filter(|&&v| v != 0.0).count() <= 3);
        }
    }

    #[test]
    fn matches_scalar_recursion() {
        let spec = hazard_spec();
        let knots = spec.augmented_knots();
        for k in 0..100 {
            let t = 19.25 * (k as f64 + 0.37) / 100.0;
            let row = bspline_basis(t, &spec).unwrap();
            for (i, v) in row.iter().enumerate() {
                let oracle = cox_de_boor(&knots, i, 2, t);
                assert!((v - oracle).abs() < 1e-12, "t={t} i={i}: {v} vs {oracle}");
            }
        }
        let end = bspline_basis(19.25, &spec).unwrap();
        assert!((end[10] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outside_boundary_is_domain_error() {
        let spec = hazard_spec();
        assert!(matches!(bspline_basis(-0.1, &spec), Err(Error::Domain(_))));
        assert!(matches!(bspline_basis(20.0, &spec), Err(Error::Domain(_))));
    }

    #[test]
    fn natural_spline_dimension() {
        let spec = NaturalSplineSpec { internal_knots: vec![13.76, 17.62], boundary_knots: (6.0, 21.0) };
        assert_eq!(natural_cubic_basis(15.0, &spec).unwrap().len(), 3);
    }

    #[test]
    fn natural_spline_linear_outside_boundary() {
        let spec = NaturalSplineSpec { internal_knots: vec![13.76, 17.62], boundary_knots: (6.0, 21.0) };
        let ns = NaturalSplineBasis::new(spec).unwrap();
        let eps = 0.5;
        for edge in [21.0, 6.0 - 4.0 * eps] {
            let a = ns.eval(edge + eps);
            let b = ns.eval(edge + 2.0 * eps);
            let c = ns.eval(edge + 3.0 * eps);
            for j in 0..3 {
                assert!((a[j] - 2.0 * b[j] + c[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn natural_spline_smooth_at_knots() {
        let spec = NaturalSplineSpec { internal_knots: vec![13.76, 17.62], boundary_knots: (6.0, 21.0) };
        let ns = NaturalSplineBasis::new(spec).unwrap();
        let h = 1e-4;
        // one-sided four-point stencils are exact on each cubic piece
        let d1 = |f: [f64; 4], s: f64| s * (-11.0 * f[0] + 18.0 * f[1] - 9.0 * f[2] + 2.0 * f[3]) / (6.0 * h);
        let d2 = |f: [f64; 4]| (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h);
        for knot in [6.0, 13.76, 17.62, 21.0] {
            for j in 0..3 {
                let left: [f64; 4] = std::array::from_fn(|k| ns.eval(knot - k as f64 * h)[j]);
                let right: [f64; 4] = std::array::from_fn(|k| ns.eval(knot + k as f64 * h)[j]);
                assert!((d1(left, -1.0) - d1(right, 1.0)).abs() < 1e-6, "first derivative jump at {knot}");
                assert!((d2(left) - d2(right)).abs() < 1e-6, "second derivative jump at {knot}");
            }
        }
    }

    #[test]
    fn quantile_knots() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(knots_from_quantiles(&v, 1).unwrap(), vec![5.0]);
        let k = knots_from_quantiles(&v, 2).unwrap();
        assert!((k[0] - 3.6667).abs() < 1e-4 && (k[1] - 6.3333).abs() < 1e-4);
        assert!(matches!(knots_from_quantiles(&v, 9), Err(Error::DegenerateKnots(_))));
    }

    #[test]
    fn equidistant_knots() {
        assert_eq!(knots_equidistant(0.0, 10.0, 4), vec![2.0, 4.0, 6.0, 8.0]);
    }
}
