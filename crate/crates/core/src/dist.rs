//! Log densities and samplers for the conjugate blocks.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// Inverse-gamma log density with shape/rate parameterization.
pub fn inv_gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Log multivariate gamma function `ln Γ_p(a)`.
pub fn ln_mvgamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..p).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

/// Inverse-Wishart log density, `Σ ~ W⁻¹(scale, df)`.
pub fn inv_wishart_logpdf(sigma: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let p = sigma.nrows();
    let pf = p as f64;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart argument".into()))?;
    let logdet_sigma = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet_scale = 2.0
        * scale
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?
            .l()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let trace = (scale * chol.inverse()).trace();
    Ok(0.5 * df * logdet_scale
        - 0.5 * df * pf * 2f64.ln()
        - ln_mvgamma(p, 0.5 * df)
        - 0.5 * (df + pf + 1.0) * logdet_sigma
        - 0.5 * trace)
}

/// Dirichlet log density; zero for a single class.
pub fn dirichlet_logpdf(pi: &[f64], a: &[f64]) -> f64 {
    if pi.len() < 2 {
        return 0.0;
    }
    let total: f64 = a.iter().sum();
    ln_gamma(total) - a.iter().map(|&x| ln_gamma(x)).sum::<f64>()
        + pi.iter().zip(a).map(|(&p, &x)| (x - 1.0) * p.ln()).sum::<f64>()
}

/// Multivariate normal log density `N(b; 0, Σ)` via Cholesky.
pub fn mvn_zero_mean_logpdf(b: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", sigma.nrows(), sigma.ncols())))?;
    Ok(mvn_logpdf_chol(b, None, chol.l_dirty()))
}

/// `N(x; mean, L Lᵀ)` given the lower Cholesky factor `l` (upper triangle ignored).
pub fn mvn_logpdf_chol(x: &[f64], mean: Option<&[f64]>, l: &DMatrix<f64>) -> f64 {
    let p = x.len();
    let mut r = [0.0f64; 32];
    let r = &mut r[..p];
    for i in 0..p {
        r[i] = x[i] - mean.map_or(0.0, |m| m[i]);
    }
    // forward substitution L u = r
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for i in 0..p {
        let mut s = r[i];
        for j in 0..i {
            s -= l[(i, j)] * r[j];
        }
        r[i] = s / l[(i, i)];
        quad += r[i] * r[i];
        logdet += l[(i, i)].ln();
    }
    -0.5 * (p as f64 * LN_2PI + quad) - logdet
}

/// Draw `mean + L z`.
pub fn sample_mvn_chol<R: Rng + ?Sized>(rng: &mut R, mean: &[f64], l: &DMatrix<f64>, scale: f64) -> Vec<f64> {
    let p = mean.len();
    let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    (0..p)
        .map(|i| mean[i] + scale * (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
        .collect()
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for small shapes.
pub fn sample_log_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// Draw from `Dirichlet(alpha)`, normalizing gamma variates in log space.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    if alpha.len() == 1 {
        return vec![1.0];
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_log_gamma(rng, a)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let mut pi: Vec<f64> = w.iter().map(|x| x / s).collect();
    // exact unit sum
    let last = pi.len() - 1;
    let head: f64 = pi[..last].iter().sum();
    pi[last] = (1.0 - head).max(0.0);
    pi
}

/// Draw from an inverse gamma with shape/rate parameterization.
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    rate / Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng)
}

/// Draw `Σ ~ W⁻¹(scale, df)` by the Bartlett decomposition of `Σ⁻¹`.
pub fn sample_inv_wishart<R: Rng + ?Sized>(rng: &mut R, df: f64, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= p as f64 - 1.0 {
        return Err(Error::Config(format!("inverse-Wishart needs df > {}, got {df}", p - 1)));
    }
    let scale_inv = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale matrix".into()))?
        .inverse();
    let l = scale_inv
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse of inverse-Wishart scale".into()))?
        .unpack();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi2 = 2.0 * Gamma::new(0.5 * (df - i as f64), 1.0).expect("valid shape").sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let c = l * a;
    let c_inv = c
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::NotPositiveDefinite("singular Bartlett factor".into()))?;
    let sigma = c_inv.transpose() * c_inv;
    Ok((&sigma + sigma.transpose()) * 0.5)
}
