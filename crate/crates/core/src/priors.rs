//! Prior hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub beta_var: f64,
    pub gamma_var: f64,
    pub gamma_h0_var: f64,
    pub alpha_var: f64,
    pub sigma_y2_shape: f64,
    pub sigma_y2_rate: f64,
    /// Diagonal of the inverse-Wishart scale matrix.
    pub wishart_scale_diag: f64,
    /// Inverse-Wishart degrees of freedom; `None` means the number of
    /// random effects.
    pub wishart_df: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta_var: 1000.0,
            gamma_var: 1000.0,
            gamma_h0_var: 1000.0,
            alpha_var: 100.0,
            sigma_y2_shape: 0.01,
            sigma_y2_rate: 0.01,
            wishart_scale_diag: 0.01,
            wishart_df: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self, q: usize) -> Result<()> {
        let positive = [
            ("beta_var", self.beta_var),
            ("gamma_var", self.gamma_var),
            ("gamma_h0_var", self.gamma_h0_var),
            ("alpha_var", self.alpha_var),
            ("sigma_y2_shape", self.sigma_y2_shape),
            ("sigma_y2_rate", self.sigma_y2_rate),
            ("wishart_scale_diag", self.wishart_scale_diag),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        if self.wishart_df(q) < q as f64 {
            return Err(Error::Config(format!("wishart_df must be >= {q}")));
        }
        Ok(())
    }

    pub fn wishart_df(&self, q: usize) -> f64 {
        self.wishart_df.unwrap_or(q as f64)
    }

    pub fn wishart_scale(&self, q: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(q, q, self.wishart_scale_diag)
    }
}
