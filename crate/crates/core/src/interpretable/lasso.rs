//! L1-regularized least squares by cyclic coordinate descent.

use serde::{Deserialize, Serialize};

use super::{Design, InterpretableError};

/// Stop when no standardized coefficient moves more than this in a sweep.
pub const LASSO_TOL: f64 = 1e-8;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    /// Original-scale coefficients.
    pub coefficients: Vec<f64>,
    pub feature_means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant feature.
    pub feature_scales: Vec<f64>,
    pub standardized_coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(features).map(|(c, x)| c * x).sum::<f64>()
    }
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Solver state over standardized columns for
/// `(1/2n) |y_c - Z b|^2 + lambda |b|_1`.
pub struct CoordinateDescent {
    columns: Vec<Vec<f64>>,
    active: Vec<bool>,
    residual: Vec<f64>,
    pub beta: Vec<f64>,
    lambda: f64,
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
}

impl CoordinateDescent {
    pub fn new(design: &Design, lambda: f64) -> Result<Self, InterpretableError> {
        design.check()?;
        let n = design.len() as f64;
        let p = design.n_features();
        let y_mean = design.mean_y();
        let mut columns = Vec::with_capacity(p);
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        let mut active = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = design.rows.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let is_active = sd > 1e-12 * (1.0 + mean.abs());
            let z = if is_active { col.iter().map(|v| (v - mean) / sd).collect() } else { vec![0.0; col.len()] };
            columns.push(z);
            means.push(mean);
            scales.push(if is_active { sd } else { 0.0 });
            active.push(is_active);
        }
        Ok(CoordinateDescent {
            columns,
            active,
            residual: design.y.iter().map(|y| y - y_mean).collect(),
            beta: vec![0.0; p],
            lambda,
            means,
            scales,
            y_mean,
        })
    }

    /// One cyclic pass; returns the largest coefficient change.
    pub fn sweep(&mut self) -> f64 {
        let n = self.residual.len() as f64;
        let mut max_change: f64 = 0.0;
        for j in 0..self.beta.len() {
            if !self.active[j] {
                continue;
            }
            let z = &self.columns[j];
            let old = self.beta[j];
            let rho = z.iter().zip(&self.residual).map(|(a, r)| a * r).sum::<f64>() / n + old;
            let new = soft_threshold(rho, self.lambda);
            if new != old {
                let delta = new - old;
                for (r, a) in self.residual.iter_mut().zip(z) {
                    *r -= a * delta;
                }
                self.beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Current value of the penalized objective.
    pub fn objective(&self) -> f64 {
        let n = self.residual.len() as f64;
        self.residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * n) + self.lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    pub fn model(&self) -> LinearModel {
        let coefficients: Vec<f64> = self
            .beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean - coefficients.iter().zip(&self.means).map(|(c, m)| c * m).sum::<f64>();
        LinearModel {
            intercept,
            coefficients,
            feature_means: self.means.clone(),
            feature_scales: self.scales.clone(),
            standardized_coefficients: self.beta.clone(),
        }
    }
}

pub fn lasso_fit(design: &Design, lambda: f64) -> Result<LinearModel, InterpretableError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(InterpretableError::InvalidSpec("lambda must be finite and nonnegative".into()));
    }
    let mut cd = CoordinateDescent::new(design, lambda)?;
    for _ in 0..LASSO_MAX_SWEEPS {
        if cd.sweep() < LASSO_TOL {
            return Ok(cd.model());
        }
    }
    Err(InterpretableError::NotConverged {
        sweeps: LASSO_MAX_SWEEPS,
        coefficients: cd.model().coefficients,
    })
}
