//! Kernel ridge regression in its dual form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Design, InterpretableError};
use crate::kernel::Kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub support: Vec<Vec<f64>>,
    pub dual: Vec<f64>,
    pub kernel: Kernel,
    pub lambda: f64,
    pub y_mean: f64,
}

impl KernelModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.y_mean
            + self
                .support
                .iter()
                .zip(&self.dual)
                .map(|(s, a)| a * self.kernel.eval(features, s))
                .sum::<f64>()
    }

    /// `(K + lambda n I) alpha` evaluated on the support set.
    pub fn system_times_dual(&self) -> Vec<f64> {
        let n = self.support.len() as f64;
        self.support
            .iter()
            .enumerate()
            .map(|(i, si)| {
                self.support.iter().zip(&self.dual).map(|(sj, a)| a * self.kernel.eval(si, sj)).sum::<f64>()
                    + self.lambda * n * self.dual[i]
            })
            .collect()
    }
}

/// Solve `(K + lambda n I) alpha = y - mean(y)`.
pub fn kernel_ridge_fit(design: &Design, lambda: f64, kernel: Kernel) -> Result<KernelModel, InterpretableError> {
    design.check()?;
    if !(lambda >= 0.0 && lambda.is_finite()) || !kernel.is_valid() {
        return Err(InterpretableError::InvalidSpec("kernel ridge needs lambda >= 0 and a valid kernel".into()));
    }
    let n = design.len();
    let y_mean = design.mean_y();
    let centered = DVector::from_iterator(n, design.y.iter().map(|y| y - y_mean));
    let mut system = DMatrix::from_fn(n, n, |i, j| kernel.eval(&design.rows[i], &design.rows[j]));
    for i in 0..n {
        system[(i, i)] += lambda * n as f64;
    }
    let solution = if lambda > 0.0 {
        system.clone().cholesky().map(|c| c.solve(&centered)).or_else(|| system.clone().lu().solve(&centered))
    } else {
        system.clone().lu().solve(&centered)
    };
    let dual = solution.ok_or(InterpretableError::Singular)?;
    if dual.iter().any(|v| !v.is_finite()) {
        return Err(InterpretableError::Singular);
    }
    // A numerically singular system can "solve" without reproducing its right-hand side.
    let residual = (&system * &dual - &centered).amax();
    if residual > 1e-8 * (1.0 + centered.amax()) {
        return Err(InterpretableError::Singular);
    }
    Ok(KernelModel {
        support: design.rows.clone(),
        dual: dual.iter().copied().collect(),
        kernel,
        lambda,
        y_mean,
    })
}
