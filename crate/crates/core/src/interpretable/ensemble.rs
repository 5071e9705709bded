//! Bagged and boosted tree ensembles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{cart_fit, grow_tree, GrowParams};
use super::{Design, InterpretableError, RegressionTree};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Combination {
    /// Average of member predictions.
    Mean,
    /// `base + shrinkage * sum of member predictions`.
    Boosted { base: f64, shrinkage: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub trees: Vec<RegressionTree>,
    pub rule: Combination,
}

impl Ensemble {
    pub fn mean_of(trees: Vec<RegressionTree>) -> Self {
        Ensemble {
            trees,
            rule: Combination::Mean,
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        match self.rule {
            Combination::Mean => sum / self.trees.len() as f64,
            Combination::Boosted { base, shrinkage } => base + shrinkage * sum,
        }
    }
}

/// Bootstrap-aggregated CART with `ceil(sqrt(p))` candidate features per split.
pub fn random_forest_fit(design: &Design, n_trees: usize, max_depth: usize, min_leaf: usize, seed: u64) -> Result<Ensemble, InterpretableError> {
    design.check()?;
    if design.len() < 2 {
        return Err(InterpretableError::TooFewSamples { needed: 2, got: design.len() });
    }
    if n_trees == 0 || min_leaf == 0 {
        return Err(InterpretableError::InvalidSpec("random forest needs n_trees >= 1 and min_leaf >= 1".into()));
    }
    let n = design.len();
    let max_features = (design.n_features() as f64).sqrt().ceil() as usize;
    let params = GrowParams {
        max_depth,
        min_leaf,
        max_features: Some(max_features.max(1)),
    };
    let trees = (0..n_trees as u64)
        .map(|k| {
            let mut rng = seed::rng(seed::derive(seed, "forest-tree", k));
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(design, &mut idx, params, Some(&mut rng))
        })
        .collect();
    Ok(Ensemble::mean_of(trees))
}

/// Least-squares boosting: each round fits CART to the current residuals.
pub fn gbm_fit(design: &Design, n_rounds: usize, shrinkage: f64, max_depth: usize) -> Result<Ensemble, InterpretableError> {
    design.check()?;
    if !(shrinkage > 0.0 && shrinkage <= 1.0) {
        return Err(InterpretableError::InvalidSpec("shrinkage must lie in (0, 1]".into()));
    }
    let base = design.mean_y();
    let mut fitted = vec![base; design.len()];
    let mut trees = Vec::with_capacity(n_rounds);
    let mut residuals = design.clone();
    for _ in 0..n_rounds {
        for ((r, y), f) in residuals.y.iter_mut().zip(&design.y).zip(&fitted) {
            *r = y - f;
        }
        let tree = cart_fit(&residuals, max_depth, 1)?;
        for (f, row) in fitted.iter_mut().zip(&design.rows) {
            *f += shrinkage * tree.predict(row);
        }
        trees.push(tree);
    }
    Ok(Ensemble {
        trees,
        rule: Combination::Boosted { base, shrinkage },
    })
}
