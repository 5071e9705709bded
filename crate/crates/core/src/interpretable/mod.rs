//! Interpretable and ensemble learners over `(x, t, y)` triples.
//!
//! Every learner sees the treatment as one more feature appended after the
//! covariates, so a single fitted model covers both `f(x, 0)` and `f(x, 1)`.

mod ensemble;
mod kernel_ridge;
mod lasso;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Kernel;
use crate::{Arm, PredictError, Predictor};

pub use ensemble::{gbm_fit, random_forest_fit, Combination, Ensemble};
pub use kernel_ridge::{kernel_ridge_fit, KernelModel};
pub use lasso::{lasso_fit, soft_threshold, CoordinateDescent, LinearModel, LASSO_MAX_SWEEPS, LASSO_TOL};
pub use tree::{cart_fit, honest_halves, honest_tree_fit, reestimate_leaves, Node, RegressionTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpretableError {
    #[error("empty dataset")]
    Empty,
    #[error("label {index} is NaN or infinite")]
    NonFiniteLabel { index: usize },
    #[error("feature row {index} is non-finite or has the wrong dimension")]
    BadRow { index: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error("lasso did not converge after {sweeps} sweeps")]
    NotConverged { sweeps: usize, coefficients: Vec<f64> },
    #[error("kernel system is singular")]
    Singular,
    #[error("model io: {0}")]
    Io(String),
}

/// Labeled example `(x, t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub x: Vec<f64>,
    pub t: Arm,
    pub y: f64,
}

/// `x` with the treatment indicator appended.
pub fn encode(x: &[f64], t: Arm) -> Vec<f64> {
    let mut f = Vec::with_capacity(x.len() + 1);
    f.extend_from_slice(x);
    f.push(t.as_f64());
    f
}

/// Feature matrix (row per sample) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Design {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, InterpretableError> {
        let d = Design { rows, y };
        d.check()?;
        Ok(d)
    }

    pub fn from_triples(triples: &[Triple]) -> Result<Self, InterpretableError> {
        Design::new(
            triples.iter().map(|s| encode(&s.x, s.t)).collect(),
            triples.iter().map(|s| s.y).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub(crate) fn check(&self) -> Result<(), InterpretableError> {
        if self.y.is_empty() {
            return Err(InterpretableError::Empty);
        }
        if self.rows.len() != self.y.len() {
            return Err(InterpretableError::BadRow { index: self.rows.len().min(self.y.len()) });
        }
        if let Some(index) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(InterpretableError::NonFiniteLabel { index });
        }
        let p = self.n_features();
        if let Some(index) = self.rows.iter().position(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
            return Err(InterpretableError::BadRow { index });
        }
        Ok(())
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len() as f64
    }
}

/// Learner family and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Cart {
        max_depth: usize,
        min_leaf: usize,
    },
    HonestTree {
        max_depth: usize,
        min_leaf: usize,
        seed: u64,
    },
    Lasso {
        lambda: f64,
    },
    KernelRidge {
        lambda: f64,
        kernel: Kernel,
    },
    RandomForest {
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
        seed: u64,
    },
    Gbm {
        n_rounds: usize,
        shrinkage: f64,
        max_depth: usize,
    },
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<(), InterpretableError> {
        let bad = |m: &str| Err(InterpretableError::InvalidSpec(m.to_string()));
        match *self {
            LearnerSpec::Cart { min_leaf, .. } | LearnerSpec::HonestTree { min_leaf, .. } if min_leaf == 0 => {
                bad("min_leaf must be at least 1")
            }
            LearnerSpec::RandomForest { n_trees, min_leaf, .. } if n_trees == 0 || min_leaf == 0 => {
                bad("random forest needs n_trees >= 1 and min_leaf >= 1")
            }
            LearnerSpec::Lasso { lambda } | LearnerSpec::KernelRidge { lambda, .. } if !(lambda >= 0.0 && lambda.is_finite()) => {
                bad("lambda must be finite and nonnegative")
            }
            LearnerSpec::KernelRidge { kernel, .. } if !kernel.is_valid() => bad("rbf bandwidth must be positive"),
            LearnerSpec::Gbm { shrinkage, .. } if !(shrinkage > 0.0 && shrinkage <= 1.0) => bad("shrinkage must lie in (0, 1]"),
            _ => Ok(()),
        }
    }

    /// Short name used in reports and file names, e.g. `cart_d3`.
    pub fn label(&self) -> String {
        match self {
            LearnerSpec::Cart { max_depth, .. } => format!("cart_d{max_depth}"),
            LearnerSpec::HonestTree { max_depth, .. } => format!("honest_tree_d{max_depth}"),
            LearnerSpec::Lasso { .. } => "lasso".into(),
            LearnerSpec::KernelRidge { .. } => "kernel_ridge".into(),
            LearnerSpec::RandomForest { max_depth, .. } => format!("random_forest_d{max_depth}"),
            LearnerSpec::Gbm { max_depth, .. } => format!("gbm_d{max_depth}"),
        }
    }
}

/// A fitted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum InterpretableModel {
    Tree(RegressionTree),
    Linear(LinearModel),
    Kernel(KernelModel),
    Ensemble(Ensemble),
}

impl InterpretableModel {
    /// Prediction on an already encoded feature row.
    pub fn predict_features(&self, features: &[f64]) -> f64 {
        match self {
            InterpretableModel::Tree(t) => t.predict(features),
            InterpretableModel::Linear(m) => m.predict(features),
            InterpretableModel::Kernel(m) => m.predict(features),
            InterpretableModel::Ensemble(e) => e.predict(features),
        }
    }

    pub fn n_features(&self) -> Option<usize> {
        match self {
            InterpretableModel::Linear(m) => Some(m.coefficients.len()),
            InterpretableModel::Kernel(m) => m.support.first().map(Vec::len),
            _ => None,
        }
    }

    /// Human-readable form: trees as indented rules, linear models as
    /// coefficient lists, others as a short summary.
    pub fn render(&self, covariate_names: &[String]) -> String {
        let mut names = covariate_names.to_vec();
        names.push("t".into());
        match self {
            InterpretableModel::Tree(t) => t.render(&names),
            InterpretableModel::Linear(m) => {
                let mut out = format!("intercept {:.6}\n", m.intercept);
                for (i, c) in m.coefficients.iter().enumerate() {
                    if *c != 0.0 {
                        let name = names.get(i).cloned().unwrap_or_else(|| format!("f{i}"));
                        out.push_str(&format!("{name} {c:.6}\n"));
                    }
                }
                out
            }
            InterpretableModel::Kernel(m) => format!("kernel ridge: {} support points, {:?}, lambda {}\n", m.support.len(), m.kernel, m.lambda),
            InterpretableModel::Ensemble(e) => {
                let mut out = format!("ensemble of {} trees ({:?})\n", e.trees.len(), e.rule);
                for (i, t) in e.trees.iter().enumerate() {
                    out.push_str(&format!("# tree {i}\n"));
                    out.push_str(&t.render(&names));
                }
                out
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InterpretableError> {
        serde_json::from_str(text).map_err(|e| InterpretableError::Io(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), InterpretableError> {
        std::fs::write(path, self.to_json()).map_err(|e| InterpretableError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InterpretableError> {
        let text = std::fs::read_to_string(path).map_err(|e| InterpretableError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}

impl Predictor for InterpretableModel {
    fn predict(&self, x: &[f64], t: Arm) -> Result<f64, PredictError> {
        let f = encode(x, t);
        if let Some(p) = self.n_features() {
            if p != f.len() {
                return Err(PredictError::Dimension { expected: p, got: f.len() });
            }
        }
        Ok(self.predict_features(&f))
    }
}

/// Fit `spec` on encoded triples.
pub fn fit(spec: &LearnerSpec, triples: &[Triple]) -> Result<InterpretableModel, InterpretableError> {
    spec.validate()?;
    let design = Design::from_triples(triples)?;
    fit_design(spec, &design)
}

pub fn fit_design(spec: &LearnerSpec, design: &Design) -> Result<InterpretableModel, InterpretableError> {
    spec.validate()?;
    design.check()?;
    Ok(match *spec {
        LearnerSpec::Cart { max_depth, min_leaf } => InterpretableModel::Tree(cart_fit(design, max_depth, min_leaf.min(design.len()))?),
        LearnerSpec::HonestTree { max_depth, min_leaf, seed } => {
            if design.len() == 1 {
                // Nothing to hold out: a one-point sample is its own estimate.
                InterpretableModel::Tree(RegressionTree::constant(design.y[0]))
            } else {
                InterpretableModel::Tree(honest_tree_fit(design, max_depth, min_leaf, seed)?)
            }
        }
        LearnerSpec::Lasso { lambda } => InterpretableModel::Linear(lasso_fit(design, lambda)?),
        LearnerSpec::KernelRidge { lambda, kernel } => InterpretableModel::Kernel(kernel_ridge_fit(design, lambda, kernel)?),
        LearnerSpec::RandomForest {
            n_trees,
            max_depth,
            min_leaf,
            seed,
        } => {
            if design.len() == 1 {
                InterpretableModel::Ensemble(Ensemble::mean_of(vec![RegressionTree::constant(design.y[0])]))
            } else {
                InterpretableModel::Ensemble(random_forest_fit(design, n_trees, max_depth, min_leaf, seed)?)
            }
        }
        LearnerSpec::Gbm {
            n_rounds,
            shrinkage,
            max_depth,
        } => InterpretableModel::Ensemble(gbm_fit(design, n_rounds, shrinkage, max_depth)?),
    })
}
