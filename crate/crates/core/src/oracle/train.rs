use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::{gradient, loss_and_deriv, Batch};
use super::{CfrModel, OracleError, OutcomeKind};
use crate::data::ObservationalDataset;
use crate::kernel::Kernel;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent with a fixed step.
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the balancing penalty.
    pub alpha: f64,
    pub kernel: Kernel,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weights start uniform in `[-scale, scale]`; biases start at zero.
    pub weight_init_scale: f64,
    /// Representation widths after the input layer; the last entry is the
    /// representation dimension.
    pub phi_widths: Vec<usize>,
    /// Hidden widths of each head (the output unit is implicit).
    pub head_hidden: Vec<usize>,
    pub outcome: OutcomeKind,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            kernel: Kernel::Linear,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            weight_init_scale: 0.3,
            phi_widths: vec![32, 32, 16],
            head_hidden: vec![16],
            outcome: OutcomeKind::Regression,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: &str| Err(OracleError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and nonnegative");
        }
        if !self.kernel.is_valid() {
            return bad("rbf bandwidth must be positive");
        }
        if self.phi_widths.is_empty() || self.phi_widths.contains(&0) || self.head_hidden.contains(&0) {
            return bad("layer widths must be positive and phi needs at least one layer");
        }
        if !(self.weight_init_scale >= 0.0 && self.weight_init_scale.is_finite()) {
            return bad("weight_init_scale must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn widths(&self, d: usize) -> (Vec<usize>, Vec<usize>) {
        let mut phi = vec![d];
        phi.extend(&self.phi_widths);
        let mut head = vec![*self.phi_widths.last().expect("validated")];
        head.extend(&self.head_hidden);
        head.push(1);
        (phi, head)
    }
}

/// Per-epoch validation losses; entry 0 is the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean unweighted factual loss (squared error or cross-entropy).
pub fn factual_loss(model: &CfrModel, ds: &ObservationalDataset) -> Result<f64, OracleError> {
    if ds.is_empty() {
        return Err(OracleError::EmptySet("evaluation"));
    }
    let mut total = 0.0;
    for u in ds.units() {
        let r = model.represent(&u.x)?;
        let z = model.head_output(&r, u.t)?;
        total += loss_and_deriv(model.outcome_kind, z, u.y_factual).0;
    }
    Ok(total / ds.len() as f64)
}

/// Stratified minibatches: each arm is shuffled and dealt into the same number
/// of batches, so every batch holds both arms.
fn arm_batches<R: rand::Rng>(ds: &ObservationalDataset, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, u) in ds.units().iter().enumerate() {
        arms[u.t.index()].push(i);
    }
    arms.iter_mut().for_each(|a| a.shuffle(rng));
    let n_batches = ((ds.len() as f64 / batch_size as f64).round() as usize)
        .max(1)
        .min(arms[0].len())
        .min(arms[1].len());
    let mut batches = vec![Vec::new(); n_batches];
    for arm in &arms {
        for (k, chunk) in batches.iter_mut().enumerate() {
            let lo = k * arm.len() / n_batches;
            let hi = (k + 1) * arm.len() / n_batches;
            chunk.extend_from_slice(&arm[lo..hi]);
        }
    }
    batches
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

pub fn train_oracle(train: &ObservationalDataset, valid: &ObservationalDataset, cfg: &TrainConfig) -> Result<CfrModel, OracleError> {
    train_oracle_with_history(train, valid, cfg).map(|(m, _)| m)
}

/// Train from a seeded initialization and return the snapshot with the
/// lowest validation factual loss.
pub fn train_oracle_with_history(
    train: &ObservationalDataset,
    valid: &ObservationalDataset,
    cfg: &TrainConfig,
) -> Result<(CfrModel, TrainHistory), OracleError> {
    cfg.validate()?;
    if !train.has_both_arms() {
        return Err(OracleError::MissingArm);
    }
    if valid.is_empty() {
        return Err(OracleError::EmptySet("validation"));
    }
    let mut rng = seed::rng(cfg.seed);
    let (phi_w, head_w) = cfg.widths(train.d());
    let mut model = CfrModel::random(&phi_w, &head_w, cfg.outcome, cfg.kernel, cfg.weight_init_scale, &mut rng);

    let mut best = model.clone();
    let mut best_loss = factual_loss(&model, valid)?;
    let mut history = TrainHistory {
        validation_loss: vec![best_loss],
        best_epoch: 0,
    };
    let n_params = model.n_params();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        step: 0,
    };
    let mut params = model.flat_params();

    for epoch in 1..=cfg.epochs {
        for idx in arm_batches(train, cfg.batch_size, &mut rng) {
            let batch: Vec<Batch> = idx.iter().map(|&i| Batch::from(&train.units()[i])).collect();
            let g = gradient(&model, &batch, cfg)?.flat();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, gi) in params.iter_mut().zip(&g) {
                        *p -= cfg.learning_rate * gi;
                    }
                }
                Optimizer::Adam { beta1, beta2 } => {
                    adam.step += 1;
                    let c1 = 1.0 - beta1.powi(adam.step);
                    let c2 = 1.0 - beta2.powi(adam.step);
                    for (k, (p, gi)) in params.iter_mut().zip(&g).enumerate() {
                        adam.m[k] = beta1 * adam.m[k] + (1.0 - beta1) * gi;
                        adam.v[k] = beta2 * adam.v[k] + (1.0 - beta2) * gi * gi;
                        *p -= cfg.learning_rate * (adam.m[k] / c1) / ((adam.v[k] / c2).sqrt() + 1e-8);
                    }
                }
            }
            model.set_flat_params(&params);
        }
        let loss = match factual_loss(&model, valid) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Err(OracleError::Divergence { epoch, loss: l }),
            Err(_) => return Err(OracleError::Divergence { epoch, loss: f64::NAN }),
        };
        history.validation_loss.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = model.clone();
            history.best_epoch = epoch;
        }
    }
    Ok((best, history))
}
