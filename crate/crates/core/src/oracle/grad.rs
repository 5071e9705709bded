//! Training objective and its reverse-mode gradient.

use super::mmd::{mmd_squared, mmd_squared_grad};
use super::{CfrModel, Mlp, OracleError, OutcomeKind, TrainConfig};
use crate::data::Unit;
use crate::Arm;

/// Added under the square root of the balancing penalty.
pub(crate) const PENALTY_EPS: f64 = 1e-12;

/// One labeled training example.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a [f64],
    pub t: Arm,
    pub y: f64,
}

impl<'a> From<&'a Unit> for Batch<'a> {
    fn from(u: &'a Unit) -> Self {
        Batch {
            x: &u.x,
            t: u.t,
            y: u.y_factual,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Loss of head output `z` against label `y`, and its derivative in `z`.
pub(crate) fn loss_and_deriv(kind: OutcomeKind, z: f64, y: f64) -> (f64, f64) {
    match kind {
        OutcomeKind::Regression => ((z - y) * (z - y), 2.0 * (z - y)),
        // Cross-entropy on the logit.
        OutcomeKind::Binary => (softplus(z) - y * z, crate::datagen::logistic(z) - y),
    }
}

/// Per-example weights balancing the two arms to equal total mass; uniform
/// when the batch holds a single arm.
fn arm_weights(batch: &[Batch]) -> Vec<f64> {
    let n = batch.len() as f64;
    let treated = batch.iter().filter(|s| s.t.is_treated()).count() as f64;
    let u = treated / n;
    if treated == 0.0 || treated == n {
        return vec![1.0; batch.len()];
    }
    batch
        .iter()
        .map(|s| if s.t.is_treated() { 1.0 / (2.0 * u) } else { 1.0 / (2.0 * (1.0 - u)) })
        .collect()
}

fn arms_present(batch: &[Batch]) -> bool {
    batch.iter().any(|s| s.t.is_treated()) && batch.iter().any(|s| !s.t.is_treated())
}

/// Weighted factual loss plus `alpha * sqrt(MMD^2(phi | t=0, phi | t=1))`.
pub fn cfr_objective(model: &CfrModel, batch: &[Batch], cfg: &TrainConfig) -> Result<f64, OracleError> {
    if batch.is_empty() {
        return Err(OracleError::EmptySet("batch"));
    }
    if cfg.alpha > 0.0 && !arms_present(batch) {
        return Err(OracleError::SingleArmBatch);
    }
    let weights = arm_weights(batch);
    let mut reps: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut loss = 0.0;
    for (s, w) in batch.iter().zip(&weights) {
        let r = model.represent(s.x)?;
        let z = model.head_output(&r, s.t)?;
        loss += w * loss_and_deriv(model.outcome_kind, z, s.y).0;
        reps[s.t.index()].push(r);
    }
    loss /= batch.len() as f64;
    if cfg.alpha > 0.0 {
        let m = mmd_squared(&reps[0], &reps[1], &cfg.kernel)?;
        loss += cfg.alpha * (m + PENALTY_EPS).sqrt();
    }
    Ok(loss)
}

/// Gradient of [`cfr_objective`], shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub phi: Mlp,
    pub heads: [Mlp; 2],
}

impl Gradient {
    fn zeros_like(model: &CfrModel) -> Self {
        let zero = |m: &Mlp| Mlp::zeros(&m.widths(), m.output);
        Gradient {
            phi: zero(&model.phi),
            heads: [zero(&model.heads[0]), zero(&model.heads[1])],
        }
    }

    /// Same ordering as [`CfrModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.phi
            .params()
            .chain(self.heads[0].params())
            .chain(self.heads[1].params())
            .copied()
            .collect()
    }
}

pub fn gradient(model: &CfrModel, batch: &[Batch], cfg: &TrainConfig) -> Result<Gradient, OracleError> {
    if batch.is_empty() {
        return Err(OracleError::EmptySet("batch"));
    }
    let penalized = cfg.alpha > 0.0;
    if penalized && !arms_present(batch) {
        return Err(OracleError::SingleArmBatch);
    }
    let weights = arm_weights(batch);
    let n = batch.len() as f64;
    let n_phi = model.phi.layers.len();

    let caches = batch
        .iter()
        .map(|s| {
            if s.x.len() != model.input_dim() {
                return Err(crate::PredictError::Dimension {
                    expected: model.input_dim(),
                    got: s.x.len(),
                });
            }
            model.phi.forward_cached(s.x, 0)
        })
        .collect::<Result<Vec<_>, _>>()?;

    // d(penalty)/d(phi(x_i)) for every example, zero when alpha = 0.
    let mut d_rep: Vec<Vec<f64>> = caches.iter().map(|c| vec![0.0; c.output().len()]).collect();
    if penalized {
        let mut reps: [Vec<&[f64]>; 2] = [Vec::new(), Vec::new()];
        let mut owners: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, (s, c)) in batch.iter().zip(&caches).enumerate() {
            reps[s.t.index()].push(c.output());
            owners[s.t.index()].push(i);
        }
        let m = mmd_squared(&reps[0], &reps[1], &cfg.kernel)?;
        let scale = cfg.alpha / (2.0 * (m + PENALTY_EPS).sqrt());
        let (g0, g1) = mmd_squared_grad(&reps[0], &reps[1], &cfg.kernel)?;
        for (arm_grads, idx) in [(g0, &owners[0]), (g1, &owners[1])] {
            for (g, &i) in arm_grads.iter().zip(idx.iter()) {
                for (d, v) in d_rep[i].iter_mut().zip(g) {
                    *d += scale * v;
                }
            }
        }
    }

    let mut grad = Gradient::zeros_like(model);
    for ((s, cache), (w, mut dr)) in batch.iter().zip(&caches).zip(weights.iter().zip(d_rep)) {
        let head = &model.heads[s.t.index()];
        let hc = head.forward_cached(cache.output(), n_phi)?;
        let (_, dz) = loss_and_deriv(model.outcome_kind, hc.output()[0], s.y);
        let d_in = head.backward(&hc, &[w * dz / n], &mut grad.heads[s.t.index()]);
        for (d, v) in dr.iter_mut().zip(d_in) {
            *d += v;
        }
        model.phi.backward(cache, &dr, &mut grad.phi);
    }
    if grad.flat().iter().any(|v| !v.is_finite()) {
        return Err(OracleError::NonFiniteGradient);
    }
    Ok(grad)
}
