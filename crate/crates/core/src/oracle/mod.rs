//! Counterfactual-regression oracle: a representation network `phi` followed
//! by one hypothesis head per treatment arm, `f(x, t) = h_t(phi(x))`.

mod grad;
mod mmd;
mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::Kernel;
use crate::{Arm, PredictError, Predictor};

pub use grad::{cfr_objective, gradient, Batch, Gradient};
pub use mmd::{mmd_squared, mmd_squared_grad};
pub use train::{factual_loss, train_oracle, train_oracle_with_history, Optimizer, TrainConfig, TrainHistory};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("vectors have dimension {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty sample")]
    EmptySample,
    #[error("batch has a single treatment arm but alpha > 0")]
    SingleArmBatch,
    #[error("training set lacks one treatment arm")]
    MissingArm,
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training diverged at epoch {epoch}: validation loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

/// Exponential-linear unit.
pub(crate) fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

pub(crate) fn elu_deriv(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Fully connected layer, weights stored row-major as `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn random<R: Rng>(n_in: usize, n_out: usize, scale: f64, rng: &mut R) -> Self {
        let mut layer = Dense::zeros(n_in, n_out);
        for w in &mut layer.weights {
            *w = rng.random_range(-scale..=scale);
        }
        layer
    }

    pub fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Activation applied after the last layer of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Elu,
    Identity,
}

/// Stack of dense layers with ELU between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

impl Mlp {
    fn random<R: Rng>(widths: &[usize], output: OutputActivation, scale: f64, rng: &mut R) -> Self {
        let layers = widths.windows(2).map(|w| Dense::random(w[0], w[1], scale, rng)).collect();
        Mlp { layers, output }
    }

    pub fn zeros(widths: &[usize], output: OutputActivation) -> Self {
        Mlp {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.n_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    fn activates(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.output == OutputActivation::Elu
    }

    /// Forward pass keeping every pre-activation (`pre[l]`) and layer input
    /// (`inputs[l]`); `inputs` ends with the network output.
    pub(crate) fn forward_cached(&self, x: &[f64], layer_offset: usize) -> Result<MlpCache, PredictError> {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&inputs[l], &mut z);
            let a: Vec<f64> = if self.activates(l) { z.iter().map(|&v| elu(v)).collect() } else { z.clone() };
            if a.iter().any(|v| !v.is_finite()) {
                return Err(PredictError::NonFinite { layer: layer_offset + l });
            }
            pre.push(z);
            inputs.push(a);
        }
        Ok(MlpCache { inputs, pre })
    }

    pub fn forward(&self, x: &[f64], layer_offset: usize) -> Result<Vec<f64>, PredictError> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if self.activates(l) {
                next.iter_mut().for_each(|v| *v = elu(*v));
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(PredictError::NonFinite { layer: layer_offset + l });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Backpropagate `d_out` (gradient w.r.t. the output), accumulating
    /// parameter gradients into `grad` and returning the input gradient.
    pub(crate) fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.activates(l) {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= elu_deriv(*z);
                }
            }
            let input = &cache.inputs[l];
            let g = &mut grad.layers[l];
            let mut d_in = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                g.biases[o] += d;
                let row = o * layer.n_in;
                for i in 0..layer.n_in {
                    g.weights[row + i] += d * input[i];
                    d_in[i] += d * layer.weights[row + i];
                }
            }
            delta = d_in;
        }
        delta
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

pub(crate) struct MlpCache {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("nonempty cache")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    #[default]
    Regression,
    /// Heads emit logits; predictions are probabilities.
    Binary,
}

/// `f*(x, t) = h_t(phi(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrModel {
    /// Representation network; ELU on every layer.
    pub phi: Mlp,
    /// `[h_0, h_1]`; ELU hidden layers, linear last layer.
    pub heads: [Mlp; 2],
    pub outcome_kind: OutcomeKind,
    /// Kernel of the balancing penalty the model was trained with.
    pub kernel: Kernel,
}

impl CfrModel {
    /// `phi_widths = [d, w1, ..., l]`, `head_widths = [l, ..., 1]`.
    pub fn random<R: Rng>(
        phi_widths: &[usize],
        head_widths: &[usize],
        outcome_kind: OutcomeKind,
        kernel: Kernel,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let phi = Mlp::random(phi_widths, OutputActivation::Elu, scale, rng);
        let h0 = Mlp::random(head_widths, OutputActivation::Identity, scale, rng);
        let h1 = Mlp::random(head_widths, OutputActivation::Identity, scale, rng);
        CfrModel {
            phi,
            heads: [h0, h1],
            outcome_kind,
            kernel,
        }
    }

    pub fn zeros(phi_widths: &[usize], head_widths: &[usize], outcome_kind: OutcomeKind) -> Self {
        CfrModel {
            phi: Mlp::zeros(phi_widths, OutputActivation::Elu),
            heads: [
                Mlp::zeros(head_widths, OutputActivation::Identity),
                Mlp::zeros(head_widths, OutputActivation::Identity),
            ],
            outcome_kind,
            kernel: Kernel::Linear,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.phi.input_dim()
    }

    /// `phi(x)`.
    pub fn represent(&self, x: &[f64]) -> Result<Vec<f64>, PredictError> {
        if x.len() != self.input_dim() {
            return Err(PredictError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        self.phi.forward(x, 0)
    }

    /// Head output before the link function.
    pub fn head_output(&self, r: &[f64], t: Arm) -> Result<f64, PredictError> {
        let out = self.heads[t.index()].forward(r, self.phi.layers.len())?;
        Ok(out[0])
    }

    pub fn link(&self, z: f64) -> f64 {
        match self.outcome_kind {
            OutcomeKind::Regression => z,
            OutcomeKind::Binary => crate::datagen::logistic(z),
        }
    }

    /// `h_t(phi(x))`, through the logistic link for binary outcomes.
    pub fn forward(&self, x: &[f64], t: Arm) -> Result<f64, PredictError> {
        let r = self.represent(x)?;
        Ok(self.link(self.head_output(&r, t)?))
    }

    pub fn n_params(&self) -> usize {
        self.phi.n_params() + self.heads.iter().map(Mlp::n_params).sum::<usize>()
    }

    /// All parameters in a fixed order: phi, head 0, head 1; per layer weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.phi
            .params()
            .chain(self.heads[0].params())
            .chain(self.heads[1].params())
            .copied()
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n_params(), "parameter count");
        let [h0, h1] = &mut self.heads;
        for (p, v) in self.phi.params_mut().chain(h0.params_mut()).chain(h1.params_mut()).zip(values) {
            *p = *v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> Result<String, OracleError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OracleError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predictor for CfrModel {
    fn predict(&self, x: &[f64], t: Arm) -> Result<f64, PredictError> {
        self.forward(x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn zero_network_outputs() {
        let reg = CfrModel::zeros(&[3, 4, 2], &[2, 3, 1], OutcomeKind::Regression);
        let bin = CfrModel::zeros(&[3, 4, 2], &[2, 3, 1], OutcomeKind::Binary);
        for x in [[0.0, 1.0, -2.0], [5.0, 5.0, 5.0]] {
            for t in Arm::BOTH {
                assert_eq!(reg.forward(&x, t).unwrap(), 0.0);
                assert_eq!(bin.forward(&x, t).unwrap(), 0.5);
            }
        }
    }

    #[test]
    fn hand_built_affine_composition() {
        let mut m = CfrModel::zeros(&[1, 1], &[1, 1], OutcomeKind::Regression);
        m.phi.layers[0].weights[0] = 1.0;
        m.heads[1].layers[0].weights[0] = 2.0;
        assert_eq!(m.forward(&[3.0], Arm::Treated).unwrap(), 6.0);
        assert_eq!(m.forward(&[3.0], Arm::Control).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_reports_layer() {
        let mut m = CfrModel::zeros(&[1, 2, 1], &[1, 2, 1], OutcomeKind::Regression);
        m.heads[0].layers[1].weights[0] = f64::INFINITY;
        m.heads[0].layers[0].biases[0] = 1.0;
        let err = m.forward(&[0.0], Arm::Control).unwrap_err();
        assert_eq!(err, PredictError::NonFinite { layer: 3 });
    }

    #[test]
    fn dimension_checked() {
        let m = CfrModel::zeros(&[2, 2], &[2, 1], OutcomeKind::Regression);
        assert!(matches!(m.forward(&[1.0], Arm::Treated), Err(PredictError::Dimension { .. })));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = seed::rng(9);
        let m = CfrModel::random(&[4, 6, 3], &[3, 5, 1], OutcomeKind::Binary, Kernel::Rbf { bandwidth: 0.7 }, 0.4, &mut rng);
        let back = CfrModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = seed::rng(1);
        let m = CfrModel::random(&[2, 3, 2], &[2, 2, 1], OutcomeKind::Regression, Kernel::Linear, 0.5, &mut rng);
        let p = m.flat_params();
        assert_eq!(p.len(), m.n_params());
        let mut z = CfrModel::zeros(&[2, 3, 2], &[2, 2, 1], OutcomeKind::Regression);
        z.set_flat_params(&p);
        assert_eq!(z.flat_params(), p);
    }
}
