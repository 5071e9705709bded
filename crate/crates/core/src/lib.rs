//! Interpretable individual-treatment-effect (ITE) models distilled from a
//! counterfactual-regression oracle.
//!
//! The pipeline is:
//!
//! 1. [`oracle::train_oracle`] fits a representation network with a two-head
//!    hypothesis and an MMD balancing penalty on observational data.
//! 2. [`distill::build_rct_pairs`] pairs every observed covariate vector with
//!    both treatments, [`distill::label_with_oracle`] labels those pairs with the
//!    oracle, and [`interpretable::fit`] trains a tree, linear, kernel or
//!    ensemble learner on the result.
//! 3. [`metrics`] evaluates PEHE, ATE error, policy risk and ATT error, and
//!    checks the factual/counterfactual error bounds numerically on synthetic
//!    data with known potential-outcome surfaces ([`datagen`]).
//!
//! [`experiment`] wires the stages together behind a JSON config.

pub mod data;
pub mod datagen;
pub mod distill;
pub mod experiment;
pub mod interpretable;
pub mod kernel;
pub mod metrics;
pub mod oracle;
pub mod seed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Treatment arm of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn flip(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    /// 0 for control, 1 for treated.
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.index() as f64
    }

    pub fn is_treated(self) -> bool {
        self == Arm::Treated
    }
}

impl From<bool> for Arm {
    fn from(treated: bool) -> Self {
        if treated {
            Arm::Treated
        } else {
            Arm::Control
        }
    }
}

impl From<Arm> for u8 {
    fn from(arm: Arm) -> u8 {
        arm.index() as u8
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            other => Err(format!("treatment not binary: {other}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },
    #[error("input has dimension {got}, model expects {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Anything that maps a covariate vector and a treatment to an outcome.
pub trait Predictor {
    fn predict(&self, x: &[f64], t: Arm) -> Result<f64, PredictError>;

    /// `f(x, 1) - f(x, 0)`.
    fn predicted_ite(&self, x: &[f64]) -> Result<f64, PredictError> {
        Ok(self.predict(x, Arm::Treated)? - self.predict(x, Arm::Control)?)
    }
}

impl<F> Predictor for F
where
    F: Fn(&[f64], Arm) -> f64,
{
    fn predict(&self, x: &[f64], t: Arm) -> Result<f64, PredictError> {
        Ok(self(x, t))
    }
}

/// Free-function form of [`Predictor::predicted_ite`].
pub fn predicted_ite<P: Predictor + ?Sized>(f: &P, x: &[f64]) -> Result<f64, PredictError> {
    f.predicted_ite(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_ite_of_arm_blind_predictor_is_zero() {
        let f = |x: &[f64], _t: Arm| x.iter().sum::<f64>();
        assert_eq!(predicted_ite(&f, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn predicted_ite_of_treatment_indicator_is_one() {
        let f = |_x: &[f64], t: Arm| t.as_f64();
        for x in [[0.0], [-3.0], [7.5]] {
            assert_eq!(predicted_ite(&f, &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn arm_rejects_non_binary() {
        assert!(Arm::try_from(2u8).is_err());
        assert_eq!(Arm::try_from(1u8).unwrap(), Arm::Treated);
        assert_eq!(Arm::Treated.flip(), Arm::Control);
    }
}
