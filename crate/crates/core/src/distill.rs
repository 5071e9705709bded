//! Distillation of an oracle into an interpretable learner.
//!
//! Each observed covariate vector is paired with both treatments, the pairs
//! are labeled by the oracle, and the learner is fit on the labeled pairs.
//! Because every `x` appears once per arm, the treatment marginal of the pair
//! set is exactly one half and independent of `x`.

use std::io::Write;

use thiserror::Error;

use crate::data::{DataError, ObservationalDataset, Unit};
use crate::interpretable::{fit, InterpretableError, InterpretableModel, LearnerSpec, Triple};
use crate::{Arm, PredictError, Predictor};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("empty observational dataset")]
    Empty,
    #[error("oracle failed on pair {index}: {source}")]
    Oracle {
        index: usize,
        #[source]
        source: PredictError,
    },
    #[error(transparent)]
    Fit(#[from] InterpretableError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<(Vec<f64>, Arm)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, arm: Arm) -> usize {
        self.pairs.iter().filter(|(_, t)| *t == arm).count()
    }
}

/// Oracle-labeled pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledDataset {
    pub triples: Vec<Triple>,
}

impl DistilledDataset {
    /// As an observational dataset (labels in `y`, no ground truth), for CSV export.
    pub fn to_dataset(&self, name: &str) -> Result<ObservationalDataset, DataError> {
        let units = self.triples.iter().map(|s| Unit::new(s.x.clone(), s.t, s.y)).collect();
        ObservationalDataset::new(name, units)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        crate::data::write_dataset(&self.to_dataset("distilled")?, writer)
    }
}

/// Factual pairs `(x_i, t_i)` in row order, then counterfactual pairs
/// `(x_i, 1 - t_i)` in row order.
pub fn build_rct_pairs(ds: &ObservationalDataset) -> Result<PairSet, DistillError> {
    if ds.is_empty() {
        return Err(DistillError::Empty);
    }
    let factual = ds.units().iter().map(|u| (u.x.clone(), u.t));
    let flipped = ds.units().iter().map(|u| (u.x.clone(), u.t.flip()));
    Ok(PairSet {
        pairs: factual.chain(flipped).collect(),
    })
}

pub fn label_with_oracle<P: Predictor + ?Sized>(pairs: &PairSet, oracle: &P) -> Result<DistilledDataset, DistillError> {
    let triples = pairs
        .pairs
        .iter()
        .enumerate()
        .map(|(index, (x, t))| {
            let y = oracle.predict(x, *t).map_err(|source| DistillError::Oracle { index, source })?;
            Ok(Triple { x: x.clone(), t: *t, y })
        })
        .collect::<Result<Vec<_>, DistillError>>()?;
    Ok(DistilledDataset { triples })
}

/// Fit `spec` on the oracle-labeled pair set built from `ds`.
pub fn distill<P: Predictor + ?Sized>(ds: &ObservationalDataset, oracle: &P, spec: &LearnerSpec) -> Result<InterpretableModel, DistillError> {
    let labeled = label_with_oracle(&build_rct_pairs(ds)?, oracle)?;
    Ok(fit(spec, &labeled.triples)?)
}

/// Mean of `(f - f*)^2` over the pair set.
pub fn relative_error<F: Predictor + ?Sized, G: Predictor + ?Sized>(f: &F, oracle: &G, pairs: &PairSet) -> Result<f64, PredictError> {
    Ok(relative_error_terms(f, oracle, pairs)?.iter().sum::<f64>() / pairs.len() as f64)
}

/// Per-pair squared gaps, in pair order.
pub fn relative_error_terms<F: Predictor + ?Sized, G: Predictor + ?Sized>(f: &F, oracle: &G, pairs: &PairSet) -> Result<Vec<f64>, PredictError> {
    pairs
        .pairs
        .iter()
        .map(|(x, t)| {
            let gap = f.predict(x, *t)? - oracle.predict(x, *t)?;
            Ok(gap * gap)
        })
        .collect()
}

/// Fit `spec` on the factual triples only.
pub fn fit_baseline(ds: &ObservationalDataset, spec: &LearnerSpec) -> Result<InterpretableModel, DistillError> {
    if ds.is_empty() {
        return Err(DistillError::Empty);
    }
    let triples: Vec<Triple> = ds
        .units()
        .iter()
        .map(|u| Triple {
            x: u.x.clone(),
            t: u.t,
            y: u.y_factual,
        })
        .collect();
    Ok(fit(spec, &triples)?)
}
