//! Effect-estimation metrics and numerical checks of the error bounds.
//!
//! The bound checks evaluate every expectation on one unit set (normally the
//! test fold), with pointwise expected losses computed analytically from the
//! true surfaces: `l(x, t) = (f*(x, t) - mu_t(x))^2 + sigma^2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ObservationalDataset, Unit};
use crate::distill::build_rct_pairs;
use crate::kernel::Kernel;
use crate::oracle::{mmd_squared, CfrModel, OracleError};
use crate::{predicted_ite, Arm, PredictError, Predictor};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("unit {index} lacks ground-truth surfaces")]
    MissingGroundTruth { index: usize },
    #[error("empty {0} group")]
    EmptyGroup(&'static str),
    #[error("evaluation set lacks one treatment arm")]
    MissingArm,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean of `v` (sample standard deviation over `sqrt(n)`).
pub fn standard_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean squared ITE error and its square root.
pub fn pehe(tau_hat: &[f64], tau_true: &[f64]) -> Result<(f64, f64), MetricsError> {
    check_lengths(tau_hat, tau_true)?;
    let p = tau_hat.iter().zip(tau_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tau_hat.len() as f64;
    Ok((p, p.sqrt()))
}

pub fn ate_error(tau_hat: &[f64], tau_true: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(tau_hat, tau_true)?;
    Ok((mean(tau_hat) - mean(tau_true)).abs())
}

/// `f(x, 1) - f(x, 0)` for every unit.
pub fn predicted_effects<P: Predictor + ?Sized>(f: &P, units: &[Unit]) -> Result<Vec<f64>, PredictError> {
    units.iter().map(|u| predicted_ite(f, &u.x)).collect()
}

fn true_effects(units: &[Unit]) -> Result<Vec<f64>, MetricsError> {
    units
        .iter()
        .enumerate()
        .map(|(index, u)| u.true_ite().ok_or(MetricsError::MissingGroundTruth { index }))
        .collect()
}

/// Treat iff `f(x, 1) > f(x, 0)`; ties go to control.
pub fn policy<P: Predictor + ?Sized>(f: &P, units: &[&Unit]) -> Result<Vec<bool>, PredictError> {
    units.iter().map(|u| Ok(predicted_ite(f, &u.x)? > 0.0)).collect()
}

/// Policy risk of explicit treat/control decisions on randomized units.
///
/// `Ok(None)` marks an inestimable term: the policy treats (or withholds
/// treatment from) some units but no randomized unit matches that decision.
pub fn policy_risk(treat: &[bool], units: &[&Unit]) -> Result<Option<f64>, MetricsError> {
    if treat.len() != units.len() {
        return Err(MetricsError::LengthMismatch(treat.len(), units.len()));
    }
    if units.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = units.len() as f64;
    let mut risk = 1.0;
    for arm in Arm::BOTH {
        let follow = |pi: bool| pi == arm.is_treated();
        let share = treat.iter().filter(|pi| follow(**pi)).count() as f64 / n;
        if share == 0.0 {
            continue;
        }
        let ys: Vec<f64> = treat
            .iter()
            .zip(units)
            .filter(|(pi, u)| follow(**pi) && u.t == arm)
            .map(|(_, u)| u.y_factual)
            .collect();
        if ys.is_empty() {
            return Ok(None);
        }
        risk -= mean(&ys) * share;
    }
    Ok(Some(risk))
}

/// Policy risk of `f` on the randomized subgroup (`randomized == Some(true)`).
pub fn policy_risk_estimate<P: Predictor + ?Sized>(f: &P, rct_units: &[&Unit]) -> Result<Option<f64>, MetricsError> {
    let treat = policy(f, rct_units)?;
    policy_risk(&treat, rct_units)
}

/// Risk of treating each randomized unit by a fair coin, in expectation.
pub fn random_policy_risk(rct_units: &[&Unit]) -> Result<Option<f64>, MetricsError> {
    let mut risk = 1.0;
    for arm in Arm::BOTH {
        let ys: Vec<f64> = rct_units.iter().filter(|u| u.t == arm).map(|u| u.y_factual).collect();
        if ys.is_empty() {
            return Ok(None);
        }
        risk -= 0.5 * mean(&ys);
    }
    Ok(Some(risk))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub att_true: f64,
    pub att_pred: f64,
    pub eps_att: f64,
}

pub fn att_and_error<P: Predictor + ?Sized>(f: &P, treated: &[&Unit], randomized_controls: &[&Unit]) -> Result<AttEstimate, MetricsError> {
    if treated.is_empty() {
        return Err(MetricsError::EmptyGroup("treated"));
    }
    if randomized_controls.is_empty() {
        return Err(MetricsError::EmptyGroup("randomized control"));
    }
    let y_t: Vec<f64> = treated.iter().map(|u| u.y_factual).collect();
    let y_c: Vec<f64> = randomized_controls.iter().map(|u| u.y_factual).collect();
    let att_true = mean(&y_t) - mean(&y_c);
    let effects = treated.iter().map(|u| predicted_ite(f, &u.x)).collect::<Result<Vec<_>, _>>()?;
    let att_pred = mean(&effects);
    Ok(AttEstimate {
        att_true,
        att_pred,
        eps_att: (att_true - att_pred).abs(),
    })
}

/// Expected factual/counterfactual losses, with per-unit terms kept for
/// standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLosses {
    pub eps_f: f64,
    pub eps_cf: f64,
    /// Factual loss over control units, `l(x, 0)`; 0 when there are none.
    pub eps_f_t0: f64,
    /// Factual loss over treated units, `l(x, 1)`; 0 when there are none.
    pub eps_f_t1: f64,
    pub factual_terms: Vec<f64>,
    pub counterfactual_terms: Vec<f64>,
}

pub fn expected_losses<P: Predictor + ?Sized>(f_star: &P, ds: &ObservationalDataset, noise_sd: f64) -> Result<ExpectedLosses, MetricsError> {
    if ds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let noise_var = noise_sd * noise_sd;
    let mut factual_terms = Vec::with_capacity(ds.len());
    let mut counterfactual_terms = Vec::with_capacity(ds.len());
    let mut arm_sums = [0.0; 2];
    let mut arm_counts = [0usize; 2];
    for (index, u) in ds.units().iter().enumerate() {
        let loss = |t: Arm| -> Result<f64, MetricsError> {
            let mu = u.mu(t).ok_or(MetricsError::MissingGroundTruth { index })?;
            Ok((f_star.predict(&u.x, t)? - mu).powi(2) + noise_var)
        };
        let lf = loss(u.t)?;
        factual_terms.push(lf);
        counterfactual_terms.push(loss(u.t.flip())?);
        arm_sums[u.t.index()] += lf;
        arm_counts[u.t.index()] += 1;
    }
    let arm_mean = |a: Arm| if arm_counts[a.index()] == 0 { 0.0 } else { arm_sums[a.index()] / arm_counts[a.index()] as f64 };
    Ok(ExpectedLosses {
        eps_f: mean(&factual_terms),
        eps_cf: mean(&counterfactual_terms),
        eps_f_t0: arm_mean(Arm::Control),
        eps_f_t1: arm_mean(Arm::Treated),
        factual_terms,
        counterfactual_terms,
    })
}

/// Outcome-noise variances under the factual and counterfactual designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceTerms {
    pub sigma_y1_sq: f64,
    pub sigma_y0_sq: f64,
    pub sigma_yt_sq_p: f64,
    pub sigma_yt_sq_ptilde: f64,
    pub sigma_y_sq: f64,
}

/// Homoscedastic noise: each arm contributes `noise_sd^2` times its share.
pub fn variance_terms(ds: &ObservationalDataset, noise_sd: f64) -> Result<VarianceTerms, MetricsError> {
    if ds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(MetricsError::InvalidArgument("noise_sd must be finite and nonnegative"));
    }
    let v = noise_sd * noise_sd;
    let p1 = ds.treated_fraction();
    let p0 = 1.0 - p1;
    let sigma_y1_sq = v * p1;
    let sigma_y0_sq = v * p0;
    let sigma_yt_sq_p = sigma_y1_sq + sigma_y0_sq;
    // Under the flipped design the arm shares swap.
    let sigma_yt_sq_ptilde = v * p0 + v * p1;
    Ok(VarianceTerms {
        sigma_y1_sq,
        sigma_y0_sq,
        sigma_yt_sq_p,
        sigma_yt_sq_ptilde,
        sigma_y_sq: sigma_yt_sq_p.min(sigma_yt_sq_ptilde),
    })
}

/// Empirical MMD (not squared) between control and treated representations.
pub fn representation_ipm(f_star: &CfrModel, ds: &ObservationalDataset, kernel: &Kernel) -> Result<f64, MetricsError> {
    let mut arms: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for u in ds.units() {
        arms[u.t.index()].push(f_star.represent(&u.x)?);
    }
    if arms[0].is_empty() || arms[1].is_empty() {
        return Err(MetricsError::MissingArm);
    }
    Ok(mmd_squared(&arms[0], &arms[1], kernel)?.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Oracle PEHE against its own factual and counterfactual losses.
    Oracle,
    /// Distilled-model PEHE against the oracle's losses plus relative error.
    Distilled,
}

/// Every term of one bound check.
///
/// For [`Theorem::Distilled`] the left side is `PEHE(f) / 4`; for
/// [`Theorem::Oracle`] it is `PEHE(f*) / 2` and `eps_rel` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub n_eval: usize,
    pub pehe: f64,
    pub pehe_lhs: f64,
    pub eps_rel: f64,
    pub eps_f: f64,
    pub eps_cf: f64,
    pub eps_f_t0: f64,
    pub eps_f_t1: f64,
    pub sigma_y1_sq: f64,
    pub sigma_y0_sq: f64,
    pub sigma_yt_sq_p: f64,
    pub sigma_yt_sq_ptilde: f64,
    pub sigma_y_sq: f64,
    pub ipm_hat: f64,
    pub b_phi: f64,
    pub rhs_first: f64,
    pub rhs_second: f64,
    pub appendix_intermediate: f64,
    pub tol_mc: f64,
    pub holds_first: bool,
    pub holds_second: bool,
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 23] = [
        "theorem",
        "n_eval",
        "pehe",
        "pehe_lhs",
        "eps_rel",
        "eps_f",
        "eps_cf",
        "eps_f_t0",
        "eps_f_t1",
        "sigma_y1_sq",
        "sigma_y0_sq",
        "sigma_yt_sq_p",
        "sigma_yt_sq_ptilde",
        "sigma_y_sq",
        "ipm_hat",
        "b_phi",
        "rhs_first",
        "rhs_second",
        "appendix_intermediate",
        "tol_mc",
        "holds_first",
        "holds_second",
        "margin_first",
    ];

    /// Values in [`Self::CSV_HEADER`] order.
    pub fn csv_values(&self) -> Vec<String> {
        let theorem = match self.theorem {
            Theorem::Oracle => "oracle",
            Theorem::Distilled => "distilled",
        };
        let mut out = vec![theorem.to_string(), self.n_eval.to_string()];
        out.extend(
            [
                self.pehe,
                self.pehe_lhs,
                self.eps_rel,
                self.eps_f,
                self.eps_cf,
                self.eps_f_t0,
                self.eps_f_t1,
                self.sigma_y1_sq,
                self.sigma_y0_sq,
                self.sigma_yt_sq_p,
                self.sigma_yt_sq_ptilde,
                self.sigma_y_sq,
                self.ipm_hat,
                self.b_phi,
                self.rhs_first,
                self.rhs_second,
                self.appendix_intermediate,
                self.tol_mc,
            ]
            .iter()
            .map(f64::to_string),
        );
        out.push(self.holds_first.to_string());
        out.push(self.holds_second.to_string());
        out.push((self.rhs_first + self.tol_mc - self.pehe_lhs).to_string());
        out
    }

    fn check_finite(&self) -> Result<(), MetricsError> {
        let terms: [(&'static str, f64); 18] = [
            ("pehe", self.pehe),
            ("pehe_lhs", self.pehe_lhs),
            ("eps_rel", self.eps_rel),
            ("eps_f", self.eps_f),
            ("eps_cf", self.eps_cf),
            ("eps_f_t0", self.eps_f_t0),
            ("eps_f_t1", self.eps_f_t1),
            ("sigma_y1_sq", self.sigma_y1_sq),
            ("sigma_y0_sq", self.sigma_y0_sq),
            ("sigma_yt_sq_p", self.sigma_yt_sq_p),
            ("sigma_yt_sq_ptilde", self.sigma_yt_sq_ptilde),
            ("sigma_y_sq", self.sigma_y_sq),
            ("ipm_hat", self.ipm_hat),
            ("b_phi", self.b_phi),
            ("rhs_first", self.rhs_first),
            ("rhs_second", self.rhs_second),
            ("appendix_intermediate", self.appendix_intermediate),
            ("tol_mc", self.tol_mc),
        ];
        match terms.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(MetricsError::NonFinite(name)),
            None => Ok(()),
        }
    }
}

/// Shared term computation. `f` is `None` for the oracle-only check.
fn bound_report<F: Predictor + ?Sized>(
    f: Option<&F>,
    f_star: &CfrModel,
    ds: &ObservationalDataset,
    noise_sd: f64,
    b_phi: f64,
    kernel: &Kernel,
) -> Result<BoundReport, MetricsError> {
    if !(b_phi > 0.0 && b_phi.is_finite()) {
        return Err(MetricsError::InvalidArgument("b_phi must be positive"));
    }
    if ds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let units = ds.units();
    let n = units.len();
    let tau = true_effects(units)?;
    let losses = expected_losses(f_star, ds, noise_sd)?;
    let var = variance_terms(ds, noise_sd)?;
    let ipm_hat = representation_ipm(f_star, ds, kernel)?;

    // Per-unit relative error: the mean of the unit's two pair gaps, so that
    // the unit average equals the mean over the pair set.
    let (theorem, scale, tau_hat, rel_terms) = match f {
        Some(f) => {
            let pairs = build_rct_pairs(ds).map_err(|_| MetricsError::Empty)?;
            let gaps = crate::distill::relative_error_terms(f, f_star, &pairs)?;
            let rel: Vec<f64> = (0..n).map(|i| 0.5 * (gaps[i] + gaps[n + i])).collect();
            (Theorem::Distilled, 0.25, predicted_effects(f, units)?, rel)
        }
        None => (Theorem::Oracle, 0.5, predicted_effects(f_star, units)?, vec![0.0; n]),
    };
    let lhs_terms: Vec<f64> = tau_hat.iter().zip(&tau).map(|(a, b)| scale * (a - b).powi(2)).collect();
    let rhs_terms: Vec<f64> = (0..n)
        .map(|i| 2.0 * rel_terms[i] + losses.factual_terms[i] + losses.counterfactual_terms[i] - 2.0 * var.sigma_y_sq)
        .collect();
    let pehe_value = pehe(&tau_hat, &tau)?.0;
    let pehe_lhs = mean(&lhs_terms);
    let eps_rel = mean(&rel_terms);
    let rhs_first = 2.0 * eps_rel + losses.eps_f + losses.eps_cf - 2.0 * var.sigma_y_sq;
    let rhs_second = 2.0 * eps_rel + losses.eps_f_t0 + losses.eps_f_t1 + b_phi * ipm_hat - 2.0 * var.sigma_y_sq;
    let appendix_intermediate =
        8.0 * eps_rel + 4.0 * (losses.eps_f - var.sigma_yt_sq_p) + 4.0 * (losses.eps_cf - var.sigma_yt_sq_ptilde);
    let tol_mc = 3.0 * standard_error(&lhs_terms).hypot(standard_error(&rhs_terms));
    let report = BoundReport {
        theorem,
        n_eval: n,
        pehe: pehe_value,
        pehe_lhs,
        eps_rel,
        eps_f: losses.eps_f,
        eps_cf: losses.eps_cf,
        eps_f_t0: losses.eps_f_t0,
        eps_f_t1: losses.eps_f_t1,
        sigma_y1_sq: var.sigma_y1_sq,
        sigma_y0_sq: var.sigma_y0_sq,
        sigma_yt_sq_p: var.sigma_yt_sq_p,
        sigma_yt_sq_ptilde: var.sigma_yt_sq_ptilde,
        sigma_y_sq: var.sigma_y_sq,
        ipm_hat,
        b_phi,
        rhs_first,
        rhs_second,
        appendix_intermediate,
        tol_mc,
        holds_first: pehe_lhs <= rhs_first + tol_mc,
        holds_second: pehe_lhs <= rhs_second + tol_mc,
    };
    report.check_finite()?;
    Ok(report)
}

/// Bound on the distilled model's PEHE via the oracle's losses and the
/// relative error, evaluated on `ds` (normally the test fold).
pub fn verify_theorem2<F: Predictor + ?Sized>(
    f: &F,
    f_star: &CfrModel,
    ds: &ObservationalDataset,
    noise_sd: f64,
    b_phi: f64,
    kernel: &Kernel,
) -> Result<BoundReport, MetricsError> {
    bound_report(Some(f), f_star, ds, noise_sd, b_phi, kernel)
}

/// Bound on the oracle's own PEHE.
pub fn verify_theorem1(f_star: &CfrModel, ds: &ObservationalDataset, noise_sd: f64, b_phi: f64, kernel: &Kernel) -> Result<BoundReport, MetricsError> {
    bound_report::<CfrModel>(None, f_star, ds, noise_sd, b_phi, kernel)
}

/// Metrics of one model on one evaluation set; absent values were not
/// computable from the available columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_eval: usize,
    pub sqrt_pehe: Option<f64>,
    pub ate_error: Option<f64>,
    pub policy_risk: Option<f64>,
    pub att_error: Option<f64>,
    pub relative_error: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 6] = ["n_eval", "sqrt_pehe", "ate_error", "policy_risk", "att_error", "relative_error"];

    /// Values in [`Self::CSV_HEADER`] order; absent metrics are empty cells.
    pub fn csv_values(&self) -> Vec<String> {
        let mut out = vec![self.n_eval.to_string()];
        out.extend(self.metrics().iter().map(|(_, v)| v.map(|v| v.to_string()).unwrap_or_default()));
        out
    }

    /// Named metric values in header order.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("sqrt_pehe", self.sqrt_pehe),
            ("ate_error", self.ate_error),
            ("policy_risk", self.policy_risk),
            ("att_error", self.att_error),
            ("relative_error", self.relative_error),
        ]
    }
}

/// Evaluate `f` on `ds`.
///
/// PEHE and ATE error need true surfaces on every unit; policy risk and ATT
/// error need a randomized subgroup with both arms (policy risk additionally
/// needs 0/1 outcomes); relative error needs the oracle.
pub fn evaluate<F: Predictor + ?Sized, G: Predictor + ?Sized>(f: &F, oracle: Option<&G>, ds: &ObservationalDataset) -> Result<EvalReport, MetricsError> {
    if ds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let units = ds.units();
    let mut report = EvalReport {
        n_eval: units.len(),
        ..Default::default()
    };
    if ds.has_ground_truth() {
        let tau = true_effects(units)?;
        let tau_hat = predicted_effects(f, units)?;
        report.sqrt_pehe = Some(pehe(&tau_hat, &tau)?.1);
        report.ate_error = Some(ate_error(&tau_hat, &tau)?);
    }
    let rct = ds.randomized_units();
    let treated: Vec<&Unit> = rct.iter().copied().filter(|u| u.t.is_treated()).collect();
    let controls: Vec<&Unit> = rct.iter().copied().filter(|u| !u.t.is_treated()).collect();
    if !treated.is_empty() && !controls.is_empty() {
        if rct.iter().all(|u| u.y_factual == 0.0 || u.y_factual == 1.0) {
            report.policy_risk = policy_risk_estimate(f, &rct)?;
        }
        report.att_error = Some(att_and_error(f, &treated, &controls)?.eps_att);
    }
    if let Some(g) = oracle {
        let pairs = build_rct_pairs(ds).map_err(|_| MetricsError::Empty)?;
        report.relative_error = Some(crate::distill::relative_error(f, g, &pairs)?);
    }
    Ok(report)
}
