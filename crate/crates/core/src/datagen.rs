//! Synthetic data-generating processes with known potential-outcome surfaces.
//!
//! Parameters (propensity direction, surface coefficients) are drawn from a
//! stream derived from `(seed, "params")` and units from `(seed, "units")`, so
//! [`dgp_params`] reproduces the exact surfaces behind a generated dataset.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ObservationalDataset, Unit};
use crate::{seed, Arm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("unit {index} is missing mu0/mu1")]
    MissingGroundTruth { index: usize },
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Outcome surface family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// `mu0 = b0.x`, `mu1 = b1.x + effect` with `b1 = b0 + heterogeneity * delta`.
    Linear {
        #[serde(default = "default_linear_effect")]
        effect: f64,
        #[serde(default)]
        heterogeneity: f64,
    },
    /// `mu0 = exp((x + 0.5).beta)`, `mu1 = x.beta - omega`, with `omega` chosen
    /// so that the population ATE under `x ~ N(0, I)` equals `ate`.
    ExpNonlinear {
        #[serde(default = "default_ate")]
        ate: f64,
    },
}

fn default_linear_effect() -> f64 {
    0.7
}

fn default_ate() -> f64 {
    4.0
}

fn default_clip() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub d: usize,
    /// Scale of the propensity logit along the confounding direction.
    pub confounding_strength: f64,
    #[serde(default = "default_clip")]
    pub propensity_clip: f64,
    pub noise_sd: f64,
    pub surface: Surface,
    #[serde(default)]
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::InvalidConfig(m.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.d < 1 {
            return bad("d must be at least 1");
        }
        if !(self.propensity_clip > 0.0 && self.propensity_clip <= 0.5) {
            return bad("propensity_clip must lie in (0, 0.5]");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and nonnegative");
        }
        if !(self.confounding_strength >= 0.0 && self.confounding_strength.is_finite()) {
            return bad("confounding_strength must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Exp-nonlinear coefficients take values in this grid.
const EXP_BETA_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
const EXP_BETA_WEIGHTS: [f64; 5] = [0.5, 0.125, 0.125, 0.125, 0.125];
const EXP_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceParams {
    Linear { beta0: Vec<f64>, beta1: Vec<f64>, c: f64 },
    ExpNonlinear { beta: Vec<f64>, offset: f64, omega: f64 },
}

/// Everything needed to recompute the generator's surfaces and propensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    /// Unit-norm confounding direction.
    pub w: Vec<f64>,
    pub confounding_strength: f64,
    pub propensity_clip: f64,
    pub noise_sd: f64,
    pub surface: SurfaceParams,
}

impl DgpParams {
    pub fn propensity(&self, x: &[f64]) -> f64 {
        let e = logistic(self.confounding_strength * dot(&self.w, x));
        e.clamp(self.propensity_clip, 1.0 - self.propensity_clip)
    }

    /// `(mu0(x), mu1(x))`.
    pub fn surfaces(&self, x: &[f64]) -> (f64, f64) {
        match &self.surface {
            SurfaceParams::Linear { beta0, beta1, c } => (dot(beta0, x), dot(beta1, x) + c),
            SurfaceParams::ExpNonlinear { beta, offset, omega } => {
                let shifted: f64 = x.iter().zip(beta).map(|(xi, b)| (xi + offset) * b).sum();
                (shifted.exp(), dot(beta, x) - omega)
            }
        }
    }
}

/// Draw the surface and propensity parameters for `cfg`.
pub fn dgp_params(cfg: &DgpConfig) -> DgpParams {
    let mut rng = seed::rng(seed::derive(cfg.seed, "dgp-params", 0));
    let mut w = normal_vec(&mut rng, cfg.d);
    let norm = dot(&w, &w).sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= norm);
    } else {
        w[0] = 1.0;
    }
    let scale = 1.0 / (cfg.d as f64).sqrt();
    let surface = match cfg.surface {
        Surface::Linear { effect, heterogeneity } => {
            let beta0: Vec<f64> = normal_vec(&mut rng, cfg.d).into_iter().map(|v| v * scale).collect();
            let delta = normal_vec(&mut rng, cfg.d);
            let beta1 = beta0
                .iter()
                .zip(&delta)
                .map(|(b, dl)| b + heterogeneity * scale * dl)
                .collect();
            SurfaceParams::Linear { beta0, beta1, c: effect }
        }
        Surface::ExpNonlinear { ate } => {
            let beta: Vec<f64> = (0..cfg.d)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (value, weight) in EXP_BETA_GRID.iter().zip(EXP_BETA_WEIGHTS) {
                        acc += weight;
                        if u < acc {
                            return *value;
                        }
                    }
                    EXP_BETA_GRID[EXP_BETA_GRID.len() - 1]
                })
                .collect();
            // E[exp((x + c).b)] for x ~ N(0, I) is exp(c * sum(b) + |b|^2 / 2);
            // E[x.b] = 0, so E[mu1 - mu0] = -omega - E[mu0].
            let sum: f64 = beta.iter().sum();
            let sq: f64 = dot(&beta, &beta);
            let mean_mu0 = (EXP_OFFSET * sum + 0.5 * sq).exp();
            SurfaceParams::ExpNonlinear {
                beta,
                offset: EXP_OFFSET,
                omega: -ate - mean_mu0,
            }
        }
    };
    DgpParams {
        w,
        confounding_strength: cfg.confounding_strength,
        propensity_clip: cfg.propensity_clip,
        noise_sd: cfg.noise_sd,
        surface,
    }
}

/// Confounded observational data with stored `mu0`, `mu1` and counterfactual.
pub fn generate_observational(cfg: &DgpConfig) -> Result<ObservationalDataset, DatagenError> {
    generate_observational_with_params(cfg).map(|(ds, _)| ds)
}

pub fn generate_observational_with_params(cfg: &DgpConfig) -> Result<(ObservationalDataset, DgpParams), DatagenError> {
    cfg.validate()?;
    let params = dgp_params(cfg);
    let ds = sample_observational(cfg, &params, cfg.seed)?;
    Ok((ds, params))
}

/// Draw `cfg.n` units from fixed parameters; `unit_seed` only drives the
/// covariates, treatments and noise.
pub fn sample_observational(cfg: &DgpConfig, params: &DgpParams, unit_seed: u64) -> Result<ObservationalDataset, DatagenError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(unit_seed, "dgp-units", 0));
    let units = (0..cfg.n)
        .map(|_| {
            let x = normal_vec(&mut rng, cfg.d);
            let e = params.propensity(&x);
            let u: f64 = rng.random();
            let t = Arm::from(u < e);
            let eps_f: f64 = StandardNormal.sample(&mut rng);
            let eps_cf: f64 = StandardNormal.sample(&mut rng);
            let (mu0, mu1) = params.surfaces(&x);
            let mu = |a: Arm| if a.is_treated() { mu1 } else { mu0 };
            Unit {
                y_factual: mu(t) + params.noise_sd * eps_f,
                y_counterfactual: Some(mu(t.flip()) + params.noise_sd * eps_cf),
                mu0: Some(mu0),
                mu1: Some(mu1),
                randomized: None,
                x,
                t,
            }
        })
        .collect();
    Ok(ObservationalDataset::new(format!("synthetic-{unit_seed}"), units).expect("uniform dimension"))
}

/// Randomized-trial-plus-observational-controls layout with binary outcomes.
///
/// The randomized subgroup has `n_randomized_treated + n_randomized_control`
/// units with `t ~ Bernoulli(1/2)`; the individual counts only fix its size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobsLikeConfig {
    pub n_randomized_treated: usize,
    pub n_randomized_control: usize,
    pub n_observational_control: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
}

impl JobsLikeConfig {
    pub fn n_randomized(&self) -> usize {
        self.n_randomized_treated + self.n_randomized_control
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.n_randomized_treated == 0 || self.n_randomized_control == 0 || self.n_observational_control == 0 {
            return Err(DatagenError::InvalidConfig("all jobs-like counts must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(DatagenError::InvalidConfig("d must be at least 1".into()));
        }
        Ok(())
    }
}

/// Latent logit surfaces of the jobs-like generator:
/// `latent0 = a.x + base`, `latent1 = latent0 + shift + g.x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobsParams {
    pub a: Vec<f64>,
    pub base: f64,
    pub shift: f64,
    pub g: Vec<f64>,
    /// Mean offset of the observational-control covariates.
    pub control_covariate_shift: f64,
}

impl JobsParams {
    pub fn latent(&self, x: &[f64]) -> (f64, f64) {
        let l0 = dot(&self.a, x) + self.base;
        (l0, l0 + self.shift + dot(&self.g, x))
    }
}

pub fn jobs_params(cfg: &JobsLikeConfig) -> JobsParams {
    let mut rng = seed::rng(seed::derive(cfg.seed, "jobs-params", 0));
    let scale = 1.0 / (cfg.d as f64).sqrt();
    let a = normal_vec(&mut rng, cfg.d).into_iter().map(|v| v * scale).collect();
    // Treatment helps on one side of a hyperplane and hurts on the other.
    let mut g = vec![0.0; cfg.d];
    g[0] = 1.5;
    JobsParams {
        a,
        base: -0.2,
        shift: 0.3,
        g,
        control_covariate_shift: -0.5,
    }
}

pub fn generate_jobs_like(cfg: &JobsLikeConfig) -> Result<ObservationalDataset, DatagenError> {
    generate_jobs_like_with_params(cfg).map(|(ds, _)| ds)
}

pub fn generate_jobs_like_with_params(cfg: &JobsLikeConfig) -> Result<(ObservationalDataset, JobsParams), DatagenError> {
    cfg.validate()?;
    let params = jobs_params(cfg);
    let ds = sample_jobs_like(cfg, &params, cfg.seed)?;
    Ok((ds, params))
}

/// Draw the jobs-like layout from fixed parameters.
pub fn sample_jobs_like(cfg: &JobsLikeConfig, params: &JobsParams, unit_seed: u64) -> Result<ObservationalDataset, DatagenError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(unit_seed, "jobs-units", 0));
    let n_rand = cfg.n_randomized();
    let total = n_rand + cfg.n_observational_control;
    let units = (0..total)
        .map(|i| {
            let randomized = i < n_rand;
            let mut x = normal_vec(&mut rng, cfg.d);
            let t = if randomized {
                Arm::from(rng.random::<f64>() < 0.5)
            } else {
                x.iter_mut().for_each(|v| *v += params.control_covariate_shift);
                Arm::Control
            };
            let (l0, l1) = params.latent(&x);
            let (p0, p1) = (logistic(l0), logistic(l1));
            let draw = |rng: &mut ChaCha8Rng, p: f64| if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            let y0 = draw(&mut rng, p0);
            let y1 = draw(&mut rng, p1);
            let (yf, ycf) = if t.is_treated() { (y1, y0) } else { (y0, y1) };
            Unit {
                x,
                t,
                y_factual: yf,
                y_counterfactual: Some(ycf),
                mu0: Some(p0),
                mu1: Some(p1),
                randomized: Some(randomized),
            }
        })
        .collect();
    Ok(ObservationalDataset::new(format!("jobs-like-{unit_seed}"), units).expect("uniform dimension"))
}

/// `mu1 - mu0` per unit.
pub fn true_ite(ds: &ObservationalDataset) -> Result<Vec<f64>, DatagenError> {
    ds.units()
        .iter()
        .enumerate()
        .map(|(index, u)| u.true_ite().ok_or(DatagenError::MissingGroundTruth { index }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, gamma: f64, noise: f64, surface: Surface) -> DgpConfig {
        DgpConfig {
            n,
            d: 5,
            confounding_strength: gamma,
            propensity_clip: 0.05,
            noise_sd: noise,
            surface,
            seed: 42,
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        cov / (va * vb).sqrt()
    }

    const LINEAR: Surface = Surface::Linear {
        effect: 0.7,
        heterogeneity: 1.0,
    };

    #[test]
    fn no_confounding_gives_uninformative_assignment() {
        let c = cfg(100_000, 0.0, 1.0, LINEAR);
        let (ds, params) = generate_observational_with_params(&c).unwrap();
        let t: Vec<f64> = ds.units().iter().map(|u| u.t.as_f64()).collect();
        let wx: Vec<f64> = ds.units().iter().map(|u| dot(&params.w, &u.x)).collect();
        assert!(ds.units().iter().all(|u| params.propensity(&u.x) == 0.5));
        assert!(corr(&t, &wx).abs() < 0.02);
    }

    #[test]
    fn propensity_respects_clip() {
        for gamma in [0.5, 3.0, 50.0] {
            let c = cfg(2000, gamma, 1.0, LINEAR);
            let (ds, params) = generate_observational_with_params(&c).unwrap();
            for u in ds.units() {
                let e = params.propensity(&u.x);
                assert!((0.05..=0.95).contains(&e), "e = {e}");
            }
        }
    }

    #[test]
    fn noiseless_outcomes_equal_surfaces() {
        let ds = generate_observational(&cfg(500, 1.0, 0.0, Surface::ExpNonlinear { ate: 4.0 })).unwrap();
        for u in ds.units() {
            assert_eq!(u.y_factual, u.mu(u.t).unwrap());
            assert_eq!(u.y_counterfactual.unwrap(), u.mu(u.t.flip()).unwrap());
        }
    }

    #[test]
    fn residuals_are_homoscedastic_and_ignorable() {
        let sd = 0.7;
        let ds = generate_observational(&cfg(100_000, 2.0, sd, LINEAR)).unwrap();
        let resid: Vec<f64> = ds.units().iter().map(|u| u.y_factual - u.mu(u.t).unwrap()).collect();
        let t: Vec<f64> = ds.units().iter().map(|u| u.t.as_f64()).collect();
        assert!(corr(&resid, &t).abs() < 0.02);
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        assert!((var - sd * sd).abs() < 0.05 * sd * sd, "var = {var}");
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(300, 1.5, 0.5, Surface::ExpNonlinear { ate: 4.0 });
        assert_eq!(generate_observational(&c).unwrap(), generate_observational(&c).unwrap());
        let other = DgpConfig { seed: 43, ..c.clone() };
        assert_ne!(generate_observational(&c).unwrap(), generate_observational(&other).unwrap());
    }

    #[test]
    fn true_ite_direct_and_constant() {
        let mut u = Unit::new(vec![0.0], Arm::Treated, 3.0);
        u.mu0 = Some(1.0);
        u.mu1 = Some(3.0);
        let ds = ObservationalDataset::new("one", vec![u]).unwrap();
        assert_eq!(true_ite(&ds).unwrap(), vec![2.0]);

        let c = cfg(
            200,
            1.0,
            0.3,
            Surface::Linear {
                effect: 0.7,
                heterogeneity: 0.0,
            },
        );
        for tau in true_ite(&generate_observational(&c).unwrap()).unwrap() {
            assert!((tau - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn true_ite_requires_ground_truth() {
        let ds = ObservationalDataset::new("bare", vec![Unit::new(vec![0.0], Arm::Treated, 1.0)]).unwrap();
        assert_eq!(true_ite(&ds), Err(DatagenError::MissingGroundTruth { index: 0 }));
    }

    #[test]
    fn exp_surface_recomputes_from_stored_parameters() {
        let c = cfg(400, 1.0, 0.5, Surface::ExpNonlinear { ate: 4.0 });
        let (ds, params) = generate_observational_with_params(&c).unwrap();
        let json = serde_json::to_string(&params).unwrap();
        let restored: DgpParams = serde_json::from_str(&json).unwrap();
        let SurfaceParams::ExpNonlinear { beta, offset, omega } = restored.surface else {
            panic!("wrong surface");
        };
        for (u, tau) in ds.units().iter().zip(true_ite(&ds).unwrap()) {
            let mu0: f64 = u.x.iter().zip(&beta).map(|(x, b)| (x + offset) * b).sum::<f64>().exp();
            let mu1: f64 = u.x.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() - omega;
            assert!((tau - (mu1 - mu0)).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_surface_population_ate_is_calibrated() {
        let c = DgpConfig {
            d: 10,
            ..cfg(200_000, 0.0, 0.0, Surface::ExpNonlinear { ate: 4.0 })
        };
        let taus = true_ite(&generate_observational(&c).unwrap()).unwrap();
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        let sd = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / taus.len() as f64).sqrt();
        let se = sd / (taus.len() as f64).sqrt();
        assert!((mean - 4.0).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn jobs_like_shape() {
        let c = JobsLikeConfig {
            n_randomized_treated: 297,
            n_randomized_control: 425,
            n_observational_control: 2490,
            d: 8,
            seed: 5,
        };
        let ds = generate_jobs_like(&c).unwrap();
        assert_eq!(ds.len(), 3212);
        let rand = ds.randomized_units();
        assert_eq!(rand.len(), 722);
        let frac = rand.iter().filter(|u| u.t.is_treated()).count() as f64 / rand.len() as f64;
        assert!((frac - 0.5).abs() <= 3.0 * (0.25 / rand.len() as f64).sqrt(), "frac {frac}");
        for u in ds.units() {
            assert!(u.y_factual == 0.0 || u.y_factual == 1.0);
            if u.randomized == Some(false) {
                assert_eq!(u.t, Arm::Control);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = cfg(10, 1.0, 1.0, LINEAR);
        c.propensity_clip = 0.0;
        assert!(generate_observational(&c).is_err());
        c.propensity_clip = 0.05;
        c.n = 1;
        assert!(generate_observational(&c).is_err());
    }
}
