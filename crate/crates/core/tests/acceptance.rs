//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p ite-distill --test acceptance -- --nocapture` (the
//! lines are printed either way; this target has no libtest harness).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use ite_distill::data::{load_dataset, split, ObservationalDataset, Schema, SplitSpec, Unit};
use ite_distill::datagen::{dgp_params, sample_observational, DgpConfig, JobsLikeConfig, Surface};
use ite_distill::distill::{build_rct_pairs, distill, relative_error};
use ite_distill::experiment::{
    run_experiment, DataSource, ExperimentConfig, ExperimentOutcome, Format, LearnerEntry, RunOptions, SeedPaths, Variant,
};
use ite_distill::interpretable::{
    cart_fit, honest_halves, kernel_ridge_fit, lasso_fit, Design, InterpretableModel, LearnerSpec, Node, RegressionTree,
};
use ite_distill::kernel::Kernel;
use ite_distill::metrics::{
    att_and_error, expected_losses, policy_risk, policy_risk_estimate, random_policy_risk, representation_ipm, standard_error,
};
use ite_distill::oracle::{cfr_objective, gradient, mmd_squared, train_oracle, Batch, CfrModel, OutcomeKind, TrainConfig};
use ite_distill::{seed, Arm};

const N_SEEDS: u64 = 20;
const JOBS_SEEDS: u64 = 10;
const CART_DEPTHS: [usize; 4] = [3, 4, 5, 6];
const RUNTIME_LIMIT: Duration = Duration::from_secs(600);

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;
const FD_MODELS: u64 = 24;

type Outcome = Result<String, String>;

fn acceptance_dgp() -> DgpConfig {
    DgpConfig {
        n: 2000,
        d: 10,
        confounding_strength: 2.0,
        propensity_clip: 0.05,
        noise_sd: 0.5,
        surface: Surface::ExpNonlinear { ate: 4.0 },
        seed: 0,
    }
}

fn all_learners() -> Vec<LearnerEntry> {
    let one = |spec| LearnerEntry { spec, depths: None };
    vec![
        LearnerEntry {
            spec: LearnerSpec::Cart { max_depth: 3, min_leaf: 5 },
            depths: Some(CART_DEPTHS.to_vec()),
        },
        one(LearnerSpec::HonestTree {
            max_depth: 4,
            min_leaf: 5,
            seed: 0,
        }),
        one(LearnerSpec::Lasso { lambda: 0.01 }),
        one(LearnerSpec::KernelRidge {
            lambda: 0.001,
            kernel: Kernel::Rbf { bandwidth: 3.0 },
        }),
        one(LearnerSpec::RandomForest {
            n_trees: 30,
            max_depth: 6,
            min_leaf: 5,
            seed: 0,
        }),
        one(LearnerSpec::Gbm {
            n_rounds: 50,
            shrinkage: 0.1,
            max_depth: 3,
        }),
    ]
}

fn synthetic_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(acceptance_dgp()),
        split: SplitSpec::default(),
        oracle: TrainConfig::default(),
        learners: all_learners(),
        seeds: (1..=N_SEEDS).collect(),
        b_phi: 1.0,
        output_dir: dir.to_path_buf(),
    }
}

fn jobs_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::JobsLike(JobsLikeConfig {
            n_randomized_treated: 297,
            n_randomized_control: 425,
            n_observational_control: 2490,
            d: 8,
            seed: 0,
        }),
        split: SplitSpec::default(),
        oracle: TrainConfig {
            epochs: 60,
            outcome: OutcomeKind::Binary,
            ..TrainConfig::default()
        },
        learners: vec![LearnerEntry {
            spec: LearnerSpec::Cart { max_depth: 4, min_leaf: 10 },
            depths: None,
        }],
        seeds: (1..=JOBS_SEEDS).collect(),
        b_phi: 1.0,
        output_dir: dir.to_path_buf(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn test_fold(cfg: &ExperimentConfig, s: u64) -> Result<ObservationalDataset, String> {
    load_dataset(SeedPaths::new(&cfg.output_dir, s).fold("test"), &Schema::default()).map_err(|e| e.to_string())
}

fn oracle_of(cfg: &ExperimentConfig, s: u64) -> Result<CfrModel, String> {
    CfrModel::load(SeedPaths::new(&cfg.output_dir, s).oracle()).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- criterion 1

fn depth_ordering(outcome: &ExperimentOutcome, elapsed: Duration) -> Outcome {
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut prev: BTreeMap<&str, f64> = BTreeMap::new();
    for depth in CART_DEPTHS {
        let label = format!("cart_d{depth}");
        let collect = |variant| -> Result<Vec<f64>, String> {
            outcome
                .seeds
                .iter()
                .map(|s| {
                    s.eval(&label, variant)
                        .and_then(|r| r.sqrt_pehe)
                        .ok_or_else(|| format!("seed {}: no sqrt-PEHE for {label}", s.seed))
                })
                .collect()
        };
        let ours = collect(Variant::Ours)?;
        let base = collect(Variant::Baseline)?;
        let (m_o, m_b) = (mean(&ours), mean(&base));
        let combined = standard_error(&ours).hypot(standard_error(&base));
        lines.push(format!("d{depth} ours {m_o:.3} base {m_b:.3} gap {:.2} SE", (m_b - m_o) / combined));
        if (m_b - m_o).partial_cmp(&combined) != Some(std::cmp::Ordering::Greater) {
            failures.push(format!("depth {depth}: gap {:.4} <= combined SE {combined:.4}", m_b - m_o));
        }
        for (name, m) in [("ours", m_o), ("baseline", m_b)] {
            if let Some(&p) = prev.get(name) {
                if m > p {
                    failures.push(format!("{name} sqrt-PEHE rises at depth {depth}: {p:.4} -> {m:.4}"));
                }
            }
            prev.insert(name, m);
        }
    }
    if elapsed > RUNTIME_LIMIT {
        failures.push(format!("runtime {:.0}s exceeds {}s", elapsed.as_secs_f64(), RUNTIME_LIMIT.as_secs()));
    }
    let detail = format!("{}; {} seeds in {:.0}s", lines.join(", "), outcome.seeds.len(), elapsed.as_secs_f64());
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------- criterion 2

fn bounds_hold(outcome: &ExperimentOutcome) -> Outcome {
    let mut checked = 0;
    let mut min_margin = f64::INFINITY;
    for s in &outcome.seeds {
        if s.bound("cfr", Variant::Oracle).is_none() {
            return Err(format!("seed {}: no oracle bound report", s.seed));
        }
        for b in &s.bounds {
            checked += 1;
            min_margin = min_margin.min(b.report.rhs_first + b.report.tol_mc - b.report.pehe_lhs);
        }
    }
    let violations = outcome.bound_violations();
    if checked == 0 {
        return Err("no bound reports".into());
    }
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|(s, m, v)| format!("seed {s} {m}/{}", v.as_str())).collect();
        return Err(format!("{} of {checked} violated: {}", violations.len(), list.join(", ")));
    }
    Ok(format!("{checked} checks hold (smallest margin {min_margin:.4})"))
}

// ---------------------------------------------------------------- criterion 3

fn random_batch<R: Rng>(rng: &mut R, n: usize, d: usize, binary: bool) -> Vec<(Vec<f64>, Arm, f64)> {
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            // Alternate arms so both are always present.
            let t = Arm::from(i % 2 == 0);
            let y = if binary { f64::from(rng.random_bool(0.5)) } else { rng.random_range(-2.0..2.0) };
            (x, t, y)
        })
        .collect()
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n_checked = 0usize;
    for k in 0..FD_MODELS {
        let mut rng = seed::rng(seed::derive(2024, "acceptance-fd", k));
        let d = 2 + (k as usize % 3);
        let binary = k % 2 == 1;
        let kernel = if k % 3 == 0 { Kernel::Rbf { bandwidth: 1.3 } } else { Kernel::Linear };
        let outcome = if binary { OutcomeKind::Binary } else { OutcomeKind::Regression };
        let model = CfrModel::random(&[d, 5, 4], &[4, 3, 1], outcome, kernel, 0.6, &mut rng);
        let cfg = TrainConfig {
            alpha: [0.0, 0.5, 2.0][k as usize % 3],
            kernel,
            outcome,
            ..TrainConfig::default()
        };
        let data = random_batch(&mut rng, 9, d, binary);
        let batch: Vec<Batch> = data.iter().map(|(x, t, y)| Batch { x, t: *t, y: *y }).collect();
        let analytic = gradient(&model, &batch, &cfg).map_err(|e| e.to_string())?.flat();
        let theta = model.flat_params();
        let mut probe = model.clone();
        for (i, g) in analytic.iter().enumerate() {
            let mut at = |delta: f64| -> Result<f64, String> {
                let mut p = theta.clone();
                p[i] += delta;
                probe.set_flat_params(&p);
                cfr_objective(&probe, &batch, &cfg).map_err(|e| e.to_string())
            };
            let fd = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
            n_checked += 1;
        }
    }
    let detail = format!("{FD_MODELS} models, {n_checked} parameters, max relative error {worst:.2e}");
    if worst < FD_REL_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 4

fn lasso_matches_normal_equations() -> Result<f64, String> {
    let mut rng = seed::rng(seed::derive(7, "acceptance-ols", 0));
    let (n, p) = (60, 4);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 1.0 + 2.0 * r[0] - 0.5 * r[1] + 0.25 * r[3] + rng.random_range(-0.3..0.3))
        .collect();
    let fitted = lasso_fit(&Design::new(rows.clone(), y.clone()).map_err(|e| e.to_string())?, 0.0).map_err(|e| e.to_string())?;
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let yv = DVector::from_vec(y);
    let beta = (x.transpose() * &x)
        .cholesky()
        .ok_or("normal equations are singular")?
        .solve(&(x.transpose() * yv));
    let mut err = (fitted.intercept - beta[0]).abs();
    for j in 0..p {
        err = err.max((fitted.coefficients[j] - beta[j + 1]).abs());
    }
    Ok(err)
}

/// Columns 1..8 of the 8x8 Sylvester Hadamard matrix: zero mean, unit
/// population variance, mutually orthogonal.
fn hadamard_rows() -> Vec<Vec<f64>> {
    (0..8usize)
        .map(|i| (1..8usize).map(|j| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 }).collect())
        .collect()
}

fn lasso_matches_soft_threshold() -> Result<f64, String> {
    let rows = hadamard_rows();
    let y = vec![3.0, -1.0, 0.5, 2.0, -2.5, 1.5, 0.0, 4.0];
    let y_mean = mean(&y);
    let mut err: f64 = 0.0;
    for lambda in [0.0, 0.1, 0.4, 1.0, 5.0] {
        let m = lasso_fit(&Design::new(rows.clone(), y.clone()).map_err(|e| e.to_string())?, lambda).map_err(|e| e.to_string())?;
        for j in 0..7 {
            let z = rows.iter().zip(&y).map(|(r, yi)| r[j] * (yi - y_mean)).sum::<f64>() / 8.0;
            let closed = z.signum() * (z.abs() - lambda).max(0.0);
            err = err.max((m.standardized_coefficients[j] - closed).abs());
        }
    }
    Ok(err)
}

fn kernel_ridge_residual() -> Result<f64, String> {
    let mut rng = seed::rng(seed::derive(7, "acceptance-krr", 0));
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| (2.0 * r[0]).sin() + r[1] * r[2]).collect();
    let y_mean = mean(&y);
    let mut err: f64 = 0.0;
    for kernel in [Kernel::Linear, Kernel::Rbf { bandwidth: 0.7 }] {
        let m = kernel_ridge_fit(&Design::new(rows.clone(), y.clone()).map_err(|e| e.to_string())?, 0.05, kernel).map_err(|e| e.to_string())?;
        for (lhs, yi) in m.system_times_dual().iter().zip(&y) {
            err = err.max((lhs - (yi - y_mean)).abs());
        }
    }
    Ok(err)
}

fn cart_four_points() -> Result<(), String> {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [0.0, 0.0, 10.0, 10.0];
    let sse = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|y| (y - m).powi(2)).sum::<f64>()
    };
    // Exhaustive search over midpoints.
    let (mut best, mut best_k) = (f64::INFINITY, 0);
    for k in 1..xs.len() {
        let s = sse(&ys[..k]) + sse(&ys[k..]);
        if s < best {
            best = s;
            best_k = k;
        }
    }
    let threshold = 0.5 * (xs[best_k - 1] + xs[best_k]);
    let expected = RegressionTree {
        root: Node::Split {
            feature: 0,
            threshold,
            left: Box::new(Node::Leaf { value: mean(&ys[..best_k]) }),
            right: Box::new(Node::Leaf { value: mean(&ys[best_k..]) }),
        },
    };
    let design = Design::new(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec()).map_err(|e| e.to_string())?;
    let tree = cart_fit(&design, 1, 1).map_err(|e| e.to_string())?;
    if tree != expected || threshold != 1.5 {
        return Err(format!("got {tree:?}, exhaustive search gives {expected:?}"));
    }
    Ok(())
}

/// Left/right path to the leaf reached by `row`, and the leaf's value.
fn leaf_of(node: &Node, row: &[f64], path: &mut String) -> f64 {
    match node {
        Node::Leaf { value } => *value,
        Node::Split { feature, threshold, left, right } => {
            if row[*feature] <= *threshold {
                path.push('L');
                leaf_of(left, row, path)
            } else {
                path.push('R');
                leaf_of(right, row, path)
            }
        }
    }
}

fn honest_leaves() -> Result<usize, String> {
    let mut rng = seed::rng(seed::derive(7, "acceptance-honest", 0));
    let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| if r[0] > 0.2 { 3.0 } else { -1.0 } + r[1] + rng.random_range(-0.5..0.5)).collect();
    let design = Design::new(rows.clone(), y.clone()).map_err(|e| e.to_string())?;
    let spec = LearnerSpec::HonestTree {
        max_depth: 3,
        min_leaf: 5,
        seed: 11,
    };
    let tree = match ite_distill::interpretable::fit_design(&spec, &design).map_err(|e| e.to_string())? {
        InterpretableModel::Tree(t) => t,
        other => return Err(format!("honest tree fit returned {other:?}")),
    };
    let (_, estimation) = honest_halves(rows.len(), 11);
    let mut groups: BTreeMap<String, (f64, Vec<f64>)> = BTreeMap::new();
    for &i in &estimation {
        let mut path = String::new();
        let value = leaf_of(&tree.root, &rows[i], &mut path);
        groups.entry(path).or_insert_with(|| (value, Vec::new())).1.push(y[i]);
    }
    for (path, (value, ys)) in &groups {
        let expected = ys.iter().sum::<f64>() / ys.len() as f64;
        if *value != expected {
            return Err(format!("leaf {path}: value {value} differs from estimation mean {expected}"));
        }
    }
    Ok(groups.len())
}

fn learner_oracles() -> Outcome {
    let ols = lasso_matches_normal_equations()?;
    let soft = lasso_matches_soft_threshold()?;
    let krr = kernel_ridge_residual()?;
    cart_four_points()?;
    let leaves = honest_leaves()?;
    let detail = format!("lasso/OLS {ols:.1e}, soft-threshold {soft:.1e}, KRR residual {krr:.1e}, CART split 1.5, {leaves} honest leaves exact");
    if ols < 1e-6 && soft < 1e-8 && krr < 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 5

fn mmd_properties() -> Outcome {
    let mut rng = seed::rng(seed::derive(5, "acceptance-mmd", 0));
    let mut self_max: f64 = 0.0;
    let mut lin_err: f64 = 0.0;
    for k in 0..100 {
        let d = 1 + k % 5;
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, shift: f64| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).collect()
        };
        let a = draw(&mut rng, 3 + k % 7, 0.0);
        let b = draw(&mut rng, 4 + k % 5, 0.3);
        for kernel in [Kernel::Linear, Kernel::Rbf { bandwidth: 0.8 }] {
            self_max = self_max.max(mmd_squared(&a, &a, &kernel).map_err(|e| e.to_string())?);
        }
        let m = mmd_squared(&a, &b, &Kernel::Linear).map_err(|e| e.to_string())?;
        let sq: f64 = (0..d)
            .map(|j| {
                let ma = a.iter().map(|r| r[j]).sum::<f64>() / a.len() as f64;
                let mb = b.iter().map(|r| r[j]).sum::<f64>() / b.len() as f64;
                (ma - mb).powi(2)
            })
            .sum();
        lin_err = lin_err.max((m - sq).abs());
    }

    let dgp = acceptance_dgp();
    let params = dgp_params(&dgp);
    let ds = sample_observational(&dgp, &params, seed::derive(1, "data", dgp.seed)).map_err(|e| e.to_string())?;
    let (train, valid, _) = split(&ds, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let mut ipm = Vec::new();
    for alpha in [0.0, 100.0] {
        let cfg = TrainConfig {
            alpha,
            ..TrainConfig::default()
        };
        let model = train_oracle(&train, &valid, &cfg).map_err(|e| e.to_string())?;
        ipm.push(representation_ipm(&model, &train, &Kernel::Linear).map_err(|e| e.to_string())?.powi(2));
    }
    let detail = format!(
        "self MMD^2 max {self_max:.1e}, linear vs mean gap {lin_err:.1e}, trained MMD^2 alpha=0 {:.4e} vs alpha=100 {:.4e}",
        ipm[0], ipm[1]
    );
    if self_max < 1e-12 && lin_err < 1e-10 && ipm[1] < ipm[0] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 6

fn constant_model(m: &InterpretableModel, c: f64) -> bool {
    let leaf = |t: &RegressionTree, v: f64| t.root == Node::Leaf { value: v };
    match m {
        InterpretableModel::Tree(t) => leaf(t, c),
        InterpretableModel::Linear(l) => l.intercept == c && l.coefficients.iter().all(|b| *b == 0.0),
        InterpretableModel::Kernel(k) => k.y_mean == c && k.dual.iter().all(|a| *a == 0.0),
        InterpretableModel::Ensemble(e) => match e.rule {
            ite_distill::interpretable::Combination::Mean => e.trees.iter().all(|t| leaf(t, c)),
            ite_distill::interpretable::Combination::Boosted { base, .. } => base == c && e.trees.iter().all(|t| leaf(t, 0.0)),
        },
    }
}

fn algorithm_exactness() -> Outcome {
    let dgp = DgpConfig {
        n: 301,
        d: 4,
        ..acceptance_dgp()
    };
    let ds = sample_observational(&dgp, &dgp_params(&dgp), 3).map_err(|e| e.to_string())?;
    let pairs = build_rct_pairs(&ds).map_err(|e| e.to_string())?;
    if pairs.len() != 2 * ds.len() || pairs.count(Arm::Treated) != ds.len() || pairs.count(Arm::Control) != ds.len() {
        return Err(format!("|D0| = {} with {} treated for N = {}", pairs.len(), pairs.count(Arm::Treated), ds.len()));
    }
    let c = 2.5;
    let oracle = |_: &[f64], _: Arm| c;
    let specs = [
        LearnerSpec::Cart { max_depth: 5, min_leaf: 1 },
        LearnerSpec::HonestTree {
            max_depth: 5,
            min_leaf: 1,
            seed: 2,
        },
        LearnerSpec::Lasso { lambda: 0.01 },
        LearnerSpec::KernelRidge {
            lambda: 0.01,
            kernel: Kernel::Rbf { bandwidth: 2.0 },
        },
        LearnerSpec::RandomForest {
            n_trees: 5,
            max_depth: 4,
            min_leaf: 1,
            seed: 2,
        },
        LearnerSpec::Gbm {
            n_rounds: 10,
            shrinkage: 0.5,
            max_depth: 3,
        },
    ];
    for spec in &specs {
        let m = distill(&ds, &oracle, spec).map_err(|e| e.to_string())?;
        let eps = relative_error(&m, &oracle, &pairs).map_err(|e| e.to_string())?;
        if eps != 0.0 || !constant_model(&m, c) {
            return Err(format!("{}: relative error {eps:e}, constant {}", spec.label(), constant_model(&m, c)));
        }
    }
    Ok(format!("|D0| = 2N = {}, half treated; constant oracle exact for {} learner kinds", pairs.len(), specs.len()))
}

// ---------------------------------------------------------------- criterion 7

fn jobs_sanity(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Outcome {
    let (mut ours, mut control, mut random) = (Vec::new(), Vec::new(), Vec::new());
    let (mut att_oracle, mut att_zero) = (Vec::new(), Vec::new());
    for s in &outcome.seeds {
        let test = test_fold(cfg, s.seed)?;
        let rct = test.randomized_units();
        let model = InterpretableModel::load(SeedPaths::new(&cfg.output_dir, s.seed).model("cart_d4", Variant::Ours)).map_err(|e| e.to_string())?;
        let risks = (
            policy_risk_estimate(&model, &rct).map_err(|e| e.to_string())?,
            policy_risk(&vec![false; rct.len()], &rct).map_err(|e| e.to_string())?,
            random_policy_risk(&rct).map_err(|e| e.to_string())?,
        );
        if let (Some(o), Some(c), Some(r)) = risks {
            ours.push(o);
            control.push(c);
            random.push(r);
        }
        let treated: Vec<&Unit> = rct.iter().copied().filter(|u| u.t.is_treated()).collect();
        let controls: Vec<&Unit> = rct.iter().copied().filter(|u| !u.t.is_treated()).collect();
        let oracle = oracle_of(cfg, s.seed)?;
        att_oracle.push(att_and_error(&oracle, &treated, &controls).map_err(|e| e.to_string())?.eps_att);
        att_zero.push(att_and_error(&|_: &[f64], _: Arm| 0.0, &treated, &controls).map_err(|e| e.to_string())?.eps_att);
    }
    if ours.len() < 5 {
        return Err(format!("only {} seeds had an estimable policy risk", ours.len()));
    }
    let (o, c, r) = (mean(&ours), mean(&control), mean(&random));
    let (ao, az) = (mean(&att_oracle), mean(&att_zero));
    let detail = format!(
        "{} seeds: policy risk ours {o:.4}, always-control {c:.4}, random {r:.4}; eps_ATT oracle {ao:.4} vs zero {az:.4}",
        ours.len()
    );
    if o <= c && o <= r && ao < az {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- criterion 8

fn metric_identities(runs: &[(&ExperimentConfig, &ExperimentOutcome)]) -> Outcome {
    let mut n_ate = 0;
    for (_, outcome) in runs {
        for s in &outcome.seeds {
            for e in &s.evals {
                if let (Some(a), Some(p)) = (e.report.ate_error, e.report.sqrt_pehe) {
                    n_ate += 1;
                    if a > p {
                        return Err(format!("seed {} {}: ATE error {a} > sqrt-PEHE {p}", s.seed, e.model));
                    }
                }
            }
        }
    }
    let (cfg, outcome) = runs[0];
    let noise_sd = cfg.noise_sd().ok_or("first run must be synthetic")?;
    let mut mixture_err: f64 = 0.0;
    let mut n_min = 0;
    for s in &outcome.seeds {
        let test = test_fold(cfg, s.seed)?;
        let oracle = oracle_of(cfg, s.seed)?;
        let losses = expected_losses(&oracle, &test, noise_sd).map_err(|e| e.to_string())?;
        let u = test.treated_fraction();
        let mixed = u * losses.eps_f_t1 + (1.0 - u) * losses.eps_f_t0;
        mixture_err = mixture_err.max((losses.eps_f - mixed).abs());
        for b in &s.bounds {
            n_min += 1;
            if b.report.sigma_y_sq != b.report.sigma_yt_sq_p.min(b.report.sigma_yt_sq_ptilde) {
                return Err(format!("seed {} {}: sigma_Y^2 is not the minimum", s.seed, b.model));
            }
        }
    }
    let detail = format!("{n_ate} ATE/PEHE pairs, mixture gap {mixture_err:.1e}, {n_min} sigma_Y^2 minima exact");
    if mixture_err < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

/// Everything under `reports/` plus the manifest's artifact list must match.
fn byte_identical(a: (&ExperimentConfig, &ExperimentOutcome), b: (&ExperimentConfig, &ExperimentOutcome)) -> Outcome {
    let ra = read_tree(&a.0.output_dir.join("reports"))?;
    let rb = read_tree(&b.0.output_dir.join("reports"))?;
    if ra.keys().ne(rb.keys()) {
        return Err("report file sets differ".into());
    }
    if let Some(name) = ra.iter().find(|(k, v)| rb[*k] != **v).map(|(k, _)| k) {
        return Err(format!("{name} differs between runs"));
    }
    if a.1.manifest.artifacts != b.1.manifest.artifacts {
        return Err("artifact hashes differ between runs".into());
    }
    Ok(format!("{} report files and {} artifact hashes identical", ra.len(), a.1.manifest.artifacts.len()))
}

// ---------------------------------------------------------------------------

fn report(criterion: u32, name: &str, result: Outcome) -> bool {
    match result {
        Ok(detail) => {
            println!("PASS criterion {criterion} ({name}): {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL criterion {criterion} ({name}): {detail}");
            false
        }
    }
}

fn run(cfg: &ExperimentConfig, workers: usize) -> Result<(ExperimentOutcome, Duration), String> {
    let start = Instant::now();
    let options = RunOptions {
        seed_subset: None,
        workers: Some(workers),
        format: Format::Csv,
    };
    let outcome = run_experiment(cfg, &options).map_err(|e| e.to_string())?;
    Ok((outcome, start.elapsed()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let synth = synthetic_config(&tmp.path().join("synthetic"));
    let synth_again = synthetic_config(&tmp.path().join("synthetic-rerun"));
    let jobs = jobs_config(&tmp.path().join("jobs"));

    let mut ok = true;
    let first = run(&synth, 1);
    let second = run(&synth_again, 2);
    let jobs_run = run(&jobs, 1);

    match &first {
        Ok((outcome, elapsed)) => {
            ok &= report(1, "distilled CART beats baseline at every depth", depth_ordering(outcome, *elapsed));
            ok &= report(2, "error bounds hold on every seed and learner", bounds_hold(outcome));
        }
        Err(e) => {
            ok &= report(1, "distilled CART beats baseline at every depth", Err(e.clone()));
            ok &= report(2, "error bounds hold on every seed and learner", Err(e.clone()));
        }
    }
    ok &= report(3, "oracle gradient matches finite differences", gradient_check());
    ok &= report(4, "learner closed forms", learner_oracles());
    ok &= report(5, "MMD properties", mmd_properties());
    ok &= report(6, "pair construction and constant oracle", algorithm_exactness());
    ok &= report(
        7,
        "jobs-like policy risk and ATT sanity",
        match &jobs_run {
            Ok((outcome, _)) => jobs_sanity(&jobs, outcome),
            Err(e) => Err(e.clone()),
        },
    );
    let identities = match (&first, &second, &jobs_run) {
        (Ok((a, _)), Ok((b, _)), Ok((j, _))) => metric_identities(&[(&synth, a), (&jobs, j)])
            .and_then(|m| byte_identical((&synth, a), (&synth_again, b)).map(|d| format!("{m}; {d}"))),
        _ => Err("an experiment run failed".into()),
    };
    ok &= report(8, "metric identities and determinism", identities);

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
