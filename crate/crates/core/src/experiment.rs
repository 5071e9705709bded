//! Config-driven experiment pipeline.
//!
//! Every seed runs five stages, each reading the previous stage's files:
//!
//! | stage          | writes                                                   |
//! |----------------|----------------------------------------------------------|
//! | `gen-data`     | `data/seed-S/{train,validation,test}.csv`                |
//! | `train-oracle` | `models/seed-S/oracle.json`, `oracle_history.json`       |
//! | `distill`      | `models/seed-S/<learner>-{ours,baseline}.{json,txt}`     |
//! | `evaluate`     | `reports/seed-S/eval.{csv,json}`                         |
//! | `bound-report` | `reports/seed-S/bounds.{csv,json}` (synthetic data only) |
//!
//! [`run_experiment`] chains the stages for every seed and then aggregates
//! into `reports/{per_seed.csv,bounds.csv,summary.csv}` and `manifest.json`.
//! The whole output is a pure function of the config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{load_dataset, save_dataset, split, DataError, ObservationalDataset, Schema, SplitSpec};
use crate::datagen::{dgp_params, jobs_params, sample_jobs_like, sample_observational, DatagenError, DgpConfig, JobsLikeConfig};
use crate::distill::{distill, fit_baseline, DistillError};
use crate::interpretable::{InterpretableError, InterpretableModel, LearnerSpec};
use crate::metrics::{evaluate, standard_error, verify_theorem1, verify_theorem2, BoundReport, EvalReport, MetricsError};
use crate::oracle::{train_oracle_with_history, CfrModel, OracleError, TrainConfig, TrainHistory};
use crate::seed::derive;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Fit(#[from] InterpretableError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        match self {
            ExperimentError::Config(_) => true,
            ExperimentError::Seed { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

/// Where the observational data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(DgpConfig),
    JobsLike(JobsLikeConfig),
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: Schema,
    },
}

/// A learner, optionally swept over tree depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerEntry {
    pub spec: LearnerSpec,
    /// Replaces `max_depth` for each listed value; tree-based specs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
}

impl LearnerEntry {
    pub fn expand(&self) -> Result<Vec<LearnerSpec>, ExperimentError> {
        let Some(depths) = &self.depths else {
            return Ok(vec![self.spec.clone()]);
        };
        depths
            .iter()
            .map(|&d| {
                let mut spec = self.spec.clone();
                match &mut spec {
                    LearnerSpec::Cart { max_depth, .. }
                    | LearnerSpec::HonestTree { max_depth, .. }
                    | LearnerSpec::RandomForest { max_depth, .. }
                    | LearnerSpec::Gbm { max_depth, .. } => *max_depth = d,
                    _ => return Err(ExperimentError::Config(format!("{} has no depth to sweep", self.spec.label()))),
                }
                Ok(spec)
            })
            .collect()
    }
}

fn default_b_phi() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub oracle: TrainConfig,
    pub learners: Vec<LearnerEntry>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_b_phi")]
    pub b_phi: f64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let config = |e: &dyn std::fmt::Display| ExperimentError::Config(e.to_string());
        if self.learners.is_empty() {
            return Err(ExperimentError::Config("at least one learner is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(ExperimentError::Config("seeds must be distinct".into()));
        }
        if !(self.b_phi > 0.0 && self.b_phi.is_finite()) {
            return Err(ExperimentError::Config("b_phi must be positive".into()));
        }
        self.split.validate().map_err(|e| config(&e))?;
        self.oracle.validate().map_err(|e| config(&e))?;
        match &self.data {
            DataSource::Synthetic(c) => c.validate().map_err(|e| config(&e))?,
            DataSource::JobsLike(c) => c.validate().map_err(|e| config(&e))?,
            DataSource::Csv { .. } => {}
        }
        let specs = self.learner_specs()?;
        let mut labels: Vec<String> = specs.iter().map(LearnerSpec::label).collect();
        for s in &specs {
            s.validate().map_err(|e| config(&e))?;
        }
        labels.sort();
        labels.dedup();
        if labels.len() != specs.len() {
            return Err(ExperimentError::Config("learner labels must be distinct".into()));
        }
        Ok(())
    }

    /// All learners after depth expansion, in config order.
    pub fn learner_specs(&self) -> Result<Vec<LearnerSpec>, ExperimentError> {
        Ok(self.learners.iter().map(LearnerEntry::expand).collect::<Result<Vec<_>, _>>()?.concat())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Outcome noise standard deviation when it is known.
    pub fn noise_sd(&self) -> Option<f64> {
        match &self.data {
            DataSource::Synthetic(c) => Some(c.noise_sd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Oracle,
    Ours,
    Baseline,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Oracle => "oracle",
            Variant::Ours => "ours",
            Variant::Baseline => "baseline",
        }
    }
}

/// Model name used for the oracle in reports.
pub const ORACLE_MODEL: &str = "cfr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub model: String,
    pub variant: Variant,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub model: String,
    pub variant: Variant,
    pub report: BoundReport,
}

/// Artifact locations for one seed.
pub struct SeedPaths {
    pub data: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl SeedPaths {
    pub fn new(output_dir: &Path, seed: u64) -> Self {
        let dir = format!("seed-{seed}");
        SeedPaths {
            data: output_dir.join("data").join(&dir),
            models: output_dir.join("models").join(&dir),
            reports: output_dir.join("reports").join(&dir),
        }
    }

    pub fn fold(&self, name: &str) -> PathBuf {
        self.data.join(format!("{name}.csv"))
    }

    pub fn oracle(&self) -> PathBuf {
        self.models.join("oracle.json")
    }

    pub fn model(&self, label: &str, variant: Variant) -> PathBuf {
        self.models.join(format!("{label}-{}.json", variant.as_str()))
    }

    pub fn eval(&self, format: Format) -> PathBuf {
        self.reports.join(format!("eval.{}", format.extension()))
    }

    pub fn bounds(&self, format: Format) -> PathBuf {
        self.reports.join(format!("bounds.{}", format.extension()))
    }
}

pub const FOLDS: [&str; 3] = ["train", "validation", "test"];

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require(path: PathBuf) -> Result<PathBuf, ExperimentError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(ExperimentError::MissingArtifact(path))
    }
}

fn load_fold(paths: &SeedPaths, name: &str) -> Result<ObservationalDataset, ExperimentError> {
    let path = require(paths.fold(name))?;
    Ok(load_dataset(path, &Schema::default())?.with_name(name))
}

/// Generate or load the data for `seed`, split it, and save the folds.
pub fn stage_gen_data(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PathBuf>, ExperimentError> {
    let paths = SeedPaths::new(&cfg.output_dir, seed);
    create_dir(&paths.data)?;
    let mut written = Vec::new();
    // The DGP's parameters come from its own seed; each experiment seed
    // draws a fresh sample from that fixed DGP.
    let unit_seed = |dgp_seed: u64| derive(seed, "data", dgp_seed);
    let (full, params) = match &cfg.data {
        DataSource::Synthetic(c) => {
            let p = dgp_params(c);
            (sample_observational(c, &p, unit_seed(c.seed))?, Some(serde_json::to_string_pretty(&p)?))
        }
        DataSource::JobsLike(c) => {
            let p = jobs_params(c);
            (sample_jobs_like(c, &p, unit_seed(c.seed))?, Some(serde_json::to_string_pretty(&p)?))
        }
        DataSource::Csv { path, schema } => (load_dataset(path, schema)?, None),
    };
    if let Some(p) = params {
        let path = paths.data.join("params.json");
        write_file(&path, p)?;
        written.push(path);
    }
    let split_spec = SplitSpec {
        seed: derive(seed, "split", cfg.split.seed),
        ..cfg.split
    };
    let (train, valid, test) = split(&full, &split_spec)?;
    for (name, ds) in FOLDS.iter().zip([&train, &valid, &test]) {
        let path = paths.fold(name);
        save_dataset(ds, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Train the oracle on the saved train fold, selecting on the validation fold.
pub fn stage_train_oracle(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PathBuf>, ExperimentError> {
    let paths = SeedPaths::new(&cfg.output_dir, seed);
    let train = load_fold(&paths, "train")?;
    let valid = load_fold(&paths, "validation")?;
    let oracle_cfg = TrainConfig {
        seed: derive(seed, "oracle", cfg.oracle.seed),
        ..cfg.oracle.clone()
    };
    let (model, history): (CfrModel, TrainHistory) = train_oracle_with_history(&train, &valid, &oracle_cfg)?;
    create_dir(&paths.models)?;
    let model_path = paths.oracle();
    model.save(&model_path)?;
    let history_path = paths.models.join("oracle_history.json");
    write_file(&history_path, serde_json::to_string_pretty(&history)?)?;
    Ok(vec![model_path, history_path])
}

/// Give seeded learners a per-seed stream.
fn seeded_spec(spec: &LearnerSpec, seed: u64) -> LearnerSpec {
    let mut spec = spec.clone();
    match &mut spec {
        LearnerSpec::HonestTree { seed: s, .. } | LearnerSpec::RandomForest { seed: s, .. } => *s = derive(seed, "learner", *s),
        _ => {}
    }
    spec
}

fn covariate_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Fit every learner both ways on the train fold: distilled from the oracle
/// and directly on the factual outcomes.
pub fn stage_distill(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<PathBuf>, ExperimentError> {
    let paths = SeedPaths::new(&cfg.output_dir, seed);
    let train = load_fold(&paths, "train")?;
    let oracle = CfrModel::load(require(paths.oracle())?)?;
    let names = covariate_names(train.d());
    let mut written = Vec::new();
    for spec in cfg.learner_specs()? {
        let spec = seeded_spec(&spec, seed);
        let label = spec.label();
        for (variant, model) in [
            (Variant::Ours, distill(&train, &oracle, &spec)?),
            (Variant::Baseline, fit_baseline(&train, &spec)?),
        ] {
            let path = paths.model(&label, variant);
            model.save(&path)?;
            let text = path.with_extension("txt");
            write_file(&text, model.render(&names))?;
            written.extend([path, text]);
        }
    }
    Ok(written)
}

fn load_model(paths: &SeedPaths, label: &str, variant: Variant) -> Result<InterpretableModel, ExperimentError> {
    Ok(InterpretableModel::load(require(paths.model(label, variant))?)?)
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    write_file(path, bytes)
}

fn entry_header(extra: &[&str]) -> Vec<String> {
    let mut h = vec!["model".to_string(), "variant".to_string()];
    h.extend(extra.iter().map(|s| s.to_string()));
    h
}

/// Metrics of the oracle and every fitted learner on the test fold.
pub fn stage_evaluate(cfg: &ExperimentConfig, seed: u64, format: Format) -> Result<(Vec<EvalEntry>, PathBuf), ExperimentError> {
    let paths = SeedPaths::new(&cfg.output_dir, seed);
    let test = load_fold(&paths, "test")?;
    let oracle = CfrModel::load(require(paths.oracle())?)?;
    let mut entries = vec![EvalEntry {
        model: ORACLE_MODEL.into(),
        variant: Variant::Oracle,
        report: evaluate(&oracle, Some(&oracle), &test)?,
    }];
    for spec in cfg.learner_specs()? {
        let label = spec.label();
        for variant in [Variant::Ours, Variant::Baseline] {
            let model = load_model(&paths, &label, variant)?;
            entries.push(EvalEntry {
                model: label.clone(),
                variant,
                report: evaluate(&model, Some(&oracle), &test)?,
            });
        }
    }
    create_dir(&paths.reports)?;
    let path = paths.eval(format);
    match format {
        Format::Json => write_file(&path, serde_json::to_string_pretty(&entries)?)?,
        Format::Csv => write_rows(
            &path,
            entry_header(&EvalReport::CSV_HEADER),
            entries.iter().map(|e| [vec![e.model.clone(), e.variant.as_str().into()], e.report.csv_values()].concat()).collect(),
        )?,
    }
    Ok((entries, path))
}

/// Bound checks on the test fold: the oracle bound, then the distillation
/// bound for every fitted learner. Needs synthetic data with known noise.
pub fn stage_bound_report(cfg: &ExperimentConfig, seed: u64, format: Format) -> Result<(Vec<BoundEntry>, PathBuf), ExperimentError> {
    let noise_sd = cfg
        .noise_sd()
        .ok_or_else(|| ExperimentError::Config("bound reports need a synthetic data source with known noise".into()))?;
    let paths = SeedPaths::new(&cfg.output_dir, seed);
    let test = load_fold(&paths, "test")?;
    let oracle = CfrModel::load(require(paths.oracle())?)?;
    let kernel = cfg.oracle.kernel;
    let mut entries = vec![BoundEntry {
        model: ORACLE_MODEL.into(),
        variant: Variant::Oracle,
        report: verify_theorem1(&oracle, &test, noise_sd, cfg.b_phi, &kernel)?,
    }];
    for spec in cfg.learner_specs()? {
        let label = spec.label();
        for variant in [Variant::Ours, Variant::Baseline] {
            let model = load_model(&paths, &label, variant)?;
            entries.push(BoundEntry {
                model: label.clone(),
                variant,
                report: verify_theorem2(&model, &oracle, &test, noise_sd, cfg.b_phi, &kernel)?,
            });
        }
    }
    create_dir(&paths.reports)?;
    let path = paths.bounds(format);
    match format {
        Format::Json => write_file(&path, serde_json::to_string_pretty(&entries)?)?,
        Format::Csv => write_rows(
            &path,
            entry_header(&BoundReport::CSV_HEADER),
            entries.iter().map(|e| [vec![e.model.clone(), e.variant.as_str().into()], e.report.csv_values()].concat()).collect(),
        )?,
    }
    Ok((entries, path))
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub evals: Vec<EvalEntry>,
    pub bounds: Vec<BoundEntry>,
    pub artifacts: Vec<PathBuf>,
}

impl SeedOutcome {
    pub fn eval(&self, model: &str, variant: Variant) -> Option<&EvalReport> {
        self.evals.iter().find(|e| e.model == model && e.variant == variant).map(|e| &e.report)
    }

    pub fn bound(&self, model: &str, variant: Variant) -> Option<&BoundReport> {
        self.bounds.iter().find(|e| e.model == model && e.variant == variant).map(|e| &e.report)
    }
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, format: Format) -> Result<SeedOutcome, ExperimentError> {
    let mut artifacts = stage_gen_data(cfg, seed)?;
    artifacts.extend(stage_train_oracle(cfg, seed)?);
    artifacts.extend(stage_distill(cfg, seed)?);
    let (evals, eval_path) = stage_evaluate(cfg, seed, format)?;
    artifacts.push(eval_path);
    let bounds = if cfg.noise_sd().is_some() {
        let (bounds, path) = stage_bound_report(cfg, seed, format)?;
        artifacts.push(path);
        bounds
    } else {
        Vec::new()
    };
    Ok(SeedOutcome {
        seed,
        evals,
        bounds,
        artifacts,
    })
}

/// One aggregated cell: mean and standard error over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and `sd / sqrt(n)` of every metric per learner and variant, over
/// the seeds where the metric was available. Oracle rows are excluded.
pub fn summarize(seeds: &[SeedOutcome]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<usize, (String, Variant, BTreeMap<usize, Vec<f64>>)> = BTreeMap::new();
    for outcome in seeds {
        for (pos, e) in outcome.evals.iter().enumerate() {
            if e.variant == Variant::Oracle {
                continue;
            }
            let cell = cells
                .entry(pos)
                .or_insert_with(|| (e.model.clone(), e.variant, BTreeMap::new()));
            for (k, (_, v)) in e.report.metrics().iter().enumerate() {
                if let Some(v) = v {
                    cell.2.entry(k).or_default().push(*v);
                }
            }
        }
    }
    let names = EvalReport::default().metrics().map(|(n, _)| n);
    let mut rows = Vec::new();
    for (model, variant, metrics) in cells.into_values() {
        for (k, values) in metrics {
            rows.push(SummaryRow {
                model: model.clone(),
                variant: variant.as_str().into(),
                metric: names[k].into(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                stderr: standard_error(&values),
            });
        }
    }
    rows
}

/// Options that do not change any result.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Restrict to these seeds (each must appear in the config).
    pub seed_subset: Option<Vec<u64>>,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub completed_seeds: Vec<u64>,
    pub failed_seeds: Vec<FailedSeed>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedOutcome>,
    pub summary: Vec<SummaryRow>,
    pub manifest: Manifest,
}

impl ExperimentOutcome {
    /// Bound checks whose first inequality failed beyond tolerance, as
    /// `(seed, model, variant)`.
    pub fn bound_violations(&self) -> Vec<(u64, String, Variant)> {
        self.seeds
            .iter()
            .flat_map(|s| s.bounds.iter().filter(|b| !b.report.holds_first).map(move |b| (s.seed, b.model.clone(), b.variant)))
            .collect()
    }
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

fn artifact(root: &Path, path: &Path) -> Result<Artifact, ExperimentError> {
    let bytes = fs::read(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Artifact {
        path: relative(root, path),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn write_aggregates(cfg: &ExperimentConfig, seeds: &[SeedOutcome], summary: &[SummaryRow], format: Format) -> Result<Vec<PathBuf>, ExperimentError> {
    let reports = cfg.output_dir.join("reports");
    create_dir(&reports)?;
    let mut written = Vec::new();

    let per_seed = reports.join("per_seed.csv");
    let mut header = vec!["seed".to_string()];
    header.extend(entry_header(&EvalReport::CSV_HEADER));
    let rows = seeds
        .iter()
        .flat_map(|s| {
            s.evals
                .iter()
                .map(move |e| [vec![s.seed.to_string(), e.model.clone(), e.variant.as_str().into()], e.report.csv_values()].concat())
        })
        .collect();
    write_rows(&per_seed, header, rows)?;
    written.push(per_seed);

    if seeds.iter().any(|s| !s.bounds.is_empty()) {
        let bounds = reports.join("bounds.csv");
        let mut header = vec!["seed".to_string()];
        header.extend(entry_header(&BoundReport::CSV_HEADER));
        let rows = seeds
            .iter()
            .flat_map(|s| {
                s.bounds
                    .iter()
                    .map(move |e| [vec![s.seed.to_string(), e.model.clone(), e.variant.as_str().into()], e.report.csv_values()].concat())
            })
            .collect();
        write_rows(&bounds, header, rows)?;
        written.push(bounds);
    }

    let path = reports.join(format!("summary.{}", format.extension()));
    match format {
        Format::Json => write_file(&path, serde_json::to_string_pretty(summary)?)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in summary {
                w.serialize(row)?;
            }
            if summary.is_empty() {
                w.write_record(["model", "variant", "metric", "mean", "stderr"])?;
            }
            let bytes = w.into_inner().map_err(|e| ExperimentError::Io {
                path: path.clone(),
                source: e.into_error(),
            })?;
            write_file(&path, bytes)?;
        }
    }
    written.push(path);
    Ok(written)
}

/// Run every (selected) seed through all stages, then aggregate.
///
/// Seeds run in parallel on `options.workers` threads; results are collected
/// in config order, so the output does not depend on the worker count. A
/// failing seed does not stop the others; the manifest records which seeds
/// completed and the first failure is returned.
pub fn run_experiment(cfg: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let seeds: Vec<u64> = match &options.seed_subset {
        None => cfg.seeds.clone(),
        Some(subset) => {
            if let Some(s) = subset.iter().find(|s| !cfg.seeds.contains(s)) {
                return Err(ExperimentError::Config(format!("seed {s} is not listed in the config")));
            }
            cfg.seeds.iter().copied().filter(|s| subset.contains(s)).collect()
        }
    };
    create_dir(&cfg.output_dir)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = options.workers {
        if w == 0 {
            return Err(ExperimentError::Config("workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| ExperimentError::Config(e.to_string()))?;
    let results: Vec<Result<SeedOutcome, ExperimentError>> =
        pool.install(|| seeds.par_iter().map(|&s| run_seed(cfg, s, options.format)).collect());

    let mut completed = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (seed, result) in seeds.iter().zip(results) {
        match result {
            Ok(outcome) => completed.push(outcome),
            Err(e) => {
                failed.push(FailedSeed {
                    seed: *seed,
                    error: e.to_string(),
                });
                first_error.get_or_insert(ExperimentError::Seed {
                    seed: *seed,
                    source: Box::new(e),
                });
            }
        }
    }
    let summary = summarize(&completed);
    let mut files: Vec<PathBuf> = completed.iter().flat_map(|s| s.artifacts.iter().cloned()).collect();
    files.extend(write_aggregates(cfg, &completed, &summary, options.format)?);
    let manifest = Manifest {
        config_hash: cfg.hash(),
        completed_seeds: completed.iter().map(|s| s.seed).collect(),
        failed_seeds: failed,
        artifacts: files.iter().map(|p| artifact(&cfg.output_dir, p)).collect::<Result<_, _>>()?,
    };
    write_file(&cfg.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(ExperimentOutcome {
            seeds: completed,
            summary,
            manifest,
        }),
    }
}
