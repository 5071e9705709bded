//! Dataset model, CSV ingestion and seeded splitting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{seed, Arm};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no data rows")]
    NoDataRows,
    #[error("row {row}: ragged row ({got} fields, header has {expected})")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("row {row}, column {column}: non-numeric cell {value:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: treatment not binary ({value})")]
    TreatmentNotBinary { row: usize, value: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("schema selects no covariate columns")]
    NoCovariates,
    #[error("unit {index} has dimension {got}, dataset has {expected}")]
    Dimension { index: usize, expected: usize, got: usize },
    #[error("invalid split fractions {0:?}")]
    InvalidSplit([f64; 3]),
    #[error("split needs at least 3 units, got {0}")]
    TooSmall(usize),
    #[error("empty {0} block")]
    EmptyBlock(&'static str),
}

/// One observed unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub x: Vec<f64>,
    pub t: Arm,
    pub y_factual: f64,
    pub y_counterfactual: Option<f64>,
    /// True `E[Y_0 | x]`, synthetic data only.
    pub mu0: Option<f64>,
    /// True `E[Y_1 | x]`, synthetic data only.
    pub mu1: Option<f64>,
    /// Membership in a randomized subgroup.
    pub randomized: Option<bool>,
}

impl Unit {
    pub fn new(x: Vec<f64>, t: Arm, y_factual: f64) -> Self {
        Unit {
            x,
            t,
            y_factual,
            y_counterfactual: None,
            mu0: None,
            mu1: None,
            randomized: None,
        }
    }

    /// True ITE `mu1 - mu0` when both surfaces are known.
    pub fn true_ite(&self) -> Option<f64> {
        Some(self.mu1? - self.mu0?)
    }

    /// True mean outcome under arm `t`.
    pub fn mu(&self, t: Arm) -> Option<f64> {
        match t {
            Arm::Control => self.mu0,
            Arm::Treated => self.mu1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    name: String,
    d: usize,
    units: Vec<Unit>,
}

impl ObservationalDataset {
    /// Build a dataset; every unit must share the dimension of the first.
    pub fn new(name: impl Into<String>, units: Vec<Unit>) -> Result<Self, DataError> {
        let d = units.first().map_or(0, |u| u.x.len());
        if let Some((index, u)) = units.iter().enumerate().find(|(_, u)| u.x.len() != d) {
            return Err(DataError::Dimension {
                index,
                expected: d,
                got: u.x.len(),
            });
        }
        Ok(ObservationalDataset {
            name: name.into(),
            d,
            units,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.t.is_treated()).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    /// Empirical `P[T = 1]`.
    pub fn treated_fraction(&self) -> f64 {
        self.n_treated() as f64 / self.len() as f64
    }

    pub fn has_both_arms(&self) -> bool {
        self.n_treated() > 0 && self.n_control() > 0
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.is_empty() && self.units.iter().all(|u| u.true_ite().is_some())
    }

    /// Units whose `randomized` flag is set.
    pub fn randomized_units(&self) -> Vec<&Unit> {
        self.units.iter().filter(|u| u.randomized == Some(true)).collect()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Subset by index, in the given order.
    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> ObservationalDataset {
        ObservationalDataset {
            name: name.into(),
            d: self.d,
            units: indices.iter().map(|&i| self.units[i].clone()).collect(),
        }
    }
}

/// Covariates of every unit, in row order, duplicates included.
pub fn empirical_covariates(ds: &ObservationalDataset) -> Vec<Vec<f64>> {
    ds.units.iter().map(|u| u.x.clone()).collect()
}

/// Train/validation/test fractions plus the permutation seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Self {
        SplitSpec {
            fractions: [train, validation, test],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let f = self.fractions;
        let in_range = f.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        if !in_range || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(f));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::new(0.63, 0.27, 0.10, 0)
    }
}

/// Seeded permutation followed by contiguous blocks of `round(f * N)` units;
/// the test block takes whatever is left.
pub fn split(
    ds: &ObservationalDataset,
    spec: &SplitSpec,
) -> Result<(ObservationalDataset, ObservationalDataset, ObservationalDataset), DataError> {
    spec.validate()?;
    let n = ds.len();
    if n < 3 {
        return Err(DataError::TooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(spec.seed));

    let n_train = (spec.fractions[0] * n as f64).round() as usize;
    let n_valid = (spec.fractions[1] * n as f64).round() as usize;
    let names = ["train", "validation", "test"];
    if n_train == 0 {
        return Err(DataError::EmptyBlock(names[0]));
    }
    if n_valid == 0 {
        return Err(DataError::EmptyBlock(names[1]));
    }
    if n_train + n_valid >= n {
        return Err(DataError::EmptyBlock(names[2]));
    }
    let (train, rest) = order.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid);
    Ok((
        ds.select(format!("{}-train", ds.name), train),
        ds.select(format!("{}-validation", ds.name), valid),
        ds.select(format!("{}-test", ds.name), test),
    ))
}

/// Which covariate columns to read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariates {
    /// Explicit column names, in order.
    Columns(Vec<String>),
    /// Every header column starting with this prefix, in header order.
    Prefix(String),
}

/// Column mapping for [`load_dataset`]. Optional columns are read when the
/// header contains them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub covariates: Covariates,
    pub treatment: String,
    pub outcome: String,
    pub y_counterfactual: Option<String>,
    pub mu0: Option<String>,
    pub mu1: Option<String>,
    pub randomized: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            covariates: Covariates::Prefix("x".into()),
            treatment: "t".into(),
            outcome: "y".into(),
            y_counterfactual: Some("y_cf".into()),
            mu0: Some("mu0".into()),
            mu1: Some("mu1".into()),
            randomized: Some("randomized".into()),
        }
    }
}

fn parse_cell(row: usize, column: &str, value: &str) -> Result<f64, DataError> {
    value.trim().parse::<f64>().map_err(|_| DataError::NonNumeric {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_optional(row: usize, column: &str, value: &str) -> Result<Option<f64>, DataError> {
    if value.trim().is_empty() {
        Ok(None)
    } else {
        parse_cell(row, column, value).map(Some)
    }
}

/// Read a dataset from a CSV file with a header row.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<ObservationalDataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset(file, name, schema)
}

/// Read a dataset from any CSV source.
pub fn read_dataset<R: Read>(reader: R, name: impl Into<String>, schema: &Schema) -> Result<ObservationalDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(DataError::NoDataRows);
    }
    let column = |name: &str| header.iter().position(|h| h == name);
    let required = |name: &str| column(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));

    let x_cols: Vec<usize> = match &schema.covariates {
        Covariates::Columns(names) => names.iter().map(|n| required(n)).collect::<Result<_, _>>()?,
        Covariates::Prefix(prefix) => header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix.as_str()))
            .map(|(i, _)| i)
            .collect(),
    };
    if x_cols.is_empty() {
        return Err(DataError::NoCovariates);
    }
    let t_col = required(&schema.treatment)?;
    let y_col = required(&schema.outcome)?;
    let optional = |name: &Option<String>| name.as_deref().and_then(column);
    let y_cf_col = optional(&schema.y_counterfactual);
    let mu0_col = optional(&schema.mu0);
    let mu1_col = optional(&schema.mu1);
    let rand_col = optional(&schema.randomized);

    let mut units = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Header is line 1; data rows are numbered from 1 as well.
        let row = i + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => DataError::Ragged {
                row,
                expected: header.len(),
                got: *len as usize,
            },
            _ => DataError::Csv(e),
        })?;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let x = x_cols
            .iter()
            .map(|&c| parse_cell(row, &header[c], cell(c)))
            .collect::<Result<Vec<_>, _>>()?;
        let t_raw = cell(t_col).trim();
        let t = match t_raw.parse::<f64>() {
            Ok(0.0) => Arm::Control,
            Ok(1.0) => Arm::Treated,
            Ok(_) => {
                return Err(DataError::TreatmentNotBinary {
                    row,
                    value: t_raw.to_string(),
                })
            }
            Err(_) => return Err(parse_cell(row, &header[t_col], t_raw).unwrap_err()),
        };
        let y_factual = parse_cell(row, &header[y_col], cell(y_col))?;
        let opt = |c: Option<usize>| -> Result<Option<f64>, DataError> {
            match c {
                Some(c) => parse_optional(row, &header[c], cell(c)),
                None => Ok(None),
            }
        };
        let randomized = match rand_col {
            None => None,
            Some(c) => match cell(c).trim() {
                "" => None,
                "1" | "true" | "TRUE" | "True" => Some(true),
                "0" | "false" | "FALSE" | "False" => Some(false),
                other => {
                    return Err(DataError::NonNumeric {
                        row,
                        column: header[c].clone(),
                        value: other.to_string(),
                    })
                }
            },
        };
        units.push(Unit {
            x,
            t,
            y_factual,
            y_counterfactual: opt(y_cf_col)?,
            mu0: opt(mu0_col)?,
            mu1: opt(mu1_col)?,
            randomized,
        });
    }
    if units.is_empty() {
        return Err(DataError::NoDataRows);
    }
    ObservationalDataset::new(name, units)
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a dataset as CSV (`x0..x{d-1},t,y` then whichever optional columns
/// any unit carries). Missing optional values are written as empty cells.
pub fn write_dataset<W: Write>(ds: &ObservationalDataset, writer: W) -> Result<(), DataError> {
    let any = |f: fn(&Unit) -> bool| ds.units.iter().any(f);
    let has_cf = any(|u| u.y_counterfactual.is_some());
    let has_mu0 = any(|u| u.mu0.is_some());
    let has_mu1 = any(|u| u.mu1.is_some());
    let has_rand = any(|u| u.randomized.is_some());

    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..ds.d).map(|j| format!("x{j}")).collect();
    header.push("t".into());
    header.push("y".into());
    for (flag, name) in [(has_cf, "y_cf"), (has_mu0, "mu0"), (has_mu1, "mu1"), (has_rand, "randomized")] {
        if flag {
            header.push(name.into());
        }
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
    for u in &ds.units {
        let mut rec: Vec<String> = u.x.iter().map(|&v| format_f64(v)).collect();
        rec.push(u.t.index().to_string());
        rec.push(format_f64(u.y_factual));
        if has_cf {
            rec.push(opt(u.y_counterfactual));
        }
        if has_mu0 {
            rec.push(opt(u.mu0));
        }
        if has_mu1 {
            rec.push(opt(u.mu1));
        }
        if has_rand {
            rec.push(u.randomized.map(|r| if r { "1" } else { "0" }.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_dataset(ds: &ObservationalDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_dataset(ds, std::io::BufWriter::new(file))
}
