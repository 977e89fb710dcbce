//! Tabular datasets: typed columns with explicit missing cells, schema
//! handling, splits, standardization, MCAR masking and synthetic tasks.

mod io;
mod toy;

pub use io::{load_csv, read_schema, write_csv, write_schema, CsvOptions, ResponseColumn};
pub use toy::{clf_toy_generate, toy_generate, ClfToyConfig, ToyTask, TASK_A_NOISE, TASK_D_NOISE};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::tree::{FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    /// Codes index into `categories`, ordered by first appearance.
    Categorical {
        categories: Vec<String>,
        codes: Vec<Option<u32>>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Column::Numeric(_) => FeatureKind::Numeric,
            Column::Categorical { .. } => FeatureKind::Categorical,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_none(),
            Column::Categorical { codes, .. } => codes[row].is_none(),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical { categories, codes } => Column::Categorical {
                categories: categories.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }

    fn set_missing(&mut self, row: usize) {
        match self {
            Column::Numeric(v) => v[row] = None,
            Column::Categorical { codes, .. } => codes[row] = None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub column: Column,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<Feature>,
    pub response_name: String,
    /// Empty when the data was loaded without a response column.
    pub response: Vec<f64>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Vec<Feature>, response_name: impl Into<String>, response: Vec<f64>) -> Result<Self> {
        let n_rows = features.first().map_or(response.len(), |f| f.column.len());
        for f in &features {
            if f.column.len() != n_rows {
                return Err(Error::data(format!(
                    "column '{}' has {} rows, expected {n_rows}",
                    f.name,
                    f.column.len()
                )));
            }
            match &f.column {
                Column::Numeric(v) => {
                    if v.iter().flatten().any(|x| !x.is_finite()) {
                        return Err(Error::data(format!("column '{}' has a non-finite value", f.name)));
                    }
                }
                Column::Categorical { categories, codes } => {
                    if codes.iter().flatten().any(|&c| c as usize >= categories.len()) {
                        return Err(Error::data(format!("column '{}' has an undefined category code", f.name)));
                    }
                }
            }
        }
        if !response.is_empty() && response.len() != n_rows {
            return Err(Error::data(format!(
                "response has {} values for {n_rows} rows",
                response.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            response_name: response_name.into(),
            response,
            n_rows,
        })
    }

    /// All-numeric dataset without missing cells.
    pub fn from_numeric(name: impl Into<String>, columns: Vec<(String, Vec<f64>)>, response: Vec<f64>) -> Result<Self> {
        let features = columns
            .into_iter()
            .map(|(name, v)| Feature {
                name,
                column: Column::Numeric(v.into_iter().map(Some).collect()),
            })
            .collect();
        Self::new(name, features, "y", response)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn has_response(&self) -> bool {
        !self.response.is_empty() || self.n_rows == 0
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self
                .features
                .iter()
                .map(|f| Feature {
                    name: f.name.clone(),
                    column: f.column.select(rows),
                })
                .collect(),
            response_name: self.response_name.clone(),
            response: if self.response.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&r| self.response[r]).collect()
            },
            n_rows: rows.len(),
        }
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .features
                .iter()
                .map(|f| ColumnSchema {
                    name: f.name.clone(),
                    kind: f.column.kind(),
                    categories: match &f.column {
                        Column::Numeric(_) => Vec::new(),
                        Column::Categorical { categories, .. } => categories.clone(),
                    },
                })
                .collect(),
            response_name: self.response_name.clone(),
        }
    }

    /// Encode for the tree learner under the dataset's own schema.
    pub fn to_matrix(&self) -> Result<FeatureMatrix> {
        self.schema().encode(self)
    }

    /// Numeric response, or an error if the dataset has none.
    pub fn require_response(&self) -> Result<&[f64]> {
        if self.has_response() {
            Ok(&self.response)
        } else {
            Err(Error::data(format!("dataset '{}' has no response column", self.name)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: FeatureKind,
    pub categories: Vec<String>,
}

/// Feature layout a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
    pub response_name: String,
}

impl Schema {
    pub fn kinds(&self) -> Vec<FeatureKind> {
        self.columns.iter().map(|c| c.kind).collect()
    }

    /// Category code reserved for values absent from the training dictionary.
    pub fn unknown_code(&self, column: usize) -> u32 {
        self.columns[column].categories.len() as u32
    }

    /// Encode `data` against this schema. Columns are matched by position and
    /// name; categorical values are mapped through this schema's dictionary.
    pub fn encode(&self, data: &Dataset) -> Result<FeatureMatrix> {
        if data.n_features() != self.columns.len() {
            return Err(Error::Schema(format!(
                "expected {} feature columns, found {}",
                self.columns.len(),
                data.n_features()
            )));
        }
        let mut columns = Vec::with_capacity(self.columns.len());
        for (j, (spec, feat)) in self.columns.iter().zip(&data.features).enumerate() {
            if spec.name != feat.name {
                return Err(Error::Schema(format!(
                    "column {j} is '{}', expected '{}'",
                    feat.name, spec.name
                )));
            }
            let encoded: Vec<f64> = match (&spec.kind, &feat.column) {
                (FeatureKind::Numeric, Column::Numeric(v)) => v.iter().map(|x| x.unwrap_or(f64::NAN)).collect(),
                (FeatureKind::Categorical, Column::Categorical { categories, codes }) => {
                    let remap: Vec<u32> = categories
                        .iter()
                        .map(|c| {
                            spec.categories
                                .iter()
                                .position(|s| s == c)
                                .map_or(self.unknown_code(j), |p| p as u32)
                        })
                        .collect();
                    codes.iter().map(|c| c.map_or(f64::NAN, |c| f64::from(remap[c as usize]))).collect()
                }
                (FeatureKind::Categorical, Column::Numeric(v)) => {
                    // A categorical column whose test values all happen to parse as numbers.
                    v.iter()
                        .map(|x| {
                            x.map_or(f64::NAN, |x| {
                                let s = format_number(x);
                                f64::from(
                                    spec.categories
                                        .iter()
                                        .position(|c| *c == s)
                                        .map_or(self.unknown_code(j), |p| p as u32),
                                )
                            })
                        })
                        .collect()
                }
                (FeatureKind::Numeric, Column::Categorical { .. }) => {
                    return Err(Error::Schema(format!(
                        "column '{}' is numeric in the schema but has non-numeric values",
                        spec.name
                    )))
                }
            };
            columns.push(encoded);
        }
        FeatureMatrix::new(self.kinds(), columns)
    }
}

pub(crate) fn format_number(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub fold_seed: u64,
    pub fold_index: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            fold_seed: 0,
            fold_index: 0,
        }
    }
}

/// Shuffle rows by `(fold_seed, fold_index)` and cut the first
/// `floor(fraction * n)` into the training split. Both splits keep the
/// original row order.
pub fn make_split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n = data.n_rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(spec.fold_seed, domain::SPLIT, spec.fold_index));
    let n_train = (spec.train_fraction * n as f64 + 1e-9).floor() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select_rows(&train), data.select_rows(&test)))
}

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub std: f64,
}

impl Affine {
    /// Mean and population standard deviation of the present values.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = values.clone().count();
        if n == 0 {
            return None;
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Some(Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Train-split statistics used by [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    /// One entry per feature; `None` for categorical or all-missing columns.
    pub features: Vec<Option<Affine>>,
    pub response: Option<Affine>,
}

impl Standardization {
    pub fn fit(train: &Dataset, include_response: bool) -> Self {
        let features = train
            .features
            .iter()
            .map(|f| match &f.column {
                Column::Numeric(v) => Affine::fit(v.iter().flatten().copied()),
                Column::Categorical { .. } => None,
            })
            .collect();
        let response = if include_response && !train.response.is_empty() {
            Affine::fit(train.response.iter().copied())
        } else {
            None
        };
        Self { features, response }
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for (f, a) in out.features.iter_mut().zip(&self.features) {
            if let (Column::Numeric(v), Some(a)) = (&mut f.column, a) {
                for x in v.iter_mut().flatten() {
                    *x = a.apply(*x);
                }
            }
        }
        if let Some(a) = self.response {
            for y in &mut out.response {
                *y = a.apply(*y);
            }
        }
        out
    }

    pub fn invert_response(&self, z: f64) -> f64 {
        self.response.map_or(z, |a| a.invert(z))
    }
}

/// Standardize numeric features (and optionally the response) of both splits
/// by training-split statistics.
pub fn standardize(train: &Dataset, test: &Dataset, include_response: bool) -> (Dataset, Dataset, Standardization) {
    let s = Standardization::fit(train, include_response);
    (s.transform(train), s.transform(test), s)
}

/// Blank each feature cell independently with probability `rate`.
pub fn mcar_mask(data: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("MCAR rate must be in [0, 1), got {rate}")));
    }
    let mut out = data.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    for (j, f) in out.features.iter_mut().enumerate() {
        let mut rng = stream(seed, domain::MCAR, j as u64);
        for r in 0..data.n_rows() {
            if rng.random::<f64>() < rate {
                f.column.set_missing(r);
            }
        }
    }
    Ok(out)
}
