use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{format_number, Column, ColumnSchema, Dataset, Feature, Schema};
use crate::error::{Error, Result};
use crate::tree::FeatureKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    Last,
    Named(String),
    /// Every column is a feature.
    Absent,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Cell text treated as missing, in addition to empty cells.
    pub missing: String,
    pub response: ResponseColumn,
    /// Forced column kinds by name; other columns are inferred.
    pub kinds: HashMap<String, FeatureKind>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            missing: "NA".to_string(),
            response: ResponseColumn::Last,
            kinds: HashMap::new(),
        }
    }
}

impl CsvOptions {
    /// Force the kinds recorded in a schema.
    pub fn with_schema(mut self, schema: &Schema) -> Self {
        for c in &schema.columns {
            self.kinds.insert(c.name.clone(), c.kind);
        }
        self
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::data(format!("{}: empty file", path.display())));
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        for (j, v) in record.iter().enumerate() {
            cells[j].push(v.to_string());
        }
    }
    let n_rows = cells[0].len();
    if n_rows == 0 {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }

    let response_index = match &opts.response {
        ResponseColumn::Last => Some(header.len() - 1),
        ResponseColumn::Named(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::data(format!("{}: no column named '{name}'", path.display())))?,
        ),
        ResponseColumn::Absent => None,
    };
    let is_missing = |s: &str| s.is_empty() || s == opts.missing;

    let mut features = Vec::new();
    let mut response = Vec::new();
    let mut response_name = String::from("y");
    for (j, name) in header.iter().enumerate() {
        let col = &cells[j];
        if Some(j) == response_index {
            response_name = name.clone();
            response = col
                .iter()
                .enumerate()
                .map(|(r, s)| {
                    parse_number(s).ok_or_else(|| {
                        Error::data(format!(
                            "{}: row {} has non-numeric response '{s}' in column '{name}'",
                            path.display(),
                            r + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            continue;
        }
        let numeric = match opts.kinds.get(name) {
            Some(FeatureKind::Numeric) => {
                if let Some(r) = col.iter().position(|s| !is_missing(s) && parse_number(s).is_none()) {
                    return Err(Error::data(format!(
                        "{}: row {} has non-numeric value '{}' in numeric column '{name}'",
                        path.display(),
                        r + 1,
                        col[r]
                    )));
                }
                true
            }
            Some(FeatureKind::Categorical) => false,
            None => col.iter().all(|s| is_missing(s) || parse_number(s).is_some()),
        };
        let column = if numeric {
            Column::Numeric(
                col.iter()
                    .map(|s| if is_missing(s) { None } else { parse_number(s) })
                    .collect(),
            )
        } else {
            let mut categories: Vec<String> = Vec::new();
            let mut index: HashMap<&str, u32> = HashMap::new();
            let codes = col
                .iter()
                .map(|s| {
                    if is_missing(s) {
                        return None;
                    }
                    Some(*index.entry(s.as_str()).or_insert_with(|| {
                        categories.push(s.clone());
                        (categories.len() - 1) as u32
                    }))
                })
                .collect();
            Column::Categorical { categories, codes }
        };
        features.push(Feature {
            name: name.clone(),
            column,
        });
    }
    let name = path
        .file_stem()
        .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, features, response_name, response)
}

/// Write features then (if present) the response as the last column.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, opts: &CsvOptions) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .delimiter(opts.delimiter)
        .from_path(path)
        .map_err(csv_err)?;
    let with_response = !data.response.is_empty();
    let mut header: Vec<&str> = data.features.iter().map(|f| f.name.as_str()).collect();
    if with_response {
        header.push(&data.response_name);
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..data.n_rows() {
        let mut record: Vec<String> = data
            .features
            .iter()
            .map(|f| match &f.column {
                Column::Numeric(v) => v[r].map_or_else(|| opts.missing.clone(), format_number),
                Column::Categorical { categories, codes } => {
                    codes[r].map_or_else(|| opts.missing.clone(), |c| categories[c as usize].clone())
                }
            })
            .collect();
        if with_response {
            record.push(format_number(data.response[r]));
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const SCHEMA_FORMAT: &str = "dbt-schema/1";

fn kind_name(kind: FeatureKind) -> &'static str {
    match kind {
        FeatureKind::Numeric => "numeric",
        FeatureKind::Categorical => "categorical",
    }
}

impl Schema {
    /// Plain `key=value` lines.
    pub fn to_text(&self) -> Result<String> {
        let check = |s: &str| {
            if s.contains('\n') || s.contains('\r') {
                Err(Error::Schema(format!("name '{}' contains a line break", s.escape_debug())))
            } else {
                Ok(())
            }
        };
        let mut out = format!("format={SCHEMA_FORMAT}\nresponse={}\ncolumns={}\n", self.response_name, self.columns.len());
        check(&self.response_name)?;
        for (j, c) in self.columns.iter().enumerate() {
            check(&c.name)?;
            out.push_str(&format!("column.{j}.name={}\ncolumn.{j}.kind={}\n", c.name, kind_name(c.kind)));
            if c.kind == FeatureKind::Categorical {
                out.push_str(&format!("column.{j}.categories={}\n", c.categories.len()));
                for (k, cat) in c.categories.iter().enumerate() {
                    check(cat)?;
                    out.push_str(&format!("column.{j}.category.{k}={cat}\n"));
                }
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected key=value", i + 1)))?;
            map.insert(k.trim().to_string(), v.to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("missing key '{k}'")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .trim()
                .parse()
                .map_err(|_| Error::Schema(format!("key '{k}' is not a count")))
        };
        if get("format")? != SCHEMA_FORMAT {
            return Err(Error::Schema(format!("unsupported schema format '{}'", get("format")?)));
        }
        let columns = (0..count("columns")?)
            .map(|j| {
                let kind = match get(&format!("column.{j}.kind"))?.trim() {
                    "numeric" => FeatureKind::Numeric,
                    "categorical" => FeatureKind::Categorical,
                    other => return Err(Error::Schema(format!("column {j}: unknown kind '{other}'"))),
                };
                let categories = if kind == FeatureKind::Categorical {
                    (0..count(&format!("column.{j}.categories"))?)
                        .map(|k| get(&format!("column.{j}.category.{k}")))
                        .collect::<Result<_>>()?
                } else {
                    Vec::new()
                };
                Ok(ColumnSchema {
                    name: get(&format!("column.{j}.name"))?,
                    kind,
                    categories,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Schema {
            columns,
            response_name: get("response")?,
        })
    }
}

pub fn write_schema(schema: &Schema, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, schema.to_text()?)?;
    Ok(())
}

pub fn read_schema(path: impl AsRef<Path>) -> Result<Schema> {
    Schema::from_text(&fs::read_to_string(path)?)
}
