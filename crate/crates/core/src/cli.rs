//! Command-line front end.
//!
//! Settings come from built-in defaults, then an optional `key=value` config
//! file, then flags. The merged result is echoed to stderr before any work.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::card_t::train_card_t_logged;
use crate::data::{
    clf_toy_generate, load_csv, make_split, mcar_mask, write_csv, ClfToyConfig, CsvOptions, Dataset,
    ResponseColumn, Schema, SplitSpec, ToyTask,
};
use crate::dbt::train_dbt_logged;
use crate::diffusion::{classify, DbtConfig, DiffusionModel, ModelKind, PriorMean, StepFit, Task};
use crate::error::Error;
use crate::mean_estimator::sigmoid;
use crate::metrics::{deferral_report, nll, paired_t_test, piw, qice, rmse, SampleMatrix, Summary};
use crate::model_file::ModelFile;
use crate::schedule::NoiseSchedule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiwScale {
    Probability,
    Logit,
}

/// Every setting a command can use. All fields have defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    pub dbt: DbtConfig,
    /// Samples per test row; `None` picks 100 for regression and 10 for
    /// classification.
    pub samples: Option<usize>,
    pub n_bins: usize,
    pub alphas: Vec<f64>,
    pub piw_lo: f64,
    pub piw_hi: f64,
    pub piw_scale: PiwScale,
    pub split: SplitSpec,
    pub folds: usize,
    pub mcar_rate: f64,
    pub response: Option<String>,
    pub missing: String,
    pub delimiter: u8,
    pub test_rows: usize,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Dbt,
            dbt: DbtConfig::default(),
            samples: None,
            n_bins: 10,
            alphas: vec![0.05, 0.005],
            piw_lo: 2.5,
            piw_hi: 97.5,
            piw_scale: PiwScale::Probability,
            split: SplitSpec::default(),
            folds: 1,
            mcar_rate: 0.0,
            response: None,
            missing: "NA".into(),
            delimiter: b',',
            test_rows: 1000,
            threads: None,
            out_dir: PathBuf::from("."),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse '{value}'"))
}

impl RunConfig {
    pub fn samples(&self) -> usize {
        self.samples.unwrap_or(match self.dbt.task {
            Task::Regression => 100,
            Task::BinaryClassification => 10,
        })
    }

    /// Set one key. Keys match the names printed by [`to_text`](Self::to_text).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let d = &mut self.dbt;
        match key.trim() {
            "model_kind" => self.model_kind = ModelKind::parse(v).ok_or(format!("model_kind: unknown '{v}'"))?,
            "task" => {
                d.task = match v {
                    "regression" => Task::Regression,
                    "binary_classification" | "classification" => Task::BinaryClassification,
                    _ => return Err(format!("task: unknown '{v}'")),
                }
            }
            "timesteps" => d.schedule.timesteps = parse(key, v)?,
            "beta_start" => d.schedule.beta_start = parse(key, v)?,
            "beta_end" => d.schedule.beta_end = parse(key, v)?,
            "n_noise" => d.n_noise = parse(key, v)?,
            "num_leaves" => d.tree_params.num_leaves = parse(key, v)?,
            "min_samples_leaf" => d.tree_params.min_samples_leaf = parse(key, v)?,
            "learning_rate" => d.tree_params.learning_rate = parse(key, v)?,
            "max_categorical_cardinality" => {
                let c = parse(key, v)?;
                d.tree_params.max_categorical_cardinality = c;
                d.mean_estimator.tree_params.max_categorical_cardinality = c;
            }
            "prior_mean" => {
                d.prior_mean = match v {
                    "estimator" => PriorMean::Estimator,
                    "zero" => PriorMean::Zero,
                    _ => return Err(format!("prior_mean: unknown '{v}'")),
                }
            }
            "prototype_epsilon" => d.prototype_epsilon = parse(key, v)?,
            "seed" => d.seed = parse(key, v)?,
            "mean_trees" => d.mean_estimator.n_trees = parse(key, v)?,
            "mean_num_leaves" => d.mean_estimator.tree_params.num_leaves = parse(key, v)?,
            "mean_min_samples_leaf" => d.mean_estimator.tree_params.min_samples_leaf = parse(key, v)?,
            "mean_shrinkage" => d.mean_estimator.shrinkage = parse(key, v)?,
            "samples" => self.samples = Some(parse(key, v)?),
            "n_bins" => self.n_bins = parse(key, v)?,
            "alpha" => {
                self.alphas = v
                    .split(',')
                    .map(|a| parse::<f64>(key, a.trim()))
                    .collect::<Result<_, _>>()?;
                if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    return Err("alpha: values must be in (0, 1)".into());
                }
            }
            "piw_lo" => self.piw_lo = parse(key, v)?,
            "piw_hi" => self.piw_hi = parse(key, v)?,
            "piw_scale" => {
                self.piw_scale = match v {
                    "probability" => PiwScale::Probability,
                    "logit" => PiwScale::Logit,
                    _ => return Err(format!("piw_scale: unknown '{v}'")),
                }
            }
            "train_fraction" => self.split.train_fraction = parse(key, v)?,
            "fold_seed" => self.split.fold_seed = parse(key, v)?,
            "fold_index" => self.split.fold_index = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "mcar_rate" => {
                self.mcar_rate = parse(key, v)?;
                if !(0.0..1.0).contains(&self.mcar_rate) {
                    return Err("mcar_rate: must be in [0, 1)".into());
                }
            }
            "response" => self.response = (!v.is_empty()).then(|| v.to_string()),
            "missing" => self.missing = v.to_string(),
            "delimiter" => {
                let b = match v {
                    "tab" | "\\t" => b'\t',
                    _ if v.len() == 1 => v.as_bytes()[0],
                    _ => return Err(format!("delimiter: expected one character, got '{v}'")),
                };
                self.delimiter = b;
            }
            "test_rows" => self.test_rows = parse(key, v)?,
            "threads" => self.threads = if v == "auto" { None } else { Some(parse(key, v)?) },
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Apply a `key=value` file. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            self.set(k, v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let d = &self.dbt;
        let task = match d.task {
            Task::Regression => "regression",
            Task::BinaryClassification => "binary_classification",
        };
        let prior = match d.prior_mean {
            PriorMean::Estimator => "estimator",
            PriorMean::Zero => "zero",
        };
        let piw_scale = match self.piw_scale {
            PiwScale::Probability => "probability",
            PiwScale::Logit => "logit",
        };
        let alphas: Vec<String> = self.alphas.iter().map(f64::to_string).collect();
        let delimiter = match self.delimiter {
            b'\t' => "tab".to_string(),
            b => (b as char).to_string(),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("model_kind", self.model_kind.name().into());
        kv("task", task.into());
        kv("timesteps", d.schedule.timesteps.to_string());
        kv("beta_start", d.schedule.beta_start.to_string());
        kv("beta_end", d.schedule.beta_end.to_string());
        kv("n_noise", d.n_noise.to_string());
        kv("num_leaves", d.tree_params.num_leaves.to_string());
        kv("min_samples_leaf", d.tree_params.min_samples_leaf.to_string());
        kv("learning_rate", d.tree_params.learning_rate.to_string());
        kv("max_categorical_cardinality", d.tree_params.max_categorical_cardinality.to_string());
        kv("prior_mean", prior.into());
        kv("prototype_epsilon", d.prototype_epsilon.to_string());
        kv("seed", d.seed.to_string());
        kv("mean_trees", d.mean_estimator.n_trees.to_string());
        kv("mean_num_leaves", d.mean_estimator.tree_params.num_leaves.to_string());
        kv("mean_min_samples_leaf", d.mean_estimator.tree_params.min_samples_leaf.to_string());
        kv("mean_shrinkage", d.mean_estimator.shrinkage.to_string());
        kv("samples", self.samples().to_string());
        kv("n_bins", self.n_bins.to_string());
        kv("alpha", alphas.join(","));
        kv("piw_lo", self.piw_lo.to_string());
        kv("piw_hi", self.piw_hi.to_string());
        kv("piw_scale", piw_scale.into());
        kv("train_fraction", self.split.train_fraction.to_string());
        kv("fold_seed", self.split.fold_seed.to_string());
        kv("fold_index", self.split.fold_index.to_string());
        kv("folds", self.folds.to_string());
        kv("mcar_rate", self.mcar_rate.to_string());
        kv("response", self.response.clone().unwrap_or_default());
        kv("missing", self.missing.clone());
        kv("delimiter", delimiter);
        kv("test_rows", self.test_rows.to_string());
        kv("threads", self.threads.map(|t| t.to_string()).unwrap_or_else(|| "auto".into()));
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            delimiter: self.delimiter,
            missing: self.missing.clone(),
            response: match &self.response {
                Some(name) => ResponseColumn::Named(name.clone()),
                None => ResponseColumn::Last,
            },
            ..CsvOptions::default()
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dbt", version, about = "Diffusion boosted trees for tabular regression and classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key=value config file applied before the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// dbt or card_t
    #[arg(long, global = true)]
    model_kind: Option<String>,
    #[arg(long, global = true)]
    timesteps: Option<usize>,
    #[arg(long, global = true)]
    n_noise: Option<usize>,
    #[arg(long, global = true)]
    num_leaves: Option<usize>,
    /// Samples per test row
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Significance levels, comma separated
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    mcar_rate: Option<f64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Extra settings as key=value; may repeat
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write model.dbt plus a per-timestep MSE log
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Draw samples for every row of a data file
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a model on labeled data, or train and score over several splits
    Eval {
        /// Trained model; omit to train per fold
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Number of train/test splits when no model is given
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-timestep gain importance of the step trees
    Importance {
        #[arg(long)]
        model: PathBuf,
        /// Timesteps, comma separated (default T, 0.8T, 0.6T, 0.4T, 0.2T, 1)
        #[arg(long)]
        at: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the schedule coefficients from T down to 2
    Schedule {
        #[arg(long)]
        beta_start: Option<f64>,
        #[arg(long)]
        beta_end: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic task and, unless --generate-only, train and score on it
    Toy {
        /// a, b, c, d, e or clf
        #[arg(long)]
        task: String,
        /// Training rows
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        generate_only: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    }
    let mut flag = |k: &str, v: Option<String>| -> CliResult<()> {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(CliError::usage)?;
        }
        Ok(())
    };
    flag("seed", common.seed.map(|v| v.to_string()))?;
    flag("model_kind", common.model_kind.clone())?;
    flag("timesteps", common.timesteps.map(|v| v.to_string()))?;
    flag("n_noise", common.n_noise.map(|v| v.to_string()))?;
    flag("num_leaves", common.num_leaves.map(|v| v.to_string()))?;
    flag("samples", common.samples.map(|v| v.to_string()))?;
    flag("alpha", common.alpha.clone())?;
    flag("mcar_rate", common.mcar_rate.map(|v| v.to_string()))?;
    flag("threads", common.threads.map(|v| v.to_string()))?;
    flag("out_dir", common.out_dir.as_ref().map(|p| p.display().to_string()))?;
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v).map_err(CliError::usage)?;
    }
    cfg.dbt.validate()?;
    Ok(cfg)
}

/// Take the model's own settings so the echo shows what will actually run.
/// `seed` stays as given: for these commands it seeds sampling.
fn adopt_model(cfg: &mut RunConfig, file: &ModelFile) {
    let seed = cfg.dbt.seed;
    cfg.dbt = *file.model.config();
    cfg.dbt.seed = seed;
    cfg.model_kind = file.model.kind();
}

fn echo(command: &str, cfg: &RunConfig) {
    eprintln!("# dbt {command}: effective config");
    eprint!("{}", cfg.to_text());
}

fn init_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("{}: {e}", dir.display()),
    })
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn train_model(cfg: &RunConfig, train: &Dataset, mut log: impl FnMut(&StepFit)) -> CliResult<DiffusionModel> {
    let train = if cfg.mcar_rate > 0.0 {
        mcar_mask(train, cfg.mcar_rate, cfg.dbt.seed)?
    } else {
        train.clone()
    };
    Ok(match cfg.model_kind {
        ModelKind::Dbt => train_dbt_logged(&train, &cfg.dbt, &mut log)?,
        ModelKind::CardT => train_card_t_logged(&train, &cfg.dbt, &mut log)?,
    })
}

/// Train and write `model.dbt`, `train_log.csv` and `config.txt` under the
/// output directory. Returns the model file.
fn train_to_dir(cfg: &RunConfig, train: &Dataset) -> CliResult<ModelFile> {
    create_dir(&cfg.out_dir)?;
    let mut log = String::from("t,mse\n");
    let model = train_model(cfg, train, |f| {
        eprintln!("t={} mse={:.6}", f.t, f.mse);
        let _ = writeln!(log, "{},{}", f.t, f.mse);
    })?;
    let file = ModelFile::new(model, train.schema())?;
    file.save(cfg.out_dir.join("model.dbt"))?;
    write_file(&cfg.out_dir.join("train_log.csv"), log.as_bytes())?;
    write_file(&cfg.out_dir.join("config.txt"), cfg.to_text().as_bytes())?;
    eprintln!("wrote {}", cfg.out_dir.join("model.dbt").display());
    Ok(file)
}

/// Load rows for a trained model; the response column is optional.
fn load_for_model(cfg: &RunConfig, schema: &Schema, path: &Path) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?;
    let has_response = reader
        .headers()
        .map_err(|e| CliError {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?
        .iter()
        .any(|h| h == schema.response_name);
    let opts = CsvOptions {
        response: if has_response {
            ResponseColumn::Named(schema.response_name.clone())
        } else {
            ResponseColumn::Absent
        },
        ..cfg.csv_options()
    }
    .with_schema(schema);
    Ok(load_csv(path, &opts)?)
}

fn sample_rows(file: &ModelFile, data: &Dataset, s: usize, seed: u64) -> CliResult<SampleMatrix> {
    let x = file.schema.encode(data)?;
    Ok(file.model.sample(&x, s, seed)?)
}

fn samples_csv(samples: &SampleMatrix, classification: bool) -> String {
    let mut out = String::from(if classification {
        "row,sample,value,probability\n"
    } else {
        "row,sample,value\n"
    });
    for (j, row) in samples.rows().enumerate() {
        for (s, v) in row.iter().enumerate() {
            if classification {
                let _ = writeln!(out, "{j},{s},{v},{}", sigmoid(*v));
            } else {
                let _ = writeln!(out, "{j},{s},{v}");
            }
        }
    }
    out
}

/// One evaluation's scores, by name.
#[derive(Debug, Clone, Default)]
struct Scores {
    values: Vec<(String, f64)>,
    report: Option<String>,
    report_csv: Option<String>,
}

fn score(cfg: &RunConfig, model: &DiffusionModel, truth: &[f64], samples: &SampleMatrix) -> CliResult<Scores> {
    match model.config().task {
        Task::Regression => Ok(Scores {
            values: vec![
                ("rmse".into(), rmse(truth, samples)?),
                ("nll".into(), nll(truth, samples)?),
                ("qice".into(), qice(truth, samples, cfg.n_bins)?),
            ],
            ..Scores::default()
        }),
        Task::BinaryClassification => {
            let threshold = model.class_threshold().expect("classification model has a threshold");
            let c = classify(samples, threshold);
            let labels_true: Vec<u8> = truth.iter().map(|&v| u8::from(v == 1.0)).collect();
            let widths = match cfg.piw_scale {
                PiwScale::Probability => piw(&samples.map(sigmoid), cfg.piw_lo, cfg.piw_hi)?,
                PiwScale::Logit => piw(samples, cfg.piw_lo, cfg.piw_hi)?,
            };
            let mut tests = Vec::new();
            for &alpha in &cfg.alphas {
                let row_tests = (0..samples.n_rows())
                    .map(|j| paired_t_test(c.probabilities.row(j), alpha))
                    .collect::<crate::Result<Vec<_>>>()?;
                tests.push((alpha, row_tests));
            }
            let report = deferral_report(&labels_true, &c.labels, &widths, &tests)?;
            let mut values = vec![("accuracy".to_string(), report.overall.accuracy().unwrap_or(f64::NAN))];
            for t in &report.ttests {
                values.push((format!("deferral_accuracy@{}", t.alpha), t.deferral_accuracy));
            }
            Ok(Scores {
                values,
                report: Some(report.to_text()),
                report_csv: Some(report.to_csv()),
            })
        }
    }
}

fn eval_model(cfg: &RunConfig, file: &ModelFile, data_path: &Path) -> CliResult<()> {
    let data = load_for_model(cfg, &file.schema, data_path)?;
    let truth = data.require_response()?.to_vec();
    let samples = sample_rows(file, &data, cfg.samples(), cfg.dbt.seed)?;
    let scores = score(cfg, &file.model, &truth, &samples)?;
    let mut out = String::new();
    for (k, v) in &scores.values {
        let _ = writeln!(out, "{k}={v}");
    }
    if let Some(r) = &scores.report {
        out.push_str(r);
    }
    print!("{out}");
    if let Some(csv) = &scores.report_csv {
        create_dir(&cfg.out_dir)?;
        write_file(&cfg.out_dir.join("deferral_report.csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn eval_folds(cfg: &RunConfig, data_path: &Path, folds: usize) -> CliResult<()> {
    if folds == 0 {
        return Err(CliError::usage("--folds must be at least 1"));
    }
    let data = load_csv(data_path, &cfg.csv_options())?;
    let mut per_fold: Vec<Scores> = Vec::new();
    let mut csv = String::new();
    for fold in 0..folds {
        let spec = SplitSpec {
            fold_index: cfg.split.fold_index + fold as u64,
            ..cfg.split
        };
        let (train, test) = make_split(&data, &spec)?;
        let model = train_model(cfg, &train, |_| {})?;
        let x = train.schema().encode(&test)?;
        let samples = model.sample(&x, cfg.samples(), cfg.dbt.seed)?;
        let scores = score(cfg, &model, test.require_response()?, &samples)?;
        if fold == 0 {
            let names: Vec<&str> = scores.values.iter().map(|(k, _)| k.as_str()).collect();
            let _ = writeln!(csv, "fold,{}", names.join(","));
        }
        let vals: Vec<String> = scores.values.iter().map(|(_, v)| v.to_string()).collect();
        let _ = writeln!(csv, "{},{}", spec.fold_index, vals.join(","));
        let line: Vec<String> = scores.values.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        eprintln!("fold {}: {}", spec.fold_index, line.join(" "));
        per_fold.push(scores);
    }
    let mut out = String::new();
    for (i, (name, _)) in per_fold[0].values.iter().enumerate() {
        let vals: Vec<f64> = per_fold.iter().map(|s| s.values[i].1).collect();
        let _ = writeln!(out, "{name}: {} over {folds} folds", Summary::of(&vals));
    }
    print!("{out}");
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("folds.csv"), csv.as_bytes())?;
    write_file(&cfg.out_dir.join("summary.txt"), out.as_bytes())?;
    Ok(())
}

fn default_importance_steps(big_t: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = [1.0, 0.8, 0.6, 0.4, 0.2]
        .iter()
        .map(|f| ((big_t as f64 * f).round() as usize).max(1))
        .collect();
    steps.push(1);
    steps.dedup();
    steps
}

fn importance_csv(file: &ModelFile, steps: &[usize]) -> CliResult<String> {
    let mut names = vec!["noisy_y".to_string()];
    names.extend(file.schema.columns.iter().map(|c| c.name.clone()));
    names.push("f_phi".to_string());
    let mut out = String::from("t,rank,feature,name,gain\n");
    for &t in steps {
        let gains = file.model.importance(t).map_err(|e| CliError::usage(e.to_string()))?;
        let mut order: Vec<usize> = (0..gains.len()).collect();
        order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
        for (rank, &j) in order.iter().enumerate() {
            let _ = writeln!(out, "{t},{},{j},{},{}", rank + 1, names[j], gains[j]);
        }
    }
    Ok(out)
}

fn schedule_csv(s: &NoiseSchedule) -> String {
    let mut out = String::from("t,beta,alpha_bar,gamma0,gamma1,gamma2,tilde_beta\n");
    for r in s.coefficient_table() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            s.beta(r.t),
            s.alpha_bar(r.t),
            r.gamma0,
            r.gamma1,
            r.gamma2,
            r.tilde_beta
        );
    }
    out
}

fn run_toy(cfg: &RunConfig, task: &str, n: usize, generate_only: bool) -> CliResult<()> {
    // Test rows come from a separate seed so they never repeat training rows.
    let (train, test) = if task.eq_ignore_ascii_case("clf") {
        let c = ClfToyConfig::default();
        (clf_toy_generate(n, cfg.dbt.seed, &c)?, clf_toy_generate(cfg.test_rows, cfg.dbt.seed ^ 0x5eed, &c)?)
    } else {
        let t = ToyTask::parse(task).ok_or_else(|| CliError::usage(format!("unknown toy task '{task}'")))?;
        (
            crate::data::toy_generate(t, n, cfg.dbt.seed)?,
            crate::data::toy_generate(t, cfg.test_rows, cfg.dbt.seed ^ 0x5eed)?,
        )
    };
    create_dir(&cfg.out_dir)?;
    let opts = cfg.csv_options();
    write_csv(&train, cfg.out_dir.join("toy_train.csv"), &opts)?;
    write_csv(&test, cfg.out_dir.join("toy_test.csv"), &opts)?;
    if generate_only {
        return Ok(());
    }
    let file = train_to_dir(cfg, &train)?;
    let samples = sample_rows(&file, &test, cfg.samples(), cfg.dbt.seed)?;
    let classification = file.model.config().task == Task::BinaryClassification;
    write_file(&cfg.out_dir.join("samples.csv"), samples_csv(&samples, classification).as_bytes())?;
    let scores = score(cfg, &file.model, &test.response, &samples)?;
    for (k, v) in &scores.values {
        println!("{k}={v}");
    }
    if let Some(r) = &scores.report {
        print!("{r}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { data, common } => {
            let cfg = build_config(&common)?;
            echo("train", &cfg);
            init_threads(&cfg);
            let train = load_csv(&data, &cfg.csv_options())?;
            train_to_dir(&cfg, &train)?;
        }
        Command::Sample { model, data, out, common } => {
            let mut cfg = build_config(&common)?;
            let file = ModelFile::load(&model)?;
            adopt_model(&mut cfg, &file);
            echo("sample", &cfg);
            init_threads(&cfg);
            let rows = load_for_model(&cfg, &file.schema, &data)?;
            let samples = sample_rows(&file, &rows, cfg.samples(), cfg.dbt.seed)?;
            let classification = file.model.config().task == Task::BinaryClassification;
            let text = samples_csv(&samples, classification);
            match out {
                Some(p) => write_file(&p, text.as_bytes())?,
                None => {
                    let _ = std::io::stdout().lock().write_all(text.as_bytes());
                }
            }
        }
        Command::Eval {
            model,
            data,
            folds,
            mut common,
        } => {
            if let Some(f) = folds {
                common.set.push(format!("folds={f}"));
            }
            let mut cfg = build_config(&common)?;
            match model {
                Some(m) if folds.is_some() => {
                    return Err(CliError::usage(format!(
                        "--folds trains its own models; drop --model {}",
                        m.display()
                    )))
                }
                Some(m) => {
                    let file = ModelFile::load(&m)?;
                    adopt_model(&mut cfg, &file);
                    echo("eval", &cfg);
                    init_threads(&cfg);
                    eval_model(&cfg, &file, &data)?;
                }
                None => {
                    echo("eval", &cfg);
                    init_threads(&cfg);
                    eval_folds(&cfg, &data, cfg.folds)?;
                }
            }
        }
        Command::Importance { model, at, common } => {
            let mut cfg = build_config(&common)?;
            let file = ModelFile::load(&model)?;
            adopt_model(&mut cfg, &file);
            echo("importance", &cfg);
            let steps = match at {
                Some(list) => list
                    .split(',')
                    .map(|t| parse::<usize>("at", t.trim()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(CliError::usage)?,
                None => default_importance_steps(file.model.schedule().timesteps()),
            };
            print!("{}", importance_csv(&file, &steps)?);
        }
        Command::Schedule {
            beta_start,
            beta_end,
            mut common,
        } => {
            common.set.extend(beta_start.map(|b| format!("beta_start={b}")));
            common.set.extend(beta_end.map(|b| format!("beta_end={b}")));
            let cfg = build_config(&common)?;
            echo("schedule", &cfg);
            let s = NoiseSchedule::from_params(cfg.dbt.schedule)?;
            print!("{}", schedule_csv(&s));
        }
        Command::Toy {
            task,
            n,
            generate_only,
            common,
        } => {
            let mut cfg = build_config(&common)?;
            if task.eq_ignore_ascii_case("clf") {
                cfg.dbt.task = Task::BinaryClassification;
            }
            echo("toy", &cfg);
            init_threads(&cfg);
            run_toy(&cfg, &task, n, generate_only)?;
        }
    }
    Ok(())
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message);
            e.code
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}
