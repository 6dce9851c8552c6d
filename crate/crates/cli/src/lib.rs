//! Experiment runner behind the `factorbench` binary: declarative configs,
//! learning curves of error and fit time versus training size, and
//! machine-readable result tables.
//!
//! A curve run draws nested training subsamples (each ladder point is a
//! superset of the previous one), fits every grid cell on each subsample,
//! times the fit alone (dataset loading and result emission happen outside
//! the clocked region), and evaluates on a test set that is fixed up
//! front. Rows come back in deterministic (ladder, grid) order whatever
//! the worker count.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use factorbench::als::{als_fit, AlsOptions, RegWeighting};
use factorbench::error::{Error, Result};
use factorbench::kmeans;
use factorbench::logreg::{self, Optimizer, TrainOptions};
use factorbench::nmf::{self, NmfAlgorithm, NmfConfig, NmfInit};
use factorbench::sparse::{self, Delimiter, SparseRatings};
use factorbench::svt::{soft_impute, SoftImputeMode, SoftImputeOptions};
use factorbench::text::{self, NGram, TextPipeline};

/// Wall-clock source used to time fits; injectable so tests can prove the
/// clocked region covers the fit and nothing else.
pub trait Clock: Sync {
    /// Monotone seconds.
    fn now(&self) -> f64;
}

/// The real clock.
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    CompleteAls,
    CompleteSvt,
    Nmf,
    TextClass,
    Kmeans,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "complete_als" => Some(Task::CompleteAls),
            "complete_svt" => Some(Task::CompleteSvt),
            "nmf" => Some(Task::Nmf),
            "textclass" => Some(Task::TextClass),
            "kmeans" => Some(Task::Kmeans),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::CompleteAls => "complete_als",
            Task::CompleteSvt => "complete_svt",
            Task::Nmf => "nmf",
            Task::TextClass => "textclass",
            Task::Kmeans => "kmeans",
        }
    }
}

/// A training-set size: an absolute count, or a fraction of the available
/// training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LadderPoint {
    Count(usize),
    Fraction(f64),
}

impl LadderPoint {
    fn resolve(&self, available: usize) -> usize {
        match *self {
            LadderPoint::Count(c) => c.min(available),
            LadderPoint::Fraction(f) => ((f * available as f64).round() as usize).min(available),
        }
    }
}

/// One grid cell: ordered key=value parameters.
pub type ParamSet = Vec<(String, String)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: PathBuf,
    /// Ratings tasks: None means detect from the first line.
    pub delimiter: Option<Delimiter>,
    /// Held-out test fraction for the ratings and text tasks.
    pub test_fraction: f64,
    /// Strictly increasing training sizes.
    pub ladder: Vec<LadderPoint>,
    pub grid: Vec<ParamSet>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub format: OutputFormat,
}

/// One emitted measurement.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub train_size: usize,
    pub params: String,
    pub fit_seconds: f64,
    pub metric_name: String,
    /// None encodes a failed cell; serialized as the text `failed`.
    pub metric_value: Option<f64>,
    pub seed: u64,
    pub workers: usize,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Parse the declarative `key = value` config format. Unknown keys are
/// rejected. `ladder` holds whitespace-separated sizes (values ≤ 1 are
/// fractions); `grid` holds semicolon-separated cells of `key=value`
/// pairs.
pub fn parse_config(content: &str) -> Result<ExperimentConfig> {
    let mut task = None;
    let mut dataset = None;
    let mut delimiter = None;
    let mut test_fraction = 0.1;
    let mut ladder = Vec::new();
    let mut grid = Vec::new();
    let mut seed = 0u64;
    let mut workers = 1usize;
    let mut out = PathBuf::from("results.csv");
    let mut format = OutputFormat::Csv;

    for (i, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        match key {
            "task" => {
                task =
                    Some(Task::parse(value).ok_or_else(|| bad(format!("unknown task `{value}`")))?)
            }
            "dataset" => dataset = Some(PathBuf::from(value)),
            "delimiter" => {
                delimiter = match value {
                    "auto" => None,
                    "tab" => Some(Delimiter::Tab),
                    "comma" => Some(Delimiter::Comma),
                    "double-colon" => Some(Delimiter::DoubleColon),
                    other => return Err(bad(format!("unknown delimiter `{other}`"))),
                }
            }
            "test_fraction" => {
                test_fraction = value
                    .parse()
                    .map_err(|e| bad(format!("test_fraction: {e}")))?
            }
            "ladder" => {
                for tok in value.split_whitespace() {
                    let point = if tok.contains('.') {
                        LadderPoint::Fraction(tok.parse().map_err(|e| bad(format!("ladder: {e}")))?)
                    } else {
                        LadderPoint::Count(tok.parse().map_err(|e| bad(format!("ladder: {e}")))?)
                    };
                    ladder.push(point);
                }
            }
            "grid" => {
                for cell in value.split(';') {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        continue;
                    }
                    let mut params = ParamSet::new();
                    for pair in cell.split_whitespace() {
                        let (k, v) = pair
                            .split_once('=')
                            .ok_or_else(|| bad(format!("grid pair `{pair}`")))?;
                        params.push((k.to_string(), v.to_string()));
                    }
                    grid.push(params);
                }
            }
            "seed" => seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
            "workers" => workers = value.parse().map_err(|e| bad(format!("workers: {e}")))?,
            "out" => out = PathBuf::from(value),
            "format" => {
                format = match value {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    other => return Err(bad(format!("unknown format `{other}`"))),
                }
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }

    let config = ExperimentConfig {
        task: task.ok_or_else(|| invalid("config is missing `task`"))?,
        dataset: dataset.ok_or_else(|| invalid("config is missing `dataset`"))?,
        delimiter,
        test_fraction,
        ladder,
        grid,
        seed,
        workers: workers.max(1),
        out,
        format,
    };
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &ExperimentConfig) -> Result<()> {
    if config.grid.is_empty() {
        return Err(invalid("grid must not be empty"));
    }
    if config.ladder.is_empty() {
        return Err(invalid("ladder must not be empty"));
    }
    let resolve = |p: &LadderPoint| match *p {
        LadderPoint::Count(c) => c as f64,
        LadderPoint::Fraction(f) => f,
    };
    for w in config.ladder.windows(2) {
        if resolve(&w[1]) <= resolve(&w[0]) {
            return Err(invalid("ladder must be strictly increasing"));
        }
    }
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(invalid("test_fraction must be in (0,1)"));
    }
    Ok(())
}

/// Pre-loaded input of a curve run; loading happens outside the clocked
/// region.
pub enum CurveData {
    Ratings(SparseRatings),
    LabeledCorpus {
        docs: Vec<String>,
        labels: Vec<String>,
    },
    Points(Vec<Vec<f64>>),
    Dense(Array2<f64>),
}

/// Load the dataset a config points at.
pub fn load_curve_data(config: &ExperimentConfig) -> Result<CurveData> {
    match config.task {
        Task::CompleteAls | Task::CompleteSvt => {
            let delimiter = match config.delimiter {
                Some(d) => d,
                None => detect_delimiter(&config.dataset)?,
            };
            let loaded = sparse::load_movielens(&config.dataset, delimiter)?;
            Ok(CurveData::Ratings(loaded.ratings))
        }
        Task::TextClass => {
            let (docs, labels) = text::read_corpus(&config.dataset, true)?;
            Ok(CurveData::LabeledCorpus {
                docs,
                labels: labels.expect("labeled read"),
            })
        }
        Task::Kmeans => Ok(CurveData::Points(read_points_csv(&config.dataset)?)),
        Task::Nmf => Ok(CurveData::Dense(read_dense_csv(&config.dataset)?)),
    }
}

/// Sniff the delimiter from the first line of a ratings file.
pub fn detect_delimiter(path: &Path) -> Result<Delimiter> {
    let reader = BufReader::new(File::open(path)?);
    let first = reader.lines().next().ok_or(Error::Empty)??;
    Delimiter::detect(&first).ok_or_else(|| Error::Parse {
        line: 1,
        msg: "cannot detect delimiter".into(),
    })
}

/// Numeric vectors, one comma-separated row per line.
pub fn read_points_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        points.push(row);
    }
    if points.is_empty() {
        return Err(Error::Empty);
    }
    Ok(points)
}

/// Dense matrix from comma-separated rows.
pub fn read_dense_csv(path: &Path) -> Result<Array2<f64>> {
    let rows = read_points_csv(path)?;
    let n = rows.len();
    let p = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != p {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("row has {} columns, expected {p}", row.len()),
            });
        }
    }
    let mut m = Array2::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok(m)
}

fn param<'a>(params: &'a ParamSet, key: &str) -> Option<&'a str> {
    params
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

fn param_parse<T: std::str::FromStr>(params: &ParamSet, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match param(params, key) {
        Some(v) => v.parse().map_err(|e| invalid(format!("param {key}: {e}"))),
        None => Ok(default),
    }
}

fn params_string(params: &ParamSet) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_grid_keys(config: &ExperimentConfig) -> Result<()> {
    let allowed: &[&str] = match config.task {
        Task::CompleteAls => &["r", "lambda", "nonneg", "weighted_reg", "max_sweeps", "tol"],
        Task::CompleteSvt => &["rank_max", "lambda", "mode", "max_iter", "tol"],
        Task::Nmf => &["r", "algorithm", "starts", "init", "max_iter", "tol", "l2"],
        Task::TextClass => &[
            "n_hash",
            "lambda",
            "optimizer",
            "ngram",
            "signed",
            "max_epochs",
            "tol",
        ],
        Task::Kmeans => &["k", "partitions", "max_iter", "tol"],
    };
    for cell in &config.grid {
        for (k, _) in cell {
            if !allowed.contains(&k.as_str()) {
                return Err(invalid(format!(
                    "unknown grid key `{k}` for task {}",
                    config.task.name()
                )));
            }
        }
    }
    Ok(())
}

/// A seeded permutation prefix: ladder point m takes the first m elements,
/// so every ladder point is a superset of the previous one (nested
/// subsamples, uniform without replacement).
fn nested_order(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

struct CellOutcome {
    method: &'static str,
    metric_name: &'static str,
    metric_value: Option<f64>,
    fit_seconds: f64,
}

/// Run one (ladder point, grid cell) fit+evaluate. Only the fit sits
/// between the two clock reads.
fn run_cell(
    config: &ExperimentConfig,
    data: &CurveData,
    prepared: &PreparedData,
    train_size: usize,
    params: &ParamSet,
    clock: &dyn Clock,
) -> Result<CellOutcome> {
    match (config.task, data, prepared) {
        (
            Task::CompleteAls,
            CurveData::Ratings(_),
            PreparedData::Ratings { train, test, order },
        ) => {
            let rank: usize = param_parse(params, "r", 8)?;
            let lambda: f64 = param_parse(params, "lambda", 0.01)?;
            let nonneg: bool = param_parse(params, "nonneg", true)?;
            let weighted: bool = param_parse(params, "weighted_reg", true)?;
            let max_sweeps: usize = param_parse(params, "max_sweeps", 30)?;
            let tol: f64 = param_parse(params, "tol", 1e-4)?;
            let sub = subsample_ratings(train, order, train_size)?;
            let opts = AlsOptions {
                rank,
                lambda,
                nonneg,
                max_sweeps,
                tol,
                seed: config.seed,
                rating_bounds: rating_bounds_of(train),
                weighting: if weighted {
                    RegWeighting::ByObservationCount
                } else {
                    RegWeighting::Uniform
                },
            };
            let t0 = clock.now();
            let fit = restricted_als(&sub, &opts);
            let seconds = clock.now() - t0;
            Ok(CellOutcome {
                method: "als",
                metric_name: "test_rmse",
                metric_value: fit
                    .ok()
                    .and_then(|model| completion_test_rmse(&model, &sub, test).ok()),
                fit_seconds: seconds,
            })
        }
        (
            Task::CompleteSvt,
            CurveData::Ratings(_),
            PreparedData::Ratings { train, test, order },
        ) => {
            let rank_max: usize = param_parse(params, "rank_max", 10)?;
            let lambda: f64 = param_parse(params, "lambda", 10.0)?;
            let max_iter: usize = param_parse(params, "max_iter", 60)?;
            let tol: f64 = param_parse(params, "tol", 1e-5)?;
            let mode = match param(params, "mode").unwrap_or("svt") {
                "svt" => SoftImputeMode::Svt,
                "als-hybrid" => SoftImputeMode::AlsHybrid,
                other => return Err(invalid(format!("unknown mode `{other}`"))),
            };
            let sub = subsample_ratings(train, order, train_size)?;
            let opts = SoftImputeOptions {
                lambda,
                rank_max,
                tol,
                max_iter,
                seed: config.seed,
                mode,
                ..SoftImputeOptions::new(lambda, rank_max)
            };
            let t0 = clock.now();
            let fit = restricted_soft_impute(&sub, &opts);
            let seconds = clock.now() - t0;
            Ok(CellOutcome {
                method: "soft_impute",
                metric_name: "test_rmse",
                metric_value: fit.ok().and_then(|m| svt_test_rmse(&m, &sub, test).ok()),
                fit_seconds: seconds,
            })
        }
        (
            Task::TextClass,
            CurveData::LabeledCorpus { docs, labels },
            PreparedData::Text {
                train_idx,
                test_idx,
                order,
            },
        ) => {
            let n_hash: usize = param_parse(params, "n_hash", 1 << 16)?;
            let lambda: f64 = param_parse(params, "lambda", 1e-4)?;
            let max_epochs: usize = param_parse(params, "max_epochs", 40)?;
            let tol: f64 = param_parse(params, "tol", 1e-5)?;
            let signed: bool = param_parse(params, "signed", true)?;
            let ngram = match param_parse::<usize>(params, "ngram", 1)? {
                1 => NGram::Unigram,
                2 => NGram::Bigram,
                other => return Err(invalid(format!("ngram must be 1 or 2, got {other}"))),
            };
            let optimizer = match param(params, "optimizer").unwrap_or("batch") {
                "batch" | "batch_gradient" => Optimizer::BatchGradient,
                "sgd" => Optimizer::Sgd,
                other => return Err(invalid(format!("unknown optimizer `{other}`"))),
            };
            let _ = train_idx;
            let take: Vec<usize> = order[..train_size].to_vec();
            let train_docs: Vec<String> = take.iter().map(|&i| docs[i].clone()).collect();
            let train_labels: Vec<String> = take.iter().map(|&i| labels[i].clone()).collect();
            let test_docs: Vec<String> = test_idx.iter().map(|&i| docs[i].clone()).collect();
            let test_labels: Vec<String> = test_idx.iter().map(|&i| labels[i].clone()).collect();

            let pipeline = TextPipeline {
                ngram,
                signed,
                ..TextPipeline::new(n_hash)
            };
            let opts = TrainOptions {
                optimizer,
                max_epochs,
                tol,
                seed: config.seed,
                ..TrainOptions::new(lambda)
            };
            let t0 = clock.now();
            let outcome = (|| -> Result<f64> {
                let train_counts = pipeline.vectorize(&train_docs);
                let idf = text::tfidf_fit(&train_counts)?;
                let train_x = text::tfidf_transform(&train_counts, &idf)?;
                let (model, _) = logreg::train_ovr(&train_x, &train_labels, &opts)?;
                let test_counts = pipeline.vectorize(&test_docs);
                let test_x = text::tfidf_transform(&test_counts, &idf)?;
                let pred = logreg::predict(&model, &test_x)?;
                logreg::error_rate(&pred, &test_labels)
            })();
            let seconds = clock.now() - t0;
            Ok(CellOutcome {
                method: match optimizer {
                    Optimizer::BatchGradient => "ovr_logreg_batch",
                    Optimizer::Sgd => "ovr_logreg_sgd",
                },
                metric_name: "test_error_rate",
                metric_value: outcome.ok(),
                fit_seconds: seconds,
            })
        }
        (Task::Kmeans, CurveData::Points(points), PreparedData::Plain { order }) => {
            let k: usize = param_parse(params, "k", 8)?;
            let partitions: usize = param_parse(params, "partitions", 4)?;
            let max_iter: usize = param_parse(params, "max_iter", 100)?;
            let tol: f64 = param_parse(params, "tol", 1e-7)?;
            let sub: Vec<Vec<f64>> = order[..train_size]
                .iter()
                .map(|&i| points[i].clone())
                .collect();
            let t0 = clock.now();
            let fit = kmeans::kmeans_fit(&sub, k, partitions, config.seed, max_iter, tol);
            let seconds = clock.now() - t0;
            Ok(CellOutcome {
                method: "kmeans_mr",
                metric_name: "mean_inertia",
                metric_value: fit
                    .ok()
                    .and_then(|f| f.inertia.last().map(|v| v / train_size as f64)),
                fit_seconds: seconds,
            })
        }
        (Task::Nmf, CurveData::Dense(x), PreparedData::Plain { order }) => {
            let rank: usize = param_parse(params, "r", 4)?;
            let starts: usize = param_parse(params, "starts", 1)?;
            let max_iter: usize = param_parse(params, "max_iter", 200)?;
            let tol: f64 = param_parse(params, "tol", 1e-7)?;
            let l2: f64 = param_parse(params, "l2", 0.0)?;
            let algorithm = match param(params, "algorithm").unwrap_or("mult") {
                "mult" | "multiplicative" => NmfAlgorithm::MultiplicativeLs,
                "als" | "als_clamp" => NmfAlgorithm::AlsClamp,
                other => return Err(invalid(format!("unknown algorithm `{other}`"))),
            };
            let init = match param(params, "init").unwrap_or("random") {
                "random" => NmfInit::RandomMultistart { n_starts: starts },
                "nndsvd" => NmfInit::Nndsvd,
                other => return Err(invalid(format!("unknown init `{other}`"))),
            };
            // subsample rows, keep all columns
            let take: Vec<usize> = order[..train_size].to_vec();
            let mut sub = Array2::zeros((take.len(), x.ncols()));
            for (r, &i) in take.iter().enumerate() {
                for c in 0..x.ncols() {
                    sub[[r, c]] = x[[i, c]];
                }
            }
            let config_nmf = NmfConfig {
                rank,
                algorithm,
                init,
                max_iter,
                tol,
                seed: config.seed,
                l2_penalty: l2,
            };
            let t0 = clock.now();
            let fit = nmf::nmf_fit(&sub, &config_nmf);
            let seconds = clock.now() - t0;
            let metric = fit.ok().map(|f| {
                let denom: f64 = sub.iter().map(|v| v * v).sum::<f64>().max(1e-300);
                (nmf::nmf_objective(&sub, &f.w, &f.h, 0.0) / denom).sqrt()
            });
            Ok(CellOutcome {
                method: match algorithm {
                    NmfAlgorithm::MultiplicativeLs => "nmf_mult",
                    NmfAlgorithm::AlsClamp => "nmf_als",
                },
                metric_name: "rel_frobenius_error",
                metric_value: metric,
                fit_seconds: seconds,
            })
        }
        _ => Err(invalid("dataset does not match task")),
    }
}

/// Per-task state prepared once per run: the fixed test set and the
/// nested subsampling order.
enum PreparedData {
    Ratings {
        train: SparseRatings,
        test: SparseRatings,
        order: Vec<usize>,
    },
    Text {
        train_idx: Vec<usize>,
        test_idx: Vec<usize>,
        /// Nested order over `train_idx`, already resolved to corpus ids.
        order: Vec<usize>,
    },
    Plain {
        order: Vec<usize>,
    },
}

fn prepare(config: &ExperimentConfig, data: &CurveData) -> Result<(PreparedData, usize)> {
    match (config.task, data) {
        (Task::CompleteAls | Task::CompleteSvt, CurveData::Ratings(ratings)) => {
            let split = sparse::holdout_split(ratings, config.test_fraction, config.seed)?;
            let order = nested_order(split.train.len(), config.seed.wrapping_add(1));
            let available = split.train.len();
            Ok((
                PreparedData::Ratings {
                    train: split.train,
                    test: split.test,
                    order,
                },
                available,
            ))
        }
        (Task::TextClass, CurveData::LabeledCorpus { docs, .. }) => {
            let n = docs.len();
            if n == 0 {
                return Err(Error::Empty);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let n_test = ((config.test_fraction * n as f64).round() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            for i in 0..n_test {
                let j = rng.random_range(i..n);
                order.swap(i, j);
            }
            let test_idx: Vec<usize> = {
                let mut t = order[..n_test].to_vec();
                t.sort_unstable();
                t
            };
            let train_idx: Vec<usize> = {
                let mut t = order[n_test..].to_vec();
                t.sort_unstable();
                t
            };
            let nested = nested_order(train_idx.len(), config.seed.wrapping_add(1));
            let order: Vec<usize> = nested.iter().map(|&i| train_idx[i]).collect();
            let available = train_idx.len();
            Ok((
                PreparedData::Text {
                    train_idx,
                    test_idx,
                    order,
                },
                available,
            ))
        }
        (Task::Kmeans, CurveData::Points(points)) => {
            let order = nested_order(points.len(), config.seed.wrapping_add(1));
            Ok((PreparedData::Plain { order }, points.len()))
        }
        (Task::Nmf, CurveData::Dense(x)) => {
            let order = nested_order(x.nrows(), config.seed.wrapping_add(1));
            Ok((PreparedData::Plain { order }, x.nrows()))
        }
        _ => Err(invalid("dataset does not match task")),
    }
}

fn subsample_ratings(train: &SparseRatings, order: &[usize], size: usize) -> Result<SparseRatings> {
    let entries = train.entries();
    let take: Vec<(u32, u32, f64)> = order[..size.min(order.len())]
        .iter()
        .map(|&i| entries[i])
        .collect();
    SparseRatings::from_entries(train.n_rows(), train.n_cols(), take)
}

fn rating_bounds_of(train: &SparseRatings) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, _, v) in train.entries() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo.is_finite() && hi.is_finite() {
        Some((lo, hi))
    } else {
        None
    }
}

/// A completion model fitted on the support of a subsample, able to score
/// any cell of the full index space: out-of-support cells fall back to the
/// subsample's global mean.
pub struct SupportedModel {
    row_new: Vec<u32>,
    col_new: Vec<u32>,
    fallback: f64,
    kind: SupportedKind,
}

enum SupportedKind {
    Als(factorbench::als::FactorModel),
    Svt(factorbench::svt::LowRankTriple),
}

impl SupportedModel {
    pub fn predict(&self, row: usize, col: usize) -> f64 {
        let (nr, nc) = (self.row_new[row], self.col_new[col]);
        if nr == u32::MAX || nc == u32::MAX {
            return self.fallback;
        }
        match &self.kind {
            SupportedKind::Als(m) => m.predict(nr as usize, nc as usize),
            SupportedKind::Svt(m) => m.predict(nr as usize, nc as usize),
        }
    }
}

fn support_maps(train: &SparseRatings) -> (Vec<u32>, Vec<u32>, SparseRatings) {
    let mut row_new = vec![u32::MAX; train.n_rows()];
    let mut col_new = vec![u32::MAX; train.n_cols()];
    let mut next_row = 0u32;
    for r in 0..train.n_rows() {
        if !train.row(r).is_empty() {
            row_new[r] = next_row;
            next_row += 1;
        }
    }
    let mut next_col = 0u32;
    for c in 0..train.n_cols() {
        if !train.col(c).is_empty() {
            col_new[c] = next_col;
            next_col += 1;
        }
    }
    let entries = train
        .entries()
        .iter()
        .map(|&(r, c, v)| (row_new[r as usize], col_new[c as usize], v))
        .collect();
    let compact = SparseRatings::from_entries(next_row as usize, next_col as usize, entries)
        .expect("support compaction preserves validity");
    (row_new, col_new, compact)
}

/// Fit ALS on the support of `sub` (rows/columns with at least one entry).
pub fn restricted_als(sub: &SparseRatings, opts: &AlsOptions) -> Result<SupportedModel> {
    let (row_new, col_new, compact) = support_maps(sub);
    let fallback = compact.mean()?;
    let fit = als_fit(&compact, opts)?;
    Ok(SupportedModel {
        row_new,
        col_new,
        fallback,
        kind: SupportedKind::Als(fit.model),
    })
}

/// Fit soft-impute on the support of `sub`.
pub fn restricted_soft_impute(
    sub: &SparseRatings,
    opts: &SoftImputeOptions,
) -> Result<SupportedModel> {
    let (row_new, col_new, compact) = support_maps(sub);
    let fallback = compact.mean()?;
    let mut opts = opts.clone();
    opts.rank_max = opts.rank_max.min(compact.n_rows().min(compact.n_cols()));
    let fit = soft_impute(&compact, &opts, None)?;
    Ok(SupportedModel {
        row_new,
        col_new,
        fallback,
        kind: SupportedKind::Svt(fit.triple),
    })
}

fn completion_test_rmse(
    model: &SupportedModel,
    _sub: &SparseRatings,
    test: &SparseRatings,
) -> Result<f64> {
    let res: Vec<f64> = test
        .entries()
        .iter()
        .map(|&(r, c, v)| v - model.predict(r as usize, c as usize))
        .collect();
    sparse::rmse(&res)
}

fn svt_test_rmse(model: &SupportedModel, sub: &SparseRatings, test: &SparseRatings) -> Result<f64> {
    completion_test_rmse(model, sub, test)
}

/// Run the full ladder × grid sweep. Cells run concurrently up to
/// `config.workers`; rows come back sorted by (ladder, grid) position. A
/// failing cell yields a row with the `failed` metric instead of aborting
/// the sweep.
pub fn run_learning_curve(
    config: &ExperimentConfig,
    data: &CurveData,
    clock: &dyn Clock,
) -> Result<Vec<ResultRow>> {
    validate_config(config)?;
    check_grid_keys(config)?;
    let (prepared, available) = prepare(config, data)?;

    let mut cells = Vec::new();
    for (li, ladder_point) in config.ladder.iter().enumerate() {
        let train_size = ladder_point.resolve(available);
        for (gi, params) in config.grid.iter().enumerate() {
            cells.push((li, gi, train_size, params.clone()));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;

    let outcomes: Vec<Result<((usize, usize), usize, ParamSet, CellOutcome)>> =
        pool.install(|| {
            cells
                .par_iter()
                .map(|(li, gi, train_size, params)| {
                    let outcome = run_cell(config, data, &prepared, *train_size, params, clock)?;
                    Ok(((*li, *gi), *train_size, params.clone(), outcome))
                })
                .collect()
        });

    let mut keyed = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        keyed.push(o?);
    }
    keyed.sort_by_key(|(key, _, _, _)| *key);

    Ok(keyed
        .into_iter()
        .map(|(_, train_size, params, outcome)| ResultRow {
            task: config.task.name().to_string(),
            method: outcome.method.to_string(),
            train_size,
            params: params_string(&params),
            fit_seconds: outcome.fit_seconds,
            metric_name: outcome.metric_name.to_string(),
            // a non-finite metric is a failed cell
            metric_value: outcome.metric_value.filter(|v| v.is_finite()),
            seed: config.seed,
            workers: config.workers,
        })
        .collect())
}

/// Fixed CSV schema shared by every task.
pub const CSV_HEADER: &str =
    "task,method,train_size,params,fit_seconds,metric_name,metric_value,seed,workers";

/// Render rows as CSV text (stable column order, bit-identical for
/// identical rows).
pub fn render_csv(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_HEADER}");
    for r in rows {
        let metric = match r.metric_value {
            Some(v) => v.to_string(),
            None => "failed".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.task,
            r.method,
            r.train_size,
            r.params,
            r.fit_seconds,
            r.metric_name,
            metric,
            r.seed,
            r.workers
        );
    }
    Ok(out)
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// Render rows as a JSON array with the same fields as the CSV.
pub fn render_json(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let mut out = String::from("[\n");
    for (i, r) in rows.iter().enumerate() {
        let metric = match r.metric_value {
            Some(v) => {
                if v.is_finite() {
                    v.to_string()
                } else {
                    format!("\"{v}\"")
                }
            }
            None => "\"failed\"".to_string(),
        };
        let _ = write!(
            out,
            "  {{\"task\": \"{}\", \"method\": \"{}\", \"train_size\": {}, \"params\": \"{}\", \"fit_seconds\": {}, \"metric_name\": \"{}\", \"metric_value\": {}, \"seed\": {}, \"workers\": {}}}",
            json_escape(&r.task),
            json_escape(&r.method),
            r.train_size,
            json_escape(&r.params),
            r.fit_seconds,
            json_escape(&r.metric_name),
            metric,
            r.seed,
            r.workers
        );
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    Ok(out)
}

/// Write rows to a file in the requested format. Errors on empty input or
/// an unwritable path.
pub fn emit_results(rows: &[ResultRow], format: OutputFormat, path: &Path) -> Result<()> {
    let content = match format {
        OutputFormat::Csv => render_csv(rows)?,
        OutputFormat::Json => render_json(rows)?,
    };
    File::create(path)?.write_all(content.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parser_round_trips_the_examples() {
        let text = "\
# completion benchmark
task = complete_als
dataset = data/ml-100k/u.data
delimiter = tab
test_fraction = 0.1
ladder = 1000 2000 4000
grid = r=4 lambda=0.01 ; r=8 lambda=0.01
seed = 42
workers = 2
out = out.csv
format = json
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.task, Task::CompleteAls);
        assert_eq!(config.ladder.len(), 3);
        assert_eq!(config.grid.len(), 2);
        assert_eq!(config.grid[1][0], ("r".to_string(), "8".to_string()));
        assert_eq!(config.workers, 2);
        assert_eq!(config.format, OutputFormat::Json);
    }

    #[test]
    fn config_parser_rejects_bad_input() {
        assert!(parse_config("task = complete_als\n").is_err()); // no dataset
        assert!(parse_config("nonsense\n").is_err());
        assert!(parse_config("unknown_key = 3\n").is_err());
        // non-increasing ladder
        let text = "task = kmeans\ndataset = x.csv\nladder = 10 10\ngrid = k=2\n";
        assert!(parse_config(text).is_err());
        // empty grid
        let text = "task = kmeans\ndataset = x.csv\nladder = 10 20\n";
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn csv_rendering_is_stable() {
        let rows = vec![ResultRow {
            task: "kmeans".into(),
            method: "kmeans_mr".into(),
            train_size: 100,
            params: "k=3".into(),
            fit_seconds: 0.5,
            metric_name: "mean_inertia".into(),
            metric_value: Some(1.25),
            seed: 7,
            workers: 1,
        }];
        let a = render_csv(&rows).unwrap();
        let b = render_csv(&rows).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 2);
        assert!(a.starts_with(CSV_HEADER));
        assert!(a.contains("kmeans_mr,100,k=3,0.5,mean_inertia,1.25,7,1"));

        assert!(render_csv(&[]).is_err());
    }

    #[test]
    fn failed_cells_render_as_failed() {
        let rows = vec![ResultRow {
            task: "nmf".into(),
            method: "nmf_mult".into(),
            train_size: 10,
            params: "r=40".into(),
            fit_seconds: 0.0,
            metric_name: "rel_frobenius_error".into(),
            metric_value: None,
            seed: 0,
            workers: 1,
        }];
        let csv = render_csv(&rows).unwrap();
        assert!(csv.contains(",failed,"));
        let json = render_json(&rows).unwrap();
        assert!(json.contains("\"failed\""));
    }

    #[test]
    fn json_and_csv_agree_on_values() {
        let rows = vec![ResultRow {
            task: "textclass".into(),
            method: "ovr_logreg_batch".into(),
            train_size: 500,
            params: "n_hash=1024 lambda=0.0001".into(),
            fit_seconds: 1.5,
            metric_name: "test_error_rate".into(),
            metric_value: Some(0.125),
            seed: 3,
            workers: 4,
        }];
        let csv = render_csv(&rows).unwrap();
        let json = render_json(&rows).unwrap();
        assert!(csv.contains("0.125"));
        assert!(json.contains("\"metric_value\": 0.125"));
        assert!(json.contains("\"train_size\": 500"));
    }
}
