//! Command-line front end: thin bindings from subcommands to the library
//! operations, with common `--seed`, `--workers`, `--out` flags.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use factorbench::als::{als_fit, AlsFit, AlsOptions, RegWeighting};
use factorbench::error::Error;
use factorbench::kmeans;
use factorbench::logreg::{self, Optimizer, TrainOptions};
use factorbench::nmf::{self, NmfAlgorithm, NmfConfig, NmfInit};
use factorbench::sparse::{self, Delimiter};
use factorbench::svt::{soft_impute, SoftImputeFit, SoftImputeMode, SoftImputeOptions};
use factorbench::text::{self, NGram, TextPipeline};

use factorbench_cli::{
    detect_delimiter, emit_results, load_curve_data, parse_config, read_dense_csv, read_points_csv,
    run_learning_curve, OutputFormat, SystemClock,
};

enum CmdError {
    /// Bad flags or config content.
    Usage(String),
    /// Unreadable or malformed input data.
    Data(Error),
    /// A fit rejected its input or failed numerically.
    Numeric(Error),
}

impl CmdError {
    fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Data(_) => 2,
            CmdError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CmdError::Usage(m) => format!("usage error: {m}"),
            CmdError::Data(e) => format!("data error: {e}"),
            CmdError::Numeric(e) => format!("numerical failure: {e}"),
        }
    }
}

type CmdResult = Result<(), CmdError>;

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

fn print_usage() {
    eprintln!("Usage: factorbench <command> [flags]");
    eprintln!();
    eprintln!("Commands:");
    eprintln!("  complete-als   observed-entry ALS completion on a ratings file");
    eprintln!("  complete-svt   soft-thresholded-SVD completion on a ratings file");
    eprintln!("  nmf            nonnegative factorization of a dense CSV matrix");
    eprintln!("  vectorize      hash (and optionally TF-IDF weight) a text corpus");
    eprintln!("  train-text     one-vs-rest logistic regression on a hashed matrix");
    eprintln!("  kmeans         map/shuffle/reduce k-means on a CSV of vectors");
    eprintln!("  curve          run a learning-curve experiment from a config file");
    eprintln!();
    eprintln!("Common flags: --seed N, --workers N, --out PATH");
    eprintln!("Run a command with --help for its flags.");
}

/// Tiny flag cursor over the argument list.
struct Flags {
    args: Vec<String>,
    pos: usize,
}

impl Flags {
    fn new(args: Vec<String>) -> Self {
        Flags { args, pos: 0 }
    }

    fn next(&mut self) -> Option<String> {
        let v = self.args.get(self.pos).cloned();
        if v.is_some() {
            self.pos += 1;
        }
        v
    }

    fn value(&mut self, flag: &str) -> Result<String, CmdError> {
        self.next()
            .ok_or_else(|| usage(format!("flag {flag} needs a value")))
    }

    fn parse<T: std::str::FromStr>(&mut self, flag: &str) -> Result<T, CmdError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.value(flag)?;
        v.parse().map_err(|e| usage(format!("flag {flag}: {e}")))
    }
}

fn data_err(e: Error) -> CmdError {
    CmdError::Data(e)
}

fn numeric_err(e: Error) -> CmdError {
    CmdError::Numeric(e)
}

fn parse_delimiter(value: &str) -> Result<Option<Delimiter>, CmdError> {
    match value {
        "auto" => Ok(None),
        "tab" => Ok(Some(Delimiter::Tab)),
        "comma" => Ok(Some(Delimiter::Comma)),
        "double-colon" => Ok(Some(Delimiter::DoubleColon)),
        other => Err(usage(format!("unknown delimiter `{other}`"))),
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CmdError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_file(path: &Path, content: &str) -> Result<(), CmdError> {
    File::create(path)
        .and_then(|mut f| f.write_all(content.as_bytes()))
        .map_err(|e| data_err(Error::Io(e)))
}

fn load_ratings(
    path: &Path,
    delimiter: Option<Delimiter>,
) -> Result<sparse::LoadedRatings, CmdError> {
    let delimiter = match delimiter {
        Some(d) => d,
        None => detect_delimiter(path).map_err(data_err)?,
    };
    let loaded = sparse::load_movielens(path, delimiter).map_err(data_err)?;
    if loaded.duplicates_replaced > 0 {
        eprintln!(
            "warning: {} duplicate (user, item) pairs replaced keep-last",
            loaded.duplicates_replaced
        );
    }
    Ok(loaded)
}

fn als_trace_csv(fit: &AlsFit) -> String {
    let mut out = String::from("sweep,objective,train_rmse,seconds\n");
    for row in &fit.trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.sweep, row.objective, row.train_rmse, row.seconds
        );
    }
    out
}

fn svt_trace_csv(fit: &SoftImputeFit) -> String {
    let mut out = String::from("iter,objective,rank,seconds\n");
    for row in &fit.trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.iter, row.objective, row.rank, row.seconds
        );
    }
    out
}

fn cmd_complete_als(mut flags: Flags) -> CmdResult {
    let mut data: Option<PathBuf> = None;
    let mut delimiter = None;
    let mut rank = 8usize;
    let mut lambda = 0.01f64;
    let mut nonneg = false;
    let mut weighted = false;
    let mut max_sweeps = 30usize;
    let mut tol = 1e-4f64;
    let mut test_fraction = 0.1f64;
    let mut bounds: Option<(f64, f64)> = None;
    let mut seed = 0u64;
    let mut workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Option<PathBuf> = None;
    let mut model_out: Option<PathBuf> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--data" => data = Some(PathBuf::from(flags.value("--data")?)),
            "--delimiter" => delimiter = parse_delimiter(&flags.value("--delimiter")?)?,
            "--rank" => rank = flags.parse("--rank")?,
            "--lambda" => lambda = flags.parse("--lambda")?,
            "--nonneg" => nonneg = true,
            "--weighted-reg" => weighted = true,
            "--max-sweeps" => max_sweeps = flags.parse("--max-sweeps")?,
            "--tol" => tol = flags.parse("--tol")?,
            "--test-fraction" => test_fraction = flags.parse("--test-fraction")?,
            "--bounds" => {
                let v = flags.value("--bounds")?;
                let (lo, hi) = v
                    .split_once(':')
                    .ok_or_else(|| usage("--bounds expects lo:hi"))?;
                bounds = Some((
                    lo.parse().map_err(|e| usage(format!("--bounds: {e}")))?,
                    hi.parse().map_err(|e| usage(format!("--bounds: {e}")))?,
                ));
            }
            "--seed" => seed = flags.parse("--seed")?,
            "--workers" => workers = flags.parse("--workers")?,
            "--out" => out = Some(PathBuf::from(flags.value("--out")?)),
            "--model-out" => model_out = Some(PathBuf::from(flags.value("--model-out")?)),
            "--help" | "-h" => {
                eprintln!("factorbench complete-als --data FILE [--delimiter auto|tab|comma|double-colon]");
                eprintln!(
                    "  [--rank 8] [--lambda 0.01] [--nonneg] [--weighted-reg] [--max-sweeps 30]"
                );
                eprintln!("  [--tol 1e-4] [--test-fraction 0.1] [--bounds lo:hi] [--seed 0]");
                eprintln!("  [--workers N] [--out trace.csv] [--model-out model.txt]");
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let data = data.ok_or_else(|| usage("--data is required"))?;
    if rank < 1 {
        return Err(usage("--rank must be >= 1"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(usage("--test-fraction must be in (0,1)"));
    }

    let loaded = load_ratings(&data, delimiter)?;
    let split = sparse::holdout_split(&loaded.ratings, test_fraction, seed).map_err(data_err)?;
    let restricted = split.restrict_to_train_support().map_err(data_err)?;

    let opts = AlsOptions {
        rank,
        lambda,
        nonneg,
        max_sweeps,
        tol,
        seed,
        rating_bounds: bounds,
        weighting: if weighted {
            RegWeighting::ByObservationCount
        } else {
            RegWeighting::Uniform
        },
    };
    let fit = with_pool(workers, || als_fit(&restricted.train, &opts))?.map_err(numeric_err)?;
    let test_rmse = sparse::rmse_against(&restricted.test, &fit.model).map_err(numeric_err)?;
    let baselines = sparse::baseline_predictors(&restricted.train).map_err(numeric_err)?;
    let baseline_rmse = baselines
        .global_rmse(&restricted.test)
        .map_err(numeric_err)?;

    println!(
        "als rank={rank} lambda={lambda} nonneg={nonneg} sweeps={} converged={} \
         test_rmse={test_rmse:.6} baseline_rmse={baseline_rmse:.6} dropped_test={}",
        fit.trace.len(),
        fit.converged,
        restricted.dropped_test_entries
    );
    if let Some(path) = out {
        write_file(&path, &als_trace_csv(&fit))?;
    }
    if let Some(path) = model_out {
        fit.model.save(&path).map_err(data_err)?;
    }
    Ok(())
}

fn cmd_complete_svt(mut flags: Flags) -> CmdResult {
    let mut data: Option<PathBuf> = None;
    let mut delimiter = None;
    let mut rank_max = 10usize;
    let mut lambda = 10.0f64;
    let mut mode = SoftImputeMode::Svt;
    let mut max_iter = 100usize;
    let mut tol = 1e-5f64;
    let mut test_fraction = 0.1f64;
    let mut seed = 0u64;
    let mut workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Option<PathBuf> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--data" => data = Some(PathBuf::from(flags.value("--data")?)),
            "--delimiter" => delimiter = parse_delimiter(&flags.value("--delimiter")?)?,
            "--rank-max" => rank_max = flags.parse("--rank-max")?,
            "--lambda" => lambda = flags.parse("--lambda")?,
            "--mode" => {
                mode = match flags.value("--mode")?.as_str() {
                    "svt" => SoftImputeMode::Svt,
                    "als-hybrid" => SoftImputeMode::AlsHybrid,
                    other => return Err(usage(format!("unknown mode `{other}`"))),
                }
            }
            "--max-iter" => max_iter = flags.parse("--max-iter")?,
            "--tol" => tol = flags.parse("--tol")?,
            "--test-fraction" => test_fraction = flags.parse("--test-fraction")?,
            "--seed" => seed = flags.parse("--seed")?,
            "--workers" => workers = flags.parse("--workers")?,
            "--out" => out = Some(PathBuf::from(flags.value("--out")?)),
            "--help" | "-h" => {
                eprintln!("factorbench complete-svt --data FILE [--delimiter ...] [--rank-max 10]");
                eprintln!("  [--lambda 10] [--mode svt|als-hybrid] [--max-iter 100] [--tol 1e-5]");
                eprintln!("  [--test-fraction 0.1] [--seed 0] [--workers N] [--out trace.csv]");
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let data = data.ok_or_else(|| usage("--data is required"))?;
    if rank_max < 1 {
        return Err(usage("--rank-max must be >= 1"));
    }

    let loaded = load_ratings(&data, delimiter)?;
    let split = sparse::holdout_split(&loaded.ratings, test_fraction, seed).map_err(data_err)?;
    let restricted = split.restrict_to_train_support().map_err(data_err)?;

    let opts = SoftImputeOptions {
        lambda,
        rank_max,
        tol,
        max_iter,
        seed,
        mode,
        ..SoftImputeOptions::new(lambda, rank_max)
    };
    let fit =
        with_pool(workers, || soft_impute(&restricted.train, &opts, None))?.map_err(numeric_err)?;
    let test_rmse =
        factorbench::svt::completion_rmse(&restricted.test, &fit.triple).map_err(numeric_err)?;
    println!(
        "soft_impute rank_max={rank_max} lambda={lambda} mode={mode:?} iters={} rank={} \
         converged={} rank_ceiling_hit={} test_rmse={test_rmse:.6}",
        fit.trace.len(),
        fit.triple.rank(),
        fit.converged,
        fit.rank_ceiling_hit
    );
    if let Some(path) = out {
        write_file(&path, &svt_trace_csv(&fit))?;
    }
    Ok(())
}

fn cmd_nmf(mut flags: Flags) -> CmdResult {
    let mut data: Option<PathBuf> = None;
    let mut rank = 4usize;
    let mut algorithm = NmfAlgorithm::MultiplicativeLs;
    let mut init = String::from("random");
    let mut starts = 1usize;
    let mut max_iter = 500usize;
    let mut tol = 1e-9f64;
    let mut l2 = 0.0f64;
    let mut seed = 0u64;
    let mut workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Option<PathBuf> = None;
    let mut factors_out: Option<PathBuf> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--data" => data = Some(PathBuf::from(flags.value("--data")?)),
            "--rank" => rank = flags.parse("--rank")?,
            "--algorithm" => {
                algorithm = match flags.value("--algorithm")?.as_str() {
                    "mult" | "multiplicative" => NmfAlgorithm::MultiplicativeLs,
                    "als" | "als-clamp" => NmfAlgorithm::AlsClamp,
                    other => return Err(usage(format!("unknown algorithm `{other}`"))),
                }
            }
            "--init" => init = flags.value("--init")?,
            "--starts" => starts = flags.parse("--starts")?,
            "--max-iter" => max_iter = flags.parse("--max-iter")?,
            "--tol" => tol = flags.parse("--tol")?,
            "--l2" => l2 = flags.parse("--l2")?,
            "--seed" => seed = flags.parse("--seed")?,
            "--workers" => workers = flags.parse("--workers")?,
            "--out" => out = Some(PathBuf::from(flags.value("--out")?)),
            "--factors-out" => factors_out = Some(PathBuf::from(flags.value("--factors-out")?)),
            "--help" | "-h" => {
                eprintln!("factorbench nmf --data MATRIX.csv [--rank 4] [--algorithm mult|als]");
                eprintln!("  [--init random|nndsvd] [--starts 1] [--max-iter 500] [--tol 1e-9]");
                eprintln!(
                    "  [--l2 0] [--seed 0] [--workers N] [--out trace.csv] [--factors-out f.txt]"
                );
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let data = data.ok_or_else(|| usage("--data is required"))?;
    if rank < 1 {
        return Err(usage("--rank must be >= 1"));
    }
    let init = match init.as_str() {
        "random" => NmfInit::RandomMultistart { n_starts: starts },
        "nndsvd" => NmfInit::Nndsvd,
        other => return Err(usage(format!("unknown init `{other}`"))),
    };

    let x = read_dense_csv(&data).map_err(data_err)?;
    let config = NmfConfig {
        rank,
        algorithm,
        init,
        max_iter,
        tol,
        seed,
        l2_penalty: l2,
    };
    let fit = with_pool(workers, || nmf::nmf_fit(&x, &config))?.map_err(numeric_err)?;
    println!(
        "nmf rank={rank} algorithm={algorithm:?} best_start={} converged={} objective={:.6e}",
        fit.best_start, fit.converged, fit.objective
    );
    if let Some(path) = out {
        let mut content = String::from("start_id,iter,objective\n");
        for row in &fit.trace {
            let _ = writeln!(content, "{},{},{}", row.start_id, row.iter, row.objective);
        }
        write_file(&path, &content)?;
    }
    if let Some(path) = factors_out {
        // same dump format as the completion factor models: A = W, B = Hᵀ
        let model = factorbench::als::FactorModel::from_factors(
            fit.w.clone(),
            fit.h.t().to_owned(),
            l2,
            true,
            None,
        );
        model.save(&path).map_err(data_err)?;
    }
    Ok(())
}

fn cmd_vectorize(mut flags: Flags) -> CmdResult {
    let mut corpus: Option<PathBuf> = None;
    let mut labeled = false;
    let mut n_hash = 1usize << 16;
    let mut ngram = NGram::Unigram;
    let mut signed = true;
    let mut stem = true;
    let mut stopwords = String::from("french");
    let mut tfidf = false;
    let mut idf_in: Option<PathBuf> = None;
    let mut idf_out: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut labels_out: Option<PathBuf> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--corpus" => corpus = Some(PathBuf::from(flags.value("--corpus")?)),
            "--labeled" => labeled = true,
            "--n-hash" => n_hash = flags.parse("--n-hash")?,
            "--ngram" => {
                ngram = match flags.value("--ngram")?.as_str() {
                    "1" => NGram::Unigram,
                    "2" => NGram::Bigram,
                    other => return Err(usage(format!("--ngram must be 1 or 2, got {other}"))),
                }
            }
            "--unsigned" => signed = false,
            "--no-stem" => stem = false,
            "--stopwords" => stopwords = flags.value("--stopwords")?,
            "--tfidf" => tfidf = true,
            "--idf-in" => idf_in = Some(PathBuf::from(flags.value("--idf-in")?)),
            "--idf-out" => idf_out = Some(PathBuf::from(flags.value("--idf-out")?)),
            "--out" => out = Some(PathBuf::from(flags.value("--out")?)),
            "--labels-out" => labels_out = Some(PathBuf::from(flags.value("--labels-out")?)),
            "--help" | "-h" => {
                eprintln!("factorbench vectorize --corpus FILE --out MATRIX [--labeled]");
                eprintln!("  [--n-hash 65536] [--ngram 1|2] [--unsigned] [--no-stem]");
                eprintln!("  [--stopwords french|none|FILE] [--tfidf] [--idf-in FILE]");
                eprintln!("  [--idf-out FILE] [--labels-out FILE]");
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let corpus = corpus.ok_or_else(|| usage("--corpus is required"))?;
    let out = out.ok_or_else(|| usage("--out is required"))?;
    if n_hash < 1 {
        return Err(usage("--n-hash must be >= 1"));
    }

    let stoplist = match stopwords.as_str() {
        "french" => text::french_stopwords(),
        "none" => Default::default(),
        path => text::load_stopwords(Path::new(path)).map_err(data_err)?,
    };
    let pipeline = TextPipeline {
        stoplist,
        stemmer: if stem {
            Some(Box::new(text::FrenchSuffixStemmer))
        } else {
            None
        },
        n_hash,
        ngram,
        signed,
    };

    let (docs, labels) = text::read_corpus(&corpus, labeled).map_err(data_err)?;
    let counts = pipeline.vectorize(&docs);
    let matrix = if tfidf {
        let idf = match &idf_in {
            Some(path) => text::IdfWeights::load(path).map_err(data_err)?,
            None => text::tfidf_fit(&counts).map_err(numeric_err)?,
        };
        if let Some(path) = &idf_out {
            idf.save(path).map_err(data_err)?;
        }
        text::tfidf_transform(&counts, &idf).map_err(numeric_err)?
    } else {
        if let Some(path) = &idf_out {
            let idf = text::tfidf_fit(&counts).map_err(numeric_err)?;
            idf.save(path).map_err(data_err)?;
        }
        counts
    };
    matrix.save(&out).map_err(data_err)?;
    if let Some(path) = labels_out {
        match &labels {
            Some(ls) => write_file(&path, &(ls.join("\n") + "\n"))?,
            None => return Err(usage("--labels-out requires --labeled")),
        }
    }
    println!(
        "vectorized n_docs={} n_hash={} stage={:?}",
        matrix.n_docs(),
        matrix.n_hash,
        matrix.stage
    );
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<String>, CmdError> {
    let content = std::fs::read_to_string(path).map_err(|e| data_err(Error::Io(e)))?;
    Ok(content.lines().map(|l| l.to_string()).collect())
}

fn cmd_train_text(mut flags: Flags) -> CmdResult {
    let mut matrix: Option<PathBuf> = None;
    let mut labels: Option<PathBuf> = None;
    let mut lambda = 1e-4f64;
    let mut optimizer = Optimizer::BatchGradient;
    let mut max_epochs = 100usize;
    let mut tol = 1e-6f64;
    let mut seed = 0u64;
    let mut workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Option<PathBuf> = None;
    let mut test_matrix: Option<PathBuf> = None;
    let mut test_labels: Option<PathBuf> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--matrix" => matrix = Some(PathBuf::from(flags.value("--matrix")?)),
            "--labels" => labels = Some(PathBuf::from(flags.value("--labels")?)),
            "--lambda" => lambda = flags.parse("--lambda")?,
            "--optimizer" => {
                optimizer = match flags.value("--optimizer")?.as_str() {
                    "batch" => Optimizer::BatchGradient,
                    "sgd" => Optimizer::Sgd,
                    other => return Err(usage(format!("unknown optimizer `{other}`"))),
                }
            }
            "--max-epochs" => max_epochs = flags.parse("--max-epochs")?,
            "--tol" => tol = flags.parse("--tol")?,
            "--seed" => seed = flags.parse("--seed")?,
            "--workers" => workers = flags.parse("--workers")?,
            "--out" => out = Some(PathBuf::from(flags.value("--out")?)),
            "--test-matrix" => test_matrix = Some(PathBuf::from(flags.value("--test-matrix")?)),
            "--test-labels" => test_labels = Some(PathBuf::from(flags.value("--test-labels")?)),
            "--help" | "-h" => {
                eprintln!("factorbench train-text --matrix M --labels L [--lambda 1e-4]");
                eprintln!("  [--optimizer batch|sgd] [--max-epochs 100] [--tol 1e-6] [--seed 0]");
                eprintln!("  [--workers N] [--out model.txt] [--test-matrix M --test-labels L]");
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let matrix = matrix.ok_or_else(|| usage("--matrix is required"))?;
    let labels = labels.ok_or_else(|| usage("--labels is required"))?;

    let x = text::HashedMatrix::load(&matrix).map_err(data_err)?;
    let y = read_labels(&labels)?;
    let opts = TrainOptions {
        lambda,
        optimizer,
        max_epochs,
        tol,
        seed,
        ..TrainOptions::new(lambda)
    };
    let (model, _trace) =
        with_pool(workers, || logreg::train_ovr(&x, &y, &opts))?.map_err(numeric_err)?;
    let train_pred = logreg::predict(&model, &x).map_err(numeric_err)?;
    let train_err = logreg::error_rate(&train_pred, &y).map_err(numeric_err)?;
    print!(
        "train-text classes={} n_hash={} optimizer={optimizer:?} train_error={train_err:.4}",
        model.n_classes(),
        model.n_features()
    );
    if let (Some(tm), Some(tl)) = (&test_matrix, &test_labels) {
        let tx = text::HashedMatrix::load(tm).map_err(data_err)?;
        let ty = read_labels(tl)?;
        let pred = logreg::predict(&model, &tx).map_err(numeric_err)?;
        let test_err = logreg::error_rate(&pred, &ty).map_err(numeric_err)?;
        print!(" test_error={test_err:.4}");
    }
    println!();
    if let Some(path) = out {
        model.save(&path).map_err(data_err)?;
    }
    Ok(())
}

fn cmd_kmeans(mut flags: Flags) -> CmdResult {
    let mut data: Option<PathBuf> = None;
    let mut k = 0usize;
    let mut partitions = 4usize;
    let mut seed = 0u64;
    let mut tol = 1e-7f64;
    let mut max_iter = 100usize;
    let mut workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Option<PathBuf> = None;
    let mut assignments_out: Option<PathBuf> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--data" => data = Some(PathBuf::from(flags.value("--data")?)),
            "--k" => k = flags.parse("--k")?,
            "--partitions" => partitions = flags.parse("--partitions")?,
            "--seed" => seed = flags.parse("--seed")?,
            "--tol" => tol = flags.parse("--tol")?,
            "--max-iter" => max_iter = flags.parse("--max-iter")?,
            "--workers" => workers = flags.parse("--workers")?,
            "--out" => out = Some(PathBuf::from(flags.value("--out")?)),
            "--assignments-out" => {
                assignments_out = Some(PathBuf::from(flags.value("--assignments-out")?))
            }
            "--help" | "-h" => {
                eprintln!("factorbench kmeans --data POINTS.csv --k K [--partitions 4]");
                eprintln!("  [--seed 0] [--tol 1e-7] [--max-iter 100] [--workers N]");
                eprintln!("  [--out centroids.csv] [--assignments-out a.csv]");
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let data = data.ok_or_else(|| usage("--data is required"))?;
    if k < 1 {
        return Err(usage("--k must be >= 1"));
    }

    let points = read_points_csv(&data).map_err(data_err)?;
    let fit = with_pool(workers, || {
        kmeans::kmeans_fit(&points, k, partitions, seed, max_iter, tol)
    })?
    .map_err(numeric_err)?;
    println!(
        "kmeans k={k} partitions={partitions} iterations={} converged={} inertia={:.6}",
        fit.inertia.len(),
        fit.converged,
        fit.inertia.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(path) = out {
        let mut content = String::new();
        for c in &fit.state.centroids {
            let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(content, "{}", row.join(","));
        }
        write_file(&path, &content)?;
    }
    if let Some(path) = assignments_out {
        let mut content = String::new();
        for a in &fit.assignments {
            let _ = writeln!(content, "{a}");
        }
        write_file(&path, &content)?;
    }
    Ok(())
}

fn cmd_curve(mut flags: Flags) -> CmdResult {
    let mut config_path: Option<PathBuf> = None;
    let mut out_override: Option<PathBuf> = None;
    let mut seed_override: Option<u64> = None;
    let mut workers_override: Option<usize> = None;
    let mut format_override: Option<OutputFormat> = None;

    while let Some(arg) = flags.next() {
        match arg.as_str() {
            "--config" => config_path = Some(PathBuf::from(flags.value("--config")?)),
            "--out" => out_override = Some(PathBuf::from(flags.value("--out")?)),
            "--seed" => seed_override = Some(flags.parse("--seed")?),
            "--workers" => workers_override = Some(flags.parse("--workers")?),
            "--format" => {
                format_override = Some(match flags.value("--format")?.as_str() {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    other => return Err(usage(format!("unknown format `{other}`"))),
                })
            }
            "--help" | "-h" => {
                eprintln!("factorbench curve --config FILE [--out PATH] [--seed N]");
                eprintln!("  [--workers N] [--format csv|json]");
                return Ok(());
            }
            other => return Err(usage(format!("unknown flag `{other}`"))),
        }
    }
    let config_path = config_path.ok_or_else(|| usage("--config is required"))?;
    let content = std::fs::read_to_string(&config_path).map_err(|e| data_err(Error::Io(e)))?;
    let mut config = parse_config(&content).map_err(|e| usage(e.to_string()))?;
    if let Some(out) = out_override {
        config.out = out;
    }
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(workers) = workers_override {
        config.workers = workers.max(1);
    }
    if let Some(format) = format_override {
        config.format = format;
    }

    let data = load_curve_data(&config).map_err(data_err)?;
    let clock = SystemClock::new();
    let rows = run_learning_curve(&config, &data, &clock).map_err(numeric_err)?;
    emit_results(&rows, config.format, &config.out).map_err(data_err)?;
    println!("wrote {} rows to {}", rows.len(), config.out.display());
    Ok(())
}

fn main() {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        print_usage();
        std::process::exit(1);
    }
    let command = args.remove(0);
    let flags = Flags::new(args);
    let result = match command.as_str() {
        "complete-als" => cmd_complete_als(flags),
        "complete-svt" => cmd_complete_svt(flags),
        "nmf" => cmd_nmf(flags),
        "vectorize" => cmd_vectorize(flags),
        "train-text" => cmd_train_text(flags),
        "kmeans" => cmd_kmeans(flags),
        "curve" => cmd_curve(flags),
        "--help" | "-h" | "help" => {
            print_usage();
            return;
        }
        other => {
            eprintln!("unknown command `{other}`");
            print_usage();
            std::process::exit(1);
        }
    };
    if let Err(e) = result {
        eprintln!("{}", e.message());
        std::process::exit(e.exit_code());
    }
}
