//! One-vs-rest L2-regularized logistic regression over hashed sparse
//! features.
//!
//! The K-class problem decomposes into K independent binary problems
//! (class against the rest), each minimizing mean logistic loss plus
//! `(lambda/2)·||w||²` with an unpenalized intercept. The binary problems
//! train in parallel; predictions take the argmax of the raw linear
//! scores, ties going to the smallest class id.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::text::HashedMatrix;

/// K-class one-vs-rest weight matrix plus intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Row k holds the weights of class k over the hashed feature space.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub lambda: f64,
    /// Class id to external label, sorted so ids are deterministic.
    pub label_map: Vec<String>,
}

impl LinearModel {
    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn n_features(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    /// Raw linear scores of one sparse row, one per class.
    pub fn scores(&self, row: &[(u32, f64)]) -> Vec<f64> {
        (0..self.n_classes())
            .map(|k| {
                let w = &self.weights[k];
                let mut z = self.intercepts[k];
                for &(f, v) in row {
                    z += w[f as usize] * v;
                }
                z
            })
            .collect()
    }

    /// Dump: `K n_hash lambda` header, K intercept+weight rows, K label
    /// lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.n_classes(),
            self.n_features(),
            self.lambda
        );
        for k in 0..self.n_classes() {
            let mut row = String::new();
            let _ = write!(row, "{}", self.intercepts[k]);
            for w in &self.weights[k] {
                let _ = write!(row, " {w}");
            }
            let _ = writeln!(out, "{row}");
        }
        for label in &self.label_map {
            let _ = writeln!(out, "{label}");
        }
        File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Empty)??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `K n_hash lambda`".into(),
            });
        }
        let bad = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            msg: e.to_string(),
        };
        let k: usize = fields[0].parse().map_err(|e| bad(1, &e))?;
        let n_hash: usize = fields[1].parse().map_err(|e| bad(1, &e))?;
        let lambda: f64 = fields[2].parse().map_err(|e| bad(1, &e))?;
        let mut weights = Vec::with_capacity(k);
        let mut intercepts = Vec::with_capacity(k);
        for i in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| bad(i + 2, &"missing weight row"))??;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(i + 2, &e))?;
            if vals.len() != n_hash + 1 {
                return Err(bad(i + 2, &format!("expected {} values", n_hash + 1)));
            }
            intercepts.push(vals[0]);
            weights.push(vals[1..].to_vec());
        }
        let mut label_map = Vec::with_capacity(k);
        for i in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| bad(k + i + 2, &"missing label"))??;
            label_map.push(line);
        }
        Ok(LinearModel {
            weights,
            intercepts,
            lambda,
            label_map,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Full-batch gradient descent with a backtracking (Armijo) line
    /// search; the per-epoch regularized loss never increases.
    BatchGradient,
    /// Mini-batch stochastic gradient with an inverse-scaling step size.
    Sgd,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub lambda: f64,
    pub optimizer: Optimizer,
    pub max_epochs: usize,
    /// Stop when the relative loss change between epochs drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Mini-batch size for [`Optimizer::Sgd`].
    pub batch_size: usize,
    /// Initial step size for [`Optimizer::Sgd`]; epoch e uses
    /// `eta0 / sqrt(e)`.
    pub eta0: f64,
}

impl TrainOptions {
    pub fn new(lambda: f64) -> Self {
        TrainOptions {
            lambda,
            optimizer: Optimizer::BatchGradient,
            max_epochs: 100,
            tol: 1e-6,
            seed: 0,
            batch_size: 64,
            eta0: 0.5,
        }
    }
}

/// One row of the per-class training trace.
#[derive(Debug, Clone)]
pub struct LogregTraceRow {
    pub class_id: usize,
    pub epoch: usize,
    /// Regularized objective after the epoch.
    pub loss: f64,
}

/// Regularized binary objective: mean logistic loss over the rows plus
/// `(lambda/2)·||w||²` (intercept unpenalized).
pub fn binary_objective(
    rows: &[Vec<(u32, f64)>],
    targets: &[bool],
    w: &[f64],
    b: f64,
    lambda: f64,
) -> f64 {
    let n = rows.len() as f64;
    let loss: f64 = rows
        .iter()
        .zip(targets)
        .map(|(row, &y)| {
            let mut z = b;
            for &(f, v) in row {
                z += w[f as usize] * v;
            }
            // ln(1 + e^z) - y z, computed stably
            if z > 0.0 {
                (if y { 0.0 } else { z }) + (-z).exp().ln_1p()
            } else {
                (if y { -z } else { 0.0 }) + z.exp().ln_1p()
            }
        })
        .sum();
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * lambda / 2.0;
    loss / n + reg
}

/// Gradient of [`binary_objective`]; returns (weight gradient, intercept
/// gradient).
pub fn binary_gradient(
    rows: &[Vec<(u32, f64)>],
    targets: &[bool],
    w: &[f64],
    b: f64,
    lambda: f64,
) -> (Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &y) in rows.iter().zip(targets) {
        let mut z = b;
        for &(f, v) in row {
            z += w[f as usize] * v;
        }
        let sigma = 1.0 / (1.0 + (-z).exp());
        let coef = sigma - if y { 1.0 } else { 0.0 };
        for &(f, v) in row {
            gw[f as usize] += coef * v;
        }
        gb += coef;
    }
    for (g, wv) in gw.iter_mut().zip(w) {
        *g = *g / n + lambda * wv;
    }
    (gw, gb / n)
}

/// Train one binary problem. Exposed so the one-vs-rest decomposition can
/// be checked class by class.
pub fn train_binary(
    rows: &[Vec<(u32, f64)>],
    targets: &[bool],
    n_features: usize,
    opts: &TrainOptions,
) -> (Vec<f64>, f64, Vec<(usize, f64)>) {
    let mut w = vec![0.0; n_features];
    let mut b = 0.0;
    let mut trace = Vec::new();
    let mut prev = binary_objective(rows, targets, &w, b, opts.lambda);

    match opts.optimizer {
        Optimizer::BatchGradient => {
            for epoch in 1..=opts.max_epochs {
                let (gw, gb) = binary_gradient(rows, targets, &w, b, opts.lambda);
                let gnorm2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
                if gnorm2 == 0.0 {
                    break;
                }
                // backtracking line search from a unit step
                let mut step = 1.0;
                let mut accepted = prev;
                for _ in 0..60 {
                    let wt: Vec<f64> = w.iter().zip(&gw).map(|(wv, g)| wv - step * g).collect();
                    let bt = b - step * gb;
                    let cand = binary_objective(rows, targets, &wt, bt, opts.lambda);
                    if cand <= prev - 1e-4 * step * gnorm2 {
                        w = wt;
                        b = bt;
                        accepted = cand;
                        break;
                    }
                    step *= 0.5;
                }
                trace.push((epoch, accepted));
                let rel = (prev - accepted).abs() / prev.max(1e-15);
                prev = accepted;
                if rel < opts.tol {
                    break;
                }
            }
        }
        Optimizer::Sgd => {
            let n = rows.len();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut order: Vec<usize> = (0..n).collect();
            for epoch in 1..=opts.max_epochs {
                let eta = opts.eta0 / (epoch as f64).sqrt();
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    order.swap(i, j);
                }
                for batch in order.chunks(opts.batch_size.max(1)) {
                    let m = batch.len() as f64;
                    let mut gb = 0.0;
                    let mut touched: Vec<(u32, f64)> = Vec::new();
                    for &i in batch {
                        let mut z = b;
                        for &(f, v) in &rows[i] {
                            z += w[f as usize] * v;
                        }
                        let sigma = 1.0 / (1.0 + (-z).exp());
                        let coef = sigma - if targets[i] { 1.0 } else { 0.0 };
                        for &(f, v) in &rows[i] {
                            touched.push((f, coef * v));
                        }
                        gb += coef;
                    }
                    // L2 shrink then sparse update
                    let shrink = 1.0 - eta * opts.lambda;
                    if opts.lambda > 0.0 {
                        for wv in w.iter_mut() {
                            *wv *= shrink;
                        }
                    }
                    for (f, g) in touched {
                        w[f as usize] -= eta * g / m;
                    }
                    b -= eta * gb / m;
                }
                let obj = binary_objective(rows, targets, &w, b, opts.lambda);
                trace.push((epoch, obj));
                let rel = (prev - obj).abs() / prev.max(1e-15);
                prev = obj;
                if rel < opts.tol {
                    break;
                }
            }
        }
    }
    (w, b, trace)
}

/// Train K one-vs-rest binary classifiers over a hashed matrix.
///
/// Labels are mapped to class ids in sorted order. Requires at least two
/// distinct labels and finite features. The K problems are independent
/// and train in parallel.
pub fn train_ovr(
    x: &HashedMatrix,
    labels: &[String],
    opts: &TrainOptions,
) -> Result<(LinearModel, Vec<LogregTraceRow>)> {
    if labels.len() != x.n_docs() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} documents",
            labels.len(),
            x.n_docs()
        )));
    }
    if x.n_docs() == 0 {
        return Err(Error::Empty);
    }
    for (doc, row) in x.rows.iter().enumerate() {
        for &(_, v) in row {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("feature in document {doc}")));
            }
        }
    }
    let mut label_map: Vec<String> = labels.to_vec();
    label_map.sort();
    label_map.dedup();
    if label_map.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two distinct labels".into(),
        ));
    }
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| label_map.binary_search(l).expect("label in map"))
        .collect();

    let per_class: Vec<(Vec<f64>, f64, Vec<(usize, f64)>)> = (0..label_map.len())
        .into_par_iter()
        .map(|k| {
            let targets: Vec<bool> = class_of.iter().map(|&c| c == k).collect();
            train_binary(&x.rows, &targets, x.n_hash, opts)
        })
        .collect();

    let mut weights = Vec::with_capacity(label_map.len());
    let mut intercepts = Vec::with_capacity(label_map.len());
    let mut trace = Vec::new();
    for (k, (w, b, rows)) in per_class.into_iter().enumerate() {
        weights.push(w);
        intercepts.push(b);
        for (epoch, loss) in rows {
            trace.push(LogregTraceRow {
                class_id: k,
                epoch,
                loss,
            });
        }
    }
    Ok((
        LinearModel {
            weights,
            intercepts,
            lambda: opts.lambda,
            label_map,
        },
        trace,
    ))
}

/// Predicted class ids: argmax of the raw scores, ties to the smallest id.
pub fn predict_ids(model: &LinearModel, x: &HashedMatrix) -> Result<Vec<usize>> {
    if x.n_hash != model.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has n_hash {}, model has {}",
            x.n_hash,
            model.n_features()
        )));
    }
    Ok(x.rows
        .par_iter()
        .map(|row| {
            let scores = model.scores(row);
            let mut best = 0;
            for (k, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Predicted external labels.
pub fn predict(model: &LinearModel, x: &HashedMatrix) -> Result<Vec<String>> {
    Ok(predict_ids(model, x)?
        .into_iter()
        .map(|k| model.label_map[k].clone())
        .collect())
}

/// Fraction of mismatches between two label sequences.
pub fn error_rate<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty);
    }
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let wrong = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / pred.len() as f64)
}
