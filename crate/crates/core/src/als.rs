//! Regularized alternating least squares over observed entries only.
//!
//! Fits the biconvex criterion
//! `||P_Ω(X − ABᵀ)||² + λ(||A||² + ||B||²)` by exact ridge solves: each
//! half-sweep solves, for every row u, the normal equations restricted to
//! the columns observed in that row (and symmetrically for columns). An
//! optional nonnegativity clamp zeroes negative components after each
//! solve, which turns the fit into an NMF usable for completion.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::{holdout_split, rmse_against, SparseRatings};

/// A pair of dense factor matrices: `A` is n×r, `B` is p×r, and the model
/// predicts entry (i, j) as `dot(A_i, B_j)`, clipped to `rating_bounds`
/// when present.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    a: Array2<f64>,
    b: Array2<f64>,
    lambda: f64,
    nonneg: bool,
    rating_bounds: Option<(f64, f64)>,
}

impl FactorModel {
    pub fn from_factors(
        a: Array2<f64>,
        b: Array2<f64>,
        lambda: f64,
        nonneg: bool,
        rating_bounds: Option<(f64, f64)>,
    ) -> Self {
        assert_eq!(a.ncols(), b.ncols(), "factor ranks must agree");
        FactorModel {
            a,
            b,
            lambda,
            nonneg,
            rating_bounds,
        }
    }

    /// The all-zero model of a given shape.
    pub fn zero(n_rows: usize, n_cols: usize, rank: usize) -> Self {
        FactorModel {
            a: Array2::zeros((n_rows, rank)),
            b: Array2::zeros((n_cols, rank)),
            lambda: 0.0,
            nonneg: false,
            rating_bounds: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.b.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn rating_bounds(&self) -> Option<(f64, f64)> {
        self.rating_bounds
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    /// Predicted value for one cell.
    pub fn predict(&self, row: usize, col: usize) -> f64 {
        let mut s = 0.0;
        for t in 0..self.rank() {
            s += self.a[[row, t]] * self.b[[col, t]];
        }
        match self.rating_bounds {
            Some((lo, hi)) => s.clamp(lo, hi),
            None => s,
        }
    }

    /// Like [`FactorModel::predict`] but with a range check.
    pub fn predict_checked(&self, row: usize, col: usize) -> Result<f64> {
        if row >= self.n_rows() || col >= self.n_cols() {
            return Err(Error::InvalidArgument(format!(
                "index ({row}, {col}) out of bounds for {}x{}",
                self.n_rows(),
                self.n_cols()
            )));
        }
        Ok(self.predict(row, col))
    }

    /// Text dump with a `n p r lambda nonneg` header followed by the rows
    /// of A then the rows of B. Rating bounds are a predict-time policy and
    /// are not persisted.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.n_rows(),
            self.n_cols(),
            self.rank(),
            self.lambda,
            self.nonneg
        );
        for i in 0..self.n_rows() {
            let row: Vec<String> = (0..self.rank())
                .map(|t| self.a[[i, t]].to_string())
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        for j in 0..self.n_cols() {
            let row: Vec<String> = (0..self.rank())
                .map(|t| self.b[[j, t]].to_string())
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Empty)??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `n p r lambda nonneg`".into(),
            });
        }
        let bad = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            msg: e.to_string(),
        };
        let n: usize = fields[0].parse().map_err(|e| bad(1, &e))?;
        let p: usize = fields[1].parse().map_err(|e| bad(1, &e))?;
        let r: usize = fields[2].parse().map_err(|e| bad(1, &e))?;
        let lambda: f64 = fields[3].parse().map_err(|e| bad(1, &e))?;
        let nonneg: bool = fields[4].parse().map_err(|e| bad(1, &e))?;

        let mut a = Array2::zeros((n, r));
        let mut b = Array2::zeros((p, r));
        for block in 0..2 {
            let (rows, m) = if block == 0 { (n, &mut a) } else { (p, &mut b) };
            for i in 0..rows {
                let line_no = 2 + block * n + i;
                let line = lines
                    .next()
                    .ok_or_else(|| bad(line_no, &"missing factor row"))??;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(line_no, &e))?;
                if vals.len() != r {
                    return Err(bad(line_no, &format!("expected {r} values")));
                }
                for (t, v) in vals.into_iter().enumerate() {
                    m[[i, t]] = v;
                }
            }
        }
        Ok(FactorModel {
            a,
            b,
            lambda,
            nonneg,
            rating_bounds: None,
        })
    }
}

/// How the ridge weight enters each per-row solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegWeighting {
    /// Plain `lambda * I`, the MMMF criterion as written.
    Uniform,
    /// `lambda * n_u * I` where n_u is the number of observed entries of
    /// the row being solved (the ALS-WR scaling used by MLlib). Makes a
    /// single lambda usable across dataset sizes and keeps rarely-observed
    /// rows from overfitting.
    ByObservationCount,
}

/// Fit parameters for [`als_fit`].
#[derive(Debug, Clone)]
pub struct AlsOptions {
    pub rank: usize,
    pub lambda: f64,
    pub nonneg: bool,
    pub max_sweeps: usize,
    /// Stop when the relative objective change over a full sweep drops
    /// below this.
    pub tol: f64,
    pub seed: u64,
    pub rating_bounds: Option<(f64, f64)>,
    pub weighting: RegWeighting,
}

impl AlsOptions {
    pub fn new(rank: usize, lambda: f64) -> Self {
        AlsOptions {
            rank,
            lambda,
            nonneg: false,
            max_sweeps: 50,
            tol: 1e-4,
            seed: 0,
            rating_bounds: None,
            weighting: RegWeighting::Uniform,
        }
    }
}

/// One row of the per-sweep iteration trace.
#[derive(Debug, Clone)]
pub struct AlsTraceRow {
    pub sweep: usize,
    pub objective: f64,
    pub train_rmse: f64,
    pub seconds: f64,
}

/// Result of an ALS fit.
#[derive(Debug, Clone)]
pub struct AlsFit {
    pub model: FactorModel,
    pub trace: Vec<AlsTraceRow>,
    pub converged: bool,
    /// True if any row solve fell back to the least-norm solution because
    /// its normal matrix was singular (possible only with lambda = 0).
    pub least_norm_used: bool,
    /// Sweeps after which the clamped objective increased by more than
    /// 1e-9. Always empty when `nonneg` is false.
    pub nonmonotone_sweeps: Vec<usize>,
}

/// The MMMF objective: squared error over the observed entries plus
/// `lambda` times the squared Frobenius norms of both factors.
pub fn mmmf_objective(train: &SparseRatings, a: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> f64 {
    weighted_objective(train, a, b, lambda, RegWeighting::Uniform)
}

/// The objective minimized by the alternating sweeps: with
/// [`RegWeighting::ByObservationCount`] the penalty of each factor row is
/// scaled by that row's observation count.
pub fn weighted_objective(
    train: &SparseRatings,
    a: &Array2<f64>,
    b: &Array2<f64>,
    lambda: f64,
    weighting: RegWeighting,
) -> f64 {
    let rank = a.ncols();
    let mut loss = 0.0;
    for &(i, j, x) in train.entries() {
        let mut s = 0.0;
        for t in 0..rank {
            s += a[[i as usize, t]] * b[[j as usize, t]];
        }
        let d = x - s;
        loss += d * d;
    }
    let mut pen = 0.0;
    for u in 0..a.nrows() {
        let w = match weighting {
            RegWeighting::Uniform => 1.0,
            RegWeighting::ByObservationCount => train.row(u).len() as f64,
        };
        for t in 0..rank {
            pen += w * a[[u, t]] * a[[u, t]];
        }
    }
    for j in 0..b.nrows() {
        let w = match weighting {
            RegWeighting::Uniform => 1.0,
            RegWeighting::ByObservationCount => train.col(j).len() as f64,
        };
        for t in 0..rank {
            pen += w * b[[j, t]] * b[[j, t]];
        }
    }
    loss + lambda * pen
}

/// Solve one half-sweep: for every row of `rows` (its observed
/// (other-index, value) pairs), the ridge system against the frozen
/// `other` factor. Row solves are data-parallel and read only the frozen
/// factor, so the result does not depend on thread count.
fn half_sweep(
    rows: &[Vec<(u32, f64)>],
    other: &Array2<f64>,
    lambda: f64,
    nonneg: bool,
    weighting: RegWeighting,
) -> (Array2<f64>, bool) {
    let rank = other.ncols();
    let solved: Vec<(Vec<f64>, bool)> = rows
        .par_iter()
        .map(|obs| {
            let mut g = Array2::<f64>::zeros((rank, rank));
            let mut rhs = vec![0.0; rank];
            for &(j, x) in obs {
                let bj = other.row(j as usize);
                let bj = bj.as_slice().expect("row-major factor");
                for s in 0..rank {
                    let bs = bj[s];
                    rhs[s] += x * bs;
                    for t in s..rank {
                        g[[s, t]] += bs * bj[t];
                    }
                }
            }
            let ridge = match weighting {
                RegWeighting::Uniform => lambda,
                RegWeighting::ByObservationCount => lambda * obs.len() as f64,
            };
            for s in 0..rank {
                for t in 0..s {
                    g[[s, t]] = g[[t, s]];
                }
                g[[s, s]] += ridge;
            }
            let outcome = linalg::solve_spd(&g, &mut rhs);
            if nonneg {
                for v in rhs.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            (rhs, outcome.least_norm)
        })
        .collect();

    let mut factor = Array2::<f64>::zeros((rows.len(), rank));
    let mut least_norm = false;
    for (u, (row, ln)) in solved.into_iter().enumerate() {
        least_norm |= ln;
        for t in 0..rank {
            factor[[u, t]] = row[t];
        }
    }
    (factor, least_norm)
}

pub(crate) fn row_observations(train: &SparseRatings) -> Vec<Vec<(u32, f64)>> {
    (0..train.n_rows()).map(|r| train.row(r).to_vec()).collect()
}

pub(crate) fn col_observations(train: &SparseRatings) -> Vec<Vec<(u32, f64)>> {
    (0..train.n_cols()).map(|c| train.col(c).to_vec()).collect()
}

/// One full ALS sweep (rows then columns) on explicit factor matrices.
/// Used both by [`als_fit`] and by the soft-impute hybrid mode. The ridge
/// weight applied to each half-solve is `lambda` as given.
pub(crate) fn als_sweep(
    row_obs: &[Vec<(u32, f64)>],
    col_obs: &[Vec<(u32, f64)>],
    a: &mut Array2<f64>,
    b: &mut Array2<f64>,
    lambda: f64,
    nonneg: bool,
    weighting: RegWeighting,
) -> bool {
    let (new_a, ln_a) = half_sweep(row_obs, b, lambda, nonneg, weighting);
    *a = new_a;
    let (new_b, ln_b) = half_sweep(col_obs, a, lambda, nonneg, weighting);
    *b = new_b;
    ln_a || ln_b
}

/// Alternating-least-squares factorization of an observed-entry set.
///
/// Preconditions: every row and every column has at least one observed
/// entry, and `rank <= min(n, p)`. B is initialized i.i.d. uniform on
/// (0, 1/√r) from the seed and A is solved first, so the fit is
/// deterministic for a fixed seed.
pub fn als_fit(train: &SparseRatings, opts: &AlsOptions) -> Result<AlsFit> {
    if train.is_empty() {
        return Err(Error::Empty);
    }
    if opts.rank < 1 || opts.rank > train.n_rows().min(train.n_cols()) {
        return Err(Error::InvalidArgument(format!(
            "rank {} out of range for {}x{}",
            opts.rank,
            train.n_rows(),
            train.n_cols()
        )));
    }
    if opts.lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    if let Some(r) = train.empty_rows().first() {
        return Err(Error::EmptyRow(*r as usize));
    }
    if let Some(c) = train.empty_cols().first() {
        return Err(Error::EmptyCol(*c as usize));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = 1.0 / (opts.rank as f64).sqrt();
    let mut b = Array2::from_shape_fn((train.n_cols(), opts.rank), |_| rng.random::<f64>() * scale);
    let mut a = Array2::<f64>::zeros((train.n_rows(), opts.rank));

    let row_obs = row_observations(train);
    let col_obs = col_observations(train);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut least_norm_used = false;
    let mut nonmonotone_sweeps = Vec::new();
    let mut prev_obj = f64::INFINITY;

    for sweep in 1..=opts.max_sweeps {
        let started = Instant::now();
        let ln = als_sweep(
            &row_obs,
            &col_obs,
            &mut a,
            &mut b,
            opts.lambda,
            opts.nonneg,
            opts.weighting,
        );
        least_norm_used |= ln;

        let objective = weighted_objective(train, &a, &b, opts.lambda, opts.weighting);
        let train_rmse = (objective_loss_part(train, &a, &b) / train.len() as f64).sqrt();
        trace.push(AlsTraceRow {
            sweep,
            objective,
            train_rmse,
            seconds: started.elapsed().as_secs_f64(),
        });

        if opts.nonneg && objective > prev_obj + 1e-9 {
            nonmonotone_sweeps.push(sweep);
        }
        if prev_obj.is_finite() {
            let rel = (prev_obj - objective).abs() / prev_obj.max(1e-12);
            if rel < opts.tol {
                converged = true;
                break;
            }
        }
        prev_obj = objective;
    }

    let model = FactorModel {
        a,
        b,
        lambda: opts.lambda,
        nonneg: opts.nonneg,
        rating_bounds: opts.rating_bounds,
    };
    Ok(AlsFit {
        model,
        trace,
        converged,
        least_norm_used,
        nonmonotone_sweeps,
    })
}

fn objective_loss_part(train: &SparseRatings, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let rank = a.ncols();
    let mut loss = 0.0;
    for &(i, j, x) in train.entries() {
        let mut s = 0.0;
        for t in 0..rank {
            s += a[[i as usize, t]] * b[[j as usize, t]];
        }
        let d = x - s;
        loss += d * d;
    }
    loss
}

/// How cross-validation carves its validation data out of the training set.
#[derive(Debug, Clone, Copy)]
pub enum Validation {
    /// One seeded holdout of the given fraction.
    Holdout { fraction: f64 },
    /// Seeded k-fold partition of the entries; the reported RMSE pools the
    /// squared residuals of all folds.
    KFold { folds: usize },
}

/// One evaluated grid cell.
#[derive(Debug, Clone)]
pub struct CvCell {
    pub rank: usize,
    pub lambda: f64,
    /// None when the cell failed its fit preconditions.
    pub rmse: Option<f64>,
    pub error: Option<String>,
}

/// Grid search result: all cells plus the argmin (smallest rank, then
/// smallest lambda on ties).
#[derive(Debug, Clone)]
pub struct CvTable {
    pub cells: Vec<CvCell>,
    pub best: Option<(usize, f64)>,
}

/// Evaluate a (rank, lambda) grid by validation RMSE. Each fold is
/// compacted onto its own training support (validation entries for unseen
/// rows or columns are dropped) so sparse real data does not trip the fit
/// preconditions. A cell that still fails is recorded as failed rather
/// than aborting the sweep.
pub fn cross_validate(
    train: &SparseRatings,
    grid: &[(usize, f64)],
    validation: Validation,
    base: &AlsOptions,
    seed: u64,
) -> Result<CvTable> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }

    // (train, validation) pairs shared by every cell, each compacted to
    // its own training support
    let mut pairs: Vec<(SparseRatings, SparseRatings)> = Vec::new();
    match validation {
        Validation::Holdout { fraction } => {
            let split = holdout_split(train, fraction, seed)?;
            let restricted = split.restrict_to_train_support()?;
            pairs.push((restricted.train, restricted.test));
        }
        Validation::KFold { folds } => {
            if folds < 2 || folds > train.len() {
                return Err(Error::InvalidArgument(format!("bad fold count {folds}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = train.len();
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut fold_of = vec![0usize; n];
            for (pos, &idx) in order.iter().enumerate() {
                fold_of[idx] = pos % folds;
            }
            for f in 0..folds {
                let mut tr = Vec::new();
                let mut va = Vec::new();
                for (idx, &e) in train.entries().iter().enumerate() {
                    if fold_of[idx] == f {
                        va.push(e);
                    } else {
                        tr.push(e);
                    }
                }
                let restricted = crate::sparse::restrict_to_support(
                    &SparseRatings::from_entries(train.n_rows(), train.n_cols(), tr)?,
                    &SparseRatings::from_entries(train.n_rows(), train.n_cols(), va)?,
                )?;
                pairs.push((restricted.train, restricted.test));
            }
        }
    }

    let mut cells = Vec::with_capacity(grid.len());
    for &(rank, lambda) in grid {
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        let mut failure: Option<String> = None;
        for (tr, va) in &pairs {
            let opts = AlsOptions {
                rank,
                lambda,
                ..base.clone()
            };
            match als_fit(tr, &opts) {
                Ok(fit) => {
                    for &(i, j, x) in va.entries() {
                        let d = x - fit.model.predict(i as usize, j as usize);
                        sq_sum += d * d;
                    }
                    count += va.len();
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        match failure {
            Some(msg) => cells.push(CvCell {
                rank,
                lambda,
                rmse: None,
                error: Some(msg),
            }),
            None => cells.push(CvCell {
                rank,
                lambda,
                rmse: Some((sq_sum / count as f64).sqrt()),
                error: None,
            }),
        }
    }

    let best = cells
        .iter()
        .filter_map(|c| c.rmse.map(|r| (r, c.rank, c.lambda)))
        .min_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .unwrap()
                .then(x.1.cmp(&y.1))
                .then(x.2.partial_cmp(&y.2).unwrap())
        })
        .map(|(_, r, l)| (r, l));

    Ok(CvTable { cells, best })
}

/// Convenience: fit on the train side of a fresh holdout and report the
/// test RMSE.
pub fn fit_and_score(
    ratings: &SparseRatings,
    opts: &AlsOptions,
    fraction: f64,
    split_seed: u64,
) -> Result<(AlsFit, f64)> {
    let split = holdout_split(ratings, fraction, split_seed)?;
    let fit = als_fit(&split.train, opts)?;
    let score = rmse_against(&split.test, &fit.model)?;
    Ok((fit, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rank1_full(n: usize, p: usize) -> SparseRatings {
        let u: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let v: Vec<f64> = (0..p).map(|j| 2.0 - 0.1 * j as f64).collect();
        let mut entries = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                entries.push((i as u32, j as u32, u[i] * v[j]));
            }
        }
        SparseRatings::from_entries(n, p, entries).unwrap()
    }

    #[test]
    fn recovers_fully_observed_rank1_matrix() {
        let train = rank1_full(6, 5);
        let opts = AlsOptions {
            rank: 1,
            lambda: 0.0,
            max_sweeps: 60,
            tol: 1e-14,
            ..AlsOptions::new(1, 0.0)
        };
        let fit = als_fit(&train, &opts).unwrap();
        for &(i, j, x) in train.entries() {
            assert!((fit.model.predict(i as usize, j as usize) - x).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_lambda_drives_factors_to_zero() {
        let train = rank1_full(4, 4);
        let opts = AlsOptions {
            lambda: 1e9,
            max_sweeps: 10,
            ..AlsOptions::new(2, 1e9)
        };
        let fit = als_fit(&train, &opts).unwrap();
        for v in fit.model.a().iter().chain(fit.model.b().iter()) {
            assert!(v.abs() < 1e-6);
        }
        assert!(fit.model.predict(0, 0).abs() < 1e-6);
    }

    #[test]
    fn objective_is_monotone_without_clamp() {
        let train = rank1_full(8, 7);
        let opts = AlsOptions {
            rank: 3,
            lambda: 0.5,
            max_sweeps: 25,
            tol: 0.0,
            seed: 5,
            ..AlsOptions::new(3, 0.5)
        };
        let fit = als_fit(&train, &opts).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9);
        }
    }

    #[test]
    fn predict_applies_bounds() {
        let model = FactorModel::from_factors(
            array![[2.0, 1.0]],
            array![[3.0, 1.3]],
            0.0,
            false,
            Some((1.0, 5.0)),
        );
        // raw score 7.3 clips to 5
        assert_eq!(model.predict(0, 0), 5.0);
        let zero =
            FactorModel::from_factors(array![[0.0]], array![[0.0]], 0.0, false, Some((1.0, 5.0)));
        assert_eq!(zero.predict(0, 0), 1.0);
        assert!(model.predict_checked(0, 1).is_err());
    }

    #[test]
    fn predict_is_a_dot_product() {
        let model =
            FactorModel::from_factors(array![[1.0, 2.0]], array![[3.0, 4.0]], 0.0, false, None);
        assert_eq!(model.predict(0, 0), 11.0);
    }

    #[test]
    fn rejects_empty_rows_and_columns() {
        // column 1 never observed
        let train = SparseRatings::from_entries(2, 2, vec![(0, 0, 1.0), (1, 0, 2.0)]).unwrap();
        match als_fit(&train, &AlsOptions::new(1, 0.1)) {
            Err(Error::EmptyCol(1)) => {}
            other => panic!("expected EmptyCol, got {other:?}"),
        }
    }

    #[test]
    fn nonneg_clamp_keeps_factors_nonnegative() {
        // mixed-sign data forces clamping to actually fire
        let entries = vec![
            (0, 0, 1.0),
            (0, 1, -2.0),
            (1, 0, 3.0),
            (1, 1, 0.5),
            (2, 0, -1.0),
            (2, 1, 2.0),
        ];
        let train = SparseRatings::from_entries(3, 2, entries).unwrap();
        let opts = AlsOptions {
            nonneg: true,
            max_sweeps: 15,
            ..AlsOptions::new(2, 0.1)
        };
        let fit = als_fit(&train, &opts).unwrap();
        for v in fit.model.a().iter().chain(fit.model.b().iter()) {
            assert!(*v >= 0.0);
        }
    }

    #[test]
    fn singular_gram_with_zero_lambda_is_flagged() {
        // rank-2 requested on effectively rank-1 data with lambda 0:
        // after the first half sweep the Gram matrices are singular.
        let train = rank1_full(5, 4);
        let opts = AlsOptions {
            rank: 2,
            lambda: 0.0,
            max_sweeps: 8,
            tol: 0.0,
            ..AlsOptions::new(2, 0.0)
        };
        let fit = als_fit(&train, &opts).unwrap();
        assert!(fit.least_norm_used);
        // least-norm solves still reproduce the matrix
        for &(i, j, x) in train.entries() {
            assert!((fit.model.predict(i as usize, j as usize) - x).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_validate_single_cell_matches_direct_fit() {
        let train = rank1_full(10, 8);
        let base = AlsOptions {
            max_sweeps: 20,
            tol: 1e-10,
            seed: 3,
            ..AlsOptions::new(1, 0.01)
        };
        let table = cross_validate(
            &train,
            &[(1, 0.01)],
            Validation::Holdout { fraction: 0.25 },
            &base,
            9,
        )
        .unwrap();
        assert_eq!(table.cells.len(), 1);
        let direct = {
            let split = holdout_split(&train, 0.25, 9).unwrap();
            let fit = als_fit(&split.train, &base).unwrap();
            rmse_against(&split.test, &fit.model).unwrap()
        };
        assert_eq!(table.cells[0].rmse.unwrap(), direct);
        assert_eq!(table.best, Some((1, 0.01)));
    }

    #[test]
    fn cross_validate_duplicate_cells_agree() {
        let train = rank1_full(10, 8);
        let base = AlsOptions {
            max_sweeps: 10,
            seed: 1,
            ..AlsOptions::new(2, 0.1)
        };
        let table = cross_validate(
            &train,
            &[(2, 0.1), (2, 0.1)],
            Validation::Holdout { fraction: 0.2 },
            &base,
            4,
        )
        .unwrap();
        assert_eq!(table.cells[0].rmse, table.cells[1].rmse);
    }

    #[test]
    fn cross_validate_records_failed_cells() {
        let train = rank1_full(4, 3);
        let base = AlsOptions::new(1, 0.1);
        // rank 10 exceeds min(n, p): precondition failure, not fatal
        let table = cross_validate(
            &train,
            &[(10, 0.1), (1, 0.1)],
            Validation::Holdout { fraction: 0.25 },
            &base,
            1,
        )
        .unwrap();
        assert!(table.cells[0].rmse.is_none());
        assert!(table.cells[0].error.is_some());
        assert!(table.cells[1].rmse.is_some());
        assert_eq!(table.best, Some((1, 0.1)));
    }

    #[test]
    fn model_save_load_round_trip() {
        let model = FactorModel::from_factors(
            array![[1.5, -0.25], [0.0, 3.0]],
            array![[2.0, 1.0], [0.5, -1.0], [0.0, 0.125]],
            0.01,
            true,
            None,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        model.save(&path).unwrap();
        let back = FactorModel::load(&path).unwrap();
        assert_eq!(back, model);
    }
}
