//! Sparse observed-entry rating matrices: ingestion, holdout splitting,
//! residual projection and error metrics.
//!
//! A [`SparseRatings`] stores the observed set Ω as triplets plus row and
//! column adjacency indexes, and is immutable after construction so it can
//! be shared freely across parallel workers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::als::FactorModel;
use crate::error::{Error, Result};

/// Field separator of the MovieLens release formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    /// 100k `u.data` style.
    Tab,
    /// 20M `ratings.csv` style (single header line).
    Comma,
    /// 1M/10M `.dat` style (`::`).
    DoubleColon,
}

impl Delimiter {
    pub fn as_str(&self) -> &'static str {
        match self {
            Delimiter::Tab => "\t",
            Delimiter::Comma => ",",
            Delimiter::DoubleColon => "::",
        }
    }

    /// Guess the delimiter from one data line. Callers may always override.
    pub fn detect(line: &str) -> Option<Delimiter> {
        if line.contains("::") {
            Some(Delimiter::DoubleColon)
        } else if line.contains('\t') {
            Some(Delimiter::Tab)
        } else if line.contains(',') {
            Some(Delimiter::Comma)
        } else {
            None
        }
    }
}

/// The observed-entry set Ω with values, plus per-row and per-column views.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(u32, u32, f64)>,
    row_index: Vec<Vec<(u32, f64)>>,
    col_index: Vec<Vec<(u32, f64)>>,
}

impl SparseRatings {
    /// Build from triplets, validating every invariant: indices in range,
    /// finite values, no duplicate (row, col) pair.
    pub fn from_entries(
        n_rows: usize,
        n_cols: usize,
        entries: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        let mut seen: HashMap<(u32, u32), ()> = HashMap::with_capacity(entries.len());
        for &(r, c, v) in &entries {
            if (r as usize) >= n_rows || (c as usize) >= n_cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) out of bounds for {n_rows}x{n_cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("rating at ({r}, {c})")));
            }
            if seen.insert((r, c), ()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry at ({r}, {c})"
                )));
            }
        }
        let mut row_index = vec![Vec::new(); n_rows];
        let mut col_index = vec![Vec::new(); n_cols];
        for &(r, c, v) in &entries {
            row_index[r as usize].push((c, v));
            col_index[c as usize].push((r, v));
        }
        Ok(SparseRatings {
            n_rows,
            n_cols,
            entries,
            row_index,
            col_index,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    /// Observed (col, value) pairs of one row.
    pub fn row(&self, r: usize) -> &[(u32, f64)] {
        &self.row_index[r]
    }

    /// Observed (row, value) pairs of one column.
    pub fn col(&self, c: usize) -> &[(u32, f64)] {
        &self.col_index[c]
    }

    /// Rows with no observed entry.
    pub fn empty_rows(&self) -> Vec<u32> {
        (0..self.n_rows)
            .filter(|&r| self.row_index[r].is_empty())
            .map(|r| r as u32)
            .collect()
    }

    /// Columns with no observed entry.
    pub fn empty_cols(&self) -> Vec<u32> {
        (0..self.n_cols)
            .filter(|&c| self.col_index[c].is_empty())
            .map(|c| c as u32)
            .collect()
    }

    /// Mean of all observed values.
    pub fn mean(&self) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::Empty);
        }
        Ok(self.entries.iter().map(|e| e.2).sum::<f64>() / self.entries.len() as f64)
    }

    /// Write as a triplet text file with a `n_rows n_cols n_entries` header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.n_rows,
            self.n_cols,
            self.entries.len()
        );
        for &(r, c, v) in &self.entries {
            let _ = writeln!(out, "{r}\t{c}\t{v}");
        }
        File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Inverse of [`SparseRatings::save`]; the reloaded entry set is
    /// identical to the saved one.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Empty)??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: 1,
                msg: format!("bad header: {e}"),
            })?;
        if dims.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `n_rows n_cols n_entries`".into(),
            });
        }
        let mut entries = Vec::with_capacity(dims[2]);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: "expected `row\\tcol\\tvalue`".into(),
                });
            }
            let bad = |what: &str, e: &dyn std::fmt::Display| Error::Parse {
                line: i + 2,
                msg: format!("{what}: {e}"),
            };
            let r: u32 = fields[0].parse().map_err(|e| bad("row", &e))?;
            let c: u32 = fields[1].parse().map_err(|e| bad("col", &e))?;
            let v: f64 = fields[2].parse().map_err(|e| bad("value", &e))?;
            entries.push((r, c, v));
        }
        SparseRatings::from_entries(dims[0], dims[1], entries)
    }
}

/// A loaded MovieLens file: ratings remapped to dense 0-based indices plus
/// the id maps needed to report in the original numbering.
#[derive(Debug)]
pub struct LoadedRatings {
    pub ratings: SparseRatings,
    /// Original user id of each dense row index, sorted ascending.
    pub user_ids: Vec<u64>,
    /// Original item id of each dense column index, sorted ascending.
    pub item_ids: Vec<u64>,
    /// Number of duplicate (user, item) pairs that were replaced keep-last.
    pub duplicates_replaced: usize,
}

/// Load a MovieLens rating file. Ids are remapped to dense 0-based indices;
/// timestamps are discarded; duplicate (user, item) pairs keep the last
/// value seen and are counted in the result.
pub fn load_movielens(path: &Path, delimiter: Delimiter) -> Result<LoadedRatings> {
    let reader = BufReader::new(File::open(path)?);
    let sep = delimiter.as_str();

    let mut raw: Vec<(u64, u64, f64)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() < 3 {
            // A leading header line (e.g. `userId,movieId,rating,timestamp`)
            // is tolerated only as the first line.
            if i == 0 && fields[0].parse::<u64>().is_err() {
                continue;
            }
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected at least 3 fields, got {}", fields.len()),
            });
        }
        if i == 0 && fields[0].parse::<u64>().is_err() {
            continue; // header
        }
        let user: u64 = fields[0].trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("user id: {e}"),
        })?;
        let item: u64 = fields[1].trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("item id: {e}"),
        })?;
        if user == 0 || item == 0 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "user and item ids must be positive".into(),
            });
        }
        let value: f64 = fields[2].trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            msg: format!("rating: {e}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "rating must be finite".into(),
            });
        }
        raw.push((user, item, value));
    }
    if raw.is_empty() {
        return Err(Error::Empty);
    }

    let mut user_ids: Vec<u64> = raw.iter().map(|e| e.0).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<u64> = raw.iter().map(|e| e.1).collect();
    item_ids.sort_unstable();
    item_ids.dedup();

    let user_pos: HashMap<u64, u32> = user_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as u32))
        .collect();
    let item_pos: HashMap<u64, u32> = item_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as u32))
        .collect();

    // keep-last on duplicates: the first occurrence fixes the position,
    // later occurrences overwrite the value.
    let mut entries: Vec<(u32, u32, f64)> = Vec::with_capacity(raw.len());
    let mut at: HashMap<(u32, u32), usize> = HashMap::with_capacity(raw.len());
    let mut duplicates_replaced = 0usize;
    for (user, item, value) in raw {
        let key = (user_pos[&user], item_pos[&item]);
        match at.get(&key) {
            Some(&idx) => {
                entries[idx].2 = value;
                duplicates_replaced += 1;
            }
            None => {
                at.insert(key, entries.len());
                entries.push((key.0, key.1, value));
            }
        }
    }

    let ratings = SparseRatings::from_entries(user_ids.len(), item_ids.len(), entries)?;
    Ok(LoadedRatings {
        ratings,
        user_ids,
        item_ids,
        duplicates_replaced,
    })
}

/// A train/test partition of an observed-entry set.
#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: SparseRatings,
    pub test: SparseRatings,
    pub seed: u64,
    pub fraction: f64,
    /// Rows of the full index space left with no training entry.
    pub empty_train_rows: Vec<u32>,
    /// Columns of the full index space left with no training entry.
    pub empty_train_cols: Vec<u32>,
}

/// Extract a test fraction of the entries uniformly at random without
/// replacement. Deterministic for a fixed seed. Train and test share the
/// original index space.
pub fn holdout_split(ratings: &SparseRatings, fraction: f64, seed: u64) -> Result<HoldoutSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in (0,1), got {fraction}"
        )));
    }
    if ratings.is_empty() {
        return Err(Error::Empty);
    }
    let n = ratings.len();
    let n_test = ((fraction * n as f64).round() as usize).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates: the first n_test slots become the test set
    for i in 0..n_test {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut is_test = vec![false; n];
    for &idx in &order[..n_test] {
        is_test[idx] = true;
    }

    let mut train_entries = Vec::with_capacity(n - n_test);
    let mut test_entries = Vec::with_capacity(n_test);
    for (idx, &e) in ratings.entries().iter().enumerate() {
        if is_test[idx] {
            test_entries.push(e);
        } else {
            train_entries.push(e);
        }
    }
    let train = SparseRatings::from_entries(ratings.n_rows(), ratings.n_cols(), train_entries)?;
    let test = SparseRatings::from_entries(ratings.n_rows(), ratings.n_cols(), test_entries)?;
    let empty_train_rows = train.empty_rows();
    let empty_train_cols = train.empty_cols();
    Ok(HoldoutSplit {
        train,
        test,
        seed,
        fraction,
        empty_train_rows,
        empty_train_cols,
    })
}

/// A holdout pair compacted to the rows and columns that carry at least
/// one training entry. Test entries referring to dropped rows or columns
/// are removed: a pure interaction model has no factors for them.
#[derive(Debug, Clone)]
pub struct RestrictedSplit {
    pub train: SparseRatings,
    pub test: SparseRatings,
    /// Original row index of each compact row.
    pub row_map: Vec<u32>,
    /// Original column index of each compact column.
    pub col_map: Vec<u32>,
    /// Test entries dropped because their row or column had no training
    /// entry.
    pub dropped_test_entries: usize,
}

/// Compact a (train, test) pair onto the rows and columns train actually
/// observes, dropping test entries that refer to unseen rows or columns.
pub fn restrict_to_support(train: &SparseRatings, test: &SparseRatings) -> Result<RestrictedSplit> {
    let n_rows = train.n_rows();
    let n_cols = train.n_cols();
    let mut row_new = vec![u32::MAX; n_rows];
    let mut col_new = vec![u32::MAX; n_cols];
    let mut row_map = Vec::new();
    let mut col_map = Vec::new();
    for r in 0..n_rows {
        if !train.row(r).is_empty() {
            row_new[r] = row_map.len() as u32;
            row_map.push(r as u32);
        }
    }
    for c in 0..n_cols {
        if !train.col(c).is_empty() {
            col_new[c] = col_map.len() as u32;
            col_map.push(c as u32);
        }
    }
    let train_entries = train
        .entries()
        .iter()
        .map(|&(r, c, v)| (row_new[r as usize], col_new[c as usize], v))
        .collect();
    let mut dropped = 0usize;
    let mut test_entries = Vec::with_capacity(test.len());
    for &(r, c, v) in test.entries() {
        let (nr, nc) = (row_new[r as usize], col_new[c as usize]);
        if nr == u32::MAX || nc == u32::MAX {
            dropped += 1;
        } else {
            test_entries.push((nr, nc, v));
        }
    }
    Ok(RestrictedSplit {
        train: SparseRatings::from_entries(row_map.len(), col_map.len(), train_entries)?,
        test: SparseRatings::from_entries(row_map.len(), col_map.len(), test_entries)?,
        dropped_test_entries: dropped,
        row_map,
        col_map,
    })
}

impl HoldoutSplit {
    /// Compact the split onto the training support so the factorization
    /// preconditions (no empty row or column) hold.
    pub fn restrict_to_train_support(&self) -> Result<RestrictedSplit> {
        restrict_to_support(&self.train, &self.test)
    }
}

/// Residuals value − prediction over the observed entries only.
pub fn project_residual(
    ratings: &SparseRatings,
    model: &FactorModel,
) -> Result<Vec<(u32, u32, f64)>> {
    if model.n_rows() != ratings.n_rows() || model.n_cols() != ratings.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, ratings are {}x{}",
            model.n_rows(),
            model.n_cols(),
            ratings.n_rows(),
            ratings.n_cols()
        )));
    }
    Ok(ratings
        .entries()
        .iter()
        .map(|&(r, c, v)| (r, c, v - model.predict(r as usize, c as usize)))
        .collect())
}

/// Root mean squared error of a residual list.
pub fn rmse(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Empty);
    }
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    Ok((ss / residuals.len() as f64).sqrt())
}

/// RMSE of a factor model over an observed-entry set.
pub fn rmse_against(ratings: &SparseRatings, model: &FactorModel) -> Result<f64> {
    let res = project_residual(ratings, model)?;
    rmse(&res.iter().map(|e| e.2).collect::<Vec<_>>())
}

/// Global, per-row and per-column mean predictors; empty rows and columns
/// fall back to the global mean.
#[derive(Debug, Clone)]
pub struct Baselines {
    pub global_mean: f64,
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
}

impl Baselines {
    pub fn predict_global(&self) -> f64 {
        self.global_mean
    }

    pub fn predict_row(&self, r: usize) -> f64 {
        self.row_means[r]
    }

    pub fn predict_col(&self, c: usize) -> f64 {
        self.col_means[c]
    }

    /// Test RMSE of the global-mean predictor.
    pub fn global_rmse(&self, test: &SparseRatings) -> Result<f64> {
        let res: Vec<f64> = test
            .entries()
            .iter()
            .map(|&(_, _, v)| v - self.global_mean)
            .collect();
        rmse(&res)
    }
}

/// Fit the three mean baselines on a training set.
pub fn baseline_predictors(train: &SparseRatings) -> Result<Baselines> {
    let global_mean = train.mean()?;
    let row_means = (0..train.n_rows())
        .map(|r| {
            let obs = train.row(r);
            if obs.is_empty() {
                global_mean
            } else {
                obs.iter().map(|e| e.1).sum::<f64>() / obs.len() as f64
            }
        })
        .collect();
    let col_means = (0..train.n_cols())
        .map(|c| {
            let obs = train.col(c);
            if obs.is_empty() {
                global_mean
            } else {
                obs.iter().map(|e| e.1).sum::<f64>() / obs.len() as f64
            }
        })
        .collect();
    Ok(Baselines {
        global_mean,
        row_means,
        col_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::als::FactorModel;
    use ndarray::array;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_tab_separated_line() {
        let f = write_temp("196\t242\t3\t881250949\n");
        let loaded = load_movielens(f.path(), Delimiter::Tab).unwrap();
        assert_eq!(loaded.ratings.len(), 1);
        assert_eq!(loaded.user_ids, vec![196]);
        assert_eq!(loaded.item_ids, vec![242]);
        assert_eq!(loaded.ratings.entries()[0], (0, 0, 3.0));
        assert_eq!(loaded.duplicates_replaced, 0);
    }

    #[test]
    fn loads_double_colon_and_comma_formats() {
        let f = write_temp("1::1193::5::978300760\n1::661::3::978302109\n");
        let loaded = load_movielens(f.path(), Delimiter::DoubleColon).unwrap();
        assert_eq!(loaded.ratings.len(), 2);
        assert_eq!(loaded.item_ids, vec![661, 1193]);
        // item 661 sorts first, so the first line maps to column 1
        assert_eq!(loaded.ratings.entries()[0], (0, 1, 5.0));

        let f = write_temp("userId,movieId,rating,timestamp\n1,2,3.5,964982703\n");
        let loaded = load_movielens(f.path(), Delimiter::Comma).unwrap();
        assert_eq!(loaded.ratings.len(), 1);
        assert_eq!(loaded.ratings.entries()[0], (0, 0, 3.5));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        match load_movielens(f.path(), Delimiter::Tab) {
            Err(Error::Empty) => {}
            other => panic!("expected Empty, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_temp("1\t2\t3\nbroken line\n");
        match load_movielens(f.path(), Delimiter::Tab) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn duplicates_keep_last_and_are_counted() {
        let f = write_temp("1\t7\t2\n1\t7\t5\n2\t7\t4\n");
        let loaded = load_movielens(f.path(), Delimiter::Tab).unwrap();
        assert_eq!(loaded.duplicates_replaced, 1);
        assert_eq!(loaded.ratings.len(), 2);
        assert_eq!(loaded.ratings.entries()[0], (0, 0, 5.0));
    }

    #[test]
    fn detect_delimiter() {
        assert_eq!(Delimiter::detect("1::2::3"), Some(Delimiter::DoubleColon));
        assert_eq!(Delimiter::detect("1\t2\t3"), Some(Delimiter::Tab));
        assert_eq!(Delimiter::detect("1,2,3"), Some(Delimiter::Comma));
        assert_eq!(Delimiter::detect("1 2 3"), None);
    }

    #[test]
    fn from_entries_rejects_invalid_input() {
        assert!(SparseRatings::from_entries(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(SparseRatings::from_entries(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseRatings::from_entries(2, 2, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn split_halves_two_entries() {
        let r = SparseRatings::from_entries(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let split = holdout_split(&r, 0.5, 1).unwrap();
        assert_eq!(split.train.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let entries: Vec<(u32, u32, f64)> =
            (0..200).map(|i| (i % 20, i / 20, (i % 5) as f64)).collect();
        let r = SparseRatings::from_entries(20, 10, entries).unwrap();
        let a = holdout_split(&r, 0.25, 42).unwrap();
        let b = holdout_split(&r, 0.25, 42).unwrap();
        assert_eq!(a.train.entries(), b.train.entries());
        assert_eq!(a.test.entries(), b.test.entries());
        let c = holdout_split(&r, 0.25, 43).unwrap();
        assert_ne!(a.test.entries(), c.test.entries());
    }

    #[test]
    fn split_size_tracks_fraction() {
        let entries: Vec<(u32, u32, f64)> =
            (0..100_000).map(|i| (i % 1000, i / 1000, 3.0)).collect();
        let r = SparseRatings::from_entries(1000, 100, entries).unwrap();
        let split = holdout_split(&r, 0.1, 7).unwrap();
        assert_eq!(split.test.len(), 10_000);
        assert_eq!(split.train.len(), 90_000);
    }

    #[test]
    fn split_flags_empty_rows() {
        // row 1 has a single entry; with fraction pushing it into test the
        // split must report it
        let r =
            SparseRatings::from_entries(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]).unwrap();
        for seed in 0..20 {
            let split = holdout_split(&r, 0.34, seed).unwrap();
            let row1_in_train = split.train.entries().iter().any(|e| e.0 == 1);
            assert_eq!(!row1_in_train, split.empty_train_rows.contains(&1));
        }
    }

    #[test]
    fn residuals_of_zero_model_equal_ratings() {
        let r = SparseRatings::from_entries(2, 3, vec![(0, 1, 4.0), (1, 2, -1.5)]).unwrap();
        let model = FactorModel::zero(2, 3, 1);
        let res = project_residual(&r, &model).unwrap();
        assert_eq!(res, vec![(0, 1, 4.0), (1, 2, -1.5)]);
    }

    #[test]
    fn residuals_of_exact_rank1_factorization_vanish() {
        // X = u v^T with u = (1, 2), v = (3, 1, 2)
        let u = [1.0, 2.0];
        let v = [3.0, 1.0, 2.0];
        let entries: Vec<(u32, u32, f64)> = (0..2)
            .flat_map(|i| (0..3).map(move |j| (i as u32, j as u32, u[i] * v[j])))
            .collect();
        let r = SparseRatings::from_entries(2, 3, entries).unwrap();
        let model = FactorModel::from_factors(
            array![[1.0], [2.0]],
            array![[3.0], [1.0], [2.0]],
            0.0,
            false,
            None,
        );
        let res = project_residual(&r, &model).unwrap();
        for &(_, _, d) in &res {
            assert!(d.abs() < 1e-10);
        }
    }

    #[test]
    fn residual_of_single_entry() {
        let r = SparseRatings::from_entries(1, 1, vec![(0, 0, 5.0)]).unwrap();
        // rank-1 model predicting 3
        let model = FactorModel::from_factors(array![[3.0]], array![[1.0]], 0.0, false, None);
        let res = project_residual(&r, &model).unwrap();
        assert_eq!(res, vec![(0, 0, 2.0)]);
    }

    #[test]
    fn residual_dimension_mismatch_is_an_error() {
        let r = SparseRatings::from_entries(2, 2, vec![(0, 0, 1.0)]).unwrap();
        let model = FactorModel::zero(3, 2, 1);
        assert!(project_residual(&r, &model).is_err());
    }

    #[test]
    fn rmse_known_values() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((rmse(&[-2.5, -2.5, -2.5]).unwrap() - 2.5).abs() < 1e-12);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn baselines_on_tiny_matrices() {
        let r = SparseRatings::from_entries(2, 2, vec![(0, 0, 2.0), (0, 1, 4.0)]).unwrap();
        let b = baseline_predictors(&r).unwrap();
        assert_eq!(b.global_mean, 3.0);
        assert_eq!(b.predict_row(0), 3.0);
        // empty row falls back to the global mean
        assert_eq!(b.predict_row(1), 3.0);
        assert_eq!(b.predict_col(0), 2.0);

        let single = SparseRatings::from_entries(1, 1, vec![(0, 0, 4.5)]).unwrap();
        let b = baseline_predictors(&single).unwrap();
        assert_eq!(b.global_mean, 4.5);
        assert_eq!(b.predict_row(0), 4.5);
        assert_eq!(b.predict_col(0), 4.5);
    }

    #[test]
    fn save_load_round_trip() {
        let r = SparseRatings::from_entries(3, 4, vec![(0, 3, 1.25), (2, 0, -7.0), (1, 1, 0.1)])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.txt");
        r.save(&path).unwrap();
        let back = SparseRatings::load(&path).unwrap();
        assert_eq!(back, r);
    }
}
