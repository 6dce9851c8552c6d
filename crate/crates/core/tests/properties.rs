//! Property suites over the sparse core and the fit determinism contracts.

use proptest::prelude::*;
use std::collections::HashSet;

use factorbench::als::{als_fit, AlsOptions, RegWeighting};
use factorbench::sparse::{holdout_split, SparseRatings};

fn arb_ratings() -> impl Strategy<Value = SparseRatings> {
    // dims then a subset of cells with values
    (2usize..10, 2usize..10)
        .prop_flat_map(|(n, p)| {
            let cells = proptest::collection::vec(
                ((0..n as u32), (0..p as u32), -10.0f64..10.0),
                1..=(n * p).min(40),
            );
            (Just(n), Just(p), cells)
        })
        .prop_map(|(n, p, cells)| {
            let mut seen = HashSet::new();
            let entries: Vec<(u32, u32, f64)> = cells
                .into_iter()
                .filter(|(r, c, _)| seen.insert((*r, *c)))
                .collect();
            SparseRatings::from_entries(n, p, entries).unwrap()
        })
}

proptest! {
    #[test]
    fn holdout_partitions_exactly(ratings in arb_ratings(), fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let split = holdout_split(&ratings, fraction, seed).unwrap();

        let train: HashSet<(u32, u32)> =
            split.train.entries().iter().map(|e| (e.0, e.1)).collect();
        let test: HashSet<(u32, u32)> =
            split.test.entries().iter().map(|e| (e.0, e.1)).collect();
        let all: HashSet<(u32, u32)> =
            ratings.entries().iter().map(|e| (e.0, e.1)).collect();

        prop_assert!(train.is_disjoint(&test));
        let union: HashSet<(u32, u32)> = train.union(&test).cloned().collect();
        prop_assert_eq!(union, all);

        let expected = fraction * ratings.len() as f64;
        prop_assert!((split.test.len() as f64 - expected).abs() <= 1.0);

        // the empty-row/col flags match reality
        for r in 0..ratings.n_rows() {
            let is_empty = split.train.row(r).is_empty();
            prop_assert_eq!(split.empty_train_rows.contains(&(r as u32)), is_empty);
        }
        for c in 0..ratings.n_cols() {
            let is_empty = split.train.col(c).is_empty();
            prop_assert_eq!(split.empty_train_cols.contains(&(c as u32)), is_empty);
        }
    }

    #[test]
    fn ratings_survive_a_save_load_round_trip(ratings in arb_ratings()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        ratings.save(&path).unwrap();
        let back = SparseRatings::load(&path).unwrap();
        prop_assert_eq!(back, ratings);
    }
}

fn dense_ratings(n: usize, p: usize) -> SparseRatings {
    let mut entries = Vec::new();
    for i in 0..n as u32 {
        for j in 0..p as u32 {
            let v = 1.0 + ((i * 7 + j * 3) % 5) as f64;
            entries.push((i, j, v));
        }
    }
    SparseRatings::from_entries(n, p, entries).unwrap()
}

/// Row solves read only the frozen opposite factor, so the fitted model
/// must not depend on the rayon thread count.
#[test]
fn als_fit_is_identical_across_thread_counts() {
    let train = dense_ratings(12, 9);
    let opts = AlsOptions {
        rank: 3,
        lambda: 0.05,
        nonneg: true,
        max_sweeps: 10,
        tol: 0.0,
        seed: 4,
        rating_bounds: None,
        weighting: RegWeighting::ByObservationCount,
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| als_fit(&train, &opts).unwrap());
    let many = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap()
        .install(|| als_fit(&train, &opts).unwrap());
    assert_eq!(single.model, many.model);
    for (a, b) in single.trace.iter().zip(&many.trace) {
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
