//! Nonnegative matrix factorization of fully observed nonnegative
//! matrices: Lee-Seung multiplicative updates and clamped alternating
//! least squares, with random multi-start and NNDSVD initialization.
//!
//! These factorizations reconstruct *every* cell of X, including zeros.
//! Applied to a sparse rating matrix with zeros standing in for missing
//! entries they faithfully reconstruct those zeros, which is precisely why
//! they are not completion algorithms; `als` handles the observed-only
//! problem.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::svt::{truncated_svd, DenseOp};

/// Division guard in the multiplicative updates; also keeps a zeroed
/// entry able to grow again.
const MU_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfAlgorithm {
    /// Lee-Seung least-squares multiplicative updates (monotone).
    MultiplicativeLs,
    /// Exact alternating least squares with negatives clamped to zero
    /// after each solve (not guaranteed monotone).
    AlsClamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfInit {
    /// `n_starts` independent random initializations; the best final
    /// objective wins.
    RandomMultistart { n_starts: usize },
    /// Nonnegative double SVD from the leading-r truncated SVD, with zero
    /// entries floored to a small epsilon.
    Nndsvd,
}

#[derive(Debug, Clone)]
pub struct NmfConfig {
    pub rank: usize,
    pub algorithm: NmfAlgorithm,
    pub init: NmfInit,
    pub max_iter: usize,
    /// Stop when the relative objective change drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Optional L2 penalty weight on both factors.
    pub l2_penalty: f64,
}

impl NmfConfig {
    pub fn new(rank: usize) -> Self {
        NmfConfig {
            rank,
            algorithm: NmfAlgorithm::MultiplicativeLs,
            init: NmfInit::RandomMultistart { n_starts: 1 },
            max_iter: 500,
            tol: 1e-9,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

/// One row of the per-start iteration trace.
#[derive(Debug, Clone)]
pub struct NmfTraceRow {
    pub start_id: usize,
    pub iter: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct NmfFit {
    /// n×r, elementwise nonnegative.
    pub w: Array2<f64>,
    /// r×p, elementwise nonnegative.
    pub h: Array2<f64>,
    pub objective: f64,
    pub best_start: usize,
    pub converged: bool,
    pub trace: Vec<NmfTraceRow>,
}

/// `||X − WH||²_F` plus the optional L2 penalty.
pub fn nmf_objective(x: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>, l2: f64) -> f64 {
    let wh = w.dot(h);
    let mut loss = 0.0;
    for (a, b) in x.iter().zip(wh.iter()) {
        let d = a - b;
        loss += d * d;
    }
    if l2 > 0.0 {
        let pen: f64 = w.iter().map(|v| v * v).sum::<f64>() + h.iter().map(|v| v * v).sum::<f64>();
        loss + l2 * pen
    } else {
        loss
    }
}

fn validate_input(x: &Array2<f64>, rank: usize) -> Result<()> {
    let (n, p) = x.dim();
    if n == 0 || p == 0 {
        return Err(Error::Empty);
    }
    if rank < 1 || rank > n.min(p) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} out of range for {n}x{p}"
        )));
    }
    for ((i, j), &v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("X[{i}, {j}]")));
        }
        if v < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative entry at ({i}, {j})"
            )));
        }
    }
    for i in 0..n {
        if (0..p).all(|j| x[[i, j]] == 0.0) {
            return Err(Error::EmptyRow(i));
        }
    }
    for j in 0..p {
        if (0..n).all(|i| x[[i, j]] == 0.0) {
            return Err(Error::EmptyCol(j));
        }
    }
    Ok(())
}

fn multiplicative_iteration(x: &Array2<f64>, w: &mut Array2<f64>, h: &mut Array2<f64>, l2: f64) {
    // H <- H .* (WtX) ./ (WtWH + l2 H + eps)
    let wtx = w.t().dot(x);
    let wtwh = w.t().dot(w).dot(&*h);
    for ((i, j), hv) in h.indexed_iter_mut() {
        let denom = wtwh[[i, j]] + l2 * *hv + MU_EPS;
        *hv *= wtx[[i, j]] / denom;
    }
    // W <- W .* (XHt) ./ (WHHt + l2 W + eps)
    let xht = x.dot(&h.t());
    let whht = w.dot(&h.dot(&h.t()));
    for ((i, j), wv) in w.indexed_iter_mut() {
        let denom = whht[[i, j]] + l2 * *wv + MU_EPS;
        *wv *= xht[[i, j]] / denom;
    }
}

fn als_clamp_iteration(x: &Array2<f64>, w: &mut Array2<f64>, h: &mut Array2<f64>, l2: f64) {
    let rank = w.ncols();
    // solve (WtW + l2 I) H = WtX, then clamp negatives
    let mut g = w.t().dot(w);
    for t in 0..rank {
        g[[t, t]] += l2;
    }
    let mut rhs = w.t().dot(x);
    linalg::solve_spd_multi(&g, &mut rhs);
    rhs.mapv_inplace(|v| v.max(0.0));
    *h = rhs;
    // solve (HHt + l2 I) Wt = HXt, then clamp negatives
    let mut g = h.dot(&h.t());
    for t in 0..rank {
        g[[t, t]] += l2;
    }
    let mut rhs = h.dot(&x.t());
    linalg::solve_spd_multi(&g, &mut rhs);
    rhs.mapv_inplace(|v| v.max(0.0));
    *w = rhs.t().to_owned();
}

struct StartResult {
    w: Array2<f64>,
    h: Array2<f64>,
    objective: f64,
    converged: bool,
    trace: Vec<NmfTraceRow>,
}

fn run_start(
    x: &Array2<f64>,
    config: &NmfConfig,
    start_id: usize,
    mut w: Array2<f64>,
    mut h: Array2<f64>,
) -> StartResult {
    let mut trace = Vec::new();
    let mut converged = false;
    let mut obj_prev = nmf_objective(x, &w, &h, config.l2_penalty);
    for iter in 1..=config.max_iter {
        match config.algorithm {
            NmfAlgorithm::MultiplicativeLs => {
                multiplicative_iteration(x, &mut w, &mut h, config.l2_penalty)
            }
            NmfAlgorithm::AlsClamp => als_clamp_iteration(x, &mut w, &mut h, config.l2_penalty),
        }
        let objective = nmf_objective(x, &w, &h, config.l2_penalty);
        trace.push(NmfTraceRow {
            start_id,
            iter,
            objective,
        });
        let rel = (obj_prev - objective).abs() / obj_prev.max(1e-15);
        obj_prev = objective;
        if rel < config.tol {
            converged = true;
            break;
        }
    }
    StartResult {
        w,
        h,
        objective: obj_prev,
        converged,
        trace,
    }
}

/// Factor a fully observed nonnegative matrix as `X ≈ WH` with `W, H ≥ 0`.
///
/// Preconditions: no negative entry, no all-zero row or column,
/// `rank <= min(n, p)`. Multi-start runs are independent and the lowest
/// final objective wins; the trace carries every start.
pub fn nmf_fit(x: &Array2<f64>, config: &NmfConfig) -> Result<NmfFit> {
    validate_input(x, config.rank)?;
    let (n, p) = x.dim();
    let r = config.rank;

    let inits: Vec<(usize, Array2<f64>, Array2<f64>)> = match config.init {
        NmfInit::RandomMultistart { n_starts } => {
            if n_starts < 1 {
                return Err(Error::InvalidArgument("n_starts must be >= 1".into()));
            }
            let mean = x.sum() / (n * p) as f64;
            let scale = 2.0 * (mean / r as f64).sqrt();
            (0..n_starts)
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(s as u64));
                    let w = linalg::uniform_matrix(n, r, scale, &mut rng);
                    let h = linalg::uniform_matrix(r, p, scale, &mut rng);
                    (s, w, h)
                })
                .collect()
        }
        NmfInit::Nndsvd => {
            let (w, h) = nndsvd_init(x, r)?;
            vec![(0, w, h)]
        }
    };

    let mut results: Vec<(usize, StartResult)> = inits
        .into_par_iter()
        .map(|(s, w, h)| (s, run_start(x, config, s, w, h)))
        .collect();
    results.sort_by_key(|(s, _)| *s);

    let best = results
        .iter()
        .enumerate()
        .min_by(|(_, (_, a)), (_, (_, b))| a.objective.partial_cmp(&b.objective).unwrap())
        .map(|(idx, _)| idx)
        .expect("at least one start");

    let mut trace = Vec::new();
    for (_, res) in &results {
        trace.extend(res.trace.iter().cloned());
    }
    let (best_start, best_res) = results.swap_remove(best);
    Ok(NmfFit {
        w: best_res.w,
        h: best_res.h,
        objective: best_res.objective,
        best_start,
        converged: best_res.converged,
        trace,
    })
}

/// Nonnegative double-SVD initialization: build (W0, H0) from the positive
/// parts of the leading-r singular vector outer products, scaled by the
/// singular values. Zero entries are floored to `1e-6 * mean(X)` so a
/// multiplicative update can still move them.
pub fn nndsvd_init(x: &Array2<f64>, rank: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    validate_input(x, rank)?;
    let (n, p) = x.dim();
    let svd = truncated_svd(&DenseOp(x), rank, 1e-10, 500, 0)?;
    let (u, d, v) = (svd.triple.u(), svd.triple.d(), svd.triple.v());

    let mut w = Array2::<f64>::zeros((n, rank));
    let mut h = Array2::<f64>::zeros((rank, p));

    // leading pair: nonnegative up to sign for a nonnegative matrix
    let s0 = d[0].sqrt();
    for i in 0..n {
        w[[i, 0]] = s0 * u[[i, 0]].abs();
    }
    for j in 0..p {
        h[[0, j]] = s0 * v[[j, 0]].abs();
    }

    for t in 1..rank {
        let (mut xp, mut xn, mut yp, mut yn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            let val = u[[i, t]];
            if val >= 0.0 {
                xp += val * val;
            } else {
                xn += val * val;
            }
        }
        for j in 0..p {
            let val = v[[j, t]];
            if val >= 0.0 {
                yp += val * val;
            } else {
                yn += val * val;
            }
        }
        let (xp, xn, yp, yn) = (xp.sqrt(), xn.sqrt(), yp.sqrt(), yn.sqrt());
        let mp = xp * yp;
        let mn = xn * yn;
        let (unorm, vnorm, sigma, positive) = if mp >= mn {
            (xp, yp, mp, true)
        } else {
            (xn, yn, mn, false)
        };
        if sigma <= 0.0 {
            continue; // dead component, handled by the epsilon floor below
        }
        let scale = (d[t] * sigma).sqrt();
        for i in 0..n {
            let val = u[[i, t]];
            let part = if positive {
                val.max(0.0)
            } else {
                (-val).max(0.0)
            };
            w[[i, t]] = scale * part / unorm;
        }
        for j in 0..p {
            let val = v[[j, t]];
            let part = if positive {
                val.max(0.0)
            } else {
                (-val).max(0.0)
            };
            h[[t, j]] = scale * part / vnorm;
        }
    }

    let floor = 1e-6 * x.sum() / (n * p) as f64;
    w.mapv_inplace(|v| v.max(floor));
    h.mapv_inplace(|v| v.max(floor));
    Ok((w, h))
}

/// Quotient out the diagonal scale ambiguity: columns of W scaled to unit
/// L2 norm with the compensation moved into the rows of H. A zero column
/// of W is left unscaled and its index reported.
pub fn scale_ambiguity_normalize(
    w: &Array2<f64>,
    h: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    assert_eq!(w.ncols(), h.nrows(), "factor ranks must agree");
    let mut w = w.clone();
    let mut h = h.clone();
    let mut zero_cols = Vec::new();
    for t in 0..w.ncols() {
        let norm: f64 = (0..w.nrows())
            .map(|i| w[[i, t]] * w[[i, t]])
            .sum::<f64>()
            .sqrt();
        if norm <= 1e-300 {
            zero_cols.push(t);
            continue;
        }
        for i in 0..w.nrows() {
            w[[i, t]] /= norm;
        }
        for j in 0..h.ncols() {
            h[[t, j]] *= norm;
        }
    }
    (w, h, zero_cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_invalid_inputs() {
        let neg = array![[1.0, -0.5], [2.0, 1.0]];
        assert!(nmf_fit(&neg, &NmfConfig::new(1)).is_err());
        let zero_col = array![[1.0, 0.0], [2.0, 0.0]];
        match nmf_fit(&zero_col, &NmfConfig::new(1)) {
            Err(Error::EmptyCol(1)) => {}
            other => panic!("expected EmptyCol(1), got {other:?}"),
        }
        let fine = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(nmf_fit(&fine, &NmfConfig::new(3)).is_err()); // rank too high
    }

    #[test]
    fn exact_rank1_factorization_is_found() {
        let x = array![[1.0, 2.0], [2.0, 4.0]];
        for algorithm in [NmfAlgorithm::MultiplicativeLs, NmfAlgorithm::AlsClamp] {
            let config = NmfConfig {
                algorithm,
                max_iter: 2000,
                tol: 1e-15,
                init: NmfInit::RandomMultistart { n_starts: 2 },
                ..NmfConfig::new(1)
            };
            let fit = nmf_fit(&x, &config).unwrap();
            let err = nmf_objective(&x, &fit.w, &fit.h, 0.0).sqrt();
            assert!(err < 1e-6, "{algorithm:?}: frobenius error {err}");
        }
    }

    #[test]
    fn identity_reaches_zero_objective() {
        let x = Array2::<f64>::eye(2);
        let config = NmfConfig {
            algorithm: NmfAlgorithm::AlsClamp,
            max_iter: 200,
            tol: 1e-15,
            init: NmfInit::RandomMultistart { n_starts: 3 },
            ..NmfConfig::new(2)
        };
        let fit = nmf_fit(&x, &config).unwrap();
        assert!(fit.objective < 1e-10, "objective {}", fit.objective);

        let config = NmfConfig {
            algorithm: NmfAlgorithm::MultiplicativeLs,
            max_iter: 5000,
            tol: 0.0,
            init: NmfInit::RandomMultistart { n_starts: 3 },
            ..NmfConfig::new(2)
        };
        let fit = nmf_fit(&x, &config).unwrap();
        assert!(fit.objective < 1e-6, "objective {}", fit.objective);
    }

    #[test]
    fn factors_stay_nonnegative_in_both_algorithms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((7, 5), |_| rng.random::<f64>() * 2.0 + 0.1);
        for algorithm in [NmfAlgorithm::MultiplicativeLs, NmfAlgorithm::AlsClamp] {
            let config = NmfConfig {
                algorithm,
                max_iter: 60,
                ..NmfConfig::new(3)
            };
            let fit = nmf_fit(&x, &config).unwrap();
            assert!(fit.w.iter().all(|&v| v >= 0.0));
            assert!(fit.h.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn multiplicative_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for case in 0..5usize {
            let x = Array2::from_shape_fn((6 + case, 5), |_| rng.random::<f64>() * 3.0 + 0.05);
            let config = NmfConfig {
                max_iter: 100,
                tol: 0.0,
                seed: case as u64,
                ..NmfConfig::new(2)
            };
            let fit = nmf_fit(&x, &config).unwrap();
            for w in fit.trace.windows(2) {
                if w[1].start_id == w[0].start_id {
                    assert!(
                        w[1].objective <= w[0].objective + 1e-10,
                        "case {case}: {} -> {}",
                        w[0].objective,
                        w[1].objective
                    );
                }
            }
        }
    }

    #[test]
    fn multistart_returns_the_best_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Array2::from_shape_fn((8, 6), |_| rng.random::<f64>() + 0.05);
        let config = NmfConfig {
            max_iter: 40,
            init: NmfInit::RandomMultistart { n_starts: 4 },
            ..NmfConfig::new(2)
        };
        let fit = nmf_fit(&x, &config).unwrap();
        // final objective of each start from the trace
        for s in 0..4 {
            let last = fit.trace.iter().rfind(|row| row.start_id == s).unwrap();
            assert!(fit.objective <= last.objective + 1e-12);
        }
    }

    #[test]
    fn nndsvd_on_diagonal_reproduces_structure() {
        let x = array![[3.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 2.0]];
        let (w, h) = nndsvd_init(&x, 3).unwrap();
        assert!(w.iter().all(|&v| v > 0.0));
        assert!(h.iter().all(|&v| v > 0.0));
        // column t of W peaks at the row of the t-th largest diagonal value
        let expect_rows = [1usize, 0, 2]; // diag sorted: 5, 3, 2
        for t in 0..3 {
            let mut best = 0;
            for i in 0..3 {
                if w[[i, t]] > w[[best, t]] {
                    best = i;
                }
            }
            assert_eq!(best, expect_rows[t], "column {t}");
        }
    }

    #[test]
    fn nndsvd_start_on_rank1_converges_immediately() {
        let u = [1.0, 0.5, 2.0];
        let v = [1.5, 1.0, 0.5, 2.0];
        let mut x = Array2::<f64>::zeros((3, 4));
        for i in 0..3 {
            for j in 0..4 {
                x[[i, j]] = u[i] * v[j];
            }
        }
        let config = NmfConfig {
            init: NmfInit::Nndsvd,
            max_iter: 5,
            tol: 0.0,
            ..NmfConfig::new(1)
        };
        let fit = nmf_fit(&x, &config).unwrap();
        assert!(fit.objective < 1e-8, "objective {}", fit.objective);
    }

    #[test]
    fn normalize_quotients_out_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() + 0.1);
        let h = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() + 0.1);

        // rescale column 1 by 10 and row 1 by 0.1: same product
        let mut w2 = w.clone();
        let mut h2 = h.clone();
        for i in 0..6 {
            w2[[i, 1]] *= 10.0;
        }
        for j in 0..4 {
            h2[[1, j]] *= 0.1;
        }

        let (wn, hn, z) = scale_ambiguity_normalize(&w, &h);
        let (wn2, hn2, z2) = scale_ambiguity_normalize(&w2, &h2);
        assert!(z.is_empty() && z2.is_empty());
        for (a, b) in wn.iter().zip(wn2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in hn.iter().zip(hn2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // product preserved
        let before = w.dot(&h);
        let after = wn.dot(&hn);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // fixed point
        let (wn3, hn3, _) = scale_ambiguity_normalize(&wn, &hn);
        for (a, b) in wn3.iter().zip(wn.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in hn3.iter().zip(hn.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_flags_zero_columns() {
        let w = array![[1.0, 0.0], [1.0, 0.0]];
        let h = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, _, zero_cols) = scale_ambiguity_normalize(&w, &h);
        assert_eq!(zero_cols, vec![1]);
    }
}
