//! Nuclear-norm-regularized matrix completion by iterated soft-thresholded
//! truncated SVD (the softImpute family).
//!
//! The inner operator is kept in sparse-plus-low-rank form
//! `P_Ω(X) − P_Ω(M) + M`, so one matvec costs `O(|Ω|·b + (n+p)·k·b)`
//! instead of touching the dense n×p matrix, and successive SVDs warm-start
//! from the previous iteration's right singular vectors.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::als;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::{rmse, SparseRatings};

/// A truncated SVD `M = U diag(d) Vᵀ`: U is n×k and V is p×k with
/// orthonormal columns, d is nonnegative and non-increasing.
#[derive(Debug, Clone)]
pub struct LowRankTriple {
    u: Array2<f64>,
    d: Vec<f64>,
    v: Array2<f64>,
}

impl LowRankTriple {
    pub fn new(u: Array2<f64>, d: Vec<f64>, v: Array2<f64>) -> Self {
        assert_eq!(u.ncols(), d.len());
        assert_eq!(v.ncols(), d.len());
        LowRankTriple { u, d, v }
    }

    /// The zero matrix of a given shape (rank 0).
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        LowRankTriple {
            u: Array2::zeros((n_rows, 0)),
            d: Vec::new(),
            v: Array2::zeros((n_cols, 0)),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    /// Sum of singular values.
    pub fn nuclear_norm(&self) -> f64 {
        self.d.iter().sum()
    }

    /// Value of one cell of `U diag(d) Vᵀ`.
    pub fn predict(&self, row: usize, col: usize) -> f64 {
        let mut s = 0.0;
        for t in 0..self.rank() {
            s += self.u[[row, t]] * self.d[t] * self.v[[col, t]];
        }
        s
    }

    /// Dense reconstruction; intended for small matrices and tests.
    pub fn reconstruct(&self) -> Array2<f64> {
        if self.rank() == 0 {
            return Array2::zeros((self.n_rows(), self.n_cols()));
        }
        let mut scaled = self.v.clone();
        for t in 0..self.rank() {
            for j in 0..self.n_cols() {
                scaled[[j, t]] *= self.d[t];
            }
        }
        self.u.dot(&scaled.t())
    }

    /// Check the type invariants: d sorted non-increasing and nonnegative,
    /// UᵀU = I and VᵀV = I within 1e-8.
    pub fn validate(&self) -> Result<()> {
        for w in self.d.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidArgument(
                    "singular values not sorted non-increasing".into(),
                ));
            }
        }
        if self.d.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument("negative singular value".into()));
        }
        for (name, m) in [("U", &self.u), ("V", &self.v)] {
            let gram = m.t().dot(m);
            for i in 0..self.rank() {
                for j in 0..self.rank() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    if (gram[[i, j]] - expect).abs() > 1e-8 {
                        return Err(Error::InvalidArgument(format!(
                            "{name} columns not orthonormal at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A linear map that exposes multiply and transpose-multiply on blocks of
/// vectors. All the SVD machinery goes through this.
pub trait LinearOp: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// Compute `A · X` where X is n_cols × b.
    fn apply(&self, x: &Array2<f64>) -> Array2<f64>;
    /// Compute `Aᵀ · Y` where Y is n_rows × b.
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64>;
}

/// A dense matrix as a [`LinearOp`].
pub struct DenseOp<'a>(pub &'a Array2<f64>);

impl LinearOp for DenseOp<'_> {
    fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    fn n_cols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.0.dot(x)
    }

    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        self.0.t().dot(y)
    }
}

/// The soft-impute working matrix `P_Ω(X) − P_Ω(M) + M` held as sparse
/// residuals over Ω plus the low-rank M. Matvecs over Ω are data-parallel
/// by row blocks.
pub struct SparsePlusLowRank<'a> {
    residual_rows: Vec<Vec<(u32, f64)>>,
    residual_cols: Vec<Vec<(u32, f64)>>,
    m: &'a LowRankTriple,
}

impl<'a> SparsePlusLowRank<'a> {
    pub fn new(ratings: &SparseRatings, m: &'a LowRankTriple) -> Result<Self> {
        if m.n_rows() != ratings.n_rows() || m.n_cols() != ratings.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "triple is {}x{}, ratings are {}x{}",
                m.n_rows(),
                m.n_cols(),
                ratings.n_rows(),
                ratings.n_cols()
            )));
        }
        let residual_rows: Vec<Vec<(u32, f64)>> = (0..ratings.n_rows())
            .into_par_iter()
            .map(|i| {
                ratings
                    .row(i)
                    .iter()
                    .map(|&(j, x)| (j, x - m.predict(i, j as usize)))
                    .collect()
            })
            .collect();
        let residual_cols: Vec<Vec<(u32, f64)>> = (0..ratings.n_cols())
            .into_par_iter()
            .map(|j| {
                ratings
                    .col(j)
                    .iter()
                    .map(|&(i, x)| (i, x - m.predict(i as usize, j)))
                    .collect()
            })
            .collect();
        Ok(SparsePlusLowRank {
            residual_rows,
            residual_cols,
            m,
        })
    }
}

impl LinearOp for SparsePlusLowRank<'_> {
    fn n_rows(&self) -> usize {
        self.residual_rows.len()
    }

    fn n_cols(&self) -> usize {
        self.residual_cols.len()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let b = x.ncols();
        let mut out = if self.m.rank() > 0 {
            // low-rank part: U diag(d) (Vᵀ X)
            let mut tmp = self.m.v.t().dot(x);
            for t in 0..self.m.rank() {
                for c in 0..b {
                    tmp[[t, c]] *= self.m.d[t];
                }
            }
            self.m.u.dot(&tmp)
        } else {
            Array2::zeros((self.n_rows(), b))
        };
        // sparse part, row-parallel
        let mut sparse = vec![0.0f64; self.n_rows() * b];
        sparse
            .par_chunks_mut(b)
            .enumerate()
            .for_each(|(i, out_row)| {
                for &(j, r) in &self.residual_rows[i] {
                    let xr = x.row(j as usize);
                    let xr = xr.as_slice().expect("row-major block");
                    for (c, xc) in xr.iter().enumerate() {
                        out_row[c] += r * xc;
                    }
                }
            });
        for i in 0..self.n_rows() {
            for c in 0..b {
                out[[i, c]] += sparse[i * b + c];
            }
        }
        out
    }

    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        let b = y.ncols();
        let mut out = if self.m.rank() > 0 {
            let mut tmp = self.m.u.t().dot(y);
            for t in 0..self.m.rank() {
                for c in 0..b {
                    tmp[[t, c]] *= self.m.d[t];
                }
            }
            self.m.v.dot(&tmp)
        } else {
            Array2::zeros((self.n_cols(), b))
        };
        let mut sparse = vec![0.0f64; self.n_cols() * b];
        sparse
            .par_chunks_mut(b)
            .enumerate()
            .for_each(|(j, out_row)| {
                for &(i, r) in &self.residual_cols[j] {
                    let yr = y.row(i as usize);
                    let yr = yr.as_slice().expect("row-major block");
                    for (c, yc) in yr.iter().enumerate() {
                        out_row[c] += r * yc;
                    }
                }
            });
        for j in 0..self.n_cols() {
            for c in 0..b {
                out[[j, c]] += sparse[j * b + c];
            }
        }
        out
    }
}

/// Result of [`truncated_svd`].
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub triple: LowRankTriple,
    pub converged: bool,
    pub iterations: usize,
}

/// Leading-k SVD by block power iteration with re-orthonormalization.
///
/// Stops when the singular-value estimates change by less than
/// `tol * d_max` between iterations; on `max_iter` exhaustion the best
/// iterate is returned flagged not-converged. A final Rayleigh-Ritz pass
/// (`C = Uᵀ A V`, exact small SVD of C) enforces the triple invariants
/// even for tied or zero singular values.
pub fn truncated_svd(
    op: &dyn LinearOp,
    k: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SvdResult> {
    truncated_svd_with_init(op, k, tol, max_iter, seed, None)
}

/// [`truncated_svd`] with a warm-start subspace. Columns of `init` seed the
/// iteration; missing columns are filled with random directions.
pub fn truncated_svd_with_init(
    op: &dyn LinearOp,
    k: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
    init: Option<&Array2<f64>>,
) -> Result<SvdResult> {
    let (n, p) = (op.n_rows(), op.n_cols());
    if k > n.min(p) {
        return Err(Error::InvalidArgument(format!(
            "rank {k} exceeds min({n}, {p})"
        )));
    }
    if k == 0 {
        return Ok(SvdResult {
            triple: LowRankTriple::empty(n, p),
            converged: true,
            iterations: 0,
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = linalg::gaussian_matrix(p, k, &mut rng);
    if let Some(init) = init {
        let copy = init.ncols().min(k);
        for j in 0..copy {
            for t in 0..p {
                v[[t, j]] = init[[t, j]];
            }
        }
    }
    linalg::qr_orthonormalize(&mut v, &mut rng);

    let mut u;
    let mut d_prev: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        iterations += 1;
        u = op.apply(&v);
        linalg::qr_orthonormalize(&mut u, &mut rng);
        v = op.apply_transpose(&u);
        let r = linalg::qr_orthonormalize(&mut v, &mut rng);
        let d: Vec<f64> = (0..k).map(|j| r[[j, j]]).collect();

        if let Some(prev) = &d_prev {
            let scale = d[0].max(1e-12);
            let delta = d
                .iter()
                .zip(prev)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if delta <= tol * scale {
                converged = true;
                break;
            }
        }
        d_prev = Some(d);
        if iterations >= max_iter {
            break;
        }
    }

    // Rayleigh-Ritz refinement on the computed subspaces.
    let c = u.t().dot(&op.apply(&v));
    let (uc, d, vc) = linalg::svd_small(&c);
    let triple = LowRankTriple::new(u.dot(&uc), d, v.dot(&vc));
    Ok(SvdResult {
        triple,
        converged,
        iterations,
    })
}

/// Shrink singular values by `lambda` and drop the components that reach
/// zero. `lambda = 0` is the identity; rank never increases.
pub fn soft_threshold(triple: &LowRankTriple, lambda: f64) -> Result<LowRankTriple> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    if lambda == 0.0 {
        return Ok(triple.clone());
    }
    let keep: Vec<usize> = (0..triple.rank())
        .filter(|&t| triple.d[t] - lambda > 0.0)
        .collect();
    let mut u = Array2::zeros((triple.n_rows(), keep.len()));
    let mut v = Array2::zeros((triple.n_cols(), keep.len()));
    let mut d = Vec::with_capacity(keep.len());
    for (pos, &t) in keep.iter().enumerate() {
        d.push(triple.d[t] - lambda);
        for i in 0..triple.n_rows() {
            u[[i, pos]] = triple.u[[i, t]];
        }
        for j in 0..triple.n_cols() {
            v[[j, pos]] = triple.v[[j, t]];
        }
    }
    Ok(LowRankTriple::new(u, d, v))
}

/// Which update runs inside each soft-impute iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftImputeMode {
    /// Soft-thresholded SVD of the sparse-plus-low-rank working matrix.
    Svt,
    /// One observed-only ALS sweep on the balanced factors, then the
    /// soft-threshold step. Both sub-steps descend the same objective, so
    /// the trace stays non-increasing.
    AlsHybrid,
}

/// Parameters of [`soft_impute`].
#[derive(Debug, Clone)]
pub struct SoftImputeOptions {
    pub lambda: f64,
    pub rank_max: usize,
    /// Stop when the relative objective change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub mode: SoftImputeMode,
    /// Convergence tolerance of the inner truncated SVDs.
    pub svd_tol: f64,
    pub svd_max_iter: usize,
}

impl SoftImputeOptions {
    pub fn new(lambda: f64, rank_max: usize) -> Self {
        SoftImputeOptions {
            lambda,
            rank_max,
            tol: 1e-5,
            max_iter: 100,
            seed: 0,
            mode: SoftImputeMode::Svt,
            svd_tol: 1e-9,
            svd_max_iter: 200,
        }
    }
}

/// One row of the soft-impute iteration trace.
#[derive(Debug, Clone)]
pub struct SvtTraceRow {
    pub iter: usize,
    /// The completion objective `||P_Ω(X − M)||² + lambda * Σ d`.
    pub objective: f64,
    pub rank: usize,
    pub seconds: f64,
}

/// Result of [`soft_impute`].
#[derive(Debug, Clone)]
pub struct SoftImputeFit {
    pub triple: LowRankTriple,
    pub trace: Vec<SvtTraceRow>,
    pub converged: bool,
    /// The solution uses all `rank_max` components with every surviving
    /// singular value positive; a larger rank_max might fit better.
    pub rank_ceiling_hit: bool,
}

/// Squared error over the observed entries plus `lambda` times the nuclear
/// norm.
pub fn completion_objective(train: &SparseRatings, m: &LowRankTriple, lambda: f64) -> f64 {
    let loss: f64 = train
        .entries()
        .par_iter()
        .map(|&(i, j, x)| {
            let d = x - m.predict(i as usize, j as usize);
            d * d
        })
        .sum();
    loss + lambda * m.nuclear_norm()
}

/// RMSE of a low-rank triple against an observed-entry set.
pub fn completion_rmse(test: &SparseRatings, m: &LowRankTriple) -> Result<f64> {
    if test.n_rows() != m.n_rows() || test.n_cols() != m.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "triple is {}x{}, ratings are {}x{}",
            m.n_rows(),
            m.n_cols(),
            test.n_rows(),
            test.n_cols()
        )));
    }
    let res: Vec<f64> = test
        .entries()
        .iter()
        .map(|&(i, j, x)| x - m.predict(i as usize, j as usize))
        .collect();
    rmse(&res)
}

/// Exact SVD of a factor product `A Bᵀ` through thin QRs of both factors
/// and a small dense SVD, without forming the n×p matrix.
pub fn svd_of_product(a: &Array2<f64>, b: &Array2<f64>) -> LowRankTriple {
    let k = a.ncols();
    assert_eq!(b.ncols(), k);
    if k == 0 {
        return LowRankTriple::empty(a.nrows(), b.nrows());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut qa = a.clone();
    let ra = linalg::qr_orthonormalize(&mut qa, &mut rng);
    let mut qb = b.clone();
    let rb = linalg::qr_orthonormalize(&mut qb, &mut rng);
    let s = ra.dot(&rb.t());
    let (us, d, vs) = linalg::svd_small(&s);
    LowRankTriple::new(qa.dot(&us), d, qb.dot(&vs))
}

/// One proximal step of the nuclear-norm objective: the rank-capped
/// soft-thresholded SVD of `P_Ω(X) + P⊥(M)`, solved inside a subspace
/// that always contains the previous iterate. Containment is what makes
/// the objective provably non-increasing even when the power iteration
/// stops early: M itself stays feasible for the restricted prox problem.
fn prox_step(
    train: &SparseRatings,
    m: &LowRankTriple,
    opts: &SoftImputeOptions,
    iter: usize,
) -> Result<LowRankTriple> {
    let op = SparsePlusLowRank::new(train, m)?;
    let init = if m.rank() > 0 { Some(m.v()) } else { None };
    let svd = truncated_svd_with_init(
        &op,
        opts.rank_max,
        opts.svd_tol,
        opts.svd_max_iter,
        opts.seed.wrapping_add(iter as u64),
        init,
    )?;

    // augment each side with the previous iterate's vectors; a side capped
    // at its own dimension spans the whole space, so containment of the
    // previous iterate survives the cap
    let (n, p) = (m.n_rows(), m.n_cols());
    let ku = (opts.rank_max + m.rank()).min(n);
    let kv = (opts.rank_max + m.rank()).min(p);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x5eed ^ iter as u64));
    let mut u_a = Array2::<f64>::zeros((n, ku));
    for t in 0..ku {
        let src = if t < opts.rank_max {
            svd.triple.u.column(t)
        } else {
            m.u.column(t - opts.rank_max)
        };
        for i in 0..n {
            u_a[[i, t]] = src[i];
        }
    }
    let mut v_a = Array2::<f64>::zeros((p, kv));
    for t in 0..kv {
        let src = if t < opts.rank_max {
            svd.triple.v.column(t)
        } else {
            m.v.column(t - opts.rank_max)
        };
        for j in 0..p {
            v_a[[j, t]] = src[j];
        }
    }
    linalg::qr_orthonormalize(&mut u_a, &mut rng);
    linalg::qr_orthonormalize(&mut v_a, &mut rng);

    // exact prox within the augmented subspace, then rank cap. The
    // quadratic term of the objective carries no 1/2, so its gradient
    // Lipschitz constant is 2 and the proximal shrinkage per step is
    // lambda/2.
    let shrink = opts.lambda / 2.0;
    let c = u_a.t().dot(&op.apply(&v_a));
    let (uc, d, vc) = linalg::svd_small(&c);
    let keep: Vec<usize> = (0..d.len())
        .filter(|&t| d[t] - shrink > 0.0)
        .take(opts.rank_max)
        .collect();
    let u_full = u_a.dot(&uc);
    let v_full = v_a.dot(&vc);
    let mut u = Array2::zeros((n, keep.len()));
    let mut v = Array2::zeros((p, keep.len()));
    let mut d_kept = Vec::with_capacity(keep.len());
    for (pos, &t) in keep.iter().enumerate() {
        d_kept.push(d[t] - shrink);
        for i in 0..n {
            u[[i, pos]] = u_full[[i, t]];
        }
        for j in 0..p {
            v[[j, pos]] = v_full[[j, t]];
        }
    }
    Ok(LowRankTriple::new(u, d_kept, v))
}

/// Iterated soft-thresholded SVD completion of an observed-entry set.
///
/// Preconditions: every row and column observed at least once. The trace
/// reports the completion objective per iteration and is non-increasing;
/// iteration stops when its relative change drops below `tol`. `warm`
/// seeds the first iterate and the inner SVD subspaces.
pub fn soft_impute(
    train: &SparseRatings,
    opts: &SoftImputeOptions,
    warm: Option<&LowRankTriple>,
) -> Result<SoftImputeFit> {
    if train.is_empty() {
        return Err(Error::Empty);
    }
    if opts.lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    let k_work = opts.rank_max;
    if k_work < 1 || k_work > train.n_rows().min(train.n_cols()) {
        return Err(Error::InvalidArgument(format!(
            "rank_max {} out of range for {}x{}",
            k_work,
            train.n_rows(),
            train.n_cols()
        )));
    }
    if let Some(r) = train.empty_rows().first() {
        return Err(Error::EmptyRow(*r as usize));
    }
    if let Some(c) = train.empty_cols().first() {
        return Err(Error::EmptyCol(*c as usize));
    }

    let mut m = match warm {
        Some(w) => {
            if w.n_rows() != train.n_rows() || w.n_cols() != train.n_cols() {
                return Err(Error::DimensionMismatch(
                    "warm start shape does not match ratings".into(),
                ));
            }
            w.clone()
        }
        None => LowRankTriple::empty(train.n_rows(), train.n_cols()),
    };

    // observation lists are only needed by the hybrid sweeps
    let (row_obs, col_obs) = match opts.mode {
        SoftImputeMode::AlsHybrid => (als::row_observations(train), als::col_observations(train)),
        SoftImputeMode::Svt => (Vec::new(), Vec::new()),
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut obj_prev = completion_objective(train, &m, opts.lambda);

    for iter in 1..=opts.max_iter {
        let started = Instant::now();

        if opts.mode == SoftImputeMode::AlsHybrid && m.rank() > 0 {
            // balanced factors A = U√D, B = V√D make the ridge term equal
            // the nuclear norm, so the sweep descends the same objective
            let k = m.rank();
            let mut a = m.u().clone();
            let mut b = m.v().clone();
            for t in 0..k {
                let s = m.d()[t].sqrt();
                for i in 0..a.nrows() {
                    a[[i, t]] *= s;
                }
                for j in 0..b.nrows() {
                    b[[j, t]] *= s;
                }
            }
            als::als_sweep(
                &row_obs,
                &col_obs,
                &mut a,
                &mut b,
                opts.lambda / 2.0,
                false,
                als::RegWeighting::Uniform,
            );
            m = svd_of_product(&a, &b);
        }

        m = prox_step(train, &m, opts, iter)?;

        let objective = completion_objective(train, &m, opts.lambda);
        trace.push(SvtTraceRow {
            iter,
            objective,
            rank: m.rank(),
            seconds: started.elapsed().as_secs_f64(),
        });

        let rel = (obj_prev - objective).abs() / obj_prev.max(1e-12);
        if rel < opts.tol {
            converged = true;
            break;
        }
        obj_prev = objective;
    }

    let rank_ceiling_hit = m.rank() == k_work;
    Ok(SoftImputeFit {
        triple: m,
        trace,
        converged,
        rank_ceiling_hit,
    })
}
