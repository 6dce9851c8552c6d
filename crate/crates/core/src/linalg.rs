//! Small dense routines shared by the factorization modules: thin QR,
//! Cholesky solves for the r×r normal equations, and a Jacobi symmetric
//! eigensolver backing the least-norm fallback when a normal matrix is
//! singular.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Columns with residual norm below `scale * DEAD_COLUMN_RTOL` are treated
/// as linearly dependent and replaced by fresh random directions.
const DEAD_COLUMN_RTOL: f64 = 1e-12;

/// Thin QR of an n×k matrix (k ≤ n) by modified Gram-Schmidt with one
/// reorthogonalization pass. `a` is replaced by Q with orthonormal columns;
/// the returned R is upper triangular with nonnegative diagonal.
///
/// A column that is (numerically) in the span of its predecessors gets
/// R\[j,j\] = 0 and is replaced by a random vector orthonormalized against
/// the previous columns, so Q always has full column rank.
pub fn qr_orthonormalize(a: &mut Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (n, k) = a.dim();
    assert!(k <= n, "thin QR requires k <= n");
    let mut r = Array2::<f64>::zeros((k, k));

    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);

    for j in 0..k {
        // Two projection passes; the second mops up the cancellation error
        // of the first.
        for _pass in 0..2 {
            for i in 0..j {
                let mut proj = 0.0;
                for t in 0..n {
                    proj += a[[t, i]] * a[[t, j]];
                }
                r[[i, j]] += proj;
                for t in 0..n {
                    a[[t, j]] -= proj * a[[t, i]];
                }
            }
        }
        let mut norm = 0.0;
        for t in 0..n {
            norm += a[[t, j]] * a[[t, j]];
        }
        norm = norm.sqrt();

        if norm <= scale * DEAD_COLUMN_RTOL {
            r[[j, j]] = 0.0;
            replace_with_random_orthonormal(a, j, rng);
        } else {
            r[[j, j]] = norm;
            for t in 0..n {
                a[[t, j]] /= norm;
            }
        }
    }
    r
}

fn replace_with_random_orthonormal(a: &mut Array2<f64>, j: usize, rng: &mut ChaCha8Rng) {
    let n = a.nrows();
    loop {
        for t in 0..n {
            a[[t, j]] = StandardNormal.sample(rng);
        }
        for _pass in 0..2 {
            for i in 0..j {
                let mut proj = 0.0;
                for t in 0..n {
                    proj += a[[t, i]] * a[[t, j]];
                }
                for t in 0..n {
                    a[[t, j]] -= proj * a[[t, i]];
                }
            }
        }
        let mut norm = 0.0;
        for t in 0..n {
            norm += a[[t, j]] * a[[t, j]];
        }
        norm = norm.sqrt();
        if norm > 1e-8 {
            for t in 0..n {
                a[[t, j]] /= norm;
            }
            return;
        }
    }
}

/// Fill a matrix with i.i.d. standard normal draws.
pub fn gaussian_matrix(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| StandardNormal.sample(rng))
}

/// Fill a matrix with i.i.d. uniform draws on (0, hi).
pub fn uniform_matrix(n: usize, k: usize, hi: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, k), |_| rng.random::<f64>() * hi)
}

/// In-place Cholesky factorization of a symmetric positive definite matrix.
/// Returns false if a pivot drops below a tiny threshold (singular input).
fn cholesky_in_place(g: &mut Array2<f64>) -> bool {
    let n = g.nrows();
    let scale = (0..n).fold(0.0_f64, |m, i| m.max(g[[i, i]].abs())).max(1.0);
    for j in 0..n {
        let mut d = g[[j, j]];
        for t in 0..j {
            d -= g[[j, t]] * g[[j, t]];
        }
        if d <= scale * 1e-14 {
            return false;
        }
        let d = d.sqrt();
        g[[j, j]] = d;
        for i in (j + 1)..n {
            let mut v = g[[i, j]];
            for t in 0..j {
                v -= g[[i, t]] * g[[j, t]];
            }
            g[[i, j]] = v / d;
        }
    }
    true
}

fn cholesky_solve_one(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut v = b[i];
        for t in 0..i {
            v -= l[[i, t]] * b[t];
        }
        b[i] = v / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for t in (i + 1)..n {
            v -= l[[t, i]] * b[t];
        }
        b[i] = v / l[[i, i]];
    }
}

/// Outcome of a normal-equation solve: `least_norm` marks the pseudoinverse
/// fallback taken when the Gram matrix was singular.
pub struct SolveOutcome {
    pub least_norm: bool,
}

/// Solve G x = b for symmetric positive semidefinite G, overwriting `b`
/// with x. Uses Cholesky; a singular G falls back to the least-norm
/// (pseudoinverse) solution via a Jacobi eigendecomposition.
pub fn solve_spd(g: &Array2<f64>, b: &mut [f64]) -> SolveOutcome {
    let mut l = g.clone();
    if cholesky_in_place(&mut l) {
        cholesky_solve_one(&l, b);
        return SolveOutcome { least_norm: false };
    }
    let (vals, vecs) = jacobi_eigh(g);
    let tol = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * 1e-12;
    let n = g.nrows();
    let mut y = vec![0.0; n];
    for j in 0..n {
        if vals[j].abs() > tol {
            let mut proj = 0.0;
            for t in 0..n {
                proj += vecs[[t, j]] * b[t];
            }
            y[j] = proj / vals[j];
        }
    }
    for (t, bt) in b.iter_mut().enumerate() {
        let mut v = 0.0;
        for j in 0..n {
            v += vecs[[t, j]] * y[j];
        }
        *bt = v;
    }
    SolveOutcome { least_norm: true }
}

/// Solve G X = B column-by-column where B is n×m, reusing one factorization.
/// Returns true if any column needed the least-norm fallback.
pub fn solve_spd_multi(g: &Array2<f64>, b: &mut Array2<f64>) -> bool {
    let mut l = g.clone();
    if cholesky_in_place(&mut l) {
        let m = b.ncols();
        let n = b.nrows();
        let mut col = vec![0.0; n];
        for j in 0..m {
            for t in 0..n {
                col[t] = b[[t, j]];
            }
            cholesky_solve_one(&l, &mut col);
            for t in 0..n {
                b[[t, j]] = col[t];
            }
        }
        return false;
    }
    let m = b.ncols();
    let n = b.nrows();
    let mut col = vec![0.0; n];
    for j in 0..m {
        for t in 0..n {
            col[t] = b[[t, j]];
        }
        solve_spd(g, &mut col);
        for t in 0..n {
            b[[t, j]] = col[t];
        }
    }
    true
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
pub fn jacobi_eigh(g: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = g.nrows();
    let mut a = g.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.diag().iter().fold(0.0_f64, |m, x| m.max(x.abs()))) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diag().to_owned(), v)
}

/// Orthonormal completion of column j of `m` against its first j columns,
/// built deterministically from the best standard basis vector.
fn complete_column(m: &mut Array2<f64>, j: usize) {
    let n = m.nrows();
    let residual_of = |m: &Array2<f64>, cand: usize| -> Vec<f64> {
        let mut col = vec![0.0; n];
        col[cand] = 1.0;
        for prev in 0..j {
            let mut proj = 0.0;
            for t in 0..n {
                proj += m[[t, prev]] * col[t];
            }
            for t in 0..n {
                col[t] -= proj * m[[t, prev]];
            }
        }
        col
    };
    let mut best = 0;
    let mut best_norm = -1.0;
    for cand in 0..n {
        let col = residual_of(m, cand);
        let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > best_norm {
            best_norm = norm;
            best = cand;
        }
    }
    let col = residual_of(m, best);
    let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
    for t in 0..n {
        m[[t, j]] = col[t] / norm;
    }
}

/// Exact SVD of a small dense q×s matrix via the eigendecomposition of the
/// smaller Gram matrix. Returns (U: q×m, d: m, V: s×m) with m = min(q, s),
/// d sorted non-increasing, orthonormal columns on both sides. Vectors of
/// zero singular values are completed deterministically from the standard
/// basis.
pub fn svd_small(c: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let (q, s) = c.dim();
    if q < s {
        let (v, d, u) = svd_small(&c.t().to_owned());
        return (u, d, v);
    }
    let m = s;
    let g = c.t().dot(c);
    let (vals, vecs) = jacobi_eigh(&g);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());

    let mut d = vec![0.0; m];
    let mut v = Array2::<f64>::zeros((s, m));
    for (pos, &idx) in order.iter().enumerate() {
        d[pos] = vals[idx].max(0.0).sqrt();
        for t in 0..s {
            v[[t, pos]] = vecs[[t, idx]];
        }
    }

    let scale = d[0].max(1.0);
    let mut u = Array2::<f64>::zeros((q, m));
    for j in 0..m {
        if d[j] > scale * 1e-13 {
            for i in 0..q {
                let mut acc = 0.0;
                for t in 0..s {
                    acc += c[[i, t]] * v[[t, j]];
                }
                u[[i, j]] = acc / d[j];
            }
        } else {
            d[j] = 0.0;
            complete_column(&mut u, j);
        }
    }
    (u, d, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn qr_produces_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut a = gaussian_matrix(20, 5, &mut rng);
        let orig = a.clone();
        let r = qr_orthonormalize(&mut a, &mut rng);
        let qtq = a.t().dot(&a);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - expect).abs() < 1e-10);
            }
        }
        let recon = a.dot(&r);
        for ((i, j), v) in orig.indexed_iter() {
            assert!((recon[[i, j]] - v).abs() < 1e-10);
        }
        for j in 0..5 {
            assert!(r[[j, j]] >= 0.0);
        }
    }

    #[test]
    fn qr_handles_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // two identical columns
        let mut a = Array2::<f64>::zeros((6, 2));
        for t in 0..6 {
            a[[t, 0]] = (t + 1) as f64;
            a[[t, 1]] = (t + 1) as f64;
        }
        let r = qr_orthonormalize(&mut a, &mut rng);
        assert_eq!(r[[1, 1]], 0.0);
        let qtq = a.t().dot(&a);
        assert!((qtq[[0, 0]] - 1.0).abs() < 1e-10);
        assert!((qtq[[1, 1]] - 1.0).abs() < 1e-10);
        assert!(qtq[[0, 1]].abs() < 1e-10);
    }

    #[test]
    fn spd_solve_matches_hand_inverse() {
        let g = array![[4.0, 1.0], [1.0, 3.0]];
        let mut b = vec![1.0, 2.0];
        let out = solve_spd(&g, &mut b);
        assert!(!out.least_norm);
        // inverse of [[4,1],[1,3]] is 1/11 [[3,-1],[-1,4]]
        assert!((b[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((b[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn singular_solve_takes_least_norm_route() {
        // rank-1 Gram matrix
        let g = array![[1.0, 1.0], [1.0, 1.0]];
        let mut b = vec![2.0, 2.0];
        let out = solve_spd(&g, &mut b);
        assert!(out.least_norm);
        // least-norm solution of x0 + x1 = 2 is (1, 1)
        assert!((b[0] - 1.0).abs() < 1e-9);
        assert!((b[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn svd_small_reconstructs_and_orders() {
        let c = array![[0.0, 2.0, 0.0], [3.0, 0.0, 0.0], [0.0, 0.0, 0.5]];
        let (u, d, v) = svd_small(&c);
        assert!((d[0] - 3.0).abs() < 1e-10);
        assert!((d[1] - 2.0).abs() < 1e-10);
        assert!((d[2] - 0.5).abs() < 1e-10);
        // reconstruction
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for t in 0..3 {
                    s += u[[i, t]] * d[t] * v[[j, t]];
                }
                assert!((s - c[[i, j]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn svd_small_handles_singular_input() {
        let c = array![[1.0, 1.0], [1.0, 1.0]];
        let (u, d, _v) = svd_small(&c);
        assert!((d[0] - 2.0).abs() < 1e-10);
        assert_eq!(d[1], 0.0);
        let utu = u.t().dot(&u);
        assert!((utu[[0, 0]] - 1.0).abs() < 1e-10);
        assert!((utu[[1, 1]] - 1.0).abs() < 1e-10);
        assert!(utu[[0, 1]].abs() < 1e-10);
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let g = array![[2.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, -1.0]];
        let (vals, _) = jacobi_eigh(&g);
        let mut sorted: Vec<f64> = vals.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((sorted[0] + 1.0).abs() < 1e-12);
        assert!((sorted[1] - 2.0).abs() < 1e-12);
        assert!((sorted[2] - 5.0).abs() < 1e-12);
    }
}
