//! Dense linear-algebra helpers shared by the model and solver code.
//!
//! Large products and factorizations route through here so the expensive paths
//! (Gram matrices, column-pivoted selection, singular-value truncation) live in
//! one place and can exploit the `parallel` feature.

use nalgebra::{DMatrix, DVector};

/// Map `f` over 0..n, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub(crate) fn par_map_idx<T: Send, F: Fn(usize) -> T + Send + Sync>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map_idx<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// aᵀa, symmetrized. Column blocks are computed independently so the product
/// parallelizes without changing the result.
pub(crate) fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let at = a.transpose();
    let block = 512usize;
    let nblocks = n.div_ceil(block.max(1));
    let parts = par_map_idx(nblocks, |bi| {
        let j0 = bi * block;
        let w = block.min(n - j0);
        &at * a.columns(j0, w)
    });
    let mut c = DMatrix::zeros(n, n);
    for (bi, part) in parts.iter().enumerate() {
        c.columns_mut(bi * block, part.ncols()).copy_from(part);
    }
    symmetrize(&mut c);
    c
}

/// aᵀ b with the same block layout as [`gram`].
pub(crate) fn gemm_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "gemm_tn row mismatch");
    let n = b.ncols();
    let at = a.transpose();
    let block = 512usize;
    let nblocks = n.div_ceil(block.max(1));
    let parts = par_map_idx(nblocks, |bi| {
        let j0 = bi * block;
        let w = block.min(n - j0);
        &at * b.columns(j0, w)
    });
    let mut c = DMatrix::zeros(a.ncols(), n);
    for (bi, part) in parts.iter().enumerate() {
        c.columns_mut(bi * block, part.ncols()).copy_from(part);
    }
    c
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Max-abs entry; 0 for empty vectors (unlike `amax`, which panics).
pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

/// Numerical rank at a tolerance relative to the largest singular value.
///
/// Tall or wide matrices are first compressed by an (unpivoted) QR of the long
/// side, which leaves the singular values unchanged.
pub(crate) fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> (usize, f64) {
    let sig = compressed_singular_values(m);
    let smax = sig.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return (0, 0.0);
    }
    let tol = rel_tol * smax;
    (sig.iter().filter(|&&s| s > tol).count(), smax)
}

fn compressed_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let square = if r > c {
        nalgebra::linalg::QR::new(m.clone()).r()
    } else if c > r {
        nalgebra::linalg::QR::new(m.transpose()).r()
    } else {
        m.clone()
    };
    nalgebra::linalg::SVD::new(square, false, false).singular_values.iter().cloned().collect()
}

/// Which side the orthonormal factor of [`SvdFactors`] lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FactorSide {
    Left,
    Right,
}

/// Singular values plus an orthonormal basis of the smaller side, enough to
/// form any singular-value truncation of the original matrix as a projection.
pub(crate) struct SvdFactors {
    pub side: FactorSide,
    /// Descending.
    pub sigmas: Vec<f64>,
    /// Columns are the singular vectors matching `sigmas`.
    pub basis: DMatrix<f64>,
}

/// Threshold above which the Gram-eigendecomposition path is used instead of a
/// direct SVD. The Gram route squares the condition number, so it is reserved
/// for matrices where a direct decomposition would be too slow; relative
/// thresholds far above sqrt(machine eps) are unaffected.
const DIRECT_SVD_LIMIT: usize = 512;

pub(crate) fn svd_factors(m: &DMatrix<f64>) -> SvdFactors {
    let (r, c) = m.shape();
    let side = if r <= c { FactorSide::Left } else { FactorSide::Right };
    if r.min(c) <= DIRECT_SVD_LIMIT {
        let svd = nalgebra::linalg::SVD::new(m.clone(), true, true);
        let sigmas: Vec<f64> = svd.singular_values.iter().cloned().collect();
        let basis = match side {
            FactorSide::Left => svd.u.expect("svd requested u"),
            FactorSide::Right => svd.v_t.expect("svd requested v").transpose(),
        };
        SvdFactors { side, sigmas, basis }
    } else {
        let g = match side {
            FactorSide::Left => {
                let mt = m.transpose();
                gemm_tn(&mt, &mt)
            }
            FactorSide::Right => gram(m),
        };
        let eig = nalgebra::linalg::SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).expect("finite eigenvalues")
        });
        let sigmas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
        let mut basis = DMatrix::zeros(eig.eigenvectors.nrows(), order.len());
        for (k, &i) in order.iter().enumerate() {
            basis.column_mut(k).copy_from(&eig.eigenvectors.column(i));
        }
        SvdFactors { side, sigmas, basis }
    }
}

/// Rank-truncated reconstruction keeping singular values >= `threshold`.
/// Returns the reconstruction and the number of values kept.
pub(crate) fn truncate_with_factors(
    m: &DMatrix<f64>,
    f: &SvdFactors,
    threshold: f64,
) -> (DMatrix<f64>, usize) {
    let kept = f.sigmas.iter().filter(|&&s| s >= threshold).count();
    if kept == f.sigmas.len() {
        return (m.clone(), kept);
    }
    let b = f.basis.columns(0, kept);
    let out = match f.side {
        FactorSide::Left => {
            let coeff = gemm_tn(&b.into_owned(), m);
            f.basis.columns(0, kept) * coeff
        }
        FactorSide::Right => {
            let mb = m * b;
            mb * f.basis.columns(0, kept).transpose()
        }
    };
    (out, kept)
}

/// Pivot order of a column-pivoted QR, computed by Gram-Schmidt with residual
/// norm downdating. Only the first `k` pivots are produced, which keeps the
/// cost at O(k * rows * cols) instead of a full decomposition.
///
/// Columns whose residual drops to (numerical) zero no longer extend the
/// orthonormal basis but are still ordered by their downdated norms, so asking
/// for more pivots than the rank stays deterministic.
pub(crate) fn pivoted_columns(m: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let cols = m.ncols();
    let kmax = k.min(cols);
    let mut norms2: Vec<f64> = (0..cols).map(|j| m.column(j).norm_squared()).collect();
    let scale = norms2.iter().cloned().fold(0.0_f64, f64::max);
    let drop_tol = scale * 1e-28; // residual norm ~1e-14 relative
    let mut taken = vec![false; cols];
    let mut pivots = Vec::with_capacity(kmax);
    let mut qbasis: Vec<DVector<f64>> = Vec::new();

    for _ in 0..kmax {
        let mut best = usize::MAX;
        let mut best_val = -1.0;
        for j in 0..cols {
            if !taken[j] && norms2[j] > best_val {
                best_val = norms2[j];
                best = j;
            }
        }
        let j = best;
        taken[j] = true;
        pivots.push(j);

        if best_val <= drop_tol {
            continue;
        }
        // orthonormalize column j against the basis (two Gram-Schmidt passes)
        let mut v: DVector<f64> = m.column(j).into_owned();
        for _ in 0..2 {
            for q in &qbasis {
                let r = q.dot(&v);
                v.axpy(-r, q, 1.0);
            }
        }
        let vn = v.norm();
        if vn * vn <= drop_tol {
            continue;
        }
        v /= vn;
        // downdate the candidate norms by the new direction's contribution
        let updates = par_map_idx(cols, |jj| {
            if taken[jj] {
                0.0
            } else {
                let r = v.dot(&m.column(jj));
                r * r
            }
        });
        for (jj, u) in updates.iter().enumerate() {
            if !taken[jj] {
                norms2[jj] = (norms2[jj] - u).max(0.0);
            }
        }
        qbasis.push(v);
    }
    pivots
}

/// Orthonormal basis of the (right) nullspace at a relative singular-value
/// tolerance. Wide matrices are zero-padded to square so the full set of right
/// singular vectors is available.
pub(crate) fn nullspace(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let work = if r < c {
        let mut padded = DMatrix::zeros(c, c);
        padded.rows_mut(0, r).copy_from(m);
        padded
    } else {
        m.clone()
    };
    let svd = nalgebra::linalg::SVD::new(work, false, true);
    let v_t = svd.v_t.expect("svd requested v");
    let sig = &svd.singular_values;
    let smax = sig.iter().cloned().fold(0.0_f64, f64::max);
    let tol = rel_tol * smax;
    let null_rows: Vec<usize> =
        (0..sig.len()).filter(|&i| sig[i] <= tol || smax == 0.0).collect();
    let mut basis = DMatrix::zeros(c, null_rows.len());
    for (k, &i) in null_rows.iter().enumerate() {
        basis.column_mut(k).copy_from(&v_t.row(i).transpose());
    }
    basis
}

/// Minimum-norm least-squares solution via the pseudo-inverse.
pub(crate) fn min_norm_lsq(m: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let svd = nalgebra::linalg::SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    svd.solve(b, rel_tol * smax).expect("svd solve")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn gram_matches_direct_product() {
        let a = random_matrix(7, 1100, 3);
        let g = gram(&a);
        let direct = a.transpose() * &a;
        assert_relative_eq!(g, direct, epsilon = 1e-12);
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn rank_of_constructed_low_rank_matrix() {
        let b = random_matrix(40, 3, 7);
        let c = random_matrix(3, 25, 8);
        let m = &b * &c;
        let (rank, smax) = numerical_rank(&m, 1e-10);
        assert_eq!(rank, 3);
        assert!(smax > 0.0);
        // wide orientation goes through the transpose compression
        let (rank_t, _) = numerical_rank(&m.transpose(), 1e-10);
        assert_eq!(rank_t, 3);
    }

    #[test]
    fn truncation_satisfies_eckart_young_identity() {
        for seed in [11, 12] {
            let m = random_matrix(40, 60, seed);
            let f = svd_factors(&m);
            let threshold = f.sigmas[10]; // keep 11 values (descending, kept >= threshold)
            let (mh, kept) = truncate_with_factors(&m, &f, threshold);
            assert_eq!(kept, 11);
            let err2 = (&m - &mh).norm_squared();
            let expect: f64 = f.sigmas[kept..].iter().map(|s| s * s).sum();
            assert_relative_eq!(err2, expect, max_relative = 1e-9);
        }
    }

    #[test]
    fn gram_eigen_path_matches_direct_svd() {
        // force the large path by shrinking the limit indirectly: compare the
        // projector built from Gram eigenvectors against the direct SVD one on
        // a matrix small enough to run both.
        let m = random_matrix(30, 90, 21);
        let direct = svd_factors(&m);
        // hand-built Gram route (same math as the >limit branch, Left side)
        let mt = m.transpose();
        let g = gemm_tn(&mt, &mt);
        let eig = nalgebra::linalg::SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
        let sig_gram: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
        for (a, b) in direct.sigmas.iter().zip(sig_gram.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    #[test]
    fn pivot_order_matches_library_qr() {
        // reference: recompute every residual from scratch at each step
        // instead of downdating norms
        fn naive_greedy(m: &DMatrix<f64>, k: usize) -> Vec<usize> {
            let mut basis: Vec<DVector<f64>> = Vec::new();
            let mut taken = vec![false; m.ncols()];
            let mut pivots = Vec::new();
            for _ in 0..k {
                let residual = |j: usize| {
                    let mut r = m.column(j).into_owned();
                    for _ in 0..2 {
                        for q in &basis {
                            let c = q.dot(&r);
                            r -= q * c;
                        }
                    }
                    r
                };
                let best = (0..m.ncols())
                    .filter(|&j| !taken[j])
                    .max_by(|&a, &b| {
                        residual(a).norm().partial_cmp(&residual(b).norm()).unwrap()
                    })
                    .unwrap();
                taken[best] = true;
                pivots.push(best);
                let r = residual(best);
                if r.norm() > 1e-12 {
                    basis.push(r.normalize());
                }
            }
            pivots
        }

        let m = random_matrix(12, 18, 42);
        assert_eq!(pivoted_columns(&m, 12), naive_greedy(&m, 12));
    }

    #[test]
    fn pivots_beyond_rank_are_deterministic() {
        let b = random_matrix(10, 2, 5);
        let c = random_matrix(2, 8, 6);
        let m = &b * &c; // rank 2
        let p1 = pivoted_columns(&m, 8);
        let p2 = pivoted_columns(&m, 8);
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), 8);
    }

    #[test]
    fn nullspace_is_orthonormal_annihilator() {
        let m = random_matrix(4, 9, 13);
        let n = nullspace(&m, 1e-10);
        assert_eq!(n.ncols(), 5);
        let prod = &m * &n;
        assert!(prod.norm() < 1e-10 * m.norm());
        let gram_n = n.transpose() * &n;
        assert_relative_eq!(gram_n, DMatrix::identity(5, 5), epsilon = 1e-10);
    }

    #[test]
    fn min_norm_solution_of_underdetermined_system() {
        // x + y = 2 has min-norm solution (1, 1)
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let x = min_norm_lsq(&m, &b, 1e-12);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }
}
