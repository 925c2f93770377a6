//! Dense linear-algebra helpers shared by the tensor and surrogate code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Flip each column so its largest-magnitude entry is positive.
/// Ties on magnitude go to the lowest row index.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Leading `r` eigenvectors of a symmetric positive semi-definite matrix,
/// ordered by decreasing eigenvalue and sign-normalized.
///
/// Returns `None` when the eigen-solver fails to converge.
pub fn leading_eigenvectors(gram: DMatrix<f64>, r: usize) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let n = gram.nrows();
    debug_assert!(r <= n);
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vecs = DMatrix::zeros(n, r);
    let mut vals = Vec::with_capacity(r);
    for (j, &src) in order.iter().take(r).enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(src));
        vals.push(eig.eigenvalues[src]);
    }
    fix_column_signs(&mut vecs);
    Some((vecs, vals))
}

const CHOLESKY_BLOCK: usize = 96;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Left-looking blocked factorization: the bulk of the work is a single
/// matrix product per block column. Only the lower triangle of `a` is read;
/// the upper triangle of the result is zeroed. On failure the error carries
/// the pivot index that lost definiteness.
pub fn cholesky(mut a: DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut j = 0;
    while j < n {
        let nb = CHOLESKY_BLOCK.min(n - j);
        if j > 0 {
            // A[j.., j..j+nb] -= L[j.., ..j] * L[j..j+nb, ..j]^T
            let left = a.view((j, 0), (n - j, j)).clone_owned();
            let top = left.rows(0, nb).clone_owned();
            a.view_mut((j, j), (n - j, nb)).gemm(-1.0, &left, &top.transpose(), 1.0);
        }
        // unblocked factorization of the diagonal block
        for c in j..j + nb {
            let mut d = a[(c, c)];
            for k in j..c {
                d -= a[(c, k)] * a[(c, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(c);
            }
            let d = d.sqrt();
            a[(c, c)] = d;
            for r in c + 1..j + nb {
                let mut s = a[(r, c)];
                for k in j..c {
                    s -= a[(r, k)] * a[(c, k)];
                }
                a[(r, c)] = s / d;
            }
        }
        // panel below the diagonal block: P <- P * L11^{-T}
        if j + nb < n {
            let l11 = a.view((j, j), (nb, nb)).clone_owned();
            let mut pt = a.view((j + nb, j), (n - j - nb, nb)).transpose();
            if !l11.solve_lower_triangular_mut(&mut pt) {
                return Err(j);
            }
            a.view_mut((j + nb, j), (n - j - nb, nb)).copy_from(&pt.transpose());
        }
        j += nb;
    }
    a.fill_upper_triangle(0.0, 1);
    Ok(a)
}

/// Solve `L Lᵀ x = b` given the lower Cholesky factor `L`.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = l.solve_lower_triangular(b).ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    l.tr_solve_lower_triangular(&y).ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))
}

/// Largest absolute entry of `Mᵀ M − I`.
pub fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}
