//! Small dense linear algebra for the low-dimensional (d <= ~10) problems
//! this crate works with: symmetric eigendecomposition, PSD clipping,
//! pseudoinverse solves and Gram-Schmidt orthonormalization.
//!
//! Matrices are row-major `Vec<Vec<f64>>`; this keeps the hot paths free of
//! external dependencies and is plenty fast at these sizes.

// index loops read better than iterator chains for the matrix kernels here
#![allow(clippy::needless_range_loop)]

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(a: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// x' M x for a square matrix M.
pub fn quad_form(m: &[Vec<f64>], x: &[f64]) -> f64 {
    dot(x, &mat_vec(m, x))
}

pub fn zeros_mat(n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n]; n]
}

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    let mut m = zeros_mat(n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn symmetrize(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut out = zeros_mat(n);
    for i in 0..n {
        for j in 0..n {
            out[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    out
}

pub fn frobenius_norm(m: &[Vec<f64>]) -> f64 {
    m.iter().flat_map(|r| r.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Adds `alpha * x x'` to `m` in place.
pub fn add_outer(m: &mut [Vec<f64>], alpha: f64, x: &[f64]) {
    for i in 0..x.len() {
        for j in 0..x.len() {
            m[i][j] += alpha * x[i] * x[j];
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, vectors)` where `vectors[..][k]` is the k-th
/// eigenvector (columns), so `m = V diag(lambda) V'`.
pub fn sym_eig(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a = symmetrize(m);
    let mut v = identity(n);
    if n <= 1 {
        return (vec![if n == 1 { a[0][0] } else { 0.0 }; n], v);
    }
    let scale = frobenius_norm(&a).max(1.0);
    let tol = 1e-15 * scale;
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= tol * 1e-2 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/columns p and q of a
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i][i]).collect();
    (eig, v)
}

/// Clips tiny negative eigenvalues of a symmetric matrix to zero.
///
/// Fails with the offending eigenvalue when one lies below
/// `-rel_tol * max(|lambda|)`.
pub fn psd_clip(m: &[Vec<f64>], rel_tol: f64) -> Result<Vec<Vec<f64>>, f64> {
    let n = m.len();
    let (eig, v) = sym_eig(m);
    let scale = eig.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    let floor = -rel_tol * scale.max(1e-300);
    let mut out = zeros_mat(n);
    for (k, &lam) in eig.iter().enumerate() {
        if lam < floor {
            return Err(lam);
        }
        let lam = lam.max(0.0);
        if lam == 0.0 {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| v[i][k]).collect();
        add_outer(&mut out, lam, &col);
    }
    Ok(symmetrize(&out))
}

/// Minimum-norm least-squares solve of the symmetric system `a x = b`
/// via eigendecomposition (Moore-Penrose).
///
/// Returns the solution and the residual `||a x - b||`.
pub fn pinv_solve(a: &[Vec<f64>], b: &[f64], rel_tol: f64) -> (Vec<f64>, f64) {
    let n = a.len();
    let (eig, v) = sym_eig(a);
    let scale = eig.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    let cutoff = rel_tol * scale.max(1e-300);
    let mut x = vec![0.0; n];
    for (k, &lam) in eig.iter().enumerate() {
        if lam.abs() <= cutoff {
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| v[i][k]).collect();
        let coeff = dot(&col, b) / lam;
        axpy(&mut x, coeff, &col);
    }
    let residual = norm(&sub(&mat_vec(a, &x), b));
    (x, residual)
}

/// Factors a symmetric PSD matrix as `m = sum_j g_j g_j'` and returns the
/// columns `g_j = sqrt(lambda_j) q_j` for the numerically positive
/// eigenvalues. The number of columns is the numerical rank.
pub fn psd_factor(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let (eig, v) = sym_eig(m);
    let scale = eig.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    let cutoff = 1e-12 * scale.max(1e-300);
    let mut cols = Vec::new();
    for (k, &lam) in eig.iter().enumerate() {
        if lam <= cutoff {
            continue;
        }
        let s = lam.sqrt();
        cols.push((0..n).map(|i| s * v[i][k]).collect());
    }
    cols
}

/// Gram-Schmidt orthonormalization; near-dependent inputs are dropped.
pub fn orthonormalize(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for b in &basis {
            let c = dot(&w, b);
            axpy(&mut w, -c, b);
        }
        // re-orthogonalize once for numerical safety
        for b in &basis {
            let c = dot(&w, b);
            axpy(&mut w, -c, b);
        }
        let nw = norm(&w);
        if nw > 1e-12 * norm(v).max(1.0) {
            basis.push(scale(&w, 1.0 / nw));
        }
    }
    basis
}
