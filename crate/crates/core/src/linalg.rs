//! Thin wrappers over nalgebra decompositions with the conventions the rest of
//! the crate relies on (sorted spectra, finiteness checks, typed failures).

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Result, SpargeError};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 100_000;
const JACOBI_SWEEPS: usize = 100;

/// Economic SVD with singular values sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SpargeError::NonFinite("svd input"));
    }
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, cols),
        });
    }
    // nalgebra occasionally returns a factorization that does not reproduce
    // its input (seen on matrices with several exactly zero singular values).
    // One-sided Jacobi is slower but reliable there.
    let tol = 1e-10 * m.norm().max(1.0);
    if let Some(dec) = checked_svd(m.clone(), m, tol) {
        return Ok(dec);
    }
    let dec = if rows >= cols {
        jacobi_svd(m)
    } else {
        transposed(jacobi_svd(&m.transpose()))
    };
    let mut scaled = dec.u.clone();
    for (mut col, &s) in scaled.column_iter_mut().zip(dec.singular_values.iter()) {
        col *= s;
    }
    if (scaled * &dec.v_t - m).norm() > tol {
        return Err(SpargeError::SvdFailure);
    }
    Ok(dec)
}

/// One-sided (Hestenes) Jacobi SVD of a matrix with at least as many rows as
/// columns.
fn jacobi_svd(m: &DMatrix<f64>) -> Svd {
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let floor = norms.iter().copied().fold(0.0, f64::max) * f64::EPSILON * rows as f64;
    let mut u = DMatrix::zeros(rows, n);
    let mut singular_values = DVector::zeros(n);
    let mut v_sorted = DMatrix::zeros(n, n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        v_sorted.set_column(k, &v.column(j));
        if norms[j] > floor {
            singular_values[k] = norms[j];
            u.set_column(k, &(a.column(j) / norms[j]));
        } else {
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Svd {
        u,
        singular_values,
        v_t: v_sorted.transpose(),
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = c * x - s * y;
        m[(r, q)] = s * x + c * y;
    }
}

/// Fill the listed columns of `u` with unit vectors orthogonal to every other
/// column, drawn from the standard basis.
fn complete_orthonormal(u: &mut DMatrix<f64>, missing: &[usize]) {
    let rows = u.nrows();
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|k| !missing.contains(k)).collect();
    let mut basis = 0;
    for &k in missing {
        while basis < rows {
            let mut cand = DVector::zeros(rows);
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = u.column(f).dot(&cand);
                    cand -= u.column(f) * proj;
                }
            }
            let norm = cand.norm();
            if norm > 0.5 {
                u.set_column(k, &(cand / norm));
                filled.push(k);
                break;
            }
        }
    }
}

fn checked_svd(input: DMatrix<f64>, reference: &DMatrix<f64>, tol: f64) -> Option<Svd> {
    let dec = SVD::try_new(input, true, true, SVD_EPS, SVD_MAX_ITER)?;
    let (u, v_t) = (dec.u?, dec.v_t?);
    let mut scaled = u.clone();
    for (mut col, &s) in scaled.column_iter_mut().zip(dec.singular_values.iter()) {
        col *= s;
    }
    if (scaled * &v_t - reference).norm() > tol {
        return None;
    }
    Some(Svd {
        u,
        singular_values: dec.singular_values,
        v_t,
    })
}

fn transposed(dec: Svd) -> Svd {
    Svd {
        u: dec.v_t.transpose(),
        singular_values: dec.singular_values,
        v_t: dec.u.transpose(),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(svd(m)?.singular_values)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.sum())
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and the
/// eigenvectors permuted to match. Only the lower triangle is read.
pub fn symmetric_eigen_ascending(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SpargeError::NonFinite("symmetric eigensolver input"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::try_new(sym, SVD_EPS, SVD_MAX_ITER).ok_or(SpargeError::SvdFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Minimum-norm least-squares solution of `a x ≈ b` via the SVD.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let dec = svd(a)?;
    let s = &dec.singular_values;
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    let utb = dec.u.transpose() * b;
    let mut scaled = DVector::zeros(s.len());
    for i in 0..s.len() {
        if s[i] > cutoff {
            scaled[i] = utb[i] / s[i];
        }
    }
    Ok(dec.v_t.transpose() * scaled)
}

/// Select the columns listed in `idx` (in that order).
pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (dst, &src) in idx.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}
