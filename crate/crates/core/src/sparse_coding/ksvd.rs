use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::omp::omp_unchecked;
use super::Dictionary;
use crate::error::{Result, SpargeError};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsvdParams {
    /// Number of atoms.
    pub k: usize,
    /// OMP sparsity per column.
    pub t: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl KsvdParams {
    pub fn new(k: usize, t: usize, seed: u64) -> Self {
        KsvdParams {
            k,
            t,
            iterations: 30,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KsvdResult {
    pub dictionary: Dictionary,
    /// Sparse codes of the training columns under the final dictionary.
    pub codes: DMatrix<f64>,
    /// `‖Z − DΦ‖_F` after each iteration.
    pub error_trace: Vec<f64>,
}

fn column_errors(z: &DMatrix<f64>, d: &DMatrix<f64>, codes: &DMatrix<f64>) -> Vec<f64> {
    let r = z - d * codes;
    r.column_iter().map(|c| c.norm_squared()).collect()
}

/// K-SVD: seeded column initialization, OMP coding, rank-1 atom refits.
///
/// A column only swaps to its new OMP code when that code reconstructs it at
/// least as well as the previous one, so the logged error never increases.
/// Atoms that lose all support are re-seeded from the normalized residual of
/// the worst-reconstructed column.
pub fn ksvd_learn(z: &DMatrix<f64>, params: &KsvdParams) -> Result<KsvdResult> {
    let (m, n) = z.shape();
    let KsvdParams { k, t, iterations, seed } = *params;
    if k == 0 || t == 0 || iterations == 0 {
        return Err(SpargeError::InvalidParameter(
            "K-SVD needs k, T and iterations >= 1".into(),
        ));
    }
    if k > n {
        return Err(SpargeError::InvalidParameter(format!(
            "K-SVD dictionary size {k} exceeds sample count {n}"
        )));
    }
    if t > k {
        return Err(SpargeError::InvalidParameter(format!(
            "K-SVD sparsity {t} exceeds dictionary size {k}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(SpargeError::NonFinite("K-SVD input"));
    }
    let nonzero: Vec<usize> = (0..n).filter(|&i| z.column(i).norm_squared() > 0.0).collect();
    if nonzero.is_empty() {
        return Err(SpargeError::EmptyInput("K-SVD input is all zero"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DMatrix::zeros(m, k);
    let picks = sample(&mut rng, nonzero.len(), k.min(nonzero.len())).into_vec();
    for (j, &p) in picks.iter().enumerate() {
        let col = z.column(nonzero[p]);
        d.set_column(j, &(col / col.norm()));
    }
    for j in picks.len()..k {
        let g = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        d.set_column(j, &g.normalize());
    }

    let mut codes = DMatrix::zeros(k, n);
    let mut trace = Vec::with_capacity(iterations);
    for iter in 0..iterations {
        let fresh: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|i| omp_unchecked(&z.column(i).into_owned(), &d, t).phi)
            .collect();
        let old_err = column_errors(z, &d, &codes);
        for (i, phi) in fresh.into_iter().enumerate() {
            let new_err = (z.column(i) - &d * &phi).norm_squared();
            if iter == 0 || new_err <= old_err[i] {
                codes.set_column(i, &phi);
            }
        }

        for j in 0..k {
            let support: Vec<usize> = (0..n).filter(|&i| codes[(j, i)] != 0.0).collect();
            if support.is_empty() {
                let errs = column_errors(z, &d, &codes);
                let (worst, &e) = errs
                    .iter()
                    .enumerate()
                    .fold((0, &errs[0]), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
                if e > 0.0 {
                    let r = z.column(worst) - &d * codes.column(worst);
                    d.set_column(j, &(&r / r.norm()));
                }
                continue;
            }
            let z_s = linalg::select_columns(z, &support);
            let c_s = linalg::select_columns(&codes, &support);
            let atom = d.column(j).into_owned();
            let row: DVector<f64> = DVector::from_iterator(support.len(), support.iter().map(|&i| codes[(j, i)]));
            let e = z_s - &d * c_s + &atom * row.transpose();
            let dec = linalg::svd(&e)?;
            let s1 = dec.singular_values[0];
            if s1 == 0.0 {
                continue;
            }
            d.set_column(j, &dec.u.column(0));
            for (c, &i) in support.iter().enumerate() {
                codes[(j, i)] = s1 * dec.v_t[(0, c)];
            }
        }
        trace.push((z - &d * &codes).norm());
        log::debug!("ksvd iteration {} error {:.6e}", iter + 1, trace[iter]);
    }

    Ok(KsvdResult {
        dictionary: Dictionary::normalized(d)?,
        codes,
        error_trace: trace,
    })
}
