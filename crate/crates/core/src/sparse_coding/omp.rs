use nalgebra::{DMatrix, DVector};

use super::{Dictionary, SparseCode};
use crate::error::{Result, SpargeError};
use crate::linalg;

/// Correlations within this relative distance of the maximum count as tied.
const TIE_RTOL: f64 = 1e-12;

/// Orthogonal matching pursuit with at most `t` atoms. Ties go to the lowest
/// index; the coefficients are the minimum-norm least-squares fit on the
/// selected atoms.
pub fn omp_encode(z: &DVector<f64>, d: &Dictionary, t: usize) -> Result<SparseCode> {
    if z.len() != d.dim() {
        return Err(SpargeError::dims("sample vs dictionary rows", d.dim(), z.len()));
    }
    if t == 0 || t > d.len() {
        return Err(SpargeError::InvalidParameter(format!(
            "OMP sparsity must be in 1..={} (got {t})",
            d.len()
        )));
    }
    Ok(omp_unchecked(z, d.atoms(), t))
}

pub(crate) fn omp_unchecked(z: &DVector<f64>, atoms: &DMatrix<f64>, t: usize) -> SparseCode {
    let k = atoms.ncols();
    let floor = z.norm() * 1e-14;
    let mut selected: Vec<usize> = Vec::with_capacity(t);
    let mut coef = DVector::zeros(0);
    let mut residual = z.clone();
    let mut rounds = 0;
    while selected.len() < t {
        if residual.norm() <= floor {
            break;
        }
        let corr = atoms.transpose() * &residual;
        let best = (0..k)
            .filter(|j| !selected.contains(j))
            .map(|j| corr[j].abs())
            .fold(0.0_f64, f64::max);
        if best <= 0.0 {
            break;
        }
        let pick = (0..k)
            .find(|&j| !selected.contains(&j) && corr[j].abs() >= best * (1.0 - TIE_RTOL))
            .expect("maximum is attained");
        selected.push(pick);
        rounds += 1;
        let sub = linalg::select_columns(atoms, &selected);
        coef = match linalg::lstsq_min_norm(&sub, z) {
            Ok(c) => c,
            Err(_) => break,
        };
        residual = z - sub * &coef;
    }
    let mut phi = DVector::zeros(k);
    for (&j, &c) in selected.iter().zip(coef.iter()) {
        phi[j] = c;
    }
    let residual_norm = (z - atoms * &phi).norm();
    SparseCode::from_phi(phi, residual_norm, true, rounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_single_best_atom() {
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        let z = DVector::from_vec(vec![0.2, -0.9, 0.1]);
        let code = omp_encode(&z, &d, 1).unwrap();
        assert!((&code.phi - DVector::from_vec(vec![0.0, -0.9, 0.0])).amax() < 1e-12);
        assert_eq!(code.active_set, vec![1]);
        assert_eq!(code.signs, vec![-1.0]);
    }

    #[test]
    fn full_support_is_exact() {
        let d = Dictionary::normalized(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.1, 0.2, 1.0, 0.3, -0.4, 0.1, 1.0],
        ))
        .unwrap();
        let z = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let code = omp_encode(&z, &d, 3).unwrap();
        assert!((d.atoms() * &code.phi - z).amax() < 1e-10);
    }

    #[test]
    fn duplicated_atoms_tie_to_lowest_index() {
        let s = 0.5_f64.sqrt();
        let d = Dictionary::new(DMatrix::from_row_slice(2, 3, &[0.0, s, s, 1.0, s, s])).unwrap();
        let z = DVector::from_vec(vec![1.0, 1.0]);
        let code = omp_encode(&z, &d, 1).unwrap();
        assert_eq!(code.active_set, vec![1]);
    }

    #[test]
    fn sparsity_bounds_checked() {
        let d = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let z = DVector::from_vec(vec![1.0, 1.0]);
        assert!(omp_encode(&z, &d, 0).is_err());
        assert!(omp_encode(&z, &d, 3).is_err());
    }
}
