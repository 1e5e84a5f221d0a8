mod common;
mod oracles;

use nalgebra::DVector;
use proptest::prelude::*;
use sparge_core::sparse_coding::{
    closed_form_check, coding_objective, sparse_encode, sparse_encode_fidelity, sparse_encode_joint, Fidelity,
};
use sparge_core::{CodingParams, Dictionary, MaskedVector};

use common::tight;
use oracles::{elastic_net_oracle, gaussian, gaussian_vec, stationarity_violation, unit_columns};

#[test]
fn coordinate_descent_matches_sign_enumeration() {
    for seed in 0..4 {
        let mut rng = oracles::rng(seed);
        let d = unit_columns(gaussian(&mut rng, 6, 9));
        let z = gaussian_vec(&mut rng, 6);
        let params = tight(0.1, 0.05);
        let code = sparse_encode(&z, &Dictionary::new(d.clone()).unwrap(), &params).unwrap();
        let oracle = elastic_net_oracle(&z, &d, params.r1, params.r2);
        assert!(code.converged);
        assert!((&code.phi - &oracle).amax() < 1e-6, "seed {seed}");
        assert!(stationarity_violation(&z, &d, &code.phi, params.r1, params.r2) < 1e-8);
    }
}

#[test]
fn fidelity_solvers_agree() {
    let mut rng = oracles::rng(11);
    let d = Dictionary::new(unit_columns(gaussian(&mut rng, 7, 5))).unwrap();
    let params = tight(0.05, 0.01);
    for trial in 0..5 {
        let values = gaussian_vec(&mut rng, 7);
        let mask: Vec<bool> = (0..7).map(|i| (i + trial) % 3 != 0).collect();
        let x = MaskedVector::new(values, mask).unwrap();
        let fid = Fidelity { x: &x, lambda1: 0.8 };
        let direct = sparse_encode_fidelity(fid, &d, &params).unwrap();
        let z0 = DVector::zeros(7);
        let joint = sparse_encode_joint(&z0, fid, &d, &params).unwrap();
        assert!((&direct.phi - &joint.phi).amax() < 1e-7, "trial {trial}");
        let zd = direct.z.as_ref().unwrap();
        let zj = joint.z.as_ref().unwrap();
        assert!((zd - zj).amax() < 1e-7);
    }
}

#[test]
fn jacobians_match_finite_differences() {
    let clean = common::over_clean_seeds(0, 3, common::jacobian_error);
    assert_eq!(clean.len(), 3, "too few instances away from active-set boundaries");
    for (seed, err) in clean {
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
    (
        prop::collection::vec(-2.0..2.0f64, 5 * 7),
        prop::collection::vec(-3.0..3.0f64, 5),
        0.01..0.5f64,
        0.0..0.2f64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codes_are_stationary_and_match_closed_form((atoms, z, r1, r2) in instance()) {
        let d = nalgebra::DMatrix::from_vec(5, 7, atoms);
        prop_assume!(d.column_iter().all(|c| c.norm() > 0.1));
        let dict = Dictionary::normalized(d).unwrap();
        let z = DVector::from_vec(z);
        let params = CodingParams { tol: 1e-13, max_iter: 100_000, ..CodingParams::new(r1, r2) };
        let code = sparse_encode(&z, &dict, &params).unwrap();
        prop_assume!(code.converged);
        prop_assert!(stationarity_violation(&z, dict.atoms(), &code.phi, r1, r2) < 1e-7);
        prop_assert!(closed_form_check(&code, &z, &dict, &params).unwrap() < 1e-6);
        let zero = DVector::zeros(7);
        prop_assert!(coding_objective(&z, &dict, &code.phi, &params) <= coding_objective(&z, &dict, &zero, &params) + 1e-12);
        for (&j, &s) in code.active_set.iter().zip(&code.signs) {
            prop_assert_eq!(code.phi[j].signum(), s);
        }
    }

    #[test]
    fn large_l1_weight_gives_zero_code((atoms, z, _r1, r2) in instance()) {
        let d = nalgebra::DMatrix::from_vec(5, 7, atoms);
        prop_assume!(d.column_iter().all(|c| c.norm() > 0.1));
        let dict = Dictionary::normalized(d).unwrap();
        let z = DVector::from_vec(z);
        let bound = (dict.atoms().transpose() * &z).amax();
        let params = CodingParams::new(bound * 1.001 + 1e-9, r2);
        let code = sparse_encode(&z, &dict, &params).unwrap();
        prop_assert!(code.active_set.is_empty());
    }
}
