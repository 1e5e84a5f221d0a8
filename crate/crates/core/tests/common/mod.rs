//! Toy instances and gradient checks shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sparge_core::graph_embedding::{build_supervised, grad_d, grad_u, project_stiefel};
use sparge_core::sparse_coding::{
    batch_encode_fidelity, code_jacobian, code_jacobian_joint, sparse_encode, sparse_encode_fidelity, Fidelity,
};
use sparge_core::{CodeMatrix, CodingParams, Dictionary, LaplacianPair, MaskedVector, StiefelProjection};

use super::oracles::{self, central_diff, gaussian, rel_error, trace_by_pairs, unit_columns};

pub const FD_STEP: f64 = 1e-5;

pub fn tight(r1: f64, r2: f64) -> CodingParams {
    CodingParams {
        tol: 1e-15,
        max_iter: 200_000,
        ..CodingParams::new(r1, r2)
    }
}

/// A small labeled, partially observed problem with a fixed dictionary and
/// projection.
pub struct Toy {
    pub d: DMatrix<f64>,
    pub samples: Vec<MaskedVector>,
    pub labels: Vec<usize>,
    pub u: StiefelProjection,
    pub lambda1: f64,
    pub params: CodingParams,
}

pub fn toy(seed: u64) -> Toy {
    let (m, k, l, n, classes) = (8, 6, 2, 12, 3);
    let mut rng = oracles::rng(seed);
    let d = unit_columns(gaussian(&mut rng, m, k));
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % classes;
        let mut coef = DVector::zeros(k);
        coef[2 * c] = 1.0 + rng.random::<f64>();
        coef[(2 * c + 1) % k] = rng.random::<f64>() - 0.5;
        let x = &d * coef + oracles::gaussian_vec(&mut rng, m) * 0.1;
        let mut mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.85)).collect();
        mask[i % m] = true;
        samples.push(MaskedVector::new(x, mask).unwrap());
        labels.push(c);
    }
    let u = project_stiefel(&gaussian(&mut rng, k, l)).unwrap();
    Toy {
        d,
        samples,
        labels,
        u,
        lambda1: 0.7,
        params: tight(0.05, 0.02),
    }
}

impl Toy {
    pub fn encode(&self, d: &DMatrix<f64>) -> Vec<sparge_core::SparseCode> {
        batch_encode_fidelity(&self.samples, self.lambda1, &Dictionary::unconstrained(d.clone()), &self.params, None)
            .unwrap()
    }

    pub fn codes(&self, d: &DMatrix<f64>) -> CodeMatrix {
        CodeMatrix::from_codes(d.ncols(), &self.encode(d))
    }

    pub fn pair(&self) -> LaplacianPair {
        build_supervised(&self.codes(&self.d), &self.labels, &self.u, 2, 2).unwrap()
    }
}

fn quotient_by_pairs(u: &DMatrix<f64>, phi: &DMatrix<f64>, pair: &LaplacianPair) -> f64 {
    trace_by_pairs(u, phi, &pair.num) / trace_by_pairs(u, phi, &pair.den)
}

fn active_sets(codes: &[sparge_core::SparseCode]) -> Vec<Vec<usize>> {
    codes.iter().map(|c| c.active_set.clone()).collect()
}

/// Full Jacobian `∂φ/∂D` (k × mk) by applying `apply` to every unit
/// perturbation.
fn jacobian_matrix(m: usize, k: usize, apply: impl Fn(&DMatrix<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(k, m * k);
    for idx in 0..m * k {
        let mut e = DMatrix::zeros(m, k);
        e[idx] = 1.0;
        out.set_column(idx, &apply(&e));
    }
    out
}

/// Relative error of the analytic code Jacobians (plain and masked) against
/// central differences, or `None` when some active set moves under ±h or a
/// code sits on the complementarity boundary.
pub fn jacobian_error(seed: u64) -> Option<f64> {
    let t = toy(seed);
    let (m, k) = t.d.shape();
    let dict = Dictionary::unconstrained(t.d.clone());
    let mut worst: f64 = 0.0;
    for x in t.samples.iter().take(4) {
        let full = x.values().clone();
        let code = sparse_encode(&full, &dict, &t.params).unwrap();
        let jac = code_jacobian(&full, &dict, &code, &t.params).ok()?;
        let fid = Fidelity { x, lambda1: t.lambda1 };
        let joint = sparse_encode_fidelity(fid, &dict, &t.params).unwrap();
        let jac_joint = code_jacobian_joint(fid, &dict, &joint, &t.params).ok()?;

        let mut switched = false;
        let mut fd = |enc: &dyn Fn(&Dictionary) -> sparge_core::SparseCode, base: &[usize]| {
            let mut out = DMatrix::zeros(k, m * k);
            for idx in 0..m * k {
                let probe = |s: f64| {
                    let mut moved = t.d.clone();
                    moved[idx] += s * FD_STEP;
                    enc(&Dictionary::unconstrained(moved))
                };
                let (p, q) = (probe(1.0), probe(-1.0));
                switched |= p.active_set != base || q.active_set != base;
                out.set_column(idx, &((p.phi - q.phi) / (2.0 * FD_STEP)));
            }
            out
        };
        let numeric = fd(&|dd| sparse_encode(&full, dd, &t.params).unwrap(), &code.active_set);
        let numeric_joint = fd(&|dd| sparse_encode_fidelity(fid, dd, &t.params).unwrap(), &joint.active_set);
        if switched {
            return None;
        }
        worst = worst.max(rel_error(&jacobian_matrix(m, k, |e| jac.apply(e)), &numeric));
        worst = worst.max(rel_error(&jacobian_matrix(m, k, |e| jac_joint.apply(e)), &numeric_joint));
    }
    Some(worst)
}

/// Relative error of the frozen-graph `∂(quotient)/∂U`.
pub fn grad_u_error(seed: u64) -> f64 {
    let t = toy(seed);
    let codes = t.codes(&t.d);
    let pair = t.pair();
    let analytic = grad_u(&t.u, &codes, &pair, true).unwrap();
    let numeric = central_diff(t.u.matrix(), FD_STEP, |u| quotient_by_pairs(u, codes.codes(), &pair));
    rel_error(&analytic, &numeric)
}

/// Relative error of the end-to-end `∂(quotient)/∂D` through re-encoding,
/// or `None` when an active set moves under ±h or a sample has no Jacobian.
pub fn grad_d_error(seed: u64) -> Option<f64> {
    let t = toy(seed);
    let dict = Dictionary::unconstrained(t.d.clone());
    let codes = t.encode(&t.d);
    let phi = CodeMatrix::from_codes(t.d.ncols(), &codes);
    let pair = t.pair();
    let jacobians: Vec<_> = codes
        .iter()
        .zip(&t.samples)
        .map(|(c, x)| code_jacobian_joint(Fidelity { x, lambda1: t.lambda1 }, &dict, c, &t.params).ok())
        .collect();
    if jacobians.iter().any(Option::is_none) {
        return None;
    }
    let analytic = grad_d(&t.u, &phi, &pair, &jacobians, t.d.nrows()).unwrap();
    let base = active_sets(&codes);
    let mut switched = false;
    let numeric = central_diff(&t.d, FD_STEP, |dd| {
        let moved = t.encode(dd);
        switched |= active_sets(&moved) != base;
        quotient_by_pairs(t.u.matrix(), CodeMatrix::from_codes(dd.ncols(), &moved).codes(), &pair)
    });
    if switched {
        return None;
    }
    Some(rel_error(&analytic.grad, &numeric))
}

/// Runs `check` over seeds from `start` until `want` instances away from
/// active-set boundaries have been collected.
pub fn over_clean_seeds(start: u64, want: usize, check: impl Fn(u64) -> Option<f64>) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    for seed in start..start + 20 * want as u64 {
        if let Some(e) = check(seed) {
            out.push((seed, e));
            if out.len() == want {
                break;
            }
        }
    }
    out
}

pub fn embedded(u: &StiefelProjection, codes: &DMatrix<f64>) -> DMatrix<f64> {
    u.matrix().transpose() * codes
}
