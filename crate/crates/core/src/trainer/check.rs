use nalgebra::DMatrix;

use super::{initialize, Hyperparams, Problem, State};
use crate::error::Result;
use crate::graph_embedding::{self, LaplacianPair};
use crate::matrix_recovery::ObservedMatrix;
use crate::sparse_coding::{CodeMatrix, Dictionary};

/// Analytic versus central-difference gradients at the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// `‖G − G_fd‖_F / ‖G_fd‖_F` for the projection.
    pub grad_u_rel_error: f64,
    /// Same for the dictionary.
    pub grad_d_rel_error: f64,
    /// An active set changed between the ±h probes; the dictionary check is
    /// then unreliable.
    pub boundary: bool,
    /// Samples without a Jacobian (left out of the analytic gradient).
    pub excluded: usize,
    pub h: f64,
}

/// Quotient for an arbitrary (not necessarily orthonormal) `u`.
fn quotient_raw(u: &DMatrix<f64>, phi: &DMatrix<f64>, pair: &LaplacianPair) -> f64 {
    let b = phi.tr_mul(u);
    let num = (&pair.num * &b).component_mul(&b).sum();
    let den = (&pair.den * &b).component_mul(&b).sum();
    num / den
}

pub(crate) fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let diff = (analytic - numeric).norm();
    let scale = numeric.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Frozen-graph central differences of the quotient in U and, through
/// re-encoding, in D.
pub fn gradcheck(x: &ObservedMatrix, labels: Option<&[usize]>, hp: &Hyperparams, h: f64) -> Result<GradcheckReport> {
    let problem = Problem::new(x, labels, hp)?;
    let init = initialize(x, labels, hp)?;
    let s = State::at(&problem, init.dictionary, init.projection, Some(init.codes.codes()))?;
    let pair = &s.pair;
    let phi = s.phi.codes();
    let u = s.u.matrix();

    let analytic_u = graph_embedding::grad_u(&s.u, &s.phi, pair, true)?;
    let mut numeric_u = DMatrix::zeros(u.nrows(), u.ncols());
    for idx in 0..u.len() {
        let mut plus = u.clone();
        let mut minus = u.clone();
        plus[idx] += h;
        minus[idx] -= h;
        numeric_u[idx] = (quotient_raw(&plus, phi, pair) - quotient_raw(&minus, phi, pair)) / (2.0 * h);
    }

    let jac = problem.jacobians(&s.d, &s.codes);
    let analytic_d = graph_embedding::grad_d(&s.u, &s.phi, pair, &jac, s.d.dim())?;
    let d = s.d.atoms();
    let mut numeric_d = DMatrix::zeros(d.nrows(), d.ncols());
    let mut boundary = false;
    let base_sets: Vec<&Vec<usize>> = s.codes.iter().map(|c| &c.active_set).collect();
    for idx in 0..d.len() {
        let probe = |sign: f64| -> Result<(f64, bool)> {
            let mut moved = d.clone();
            moved[idx] += sign * h;
            let codes = problem.encode(&Dictionary::unconstrained(moved), Some(phi))?;
            let switched = codes.iter().zip(&base_sets).any(|(c, b)| &c.active_set != *b);
            let m = CodeMatrix::from_codes(d.ncols(), &codes);
            Ok((quotient_raw(u, m.codes(), pair), switched))
        };
        let (qp, sp) = probe(1.0)?;
        let (qm, sm) = probe(-1.0)?;
        boundary |= sp || sm;
        numeric_d[idx] = (qp - qm) / (2.0 * h);
    }
    if boundary {
        log::warn!("active set changed under ±{h:e}; dictionary check flagged");
    }
    Ok(GradcheckReport {
        grad_u_rel_error: relative_error(&analytic_u, &numeric_u),
        grad_d_rel_error: relative_error(&analytic_d.grad, &numeric_d),
        boundary,
        excluded: analytic_d.excluded,
        h,
    })
}
