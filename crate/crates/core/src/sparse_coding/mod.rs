//! Elastic-net sparse coding against a dictionary.
//!
//! A code minimizes `½‖z − Dφ‖² + r1‖φ‖₁ + (r2/2)‖φ‖²` and is found by cyclic
//! coordinate descent. The joint variant also optimizes the reconstruction
//! `z` against a partially observed sample `x` with weight `λ1`, alternating
//! the closed-form `z` update with re-encoding.
//!
//! Both variants share one stationarity condition on the active set Λ,
//!
//! ```text
//! D_Λᵀ W (t − Dφ) = r2 φ_Λ + r1 s_Λ
//! ```
//!
//! with `(t, W) = (z, I)` for the plain problem and
//! `(t, W) = (x, 2λ1/(1+2λ1) · diag(Ω))` once `z` is eliminated from the
//! joint one. The closed-form check and the Jacobian are both derived from it.

mod ksvd;
mod omp;

pub use ksvd::{ksvd_learn, KsvdParams, KsvdResult};
pub use omp::omp_encode;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SpargeError};
use crate::linalg;
use crate::matrix_recovery::MaskedVector;

/// Slack allowed on the unit-norm column constraint.
pub const NORM_SLACK: f64 = 1e-12;

/// Dictionary atoms as columns, each with Euclidean norm at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(SpargeError::NonFinite("dictionary atoms"));
        }
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(SpargeError::EmptyInput("dictionary"));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if norm > 1.0 + NORM_SLACK {
                return Err(SpargeError::InvalidParameter(format!(
                    "atom {j} has norm {norm} > 1"
                )));
            }
        }
        Ok(Dictionary { atoms })
    }

    /// Scale every nonzero column to unit norm.
    pub fn normalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for mut col in atoms.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        Self::new(atoms)
    }

    /// Skip the norm constraint. Meant for finite-difference probes, which
    /// step off the unit sphere; every encoder accepts the result.
    pub fn unconstrained(atoms: DMatrix<f64>) -> Self {
        Dictionary { atoms }
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Signal dimension m.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms k.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    fn check_atoms_nonzero(&self) -> Result<()> {
        for (j, col) in self.atoms.column_iter().enumerate() {
            if col.norm_squared() == 0.0 {
                return Err(SpargeError::ZeroNormAtom(j));
            }
        }
        Ok(())
    }
}

/// Euclidean projection onto `{D : ‖d_i‖ ≤ 1}`: only columns longer than 1
/// are rescaled.
pub fn project_unit_norm(d_hat: &DMatrix<f64>) -> Result<Dictionary> {
    let mut atoms = d_hat.clone();
    for mut col in atoms.column_iter_mut() {
        let norm = col.norm();
        if norm > 1.0 {
            col /= norm;
        }
    }
    Dictionary::new(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodingParams {
    /// ℓ₁ weight.
    pub r1: f64,
    /// Squared-ℓ₂ weight.
    pub r2: f64,
    /// Max coordinate change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Allow `r1 = 0` (plain ridge).
    pub allow_ridge: bool,
    /// Distance from the complementarity boundary required for a Jacobian.
    pub margin: f64,
}

impl Default for CodingParams {
    fn default() -> Self {
        CodingParams {
            r1: 0.05,
            r2: 0.01,
            tol: 1e-8,
            max_iter: 1000,
            allow_ridge: false,
            margin: 1e-7,
        }
    }
}

impl CodingParams {
    pub fn new(r1: f64, r2: f64) -> Self {
        CodingParams {
            r1,
            r2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r1 > 0.0 || (self.allow_ridge && self.r1 == 0.0)) || !self.r1.is_finite() {
            return Err(SpargeError::InvalidParameter(format!(
                "r1 must be positive (got {})",
                self.r1
            )));
        }
        if !(self.r2 >= 0.0) || !self.r2.is_finite() {
            return Err(SpargeError::InvalidParameter(format!(
                "r2 must be nonnegative (got {})",
                self.r2
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(SpargeError::InvalidParameter(
                "coding tol and max_iter must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `r1‖φ‖₁ + (r2/2)‖φ‖²`
    pub fn penalty(&self, phi: &DVector<f64>) -> f64 {
        self.r1 * phi.lp_norm(1) + 0.5 * self.r2 * phi.norm_squared()
    }
}

/// Partially observed sample and the weight of its data-fidelity term.
#[derive(Debug, Clone, Copy)]
pub struct Fidelity<'a> {
    pub x: &'a MaskedVector,
    pub lambda1: f64,
}

impl Fidelity<'_> {
    /// Weight on observed coordinates once `z` is eliminated: `2λ1/(1+2λ1)`.
    pub fn effective_weight(&self) -> f64 {
        2.0 * self.lambda1 / (1.0 + 2.0 * self.lambda1)
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.x.len() != m {
            return Err(SpargeError::dims("fidelity sample", m, self.x.len()));
        }
        if !(self.lambda1 > 0.0) || !self.lambda1.is_finite() {
            return Err(SpargeError::InvalidParameter(format!(
                "lambda1 must be positive (got {})",
                self.lambda1
            )));
        }
        if self.x.observed_count() == 0 {
            return Err(SpargeError::EmptyInput("sample with no observed coordinates"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub phi: DVector<f64>,
    /// Indices of nonzero coefficients, strictly increasing.
    pub active_set: Vec<usize>,
    /// Sign (±1) of each active coefficient, aligned with `active_set`.
    pub signs: Vec<f64>,
    /// `‖z − Dφ‖` for the final `z`.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final reconstruction `z` of a joint encode; `None` for plain codes.
    pub z: Option<DVector<f64>>,
}

impl SparseCode {
    fn from_phi(phi: DVector<f64>, residual_norm: f64, converged: bool, iterations: usize) -> Self {
        let active_set: Vec<usize> = (0..phi.len()).filter(|&j| phi[j] != 0.0).collect();
        let signs = active_set.iter().map(|&j| phi[j].signum()).collect();
        SparseCode {
            phi,
            active_set,
            signs,
            residual_norm,
            converged,
            iterations,
            z: None,
        }
    }

    pub fn zero(k: usize) -> Self {
        Self::from_phi(DVector::zeros(k), 0.0, true, 0)
    }
}

/// Codes of a batch, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    codes: DMatrix<f64>,
}

impl CodeMatrix {
    pub fn new(codes: DMatrix<f64>) -> Result<Self> {
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(SpargeError::NonFinite("code matrix"));
        }
        Ok(CodeMatrix { codes })
    }

    pub fn from_codes(k: usize, codes: &[SparseCode]) -> Self {
        let mut out = DMatrix::zeros(k, codes.len());
        for (i, c) in codes.iter().enumerate() {
            out.set_column(i, &c.phi);
        }
        CodeMatrix { codes: out }
    }

    pub fn codes(&self) -> &DMatrix<f64> {
        &self.codes
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.ncols() == 0
    }

    pub fn atoms(&self) -> usize {
        self.codes.nrows()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.codes.column(i).into_owned()
    }

    pub fn select_columns(&self, idx: &[usize]) -> CodeMatrix {
        CodeMatrix {
            codes: linalg::select_columns(&self.codes, idx),
        }
    }
}

/// Weighted least-squares view of a coding problem: target `t`, diagonal
/// weights `w` (None = identity).
struct Weighted<'a> {
    target: &'a DVector<f64>,
    weights: Option<DVector<f64>>,
}

impl Weighted<'_> {
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.weights {
            Some(w) => v.component_mul(w),
            None => v.clone(),
        }
    }

    fn gram(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.weights {
            None => d.transpose() * d,
            Some(w) => {
                let mut wd = d.clone();
                for (mut row, &wi) in wd.row_iter_mut().zip(w.iter()) {
                    row *= wi;
                }
                d.transpose() * wd
            }
        }
    }
}

fn fidelity_weights(fid: &Fidelity<'_>) -> DVector<f64> {
    let w = fid.effective_weight();
    DVector::from_iterator(
        fid.x.len(),
        fid.x.mask().iter().map(|&m| if m { w } else { 0.0 }),
    )
}

/// Symmetric soft threshold.
fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `½ φᵀGφ − cᵀφ + r1‖φ‖₁ + (r2/2)‖φ‖²`.
/// Returns (φ, converged, sweeps).
fn coordinate_descent(
    gram: &DMatrix<f64>,
    c: &DVector<f64>,
    params: &CodingParams,
    mut phi: DVector<f64>,
) -> (DVector<f64>, bool, usize) {
    let k = c.len();
    let mut q = gram * &phi;
    let mut sweeps = 0;
    let mut verified = false;
    while sweeps < params.max_iter {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for j in 0..k {
            let gjj = gram[(j, j)];
            let denom = gjj + params.r2;
            let old = phi[j];
            let new = if denom > 0.0 {
                shrink(c[j] - q[j] + gjj * old, params.r1) / denom
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                phi[j] = new;
                q.axpy(delta, &gram.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < params.tol {
            if verified {
                return (phi, true, sweeps);
            }
            // Refresh the running product once before accepting.
            q = gram * &phi;
            verified = true;
        } else {
            verified = false;
        }
    }
    (phi, false, sweeps)
}

fn check_dims(z: &DVector<f64>, d: &Dictionary) -> Result<()> {
    if z.len() != d.dim() {
        return Err(SpargeError::dims("sample vs dictionary rows", d.dim(), z.len()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(SpargeError::NonFinite("sample"));
    }
    Ok(())
}

fn encode_warm(
    z: &DVector<f64>,
    d: &Dictionary,
    gram: &DMatrix<f64>,
    params: &CodingParams,
    warm: DVector<f64>,
) -> (DVector<f64>, bool, usize) {
    let c = d.atoms.transpose() * z;
    coordinate_descent(gram, &c, params, warm)
}

/// Elastic-net code of `z` by cyclic coordinate descent.
pub fn sparse_encode(z: &DVector<f64>, d: &Dictionary, params: &CodingParams) -> Result<SparseCode> {
    params.validate()?;
    check_dims(z, d)?;
    d.check_atoms_nonzero()?;
    let gram = d.atoms.transpose() * &d.atoms;
    Ok(encode_with_gram(z, d, &gram, params))
}

fn encode_with_gram(
    z: &DVector<f64>,
    d: &Dictionary,
    gram: &DMatrix<f64>,
    params: &CodingParams,
) -> SparseCode {
    let (phi, converged, sweeps) = encode_warm(z, d, gram, params, DVector::zeros(d.len()));
    if !converged {
        log::warn!("coordinate descent stopped at max_iter={}", params.max_iter);
    }
    let residual = (z - &d.atoms * &phi).norm();
    SparseCode::from_phi(phi, residual, converged, sweeps)
}

/// Joint minimization over `(φ, z)` of
/// `½‖z − Dφ‖² + g(φ) + λ1‖(z − x)_Ω‖²`, starting from `z0`.
///
/// Alternates the closed-form `z` update (observed coordinates pulled toward
/// `x`, unobserved set to `Dφ`) with re-encoding until the code stops moving.
pub fn sparse_encode_joint(
    z0: &DVector<f64>,
    fidelity: Fidelity<'_>,
    d: &Dictionary,
    params: &CodingParams,
) -> Result<SparseCode> {
    params.validate()?;
    check_dims(z0, d)?;
    fidelity.validate(d.dim())?;
    d.check_atoms_nonzero()?;
    let gram = d.atoms.transpose() * &d.atoms;
    Ok(joint_with_gram(z0, fidelity, d, &gram, params))
}

fn joint_with_gram(
    z0: &DVector<f64>,
    fidelity: Fidelity<'_>,
    d: &Dictionary,
    gram: &DMatrix<f64>,
    params: &CodingParams,
) -> SparseCode {
    let pull = 2.0 * fidelity.lambda1;
    let x = fidelity.x.values();
    let mask = fidelity.x.mask();

    let (mut phi, _, mut total) = encode_warm(z0, d, gram, params, DVector::zeros(d.len()));
    let mut z = z0.clone();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < params.max_iter {
        rounds += 1;
        let recon = &d.atoms * &phi;
        for i in 0..z.len() {
            z[i] = if mask[i] {
                (recon[i] + pull * x[i]) / (1.0 + pull)
            } else {
                recon[i]
            };
        }
        let (next, ok, sweeps) = encode_warm(&z, d, gram, params, phi.clone());
        total += sweeps;
        let change = (&next - &phi).amax();
        phi = next;
        if change < params.tol {
            converged = ok;
            break;
        }
    }
    if !converged {
        log::warn!("joint encode stopped after {rounds} rounds without converging");
    }
    let residual = (&z - &d.atoms * &phi).norm();
    let mut code = SparseCode::from_phi(phi, residual, converged, total);
    code.z = Some(z);
    code
}

/// Same minimizer as [`sparse_encode_joint`], solved directly: with `z`
/// eliminated the code minimizes `(w/2)‖(Dφ − x)_Ω‖² + g(φ)` for
/// `w = 2λ1/(1+2λ1)`, and `z` is recovered in closed form.
pub fn sparse_encode_fidelity(
    fidelity: Fidelity<'_>,
    d: &Dictionary,
    params: &CodingParams,
) -> Result<SparseCode> {
    params.validate()?;
    fidelity.validate(d.dim())?;
    d.check_atoms_nonzero()?;
    Ok(fidelity_solve(fidelity, d, params, DVector::zeros(d.len())))
}

fn fidelity_solve(
    fidelity: Fidelity<'_>,
    d: &Dictionary,
    params: &CodingParams,
    warm: DVector<f64>,
) -> SparseCode {
    let x = fidelity.x.values();
    let problem = Weighted {
        target: x,
        weights: Some(fidelity_weights(&fidelity)),
    };
    let gram = problem.gram(&d.atoms);
    let c = d.atoms.transpose() * problem.apply(x);
    let (phi, converged, sweeps) = coordinate_descent(&gram, &c, params, warm);
    if !converged {
        log::warn!("weighted coordinate descent stopped at max_iter={}", params.max_iter);
    }
    let recon = &d.atoms * &phi;
    let pull = 2.0 * fidelity.lambda1;
    let z = DVector::from_fn(x.len(), |i, _| {
        if fidelity.x.mask()[i] {
            (recon[i] + pull * x[i]) / (1.0 + pull)
        } else {
            recon[i]
        }
    });
    let residual = (&z - recon).norm();
    let mut code = SparseCode::from_phi(phi, residual, converged, sweeps);
    code.z = Some(z);
    code
}

/// [`sparse_encode_fidelity`] over every sample, optionally warm-started.
pub fn batch_encode_fidelity(
    xs: &[MaskedVector],
    lambda1: f64,
    d: &Dictionary,
    params: &CodingParams,
    warm: Option<&DMatrix<f64>>,
) -> Result<Vec<SparseCode>> {
    params.validate()?;
    d.check_atoms_nonzero()?;
    if let Some(w) = warm {
        if w.shape() != (d.len(), xs.len()) {
            return Err(SpargeError::dims(
                "warm start codes",
                format!("{}×{}", d.len(), xs.len()),
                format!("{}×{}", w.nrows(), w.ncols()),
            ));
        }
    }
    (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let fid = Fidelity { x: &xs[i], lambda1 };
            fid.validate(d.dim()).map_err(|e| e.at_column(i))?;
            let start = warm.map_or_else(|| DVector::zeros(d.len()), |w| w.column(i).into_owned());
            Ok(fidelity_solve(fid, d, params, start))
        })
        .collect()
}

/// `f(φ) = ½‖z − Dφ‖² + r1‖φ‖₁ + (r2/2)‖φ‖²`
pub fn coding_objective(z: &DVector<f64>, d: &Dictionary, phi: &DVector<f64>, params: &CodingParams) -> f64 {
    0.5 * (z - &d.atoms * phi).norm_squared() + params.penalty(phi)
}

/// Distance (∞-norm on Λ) between a code and the active-set closed form
/// `(D_ΛᵀD_Λ + r2 I)⁻¹(D_Λᵀz − r1 s_Λ)`.
pub fn closed_form_check(
    code: &SparseCode,
    z: &DVector<f64>,
    d: &Dictionary,
    params: &CodingParams,
) -> Result<f64> {
    check_dims(z, d)?;
    if code.active_set.is_empty() {
        return Ok(0.0);
    }
    let d_act = linalg::select_columns(&d.atoms, &code.active_set);
    let mut m = d_act.transpose() * &d_act;
    for i in 0..m.nrows() {
        m[(i, i)] += params.r2;
    }
    let s = DVector::from_column_slice(&code.signs);
    let rhs = d_act.transpose() * z - s * params.r1;
    let closed = match linalg::solve_spd(&m, &rhs) {
        Some(v) => v,
        None if params.r2 == 0.0 => return Err(SpargeError::DegenerateGram),
        None => m.lu().solve(&rhs).ok_or(SpargeError::DegenerateGram)?,
    };
    Ok(code
        .active_set
        .iter()
        .zip(closed.iter())
        .map(|(&j, &v)| (code.phi[j] - v).abs())
        .fold(0.0, f64::max))
}

/// Encode every column of `z`. Columns are independent, so the result does
/// not depend on the parallel schedule.
pub fn batch_encode_codes(
    z: &DMatrix<f64>,
    d: &Dictionary,
    params: &CodingParams,
) -> Result<Vec<SparseCode>> {
    params.validate()?;
    if z.nrows() != d.dim() {
        return Err(SpargeError::dims("batch rows vs dictionary", d.dim(), z.nrows()));
    }
    d.check_atoms_nonzero()?;
    let gram = d.atoms.transpose() * &d.atoms;
    (0..z.ncols())
        .into_par_iter()
        .map(|i| {
            let col = z.column(i).into_owned();
            check_dims(&col, d).map_err(|e| e.at_column(i))?;
            Ok(encode_with_gram(&col, d, &gram, params))
        })
        .collect()
}

pub fn batch_encode(z: &DMatrix<f64>, d: &Dictionary, params: &CodingParams) -> Result<CodeMatrix> {
    let codes = batch_encode_codes(z, d, params)?;
    Ok(CodeMatrix::from_codes(d.len(), &codes))
}

/// Joint encode of every column, column `i` starting from `z0[:, i]` and
/// pulled toward `xs[i]`.
pub fn batch_encode_joint(
    z0: &DMatrix<f64>,
    xs: &[MaskedVector],
    lambda1: f64,
    d: &Dictionary,
    params: &CodingParams,
) -> Result<Vec<SparseCode>> {
    params.validate()?;
    if z0.nrows() != d.dim() {
        return Err(SpargeError::dims("batch rows vs dictionary", d.dim(), z0.nrows()));
    }
    if xs.len() != z0.ncols() {
        return Err(SpargeError::dims("fidelity samples", z0.ncols(), xs.len()));
    }
    d.check_atoms_nonzero()?;
    let gram = d.atoms.transpose() * &d.atoms;
    (0..z0.ncols())
        .into_par_iter()
        .map(|i| {
            let col = z0.column(i).into_owned();
            let fid = Fidelity { x: &xs[i], lambda1 };
            check_dims(&col, d)
                .and_then(|_| fid.validate(d.dim()))
                .map_err(|e| e.at_column(i))?;
            Ok(joint_with_gram(&col, fid, d, &gram, params))
        })
        .collect()
}

/// Derivative of a code's active coefficients with respect to the dictionary,
/// from implicit differentiation of the active-set stationarity.
#[derive(Debug, Clone)]
pub struct CodeJacobian {
    k: usize,
    active: Vec<usize>,
    /// `(D_ΛᵀWD_Λ + r2 I)⁻¹`
    inverse: DMatrix<f64>,
    d_active: DMatrix<f64>,
    phi_active: DVector<f64>,
    /// `W (t − Dφ)`
    weighted_residual: DVector<f64>,
    weights: Option<DVector<f64>>,
}

impl CodeJacobian {
    pub fn active_set(&self) -> &[usize] {
        &self.active
    }

    /// Directional derivative: perturbation `ΔD` (m×k) → `Δφ` (length k, zero
    /// off the active set).
    pub fn apply(&self, delta_d: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        if self.active.is_empty() {
            return out;
        }
        let delta_act = linalg::select_columns(delta_d, &self.active);
        let moved = &delta_act * &self.phi_active;
        let weighted_moved = match &self.weights {
            Some(w) => moved.component_mul(w),
            None => moved,
        };
        let rhs = delta_act.transpose() * &self.weighted_residual
            - self.d_active.transpose() * weighted_moved;
        let dphi = &self.inverse * rhs;
        for (&j, &v) in self.active.iter().zip(dphi.iter()) {
            out[j] = v;
        }
        out
    }

    /// Adjoint: cotangent `g` on φ (length k) → gradient with respect to D
    /// (m×k).
    pub fn adjoint(&self, g: &DVector<f64>) -> DMatrix<f64> {
        let m = self.d_active.nrows();
        let mut out = DMatrix::zeros(m, self.k);
        if self.active.is_empty() {
            return out;
        }
        let g_act = DVector::from_iterator(self.active.len(), self.active.iter().map(|&j| g[j]));
        let v = &self.inverse * g_act;
        let dv = &self.d_active * &v;
        let wdv = match &self.weights {
            Some(w) => dv.component_mul(w),
            None => dv,
        };
        let block = &self.weighted_residual * v.transpose() - wdv * self.phi_active.transpose();
        for (c, &j) in self.active.iter().enumerate() {
            out.set_column(j, &block.column(c));
        }
        out
    }

    /// Same map with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> CodeJacobian {
        let mut out = self.clone();
        out.inverse *= c;
        out
    }
}

fn build_jacobian(
    problem: &Weighted<'_>,
    d: &Dictionary,
    code: &SparseCode,
    params: &CodingParams,
) -> Result<CodeJacobian> {
    let k = d.len();
    if code.phi.len() != k {
        return Err(SpargeError::dims("code length", k, code.phi.len()));
    }
    let residual = problem.target - &d.atoms * &code.phi;
    let weighted_residual = problem.apply(&residual);
    let corr = d.atoms.transpose() * &weighted_residual;
    for j in 0..k {
        if code.phi[j] == 0.0 {
            if corr[j].abs() >= params.r1 - params.margin {
                return Err(SpargeError::StrictComplementarity {
                    atom: j,
                    margin: params.r1 - corr[j].abs(),
                });
            }
        } else if code.phi[j].abs() <= params.margin {
            return Err(SpargeError::StrictComplementarity {
                atom: j,
                margin: code.phi[j].abs(),
            });
        }
    }
    let active = code.active_set.clone();
    let d_active = linalg::select_columns(&d.atoms, &active);
    let mut m = problem.gram(&d_active);
    for i in 0..m.nrows() {
        m[(i, i)] += params.r2;
    }
    let inverse = if active.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        m.clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| m.try_inverse())
            .ok_or(SpargeError::DegenerateGram)?
    };
    let phi_active = DVector::from_iterator(active.len(), active.iter().map(|&j| code.phi[j]));
    Ok(CodeJacobian {
        k,
        active,
        inverse,
        d_active,
        phi_active,
        weighted_residual,
        weights: problem.weights.clone(),
    })
}

/// Jacobian of a plain code with respect to D.
pub fn code_jacobian(
    z: &DVector<f64>,
    d: &Dictionary,
    code: &SparseCode,
    params: &CodingParams,
) -> Result<CodeJacobian> {
    check_dims(z, d)?;
    let problem = Weighted {
        target: z,
        weights: None,
    };
    build_jacobian(&problem, d, code, params)
}

/// Jacobian of a joint code with respect to D, with `z` eliminated.
pub fn code_jacobian_joint(
    fidelity: Fidelity<'_>,
    d: &Dictionary,
    code: &SparseCode,
    params: &CodingParams,
) -> Result<CodeJacobian> {
    fidelity.validate(d.dim())?;
    let problem = Weighted {
        target: fidelity.x.values(),
        weights: Some(fidelity_weights(&fidelity)),
    };
    build_jacobian(&problem, d, code, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r1: f64, r2: f64) -> CodingParams {
        CodingParams {
            tol: 1e-13,
            max_iter: 100_000,
            ..CodingParams::new(r1, r2)
        }
    }

    #[test]
    fn orthonormal_dictionary_is_soft_threshold() {
        let d = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let z = DVector::from_vec(vec![1.0, 0.05]);
        let code = sparse_encode(&z, &d, &params(0.1, 0.1)).unwrap();
        assert!((code.phi[0] - 0.9 / 1.1).abs() < 1e-12);
        assert_eq!(code.phi[1], 0.0);
        assert_eq!(code.active_set, vec![0]);
        assert_eq!(code.signs, vec![1.0]);
        let residual = closed_form_check(&code, &z, &d, &params(0.1, 0.1)).unwrap();
        assert!(residual < 1e-10);
    }

    #[test]
    fn zero_sample_gives_zero_code() {
        let d = Dictionary::normalized(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0])).unwrap();
        let code = sparse_encode(&DVector::zeros(2), &d, &CodingParams::default()).unwrap();
        assert!(code.active_set.is_empty());
        assert_eq!(code.phi, DVector::zeros(3));
        assert_eq!(closed_form_check(&code, &DVector::zeros(2), &d, &CodingParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn zero_atom_rejected() {
        let d = Dictionary::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let err = sparse_encode(&DVector::from_vec(vec![1.0, 1.0]), &d, &CodingParams::default());
        assert!(matches!(err, Err(SpargeError::ZeroNormAtom(1))));
    }

    #[test]
    fn ridge_requires_flag() {
        let mut p = CodingParams::new(0.0, 0.1);
        assert!(p.validate().is_err());
        p.allow_ridge = true;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn project_unit_norm_cases() {
        let m = DMatrix::from_row_slice(2, 3, &[3.0, 0.3, 0.0, 4.0, 0.4, 0.0]);
        let d = project_unit_norm(&m).unwrap();
        let a = d.atoms();
        assert!((a[(0, 0)] - 0.6).abs() < 1e-15 && (a[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(a[(0, 1)], 0.3);
        assert_eq!(a[(1, 1)], 0.4);
        assert_eq!(a.column(2).norm(), 0.0);
    }

    #[test]
    fn single_atom_jacobian_matches_hand_derivative() {
        // φ = (dᵀz − r1)/(dᵀd + r2); at d = e1, z = e1, r1 = 0.1, r2 = 0:
        // ∂φ/∂d = z/(dᵀd) − 2 (dᵀz − r1) d/(dᵀd)² = (1 − 1.8, 0) = (−0.8, 0).
        let d = Dictionary::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let z = DVector::from_vec(vec![1.0, 0.0]);
        let p = params(0.1, 0.0);
        let code = sparse_encode(&z, &d, &p).unwrap();
        assert!((code.phi[0] - 0.9).abs() < 1e-12);
        let jac = code_jacobian(&z, &d, &code, &p).unwrap();
        let grad = jac.adjoint(&DVector::from_vec(vec![1.0]));
        assert!((grad[(0, 0)] + 0.8).abs() < 1e-12);
        assert!(grad[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn empty_code_has_zero_jacobian() {
        let d = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let z = DVector::zeros(2);
        let p = params(0.1, 0.1);
        let code = sparse_encode(&z, &d, &p).unwrap();
        let jac = code_jacobian(&z, &d, &code, &p).unwrap();
        assert_eq!(jac.apply(&DMatrix::from_element(2, 2, 1.0)), DVector::zeros(2));
        assert_eq!(jac.adjoint(&DVector::from_element(2, 1.0)), DMatrix::zeros(2, 2));
    }

    #[test]
    fn boundary_active_set_reported() {
        // dᵀz == r1 exactly: φ = 0 sits on the complementarity boundary.
        let d = Dictionary::new(DMatrix::identity(2, 2)).unwrap();
        let z = DVector::from_vec(vec![0.1, 1.0]);
        let p = params(0.1, 0.0);
        let code = sparse_encode(&z, &d, &p).unwrap();
        let err = code_jacobian(&z, &d, &code, &p);
        assert!(matches!(err, Err(SpargeError::StrictComplementarity { atom: 0, .. })));
    }

    #[test]
    fn joint_encode_fully_observed_matches_scaled_problem() {
        // With every coordinate observed the joint problem reduces to plain
        // coding of x with the fidelity weight w = 2λ1/(1+2λ1) on the data term,
        // i.e. plain coding of x against r1/w and r2/w.
        let d = Dictionary::normalized(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 1.0],
        ))
        .unwrap();
        let x = MaskedVector::fully_observed(DVector::from_vec(vec![0.7, -0.4, 0.9])).unwrap();
        let p = params(0.05, 0.02);
        let lambda1 = 1.5;
        let code = sparse_encode_joint(x.values(), Fidelity { x: &x, lambda1 }, &d, &p).unwrap();
        let w = 2.0 * lambda1 / (1.0 + 2.0 * lambda1);
        let scaled = sparse_encode(x.values(), &d, &params(0.05 / w, 0.02 / w)).unwrap();
        assert!((&code.phi - &scaled.phi).amax() < 1e-9);
    }

    #[test]
    fn direct_fidelity_solve_matches_alternation() {
        let d = Dictionary::normalized(DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.1, 0.0, 1.0, 0.5, -0.5, 0.2],
        ))
        .unwrap();
        let x = MaskedVector::new(
            DVector::from_vec(vec![0.7, -0.4, 0.0, 1.1]),
            vec![true, true, false, true],
        )
        .unwrap();
        let p = params(0.05, 0.02);
        let fid = Fidelity { x: &x, lambda1: 0.8 };
        let alt = sparse_encode_joint(&DVector::zeros(4), fid, &d, &p).unwrap();
        let direct = sparse_encode_fidelity(fid, &d, &p).unwrap();
        assert!((&alt.phi - &direct.phi).amax() < 1e-9);
        assert!((alt.z.unwrap() - direct.z.unwrap()).amax() < 1e-9);
    }
}
