//! Alternating optimization of the dictionary and the projection.

mod check;
mod grid;
mod init;

pub use check::{gradcheck, GradcheckReport};
pub use grid::{grid_search, GridPoint, GridResult};
pub use init::{init_projection, initialize, Initialization, TraceRatio};

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, SpargeError};
use crate::graph_embedding::{
    self, build_supervised, build_unsupervised, project_stiefel, GraphMode, LaplacianPair,
    StiefelProjection,
};
use crate::linalg;
use crate::matrix_recovery::{shrink_singular_values, MaskedVector, ObservedMatrix};
use crate::sparse_coding::{
    batch_encode_fidelity, code_jacobian_joint, project_unit_norm, CodeJacobian, CodeMatrix,
    CodingParams, Dictionary, Fidelity, SparseCode,
};

/// Threshold applied to the singular values of the dictionary after each
/// gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvtRule {
    /// `ζ` at the nominal step (scaled down with the step under backtracking).
    Constant,
    /// `γ·λ2`, the proximal step of the nuclear-norm term.
    ProximalStep,
}

/// What the search direction descends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Descent {
    /// Trace quotient only, with graphs frozen.
    QuotientOnly,
    /// Every smooth term of the composite objective, graph weights included.
    Composite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub r1: f64,
    pub r2: f64,
    pub gamma: f64,
    pub zeta: f64,
    /// Dictionary size.
    pub k: usize,
    /// Embedding dimension.
    pub l: usize,
    pub mode: GraphMode,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub init_subset: usize,
    pub seed: u64,
    pub backtracking: bool,
    pub svt_rule: SvtRule,
    pub descent: Descent,
    /// Learn one K-SVD sub-dictionary per class and concatenate them.
    pub class_dictionaries: bool,
    pub ksvd_iterations: usize,
    pub completion_max_iter: usize,
    pub coding_tol: f64,
    pub coding_max_iter: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 1.0,
            lambda2: 0.1,
            r1: 0.05,
            r2: 0.01,
            gamma: 1e-3,
            zeta: 0.1,
            k: 32,
            l: 10,
            mode: GraphMode::Supervised { k1: 5, k2: 5 },
            max_iter: 100,
            grad_tol: 1e-5,
            init_subset: 500,
            seed: 0,
            backtracking: false,
            svt_rule: SvtRule::Constant,
            descent: Descent::QuotientOnly,
            class_dictionaries: false,
            ksvd_iterations: 30,
            completion_max_iter: 500,
            coding_tol: 1e-12,
            coding_max_iter: 10_000,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("r1", self.r1),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
            ("coding_tol", self.coding_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SpargeError::InvalidParameter(format!("{name} must be positive (got {v})")));
            }
        }
        if !(self.r2 >= 0.0) || !self.r2.is_finite() {
            return Err(SpargeError::InvalidParameter(format!("r2 must be nonnegative (got {})", self.r2)));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(SpargeError::InvalidParameter(format!(
                "grad_tol must be nonnegative (got {})",
                self.grad_tol
            )));
        }
        if self.k == 0 || self.l == 0 || self.l > self.k {
            return Err(SpargeError::InvalidParameter(format!(
                "need 1 <= l <= k (got k={}, l={})",
                self.k, self.l
            )));
        }
        if self.init_subset < 2 || self.ksvd_iterations == 0 || self.coding_max_iter == 0 {
            return Err(SpargeError::InvalidParameter(
                "init_subset must be >= 2; ksvd_iterations and coding_max_iter >= 1".into(),
            ));
        }
        match self.mode {
            GraphMode::Supervised { k2, .. } if k2 == 0 => Err(SpargeError::InvalidParameter(
                "supervised mode needs k2 >= 1".into(),
            )),
            GraphMode::Unsupervised { t, kg } if !(t > 0.0) || kg == 0 => Err(
                SpargeError::InvalidParameter("unsupervised mode needs t > 0 and k_g >= 1".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn coding_params(&self) -> CodingParams {
        CodingParams {
            r1: self.r1,
            r2: self.r2,
            tol: self.coding_tol,
            max_iter: self.coding_max_iter,
            ..CodingParams::default()
        }
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self.mode, GraphMode::Supervised { .. })
    }
}

/// A fitted model: reconstructions, dictionary, codes and projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SpargeModel {
    pub z: DMatrix<f64>,
    pub dictionary: Dictionary,
    pub codes: CodeMatrix,
    pub projection: StiefelProjection,
    pub hyperparams: Hyperparams,
    pub labels: Option<Vec<usize>>,
}

impl SpargeModel {
    /// Embedded training samples `UᵀΦ`.
    pub fn embedded_training(&self) -> DMatrix<f64> {
        self.projection.embed_all(self.codes.codes())
    }

    /// Check the post-fit invariants: `Z = DΦ`, orthonormal U, feasible D.
    pub fn check_invariants(&self) -> Result<()> {
        let gap = (&self.z - self.dictionary.atoms() * self.codes.codes()).norm();
        if gap >= 1e-8 {
            return Err(SpargeError::InvalidParameter(format!("‖Z − DΦ‖ = {gap:e}")));
        }
        StiefelProjection::new(self.projection.matrix().clone())?;
        Dictionary::new(self.dictionary.atoms().clone())?;
        Ok(())
    }
}

/// Composite objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub quotient: f64,
    pub fidelity: f64,
    pub nuclear: f64,
    pub coding: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Objective at the initialization, before the first step.
    pub initial_objective: Option<f64>,
    /// Objective after each accepted step.
    pub objective_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    /// Step size accepted at each iteration.
    pub step_trace: Vec<f64>,
    /// Seconds since the start of the fit at the end of each iteration.
    pub time_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
    pub warnings: Vec<String>,
}

impl FitReport {
    /// Initial objective plus one row per iteration; the objective after
    /// every row is nonincreasing under backtracking. Timing is opt-in so
    /// that the default output is reproducible byte for byte.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from(if with_timing {
            "iteration,objective,grad_norm,step,seconds\n"
        } else {
            "iteration,objective,grad_norm,step\n"
        });
        if let Some(j0) = self.initial_objective {
            out.push_str(&format!("0,{j0:.17e},,"));
            if with_timing {
                out.push(',');
            }
            out.push('\n');
        }
        for i in 0..self.iterations_run {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}",
                i + 1,
                self.objective_trace[i],
                self.grad_norm_trace[i],
                self.step_trace[i]
            ));
            if with_timing {
                out.push_str(&format!(",{:.6}", self.time_trace[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Everything the loop needs that does not change between iterations.
pub(crate) struct Problem<'a> {
    pub x: &'a ObservedMatrix,
    pub samples: Vec<MaskedVector>,
    pub labels: Option<&'a [usize]>,
    pub hp: &'a Hyperparams,
    pub coding: CodingParams,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a ObservedMatrix, labels: Option<&'a [usize]>, hp: &'a Hyperparams) -> Result<Self> {
        hp.validate()?;
        let n = x.ncols();
        if hp.k > n {
            return Err(SpargeError::InvalidParameter(format!(
                "dictionary size {} exceeds sample count {n}",
                hp.k
            )));
        }
        match (hp.is_supervised(), labels) {
            (true, None) => {
                return Err(SpargeError::InvalidParameter("supervised mode requires labels".into()))
            }
            (_, Some(l)) if l.len() != n => return Err(SpargeError::dims("labels", n, l.len())),
            _ => {}
        }
        Ok(Problem {
            x,
            samples: (0..n).map(|j| x.column(j)).collect(),
            labels,
            hp,
            coding: hp.coding_params(),
        })
    }

    pub fn graph(&self, codes: &CodeMatrix, u: &StiefelProjection) -> Result<LaplacianPair> {
        match self.hp.mode {
            GraphMode::Supervised { k1, k2 } => {
                build_supervised(codes, self.labels.expect("validated"), u, k1, k2)
            }
            GraphMode::Unsupervised { t, kg } => build_unsupervised(codes, t, kg),
        }
    }

    pub fn encode(&self, d: &Dictionary, warm: Option<&DMatrix<f64>>) -> Result<Vec<SparseCode>> {
        batch_encode_fidelity(&self.samples, self.hp.lambda1, d, &self.coding, warm)
    }

    pub fn jacobians(&self, d: &Dictionary, codes: &[SparseCode]) -> Vec<Option<CodeJacobian>> {
        codes
            .par_iter()
            .zip(self.samples.par_iter())
            .map(|(code, x)| {
                let fid = Fidelity { x, lambda1: self.hp.lambda1 };
                code_jacobian_joint(fid, d, code, &self.coding).ok()
            })
            .collect()
    }

    /// Composite objective with `Z = DΦ`.
    pub fn objective(&self, d: &Dictionary, u: &StiefelProjection, phi: &CodeMatrix, pair: &LaplacianPair) -> Result<Objective> {
        let quotient = graph_embedding::trace_quotient(u, phi, pair)?;
        let z = d.atoms() * phi.codes();
        let mut fidelity = 0.0;
        for j in 0..z.ncols() {
            for i in 0..z.nrows() {
                if self.x.is_observed(i, j) {
                    fidelity += (z[(i, j)] - self.x.values()[(i, j)]).powi(2);
                }
            }
        }
        fidelity *= self.hp.lambda1;
        let nuclear = self.hp.lambda2 * linalg::nuclear_norm(d.atoms())?;
        let residual = &z - d.atoms() * phi.codes();
        let coding = 0.5 * linalg::frobenius_sq(&residual)
            + (0..phi.len()).map(|i| self.coding.penalty(&phi.column(i))).sum::<f64>();
        let total = quotient + fidelity + nuclear + coding;
        if !total.is_finite() {
            return Err(SpargeError::NonFinite("composite objective"));
        }
        Ok(Objective { total, quotient, fidelity, nuclear, coding })
    }
}

/// Iterate of the loop; codes are a function of the dictionary.
pub(crate) struct State {
    pub d: Dictionary,
    pub u: StiefelProjection,
    pub codes: Vec<SparseCode>,
    pub phi: CodeMatrix,
    pub pair: LaplacianPair,
    pub objective: Objective,
}

impl State {
    pub fn at(problem: &Problem<'_>, d: Dictionary, u: StiefelProjection, warm: Option<&DMatrix<f64>>) -> Result<State> {
        let codes = problem.encode(&d, warm)?;
        let phi = CodeMatrix::from_codes(d.len(), &codes);
        let pair = problem.graph(&phi, &u)?;
        let objective = problem.objective(&d, &u, &phi, &pair)?;
        Ok(State { d, u, codes, phi, pair, objective })
    }
}

/// Gradient of the trace quotient with respect to Φ, differentiating the
/// edge weights as well (neighbor sets fixed).
pub(crate) fn quotient_grad_codes_full(
    u: &StiefelProjection,
    phi: &CodeMatrix,
    pair: &LaplacianPair,
) -> Result<DMatrix<f64>> {
    let q = graph_embedding::quotient_parts(u, phi, pair)?;
    let codes = phi.codes();
    let p = u.matrix() * u.matrix().transpose();
    let embedded = u.embed_all(codes);
    let n = codes.ncols();
    let (d_num, d_den) = match pair.mode {
        GraphMode::Supervised { .. } => {
            // Weights equal the embedded squared distances, so differentiating
            // them doubles the frozen term.
            (&p * codes * &pair.num * 4.0, &p * codes * &pair.den * 4.0)
        }
        GraphMode::Unsupervised { t, .. } => {
            let extra = |edges: &[(usize, usize)], l: &DMatrix<f64>| {
                let mut c = DMatrix::zeros(n, n);
                for &(i, j) in edges {
                    let delta = (embedded.column(i) - embedded.column(j)).norm_squared();
                    let w = -l[(i, j)];
                    let v = -delta * w / t;
                    c[(i, j)] = v;
                    c[(j, i)] = v;
                }
                codes * graph_embedding::laplacian_from_weights(&c) * 2.0
            };
            (
                &p * codes * &pair.num * 2.0 + extra(&pair.num_edges, &pair.num),
                &p * codes * &pair.den * 2.0 + extra(&pair.den_edges, &pair.den),
            )
        }
    };
    Ok((d_num * q.den - d_den * q.num) / (q.den * q.den))
}

/// Search direction pieces at a state.
pub(crate) struct Gradient {
    pub d: DMatrix<f64>,
    /// Riemannian gradient on the Stiefel manifold.
    pub u: DMatrix<f64>,
    pub excluded: usize,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        (linalg::frobenius_sq(&self.d) + linalg::frobenius_sq(&self.u)).sqrt()
    }
}

fn tangent(u: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let utg = u.transpose() * g;
    g - u * linalg::symmetrize(&utg)
}

pub(crate) fn gradient(problem: &Problem<'_>, s: &State) -> Result<Gradient> {
    let hp = problem.hp;
    let jac = problem.jacobians(&s.d, &s.codes);
    let (g_phi, g_u) = match hp.descent {
        Descent::QuotientOnly => (
            graph_embedding::grad_codes(&s.u, &s.phi, &s.pair)?,
            graph_embedding::grad_u(&s.u, &s.phi, &s.pair, true)?,
        ),
        Descent::Composite => {
            let mut g = quotient_grad_codes_full(&s.u, &s.phi, &s.pair)?;
            let resid = masked_residual(problem, &s.d, &s.phi);
            let data = s.d.atoms().transpose() * &resid * (2.0 * hp.lambda1);
            g += data;
            for i in 0..g.ncols() {
                for j in 0..g.nrows() {
                    let v = s.phi.codes()[(j, i)];
                    if v != 0.0 {
                        g[(j, i)] += hp.r1 * v.signum() + hp.r2 * v;
                    }
                }
            }
            (g, graph_embedding::grad_u(&s.u, &s.phi, &s.pair, false)?)
        }
    };
    let acc = graph_embedding::accumulate_adjoints(&g_phi, &jac, s.d.dim())?;
    let mut g_d = acc.grad;
    if hp.descent == Descent::Composite {
        let resid = masked_residual(problem, &s.d, &s.phi);
        g_d += resid * s.phi.codes().transpose() * (2.0 * hp.lambda1);
    }
    Ok(Gradient {
        d: g_d,
        u: tangent(s.u.matrix(), &g_u),
        excluded: acc.excluded,
    })
}

/// `(DΦ − X) ⊙ Ω`
fn masked_residual(problem: &Problem<'_>, d: &Dictionary, phi: &CodeMatrix) -> DMatrix<f64> {
    let mut r = d.atoms() * phi.codes() - problem.x.values();
    for j in 0..r.ncols() {
        for i in 0..r.nrows() {
            if !problem.x.is_observed(i, j) {
                r[(i, j)] = 0.0;
            }
        }
    }
    r
}

/// Take a step of size `step` along `−g` from `s`.
fn trial(problem: &Problem<'_>, s: &State, g: &Gradient, step: f64) -> Result<State> {
    let hp = problem.hp;
    let threshold = match hp.svt_rule {
        SvtRule::Constant => hp.zeta * step / hp.gamma,
        SvtRule::ProximalStep => step * hp.lambda2,
    };
    let d_hat = s.d.atoms() - &g.d * step;
    let shrunk = shrink_singular_values(&d_hat, threshold)?;
    let d = project_unit_norm(&shrunk.matrix)?;
    let u = project_stiefel(&(s.u.matrix() - &g.u * step))?;
    State::at(problem, d, u, Some(s.phi.codes()))
}

const MAX_HALVINGS: usize = 20;

/// Initialize, then alternate gradient steps on (D, U) with re-encoding.
pub fn fit(x: &ObservedMatrix, labels: Option<&[usize]>, hp: &Hyperparams) -> Result<(SpargeModel, FitReport)> {
    let start = Instant::now();
    let problem = Problem::new(x, labels, hp)?;
    let init = initialize(x, labels, hp)?;
    let mut report = FitReport::default();
    for w in &init.warnings {
        report.warnings.push(w.clone());
    }
    let owned_labels = labels.map(|l| l.to_vec());
    let init_model = SpargeModel {
        z: init.dictionary.atoms() * init.codes.codes(),
        dictionary: init.dictionary.clone(),
        codes: init.codes.clone(),
        projection: init.projection.clone(),
        hyperparams: hp.clone(),
        labels: owned_labels.clone(),
    };
    if hp.max_iter == 0 || hp.grad_tol.is_infinite() {
        report.converged = hp.grad_tol.is_infinite();
        report.wall_time_seconds = start.elapsed().as_secs_f64();
        return Ok((init_model, report));
    }

    let mut state = State::at(&problem, init.dictionary, init.projection, Some(init.codes.codes()))
        .map_err(|e| e.at_iteration(0))?;
    log::info!("initial objective {:.6e}", state.objective.total);
    report.initial_objective = Some(state.objective.total);
    let mut excluded_total = 0;
    for iter in 1..=hp.max_iter {
        let g = gradient(&problem, &state).map_err(|e| e.at_iteration(iter))?;
        excluded_total += g.excluded;
        let gnorm = g.norm();
        if !gnorm.is_finite() {
            return Err(SpargeError::NonFinite("search direction").at_iteration(iter));
        }
        if gnorm < hp.grad_tol {
            report.converged = true;
            break;
        }
        let mut step = hp.gamma;
        let next = if hp.backtracking {
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                match trial(&problem, &state, &g, step) {
                    Ok(cand) if cand.objective.total <= state.objective.total => {
                        accepted = Some(cand);
                        break;
                    }
                    Ok(_) => {}
                    Err(e) if e.is_numerical() => log::debug!("trial step {step:e} failed: {e}"),
                    Err(e) => return Err(e.at_iteration(iter)),
                }
                step *= 0.5;
            }
            match accepted {
                Some(c) => c,
                None => {
                    let mut msg = format!("iteration {iter}: no decreasing step after {MAX_HALVINGS} halvings");
                    if hp.descent == Descent::QuotientOnly || hp.svt_rule == SvtRule::Constant {
                        msg.push_str(
                            " (the quotient-only direction and the constant threshold need not descend the \
                             composite objective; composite descent with the proximal threshold does)",
                        );
                    }
                    log::warn!("{msg}");
                    report.warnings.push(msg);
                    break;
                }
            }
        } else {
            trial(&problem, &state, &g, step).map_err(|e| e.at_iteration(iter))?
        };
        state = next;
        report.objective_trace.push(state.objective.total);
        report.grad_norm_trace.push(gnorm);
        report.step_trace.push(step);
        report.time_trace.push(start.elapsed().as_secs_f64());
        report.iterations_run = iter;
        log::info!(
            "iter {iter} J={:.9e} |H|={gnorm:.3e} step={step:.3e} quotient={:.4e} t={:.2}s",
            state.objective.total,
            state.objective.quotient,
            start.elapsed().as_secs_f64()
        );
    }
    if excluded_total > 0 {
        report.warnings.push(format!(
            "{excluded_total} sample-iterations excluded from the dictionary gradient"
        ));
    }
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    let model = SpargeModel {
        z: state.d.atoms() * state.phi.codes(),
        dictionary: state.d,
        codes: state.phi,
        projection: state.u,
        hyperparams: hp.clone(),
        labels: owned_labels,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n_per: usize, seed: u64) -> (ObservedMatrix, Vec<usize>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = 6;
        let mut x = DMatrix::zeros(m, 2 * n_per);
        let mut labels = Vec::new();
        for c in 0..2 {
            for i in 0..n_per {
                let col = c * n_per + i;
                for r in 0..m {
                    let base = if (r < 3) == (c == 0) { 1.0 } else { 0.0 };
                    x[(r, col)] = base + 0.3 * rng.random::<f64>();
                }
                labels.push(c);
            }
        }
        (ObservedMatrix::fully_observed(x).unwrap(), labels)
    }

    fn small_hp() -> Hyperparams {
        Hyperparams {
            k: 4,
            l: 2,
            mode: GraphMode::Supervised { k1: 2, k2: 2 },
            max_iter: 5,
            ksvd_iterations: 5,
            svt_rule: SvtRule::ProximalStep,
            backtracking: true,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn infinite_tolerance_returns_initialization() {
        let (x, labels) = toy(6, 1);
        let hp = Hyperparams { grad_tol: f64::INFINITY, ..small_hp() };
        let (model, report) = fit(&x, Some(&labels), &hp).unwrap();
        let init = initialize(&x, Some(&labels), &hp).unwrap();
        assert_eq!(report.iterations_run, 0);
        assert!(report.objective_trace.is_empty());
        assert_eq!(model.dictionary, init.dictionary);
        assert_eq!(model.projection, init.projection);
        assert_eq!(model.z, init.dictionary.atoms() * init.codes.codes());
    }

    #[test]
    fn backtracking_fit_is_monotone_and_valid() {
        let (x, labels) = toy(8, 2);
        for descent in [Descent::QuotientOnly, Descent::Composite] {
            let hp = Hyperparams { descent, ..small_hp() };
            let (model, report) = fit(&x, Some(&labels), &hp).unwrap();
            model.check_invariants().unwrap();
            assert_eq!(report.objective_trace.len(), report.iterations_run);
            let mut trace = vec![report.initial_objective.unwrap()];
            trace.extend(&report.objective_trace);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-10);
            }
            if descent == Descent::Composite {
                assert_eq!(report.iterations_run, hp.max_iter);
                assert!(trace.last() < trace.first());
            }
        }
    }

    #[test]
    fn fit_is_reproducible() {
        let (x, labels) = toy(6, 3);
        let hp = small_hp();
        let (a, ra) = fit(&x, Some(&labels), &hp).unwrap();
        let (b, rb) = fit(&x, Some(&labels), &hp).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.to_csv(false), rb.to_csv(false));
    }

    #[test]
    fn supervised_requires_labels() {
        let (x, _) = toy(4, 4);
        assert!(fit(&x, None, &small_hp()).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams { l: 40, ..Hyperparams::default() }.validate().is_err());
        assert!(Hyperparams { gamma: 0.0, ..Hyperparams::default() }.validate().is_err());
        assert!(Hyperparams::default().validate().is_ok());
    }
}
