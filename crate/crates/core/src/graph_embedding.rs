//! Graphs over sparse codes and the trace-quotient embedding objective.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SpargeError};
use crate::linalg;
use crate::sparse_coding::{CodeJacobian, CodeMatrix};

/// Smallest admissible trace-quotient denominator.
pub const DEN_GUARD: f64 = 1e-12;

/// Orthonormal k×l projection (`UᵀU = I`).
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelProjection {
    u: DMatrix<f64>,
}

impl StiefelProjection {
    pub const TOL: f64 = 1e-10;

    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        let (k, l) = u.shape();
        if l == 0 || l > k {
            return Err(SpargeError::InvalidParameter(format!(
                "projection must be k×l with 1 ≤ l ≤ k (got {k}×{l})"
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SpargeError::NonFinite("projection"));
        }
        let err = (u.transpose() * &u - DMatrix::identity(l, l)).norm();
        if err > Self::TOL {
            return Err(SpargeError::InvalidParameter(format!(
                "projection columns are not orthonormal (‖UᵀU − I‖ = {err:e})"
            )));
        }
        Ok(StiefelProjection { u })
    }

    /// First `l` columns of the k×k identity.
    pub fn identity(k: usize, l: usize) -> Result<Self> {
        Self::new(DMatrix::identity(k, l))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.u
    }

    pub fn k(&self) -> usize {
        self.u.nrows()
    }

    pub fn l(&self) -> usize {
        self.u.ncols()
    }

    /// `Uᵀφ`
    pub fn embed(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.u.tr_mul(phi)
    }

    /// `UᵀΦ`, one embedded column per sample.
    pub fn embed_all(&self, codes: &DMatrix<f64>) -> DMatrix<f64> {
        self.u.tr_mul(codes)
    }
}

/// Thin QR with positive diagonal in R; returns Q.
pub fn project_stiefel(m: &DMatrix<f64>) -> Result<StiefelProjection> {
    let (k, l) = m.shape();
    if l == 0 || l > k {
        return Err(SpargeError::InvalidParameter(format!(
            "cannot project a {k}×{l} matrix onto the Stiefel manifold"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SpargeError::NonFinite("projection input"));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for j in 0..l {
        let rjj = r[(j, j)];
        if rjj.abs() <= scale * 1e-12 {
            return Err(SpargeError::RankDeficient("projection input"));
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    StiefelProjection::new(q)
}

/// `‖Uᵀ(φi − φj)‖²`
pub fn distance_sq(phi_i: &DVector<f64>, phi_j: &DVector<f64>, u: &StiefelProjection) -> Result<f64> {
    if phi_i.len() != u.k() || phi_j.len() != u.k() {
        return Err(SpargeError::dims("code length vs projection rows", u.k(), phi_i.len().max(phi_j.len())));
    }
    Ok(u.embed(&(phi_i - phi_j)).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphMode {
    Supervised { k1: usize, k2: usize },
    Unsupervised { t: f64, kg: usize },
}

/// Numerator and denominator Laplacians of the trace quotient.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub num: DMatrix<f64>,
    pub den: DMatrix<f64>,
    pub mode: GraphMode,
    /// Edges `(i, j)`, `i < j`, carrying numerator weight.
    pub num_edges: Vec<(usize, usize)>,
    /// Edges `(i, j)`, `i < j`, carrying denominator weight.
    pub den_edges: Vec<(usize, usize)>,
    /// Samples alone in their class (no intra-class edges).
    pub singletons: Vec<usize>,
    /// Set when the denominator Laplacian is identically zero.
    pub degenerate: bool,
}

impl LaplacianPair {
    pub fn n(&self) -> usize {
        self.num.nrows()
    }

    /// Check both matrices for symmetry, zero row sums and positive
    /// semidefiniteness.
    pub fn check(&self) -> Result<()> {
        check_laplacian(&self.num)?;
        check_laplacian(&self.den)
    }
}

/// Laplacian `diag(W·1) − W` of a symmetric weight matrix with zero diagonal.
pub fn laplacian_from_weights(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = 0.0;
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        l[(i, i)] = s;
    }
    l
}

/// Symmetry (1e-10), zero row sums (1e-10) and minimum eigenvalue ≥ −1e-8,
/// all relative to the largest entry when that exceeds 1.
pub fn check_laplacian(l: &DMatrix<f64>) -> Result<()> {
    if !l.is_square() {
        return Err(SpargeError::dims("laplacian", "square", format!("{}×{}", l.nrows(), l.ncols())));
    }
    let scale = l.amax().max(1.0);
    if (l - l.transpose()).amax() > 1e-10 * scale {
        return Err(SpargeError::InvalidParameter("laplacian is not symmetric".into()));
    }
    for (i, row) in l.row_iter().enumerate() {
        if row.sum().abs() > 1e-10 * scale {
            return Err(SpargeError::InvalidParameter(format!(
                "laplacian row {i} does not sum to zero"
            )));
        }
    }
    let (vals, _) = linalg::symmetric_eigen_ascending(l)?;
    if vals.len() > 0 && vals[0] < -1e-8 * scale {
        return Err(SpargeError::InvalidParameter(format!(
            "laplacian has negative eigenvalue {:e}",
            vals[0]
        )));
    }
    Ok(())
}

fn pairwise_sq(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.ncols();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| (points.column(i) - points.column(j)).norm_squared())
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// The `count` nearest candidates to `i` under `dist`, ties by index.
fn nearest(dist: &DMatrix<f64>, i: usize, candidates: impl Iterator<Item = usize>, count: usize) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.collect();
    c.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
    c.truncate(count);
    c
}

fn symmetric_edges(n: usize, neighbors: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut adj = vec![false; n * n];
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            adj[i.min(j) * n + i.max(j)] = true;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if adj[i * n + j] {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn weights_on(n: usize, edges: &[(usize, usize)], w: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        let v = w(i, j);
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

/// Supervised pair: `L⁺` over the k1 nearest same-label neighbors, `L⁻` over
/// the k2 nearest different-label neighbors, both ranked and weighted by the
/// squared embedded distance. A pair is an edge when either end selects the
/// other.
pub fn build_supervised(
    codes: &CodeMatrix,
    labels: &[usize],
    u: &StiefelProjection,
    k1: usize,
    k2: usize,
) -> Result<LaplacianPair> {
    let n = codes.len();
    if labels.len() != n {
        return Err(SpargeError::dims("labels vs codes", n, labels.len()));
    }
    if codes.atoms() != u.k() {
        return Err(SpargeError::dims("code length vs projection rows", u.k(), codes.atoms()));
    }
    if n < 2 {
        return Err(SpargeError::EmptyInput("graph needs at least two samples"));
    }
    let first = labels[0];
    if k2 >= 1 && labels.iter().all(|&c| c == first) {
        return Err(SpargeError::SingleClass);
    }
    let embedded = u.embed_all(codes.codes());
    let dist = pairwise_sq(&embedded);

    let mut singletons = Vec::new();
    let (same, diff): (Vec<Vec<usize>>, Vec<Vec<usize>>) = (0..n)
        .map(|i| {
            let s = nearest(&dist, i, (0..n).filter(|&j| j != i && labels[j] == labels[i]), k1);
            let d = nearest(&dist, i, (0..n).filter(|&j| labels[j] != labels[i]), k2);
            (s, d)
        })
        .unzip();
    if k1 >= 1 {
        for i in 0..n {
            if !(0..n).any(|j| j != i && labels[j] == labels[i]) {
                singletons.push(i);
            }
        }
        if !singletons.is_empty() {
            log::warn!("{} samples have no same-label neighbor", singletons.len());
        }
    }
    let num_edges = symmetric_edges(n, &same);
    let den_edges = symmetric_edges(n, &diff);
    let z_plus = weights_on(n, &num_edges, |i, j| dist[(i, j)]);
    let z_minus = weights_on(n, &den_edges, |i, j| dist[(i, j)]);
    let den = laplacian_from_weights(&z_minus);
    let degenerate = den.amax() == 0.0;
    Ok(LaplacianPair {
        num: laplacian_from_weights(&z_plus),
        den,
        mode: GraphMode::Supervised { k1, k2 },
        num_edges,
        den_edges,
        singletons,
        degenerate,
    })
}

/// Unsupervised pair from the symmetrized k_g-NN graph in code space with
/// heat-kernel weights `exp(−‖φi − φj‖²/t)`: adjacent pairs form the
/// numerator (local) graph, all other pairs the denominator (non-local) graph.
pub fn build_unsupervised(codes: &CodeMatrix, t: f64, kg: usize) -> Result<LaplacianPair> {
    let n = codes.len();
    if n < 2 {
        return Err(SpargeError::EmptyInput("graph needs at least two samples"));
    }
    if !(t > 0.0) {
        return Err(SpargeError::InvalidParameter(format!("kernel width t must be positive (got {t})")));
    }
    if kg == 0 || kg >= n {
        return Err(SpargeError::InvalidParameter(format!(
            "k_g must be in 1..{n} (got {kg})"
        )));
    }
    let dist = pairwise_sq(codes.codes());
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| nearest(&dist, i, (0..n).filter(|&j| j != i), kg))
        .collect();
    let num_edges = symmetric_edges(n, &neighbors);
    let mut adjacent = vec![false; n * n];
    for &(i, j) in &num_edges {
        adjacent[i * n + j] = true;
    }
    let den_edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !adjacent[i * n + j])
        .collect();
    let kernel = |i: usize, j: usize| (-dist[(i, j)] / t).exp();
    let m_l = weights_on(n, &num_edges, kernel);
    let m_n = weights_on(n, &den_edges, kernel);
    let spread = dist.amax();
    let den = laplacian_from_weights(&m_n);
    let degenerate = den.amax() == 0.0 || spread == 0.0;
    if degenerate {
        log::warn!("non-local graph is degenerate");
    }
    Ok(LaplacianPair {
        num: laplacian_from_weights(&m_l),
        den,
        mode: GraphMode::Unsupervised { t, kg },
        num_edges,
        den_edges,
        singletons: Vec::new(),
        degenerate,
    })
}

/// Numerator, denominator and value of the trace quotient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quotient {
    pub num: f64,
    pub den: f64,
    pub value: f64,
}

fn check_shapes(u: &StiefelProjection, codes: &CodeMatrix, pair: &LaplacianPair) -> Result<()> {
    if codes.atoms() != u.k() {
        return Err(SpargeError::dims("code length vs projection rows", u.k(), codes.atoms()));
    }
    if pair.n() != codes.len() {
        return Err(SpargeError::dims("laplacian size vs samples", codes.len(), pair.n()));
    }
    Ok(())
}

/// `tr(BᵀLB)` with `B = ΦᵀU`.
fn trace_form(b: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    (l * b).component_mul(b).sum()
}

pub fn quotient_parts(u: &StiefelProjection, codes: &CodeMatrix, pair: &LaplacianPair) -> Result<Quotient> {
    check_shapes(u, codes, pair)?;
    let b = codes.codes().tr_mul(u.matrix());
    let num = trace_form(&b, &pair.num);
    let den = trace_form(&b, &pair.den);
    if !(den > DEN_GUARD) {
        return Err(SpargeError::DegenerateDenominator { value: den, guard: DEN_GUARD });
    }
    Ok(Quotient { num, den, value: num / den })
}

/// `tr(UᵀΦ L_num ΦᵀU) / tr(UᵀΦ L_den ΦᵀU)`
pub fn trace_quotient(u: &StiefelProjection, codes: &CodeMatrix, pair: &LaplacianPair) -> Result<f64> {
    Ok(quotient_parts(u, codes, pair)?.value)
}

/// Laplacian over `edges` with weight `‖Uᵀ(φi − φj)‖²`.
fn embedded_laplacian(edges: &[(usize, usize)], embedded: &DMatrix<f64>) -> DMatrix<f64> {
    let n = embedded.ncols();
    let w = weights_on(n, edges, |i, j| (embedded.column(i) - embedded.column(j)).norm_squared());
    laplacian_from_weights(&w)
}

/// Gradient of the trace quotient with respect to U.
///
/// With `frozen_graphs` the Laplacians are constants. Otherwise the supervised
/// edge weights are differentiated too (`∂z_ij/∂U = 2ΔΔᵀU` on the fixed
/// supports); unsupervised weights do not depend on U.
pub fn grad_u(
    u: &StiefelProjection,
    codes: &CodeMatrix,
    pair: &LaplacianPair,
    frozen_graphs: bool,
) -> Result<DMatrix<f64>> {
    let q = quotient_parts(u, codes, pair)?;
    let phi = codes.codes();
    let um = u.matrix();
    let mut a_num = phi * &pair.num * phi.transpose();
    let mut a_den = phi * &pair.den * phi.transpose();
    if !frozen_graphs {
        if let GraphMode::Supervised { .. } = pair.mode {
            let embedded = u.embed_all(phi);
            a_num += phi * embedded_laplacian(&pair.num_edges, &embedded) * phi.transpose();
            a_den += phi * embedded_laplacian(&pair.den_edges, &embedded) * phi.transpose();
        }
    }
    Ok((a_num * um * q.den - a_den * um * q.num) * (2.0 / (q.den * q.den)))
}

/// `∂(quotient)/∂Φ` with frozen graphs.
pub fn grad_codes(u: &StiefelProjection, codes: &CodeMatrix, pair: &LaplacianPair) -> Result<DMatrix<f64>> {
    let q = quotient_parts(u, codes, pair)?;
    let p = u.matrix() * u.matrix().transpose();
    let pphi = p * codes.codes();
    Ok((&pphi * &pair.num * q.den - &pphi * &pair.den * q.num) * (2.0 / (q.den * q.den)))
}

#[derive(Debug, Clone)]
pub struct GradD {
    pub grad: DMatrix<f64>,
    /// Samples skipped because their code had no Jacobian.
    pub excluded: usize,
}

/// Chain `∂(quotient)/∂Φ` through the per-sample code Jacobians. `None`
/// entries (codes failing strict complementarity) are skipped and counted.
/// `m` is the dictionary's row count.
pub fn grad_d(
    u: &StiefelProjection,
    codes: &CodeMatrix,
    pair: &LaplacianPair,
    jacobians: &[Option<CodeJacobian>],
    m: usize,
) -> Result<GradD> {
    let g_phi = grad_codes(u, codes, pair)?;
    accumulate_adjoints(&g_phi, jacobians, m)
}

/// `Σᵢ Jᵢᵀ g_i` over samples with a Jacobian.
/// `m` is the dictionary's row count.
pub fn accumulate_adjoints(
    g_phi: &DMatrix<f64>,
    jacobians: &[Option<CodeJacobian>],
    m: usize,
) -> Result<GradD> {
    if jacobians.len() != g_phi.ncols() {
        return Err(SpargeError::dims("jacobians vs samples", g_phi.ncols(), jacobians.len()));
    }
    let excluded = jacobians.iter().filter(|j| j.is_none()).count();
    if excluded > 0 {
        log::warn!("{excluded} samples excluded from the dictionary gradient");
    }
    let grad = jacobians
        .par_iter()
        .enumerate()
        .filter_map(|(i, j)| j.as_ref().map(|jac| (i, jac)))
        .filter(|(i, _)| g_phi.column(*i).amax() != 0.0)
        .map(|(i, jac)| jac.adjoint(&g_phi.column(i).into_owned()))
        .reduce_with(|a, b| a + b);
    let grad = grad.unwrap_or_else(|| DMatrix::zeros(m, g_phi.nrows()));
    Ok(GradD { grad, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(rows: usize, data: &[f64]) -> CodeMatrix {
        CodeMatrix::new(DMatrix::from_row_slice(rows, data.len() / rows, data)).unwrap()
    }

    #[test]
    fn axis_distance() {
        let u = StiefelProjection::identity(3, 1).unwrap();
        let a = DVector::from_vec(vec![2.0, 5.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, 1.0, 3.0]);
        assert_eq!(distance_sq(&a, &b, &u).unwrap(), 4.0);
        assert_eq!(distance_sq(&a, &a, &u).unwrap(), 0.0);
    }

    #[test]
    fn three_point_supervised_example() {
        let phi = codes(1, &[0.0, 1.0, 10.0]);
        let u = StiefelProjection::identity(1, 1).unwrap();
        let pair = build_supervised(&phi, &[0, 0, 1], &u, 1, 1).unwrap();
        let expect_num = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(pair.num, expect_num);
        assert_eq!(pair.den_edges, vec![(0, 2), (1, 2)]);
        assert_eq!(pair.den[(0, 2)], -100.0);
        assert_eq!(pair.den[(1, 2)], -81.0);
        pair.check().unwrap();
        let q = trace_quotient(&u, &phi, &pair).unwrap();
        assert!((q - 1.0 / 16561.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_graphs() {
        let phi = codes(2, &[0.0, 1.0, 0.0, 0.0]);
        let u = StiefelProjection::identity(2, 2).unwrap();
        let sup = build_supervised(&phi, &[4, 4], &u, 1, 0).unwrap();
        assert_eq!(sup.num, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(sup.den, DMatrix::zeros(2, 2));
        assert!(sup.degenerate);

        let uns = build_unsupervised(&phi, 1.0, 1).unwrap();
        let w = (-1.0_f64).exp();
        assert!((uns.num[(0, 1)] + w).abs() < 1e-15 && (uns.num[(0, 0)] - w).abs() < 1e-15);
        assert_eq!(uns.den, DMatrix::zeros(2, 2));
    }

    #[test]
    fn single_class_rejected() {
        let phi = codes(1, &[0.0, 1.0, 2.0]);
        let u = StiefelProjection::identity(1, 1).unwrap();
        assert!(matches!(
            build_supervised(&phi, &[1, 1, 1], &u, 1, 1),
            Err(SpargeError::SingleClass)
        ));
    }

    #[test]
    fn singleton_class_has_no_intra_edges() {
        let phi = codes(1, &[0.0, 1.0, 5.0]);
        let u = StiefelProjection::identity(1, 1).unwrap();
        let pair = build_supervised(&phi, &[0, 0, 1], &u, 2, 1).unwrap();
        assert_eq!(pair.singletons, vec![2]);
        assert_eq!(pair.num_edges, vec![(0, 1)]);
    }

    #[test]
    fn identical_codes_hit_degenerate_error() {
        let phi = codes(2, &[1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
        let u = StiefelProjection::identity(2, 1).unwrap();
        let pair = build_supervised(&phi, &[0, 0, 1], &u, 1, 1).unwrap();
        assert!(matches!(
            trace_quotient(&u, &phi, &pair),
            Err(SpargeError::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn equal_laplacians_give_unit_quotient_and_zero_gradient() {
        let phi = codes(2, &[0.0, 1.0, 3.0, 1.0, -1.0, 2.0]);
        let u = project_stiefel(&DMatrix::from_column_slice(2, 1, &[0.6, 0.8])).unwrap();
        let mut pair = build_unsupervised(&phi, 2.0, 1).unwrap();
        pair.den = pair.num.clone();
        assert!((trace_quotient(&u, &phi, &pair).unwrap() - 1.0).abs() < 1e-14);
        assert!(grad_u(&u, &phi, &pair, true).unwrap().amax() < 1e-14);
    }

    #[test]
    fn stiefel_projection_cases() {
        let u = project_stiefel(&DMatrix::from_column_slice(2, 1, &[3.0, 4.0])).unwrap();
        assert!((u.matrix()[(0, 0)] - 0.6).abs() < 1e-15 && (u.matrix()[(1, 0)] - 0.8).abs() < 1e-15);
        let flip = project_stiefel(&DMatrix::from_column_slice(2, 1, &[-3.0, -4.0])).unwrap();
        assert!((flip.matrix()[(0, 0)] + 0.6).abs() < 1e-15);
        let s = 0.5_f64.sqrt();
        let m = DMatrix::from_row_slice(3, 2, &[s, 0.0, s, 0.0, 0.0, 1.0]);
        assert!((project_stiefel(&m).unwrap().into_inner() - &m).amax() < 1e-12);
        let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(project_stiefel(&rank1), Err(SpargeError::RankDeficient(_))));
    }

    #[test]
    fn laplacian_check_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!(check_laplacian(&asym).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(check_laplacian(&neg).is_err());
    }
}
