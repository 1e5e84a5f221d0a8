//! Reference implementations used only by tests. Each one reaches its answer
//! by a different route from the library code it checks.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn unit_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

/// `‖a − b‖_F / ‖b‖_F` (plain difference when `b` is zero).
pub fn rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Singular values of `q` from the eigenvalues of `qᵀq`, descending.
pub fn singular_values_via_gram(q: &DMatrix<f64>) -> Vec<f64> {
    let eig = (q.transpose() * q).symmetric_eigen();
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// A positive threshold sitting in a gap of the spectrum of `q` so that no
/// singular value is within a factor `ratio` of it. `None` when the spectrum
/// has no such gap.
pub fn gap_threshold(q: &DMatrix<f64>, ratio: f64, pick: usize) -> Option<f64> {
    let s = singular_values_via_gram(q);
    let mut cuts = vec![s[0] * ratio];
    cuts.extend(
        s.windows(2)
            .filter(|w| w[1] > 1e-6 && w[0] > ratio * ratio * w[1])
            .map(|w| (w[0] * w[1]).sqrt()),
    );
    if let Some(&last) = s.last().filter(|&&v| v > 1e-6) {
        cuts.push(last / ratio);
    }
    Some(cuts[pick % cuts.len()]).filter(|&c| c > 0.0)
}

/// Minimizer of `½‖Z − Q‖² + ζ‖Z‖_*` through the factored form
/// `min ½‖ABᵀ − Q‖² + (ζ/2)(‖A‖² + ‖B‖²)`, solved by alternating ridge
/// regressions. No SVD is involved.
pub fn svt_oracle(q: &DMatrix<f64>, zeta: f64, seed: u64) -> DMatrix<f64> {
    let (m, n) = q.shape();
    let r = m.min(n);
    let mut rng = rng(seed);
    let mut a = gaussian(&mut rng, m, r);
    let ridge = |g: DMatrix<f64>| {
        let mut g = g;
        for i in 0..r {
            g[(i, i)] += zeta;
        }
        g.cholesky().expect("ridge system is positive definite").inverse()
    };
    let mut last = DMatrix::zeros(m, n);
    for _ in 0..20_000 {
        let b = q.transpose() * &a * ridge(a.transpose() * &a);
        a = q * &b * ridge(b.transpose() * &b);
        let z = &a * b.transpose();
        let moved = (&z - &last).norm();
        last = z;
        if moved < 1e-14 * (1.0 + q.norm()) {
            break;
        }
    }
    last
}

/// `½‖z − Dφ‖² + r1‖φ‖₁ + (r2/2)‖φ‖²`
pub fn elastic_net_value(z: &DVector<f64>, d: &DMatrix<f64>, phi: &DVector<f64>, r1: f64, r2: f64) -> f64 {
    0.5 * (z - d * phi).norm_squared() + r1 * phi.lp_norm(1) + 0.5 * r2 * phi.norm_squared()
}

/// Global elastic-net minimizer by enumerating every sign pattern in
/// {−1, 0, +1}^k. Each pattern fixes a smooth quadratic whose stationary
/// point is kept when its signs agree with the pattern; the best kept point
/// is the minimizer. Requires `r2 > 0` or a full-column-rank `d`.
pub fn elastic_net_oracle(z: &DVector<f64>, d: &DMatrix<f64>, r1: f64, r2: f64) -> DVector<f64> {
    let k = d.ncols();
    let gram = d.transpose() * d;
    let corr = d.transpose() * z;
    let mut best = DVector::zeros(k);
    let mut best_val = elastic_net_value(z, d, &best, r1, r2);
    for support in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|&j| support >> j & 1 == 1).collect();
        let s = idx.len();
        let mut g = DMatrix::from_fn(s, s, |a, b| gram[(idx[a], idx[b])]);
        for i in 0..s {
            g[(i, i)] += r2;
        }
        let Some(chol) = g.cholesky() else { continue };
        for signs in 0u32..(1 << s) {
            let sign = |a: usize| if signs >> a & 1 == 1 { -1.0 } else { 1.0 };
            let rhs = DVector::from_fn(s, |a, _| corr[idx[a]] - r1 * sign(a));
            let sol = chol.solve(&rhs);
            if (0..s).all(|a| sol[a] * sign(a) > 0.0) {
                let mut phi = DVector::zeros(k);
                for (a, &j) in idx.iter().enumerate() {
                    phi[j] = sol[a];
                }
                let v = elastic_net_value(z, d, &phi, r1, r2);
                if v < best_val {
                    best_val = v;
                    best = phi;
                }
            }
        }
    }
    best
}

/// Largest violation of the elastic-net optimality conditions:
/// `Dᵀ(z − Dφ) − r2φ = r1·sign(φ_j)` on the support and `|·| ≤ r1` off it.
pub fn stationarity_violation(z: &DVector<f64>, d: &DMatrix<f64>, phi: &DVector<f64>, r1: f64, r2: f64) -> f64 {
    let g = d.transpose() * (z - d * phi) - phi * r2;
    (0..phi.len())
        .map(|j| {
            if phi[j] != 0.0 {
                (g[j] - r1 * phi[j].signum()).abs()
            } else {
                (g[j].abs() - r1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, one entry at a time.
pub fn central_diff(x: &DMatrix<f64>, h: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for idx in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[idx] += h;
        minus[idx] -= h;
        out[idx] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    out
}

/// `tr(UᵀΦLΦᵀU)` written as the weighted sum of squared embedded
/// differences `Σ_{i<j} w_ij ‖Uᵀ(φi − φj)‖²` for `L = diag(W1) − W`.
pub fn trace_by_pairs(u: &DMatrix<f64>, phi: &DMatrix<f64>, l: &DMatrix<f64>) -> f64 {
    let n = phi.ncols();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = -l[(i, j)];
            if w != 0.0 {
                total += w * (u.transpose() * (phi.column(i) - phi.column(j))).norm_squared();
            }
        }
    }
    total
}

/// Supervised Laplacians by brute force over all ordered pairs. `j` is a
/// neighbor of `i` when fewer than `k` admissible points precede it in the
/// (distance, index) order; a pair is an edge when either end selects the
/// other.
pub fn supervised_dense(
    embedded: &DMatrix<f64>,
    labels: &[usize],
    k1: usize,
    k2: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = embedded.ncols();
    let dist = |i: usize, j: usize| (embedded.column(i) - embedded.column(j)).norm_squared();
    let selects = |i: usize, j: usize, same: bool, k: usize| {
        let admissible = |c: usize| c != i && (labels[c] == labels[i]) == same;
        if !admissible(j) {
            return false;
        }
        let ahead = (0..n)
            .filter(|&c| admissible(c))
            .filter(|&c| dist(i, c) < dist(i, j) || (dist(i, c) == dist(i, j) && c < j))
            .count();
        ahead < k
    };
    let mut w_plus = DMatrix::zeros(n, n);
    let mut w_minus = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if selects(i, j, true, k1) || selects(j, i, true, k1) {
                w_plus[(i, j)] = dist(i, j);
            }
            if selects(i, j, false, k2) || selects(j, i, false, k2) {
                w_minus[(i, j)] = dist(i, j);
            }
        }
    }
    let lap = |w: &DMatrix<f64>| {
        let mut l = -w.clone();
        for i in 0..n {
            l[(i, i)] = w.row(i).sum();
        }
        l
    };
    (lap(&w_plus), lap(&w_minus))
}

/// Largest principal angle (radians) between the column spans of `a` and
/// `b`, both with orthonormal columns, from the sine form `‖(I − AAᵀ)B‖₂`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let residual = b - a * (a.transpose() * b);
    let sine = residual.singular_values().iter().copied().fold(0.0, f64::max);
    sine.min(1.0).asin()
}

/// Orthonormal basis of the column span of `m` by modified Gram-Schmidt.
pub fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for p in 0..j {
                let proj = q.column(p).dot(&q.column(j));
                let qp = q.column(p).into_owned();
                q.column_mut(j).axpy(-proj, &qp, 1.0);
            }
        }
        let n = q.column(j).norm();
        q.column_mut(j).unscale_mut(n);
    }
    q
}
