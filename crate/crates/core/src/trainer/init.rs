use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Hyperparams, Problem};
use crate::error::{Result, SpargeError};
use crate::graph_embedding::{LaplacianPair, StiefelProjection, DEN_GUARD};
use crate::linalg;
use crate::matrix_recovery::{complete_low_rank, CompletionParams, ObservedMatrix};
use crate::sparse_coding::{batch_encode, ksvd_learn, CodeMatrix, Dictionary, KsvdParams};

const RHO_TOL: f64 = 1e-10;
const RHO_ROUNDS: usize = 100;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Initialization {
    /// Low-rank completion of the observed data.
    pub completed: DMatrix<f64>,
    pub dictionary: Dictionary,
    pub codes: CodeMatrix,
    pub projection: StiefelProjection,
    /// Samples used for the projection.
    pub subset: Vec<usize>,
    pub rho_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Output of the trace-ratio iteration.
#[derive(Debug, Clone)]
pub struct TraceRatio {
    pub projection: StiefelProjection,
    /// Quotient after each round.
    pub rho_trace: Vec<f64>,
    /// Set when the denominator scatter needed a ridge.
    pub ridged: bool,
}

/// Smallest-quotient projection by the iterative trace-ratio method:
/// `ρ ← tr(UᵀAU)/tr(UᵀBU)`, then U ← the l eigenvectors of `A − ρB` with the
/// smallest eigenvalues, where `A = ΦL_numΦᵀ` and `B = ΦL_denΦᵀ`.
pub fn init_projection(codes: &CodeMatrix, pair: &LaplacianPair, l: usize) -> Result<TraceRatio> {
    let k = codes.atoms();
    if l == 0 || l > k {
        return Err(SpargeError::InvalidParameter(format!("need 1 <= l <= k (got l={l}, k={k})")));
    }
    if pair.n() != codes.len() {
        return Err(SpargeError::dims("laplacian size vs samples", codes.len(), pair.n()));
    }
    let phi = codes.codes();
    let a = linalg::symmetrize(&(phi * &pair.num * phi.transpose()));
    let mut b = linalg::symmetrize(&(phi * &pair.den * phi.transpose()));
    let (bvals, _) = linalg::symmetric_eigen_ascending(&b)?;
    let top = bvals.iter().cloned().fold(0.0_f64, f64::max);
    let rank = bvals.iter().filter(|&&v| v > top.max(1.0) * 1e-12).count();
    let ridged = rank < l;
    if ridged {
        log::warn!("denominator scatter has rank {rank} < {l}; adding a ridge");
        for i in 0..k {
            b[(i, i)] += RIDGE;
        }
    }
    let ratio = |u: &DMatrix<f64>| -> Result<f64> {
        let den = (u.transpose() * &b * u).trace();
        if !(den > DEN_GUARD) {
            return Err(SpargeError::DegenerateDenominator { value: den, guard: DEN_GUARD });
        }
        Ok((u.transpose() * &a * u).trace() / den)
    };
    let tr_b = b.trace();
    if !(tr_b > DEN_GUARD) {
        return Err(SpargeError::DegenerateDenominator { value: tr_b, guard: DEN_GUARD });
    }
    let mut rho = a.trace() / tr_b;
    let mut trace = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..RHO_ROUNDS {
        let (_, vecs) = linalg::symmetric_eigen_ascending(&(&a - &b * rho))?;
        let mut u = vecs.columns(0, l).into_owned();
        canonical_signs(&mut u);
        let next = ratio(&u)?;
        let better = best.as_ref().is_none_or(|(r, _)| next <= *r);
        if better {
            best = Some((next, u));
        }
        trace.push(next);
        let done = (next - rho).abs() < RHO_TOL;
        rho = next;
        if done {
            break;
        }
    }
    let (_, u) = best.expect("at least one round");
    Ok(TraceRatio {
        projection: StiefelProjection::new(u)?,
        rho_trace: trace,
        ridged,
    })
}

/// Flip each column so that its largest-magnitude entry is positive.
fn canonical_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut pivot = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
}

fn class_dictionary(z: &DMatrix<f64>, labels: &[usize], hp: &Hyperparams) -> Result<Dictionary> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    let c = members.len();
    if hp.k < c {
        return Err(SpargeError::InvalidParameter(format!(
            "dictionary size {} is smaller than the class count {c}",
            hp.k
        )));
    }
    let mut atoms = Vec::with_capacity(hp.k);
    for (idx, (class, cols)) in members.iter().enumerate() {
        let kc = hp.k / c + usize::from(idx < hp.k % c);
        if kc > cols.len() {
            return Err(SpargeError::InvalidParameter(format!(
                "class {class} has {} samples, fewer than its {kc} atoms",
                cols.len()
            )));
        }
        let sub = linalg::select_columns(z, cols);
        let params = KsvdParams {
            k: kc,
            t: kc.div_ceil(10),
            iterations: hp.ksvd_iterations,
            seed: hp.seed.wrapping_add(idx as u64),
        };
        let learned = ksvd_learn(&sub, &params)?;
        atoms.extend(learned.dictionary.atoms().column_iter().map(|c| c.into_owned()));
    }
    Dictionary::new(DMatrix::from_columns(&atoms))
}

/// Completion, K-SVD dictionary, codes, and a trace-ratio projection fitted on
/// a seeded subset of the codes.
pub fn initialize(x: &ObservedMatrix, labels: Option<&[usize]>, hp: &Hyperparams) -> Result<Initialization> {
    let problem = Problem::new(x, labels, hp)?;
    let mut warnings = Vec::new();
    let completion = complete_low_rank(
        x,
        &CompletionParams {
            max_iter: hp.completion_max_iter.max(1),
            ..CompletionParams::new(hp.lambda2)
        },
    )?;
    if !completion.converged && hp.completion_max_iter > 1 {
        warnings.push(format!(
            "initial completion stopped after {} iterations",
            completion.iterations
        ));
    }
    let z0 = completion.matrix;
    let dictionary = match (hp.class_dictionaries, labels) {
        (true, Some(l)) => class_dictionary(&z0, l, hp)?,
        _ => {
            let params = KsvdParams {
                k: hp.k,
                t: hp.k.div_ceil(10),
                iterations: hp.ksvd_iterations,
                seed: hp.seed,
            };
            ksvd_learn(&z0, &params)?.dictionary
        }
    };
    let codes = batch_encode(&z0, &dictionary, &problem.coding)?;

    let n = x.ncols();
    let subset: Vec<usize> = if hp.init_subset >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        rng.set_stream(1);
        let mut s = sample(&mut rng, n, hp.init_subset).into_vec();
        s.sort_unstable();
        s
    };
    let sub_codes = codes.select_columns(&subset);
    let sub_labels: Option<Vec<usize>> = labels.map(|l| subset.iter().map(|&i| l[i]).collect());
    let sub_problem = Problem {
        labels: sub_labels.as_deref(),
        ..problem
    };
    let pair = sub_problem.graph(&sub_codes, &StiefelProjection::identity(hp.k, hp.k)?)?;
    let tr = init_projection(&sub_codes, &pair, hp.l)?;
    if tr.ridged {
        warnings.push("projection init needed a ridge on the denominator scatter".into());
    }
    Ok(Initialization {
        completed: z0,
        dictionary,
        codes,
        projection: tr.projection,
        subset,
        rho_trace: tr.rho_trace,
        warnings,
    })
}
