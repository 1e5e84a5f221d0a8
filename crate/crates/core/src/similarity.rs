//! Queries against a fitted model and the baseline classifiers.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SpargeError};
use crate::matrix_recovery::{MaskedVector, ObservedMatrix};
use crate::sparse_coding::{sparse_encode_fidelity, Fidelity, SparseCode};
use crate::trainer::SpargeModel;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPatient {
    pub id: String,
    pub y: DVector<f64>,
}

impl EmbeddedPatient {
    pub fn new(id: impl Into<String>, y: DVector<f64>) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SpargeError::NonFinite("embedding"));
        }
        Ok(EmbeddedPatient { id: id.into(), y })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityResult {
    pub neighbor_ids: Vec<String>,
    /// Euclidean distances, nondecreasing.
    pub distances: Vec<f64>,
    /// `(atom, |φ|)` by decreasing weight, for weight queries.
    pub sparse_weights: Option<Vec<(usize, f64)>>,
}

/// Code of a new sample: joint encode whose fidelity term reads only the
/// observed coordinates.
pub fn encode(model: &SpargeModel, x: &MaskedVector) -> Result<SparseCode> {
    let hp = &model.hyperparams;
    let fid = Fidelity { x, lambda1: hp.lambda1 };
    sparse_encode_fidelity(fid, &model.dictionary, &hp.coding_params())
}

/// `y = Uᵀφ` for a new sample.
pub fn embed(model: &SpargeModel, id: impl Into<String>, x: &MaskedVector) -> Result<EmbeddedPatient> {
    let code = encode(model, x)?;
    EmbeddedPatient::new(id, model.projection.embed(&code.phi))
}

/// Embed every column; ids are the column indices unless given.
pub fn embed_all(model: &SpargeModel, x: &ObservedMatrix, ids: Option<&[String]>) -> Result<Vec<EmbeddedPatient>> {
    if let Some(ids) = ids {
        if ids.len() != x.ncols() {
            return Err(SpargeError::dims("ids vs samples", x.ncols(), ids.len()));
        }
    }
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let id = ids.map_or_else(|| j.to_string(), |ids| ids[j].clone());
            embed(model, id, &x.column(j)).map_err(|e| e.at_column(j))
        })
        .collect()
}

/// Nonzero `|φ|` entries of the sample's code, largest first (ties by atom
/// index).
pub fn similar_by_weight(model: &SpargeModel, x: &MaskedVector) -> Result<SimilarityResult> {
    let code = encode(model, x)?;
    let mut weights: Vec<(usize, f64)> = code.active_set.iter().map(|&j| (j, code.phi[j].abs())).collect();
    weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(SimilarityResult {
        neighbor_ids: weights.iter().map(|(j, _)| j.to_string()).collect(),
        distances: Vec::new(),
        sparse_weights: Some(weights),
    })
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

/// Indices and squared distances of the `k` columns of `points` nearest to
/// `query`, nearest first; equal distances keep column order.
pub fn nearest_columns(points: &DMatrix<f64>, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    let n = points.ncols();
    if n == 0 {
        return Err(SpargeError::EmptyInput("query population"));
    }
    if k == 0 || k > n {
        return Err(SpargeError::InvalidParameter(format!("K must be in 1..={n} (got {k})")));
    }
    if query.len() != points.nrows() {
        return Err(SpargeError::dims("query length", points.nrows(), query.len()));
    }
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (index, col) in points.column_iter().enumerate() {
        let mut dist = 0.0;
        for (a, b) in col.iter().zip(query) {
            let d = a - b;
            dist += d * d;
        }
        let cand = Candidate { dist, index };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("nonempty") {
            heap.pop();
            heap.push(cand);
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|c| (c.index, c.dist)).collect())
}

fn stack(population: &[EmbeddedPatient]) -> Result<DMatrix<f64>> {
    let l = population.first().map(|p| p.y.len()).ok_or(SpargeError::EmptyInput("query population"))?;
    if let Some(bad) = population.iter().find(|p| p.y.len() != l) {
        return Err(SpargeError::dims("embedding length", l, bad.y.len()));
    }
    Ok(DMatrix::from_fn(l, population.len(), |r, c| population[c].y[r]))
}

/// The `k` nearest members of `population` to `y`.
pub fn knn_query(population: &[EmbeddedPatient], y: &DVector<f64>, k: usize) -> Result<SimilarityResult> {
    let points = stack(population)?;
    let hits = nearest_columns(&points, y.as_slice(), k)?;
    Ok(SimilarityResult {
        neighbor_ids: hits.iter().map(|&(i, _)| population[i].id.clone()).collect(),
        distances: hits.iter().map(|&(_, d)| d.sqrt()).collect(),
        sparse_weights: None,
    })
}

/// Majority label among the `k` nearest columns. Ties go to the tied label
/// whose member is nearest.
pub fn knn_classify_columns(points: &DMatrix<f64>, labels: &[usize], query: &[f64], k: usize) -> Result<usize> {
    if labels.len() != points.ncols() {
        return Err(SpargeError::dims("labels vs population", points.ncols(), labels.len()));
    }
    let hits = nearest_columns(points, query, k)?;
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for &(i, _) in &hits {
        *votes.entry(labels[i]).or_default() += 1;
    }
    let top = *votes.values().max().expect("k >= 1");
    Ok(hits
        .iter()
        .map(|&(i, _)| labels[i])
        .find(|c| votes[c] == top)
        .expect("a top label occurs among the hits"))
}

pub fn knn_classify(train: &[EmbeddedPatient], labels: &[usize], query: &DVector<f64>, k: usize) -> Result<usize> {
    let points = stack(train)?;
    knn_classify_columns(&points, labels, query.as_slice(), k)
}

/// Binary logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn logreg_loss(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, l2: f64) -> f64 {
    let scores = x.tr_mul(w).add_scalar(b);
    let data: f64 = scores
        .iter()
        .zip(y)
        .map(|(&s, &t)| softplus(s) - t * s)
        .sum();
    data + 0.5 * l2 * w.norm_squared()
}

/// Newton iterations on `Σ log(1 + e^{s}) − y·s + (l2/2)‖w‖²` with an
/// unregularized bias; stops when the gradient norm drops below 1e-8.
/// Samples are the columns of `x`; labels must be 0 or 1.
pub fn logreg_train(x: &DMatrix<f64>, labels: &[usize], l2: f64, max_iter: usize) -> Result<LogReg> {
    let (p, n) = x.shape();
    if labels.len() != n {
        return Err(SpargeError::dims("labels vs samples", n, labels.len()));
    }
    if n == 0 {
        return Err(SpargeError::EmptyInput("logistic regression training set"));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c > 1) {
        return Err(SpargeError::InvalidParameter(format!("logistic regression labels must be 0/1 (got {bad})")));
    }
    if labels.iter().all(|&c| c == labels[0]) {
        return Err(SpargeError::SingleClass);
    }
    if !(l2 >= 0.0) {
        return Err(SpargeError::InvalidParameter(format!("l2 must be nonnegative (got {l2})")));
    }
    let y: Vec<f64> = labels.iter().map(|&c| c as f64).collect();
    // Augmented design with a trailing row of ones for the bias.
    let mut a = DMatrix::from_element(p + 1, n, 1.0);
    a.view_mut((0, 0), (p, n)).copy_from(x);
    let mut theta = DVector::zeros(p + 1);
    let mut converged = false;
    let mut iterations = 0;
    let loss_at = |t: &DVector<f64>| logreg_loss(x, &y, &t.rows(0, p).into_owned(), t[p], l2);
    while iterations < max_iter {
        let scores = a.tr_mul(&theta);
        let probs = scores.map(sigmoid);
        let resid = DVector::from_iterator(n, probs.iter().zip(&y).map(|(q, t)| q - t));
        let mut grad = &a * &resid;
        for j in 0..p {
            grad[j] += l2 * theta[j];
        }
        if grad.norm() < 1e-8 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut weighted = a.clone();
        for (c, mut col) in weighted.column_iter_mut().enumerate() {
            col *= probs[c] * (1.0 - probs[c]);
        }
        let mut hess = &weighted * a.transpose();
        for j in 0..p {
            hess[(j, j)] += l2;
        }
        for j in 0..=p {
            hess[(j, j)] += 1e-12;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        let base = loss_at(&theta);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            if loss_at(&cand) <= base || t < 1e-10 {
                theta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(LogReg {
        weights: theta.rows(0, p).into_owned(),
        bias: theta[p],
        iterations,
        converged,
    })
}

impl LogReg {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}

/// Class 1 when the logistic probability is at least 0.5.
pub fn logreg_predict(model: &LogReg, x: &[f64]) -> Result<usize> {
    if x.len() != model.weights.len() {
        return Err(SpargeError::dims("feature length", model.weights.len(), x.len()));
    }
    Ok(usize::from(model.score(x) >= 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub per_class_recall: BTreeMap<usize, f64>,
    /// `Σ_c (support_c / n) · recall_c`
    pub weighted_recall: f64,
    pub mean_predict_seconds: f64,
    pub n: usize,
}

pub fn evaluate(predictions: &[usize], labels: &[usize], timings: &[f64]) -> Result<EvalMetrics> {
    let n = labels.len();
    if n == 0 {
        return Err(SpargeError::EmptyInput("evaluation set"));
    }
    if predictions.len() != n {
        return Err(SpargeError::dims("predictions vs labels", n, predictions.len()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let mut support: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        let e = support.entry(l).or_default();
        e.0 += 1;
        if p == l {
            e.1 += 1;
        }
    }
    let per_class_recall: BTreeMap<usize, f64> =
        support.iter().map(|(&c, &(s, hit))| (c, hit as f64 / s as f64)).collect();
    let weighted_recall = support
        .iter()
        .map(|(c, &(s, _))| (s as f64 / n as f64) * per_class_recall[c])
        .sum();
    let mean_predict_seconds = if timings.is_empty() {
        0.0
    } else {
        timings.iter().sum::<f64>() / timings.len() as f64
    };
    Ok(EvalMetrics {
        accuracy: correct as f64 / n as f64,
        per_class_recall,
        weighted_recall,
        mean_predict_seconds,
        n,
    })
}

impl EvalMetrics {
    /// `metric,value` rows. Class names, when given, replace the numeric ids.
    pub fn to_csv(&self, class_names: Option<&[String]>, with_timing: bool) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("accuracy,{:.17e}\n", self.accuracy));
        out.push_str(&format!("weighted_recall,{:.17e}\n", self.weighted_recall));
        for (c, r) in &self.per_class_recall {
            let name = class_names.and_then(|n| n.get(*c)).cloned().unwrap_or_else(|| c.to_string());
            out.push_str(&format!("recall[{name}],{r:.17e}\n"));
        }
        out.push_str(&format!("n,{}\n", self.n));
        if with_timing {
            out.push_str(&format!("mean_predict_seconds,{:.9e}\n", self.mean_predict_seconds));
        }
        out
    }

    pub fn to_table(&self, class_names: Option<&[String]>) -> String {
        let mut out = format!(
            "{:<24}{:>10}\n{:<24}{:>10.4}\n{:<24}{:>10.4}\n",
            "metric", "value", "accuracy", self.accuracy, "weighted recall", self.weighted_recall
        );
        for (c, r) in &self.per_class_recall {
            let name = class_names.and_then(|n| n.get(*c)).cloned().unwrap_or_else(|| c.to_string());
            out.push_str(&format!("{:<24}{:>10.4}\n", format!("recall {name}"), r));
        }
        out.push_str(&format!("{:<24}{:>10.3e}\n", "mean predict (s)", self.mean_predict_seconds));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(points: &[&[f64]]) -> Vec<EmbeddedPatient> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| EmbeddedPatient::new(format!("p{i}"), DVector::from_column_slice(p)).unwrap())
            .collect()
    }

    #[test]
    fn knn_line() {
        let p = pop(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]);
        let r = knn_query(&p, &DVector::zeros(2), 2).unwrap();
        assert_eq!(r.neighbor_ids, vec!["p0", "p1"]);
        assert_eq!(r.distances, vec![0.0, 1.0]);
        let all = knn_query(&p, &DVector::from_vec(vec![1.8, 0.0]), 3).unwrap();
        assert_eq!(all.neighbor_ids, vec!["p2", "p1", "p0"]);
    }

    #[test]
    fn knn_ties_keep_insertion_order() {
        let p = pop(&[&[5.0], &[1.0], &[1.0], &[-1.0]]);
        let r = knn_query(&p, &DVector::from_vec(vec![0.0]), 3).unwrap();
        assert_eq!(r.neighbor_ids, vec!["p1", "p2", "p3"]);
        assert!(knn_query(&p, &DVector::from_vec(vec![0.0]), 5).is_err());
        assert!(knn_query(&[], &DVector::from_vec(vec![0.0]), 1).is_err());
    }

    #[test]
    fn classify_votes() {
        let p = pop(&[&[0.0], &[1.0], &[1.1], &[9.0]]);
        let labels = [0, 1, 1, 0];
        let q = DVector::from_vec(vec![0.2]);
        assert_eq!(knn_classify(&p, &labels, &q, 1).unwrap(), 0);
        assert_eq!(knn_classify(&p, &labels, &q, 3).unwrap(), 1);
        // 1-1 tie at K=2 goes to the nearest neighbor's label.
        assert_eq!(knn_classify(&p, &labels, &q, 2).unwrap(), 0);
        assert_eq!(knn_classify(&p, &[3, 3, 3, 3], &q, 4).unwrap(), 3);
    }

    #[test]
    fn logreg_separable_line() {
        let x = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let m = logreg_train(&x, &[0, 1], 0.1, 100).unwrap();
        assert!(m.converged);
        assert_eq!(logreg_predict(&m, &[-1.0]).unwrap(), 0);
        assert_eq!(logreg_predict(&m, &[1.0]).unwrap(), 1);
    }

    #[test]
    fn logreg_heavy_penalty_predicts_majority() {
        let x = DMatrix::from_row_slice(1, 5, &[-2.0, -1.0, 0.5, 1.0, 3.0]);
        let m = logreg_train(&x, &[1, 1, 1, 0, 0], 1e9, 200).unwrap();
        assert!(m.weights.amax() < 1e-6);
        for v in [-5.0, 0.0, 5.0] {
            assert_eq!(logreg_predict(&m, &[v]).unwrap(), 1);
        }
    }

    #[test]
    fn logreg_single_class_rejected() {
        let x = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        assert!(matches!(logreg_train(&x, &[1, 1], 0.1, 10), Err(SpargeError::SingleClass)));
    }

    #[test]
    fn metrics_arithmetic() {
        let m = evaluate(&[0, 1, 1, 1], &[0, 0, 1, 1], &[]).unwrap();
        assert_eq!(m.per_class_recall[&0], 0.5);
        assert_eq!(m.per_class_recall[&1], 1.0);
        assert_eq!(m.weighted_recall, 0.75);
        assert_eq!(m.accuracy, 0.75);
        let absent = evaluate(&[1, 1], &[0, 1], &[]).unwrap();
        assert_eq!(absent.per_class_recall[&0], 0.0);
        assert!(evaluate(&[], &[], &[]).is_err());
    }
}
