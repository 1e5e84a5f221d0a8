use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit, Hyperparams};
use crate::error::{Result, SpargeError};
use crate::matrix_recovery::ObservedMatrix;
use crate::similarity::{embed_all, knn_classify_columns};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    pub r1: f64,
    pub r2: f64,
}

impl GridPoint {
    fn apply(&self, base: &Hyperparams) -> Hyperparams {
        Hyperparams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            r1: self.r1,
            r2: self.r2,
            ..base.clone()
        }
    }

    fn size(&self) -> f64 {
        self.lambda1 + self.lambda2 + self.r1 + self.r2
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: Hyperparams,
    pub best_index: usize,
    /// Cross-validated 1-NN accuracy of every grid point, in grid order.
    pub scores: Vec<(GridPoint, f64)>,
    pub warnings: Vec<String>,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda1,lambda2,r1,r2,cv_accuracy\n");
        for (p, s) in &self.scores {
            out.push_str(&format!("{},{},{},{},{:.17e}\n", p.lambda1, p.lambda2, p.r1, p.r2, s));
        }
        out
    }
}

/// Pooled k-fold 1-NN accuracy in the embedded space for each grid point.
/// A grid point whose fit fails numerically scores 0. Ties go to the smaller
/// `λ1 + λ2 + r1 + r2`, then to grid order.
pub fn grid_search(
    x: &ObservedMatrix,
    labels: &[usize],
    base: &Hyperparams,
    grid: &[GridPoint],
    folds: usize,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(SpargeError::EmptyInput("hyperparameter grid"));
    }
    if !base.is_supervised() {
        return Err(SpargeError::InvalidParameter("grid search needs supervised mode".into()));
    }
    let n = x.ncols();
    if labels.len() != n {
        return Err(SpargeError::dims("labels", n, labels.len()));
    }
    if folds < 2 || folds > n {
        return Err(SpargeError::InvalidParameter(format!("folds must be in 2..={n} (got {folds})")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let mut scores = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    for (gi, point) in grid.iter().enumerate() {
        let hp = point.apply(base);
        let mut correct = 0;
        let mut failed = None;
        for f in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let outcome = fit(&x.select_columns(&train), Some(&train_labels), &hp).and_then(|(model, _)| {
                let queries = embed_all(&model, &x.select_columns(&test), None)?;
                let points = model.embedded_training();
                let mut hits = 0;
                for (q, &i) in queries.iter().zip(&test) {
                    if knn_classify_columns(&points, &train_labels, q.y.as_slice(), 1)? == labels[i] {
                        hits += 1;
                    }
                }
                Ok(hits)
            });
            match outcome {
                Ok(h) => correct += h,
                Err(e) if e.is_numerical() => {
                    failed = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let score = match failed {
            Some(e) => {
                warnings.push(format!("grid point {gi}: {e}"));
                0.0
            }
            None => correct as f64 / n as f64,
        };
        log::info!("grid point {gi}: cv accuracy {score:.4}");
        scores.push((*point, score));
    }
    let best_index = (0..scores.len())
        .max_by(|&a, &b| {
            scores[a]
                .1
                .total_cmp(&scores[b].1)
                .then(scores[b].0.size().total_cmp(&scores[a].0.size()))
                .then(b.cmp(&a))
        })
        .expect("nonempty grid");
    Ok(GridResult {
        best: grid[best_index].apply(base),
        best_index,
        scores,
        warnings,
    })
}
