use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SpargeError};
use crate::matrix_recovery::ObservedMatrix;

/// Union-of-subspaces benchmark with noise and random missingness.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub subspace_count: usize,
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub per_class_count: usize,
    pub noise_sigma: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 3 classes of 40 samples on 4-dimensional subspaces of R^60, σ = 0.05,
    /// 20% missing.
    pub fn benchmark(seed: u64) -> Self {
        SyntheticSpec {
            subspace_count: 3,
            ambient_dim: 60,
            subspace_dim: 4,
            per_class_count: 40,
            noise_sigma: 0.05,
            missing_rate: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpargeError::InvalidParameter(m));
        if self.subspace_count == 0 || self.per_class_count == 0 || self.subspace_dim == 0 {
            return bad("class count, class size and subspace dimension must be positive".into());
        }
        if self.subspace_dim >= self.ambient_dim {
            return bad(format!(
                "subspace dimension {} must be below the ambient dimension {}",
                self.subspace_dim, self.ambient_dim
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be finite and >= 0 (got {})", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing rate must be in [0, 1) (got {})", self.missing_rate));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.subspace_count * self.per_class_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub observed: ObservedMatrix,
    /// Class of each column; columns are grouped by class.
    pub labels: Vec<usize>,
    /// Noise-free, fully observed samples.
    pub clean: DMatrix<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draw the bases, then per class the coefficients, then the noise, then the
/// mask, all from one seeded stream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let (m, d, c, ni) = (
        spec.ambient_dim,
        spec.subspace_dim,
        spec.subspace_count,
        spec.per_class_count,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bases: Vec<DMatrix<f64>> = (0..c).map(|_| gaussian(&mut rng, m, d).qr().q()).collect();
    let n = spec.n();
    let mut clean = DMatrix::zeros(m, n);
    let mut labels = Vec::with_capacity(n);
    for (class, basis) in bases.iter().enumerate() {
        let coeffs = gaussian(&mut rng, d, ni);
        clean.columns_mut(class * ni, ni).copy_from(&(basis * coeffs));
        labels.extend(std::iter::repeat_n(class, ni));
    }
    let mut noisy = clean.clone();
    if spec.noise_sigma > 0.0 {
        noisy += gaussian(&mut rng, m, n) * spec.noise_sigma;
    }
    let mut mask = DMatrix::from_element(m, n, true);
    if spec.missing_rate > 0.0 {
        for j in 0..n {
            loop {
                for i in 0..m {
                    mask[(i, j)] = !rng.random_bool(spec.missing_rate);
                }
                if mask.column(j).iter().any(|&b| b) {
                    break;
                }
            }
        }
    }
    let values = noisy.zip_map(&mask, |v, seen| if seen { v } else { 0.0 });
    Ok(Synthetic {
        observed: ObservedMatrix::new(values, mask)?,
        labels,
        clean,
    })
}
