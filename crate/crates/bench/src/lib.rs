//! Fixtures shared by the benchmarks.

use sparge_core::data_io::{generate_synthetic, normalize_observed, Synthetic, SyntheticSpec};
use sparge_core::{fit, Descent, Hyperparams, ObservedMatrix, SpargeModel, SvtRule};

/// Three-class synthetic cohort with `m` features and `per_class` samples per class.
pub fn cohort(m: usize, per_class: usize, seed: u64) -> Synthetic {
    generate_synthetic(&SyntheticSpec {
        subspace_count: 3,
        ambient_dim: m,
        subspace_dim: 4,
        per_class_count: per_class,
        noise_sigma: 0.05,
        missing_rate: 0.2,
        seed,
    })
    .expect("valid synthetic spec")
}

/// Normalized observations and a briefly fitted model of dictionary size `k`, embedding width `l`.
pub fn trained(data: &Synthetic, k: usize, l: usize) -> (ObservedMatrix, SpargeModel) {
    let (x, _) = normalize_observed(&data.observed).expect("nonempty cohort");
    let hp = Hyperparams {
        k,
        l,
        max_iter: 3,
        gamma: 1.0,
        descent: Descent::Composite,
        svt_rule: SvtRule::ProximalStep,
        ..Hyperparams::default()
    };
    let (model, _) = fit(&x, Some(&data.labels), &hp).expect("fit succeeds");
    (x, model)
}
