use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SpargeError};
use crate::matrix_recovery::ObservedMatrix;

/// Imputation values for the 17 clinical channels, in channel order.
pub const CLINICAL_NORMAL_VALUES: [(&str, f64); 17] = [
    ("Capillary refill rate", 0.0),
    ("Diastolic blood pressure", 59.0),
    ("Fraction inspired oxygen", 0.21),
    ("Glasgow coma scale eye opening", 4.0),
    ("Glasgow coma scale motor response", 6.0),
    ("Glasgow coma scale total", 15.0),
    ("Glasgow coma scale verbal response", 5.0),
    ("Glucose", 128.0),
    ("Heart Rate", 86.0),
    ("Height", 170.0),
    ("Mean blood pressure", 77.0),
    ("Oxygen saturation", 98.0),
    ("Respiratory rate", 19.0),
    ("Systolic blood pressure", 118.0),
    ("Temperature", 36.6),
    ("Weight", 81.0),
    ("PH", 7.4),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NearbyWeights {
    Uniform,
    /// Weight 1/r for the r-th nearest observation.
    #[default]
    InverseRank,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImputePolicy {
    None,
    /// Fixed value per feature name.
    NormalValues(BTreeMap<String, f64>),
    /// Weighted mean of the `window` nearest observed samples of the same
    /// feature (nearest by sample position, ties to the earlier sample).
    WeightedNearby { window: usize, weights: NearbyWeights },
    /// Mean of the observed values of the feature.
    Mean,
}

impl ImputePolicy {
    pub fn clinical_normal_values() -> Self {
        ImputePolicy::NormalValues(
            CLINICAL_NORMAL_VALUES
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        )
    }

    pub fn weighted_nearby() -> Self {
        ImputePolicy::WeightedNearby {
            window: 10,
            weights: NearbyWeights::default(),
        }
    }
}

fn observed_in_row(x: &ObservedMatrix, i: usize) -> Vec<usize> {
    (0..x.ncols()).filter(|&j| x.is_observed(i, j)).collect()
}

/// Fill unobserved cells; the result is fully observed unless the policy is
/// `None`. Feature names index `NormalValues` tables.
pub fn impute(x: &ObservedMatrix, feature_names: &[String], policy: &ImputePolicy) -> Result<ObservedMatrix> {
    if feature_names.len() != x.nrows() {
        return Err(SpargeError::dims("feature names", x.nrows(), feature_names.len()));
    }
    let mut values = x.values().clone();
    for i in 0..x.nrows() {
        let seen = observed_in_row(x, i);
        if seen.len() == x.ncols() {
            continue;
        }
        let name = &feature_names[i];
        match policy {
            ImputePolicy::None => return Ok(x.clone()),
            ImputePolicy::NormalValues(table) => {
                let v = *table
                    .get(name)
                    .ok_or_else(|| SpargeError::Config(format!("no impute value for feature {name:?}")))?;
                for j in 0..x.ncols() {
                    if !x.is_observed(i, j) {
                        values[(i, j)] = v;
                    }
                }
            }
            ImputePolicy::Mean => {
                if seen.is_empty() {
                    return Err(SpargeError::Config(format!("feature {name:?} has no observed values")));
                }
                let mean = seen.iter().map(|&j| x.values()[(i, j)]).sum::<f64>() / seen.len() as f64;
                for j in 0..x.ncols() {
                    if !x.is_observed(i, j) {
                        values[(i, j)] = mean;
                    }
                }
            }
            ImputePolicy::WeightedNearby { window, weights } => {
                if *window == 0 {
                    return Err(SpargeError::InvalidParameter("impute window must be positive".into()));
                }
                if seen.is_empty() {
                    return Err(SpargeError::Config(format!("feature {name:?} has no observed values")));
                }
                for j in 0..x.ncols() {
                    if x.is_observed(i, j) {
                        continue;
                    }
                    let mut near = seen.clone();
                    near.sort_by_key(|&s| (s.abs_diff(j), s));
                    near.truncate(*window);
                    let (mut num, mut den) = (0.0, 0.0);
                    for (r, &s) in near.iter().enumerate() {
                        let w = match weights {
                            NearbyWeights::Uniform => 1.0,
                            NearbyWeights::InverseRank => 1.0 / (r + 1) as f64,
                        };
                        num += w * x.values()[(i, s)];
                        den += w;
                    }
                    values[(i, j)] = num / den;
                }
            }
        }
    }
    if matches!(policy, ImputePolicy::None) {
        return Ok(x.clone());
    }
    ObservedMatrix::fully_observed(values)
}

/// Scale every column to unit Euclidean norm; returns the original norms.
pub fn normalize_unit_columns(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if !n.is_finite() {
            return Err(SpargeError::NonFinite("column norm"));
        }
        if n == 0.0 {
            return Err(SpargeError::InvalidParameter(format!("column {j} is all zero")));
        }
        col /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

/// [`normalize_unit_columns`] for masked data: norms use observed entries only
/// and the mask is kept.
pub fn normalize_observed(x: &ObservedMatrix) -> Result<(ObservedMatrix, Vec<f64>)> {
    let (values, norms) = normalize_unit_columns(x.values())?;
    Ok((ObservedMatrix::new(values, x.mask().clone())?, norms))
}

/// Seeded shuffle, then the first `⌊ratio·n⌋` indices train and the rest test.
/// Both lists are returned sorted.
pub fn split_train_test(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(SpargeError::InvalidParameter(format!("need at least 2 samples to split (got {n})")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SpargeError::InvalidParameter(format!("split ratio must be in (0, 1) (got {ratio})")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (ratio * n as f64).floor() as usize;
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    /// Integer grades `first, first+1, …, first+levels−1`, one indicator each.
    Categorical { name: String, levels: usize, first: i64 },
    Continuous { name: String },
}

impl Channel {
    pub fn categorical(name: &str, levels: usize, first: i64) -> Self {
        Channel::Categorical {
            name: name.to_string(),
            levels,
            first,
        }
    }

    pub fn continuous(name: &str) -> Self {
        Channel::Continuous { name: name.to_string() }
    }

    pub fn name(&self) -> &str {
        match self {
            Channel::Categorical { name, .. } | Channel::Continuous { name } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Channel::Categorical { levels, .. } => *levels,
            Channel::Continuous { .. } => 1,
        }
    }
}

/// Per-timestep layout of a clinical series.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLayout {
    pub channels: Vec<Channel>,
    /// Append one observed/missing indicator per channel.
    pub mask_channels: bool,
}

impl ChannelLayout {
    /// The 17 clinical channels with their grade scales.
    pub fn clinical17(mask_channels: bool) -> Self {
        let channels = CLINICAL_NORMAL_VALUES
            .iter()
            .map(|(name, _)| match *name {
                "Capillary refill rate" => Channel::categorical(name, 2, 0),
                "Glasgow coma scale eye opening" => Channel::categorical(name, 4, 1),
                "Glasgow coma scale motor response" => Channel::categorical(name, 6, 1),
                "Glasgow coma scale total" => Channel::categorical(name, 13, 3),
                "Glasgow coma scale verbal response" => Channel::categorical(name, 5, 1),
                _ => Channel::continuous(name),
            })
            .collect();
        ChannelLayout { channels, mask_channels }
    }

    pub fn width(&self) -> usize {
        let base: usize = self.channels.iter().map(Channel::width).sum();
        base + if self.mask_channels { self.channels.len() } else { 0 }
    }
}

/// Expand a `T × channels` series (rows are timesteps) per the layout and
/// flatten row-major into a `T·width` vector. Missing cells give all-zero
/// blocks.
pub fn one_hot_flatten(
    series: &DMatrix<f64>,
    observed: Option<&DMatrix<bool>>,
    layout: &ChannelLayout,
) -> Result<DVector<f64>> {
    let nc = layout.channels.len();
    if series.ncols() != nc {
        return Err(SpargeError::dims("series channels", nc, series.ncols()));
    }
    if let Some(o) = observed {
        if o.shape() != series.shape() {
            return Err(SpargeError::dims(
                "series mask",
                format!("{:?}", series.shape()),
                format!("{:?}", o.shape()),
            ));
        }
    }
    let width = layout.width();
    let mut out = DVector::zeros(series.nrows() * width);
    for t in 0..series.nrows() {
        let mut pos = t * width;
        for (c, ch) in layout.channels.iter().enumerate() {
            let seen = observed.is_none_or(|o| o[(t, c)]);
            let v = series[(t, c)];
            if seen && !v.is_finite() {
                return Err(SpargeError::NonFinite("series value"));
            }
            match ch {
                Channel::Continuous { .. } => {
                    if seen {
                        out[pos] = v;
                    }
                }
                Channel::Categorical { name, levels, first } => {
                    if seen {
                        let offset = v - *first as f64;
                        if offset.fract() != 0.0 || offset < 0.0 || offset >= *levels as f64 {
                            return Err(SpargeError::CategoryOutOfRange {
                                channel: name.clone(),
                                value: v,
                            });
                        }
                        out[pos + offset as usize] = 1.0;
                    }
                }
            }
            pos += ch.width();
        }
        if layout.mask_channels {
            for c in 0..nc {
                if observed.is_none_or(|o| o[(t, c)]) {
                    out[pos + c] = 1.0;
                }
            }
        }
    }
    Ok(out)
}
