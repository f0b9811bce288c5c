//! Distance and neighbourhood kernels over empirical distributions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingMatrix};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("distribution has no observations")]
    Empty,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("expected {expected} distributions")]
    KindMismatch { expected: &'static str },
    #[error("k = {k} needs more than {k} points, got {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{radii} radii for {refs} reference points")]
    RadiiMismatch { radii: usize, refs: usize },
}

/// Numeric samples (sorted, equally weighted) or a categorical count table.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalDistribution {
    Numeric(Vec<f64>),
    Categorical(BTreeMap<String, u64>),
}

impl EmpiricalDistribution {
    pub fn numeric(values: impl IntoIterator<Item = f64>) -> Result<Self, StatsError> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(StatsError::Empty);
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite(*bad));
        }
        v.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution::Numeric(v))
    }

    pub fn categorical<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, StatsError> {
        let mut counts = BTreeMap::new();
        for l in labels {
            *counts.entry(l.into()).or_insert(0u64) += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: BTreeMap<String, u64>) -> Result<Self, StatsError> {
        let counts: BTreeMap<String, u64> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        if counts.is_empty() {
            return Err(StatsError::Empty);
        }
        Ok(EmpiricalDistribution::Categorical(counts))
    }

    pub fn len(&self) -> usize {
        match self {
            EmpiricalDistribution::Numeric(v) => v.len(),
            EmpiricalDistribution::Categorical(c) => c.values().sum::<u64>() as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact 1-D Wasserstein-2 distance between two empirical measures.
///
/// The quantile functions are step functions with breaks at `i/n` and
/// `j/m`; the integral of their squared difference is summed piece by
/// piece over the merged breakpoints, measured in units of `1/(n·m)`.
pub fn wasserstein2(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64, StatsError> {
    let (EmpiricalDistribution::Numeric(x), EmpiricalDistribution::Numeric(y)) = (p, q) else {
        return Err(StatsError::KindMismatch { expected: "numeric" });
    };
    let (n, m) = (x.len() as u128, y.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    let mut t: u128 = 0;
    let total = n * m;
    let mut acc = 0.0;
    while t < total {
        let next_x = (i as u128 + 1) * m;
        let next_y = (j as u128 + 1) * n;
        let next = next_x.min(next_y);
        let d = x[i] - y[j];
        acc += (next - t) as f64 * d * d;
        t = next;
        if next_x == next {
            i += 1;
        }
        if next_y == next {
            j += 1;
        }
    }
    Ok((acc / total as f64).sqrt())
}

/// Half the L1 distance between the normalized count tables.
pub fn total_variation(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64, StatsError> {
    let (EmpiricalDistribution::Categorical(a), EmpiricalDistribution::Categorical(b)) = (p, q) else {
        return Err(StatsError::KindMismatch { expected: "categorical" });
    };
    let na = a.values().sum::<u64>() as f64;
    let nb = b.values().sum::<u64>() as f64;
    let mut sum = 0.0;
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    for key in keys {
        let pa = a.get(key).copied().unwrap_or(0) as f64 / na;
        let pb = b.get(key).copied().unwrap_or(0) as f64 / nb;
        sum += (pa - pb).abs();
    }
    Ok((0.5 * sum).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 − cosine similarity`.
    CosineDistance,
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::CosineDistance => "cosine-distance",
        })
    }
}

impl DistanceMetric {
    pub fn distance(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            DistanceMetric::CosineDistance => {
                if u == v && u.iter().any(|&x| x != 0.0) {
                    0.0
                } else {
                    1.0 - cosine_similarity(u, v).expect("dimensions checked by caller")
                }
            }
        }
    }
}

/// Distance from each point to its k-th nearest neighbour in its own set.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRadii {
    pub k: usize,
    pub radii: Vec<f64>,
}

pub fn knn_radii(points: &EmbeddingMatrix, k: usize, metric: DistanceMetric) -> Result<NeighborRadii, StatsError> {
    if k == 0 {
        return Err(StatsError::KZero);
    }
    let n = points.len();
    if k >= n {
        return Err(StatsError::KTooLarge { k, n });
    }
    let radii = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| metric.distance(points.row(i), points.row(j)))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect();
    Ok(NeighborRadii { k, radii })
}

/// Fraction of `queries` that fall inside at least one closed ball
/// `B(ref, radius(ref))`.
pub fn coverage_fraction(
    queries: &EmbeddingMatrix,
    refs: &EmbeddingMatrix,
    radii: &NeighborRadii,
    metric: DistanceMetric,
) -> Result<f64, StatsError> {
    if queries.is_empty() {
        return Err(StatsError::Empty);
    }
    if queries.dimension != refs.dimension {
        return Err(StatsError::DimensionMismatch(queries.dimension, refs.dimension));
    }
    if radii.radii.len() != refs.len() {
        return Err(StatsError::RadiiMismatch {
            radii: radii.radii.len(),
            refs: refs.len(),
        });
    }
    let covered = (0..queries.len())
        .into_par_iter()
        .filter(|&qi| {
            let q = queries.row(qi);
            (0..refs.len()).any(|ri| metric.distance(q, refs.row(ri)) <= radii.radii[ri])
        })
        .count();
    Ok(covered as f64 / queries.len() as f64)
}
