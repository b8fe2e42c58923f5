//! Hubness measurement (k-occurrence skewness, Robin Hood index) and
//! hubness reduction by mutual proximity.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{EmbeddingSet, Vocab};
use crate::error::{AuditError, Result};
use crate::par;
use crate::simspace::{similarity_matrix, to_dissimilarity, DistMatrix, NeighborhoodIndex, Ranking, SimKind, SimMatrix};

/// How often each label shows up in the other labels' k-neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct KOccurrence {
    pub vocab: Vocab,
    pub k: usize,
    pub counts: Vec<usize>,
}

pub fn k_occurrence(index: &NeighborhoodIndex) -> KOccurrence {
    let mut counts = vec![0usize; index.len()];
    for list in index.lists() {
        for &j in list {
            counts[j] += 1;
        }
    }
    KOccurrence {
        vocab: index.vocab().clone(),
        k: index.k(),
        counts,
    }
}

/// Moment skewness `m3 / m2^(3/2)` with population central moments; 0 when
/// all values coincide.
pub fn sample_skewness(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(m2, m3), &v| {
        let d = v - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 == 0.0 {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

pub fn skewness(occ: &KOccurrence) -> f64 {
    let v: Vec<f64> = occ.counts.iter().map(|&c| c as f64).collect();
    sample_skewness(&v)
}

/// Fraction of neighbor-list slots that would have to move for every label to
/// occur equally often: `0.5 * sum |c_i - mean| / sum c_i`.
pub fn robinhood_index(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mean = total / counts.len() as f64;
    0.5 * counts.iter().map(|c| (c - mean).abs()).sum::<f64>() / total
}

pub fn robinhood(occ: &KOccurrence) -> f64 {
    let v: Vec<f64> = occ.counts.iter().map(|&c| c as f64).collect();
    robinhood_index(&v)
}

/// Standard normal survival function.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Mean and (population) standard deviation of each row, self-distance excluded.
fn row_stats(dist: &DistMatrix) -> Result<Vec<(f64, f64)>> {
    let n = dist.n();
    let stats = par::map_range(n, |i| {
        let row = dist.row(i);
        let m = (n - 1) as f64;
        let mean = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, d)| d).sum::<f64>() / m;
        let var = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, d)| (d - mean).powi(2))
            .sum::<f64>()
            / m;
        (mean, var.sqrt())
    });
    if let Some(i) = stats.iter().position(|&(_, sd)| sd == 0.0) {
        return Err(AuditError::DegenerateDistanceRow(dist.vocab().label(i).to_string()));
    }
    Ok(stats)
}

/// Mutual proximity under independent per-point Gaussian distance models:
/// `MP(i, j) = SF((d_ij - mu_i) / sd_i) * SF((d_ij - mu_j) / sd_j)`.
pub fn mutual_proximity(dist: &DistMatrix) -> Result<SimMatrix> {
    if dist.n() < 3 {
        return Err(AuditError::BadValue("mutual proximity needs at least 3 points".into()));
    }
    let stats = row_stats(dist)?;
    Ok(SimMatrix::from_pairs(dist.vocab().clone(), SimKind::Secondary, 1.0, |i, j| {
        let d = dist.get(i, j);
        let (mi, si) = stats[i];
        let (mj, sj) = stats[j];
        normal_sf((d - mi) / si) * normal_sf((d - mj) / sj)
    }))
}

/// Local scaling: `exp(-d_ij^2 / (s_i s_j))` with `s_i` the distance from `i`
/// to its `k`-th nearest neighbor.
pub fn local_scaling(dist: &DistMatrix, k: usize) -> Result<SimMatrix> {
    let n = dist.n();
    if k == 0 || k >= n {
        return Err(AuditError::BadK {
            k,
            max: n.saturating_sub(1),
        });
    }
    let scale = par::map_range(n, |i| {
        let mut row: Vec<f64> = dist
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .collect();
        row.sort_by(f64::total_cmp);
        row[k - 1]
    });
    if let Some(i) = scale.iter().position(|&s| s == 0.0) {
        return Err(AuditError::DegenerateDistanceRow(dist.vocab().label(i).to_string()));
    }
    Ok(SimMatrix::from_pairs(dist.vocab().clone(), SimKind::Secondary, 1.0, |i, j| {
        let d = dist.get(i, j);
        (-d * d / (scale[i] * scale[j])).exp()
    }))
}

/// Hubness reduction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Reduction {
    /// Gaussian mutual proximity.
    MpGauss,
    /// Local scaling with the k-th neighbor distance as the scale.
    LocalScaling { k: usize },
}

impl Reduction {
    pub fn apply(self, dist: &DistMatrix) -> Result<SimMatrix> {
        match self {
            Reduction::MpGauss => mutual_proximity(dist),
            Reduction::LocalScaling { k } => local_scaling(dist, k),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reduction::MpGauss => write!(f, "mp-gauss"),
            Reduction::LocalScaling { k } => write!(f, "local-scaling:{k}"),
        }
    }
}

impl FromStr for Reduction {
    type Err = String;

    /// `mp-gauss`, `local-scaling` (k = 10) or `local-scaling:<k>`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "mp-gauss" | "mp" => Ok(Reduction::MpGauss),
            "local-scaling" | "ls" => Ok(Reduction::LocalScaling { k: 10 }),
            other => other
                .strip_prefix("local-scaling:")
                .and_then(|k| k.parse().ok())
                .map(|k| Reduction::LocalScaling { k })
                .ok_or_else(|| format!("unknown hubness reduction `{other}`")),
        }
    }
}

/// Before/after hubness of one space at one neighborhood size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HubnessReport {
    pub model_tag: String,
    pub k: usize,
    pub skewness_before: f64,
    pub skewness_after: f64,
    pub robinhood_before: f64,
    pub robinhood_after: f64,
}

/// Measures hubness on cosine neighborhoods and on the reduced (secondary)
/// similarity, at each k in `ks`.
pub fn hubness_report(
    set: &EmbeddingSet,
    ks: &[usize],
    tie_seed: u64,
    method: Reduction,
) -> Result<Vec<HubnessReport>> {
    let sim = similarity_matrix(set)?;
    let reduced = method.apply(&to_dissimilarity(&sim))?;
    hubness_report_for(&sim, &reduced, set.source_tag(), ks, tie_seed)
}

/// Like [`hubness_report`] on precomputed primary and secondary similarities.
pub fn hubness_report_for(
    sim: &SimMatrix,
    reduced: &SimMatrix,
    tag: &str,
    ks: &[usize],
    tie_seed: u64,
) -> Result<Vec<HubnessReport>> {
    let depth = ks.iter().copied().max().unwrap_or(0);
    let before = Ranking::new(sim, tie_seed, depth);
    let after = Ranking::new(reduced, tie_seed, depth);
    ks.iter()
        .map(|&k| {
            let b = k_occurrence(&before.neighborhoods(k)?);
            let a = k_occurrence(&after.neighborhoods(k)?);
            Ok(HubnessReport {
                model_tag: tag.to_string(),
                k,
                skewness_before: skewness(&b),
                skewness_after: skewness(&a),
                robinhood_before: robinhood(&b),
                robinhood_after: robinhood(&a),
            })
        })
        .collect()
}
