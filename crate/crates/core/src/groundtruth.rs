//! Expert ground-truth similarity from pile sortings and performance
//! co-occurrence.
//!
//! Each annotation source becomes a binary matrix (1 when two different terms
//! were grouped together, diagonal 1). The sources are then averaged with
//! non-negative weights, so with three equally weighted sources every
//! off-diagonal value is one of `0, 1/3, 2/3, 1`.

use std::collections::BTreeMap;

use crate::corpus::{PerfTermTable, PileSorting, Vocab};
use crate::error::{AuditError, Result};
use crate::simspace::{SimKind, SimMatrix};

/// Binary co-occurrence sources and their weights.
#[derive(Debug, Clone)]
pub struct GroundTruthSpec {
    sources: Vec<(SimMatrix, f64)>,
}

impl GroundTruthSpec {
    pub fn new(sources: Vec<(SimMatrix, f64)>) -> Result<Self> {
        let Some((first, _)) = sources.first() else {
            return Err(AuditError::Mismatch("ground truth needs at least one source".into()));
        };
        if sources.iter().any(|(m, _)| m.vocab() != first.vocab()) {
            return Err(AuditError::VocabMismatch);
        }
        if sources.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(AuditError::BadValue("source weights must be finite and >= 0".into()));
        }
        if sources.iter().all(|(_, w)| *w == 0.0) {
            return Err(AuditError::BadValue("source weights are all zero".into()));
        }
        Ok(GroundTruthSpec { sources })
    }

    /// Equal weight 1 per source.
    pub fn equal(sources: Vec<SimMatrix>) -> Result<Self> {
        Self::new(sources.into_iter().map(|m| (m, 1.0)).collect())
    }

    pub fn sources(&self) -> &[(SimMatrix, f64)] {
        &self.sources
    }
}

/// Groups of vocabulary indices that are mutually similar.
fn groups_matrix(vocab: &Vocab, groups: &[Vec<usize>]) -> SimMatrix {
    let n = vocab.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for g in groups {
        for &i in g {
            for &j in g {
                values[i * n + j] = 1.0;
            }
        }
    }
    SimMatrix::new_unchecked(vocab.clone(), values, SimKind::BinaryCooccurrence)
}

/// 1 for two different terms in the same pile, 0 otherwise, diagonal 1.
pub fn pile_similarity_matrix(piles: &PileSorting, vocab: &Vocab) -> Result<SimMatrix> {
    let groups = piles
        .piles
        .iter()
        .map(|p| p.members.iter().map(|m| vocab.require(m)).collect())
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(groups_matrix(vocab, &groups))
}

/// 1 for two different terms used to describe the same performance.
pub fn performance_cooccurrence_matrix(table: &PerfTermTable, vocab: &Vocab) -> Result<SimMatrix> {
    let mut by_perf: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for row in table.rows() {
        by_perf
            .entry(row.performance_id.as_str())
            .or_default()
            .push(vocab.require(&row.term)?);
    }
    let groups: Vec<Vec<usize>> = by_perf.into_values().collect();
    Ok(groups_matrix(vocab, &groups))
}

/// Weighted mean of the sources; diagonal 1, entries in `[0, 1]`.
pub fn combine(gt: &GroundTruthSpec) -> SimMatrix {
    let (first, _) = &gt.sources[0];
    let total: f64 = gt.sources.iter().map(|(_, w)| w).sum();
    let n = first.n();
    let mut values = vec![0.0; n * n];
    for (m, w) in &gt.sources {
        for (acc, v) in values.iter_mut().zip(m.values()) {
            *acc += w * v;
        }
    }
    for v in &mut values {
        *v = (*v / total).clamp(0.0, 1.0);
    }
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    SimMatrix::new_unchecked(first.vocab().clone(), values, SimKind::GroundTruth)
}

/// The standard three-source ground truth: both pile groups plus performance
/// co-occurrence, weighted by `weights` (defaults to all ones).
pub fn build_ground_truth(
    vocab: &Vocab,
    piles: &[PileSorting],
    table: Option<&PerfTermTable>,
    weights: Option<&[f64]>,
) -> Result<SimMatrix> {
    let mut sources = Vec::new();
    for p in piles {
        sources.push(pile_similarity_matrix(p, vocab)?);
    }
    if let Some(t) = table {
        sources.push(performance_cooccurrence_matrix(t, vocab)?);
    }
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() != sources.len() => {
            return Err(AuditError::Mismatch(format!(
                "{} weights for {} sources",
                w.len(),
                sources.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; sources.len()],
    };
    let gt = GroundTruthSpec::new(sources.into_iter().zip(weights).collect())?;
    Ok(combine(&gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(labels: &[&str]) -> Vocab {
        Vocab::new(labels).unwrap()
    }

    #[test]
    fn pile_matrix_examples() {
        let v = vocab(&["a", "b", "c", "d"]);
        let p = PileSorting::new(
            "g",
            vec![("p1".into(), vec!["a", "b"]), ("p2".into(), vec!["c"])],
        )
        .unwrap();
        let m = pile_similarity_matrix(&p, &v).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(1, 2), 0.0);
        assert_eq!(m.get(2, 2), 1.0);
        // d is in no pile
        assert_eq!(&m.row(3)[..3], &[0.0, 0.0, 0.0]);

        let small = vocab(&["a"]);
        assert!(matches!(
            pile_similarity_matrix(&p, &small),
            Err(AuditError::UnknownLabel(_))
        ));
    }

    #[test]
    fn cooccurrence_examples() {
        let v = vocab(&["a", "b", "c", "z"]);
        let t = PerfTermTable::new([("perf1", "a"), ("perf1", "b"), ("perf2", "c")]);
        let m = performance_cooccurrence_matrix(&t, &v).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 0.0);

        // z is used in every performance
        let t = PerfTermTable::new([
            ("p1", "a"),
            ("p1", "z"),
            ("p2", "b"),
            ("p2", "z"),
            ("p3", "c"),
            ("p3", "z"),
        ]);
        let m = performance_cooccurrence_matrix(&t, &v).unwrap();
        assert_eq!(&m.row(3)[..3], &[1.0, 1.0, 1.0]);
        assert!(matches!(
            performance_cooccurrence_matrix(&t, &vocab(&["a"])),
            Err(AuditError::UnknownLabel(_))
        ));
    }

    fn binary(v: &Vocab, pairs: &[(usize, usize)]) -> SimMatrix {
        let groups: Vec<Vec<usize>> = pairs.iter().map(|&(i, j)| vec![i, j]).collect();
        groups_matrix(v, &groups)
    }

    #[test]
    fn combine_examples() {
        let v = vocab(&["a", "b", "c"]);
        let one = binary(&v, &[(0, 1)]);
        let out = combine(&GroundTruthSpec::equal(vec![one.clone()]).unwrap());
        assert_eq!(out.values(), one.values());
        assert_eq!(out.kind(), SimKind::GroundTruth);

        let out = combine(
            &GroundTruthSpec::equal(vec![one.clone(), one.clone(), one.clone()]).unwrap(),
        );
        assert_eq!(out.get(0, 1), 1.0);

        let zero = binary(&v, &[]);
        let out = combine(
            &GroundTruthSpec::equal(vec![one.clone(), zero.clone(), zero.clone()]).unwrap(),
        );
        assert_eq!(out.get(0, 1), 1.0 / 3.0);
        assert_eq!(out.get(1, 2), 0.0);
        assert_eq!(out.get(2, 2), 1.0);
    }

    #[test]
    fn combine_rejects_bad_specs() {
        let v = vocab(&["a", "b"]);
        let w = vocab(&["a", "c"]);
        assert!(matches!(
            GroundTruthSpec::equal(vec![binary(&v, &[]), binary(&w, &[])]),
            Err(AuditError::VocabMismatch)
        ));
        assert!(GroundTruthSpec::new(vec![(binary(&v, &[]), 0.0)]).is_err());
        assert!(GroundTruthSpec::new(vec![(binary(&v, &[]), -1.0)]).is_err());
        assert!(GroundTruthSpec::new(vec![]).is_err());
    }

    /// Every assignment of each of the 6 pairs of a 4-term vocabulary to each
    /// of 3 sources: combined value == agreeing sources / 3, for all 2^18 cases
    /// sampled on a stride, plus permutation invariance of source order.
    #[test]
    fn equal_weights_count_agreeing_sources() {
        let v = vocab(&["a", "b", "c", "d"]);
        let pairs: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
            .collect();
        for code in (0u32..1 << 18).step_by(97) {
            let sources: Vec<SimMatrix> = (0..3)
                .map(|s| {
                    let chosen: Vec<(usize, usize)> = pairs
                        .iter()
                        .enumerate()
                        .filter(|(p, _)| code >> (s * 6 + p) & 1 == 1)
                        .map(|(_, &pr)| pr)
                        .collect();
                    binary(&v, &chosen)
                })
                .collect();
            let out = combine(&GroundTruthSpec::equal(sources.clone()).unwrap());
            for &(i, j) in &pairs {
                let agree = sources.iter().filter(|m| m.get(i, j) == 1.0).count();
                assert_eq!(out.get(i, j), agree as f64 / 3.0);
                assert_eq!(out.get(j, i), out.get(i, j));
            }
            let rev: Vec<SimMatrix> = sources.into_iter().rev().collect();
            assert_eq!(combine(&GroundTruthSpec::equal(rev).unwrap()), out);
        }
    }
}
