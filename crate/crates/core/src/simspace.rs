//! Dense pairwise similarity / dissimilarity matrices and seeded k-nearest
//! neighbor extraction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EmbeddingSet, Vocab};
use crate::error::{AuditError, Result};
use crate::fsutil::{fmt_sig, write_atomic};
use crate::par;

/// Upper bound (exclusive) of the uniform noise used to break ranking ties.
pub const TIE_EPSILON: f64 = 1e-9;

/// Where a similarity matrix came from. Every kind attains 1 on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKind {
    Cosine,
    GroundTruth,
    BinaryCooccurrence,
    /// Secondary similarity produced by hubness reduction.
    Secondary,
}

impl SimKind {
    pub fn max_value(self) -> f64 {
        1.0
    }
}

/// Symmetric `n x n` similarity over a vocabulary, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    vocab: Vocab,
    values: Vec<f64>,
    kind: SimKind,
}

impl SimMatrix {
    /// Validates shape, finiteness and exact symmetry.
    pub fn new(vocab: Vocab, values: Vec<f64>, kind: SimKind) -> Result<Self> {
        check_square(&vocab, &values)?;
        let m = SimMatrix {
            vocab,
            values,
            kind,
        };
        m.check_symmetric()?;
        Ok(m)
    }

    pub(crate) fn new_unchecked(vocab: Vocab, values: Vec<f64>, kind: SimKind) -> Self {
        debug_assert_eq!(values.len(), vocab.len() * vocab.len());
        SimMatrix {
            vocab,
            values,
            kind,
        }
    }

    /// Builds a symmetric matrix from a function evaluated once per unordered pair.
    pub(crate) fn from_pairs<F>(vocab: Vocab, kind: SimKind, diagonal: f64, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let n = vocab.len();
        let upper = par::map_range(n, |i| ((i + 1)..n).map(|j| f(i, j)).collect::<Vec<_>>());
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            values[i * n + i] = diagonal;
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        SimMatrix {
            vocab,
            values,
            kind,
        }
    }

    fn check_symmetric(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.get(i, j) != self.get(j, i) {
                    return Err(AuditError::BadValue(format!(
                        "matrix is not symmetric at ({}, {})",
                        self.vocab.label(i),
                        self.vocab.label(j)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn kind(&self) -> SimKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.vocab.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Off-diagonal entries of the upper triangle.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| self.get(i, j)))
    }
}

/// Symmetric, non-negative dissimilarity with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    vocab: Vocab,
    values: Vec<f64>,
}

impl DistMatrix {
    pub fn new(vocab: Vocab, values: Vec<f64>) -> Result<Self> {
        check_square(&vocab, &values)?;
        let n = vocab.len();
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(AuditError::BadValue("distance diagonal must be zero".into()));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if v < 0.0 || v != values[j * n + i] {
                    return Err(AuditError::BadValue(format!(
                        "distance ({i}, {j}) is negative or asymmetric"
                    )));
                }
            }
        }
        Ok(DistMatrix { vocab, values })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n(&self) -> usize {
        self.vocab.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_square(vocab: &Vocab, values: &[f64]) -> Result<()> {
    let n = vocab.len();
    if values.len() != n * n {
        return Err(AuditError::DimensionMismatch {
            expected: n * n,
            found: values.len(),
        });
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(AuditError::BadValue(format!("non-finite matrix entry {v}")));
    }
    Ok(())
}

/// `x . y / (|x| |y|)`.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AuditError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(AuditError::ZeroVector);
    }
    Ok(dot(x, y) / (nx * ny))
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Cosine similarity between every pair of vectors of `set`.
pub fn similarity_matrix(set: &EmbeddingSet) -> Result<SimMatrix> {
    let norms: Vec<f64> = set.vectors().map(norm).collect();
    if norms.contains(&0.0) {
        return Err(AuditError::ZeroVector);
    }
    Ok(SimMatrix::from_pairs(
        set.vocab().clone(),
        SimKind::Cosine,
        1.0,
        |i, j| (dot(set.vector(i), set.vector(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0),
    ))
}

/// `d = max - s` with the kind's maximum; diagonal forced to zero.
pub fn to_dissimilarity(sim: &SimMatrix) -> DistMatrix {
    let n = sim.n();
    let top = sim.kind().max_value();
    let mut values: Vec<f64> = sim.values().iter().map(|s| (top - s).max(0.0)).collect();
    for i in 0..n {
        values[i * n + i] = 0.0;
    }
    DistMatrix {
        vocab: sim.vocab().clone(),
        values,
    }
}

/// Per-query ordered k-nearest-neighbor lists (vocabulary indices, self excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodIndex {
    vocab: Vocab,
    k: usize,
    lists: Vec<Vec<usize>>,
    tie_seed: u64,
}

impl NeighborhoodIndex {
    /// Builds an index from explicit lists; each must hold `k` distinct
    /// non-self indices.
    pub fn from_lists(vocab: Vocab, k: usize, lists: Vec<Vec<usize>>, tie_seed: u64) -> Result<Self> {
        let n = vocab.len();
        check_k(k, n)?;
        if lists.len() != n {
            return Err(AuditError::DimensionMismatch {
                expected: n,
                found: lists.len(),
            });
        }
        for (q, list) in lists.iter().enumerate() {
            let mut seen = vec![false; n];
            if list.len() != k {
                return Err(AuditError::Mismatch(format!(
                    "list {q} has {} entries, expected {k}",
                    list.len()
                )));
            }
            for &j in list {
                if j >= n || j == q || std::mem::replace(&mut seen[j], true) {
                    return Err(AuditError::Mismatch(format!(
                        "list {q} has an invalid or repeated neighbor {j}"
                    )));
                }
            }
        }
        Ok(NeighborhoodIndex {
            vocab,
            k,
            lists,
            tie_seed,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tie_seed(&self) -> u64 {
        self.tie_seed
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, query: usize) -> &[usize] {
        &self.lists[query]
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    /// Neighbor labels of `query`.
    pub fn neighbor_labels(&self, query: usize) -> Vec<&str> {
        self.lists[query].iter().map(|&j| self.vocab.label(j)).collect()
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    let max = n.saturating_sub(1);
    if k == 0 || k > max {
        return Err(AuditError::BadK { k, max });
    }
    Ok(())
}

/// Full neighbor ranking of every query, deepest first; prefixes of it are the
/// k-nearest-neighbor lists for every `k` under the same seed.
#[derive(Debug, Clone)]
pub struct Ranking {
    vocab: Vocab,
    order: Vec<Vec<usize>>,
    tie_seed: u64,
}

impl Ranking {
    /// Ranks every row of `sim` by `s + u`, `u ~ U[0, TIE_EPSILON)` drawn from a
    /// stream keyed by `(tie_seed, row)`. `depth` caps how many neighbors are kept.
    pub fn new(sim: &SimMatrix, tie_seed: u64, depth: usize) -> Self {
        let n = sim.n();
        let depth = depth.min(n.saturating_sub(1));
        let order = par::map_range(n, |q| rank_row(sim.row(q), q, tie_seed, depth));
        Ranking {
            vocab: sim.vocab().clone(),
            order,
            tie_seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.order.first().map_or(0, Vec::len)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub(crate) fn row(&self, q: usize) -> &[usize] {
        &self.order[q]
    }

    pub fn neighborhoods(&self, k: usize) -> Result<NeighborhoodIndex> {
        check_k(k, self.vocab.len())?;
        if k > self.depth() {
            return Err(AuditError::BadK {
                k,
                max: self.depth(),
            });
        }
        Ok(NeighborhoodIndex {
            vocab: self.vocab.clone(),
            k,
            lists: self.order.iter().map(|o| o[..k].to_vec()).collect(),
            tie_seed: self.tie_seed,
        })
    }
}

fn tie_noise(tie_seed: u64, row: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(tie_seed);
    rng.set_stream(row as u64);
    (0..n).map(|_| rng.random::<f64>() * TIE_EPSILON).collect()
}

fn rank_row(row: &[f64], q: usize, tie_seed: u64, depth: usize) -> Vec<usize> {
    let noise = tie_noise(tie_seed, q, row.len());
    let mut keyed: Vec<(f64, usize)> = row
        .iter()
        .zip(&noise)
        .enumerate()
        .filter(|&(j, _)| j != q)
        .map(|(j, (s, u))| (s + u, j))
        .collect();
    let by_score = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if depth < keyed.len() && depth > 0 {
        keyed.select_nth_unstable_by(depth - 1, by_score);
        keyed.truncate(depth);
    }
    keyed.sort_unstable_by(by_score);
    keyed.truncate(depth);
    keyed.into_iter().map(|(_, j)| j).collect()
}

/// Top-`k` neighbors of every label under seeded tie noise.
pub fn knn(sim: &SimMatrix, k: usize, tie_seed: u64) -> Result<NeighborhoodIndex> {
    check_k(k, sim.n())?;
    Ranking::new(sim, tie_seed, k).neighborhoods(k)
}

/// Writes a labeled CSV: header `label,<l0>,...`, one row per label, entries
/// at 9 significant digits.
pub fn save_matrix(sim: &SimMatrix, path: &Path) -> Result<()> {
    save_labeled_matrix(sim.vocab(), sim.values(), path, &[])
}

/// [`save_matrix`] with leading `# ` comment lines.
pub fn save_matrix_annotated(sim: &SimMatrix, path: &Path, comments: &[String]) -> Result<()> {
    save_labeled_matrix(sim.vocab(), sim.values(), path, comments)
}

pub(crate) fn save_labeled_matrix(
    vocab: &Vocab,
    values: &[f64],
    path: &Path,
    comments: &[String],
) -> Result<()> {
    let n = vocab.len();
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend(vocab.labels().iter().cloned());
    w.write_record(&header).map_err(|e| AuditError::parse(path, e))?;
    for i in 0..n {
        let mut rec = vec![vocab.label(i).to_string()];
        rec.extend(values[i * n..(i + 1) * n].iter().map(|v| fmt_sig(*v, 9)));
        w.write_record(&rec).map_err(|e| AuditError::parse(path, e))?;
    }
    let body = w.into_inner().map_err(|e| AuditError::parse(path, e))?;
    out.push_str(&String::from_utf8_lossy(&body));
    write_atomic(path, out.as_bytes())
}

/// Reads a matrix written by [`save_matrix`]; rows must follow header order.
pub fn load_matrix(path: &Path, kind: SimKind) -> Result<SimMatrix> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| AuditError::parse(path, e))?.clone();
    let vocab = Vocab::new(header.iter().skip(1))?;
    let n = vocab.len();
    let mut values = Vec::with_capacity(n * n);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| AuditError::parse(path, e))?;
        if i >= n || vocab.position(&rec[0]) != Some(i) {
            return Err(AuditError::parse(path, format!("row {} is out of order", i + 1)));
        }
        for s in rec.iter().skip(1) {
            values.push(
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| AuditError::BadValue(format!("`{s}` is not a number")))?,
            );
        }
    }
    SimMatrix::new(vocab, values, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn vocab(n: usize) -> Vocab {
        Vocab::new((0..n).map(|i| format!("t{i}"))).unwrap()
    }

    fn sym(n: usize, entries: &[(usize, usize, f64)]) -> SimMatrix {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        for &(i, j, s) in entries {
            v[i * n + j] = s;
            v[j * n + i] = s;
        }
        SimMatrix::new(vocab(n), v, SimKind::Cosine).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974631846).abs() < 1e-9);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(AuditError::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(AuditError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn orthonormal_basis_gives_identity() {
        let e = EmbeddingSet::new(
            &["a", "b", "c"],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            "basis",
        )
        .unwrap();
        let s = similarity_matrix(&e).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn dissimilarity_examples() {
        let s = sym(3, &[(0, 1, 0.8)]);
        let d = to_dissimilarity(&s);
        assert!((d.get(0, 1) - 0.2).abs() < 1e-15);
        assert_eq!(d.get(1, 1), 0.0);
        let gt = SimMatrix::new(
            vocab(4),
            {
                let third = 1.0 / 3.0;
                let two = 2.0 / 3.0;
                vec![
                    1.0, 0.0, third, two, //
                    0.0, 1.0, 1.0, 0.0, //
                    third, 1.0, 1.0, 0.0, //
                    two, 0.0, 0.0, 1.0,
                ]
            },
            SimKind::GroundTruth,
        )
        .unwrap();
        let d = to_dissimilarity(&gt);
        assert_eq!(d.get(0, 1), 1.0);
        assert!((d.get(0, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.get(0, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.get(1, 2), 0.0);
    }

    #[test]
    fn knn_examples() {
        let s = sym(3, &[(0, 1, 0.9), (0, 2, 0.1)]);
        assert_eq!(knn(&s, 1, 0).unwrap().neighbors(0), &[1]);

        let s = sym(4, &[(0, 1, 0.9), (0, 2, 0.8), (0, 3, 0.1)]);
        assert_eq!(knn(&s, 2, 3).unwrap().neighbors(0), &[1, 2]);

        assert!(matches!(knn(&s, 0, 0), Err(AuditError::BadK { .. })));
        assert!(matches!(knn(&s, 4, 0), Err(AuditError::BadK { k: 4, max: 3 })));
    }

    #[test]
    fn all_ties_are_seeded() {
        let n = 12;
        let s = SimMatrix::new(vocab(n), vec![1.0; n * n], SimKind::BinaryCooccurrence).unwrap();
        let a = knn(&s, 5, 42).unwrap();
        let b = knn(&s, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = knn(&s, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let s = sym(3, &[(0, 1, 0.25), (1, 2, -0.5)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        save_matrix(&s, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("label,t0,t1,t2\nt0,1,0.25,0\n"));
        assert_eq!(load_matrix(&p, SimKind::Cosine).unwrap(), s);
    }

    fn brute_force_knn(row: &[f64], q: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..row.len()).filter(|&j| j != q).collect();
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        idx.truncate(k);
        idx
    }

    fn random_sym(n: usize, seed: u64) -> SimMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![1.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s: f64 = rng.random_range(-1.0..1.0);
                v[i * n + j] = s;
                v[j * n + i] = s;
            }
        }
        SimMatrix::new(vocab(n), v, SimKind::Cosine).unwrap()
    }

    proptest! {
        #[test]
        fn cosine_is_bounded_and_scale_invariant(
            x in prop::collection::vec(-1e3f64..1e3, 5),
            y in prop::collection::vec(-1e3f64..1e3, 5),
            a in 1e-3f64..1e3,
            b in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&x) > 1e-6 && norm(&y) > 1e-6);
            let c = cosine_similarity(&x, &y).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            prop_assert!((cosine_similarity(&xs, &ys).unwrap() - c).abs() < 1e-12);
            prop_assert_eq!(cosine_similarity(&y, &x).unwrap(), c);
        }

        #[test]
        fn knn_matches_full_sort_oracle(n in 2usize..=12, seed in any::<u64>(), tie in any::<u64>()) {
            let s = random_sym(n, seed);
            for k in 1..n {
                let idx = knn(&s, k, tie).unwrap();
                for q in 0..n {
                    let expect = brute_force_knn(s.row(q), q, k);
                    prop_assert_eq!(idx.neighbors(q), expect.as_slice());
                }
            }
        }

        #[test]
        fn noise_never_reorders_wide_gaps(n in 3usize..=20, seed in any::<u64>(), tie in any::<u64>()) {
            // quantize to a grid coarser than the noise, which creates plenty of ties
            let base = random_sym(n, seed);
            let v: Vec<f64> = base.values().iter().map(|s| (s * 4.0).round() / 4.0).collect();
            let s = SimMatrix::new(vocab(n), v, SimKind::Cosine).unwrap();
            let r = Ranking::new(&s, tie, n - 1);
            for q in 0..n {
                let order = r.row(q);
                for w in order.windows(2) {
                    prop_assert!(s.get(q, w[0]) + TIE_EPSILON > s.get(q, w[1]));
                }
            }
        }
    }
}
