//! Vocabularies, embedding sets, pile sortings and performance/term tables,
//! plus their on-disk formats.
//!
//! Labels are normalized on the way in (trimmed, lower-cased, NFC) so that
//! joins between files never depend on capitalization or stray whitespace.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{AuditError, Result};
use crate::fsutil::write_atomic;

/// Canonical form of a label: trimmed, lower-cased, NFC.
pub fn normalize_label(raw: &str) -> String {
    raw.trim().nfc().collect::<String>().to_lowercase().nfc().collect()
}

/// An ordered list of unique labels. Position `i` is row/column `i` of every
/// matrix built over this vocabulary.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
    }
}

impl Vocab {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab::default();
        for raw in labels {
            let label = normalize_label(raw.as_ref());
            if vocab.index.contains_key(&label) {
                return Err(AuditError::DuplicateLabel(label));
            }
            vocab.index.insert(label.clone(), vocab.labels.len());
            vocab.labels.push(label);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Index of `label`, which is normalized before lookup.
    pub fn position(&self, label: &str) -> Option<usize> {
        self.index
            .get(label)
            .or_else(|| self.index.get(&normalize_label(label)))
            .copied()
    }

    /// Like [`Vocab::position`] but fails with `UnknownLabel`.
    pub fn require(&self, label: &str) -> Result<usize> {
        self.position(label)
            .ok_or_else(|| AuditError::UnknownLabel(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.position(label).is_some()
    }
}

/// On-disk encodings for embedding sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// One `{"label": ..., "vector": [...]}` object per line.
    Jsonl,
    /// Header `label,v0,...,v{d-1}`.
    Csv,
}

impl EmbeddingFormat {
    /// Guess from the file extension; anything but `.csv` is JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Jsonl,
        }
    }
}

/// Labeled vectors of one space (one model, modality or prompt variant).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vocab: Vocab,
    data: Vec<f64>,
    dim: usize,
    source_tag: String,
}

impl EmbeddingSet {
    pub fn new<S: AsRef<str>>(
        labels: &[S],
        vectors: Vec<Vec<f64>>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != vectors.len() {
            return Err(AuditError::Mismatch(format!(
                "{} labels but {} vectors",
                labels.len(),
                vectors.len()
            )));
        }
        let vocab = Vocab::new(labels)?;
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 && !vectors.is_empty() {
            return Err(AuditError::BadValue("vectors must have dimension >= 1".into()));
        }
        let mut data = Vec::with_capacity(dim * vectors.len());
        for (label, v) in vocab.labels().iter().zip(&vectors) {
            if v.len() != dim {
                return Err(AuditError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            check_vector(label, v)?;
            data.extend_from_slice(v);
        }
        Ok(EmbeddingSet {
            vocab,
            data,
            dim,
            source_tag: source_tag.into(),
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Restrict (and reorder) to `vocab`, which must be a subset of ours.
    pub fn restrict_to(&self, vocab: &Vocab) -> Result<Self> {
        let mut data = Vec::with_capacity(vocab.len() * self.dim);
        for label in vocab.labels() {
            let i = self.vocab.require(label)?;
            data.extend_from_slice(self.vector(i));
        }
        Ok(EmbeddingSet {
            vocab: vocab.clone(),
            data,
            dim: self.dim,
            source_tag: self.source_tag.clone(),
        })
    }
}

fn check_vector(label: &str, v: &[f64]) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(AuditError::BadValue(format!(
            "non-finite entry {x} for label `{label}`"
        )));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(AuditError::BadValue(format!(
            "all-zero vector for label `{label}`"
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    label: String,
    vector: Vec<f64>,
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let (labels, vectors) = match format {
        EmbeddingFormat::Jsonl => parse_jsonl(path, &text)?,
        EmbeddingFormat::Csv => parse_csv(path, &text)?,
    };
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingSet::new(&labels, vectors, tag)
}

fn parse_jsonl(path: &Path, text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: VectorRecord = serde_json::from_str(line)
            .map_err(|e| AuditError::parse(path, format!("line {}: {e}", lineno + 1)))?;
        labels.push(rec.label);
        vectors.push(rec.vector);
    }
    Ok((labels, vectors))
}

fn parse_csv(path: &Path, text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| AuditError::parse(path, e))?;
    if header.get(0).map(str::trim) != Some("label") {
        return Err(AuditError::parse(path, "first column must be `label`"));
    }
    let dim = header.len() - 1;
    let mut labels = Vec::new();
    let mut vectors = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AuditError::parse(path, e))?;
        if record.len() - 1 != dim {
            return Err(AuditError::DimensionMismatch {
                expected: dim,
                found: record.len() - 1,
            });
        }
        let v = record
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| AuditError::BadValue(format!("`{s}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        labels.push(record[0].to_string());
        vectors.push(v);
    }
    Ok((labels, vectors))
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let mut out = String::new();
    match format {
        EmbeddingFormat::Jsonl => {
            for (label, v) in set.vocab.labels().iter().zip(set.vectors()) {
                let rec = VectorRecord {
                    label: label.clone(),
                    vector: v.to_vec(),
                };
                out.push_str(&serde_json::to_string(&rec).expect("plain struct serializes"));
                out.push('\n');
            }
        }
        EmbeddingFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["label".to_string()];
            header.extend((0..set.dim).map(|i| format!("v{i}")));
            w.write_record(&header).map_err(|e| AuditError::parse(path, e))?;
            for (label, v) in set.vocab.labels().iter().zip(set.vectors()) {
                let mut row = vec![label.clone()];
                row.extend(v.iter().map(f64::to_string));
                w.write_record(&row).map_err(|e| AuditError::parse(path, e))?;
            }
            out = String::from_utf8(w.into_inner().map_err(|e| AuditError::parse(path, e))?)
                .expect("csv writer emits utf-8");
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Restrict every set to the labels they all share, in the first set's order.
pub fn align(sets: &[EmbeddingSet]) -> Result<Vec<EmbeddingSet>> {
    let first = sets
        .first()
        .ok_or_else(|| AuditError::Mismatch("nothing to align".into()))?;
    let shared: Vec<&String> = first
        .vocab
        .labels()
        .iter()
        .filter(|l| sets[1..].iter().all(|s| s.vocab.position(l).is_some()))
        .collect();
    if shared.is_empty() {
        return Err(AuditError::NoCommonVocab);
    }
    let vocab = Vocab::new(shared)?;
    sets.iter().map(|s| s.restrict_to(&vocab)).collect()
}

/// One named pile of a sorting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pile {
    pub name: String,
    /// Normalized labels, first-seen order, no duplicates.
    pub members: Vec<String>,
}

/// One expert group's partition of (part of) the vocabulary into piles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PileSorting {
    pub group_id: String,
    pub piles: Vec<Pile>,
}

#[derive(Serialize, Deserialize)]
struct PileFile {
    group: String,
    piles: Vec<PileRecord>,
}

#[derive(Serialize, Deserialize)]
struct PileRecord {
    name: String,
    terms: Vec<String>,
}

impl PileSorting {
    pub fn new<S: AsRef<str>>(
        group_id: impl Into<String>,
        piles: Vec<(String, Vec<S>)>,
    ) -> Result<Self> {
        let mut owner: HashMap<String, String> = HashMap::new();
        let mut names = HashSet::new();
        let mut out = Vec::with_capacity(piles.len());
        for (name, terms) in piles {
            if !names.insert(name.clone()) {
                return Err(AuditError::DuplicatePile(name));
            }
            let mut members = Vec::new();
            for t in &terms {
                let label = normalize_label(t.as_ref());
                match owner.get(&label) {
                    Some(other) if *other == name => continue,
                    Some(other) => {
                        return Err(AuditError::OverlappingPiles {
                            label,
                            first: other.clone(),
                            second: name,
                        })
                    }
                    None => {
                        owner.insert(label.clone(), name.clone());
                        members.push(label);
                    }
                }
            }
            if members.is_empty() {
                return Err(AuditError::EmptyPile(name));
            }
            out.push(Pile { name, members });
        }
        Ok(PileSorting {
            group_id: group_id.into(),
            piles: out,
        })
    }

    /// Every member must be a label of `vocab`.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for pile in &self.piles {
            for m in &pile.members {
                vocab.require(m)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.piles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.piles.is_empty()
    }
}

pub fn load_piles(path: &Path) -> Result<PileSorting> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let file: PileFile = serde_json::from_str(&text).map_err(|e| AuditError::parse(path, e))?;
    PileSorting::new(
        file.group,
        file.piles.into_iter().map(|p| (p.name, p.terms)).collect(),
    )
}

pub fn save_piles(piles: &PileSorting, path: &Path) -> Result<()> {
    let file = PileFile {
        group: piles.group_id.clone(),
        piles: piles
            .piles
            .iter()
            .map(|p| PileRecord {
                name: p.name.clone(),
                terms: p.members.clone(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("plain struct serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// A `(performance, term)` association. Repeated rows in the source file are
/// folded into `count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerfTermRow {
    pub performance_id: String,
    pub term: String,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PerfTermTable {
    rows: Vec<PerfTermRow>,
}

impl PerfTermTable {
    pub fn new<P: AsRef<str>, T: AsRef<str>>(pairs: impl IntoIterator<Item = (P, T)>) -> Self {
        let mut rows: Vec<PerfTermRow> = Vec::new();
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        for (p, t) in pairs {
            let key = (normalize_label(p.as_ref()), normalize_label(t.as_ref()));
            match seen.get(&key) {
                Some(&i) => rows[i].count += 1,
                None => {
                    seen.insert(key.clone(), rows.len());
                    rows.push(PerfTermRow {
                        performance_id: key.0,
                        term: key.1,
                        count: 1,
                    });
                }
            }
        }
        PerfTermTable { rows }
    }

    pub fn rows(&self) -> &[PerfTermRow] {
        &self.rows
    }

    /// Distinct performance ids, sorted.
    pub fn performances(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.rows.iter().map(|r| r.performance_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for r in &self.rows {
            vocab.require(&r.term)?;
        }
        Ok(())
    }
}

pub fn load_perf_table(path: &Path) -> Result<PerfTermTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| AuditError::parse(path, e))?;
    let header = reader.headers().map_err(|e| AuditError::parse(path, e))?;
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["performance_id", "term"] {
        return Err(AuditError::parse(
            path,
            "expected header `performance_id,term`",
        ));
    }
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AuditError::parse(path, e))?;
        pairs.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(PerfTermTable::new(pairs))
}

pub fn save_perf_table(table: &PerfTermTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["performance_id", "term"])
        .map_err(|e| AuditError::parse(path, e))?;
    for r in &table.rows {
        for _ in 0..r.count {
            w.write_record([&r.performance_id, &r.term])
                .map_err(|e| AuditError::parse(path, e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| AuditError::parse(path, e))?;
    write_atomic(path, &bytes)
}

/// Reads a plain term list: one label per line, blank lines and `#` comments skipped.
pub fn load_term_list(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    Vocab::new(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#')),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn normalization_folds_case_and_whitespace() {
        assert_eq!(normalize_label("  Gentle\t"), "gentle");
        assert_eq!(normalize_label("GENTLE"), normalize_label("gentle "));
        // decomposed e + combining acute vs precomposed é
        assert_eq!(normalize_label("Zarte\u{301}"), normalize_label("zart\u{e9}"));
    }

    #[test]
    fn loads_two_record_jsonl() {
        let dir = tmp();
        let p = dir.path().join("e.jsonl");
        fs::write(
            &p,
            "{\"label\":\"a\",\"vector\":[1,0]}\n{\"label\":\"b\",\"vector\":[0,1]}\n",
        )
        .unwrap();
        let e = load_embeddings(&p, EmbeddingFormat::Jsonl).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.dim(), 2);
        assert_eq!(e.vector(1), &[0.0, 1.0]);
        assert_eq!(e.source_tag(), "e");
    }

    #[test]
    fn duplicate_label_is_rejected() {
        let dir = tmp();
        let p = dir.path().join("e.jsonl");
        fs::write(
            &p,
            "{\"label\":\"a\",\"vector\":[1,0]}\n{\"label\":\"A \",\"vector\":[0,1]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_embeddings(&p, EmbeddingFormat::Jsonl),
            Err(AuditError::DuplicateLabel(l)) if l == "a"
        ));
    }

    #[test]
    fn ragged_and_bad_values_are_rejected() {
        assert!(matches!(
            EmbeddingSet::new(&["a", "b"], vec![vec![1.0, 0.0], vec![1.0]], "t"),
            Err(AuditError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(matches!(
            EmbeddingSet::new(&["a"], vec![vec![f64::NAN, 1.0]], "t"),
            Err(AuditError::BadValue(_))
        ));
        assert!(matches!(
            EmbeddingSet::new(&["a"], vec![vec![0.0, 0.0]], "t"),
            Err(AuditError::BadValue(_))
        ));
        let dir = tmp();
        let p = dir.path().join("e.csv");
        fs::write(&p, "label,v0,v1\na,1,2\nb,3\n").unwrap();
        assert!(matches!(
            load_embeddings(&p, EmbeddingFormat::Csv),
            Err(AuditError::DimensionMismatch { .. })
        ));
        fs::write(&p, "label,v0,v1\na,1,inf\n").unwrap();
        assert!(matches!(
            load_embeddings(&p, EmbeddingFormat::Csv),
            Err(AuditError::BadValue(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let e = EmbeddingSet::new(
            &["x", "y"],
            vec![vec![0.1, -2.5e-300, 3.0], vec![1.0 / 3.0, 7.0, -0.0001]],
            "m",
        )
        .unwrap();
        let dir = tmp();
        for fmt in [EmbeddingFormat::Csv, EmbeddingFormat::Jsonl] {
            let p = dir.path().join("m.out");
            save_embeddings(&e, &p, fmt).unwrap();
            assert_eq!(load_embeddings(&p, fmt).unwrap(), e);
        }
    }

    #[test]
    fn align_intersects_in_first_order() {
        let a = EmbeddingSet::new(&["a", "b", "c"], vec![vec![1.0], vec![2.0], vec![3.0]], "a")
            .unwrap();
        let b = EmbeddingSet::new(&["d", "c", "b"], vec![vec![4.0], vec![5.0], vec![6.0]], "b")
            .unwrap();
        let out = align(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(out[0].vocab().labels(), ["b", "c"]);
        assert_eq!(out[1].vocab().labels(), ["b", "c"]);
        assert_eq!(out[1].vector(0), &[6.0]);
        assert_eq!(out[1].vector(1), &[5.0]);
        // identity and idempotence
        assert_eq!(align(&[a.clone(), a.clone()]).unwrap()[0], a);
        assert_eq!(align(&out).unwrap(), out);

        let z = EmbeddingSet::new(&["z"], vec![vec![1.0]], "z").unwrap();
        assert!(matches!(align(&[a, z]), Err(AuditError::NoCommonVocab)));
    }

    #[test]
    fn piles_load_and_overlap() {
        let dir = tmp();
        let p = dir.path().join("g.json");
        fs::write(
            &p,
            r#"{"group":"g1","piles":[{"name":"p1","terms":["a","b"]},{"name":"p2","terms":["c"]}]}"#,
        )
        .unwrap();
        let g = load_piles(&p).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.piles[0].members, ["a", "b"]);

        fs::write(
            &p,
            r#"{"group":"g1","piles":[{"name":"p1","terms":["a","b"]},{"name":"p2","terms":["B"]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_piles(&p),
            Err(AuditError::OverlappingPiles { label, .. }) if label == "b"
        ));

        let vocab = Vocab::new(["a", "c"]).unwrap();
        assert!(matches!(g.validate(&vocab), Err(AuditError::UnknownLabel(l)) if l == "b"));
    }

    #[test]
    fn perf_table_folds_duplicates_and_round_trips() {
        let t = PerfTermTable::new([("p1", "a"), ("P1", "A "), ("p2", "b")]);
        assert_eq!(t.rows().len(), 2);
        assert_eq!(t.rows()[0].count, 2);
        assert_eq!(t.performances(), ["p1", "p2"]);
        let dir = tmp();
        let p = dir.path().join("t.csv");
        save_perf_table(&t, &p).unwrap();
        assert_eq!(load_perf_table(&p).unwrap(), t);
        assert!(matches!(
            t.validate(&Vocab::new(["a"]).unwrap()),
            Err(AuditError::UnknownLabel(_))
        ));
    }
}
