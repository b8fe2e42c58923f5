//! k-means over embedding spaces and clustering agreement by average
//! maximal overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{EmbeddingSet, PileSorting, Vocab};
use crate::error::{AuditError, Result};
use crate::par;
use crate::simspace::norm;

/// One named cluster of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub name: String,
    pub members: Vec<usize>,
}

/// Disjoint, non-empty clusters over (a subset of) a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    vocab: Vocab,
    clusters: Vec<Cluster>,
    source_tag: String,
}

impl Clustering {
    pub fn new(vocab: Vocab, clusters: Vec<Cluster>, source_tag: impl Into<String>) -> Result<Self> {
        let mut owner = vec![usize::MAX; vocab.len()];
        for (c, cluster) in clusters.iter().enumerate() {
            if cluster.members.is_empty() {
                return Err(AuditError::EmptyPile(cluster.name.clone()));
            }
            for &m in &cluster.members {
                if m >= vocab.len() {
                    return Err(AuditError::UnknownLabel(format!("#{m}")));
                }
                if owner[m] != usize::MAX && owner[m] != c {
                    return Err(AuditError::OverlappingPiles {
                        label: vocab.label(m).to_string(),
                        first: clusters[owner[m]].name.clone(),
                        second: cluster.name.clone(),
                    });
                }
                owner[m] = c;
            }
        }
        let clusters = clusters
            .into_iter()
            .map(|mut c| {
                c.members.sort_unstable();
                c.members.dedup();
                c
            })
            .collect();
        Ok(Clustering {
            vocab,
            clusters,
            source_tag: source_tag.into(),
        })
    }

    pub fn from_piles(piles: &PileSorting, vocab: &Vocab) -> Result<Self> {
        let clusters = piles
            .piles
            .iter()
            .map(|p| {
                Ok(Cluster {
                    name: p.name.clone(),
                    members: p.members.iter().map(|m| vocab.require(m)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Clustering::new(vocab.clone(), clusters, piles.group_id.clone())
    }

    /// Cluster `c` holds every index whose assignment is `c`; empty ones are dropped.
    pub fn from_assignments(vocab: Vocab, assignments: &[usize], k: usize, tag: &str) -> Result<Self> {
        let mut members = vec![Vec::new(); k];
        for (i, &c) in assignments.iter().enumerate() {
            members[c].push(i);
        }
        let clusters = members
            .into_iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(c, members)| Cluster {
                name: format!("k{c}"),
                members,
            })
            .collect();
        Clustering::new(vocab, clusters, tag)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    /// Cluster index of each vocabulary entry, `None` when uncovered.
    pub fn assignment(&self) -> Vec<Option<usize>> {
        let mut a = vec![None; self.vocab.len()];
        for (c, cluster) in self.clusters.iter().enumerate() {
            for &m in &cluster.members {
                a[m] = Some(c);
            }
        }
        a
    }
}

/// Mean over clusters `A` of `c1` of `max_B |A ∩ B| / min(|A|, |B|)`, `B` in `c2`.
/// Not symmetric in its arguments.
pub fn av_max_overlap(c1: &Clustering, c2: &Clustering) -> Result<f64> {
    if c1.is_empty() || c2.is_empty() {
        return Err(AuditError::EmptyClustering);
    }
    if c1.vocab != c2.vocab {
        return Err(AuditError::VocabMismatch);
    }
    let owner = c2.assignment();
    let mut hits = vec![0usize; c2.len()];
    let mut total = 0.0;
    for a in &c1.clusters {
        hits.iter_mut().for_each(|h| *h = 0);
        for &m in &a.members {
            if let Some(b) = owner[m] {
                hits[b] += 1;
            }
        }
        let best = hits
            .iter()
            .zip(&c2.clusters)
            .map(|(&h, b)| h as f64 / a.members.len().min(b.members.len()) as f64)
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / c1.len() as f64)
}

/// Lloyd iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64, restarts: usize) -> Self {
        KMeansConfig {
            k,
            seed,
            restarts,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Result of the best restart.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++: each new center is the best (lowest resulting potential)
/// of `2 + ln k` candidates drawn proportionally to squared distance.
fn greedy_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centers = vec![points[first].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centers.len() < k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if potential > 0.0 {
                let mut target = rng.random::<f64>() * potential;
                let mut pick = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    if target < d {
                        pick = i;
                        break;
                    }
                    target -= d;
                }
                pick
            } else {
                // every point already coincides with a center
                rng.random_range(0..n)
            };
            let next: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &c)| c.min(sq_dist(p, &points[cand])))
                .collect();
            let pot: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| pot < *b) {
                best = Some((pot, cand, next));
            }
        }
        let (_, cand, next) = best.expect("at least two candidates");
        centers.push(points[cand].clone());
        closest = next;
    }
    centers
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], out: &mut [usize], dist: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = centroids
            .iter()
            .enumerate()
            .map(|(c, m)| (c, sq_dist(p, m)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        out[i] = c;
        dist[i] = d;
        inertia += d;
    }
    inertia
}

fn lloyd(points: &[Vec<f64>], cfg: &KMeansConfig, restart: usize) -> KMeansFit {
    let n = points.len();
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut centroids = greedy_seeding(points, cfg.k, &mut rng);
    let mut assignments = vec![0; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();
    for _ in 0..cfg.max_iter.max(1) {
        let inertia = assign(points, &centroids, &mut assignments, &mut dist);
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev - inertia <= cfg.tol * prev);
        history.push(inertia);
        if converged || inertia == 0.0 {
            break;
        }
        // centroid update
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..cfg.k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for (i, p) in points.iter().enumerate() {
            dist[i] = sq_dist(p, &centroids[assignments[i]]);
        }
        // re-seed empty clusters with the point farthest from its centroid
        for c in 0..cfg.k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                dist[i] = 0.0;
                centroids[c] = points[i].clone();
            }
        }
    }
    KMeansFit {
        inertia: *history.last().expect("at least one iteration"),
        assignments,
        centroids,
        history,
        restart,
    }
}

/// Best-inertia k-means over `cfg.restarts` independent restarts. Ties go to
/// the lowest restart index.
pub fn kmeans_points(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = points.len();
    if cfg.k < 2 || cfg.k > n {
        return Err(AuditError::BadK { k: cfg.k, max: n });
    }
    if cfg.restarts == 0 {
        return Err(AuditError::BadValue("k-means needs at least one restart".into()));
    }
    let runs = par::map_range(cfg.restarts, |r| lloyd(points, cfg, r));
    let mut best: Option<KMeansFit> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Unit-normalized copy of each vector.
pub fn unit_rows(set: &EmbeddingSet) -> Vec<Vec<f64>> {
    set.vectors()
        .map(|v| {
            let len = norm(v);
            v.iter().map(|x| x / len).collect()
        })
        .collect()
}

/// k-means on the unit-normalized vectors of `set`.
pub fn kmeans_fit(set: &EmbeddingSet, cfg: &KMeansConfig) -> Result<KMeansFit> {
    kmeans_points(&unit_rows(set), cfg)
}

pub fn kmeans(set: &EmbeddingSet, k: usize, seed: u64, restarts: usize) -> Result<Clustering> {
    let cfg = KMeansConfig::new(k, seed, restarts);
    let fit = kmeans_fit(set, &cfg)?;
    Clustering::from_assignments(set.vocab().clone(), &fit.assignments, k, set.source_tag())
}

/// Overlap of one clustering with one reference group, in both directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PileOverlap {
    pub group: String,
    /// `AvMaxOverlap(piles, clusters)`.
    pub piles_in_clusters: f64,
    /// `AvMaxOverlap(clusters, piles)`.
    pub clusters_in_piles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    pub space: String,
    pub clusters: usize,
    pub inertia: f64,
    pub versus: Vec<PileOverlap>,
}

/// Average-maximal-overlap table: reference agreement between the pile
/// groups plus one row per clustered space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapTable {
    /// `(a, b, AvMaxOverlap(a, b))` for each ordered pair of distinct groups.
    pub reference: Vec<(String, String, f64)>,
    pub rows: Vec<OverlapRow>,
    pub config: KMeansConfig,
}

/// Clusters every space with k-means and scores it against every pile group.
/// All spaces must share `vocab`.
pub fn clustering_report(
    spaces: &[EmbeddingSet],
    piles: &[PileSorting],
    vocab: &Vocab,
    cfg: &KMeansConfig,
) -> Result<OverlapTable> {
    let groups = piles
        .iter()
        .map(|p| Clustering::from_piles(p, vocab))
        .collect::<Result<Vec<_>>>()?;
    let mut reference = Vec::new();
    for a in &groups {
        for b in &groups {
            if a.source_tag() != b.source_tag() {
                reference.push((
                    a.source_tag().to_string(),
                    b.source_tag().to_string(),
                    av_max_overlap(a, b)?,
                ));
            }
        }
    }
    let mut rows = Vec::with_capacity(spaces.len());
    for space in spaces {
        if space.vocab() != vocab {
            return Err(AuditError::VocabMismatch);
        }
        let fit = kmeans_fit(space, cfg)?;
        let clusters =
            Clustering::from_assignments(vocab.clone(), &fit.assignments, cfg.k, space.source_tag())?;
        let versus = groups
            .iter()
            .map(|g| {
                Ok(PileOverlap {
                    group: g.source_tag().to_string(),
                    piles_in_clusters: av_max_overlap(g, &clusters)?,
                    clusters_in_piles: av_max_overlap(&clusters, g)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(OverlapRow {
            space: space.source_tag().to_string(),
            clusters: clusters.len(),
            inertia: fit.inertia,
            versus,
        });
    }
    Ok(OverlapTable {
        reference,
        rows,
        config: *cfg,
    })
}
