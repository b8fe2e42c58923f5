//! Low-dimensional embeddings of a dissimilarity matrix (classical MDS and
//! SMACOF stress majorization) and deterministic SVG/CSV figures.
//!
//! All kernels here are single-threaded; the SVG writers format every number
//! at fixed precision so identical inputs give byte-identical files.

mod eigen;
mod svg;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::corpus::Vocab;
use crate::error::{AuditError, Result};
use crate::fsutil::{fmt_sig, write_atomic};
use crate::simspace::{DistMatrix, SimKind, SimMatrix};

pub use eigen::{symmetric_eigen, SymEigen};
pub use svg::{
    convex_hull, curve_table_csv, emit_curve_svg, emit_ratio_svg, emit_scatter_svg,
    ratio_table_csv, render_curve_svg, render_ratio_svg, render_scatter_svg, ScatterOptions,
};

/// Coordinates of every vocabulary item in `m` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdsSolution {
    #[serde(skip)]
    pub vocab: Vocab,
    /// `n` rows of `m` coordinates.
    pub coordinates: Vec<Vec<f64>>,
    pub m: usize,
    /// Raw stress `sum_{i<j} (d_ij(X) - delta_ij)^2` of the final layout.
    pub stress: f64,
    pub iterations: usize,
    pub seed: Option<u64>,
    /// Stress before the first and after every SMACOF iteration.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdsInit {
    Classical,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmacofConfig {
    pub m: usize,
    pub init: MdsInit,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative stress decrease falls below this.
    pub tol: f64,
}

impl SmacofConfig {
    pub fn new(m: usize, init: MdsInit, seed: u64) -> Self {
        SmacofConfig {
            m,
            init,
            seed,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if m == 0 || m >= n {
        return Err(AuditError::BadDimension { m, n });
    }
    Ok(())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Raw stress of `coords` against the target dissimilarities.
pub fn raw_stress(dist: &DistMatrix, coords: &[Vec<f64>]) -> f64 {
    let n = dist.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let r = euclid(&coords[i], &coords[j]) - dist.get(i, j);
            s += r * r;
        }
    }
    s
}

/// Torgerson scaling: double-center the squared dissimilarities and keep the
/// top `m` eigenpairs (negative eigenvalues contribute zero coordinates).
pub fn classical_mds(dist: &DistMatrix, m: usize) -> Result<MdsSolution> {
    let n = dist.n();
    check_dims(n, m)?;
    let sq: Vec<f64> = dist.values().iter().map(|d| d * d).collect();
    let row_mean: Vec<f64> = (0..n)
        .map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (sq[i * n + j] - row_mean[i] - row_mean[j] + grand);
        }
    }
    let eig = symmetric_eigen(&b, n);
    let mut coordinates = vec![vec![0.0; m]; n];
    for c in 0..m {
        let lambda = eig.values[c];
        if lambda <= 0.0 {
            continue;
        }
        let s = lambda.sqrt();
        for (row, v) in coordinates.iter_mut().zip(&eig.vectors[c]) {
            row[c] = v * s;
        }
    }
    let stress = raw_stress(dist, &coordinates);
    Ok(MdsSolution {
        vocab: dist.vocab().clone(),
        coordinates,
        m,
        stress,
        iterations: 0,
        seed: None,
        history: vec![stress],
    })
}

/// One Guttman transform `X <- B(X) X / n` with unit weights.
fn guttman(dist: &DistMatrix, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = x[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclid(&x[i], &x[j]);
            let bij = if d > 0.0 { -dist.get(i, j) / d } else { 0.0 };
            diag -= bij;
            for c in 0..m {
                out[i][c] += bij * x[j][c];
            }
        }
        for c in 0..m {
            out[i][c] += diag * x[i][c];
            out[i][c] /= n as f64;
        }
    }
    out
}

/// SMACOF from a given starting layout.
pub fn smacof_from(
    dist: &DistMatrix,
    init: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> Result<MdsSolution> {
    let n = dist.n();
    let m = init.first().map_or(0, Vec::len);
    check_dims(n, m)?;
    if init.len() != n || init.iter().any(|r| r.len() != m) {
        return Err(AuditError::Mismatch("initial layout has the wrong shape".into()));
    }
    let mut x = init;
    let mut stress = raw_stress(dist, &x);
    let mut history = vec![stress];
    let mut iterations = 0;
    while iterations < max_iter && stress > 0.0 {
        let next = guttman(dist, &x);
        let s = raw_stress(dist, &next);
        iterations += 1;
        if s > stress {
            // rounding noise at a fixed point; keep the better layout
            break;
        }
        let converged = (stress - s) <= tol * stress;
        x = next;
        stress = s;
        history.push(s);
        if converged {
            break;
        }
    }
    Ok(MdsSolution {
        vocab: dist.vocab().clone(),
        coordinates: x,
        m,
        stress,
        iterations,
        seed: None,
        history,
    })
}

/// SMACOF started from classical MDS or from a seeded Gaussian layout.
pub fn smacof(dist: &DistMatrix, cfg: &SmacofConfig) -> Result<MdsSolution> {
    let n = dist.n();
    check_dims(n, cfg.m)?;
    let init = match cfg.init {
        MdsInit::Classical => classical_mds(dist, cfg.m)?.coordinates,
        MdsInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mean = dist.values().iter().sum::<f64>() / (n * n) as f64;
            (0..n)
                .map(|_| {
                    (0..cfg.m)
                        .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); mean * z })
                        .collect()
                })
                .collect()
        }
    };
    let mut sol = smacof_from(dist, init, cfg.max_iter, cfg.tol)?;
    sol.seed = (cfg.init == MdsInit::Random).then_some(cfg.seed);
    Ok(sol)
}

/// Similarity `1 - d / d_max` between embedded points, for comparing the
/// neighborhoods of a layout with those of the original space.
pub fn layout_similarity(sol: &MdsSolution) -> SimMatrix {
    let n = sol.coordinates.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let e = euclid(&sol.coordinates[i], &sol.coordinates[j]);
            d[i * n + j] = e;
            d[j * n + i] = e;
        }
    }
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let values = d
        .iter()
        .map(|&e| if dmax > 0.0 { 1.0 - e / dmax } else { 1.0 })
        .collect();
    SimMatrix::new_unchecked(sol.vocab.clone(), values, SimKind::Secondary)
}

/// `label,x0,x1,...` with 9 significant digits.
pub fn coordinates_csv(sol: &MdsSolution, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str("label");
    for c in 0..sol.m {
        let _ = write!(out, ",x{c}");
    }
    out.push('\n');
    for (i, row) in sol.coordinates.iter().enumerate() {
        out.push_str(&csv_field(sol.vocab.label(i)));
        for v in row {
            let _ = write!(out, ",{}", fmt_sig(*v, 9));
        }
        out.push('\n');
    }
    out
}

pub fn save_coordinates(sol: &MdsSolution, path: &Path, comments: &[String]) -> Result<()> {
    write_atomic(path, coordinates_csv(sol, comments).as_bytes())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dist_of(points: &[Vec<f64>]) -> DistMatrix {
        let n = points.len();
        let labels: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = euclid(&points[i], &points[j]);
            }
        }
        DistMatrix::new(Vocab::new(&labels).unwrap(), v).unwrap()
    }

    fn assert_distances_match(sol: &MdsSolution, dist: &DistMatrix, tol: f64) {
        let n = dist.n();
        for i in 0..n {
            for j in 0..n {
                let e = euclid(&sol.coordinates[i], &sol.coordinates[j]);
                assert!((e - dist.get(i, j)).abs() < tol, "({i},{j}) {e} vs {}", dist.get(i, j));
            }
        }
    }

    #[test]
    fn equilateral_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let d = dist_of(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]);
        let sol = classical_mds(&d, 2).unwrap();
        assert_distances_match(&sol, &d, 1e-9);
        assert!(sol.stress < 1e-18);
    }

    #[test]
    fn collinear_points_need_one_axis() {
        let d = dist_of(&[vec![0.0], vec![1.0], vec![3.0], vec![7.0]]);
        let sol = classical_mds(&d, 2).unwrap();
        assert_distances_match(&sol, &d, 1e-9);
        assert!(sol.coordinates.iter().all(|r| r[1].abs() < 1e-7));
    }

    #[test]
    fn planted_configurations_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let pts: Vec<Vec<f64>> = (0..30)
                .map(|_| vec![rng.random::<f64>() * 4.0, rng.random::<f64>()])
                .collect();
            let d = dist_of(&pts);
            let sol = classical_mds(&d, 2).unwrap();
            assert_distances_match(&sol, &d, 1e-6);
        }
    }

    #[test]
    fn dimension_errors() {
        let d = dist_of(&[vec![0.0], vec![1.0], vec![2.0]]);
        assert!(matches!(classical_mds(&d, 3), Err(AuditError::BadDimension { m: 3, n: 3 })));
        assert!(matches!(classical_mds(&d, 0), Err(AuditError::BadDimension { .. })));
        let cfg = SmacofConfig::new(5, MdsInit::Random, 0);
        assert!(smacof(&d, &cfg).is_err());
    }

    #[test]
    fn smacof_keeps_exact_layout() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]];
        let d = dist_of(&pts);
        let sol = smacof_from(&d, pts.clone(), 100, 1e-9).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.coordinates, pts);
    }

    #[test]
    fn smacof_history_non_increasing_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 25;
        let labels: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let x = 0.5 + rng.random::<f64>();
                v[i * n + j] = x;
                v[j * n + i] = x;
            }
        }
        let d = DistMatrix::new(Vocab::new(&labels).unwrap(), v).unwrap();
        let cfg = SmacofConfig::new(2, MdsInit::Random, 9);
        let a = smacof(&d, &cfg).unwrap();
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(a.stress, *a.history.last().unwrap());
        assert_eq!(a, smacof(&d, &cfg).unwrap());
        let c = smacof(&d, &SmacofConfig::new(2, MdsInit::Classical, 0)).unwrap();
        assert!(c.stress <= c.history[0]);
    }

    #[test]
    fn coordinates_csv_shape() {
        let d = dist_of(&[vec![0.0], vec![1.0], vec![2.0]]);
        let sol = classical_mds(&d, 1).unwrap();
        let text = coordinates_csv(&sol, &["seed 1".into()]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed 1");
        assert_eq!(lines[1], "label,x0");
        assert_eq!(lines.len(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stress_invariant_under_rigid_motion(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 4..12),
            angle in 0.0f64..6.3,
            tx in -10.0f64..10.0,
            ty in -10.0f64..10.0,
        ) {
            let n = pts.len();
            let labels: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let mut v = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let x = 1.0 + ((i * 7 + j * 3) % 5) as f64;
                    v[i * n + j] = x;
                    v[j * n + i] = x;
                }
            }
            let d = DistMatrix::new(Vocab::new(&labels).unwrap(), v).unwrap();
            let x: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
            let (c, s) = (angle.cos(), angle.sin());
            let y: Vec<Vec<f64>> = pts
                .iter()
                .map(|&(a, b)| vec![c * a - s * b + tx, s * a + c * b + ty])
                .collect();
            let (s1, s2) = (raw_stress(&d, &x), raw_stress(&d, &y));
            prop_assert!((s1 - s2).abs() <= 1e-9 * s1.max(1.0));
        }
    }
}
