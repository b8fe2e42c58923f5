use std::fs;

use simaudit::clusterkit::{av_max_overlap, clustering_report, kmeans, Clustering, KMeansConfig};
use simaudit::corpus::{
    load_embeddings, load_perf_table, load_piles, save_embeddings, save_perf_table, save_piles, EmbeddingFormat,
    EmbeddingSet, PerfTermTable, PileSorting, Vocab,
};
use simaudit::groundtruth::build_ground_truth;
use simaudit::hubness::{hubness_report, Reduction};
use simaudit::mdsviz::{classical_mds, emit_scatter_svg, smacof, MdsInit, ScatterOptions, SmacofConfig};
use simaudit::retrieval::{ap_curve, random_baseline};
use simaudit::simspace::{load_matrix, save_matrix, similarity_matrix, to_dissimilarity, SimKind};

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i:02}")).collect()
}

/// Four well separated groups of three terms on coordinate axes.
fn blob_set(tag: &str, jitter: f64) -> EmbeddingSet {
    let n = 12;
    let vectors = (0..n)
        .map(|i| {
            let mut v = vec![0.0; 6];
            v[i / 3] = 1.0;
            v[4] = jitter * ((i * 7 % 5) as f64 - 2.0);
            v[5] = jitter * ((i * 3 % 4) as f64 - 1.5);
            v
        })
        .collect();
    EmbeddingSet::new(&labels(n), vectors, tag).unwrap()
}

fn blob_piles(name: &str) -> PileSorting {
    let l = labels(12);
    let piles = (0..4).map(|p| (format!("{name}{p}"), l[p * 3..p * 3 + 3].to_vec())).collect();
    PileSorting::new(name, piles).unwrap()
}

#[test]
fn files_round_trip_into_a_perfect_curve() {
    let dir = tempfile::tempdir().unwrap();
    let set = blob_set("m", 0.05);
    let p1 = blob_piles("P1");
    let table = PerfTermTable::new((0..12).map(|i| (format!("perf{}", i / 3), format!("w{i:02}"))));

    save_embeddings(&set, &dir.path().join("m.jsonl"), EmbeddingFormat::Jsonl).unwrap();
    save_embeddings(&set, &dir.path().join("m.csv"), EmbeddingFormat::Csv).unwrap();
    save_piles(&p1, &dir.path().join("p1.json")).unwrap();
    save_perf_table(&table, &dir.path().join("perf.csv")).unwrap();

    let a = load_embeddings(&dir.path().join("m.jsonl"), EmbeddingFormat::Jsonl).unwrap();
    let b = load_embeddings(&dir.path().join("m.csv"), EmbeddingFormat::Csv).unwrap();
    assert_eq!(a.vocab(), b.vocab());
    for i in 0..a.len() {
        for (x, y) in a.vector(i).iter().zip(b.vector(i)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let piles = load_piles(&dir.path().join("p1.json")).unwrap();
    let table = load_perf_table(&dir.path().join("perf.csv")).unwrap();
    let gt = build_ground_truth(a.vocab(), &[piles], Some(&table), None).unwrap();

    // the model's nearest two neighbors are exactly its pile mates; at k=1
    // both mates tie in ground truth so only k=2 is pinned
    let sim = similarity_matrix(&a).unwrap();
    let curve = ap_curve(&gt, &sim, 2, 7).unwrap();
    assert_eq!(curve.value_at(2), Some(1.0));

    save_matrix(&gt, &dir.path().join("gt.csv")).unwrap();
    let back = load_matrix(&dir.path().join("gt.csv"), SimKind::GroundTruth).unwrap();
    assert_eq!(back.values(), gt.values());
}

#[test]
fn curves_beat_the_random_band_for_structured_spaces() {
    let set = blob_set("m", 0.05);
    let gt = build_ground_truth(set.vocab(), &[blob_piles("P1")], None, None).unwrap();
    let sim = similarity_matrix(&set).unwrap();
    let curve = ap_curve(&gt, &sim, 5, 3).unwrap();
    let band = random_baseline(12, 5, 2000, 9).unwrap();
    assert!(curve.values[1] > band.ci_high[1]);
    // past the pile size everything outside is a tie in ground truth
    assert!(curve.values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn kmeans_recovers_planted_piles() {
    let set = blob_set("m", 0.02);
    let piles = [blob_piles("P1"), blob_piles("P2")];
    let found = kmeans(&set, 4, 1, 5).unwrap();
    let truth = Clustering::from_piles(&piles[0], set.vocab()).unwrap();
    assert_eq!(av_max_overlap(&found, &truth).unwrap(), 1.0);
    assert_eq!(av_max_overlap(&truth, &found).unwrap(), 1.0);

    let table = clustering_report(std::slice::from_ref(&set), &piles, set.vocab(), &KMeansConfig::new(4, 1, 5)).unwrap();
    assert_eq!(table.rows.len(), 1);
    for v in &table.rows[0].versus {
        assert_eq!((v.piles_in_clusters, v.clusters_in_piles), (1.0, 1.0));
    }
}

#[test]
fn hubness_reduction_keeps_shapes() {
    let set = blob_set("m", 0.05);
    let reports = hubness_report(&set, &[2, 4], 7, Reduction::MpGauss).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert_eq!(r.model_tag, "m");
        assert!((0.0..=1.0).contains(&r.robinhood_before));
        assert!((0.0..=1.0).contains(&r.robinhood_after));
    }
}

#[test]
fn layout_to_svg() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocab::new(["a", "b", "c"]).unwrap();
    let set = EmbeddingSet::new(
        vocab.labels(),
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        "tri",
    )
    .unwrap();
    let dist = to_dissimilarity(&similarity_matrix(&set).unwrap());
    let sol = classical_mds(&dist, 2).unwrap();
    let refined = smacof(&dist, &SmacofConfig::new(2, MdsInit::Classical, 0)).unwrap();
    assert!(refined.stress <= 1e-9);
    assert_eq!(sol.coordinates.len(), 3);

    let one = PileSorting::new("G", vec![("all".to_string(), vec!["a", "b", "c"])]).unwrap();
    let coloring = Clustering::from_piles(&one, &vocab).unwrap();
    let opts = ScatterOptions { hulls: true, ..ScatterOptions::default() };
    let path = dir.path().join("tri.svg");
    emit_scatter_svg(&sol, &[&coloring], &opts, &path).unwrap();
    let svg = fs::read_to_string(&path).unwrap();
    assert_eq!(svg.matches("<title>").count(), 3);
    assert_eq!(svg.matches("<polygon").count(), 1);
}
