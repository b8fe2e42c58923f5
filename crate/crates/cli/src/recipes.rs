//! Experiment recipes. Each one reads the shared [`Inputs`], writes its
//! artifacts under `out_dir/<name>/`, and returns the paths it wrote.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use simaudit::clusterkit::{clustering_report, Clustering, KMeansConfig};
use simaudit::corpus::{
    load_embeddings, load_perf_table, load_piles, load_term_list, EmbeddingFormat, EmbeddingSet,
    PerfTermTable, PileSorting, Vocab,
};
use simaudit::fsutil::write_atomic;
use simaudit::groundtruth::{build_ground_truth, pile_similarity_matrix};
use simaudit::hubness::{hubness_report_for, HubnessReport, Reduction};
use simaudit::mdsviz::{
    classical_mds, coordinates_csv, curve_table_csv, emit_curve_svg, emit_ratio_svg,
    emit_scatter_svg, layout_similarity, smacof, MdsInit, MdsSolution, ScatterOptions,
    SmacofConfig,
};
use simaudit::retrieval::{
    cross_modal_curve, labeled_ap_curve, pile_agreement, random_baseline, relative_change,
    performance_text_embedding, ApkCurve, BaselineBand, RatioCurve, TermWeighting,
};
use simaudit::simspace::{similarity_matrix, to_dissimilarity, DistMatrix, SimMatrix};
use simaudit::AuditError;

use crate::config::{ExperimentConfig, Weighting};
use crate::error::{CliError, CliResult};
use crate::meta::{write_json, Provenance};

/// Everything loaded once and shared by the recipes.
pub struct Inputs {
    pub vocab: Vocab,
    pub piles: Vec<PileSorting>,
    pub table: Option<PerfTermTable>,
    pub gt: SimMatrix,
    /// Plain term embeddings restricted to `vocab`, tagged with model names.
    pub models: Vec<EmbeddingSet>,
    pub context: Vec<EmbeddingSet>,
}

pub fn load_set(path: &Path, tag: &str) -> CliResult<EmbeddingSet> {
    Ok(load_embeddings(path, EmbeddingFormat::from_path(path))?.with_source_tag(tag))
}

/// Vocabulary from a term list, or the sorted union of pile and table terms.
pub fn vocab_for(
    terms: Option<&Path>,
    piles: &[PileSorting],
    table: Option<&PerfTermTable>,
) -> CliResult<Vocab> {
    if let Some(p) = terms {
        return Ok(load_term_list(p)?);
    }
    let mut all: BTreeSet<String> = BTreeSet::new();
    for s in piles {
        for p in &s.piles {
            all.extend(p.members.iter().cloned());
        }
    }
    if let Some(t) = table {
        all.extend(t.rows().iter().map(|r| r.term.clone()));
    }
    Ok(Vocab::new(all)?)
}

pub fn load_inputs(cfg: &ExperimentConfig) -> CliResult<Inputs> {
    let gt_cfg = &cfg.ground_truth;
    let piles = gt_cfg
        .piles
        .iter()
        .map(|p| load_piles(&cfg.resolve(p)))
        .collect::<simaudit::Result<Vec<_>>>()?;
    let table = gt_cfg
        .perf_table
        .as_ref()
        .map(|p| load_perf_table(&cfg.resolve(p)))
        .transpose()?;
    let terms = gt_cfg.terms.as_ref().map(|p| cfg.resolve(p));
    let vocab = vocab_for(terms.as_deref(), &piles, table.as_ref())?;
    let gt = build_ground_truth(&vocab, &piles, table.as_ref(), gt_cfg.weights.as_deref())?;
    let load_all = |entries: &std::collections::BTreeMap<String, PathBuf>, suffix: &str| {
        entries
            .iter()
            .map(|(name, p)| {
                let set = load_set(&cfg.resolve(p), &format!("{name}{suffix}"))?;
                Ok(set.restrict_to(&vocab)?)
            })
            .collect::<CliResult<Vec<_>>>()
    };
    let models = load_all(&cfg.models, "")?;
    let context = load_all(&cfg.context, "-context")?;
    Ok(Inputs {
        vocab,
        piles,
        table,
        gt,
        models,
        context,
    })
}

/// `n` i.i.d. standard Gaussian vectors over `vocab`.
pub fn gaussian_space(vocab: &Vocab, dim: usize, seed: u64, tag: &str) -> CliResult<EmbeddingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = (0..vocab.len())
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    Ok(EmbeddingSet::new(vocab.labels(), vectors, tag)?)
}

/// Rows of a similarity matrix as vectors (similarity profiles).
pub fn matrix_space(sim: &SimMatrix, tag: &str) -> CliResult<EmbeddingSet> {
    let rows = (0..sim.n()).map(|i| sim.row(i).to_vec()).collect();
    Ok(EmbeddingSet::new(sim.vocab().labels(), rows, tag)?)
}

pub fn provenance(cfg: &ExperimentConfig, hash: &str) -> Provenance {
    Provenance::new(hash)
        .seed("tie", cfg.tie_seed)
        .seed("baseline", cfg.baseline.seed)
        .seed("kmeans", cfg.kmeans.seed)
        .seed("kmeans_random", cfg.kmeans.random_seed)
        .seed("hubness_random", cfg.hubness.random_seed)
        .seed("mds", cfg.mds.seed)
}

fn out(cfg: &ExperimentConfig, sub: &str, file: &str) -> PathBuf {
    cfg.out_dir.join(sub).join(file)
}

#[derive(Serialize)]
struct CurveSummary {
    name: String,
    mean: f64,
    at: Vec<(usize, f64)>,
    /// Fraction of k at which the curve lies inside the baseline band.
    within_band: f64,
}

fn summarize(c: &ApkCurve, band: &BaselineBand, probe: &[usize]) -> CurveSummary {
    let inside = c
        .ks
        .iter()
        .zip(&c.values)
        .filter(|(k, v)| {
            band.ks
                .iter()
                .position(|x| x == *k)
                .is_some_and(|i| **v >= band.ci_low[i] && **v <= band.ci_high[i])
        })
        .count();
    CurveSummary {
        name: c.label_v.clone(),
        mean: c.values.iter().sum::<f64>() / c.values.len().max(1) as f64,
        at: probe
            .iter()
            .filter_map(|&k| c.value_at(k).map(|v| (k, v)))
            .collect(),
        within_band: inside as f64 / c.ks.len().max(1) as f64,
    }
}

fn probe_ks(k_max: usize) -> Vec<usize> {
    [1, 8, k_max]
        .into_iter()
        .filter(|&k| k <= k_max)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Serialize)]
struct MainSummary {
    k_max: usize,
    ranking_k: usize,
    /// Model names by decreasing aP@k at `ranking_k`.
    ranking: Vec<String>,
    models: Vec<CurveSummary>,
    pile_agreement: Option<ApkCurve>,
    baseline: BaselineBand,
}

/// aP@k of every model against the ground truth, with the random baseline
/// band and the pile-vs-pile agreement segment.
pub fn run_main_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    meta: &Provenance,
) -> CliResult<Vec<PathBuf>> {
    if inputs.models.is_empty() {
        return Err(CliError::Config("no model embedding files configured".into()));
    }
    let n = inputs.vocab.len();
    let k_max = cfg.k_max;
    let mut curves = Vec::new();
    for set in &inputs.models {
        let sim = similarity_matrix(set)?;
        curves.push(labeled_ap_curve(&inputs.gt, "GT", &sim, set.source_tag(), k_max, cfg.tie_seed)?);
    }
    let ranking_k = k_max.min(8);
    let mut ranking: Vec<(f64, String)> = curves
        .iter()
        .map(|c| (c.value_at(ranking_k).unwrap_or(0.0), c.label_v.clone()))
        .collect();
    ranking.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let agreement = if inputs.piles.len() >= 2 {
        let p1 = pile_similarity_matrix(&inputs.piles[0], &inputs.vocab)?;
        let p2 = pile_similarity_matrix(&inputs.piles[1], &inputs.vocab)?;
        let [lo, hi] = cfg.ground_truth.agreement_window;
        Some(pile_agreement(&p1, &p2, lo..=hi.min(n - 1), cfg.tie_seed)?)
    } else {
        None
    };
    let band = random_baseline(n, k_max, cfg.baseline.trials, cfg.baseline.seed)?;

    let probe = probe_ks(k_max);
    let summary = MainSummary {
        k_max,
        ranking_k,
        ranking: ranking.into_iter().map(|(_, name)| name).collect(),
        models: curves.iter().map(|c| summarize(c, &band, &probe)).collect(),
        pile_agreement: agreement.clone(),
        baseline: band.clone(),
    };
    let mut plotted = curves;
    plotted.extend(agreement);
    let csv = out(cfg, "main", "apk_curves.csv");
    let svg = out(cfg, "main", "apk_curves.svg");
    emit_curve_svg(&plotted, Some(&band), &svg, &csv, &meta.lines())?;
    let json = out(cfg, "main", "summary.json");
    write_json(&json, meta, "main", &summary)?;
    Ok(vec![csv, svg, json])
}

#[derive(Serialize)]
struct HubnessOutput {
    method: String,
    ks: Vec<usize>,
    rows: Vec<HubnessReport>,
    /// aP@k against the ground truth after reduction over before, per model.
    ratios: Vec<RatioCurve>,
    /// Models whose ratio is undefined (zero aP@k before reduction).
    ratio_skipped: Vec<(String, String)>,
}

/// Table-1-style skewness and Robin Hood rows before and after hubness
/// reduction, plus a Gaussian random-baseline row per k.
pub fn run_hubness_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    meta: &Provenance,
) -> CliResult<Vec<PathBuf>> {
    let method: Reduction = cfg
        .hubness
        .method
        .parse()
        .map_err(|e: String| CliError::Config(e))?;
    let ks = &cfg.hubness.ks;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut ratio_skipped = Vec::new();
    for set in &inputs.models {
        let sim = similarity_matrix(set)?;
        let reduced = method.apply(&to_dissimilarity(&sim))?;
        rows.extend(hubness_report_for(&sim, &reduced, set.source_tag(), ks, cfg.tie_seed)?);
        let tag = set.source_tag();
        let before = labeled_ap_curve(&inputs.gt, "GT", &sim, tag, cfg.k_max, cfg.tie_seed)?;
        let after = labeled_ap_curve(
            &inputs.gt,
            "GT",
            &reduced,
            &format!("{tag}+{method}"),
            cfg.k_max,
            cfg.tie_seed,
        )?;
        match relative_change(&after, &before) {
            Ok(r) => ratios.push(r),
            Err(e @ AuditError::DegenerateBaselineValue(_)) => {
                ratio_skipped.push((tag.to_string(), e.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
    }
    let rb = gaussian_space(&inputs.vocab, cfg.hubness.random_dim, cfg.hubness.random_seed, "RB")?;
    let sim = similarity_matrix(&rb)?;
    let reduced = method.apply(&to_dissimilarity(&sim))?;
    rows.extend(hubness_report_for(&sim, &reduced, "RB", ks, cfg.tie_seed)?);

    let json = out(cfg, "hubness", "report.json");
    let csv = out(cfg, "hubness", "ratio.csv");
    let svg = out(cfg, "hubness", "ratio.svg");
    emit_ratio_svg(&ratios, &svg, &csv, &meta.lines())?;
    let body = HubnessOutput {
        method: method.to_string(),
        ks: ks.clone(),
        rows,
        ratios,
        ratio_skipped,
    };
    write_json(&json, meta, "hubness", &body)?;
    let mut written = vec![json, csv];
    if !body.ratios.is_empty() {
        written.push(svg);
    }
    Ok(written)
}

#[derive(Serialize)]
struct ContextOutput {
    ratios: Vec<RatioCurve>,
    mean_ratio: Vec<(String, f64)>,
}

/// Relative change in aP@k against the ground truth when terms are embedded
/// with a context prompt.
pub fn run_context_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    meta: &Provenance,
) -> CliResult<Vec<PathBuf>> {
    if inputs.context.is_empty() {
        return Ok(Vec::new());
    }
    let mut ratios = Vec::new();
    for ctx in &inputs.context {
        let name = ctx.source_tag().trim_end_matches("-context");
        let plain = inputs
            .models
            .iter()
            .find(|m| m.source_tag() == name)
            .ok_or_else(|| CliError::Config(format!("context model `{name}` has no plain counterpart")))?;
        ratios.push(context_ratio(&inputs.gt, plain, ctx, cfg.k_max, cfg.tie_seed)?);
    }
    let mean_ratio = ratios
        .iter()
        .map(|r| (r.numerator.clone(), r.values.iter().sum::<f64>() / r.values.len() as f64))
        .collect();
    let csv = out(cfg, "context", "ratio.csv");
    let svg = out(cfg, "context", "ratio.svg");
    let json = out(cfg, "context", "report.json");
    emit_ratio_svg(&ratios, &svg, &csv, &meta.lines())?;
    write_json(&json, meta, "context", &ContextOutput { ratios, mean_ratio })?;
    Ok(vec![csv, svg, json])
}

pub fn context_ratio(
    gt: &SimMatrix,
    plain: &EmbeddingSet,
    ctx: &EmbeddingSet,
    k_max: usize,
    tie_seed: u64,
) -> CliResult<RatioCurve> {
    let sp = similarity_matrix(plain)?;
    let sc = similarity_matrix(ctx)?;
    let a = labeled_ap_curve(gt, "GT", &sc, ctx.source_tag(), k_max, tie_seed)?;
    let b = labeled_ap_curve(gt, "GT", &sp, plain.source_tag(), k_max, tie_seed)?;
    Ok(relative_change(&a, &b)?)
}

#[derive(Serialize)]
struct CrossModalOutput {
    performances: usize,
    curves: Vec<ApkCurve>,
    baseline: BaselineBand,
}

fn weighting(w: Weighting) -> TermWeighting {
    match w {
        Weighting::Unique => TermWeighting::Unique,
        Weighting::Frequency => TermWeighting::Frequency,
    }
}

/// aP@k between audio embeddings of the performances and the mean text
/// embeddings of the terms describing them.
pub fn run_cross_modal_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    meta: &Provenance,
) -> CliResult<Vec<PathBuf>> {
    let Some(cm) = &cfg.cross_modal else {
        return Ok(Vec::new());
    };
    let table = inputs
        .table
        .as_ref()
        .ok_or_else(|| CliError::Config("cross_modal needs ground_truth.perf_table".into()))?;
    let audio = load_set(&cfg.resolve(&cm.audio), "audio")?;
    let texts = cm
        .text
        .iter()
        .map(|p| {
            // stems alone collide for context variants of the same model
            let tag = p.with_extension("").to_string_lossy().into_owned();
            load_set(&cfg.resolve(p), &tag)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (curves, band) =
        cross_modal(&audio, &texts, table, weighting(cm.weighting), cfg.k_max, cfg.tie_seed, cfg.baseline.trials, cfg.baseline.seed)?;
    let csv = out(cfg, "cross_modal", "curves.csv");
    let svg = out(cfg, "cross_modal", "curves.svg");
    let json = out(cfg, "cross_modal", "report.json");
    emit_curve_svg(&curves, Some(&band), &svg, &csv, &meta.lines())?;
    let body = CrossModalOutput {
        performances: audio.len(),
        curves,
        baseline: band,
    };
    write_json(&json, meta, "cross_modal", &body)?;
    Ok(vec![csv, svg, json])
}

#[allow(clippy::too_many_arguments)]
pub fn cross_modal(
    audio: &EmbeddingSet,
    texts: &[EmbeddingSet],
    table: &PerfTermTable,
    w: TermWeighting,
    k_max: usize,
    tie_seed: u64,
    trials: usize,
    baseline_seed: u64,
) -> CliResult<(Vec<ApkCurve>, BaselineBand)> {
    let k = k_max.min(audio.len().saturating_sub(1));
    let mut curves = Vec::new();
    for t in texts {
        let means = performance_text_embedding(t, table, Some(audio.vocab()), w)?;
        curves.push(cross_modal_curve(audio, &means, k, tie_seed)?);
    }
    let band = random_baseline(audio.len(), k, trials, baseline_seed)?;
    Ok((curves, band))
}

/// k-means in every model space, the ground-truth space and a Gaussian
/// random space, scored against each pile group in both directions.
pub fn run_clustering_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    meta: &Provenance,
) -> CliResult<Vec<PathBuf>> {
    let km = &cfg.kmeans;
    let mut spaces = inputs.models.clone();
    spaces.push(matrix_space(&inputs.gt, "GT")?);
    spaces.push(gaussian_space(&inputs.vocab, km.random_dim, km.random_seed, "RB")?);
    let kcfg = KMeansConfig::new(km.k, km.seed, km.restarts);
    let table = clustering_report(&spaces, &inputs.piles, &inputs.vocab, &kcfg)?;

    let mut text = String::new();
    for l in meta.lines() {
        text.push_str(&format!("# {l}\n"));
    }
    text.push_str("space,clusters");
    if let Some(first) = table.rows.first() {
        for v in &first.versus {
            text.push_str(&format!(",{0}_in_clusters,clusters_in_{0}", v.group));
        }
    }
    text.push('\n');
    for (a, b, v) in &table.reference {
        text.push_str(&format!("# {a} in {b}: {}\n", simaudit::fsutil::fmt_sig(*v, 9)));
    }
    for row in &table.rows {
        text.push_str(&format!("{},{}", row.space, row.clusters));
        for v in &row.versus {
            text.push_str(&format!(
                ",{},{}",
                simaudit::fsutil::fmt_sig(v.piles_in_clusters, 9),
                simaudit::fsutil::fmt_sig(v.clusters_in_piles, 9)
            ));
        }
        text.push('\n');
    }
    let csv = out(cfg, "clustering", "overlap.csv");
    let json = out(cfg, "clustering", "overlap.json");
    write_atomic(&csv, text.as_bytes())?;
    write_json(&json, meta, "clustering", &table)?;
    Ok(vec![csv, json])
}

/// Layout of a dissimilarity matrix by the configured method.
pub fn layout(dist: &DistMatrix, dims: usize, method: &str, seed: u64) -> CliResult<MdsSolution> {
    match method {
        "classical" => Ok(classical_mds(dist, dims)?),
        "smacof" => Ok(smacof(dist, &SmacofConfig::new(dims, MdsInit::Classical, seed))?),
        "smacof-random" => Ok(smacof(dist, &SmacofConfig::new(dims, MdsInit::Random, seed))?),
        other => Err(CliError::Config(format!(
            "unknown mds method `{other}` (classical, smacof, smacof-random)"
        ))),
    }
}

#[derive(Serialize)]
struct Fidelity {
    dims: usize,
    stress: f64,
    curve: ApkCurve,
    /// Largest `1 - aP@k` over the window; the ground truth scores 1 against itself.
    max_loss: f64,
}

#[derive(Serialize)]
struct MdsOutput {
    method: String,
    layout: MdsSolution,
    fidelity: Vec<Fidelity>,
}

/// 2-D layouts of the ground truth colored by pile group, and the aP@k kept
/// by layouts of several dimensions.
pub fn run_mds_experiment(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    meta: &Provenance,
) -> CliResult<Vec<PathBuf>> {
    let m = &cfg.mds;
    let dist = to_dissimilarity(&inputs.gt);
    let sol = layout(&dist, m.dims, &m.method, m.seed)?;
    let groups = inputs
        .piles
        .iter()
        .map(|p| Clustering::from_piles(p, &inputs.vocab))
        .collect::<simaudit::Result<Vec<_>>>()?;
    let mut written = Vec::new();
    let coords = out(cfg, "mds", "coords.csv");
    write_atomic(&coords, coordinates_csv(&sol, &meta.lines()).as_bytes())?;
    written.push(coords);
    if m.dims == 2 {
        let both: Vec<&Clustering> = groups.iter().take(2).collect();
        let fig1 = out(cfg, "mds", "layout_groups.svg");
        let opts = ScatterOptions {
            meta: meta.lines(),
            ..Default::default()
        };
        emit_scatter_svg(&sol, &both, &opts, &fig1)?;
        written.push(fig1);
        for g in &groups {
            let path = out(cfg, "mds", &format!("layout_hulls_{}.svg", g.source_tag()));
            let opts = ScatterOptions {
                hulls: true,
                labels: true,
                title: None,
                meta: meta.lines(),
            };
            emit_scatter_svg(&sol, &[g], &opts, &path)?;
            written.push(path);
        }
    }
    let [lo, hi] = m.fidelity_ks;
    let n = inputs.vocab.len();
    let mut fidelity = Vec::new();
    for &d in &m.fidelity_dims {
        let s = layout(&dist, d, &m.method, m.seed)?;
        let curve = labeled_ap_curve(
            &inputs.gt,
            "GT",
            &layout_similarity(&s),
            &format!("mds-{d}"),
            hi.min(n - 1),
            cfg.tie_seed,
        )?
        .restrict(lo..=hi);
        let max_loss = curve.values.iter().map(|v| 1.0 - v).fold(0.0, f64::max);
        fidelity.push(Fidelity {
            dims: d,
            stress: s.stress,
            curve,
            max_loss,
        });
    }
    let json = out(cfg, "mds", "report.json");
    let body = MdsOutput {
        method: m.method.clone(),
        layout: sol,
        fidelity,
    };
    write_json(&json, meta, "mds", &body)?;
    written.push(json);
    Ok(written)
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

/// Runs every recipe and writes `manifest.json` listing each artifact with
/// its digest.
pub fn run_all(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let meta = provenance(cfg, &hash);
    let inputs = load_inputs(cfg)?;
    let gt_path = cfg.out_dir.join("ground_truth.csv");
    simaudit::simspace::save_matrix_annotated(&inputs.gt, &gt_path, &meta.lines())?;
    let mut written = vec![gt_path];
    written.extend(run_main_experiment(cfg, &inputs, &meta)?);
    written.extend(run_hubness_experiment(cfg, &inputs, &meta)?);
    written.extend(run_context_experiment(cfg, &inputs, &meta)?);
    written.extend(run_cross_modal_experiment(cfg, &inputs, &meta)?);
    written.extend(run_clustering_experiment(cfg, &inputs, &meta)?);
    written.extend(run_mds_experiment(cfg, &inputs, &meta)?);

    let mut entries = Vec::new();
    for p in &written {
        let bytes = std::fs::read(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        let rel = p.strip_prefix(&cfg.out_dir).unwrap_or(p);
        entries.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: {
                use sha2::{Digest, Sha256};
                crate::config::hex(&Sha256::digest(&bytes))
            },
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = cfg.out_dir.join("manifest.json");
    write_json(&manifest, &meta, "artifacts", &entries)?;
    written.push(manifest);
    Ok(written)
}

/// Curve CSV for a single model: `k,value,baseline_mean,baseline_hi,baseline_lo`.
pub fn single_curve_csv(curve: &ApkCurve, band: &BaselineBand, meta: &Provenance) -> String {
    curve_table_csv(
        std::slice::from_ref(curve),
        Some(&["value".to_string()]),
        Some(band),
        &meta.lines(),
    )
}
