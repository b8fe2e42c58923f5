use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use simaudit::clusterkit::{clustering_report, Clustering, KMeansConfig};
use simaudit::corpus::{load_perf_table, load_piles};
use simaudit::fsutil::write_atomic;
use simaudit::groundtruth::build_ground_truth;
use simaudit::hubness::{hubness_report, Reduction};
use simaudit::mdsviz::{
    coordinates_csv, curve_table_csv, emit_scatter_svg, ratio_table_csv, render_curve_svg,
    render_ratio_svg, ScatterOptions,
};
use simaudit::retrieval::{labeled_ap_curve, random_baseline, TermWeighting};
use simaudit::simspace::{load_matrix, save_matrix_annotated, similarity_matrix, to_dissimilarity, SimKind};

use crate::config::{hex, ExperimentConfig, Overrides, DATA_DIR_ENV};
use crate::error::{CliError, CliResult};
use crate::meta::{write_json, Provenance};
use crate::recipes::{self, load_set, vocab_for};
use crate::synth::{self, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "audit", version, about = "Audit embedding spaces against expert similarity annotations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ground-truth construction.
    #[command(subcommand)]
    Gt(GtCommand),
    /// aP@k curve of one embedding file against a ground-truth matrix.
    Eval(EvalArgs),
    /// Hubness before and after reduction.
    Hubness(HubnessArgs),
    /// k-means overlap with pile groups.
    Cluster(ClusterArgs),
    /// MDS layout of a similarity matrix.
    Mds(MdsArgs),
    /// Audio vs mean-text aP@k over performances.
    CrossModal(CrossModalArgs),
    /// Relative aP@k change from context prompts.
    Context(ContextArgs),
    /// Config-driven experiment bundles.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Write a synthetic fixture data set with a matching config.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum GtCommand {
    Build(GtBuildArgs),
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    All(ReportAllArgs),
}

#[derive(Debug, Args)]
pub struct GtBuildArgs {
    #[arg(long = "piles", required = true)]
    pub piles: Vec<PathBuf>,
    #[arg(long)]
    pub perf_table: Option<PathBuf>,
    /// One weight per source: pile groups in order, then the table.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Term list fixing vocabulary order.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub baseline_seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, default_value_t = 49)]
    pub kmax: usize,
    #[arg(long, default_value_t = 7)]
    pub tie_seed: u64,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HubnessArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    pub ks: Vec<usize>,
    /// `mp-gauss` or `local-scaling[:k]`.
    #[arg(long, default_value = "mp-gauss")]
    pub method: String,
    #[arg(long, default_value_t = 7)]
    pub tie_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, default_value_t = 22)]
    pub k: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long = "piles", required = true)]
    pub piles: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MdsArgs {
    /// Labeled similarity matrix CSV.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    /// `smacof`, `smacof-random` or `classical`.
    #[arg(long, default_value = "smacof")]
    pub method: String,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long = "piles")]
    pub piles: Vec<PathBuf>,
    /// Hulls and pile names for the first pile group.
    #[arg(long)]
    pub hulls: bool,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossModalArgs {
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long = "text", required = true)]
    pub text: Vec<PathBuf>,
    #[arg(long)]
    pub perf_table: PathBuf,
    #[arg(long, value_enum, default_value = "unique")]
    pub weighting: WeightingArg,
    #[arg(long, default_value_t = 44)]
    pub kmax: usize,
    #[arg(long, default_value_t = 7)]
    pub tie_seed: u64,
    #[command(flatten)]
    pub baseline: BaselineArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum WeightingArg {
    Unique,
    Frequency,
}

#[derive(Debug, Args)]
pub struct ContextArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub plain: PathBuf,
    #[arg(long)]
    pub context: PathBuf,
    #[arg(long, default_value_t = 49)]
    pub kmax: usize,
    #[arg(long, default_value_t = 7)]
    pub tie_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportAllArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub tie_seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub baseline_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// `p` as given if it exists, else under `$AUDIT_DATA_DIR`.
fn input(p: &Path) -> CliResult<PathBuf> {
    if p.is_file() {
        return Ok(p.to_path_buf());
    }
    if p.is_relative() {
        if let Some(d) = std::env::var_os(DATA_DIR_ENV) {
            let q = Path::new(&d).join(p);
            if q.is_file() {
                return Ok(q);
            }
        }
    }
    Err(CliError::Config(format!("missing input {}", p.display())))
}

/// Provenance for a one-off command: hash of the arguments and input bytes.
fn command_meta(args: &impl std::fmt::Debug, inputs: &[&Path]) -> CliResult<Provenance> {
    let mut h = Sha256::new();
    let text = format!("{args:?}");
    h.update(text.as_bytes());
    for p in inputs {
        let bytes = std::fs::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(Provenance::new(hex(&h.finalize())))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gt(GtCommand::Build(a)) => gt_build(a),
        Command::Eval(a) => eval(a),
        Command::Hubness(a) => hubness(a),
        Command::Cluster(a) => cluster(a),
        Command::Mds(a) => mds(a),
        Command::CrossModal(a) => cross_modal(a),
        Command::Context(a) => context(a),
        Command::Report(ReportCommand::All(a)) => report_all(a),
        Command::Synth(a) => {
            let path = synth::generate(&a.out, &SynthSpec { seed: a.seed, ..Default::default() })?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn gt_build(a: GtBuildArgs) -> CliResult<()> {
    let piles_paths = a.piles.iter().map(|p| input(p)).collect::<CliResult<Vec<_>>>()?;
    let table_path = a.perf_table.as_deref().map(input).transpose()?;
    let vocab_path = a.vocab.as_deref().map(input).transpose()?;
    let mut all: Vec<&Path> = piles_paths.iter().map(PathBuf::as_path).collect();
    all.extend(table_path.as_deref());
    all.extend(vocab_path.as_deref());
    let meta = command_meta(&(&a.weights, "gt"), &all)?;
    let piles = piles_paths.iter().map(|p| load_piles(p)).collect::<simaudit::Result<Vec<_>>>()?;
    let table = table_path.as_deref().map(load_perf_table).transpose()?;
    let vocab = vocab_for(vocab_path.as_deref(), &piles, table.as_ref())?;
    let gt = build_ground_truth(&vocab, &piles, table.as_ref(), a.weights.as_deref())?;
    save_matrix_annotated(&gt, &a.out, &meta.lines())?;
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let (gt_path, emb_path) = (input(&a.gt)?, input(&a.emb)?);
    let meta = command_meta(&(a.kmax, &a.baseline), &[&gt_path, &emb_path])?
        .seed("tie", a.tie_seed)
        .seed("baseline", a.baseline.baseline_seed);
    let gt = load_matrix(&gt_path, SimKind::GroundTruth)?;
    let tag = emb_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let set = load_set(&emb_path, &tag)?.restrict_to(gt.vocab())?;
    let sim = similarity_matrix(&set)?;
    let curve = labeled_ap_curve(&gt, "GT", &sim, &tag, a.kmax, a.tie_seed)?;
    let band = random_baseline(gt.n(), a.kmax, a.baseline.trials, a.baseline.baseline_seed)?;
    write_atomic(&a.out, recipes::single_curve_csv(&curve, &band, &meta).as_bytes())?;
    if let Some(svg) = &a.svg {
        write_atomic(svg, render_curve_svg(&[curve], Some(&band), &meta.lines()).as_bytes())?;
    }
    Ok(())
}

fn hubness(a: HubnessArgs) -> CliResult<()> {
    let emb_path = input(&a.emb)?;
    let meta = command_meta(&(&a.ks, &a.method), &[&emb_path])?.seed("tie", a.tie_seed);
    let method: Reduction = a.method.parse().map_err(CliError::Config)?;
    let tag = emb_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let set = load_set(&emb_path, &tag)?;
    let rows = hubness_report(&set, &a.ks, a.tie_seed, method)?;
    write_json(&a.out, &meta, "hubness", &rows)
}

fn cluster(a: ClusterArgs) -> CliResult<()> {
    let emb_path = input(&a.emb)?;
    let piles_paths = a.piles.iter().map(|p| input(p)).collect::<CliResult<Vec<_>>>()?;
    let mut all: Vec<&Path> = vec![&emb_path];
    all.extend(piles_paths.iter().map(PathBuf::as_path));
    let meta = command_meta(&(a.k, a.restarts), &all)?.seed("kmeans", a.seed);
    let piles = piles_paths.iter().map(|p| load_piles(p)).collect::<simaudit::Result<Vec<_>>>()?;
    let tag = emb_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let set = load_set(&emb_path, &tag)?;
    let vocab = set.vocab().clone();
    let cfg = KMeansConfig::new(a.k, a.seed, a.restarts);
    let table = clustering_report(&[set], &piles, &vocab, &cfg)?;
    write_json(&a.out, &meta, "clustering", &table)
}

fn mds(a: MdsArgs) -> CliResult<()> {
    let matrix_path = input(&a.matrix)?;
    let piles_paths = a.piles.iter().map(|p| input(p)).collect::<CliResult<Vec<_>>>()?;
    let mut all: Vec<&Path> = vec![&matrix_path];
    all.extend(piles_paths.iter().map(PathBuf::as_path));
    let meta = command_meta(&(a.dims, &a.method, a.hulls), &all)?.seed("mds", a.seed);
    let sim = load_matrix(&matrix_path, SimKind::GroundTruth)?;
    let sol = recipes::layout(&to_dissimilarity(&sim), a.dims, &a.method, a.seed)?;
    write_atomic(&a.csv, coordinates_csv(&sol, &meta.lines()).as_bytes())?;
    if let Some(svg) = &a.svg {
        let groups = piles_paths
            .iter()
            .map(|p| Clustering::from_piles(&load_piles(p)?, sim.vocab()))
            .collect::<simaudit::Result<Vec<_>>>()?;
        let refs: Vec<&Clustering> = groups.iter().take(2).collect();
        let opts = ScatterOptions {
            hulls: a.hulls,
            labels: a.hulls,
            title: None,
            meta: meta.lines(),
        };
        emit_scatter_svg(&sol, &refs, &opts, svg)?;
    }
    Ok(())
}

fn cross_modal(a: CrossModalArgs) -> CliResult<()> {
    let audio_path = input(&a.audio)?;
    let table_path = input(&a.perf_table)?;
    let text_paths = a.text.iter().map(|p| input(p)).collect::<CliResult<Vec<_>>>()?;
    let mut all: Vec<&Path> = vec![&audio_path, &table_path];
    all.extend(text_paths.iter().map(PathBuf::as_path));
    let meta = command_meta(&(a.kmax, &a.baseline, a.weighting), &all)?
        .seed("tie", a.tie_seed)
        .seed("baseline", a.baseline.baseline_seed);
    let audio = load_set(&audio_path, "audio")?;
    let table = load_perf_table(&table_path)?;
    let texts = text_paths
        .iter()
        .zip(&a.text)
        .map(|(p, given)| load_set(p, &given.with_extension("").to_string_lossy()))
        .collect::<CliResult<Vec<_>>>()?;
    let w = match a.weighting {
        WeightingArg::Unique => TermWeighting::Unique,
        WeightingArg::Frequency => TermWeighting::Frequency,
    };
    let (curves, band) = recipes::cross_modal(
        &audio,
        &texts,
        &table,
        w,
        a.kmax,
        a.tie_seed,
        a.baseline.trials,
        a.baseline.baseline_seed,
    )?;
    let text = curve_table_csv(&curves, None, Some(&band), &meta.lines());
    write_atomic(&a.out, text.as_bytes())?;
    if let Some(svg) = &a.svg {
        write_atomic(svg, render_curve_svg(&curves, Some(&band), &meta.lines()).as_bytes())?;
    }
    Ok(())
}

fn context(a: ContextArgs) -> CliResult<()> {
    let (gt_path, plain_path, ctx_path) = (input(&a.gt)?, input(&a.plain)?, input(&a.context)?);
    let meta = command_meta(&a.kmax, &[&gt_path, &plain_path, &ctx_path])?.seed("tie", a.tie_seed);
    let gt = load_matrix(&gt_path, SimKind::GroundTruth)?;
    let name = plain_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let plain = load_set(&plain_path, &name)?.restrict_to(gt.vocab())?;
    let ctx = load_set(&ctx_path, &format!("{name}-context"))?.restrict_to(gt.vocab())?;
    let ratio = recipes::context_ratio(&gt, &plain, &ctx, a.kmax, a.tie_seed)?;
    let ratios = std::slice::from_ref(&ratio);
    write_atomic(&a.out, ratio_table_csv(ratios, &meta.lines()).as_bytes())?;
    if let Some(svg) = &a.svg {
        write_atomic(svg, render_ratio_svg(ratios, &meta.lines()).as_bytes())?;
    }
    Ok(())
}

fn report_all(a: ReportAllArgs) -> CliResult<()> {
    let overrides = Overrides {
        data_dir: a.data_dir,
        out_dir: a.out_dir,
        k_max: a.kmax,
        tie_seed: a.tie_seed,
        trials: a.trials,
        baseline_seed: a.baseline_seed,
    };
    let cfg = ExperimentConfig::load(&a.config, &overrides)?;
    let written = recipes::run_all(&cfg)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
