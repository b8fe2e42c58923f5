//! Synthetic fixture shaped like the real annotation data: 150 terms sorted
//! into 25 and 19 piles, 45 described performances, term embeddings for a
//! few models of decreasing quality (plus context variants), and audio
//! embeddings of the performances. Everything derives from one seed.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use simaudit::corpus::{save_embeddings, save_perf_table, save_piles, EmbeddingFormat, EmbeddingSet, PerfTermTable, PileSorting};
use simaudit::fsutil::write_atomic;

use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub terms: usize,
    pub piles: [usize; 2],
    pub performances: usize,
    pub latent_dim: usize,
    pub moods: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            terms: 150,
            piles: [25, 19],
            performances: 45,
            latent_dim: 8,
            moods: 6,
            seed: 42,
        }
    }
}

struct Model {
    name: &'static str,
    dim: usize,
    noise: f64,
    /// Weight of a direction shared by every vector; large values crowd
    /// the space and produce hubs.
    shared: f64,
}

const MODELS: [Model; 4] = [
    Model { name: "alpha", dim: 96, noise: 0.35, shared: 0.0 },
    Model { name: "beta", dim: 64, noise: 0.7, shared: 0.5 },
    Model { name: "gamma", dim: 64, noise: 0.9, shared: 2.0 },
    Model { name: "delta", dim: 48, noise: 4.0, shared: 0.0 },
];

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| gauss(rng)).collect()
}

fn project(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    basis
        .iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn chunk_piles(order: &[usize], count: usize, labels: &[String], prefix: &str) -> Vec<(String, Vec<String>)> {
    let n = order.len();
    (0..count)
        .map(|p| {
            let lo = p * n / count;
            let hi = (p + 1) * n / count;
            let members = order[lo..hi].iter().map(|&i| labels[i].clone()).collect();
            (format!("{prefix}{:02}", p + 1), members)
        })
        .collect()
}

/// Writes the fixture and an `audit.toml` under `dir`; returns the config path.
pub fn generate(dir: &Path, params: &SynthSpec) -> CliResult<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.terms;
    let labels: Vec<String> = (0..n).map(|i| format!("term{:03}", i + 1)).collect();

    let centers: Vec<Vec<f64>> = (0..params.moods)
        .map(|_| gauss_vec(&mut rng, params.latent_dim).iter().map(|x| 2.0 * x).collect())
        .collect();
    let mood: Vec<usize> = (0..n).map(|i| i % params.moods).collect();
    let latent: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            centers[mood[i]]
                .iter()
                .map(|c| c + 0.8 * gauss(&mut rng))
                .collect()
        })
        .collect();

    // the two groups sort along different latent directions within moods
    let sorted_by = |axis: usize| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| mood[a].cmp(&mood[b]).then(latent[a][axis].total_cmp(&latent[b][axis])));
        order
    };
    let p1 = PileSorting::new("P1", chunk_piles(&sorted_by(0), params.piles[0], &labels, "p1-"))?;
    let p2 = PileSorting::new("P2", chunk_piles(&sorted_by(1), params.piles[1], &labels, "p2-"))?;

    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut perf_latent = Vec::new();
    for p in 0..params.performances {
        let id = format!("perf{:02}", p + 1);
        let m = rng.random_range(0..params.moods);
        let center: Vec<f64> = centers[m].iter().map(|c| c + 0.5 * gauss(&mut rng)).collect();
        let mut near: Vec<(f64, usize)> = latent
            .iter()
            .enumerate()
            .map(|(i, v)| (v.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum(), i))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let picks = rng.random_range(6..14);
        let mut chosen: Vec<usize> = near[..picks * 2].iter().map(|&(_, i)| i).collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(picks);
        for &t in &chosen {
            let reps = rng.random_range(1..4);
            for _ in 0..reps {
                pairs.push((id.clone(), labels[t].clone()));
            }
        }
        perf_latent.push((id, center));
    }
    // every term appears at least once so the three sources share a vocabulary
    for (i, l) in labels.iter().enumerate() {
        if !pairs.iter().any(|(_, t)| t == l) {
            pairs.push((format!("perf{:02}", i % params.performances + 1), l.clone()));
        }
    }
    let table = PerfTermTable::new(pairs);

    write_atomic(&dir.join("terms.txt"), (labels.join("\n") + "\n").as_bytes())?;
    save_piles(&p1, &dir.join("piles_p1.json"))?;
    save_piles(&p2, &dir.join("piles_p2.json"))?;
    save_perf_table(&table, &dir.join("perf_terms.csv"))?;

    let context_shift = gauss_vec(&mut rng, params.latent_dim);
    for model in &MODELS {
        let basis: Vec<Vec<f64>> = (0..model.dim).map(|_| gauss_vec(&mut rng, params.latent_dim)).collect();
        let shared = gauss_vec(&mut rng, model.dim);
        let embed = |rng: &mut ChaCha8Rng, x: &[f64]| -> Vec<f64> {
            project(&basis, x)
                .into_iter()
                .zip(&shared)
                .map(|(v, s)| v + model.noise * 3.0 * gauss(rng) + model.shared * 3.0 * s)
                .collect()
        };
        let plain: Vec<Vec<f64>> = latent.iter().map(|x| embed(&mut rng, x)).collect();
        let ctx: Vec<Vec<f64>> = latent
            .iter()
            .map(|x| {
                let shifted: Vec<f64> = x.iter().zip(&context_shift).map(|(a, b)| a + 0.3 * b).collect();
                embed(&mut rng, &shifted)
            })
            .collect();
        let set = EmbeddingSet::new(&labels, plain, model.name)?;
        save_embeddings(&set, &dir.join(format!("models/{}.jsonl", model.name)), EmbeddingFormat::Jsonl)?;
        let set = EmbeddingSet::new(&labels, ctx, format!("{}-context", model.name))?;
        save_embeddings(&set, &dir.join(format!("context/{}.jsonl", model.name)), EmbeddingFormat::Jsonl)?;
    }

    let audio_basis: Vec<Vec<f64>> = (0..48).map(|_| gauss_vec(&mut rng, params.latent_dim)).collect();
    let (ids, vectors): (Vec<String>, Vec<Vec<f64>>) = perf_latent
        .iter()
        .map(|(id, c)| {
            let v = project(&audio_basis, c)
                .into_iter()
                .map(|x| x + 6.0 * gauss(&mut rng))
                .collect();
            (id.clone(), v)
        })
        .unzip();
    let audio = EmbeddingSet::new(&ids, vectors, "audio")?;
    save_embeddings(&audio, &dir.join("audio.jsonl"), EmbeddingFormat::Jsonl)?;

    let models: String = MODELS
        .iter()
        .map(|m| format!("{0} = \"models/{0}.jsonl\"\n", m.name))
        .collect();
    let context: String = MODELS
        .iter()
        .map(|m| format!("{0} = \"context/{0}.jsonl\"\n", m.name))
        .collect();
    let config = format!(
        r#"# synthetic fixture, seed {seed}
out_dir = "out"
k_max = 49
tie_seed = 7

[baseline]
trials = 2000
seed = 1

[ground_truth]
piles = ["piles_p1.json", "piles_p2.json"]
perf_table = "perf_terms.csv"
terms = "terms.txt"

[models]
{models}
[context]
{context}
[cross_modal]
audio = "audio.jsonl"
text = ["models/alpha.jsonl", "context/alpha.jsonl"]
"#,
        seed = params.seed
    );
    let path = dir.join("audit.toml");
    write_atomic(&path, config.as_bytes())?;
    Ok(path)
}
