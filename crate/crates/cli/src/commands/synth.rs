use anyhow::Result;
use log::info;
use serde::Serialize;
use viscon::dataset::Split;
use viscon::synth::{benchmark, linear_bundle, two_clusters, BenchmarkConfig, LinearBundleConfig};
use viscon::FeatureMatrix;

use crate::args::{GlobalArgs, SynthArgs, SynthKind};
use crate::output::{write_atomic, write_json, write_run_json, SplitFile};

fn write_features(global: &GlobalArgs, name: &str, f: &FeatureMatrix) -> Result<()> {
    write_atomic(&global.out_dir.join(name), &f.to_binary_bytes()?)
}

fn seeded_split(n: usize, test_fraction: f64, seed: u64) -> Result<Split> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (mut test, mut train) = (order[..n_test].to_vec(), order[n_test..].to_vec());
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split::new(train, test, n)?)
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    Ok(wtr.into_inner()?)
}

#[derive(Serialize)]
struct MetaRow<'a> {
    id: &'a str,
    book: &'a str,
    groundedness: f64,
}

#[derive(Serialize)]
struct PurityRow<'a> {
    concept: &'a str,
    score: f64,
}

pub fn synth(args: &SynthArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let effective = match args.kind {
        SynthKind::Benchmark => {
            let d = BenchmarkConfig::default();
            let cfg = BenchmarkConfig {
                n: args.n.unwrap_or(d.n),
                image_dim: args.image_dim.unwrap_or(d.image_dim),
                text_dim: args.text_dim.unwrap_or(d.text_dim),
                words: args.words.unwrap_or(d.words),
                clusters: args.clusters.unwrap_or(d.clusters),
                text_noise: args.noise.unwrap_or(d.text_noise),
                seed: global.seed,
                ..d
            };
            let b = benchmark(&cfg)?;
            let ids = b.images.ids().to_vec();
            write_features(global, "images.vcf", &b.images)?;
            write_features(global, "texts.vcf", &b.texts)?;
            write_atomic(&global.out_dir.join("concepts.jsonl"), &jsonl(&b.records)?)?;
            // Token proportions double as a soft topic matrix.
            let aff = viscon::analysis::AffinityMatrix::from_tokens(&b.records, &b.vocab)?;
            let mut topics = Vec::with_capacity(ids.len());
            for i in 0..ids.len() {
                topics.extend_from_slice(aff.row(i));
            }
            let topics = viscon::TopicMatrix::new(b.vocab.clone(), ids.len(), topics)?;
            let mut buf = Vec::new();
            topics.write_csv(&ids, &mut buf)?;
            write_atomic(&global.out_dir.join("topics.csv"), &buf)?;
            let meta: Vec<MetaRow> = (0..ids.len())
                .map(|i| MetaRow {
                    id: &ids[i],
                    book: &b.groups[i],
                    groundedness: b.groundedness[i],
                })
                .collect();
            write_atomic(&global.out_dir.join("metadata.csv"), &csv_bytes(&meta)?)?;
            let purity: Vec<PurityRow> = b
                .vocab
                .iter()
                .zip(&b.purity)
                .map(|(w, &p)| PurityRow { concept: w, score: p })
                .collect();
            write_atomic(&global.out_dir.join("purity.csv"), &csv_bytes(&purity)?)?;
            let split = seeded_split(ids.len(), args.test_fraction, global.seed)?;
            write_json(&global.out_dir.join("split.json"), &SplitFile::from_split(&split, &ids))?;
            serde_json::to_value(&cfg)?
        }
        SynthKind::Linear => {
            let d = LinearBundleConfig::default();
            let cfg = LinearBundleConfig {
                n: args.n.unwrap_or(d.n),
                latent_dim: args.latent_dim.unwrap_or(d.latent_dim),
                image_dim: args.image_dim.unwrap_or(d.image_dim),
                text_dim: args.text_dim.unwrap_or(d.text_dim),
                noise: args.noise.unwrap_or(d.noise),
                seed: global.seed,
            };
            let (images, texts) = linear_bundle(&cfg)?;
            write_features(global, "images.vcf", &images)?;
            write_features(global, "texts.vcf", &texts)?;
            let split = seeded_split(images.n(), args.test_fraction, global.seed)?;
            write_json(&global.out_dir.join("split.json"), &SplitFile::from_split(&split, images.ids()))?;
            serde_json::to_value(&cfg)?
        }
        SynthKind::TwoClusters => {
            let n = args.n.unwrap_or(2000);
            let dim = args.image_dim.unwrap_or(16);
            let support = args.support.unwrap_or(200);
            let f = two_clusters(n, dim, support, global.seed)?;
            write_features(global, "images.vcf", &f.features)?;
            let records: Vec<viscon::dataset::TokenRecord> = (0..n)
                .map(|v| viscon::dataset::TokenRecord {
                    image: f.features.ids()[v].clone(),
                    tokens: f.concepts.inverse(v).iter().map(|&w| f.concepts.vocab()[w as usize].clone()).collect(),
                })
                .collect();
            write_atomic(&global.out_dir.join("concepts.jsonl"), &jsonl(&records)?)?;
            serde_json::json!({ "n": n, "dim": dim, "support": support, "seed": global.seed })
        }
    };
    write_run_json(&global.out_dir, echo, &effective)?;
    info!("wrote synthetic {:?} dataset to {}", args.kind, global.out_dir.display());
    Ok(())
}
