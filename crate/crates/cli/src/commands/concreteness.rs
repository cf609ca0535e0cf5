use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use viscon::analysis::{spearman, write_csv_with_config, write_json_with_config};
use viscon::concreteness::{
    concreteness_continuous, concreteness_discrete, CiConfig, ConceptKind, ConcretenessReport, ReportConfig,
};
use viscon::dataset::{load_concepts, load_features, load_topics};
use viscon::{FeatureMatrix, Index, KnnConfig, NeighborLists};

use crate::args::{CiArgs, GlobalArgs, IndexArgs, KnnArgs, NeighborSource, OutputFormat, ReportArgs, ScoreArgs, TopicsScoreArgs};
use crate::output::{write_atomic, write_json, write_run_json, write_with};

const DEFAULT_K: usize = 50;

fn knn_config(args: &KnnArgs, seed: u64, k: usize) -> KnnConfig {
    KnnConfig {
        k,
        metric: args.metric,
        mode: args.mode,
        num_trees: args.trees as usize,
        search_budget: args.budget as usize,
        seed,
        include_self: args.include_self,
        refine_rounds: args.refine_rounds as usize,
    }
}

/// Loads or builds the index and computes neighbor lists of size `k`
/// (the index's own `k` when `k` is `None`).
fn neighbors(src: &NeighborSource, global: &GlobalArgs, k: Option<usize>) -> Result<(FeatureMatrix, NeighborLists, KnnConfig)> {
    let requested = k.or(src.knn.k.map(|k| k as usize));
    if let Some(path) = &src.index {
        let index = Index::load(path).with_context(|| format!("loading index {}", path.display()))?;
        let mut cfg = index.config().clone();
        let lists = match requested {
            Some(k) if k != cfg.k => {
                cfg.k = k;
                index.all_neighbors_k(k)?
            }
            _ => index.all_neighbors(),
        };
        return Ok((index.features().clone(), lists, cfg));
    }
    let path = src.features.as_ref().context("either --index or --features is required")?;
    let format = src.features_format.unwrap_or_else(|| viscon::FeatureFormat::from_path(path));
    let features = load_features(path, format)?;
    let cfg = knn_config(&src.knn, global.seed, requested.unwrap_or(DEFAULT_K));
    let index = Index::build(features, cfg.clone())?;
    let lists = index.all_neighbors();
    Ok((index.features().clone(), lists, cfg))
}

fn ci_config(args: &CiArgs, seed: u64) -> Result<CiConfig> {
    let cfg = CiConfig {
        method: args.ci,
        level: args.level,
        resamples: args.resamples,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(global: &GlobalArgs, stem: &str, report: &ConcretenessReport) -> Result<std::path::PathBuf> {
    let path = global.out_dir.join(format!("{stem}.{}", global.format.ext()));
    match global.format {
        OutputFormat::Csv => write_with(&path, |w| report.write_csv(w))?,
        OutputFormat::Json => write_with(&path, |w| report.write_json(w))?,
    }
    Ok(path)
}

#[derive(Serialize)]
struct IndexStats {
    n: usize,
    dim: usize,
    num_trees: usize,
    build_seconds: f64,
}

pub fn index(args: &IndexArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let features = load_features(&args.source.features, args.source.format())?;
    let cfg = knn_config(&args.knn, global.seed, args.knn.k.map_or(DEFAULT_K, |k| k as usize));
    let start = Instant::now();
    let index = Index::build(features, cfg.clone())?;
    let build_seconds = start.elapsed().as_secs_f64();
    let output = args.output.clone().unwrap_or_else(|| global.out_dir.join("index.vcann"));
    write_atomic(&output, &index.to_bytes()?)?;
    let stats = IndexStats {
        n: index.n(),
        dim: index.dim(),
        num_trees: index.forest().map_or(0, |f| f.roots().len()),
        build_seconds,
    };
    let mut stats_path = output.clone().into_os_string();
    stats_path.push(".stats.json");
    write_json(std::path::Path::new(&stats_path), &stats)?;
    write_run_json(&global.out_dir, echo, &serde_json::json!({ "knn": cfg, "output": output }))?;
    info!("indexed {} rows in {build_seconds:.2}s -> {}", stats.n, output.display());
    Ok(())
}

pub fn score(args: &ScoreArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let ci = ci_config(&args.ci, global.seed)?;
    let (features, lists, knn) = neighbors(&args.neighbors, global, None)?;
    let concepts = load_concepts(&args.concepts, &features, args.min_support)?;
    let config = ReportConfig {
        kind: ConceptKind::Discrete,
        k: knn.k,
        metric: knn.metric,
        mode: knn.mode,
        min_support: Some(args.min_support),
        seed: global.seed,
        ci,
    };
    let report = concreteness_discrete(&lists, &concepts, &ci, config)?;
    let path = write_report(global, "concreteness", &report)?;
    write_run_json(&global.out_dir, echo, &serde_json::json!({ "knn": knn, "ci": ci, "output": path }))?;
    info!("scored {} words -> {}", report.scores.len(), path.display());
    Ok(())
}

pub fn topics_score(args: &TopicsScoreArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let ci = ci_config(&args.ci, global.seed)?;
    let (features, lists, knn) = neighbors(&args.neighbors, global, None)?;
    let topics = load_topics(&args.topics, &features)?;
    let config = ReportConfig {
        kind: ConceptKind::Continuous,
        k: knn.k,
        metric: knn.metric,
        mode: knn.mode,
        min_support: None,
        seed: global.seed,
        ci,
    };
    let report = concreteness_continuous(&lists, &topics, &ci, config)?;
    let path = write_report(global, "topic_concreteness", &report)?;
    write_run_json(&global.out_dir, echo, &serde_json::json!({ "knn": knn, "ci": ci, "output": path }))?;
    info!("scored {} topics -> {}", report.scores.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct StabilityRow {
    k_a: usize,
    k_b: usize,
    rho: f64,
    p_value: f64,
    n: usize,
}

pub fn report(args: &ReportArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let mut ks = args.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 2 || ks[0] == 0 {
        bail!("--ks needs at least two distinct positive values");
    }
    let kmax = *ks.last().unwrap();
    let (features, lists, knn) = neighbors(&args.neighbors, global, Some(kmax))?;
    let concepts = load_concepts(&args.concepts, &features, args.min_support)?;
    let ci = CiConfig::default();
    let per_k: Vec<Vec<f64>> = ks
        .iter()
        .map(|&k| {
            let truncated = lists.truncate(k)?;
            Ok(viscon::concreteness::score_discrete(&truncated, &concepts, &ci)?
                .into_iter()
                .map(|s| s.score)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for a in 0..ks.len() {
        for b in a + 1..ks.len() {
            let c = spearman(&per_k[a], &per_k[b])?;
            rows.push(StabilityRow {
                k_a: ks[a],
                k_b: ks[b],
                rho: c.rho,
                p_value: c.p_value,
                n: c.n,
            });
        }
    }
    let effective = serde_json::json!({ "knn": knn, "ks": ks, "min_support": args.min_support });
    let stab = global.out_dir.join(format!("stability.{}", global.format.ext()));
    match global.format {
        OutputFormat::Csv => write_with(&stab, |w| write_csv_with_config(w, &effective, &rows))?,
        OutputFormat::Json => write_with(&stab, |w| write_json_with_config(w, &effective, &rows))?,
    }

    // Wide table: one row per word, one score column per k.
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("concept".to_string()).chain(ks.iter().map(|k| format!("k{k}"))).collect();
    wtr.write_record(&header)?;
    for (w, word) in concepts.vocab().iter().enumerate() {
        let row: Vec<String> = std::iter::once(word.clone()).chain(per_k.iter().map(|s| s[w].to_string())).collect();
        wtr.write_record(&row)?;
    }
    write_atomic(&global.out_dir.join("scores_by_k.csv"), &wtr.into_inner()?)?;
    write_run_json(&global.out_dir, echo, &effective)?;
    for r in &rows {
        info!("k={} vs k={}: spearman {:.3}", r.k_a, r.k_b, r.rho);
    }
    Ok(())
}
