use anyhow::{Context, Result};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use viscon::alignment::{
    cross_validate, evaluate_retrieval, fit_model, group_kfold, AlgoConfig, AlignmentModel, LsConfig, NpConfig,
    NsConfig, PairedBundle, RetrievalResult, DEFAULT_P_VALUES,
};
use viscon::dataset::{load_features, Split};
use viscon::{FeatureFormat, FeatureMatrix};

use crate::args::{Algo, AlignArgs, EvalArgs, GlobalArgs, OutputFormat, PairArgs};
use crate::output::{read_group_column, write_atomic, write_json, write_run_json, write_with, SplitFile};

fn load_pair(pair: &PairArgs) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let images = load_features(&pair.images, FeatureFormat::from_path(&pair.images))?;
    let texts = load_features(&pair.texts, FeatureFormat::from_path(&pair.texts))?;
    Ok((images, texts))
}

fn algo_config(args: &AlignArgs, seed: u64) -> AlgoConfig {
    match args.algo {
        Algo::Np => AlgoConfig::Np(NpConfig {
            neighbors: args.neighbors as usize,
        }),
        Algo::Ls => AlgoConfig::Ls(LsConfig {
            lambdas: args.lambdas.clone(),
            directions: args.map_direction.list(),
            preprocess: args.preprocess,
            seed,
            ..LsConfig::default()
        }),
        Algo::Ns => AlgoConfig::Ns(NsConfig {
            shared_dim: args.shared_dim as usize,
            alpha: args.alpha,
            epochs: args.epochs as usize,
            batch: args.batch as usize,
            lr: args.lr,
            seed,
            patience: args.patience as usize,
            preprocess: args.preprocess,
            ..NsConfig::default()
        }),
    }
}

#[derive(Serialize)]
struct RecallRow {
    fold: String,
    p: f64,
    recall: f64,
}

fn write_eval(global: &GlobalArgs, result: &RetrievalResult, recall: &[RecallRow]) -> Result<()> {
    match global.format {
        OutputFormat::Csv => write_with(&global.out_dir.join("eval.csv"), |w| result.write_csv(w))?,
        OutputFormat::Json => write_json(&global.out_dir.join("eval.json"), result)?,
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in recall {
        wtr.serialize(row)?;
    }
    match global.format {
        OutputFormat::Csv => write_atomic(&global.out_dir.join("recall.csv"), &wtr.into_inner()?)?,
        OutputFormat::Json => write_json(&global.out_dir.join("recall.json"), &recall)?,
    }
    Ok(())
}

/// Random (or grouped) holdout split of `n` rows.
fn holdout_split(n: usize, test_fraction: f64, groups: Option<&[String]>, seed: u64) -> Result<Split> {
    if let Some(groups) = groups {
        let folds = (1.0 / test_fraction).round().max(2.0) as usize;
        return Ok(group_kfold(groups, folds, seed)?.swap_remove(0));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Split::new(train, test, n)?)
}

pub fn align(args: &AlignArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let (images, texts) = load_pair(&args.pair)?;
    let ids = images.ids().to_vec();
    let mut bundle = PairedBundle::new(images, texts)?;
    if let (Some(path), Some(column)) = (&args.groups, &args.group_by) {
        bundle = bundle.with_groups(read_group_column(path, column, &ids)?)?;
    }
    let algo = algo_config(args, global.seed);
    let grouped = bundle.groups.is_some();

    if let Some(folds) = args.folds {
        let report = cross_validate(&bundle, &algo, folds as usize, grouped, global.seed, &DEFAULT_P_VALUES)?;
        let mut recall = Vec::new();
        for f in &report.folds {
            for &(p, r) in &f.recall {
                recall.push(RecallRow {
                    fold: f.fold.to_string(),
                    p,
                    recall: r,
                });
            }
        }
        for &(p, r) in &report.mean_recall {
            recall.push(RecallRow {
                fold: "mean".into(),
                p,
                recall: r,
            });
            info!("mean R@{p}% = {r:.2}");
        }
        write_eval(global, &report.pooled(), &recall)?;
        write_run_json(
            &global.out_dir,
            echo,
            &serde_json::json!({ "algo": algo, "folds": folds, "grouped": grouped, "cv": report }),
        )?;
        return Ok(());
    }

    let split = match &args.split {
        Some(path) => SplitFile::read(path)?.to_split(&ids)?,
        None => holdout_split(bundle.n(), args.test_fraction, bundle.groups.as_deref(), global.seed)?,
    };
    let audit = bundle
        .groups
        .as_ref()
        .map(|g| viscon::alignment::audit_groups(std::slice::from_ref(&split), g));
    let model = fit_model(&bundle.images_at(split.train()), &bundle.texts_at(split.train()), &algo)?;
    let result = evaluate_retrieval(&model, &bundle.images_at(split.test()), &bundle.texts_at(split.test()))?;
    let recall: Vec<RecallRow> = result
        .summary(&DEFAULT_P_VALUES)?
        .into_iter()
        .map(|(p, recall)| RecallRow {
            fold: "test".into(),
            p,
            recall,
        })
        .collect();
    recall.iter().for_each(|r| info!("R@{}% = {:.2}", r.p, r.recall));
    let model_path = args.output.clone().unwrap_or_else(|| global.out_dir.join("model.vcaln"));
    write_atomic(&model_path, &model.to_bytes()?)?;
    write_json(&global.out_dir.join("split.json"), &SplitFile::from_split(&split, &ids))?;
    write_eval(global, &result, &recall)?;
    write_run_json(
        &global.out_dir,
        echo,
        &serde_json::json!({
            "algo": algo,
            "model": model_path,
            "train_size": split.train().len(),
            "test_size": split.test().len(),
            "audit": audit,
        }),
    )?;
    Ok(())
}

pub fn eval(args: &EvalArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let model = AlignmentModel::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let (images, texts) = load_pair(&args.pair)?;
    let bundle = PairedBundle::new(images, texts)?;
    let rows: Vec<usize> = match &args.split {
        Some(path) => SplitFile::read(path)?.to_split(bundle.images.ids())?.test().to_vec(),
        None => (0..bundle.n()).collect(),
    };
    let result = evaluate_retrieval(&model, &bundle.images_at(&rows), &bundle.texts_at(&rows))?;
    let recall: Vec<RecallRow> = result
        .summary(&DEFAULT_P_VALUES)?
        .into_iter()
        .map(|(p, recall)| RecallRow {
            fold: "test".into(),
            p,
            recall,
        })
        .collect();
    write_eval(global, &result, &recall)?;
    write_run_json(&global.out_dir, echo, &serde_json::json!({ "model_kind": model.kind(), "rows": rows.len() }))?;
    Ok(())
}
