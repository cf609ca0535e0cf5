use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use viscon::alignment::{read_retrieval_csv, RetrievalResult};
use viscon::analysis::{
    analyze as run_analysis, correlate_external, join_concepts, read_external_scores, retrievability,
    write_csv_with_config, write_json_with_config, AffinityMatrix, AnalysisConfig,
};
use viscon::concreteness::{read_report_csv, ConcretenessReport, ConcretenessScore};

use crate::args::{AnalyzeArgs, GlobalArgs, OutputFormat};
use crate::output::{write_run_json, write_with};

fn is_json(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some("json")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_scores(path: &Path) -> Result<Vec<ConcretenessScore>> {
    Ok(if is_json(path) {
        ConcretenessReport::read_json(open(path)?)?.scores
    } else {
        read_report_csv(open(path)?)?
    })
}

fn load_eval(path: &Path) -> Result<RetrievalResult> {
    Ok(if is_json(path) {
        serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))?
    } else {
        read_retrieval_csv(open(path)?)?
    })
}

fn emit<C: Serialize, R: Serialize>(global: &GlobalArgs, stem: &str, config: &C, rows: &[R]) -> Result<()> {
    let path = global.out_dir.join(format!("{stem}.{}", global.format.ext()));
    match global.format {
        OutputFormat::Csv => write_with(&path, |w| write_csv_with_config(w, config, rows)),
        OutputFormat::Json => write_with(&path, |w| write_json_with_config(w, config, &rows)),
    }
}

#[derive(Serialize)]
struct SummaryRow {
    predictor: &'static str,
    rho: f64,
    p_value: f64,
    r_squared: f64,
    n: usize,
}

#[derive(Serialize)]
struct ExternalRow {
    rho: f64,
    p_value: f64,
    n_overlap: usize,
}

pub fn analyze(args: &AnalyzeArgs, global: &GlobalArgs, echo: &impl Serialize) -> Result<()> {
    let scores = load_scores(&args.concreteness)?;
    let result = load_eval(&args.eval)?;
    let vocab: Vec<String> = scores.iter().map(|s| s.concept.clone()).collect();
    let affinity = AffinityMatrix::load(&args.affinity, Some(&vocab))
        .with_context(|| format!("loading --affinity {}", args.affinity.display()))?;
    let config = AnalysisConfig {
        p: args.p,
        bins: args.bins as usize,
        log_x: args.log_x,
    };
    let retr = retrievability(&result, &affinity, config.p)?;
    let joined = join_concepts(&scores, &retr);
    let (summary, bins) = run_analysis(&joined, &config)?;

    emit(global, "retrievability", &config, &joined)?;
    let mut rows = vec![SummaryRow {
        predictor: "concreteness",
        rho: summary.concreteness.rho,
        p_value: summary.concreteness.p_value,
        r_squared: summary.concreteness.r_squared,
        n: summary.n_concepts,
    }];
    if let Some(f) = summary.frequency {
        rows.push(SummaryRow {
            predictor: "frequency",
            rho: f.rho,
            p_value: f.p_value,
            r_squared: f.r_squared,
            n: summary.n_concepts,
        });
    }
    emit(global, "summary", &config, &rows)?;
    emit(global, "curve", &config, &bins)?;
    for r in &rows {
        info!("{}: spearman {:.3} (p = {:.2e}), R² = {:.3}", r.predictor, r.rho, r.p_value, r.r_squared);
    }

    let external = match &args.external {
        Some(path) => {
            let ext = read_external_scores(open(path)?)?;
            let c = correlate_external(&scores, &ext)?;
            let row = ExternalRow {
                rho: c.rho,
                p_value: c.p_value,
                n_overlap: c.n_overlap,
            };
            emit(global, "external", &config, std::slice::from_ref(&row))?;
            info!("external: spearman {:.3} over {} concepts", c.rho, c.n_overlap);
            Some(c)
        }
        None => None,
    };
    write_run_json(
        &global.out_dir,
        echo,
        &serde_json::json!({
            "analysis": config,
            "omitted_concepts": retr.omitted,
            "external": external,
        }),
    )?;
    Ok(())
}
