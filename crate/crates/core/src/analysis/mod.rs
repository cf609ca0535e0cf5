//! How well concreteness predicts retrieval difficulty.
//!
//! Per-concept retrievability is the affinity-weighted hit rate of the test
//! instances associated with the concept. It is then correlated against
//! concreteness (and, as a baseline, against concept frequency), and against
//! arbitrary external per-concept scores such as human judgments.

mod affinity;
mod stats;

use std::collections::HashMap;
use std::io::{Read, Write};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::RetrievalResult;
use crate::concreteness::ConcretenessScore;
use crate::error::{Error, Result};

pub use affinity::AffinityMatrix;
pub use stats::{average_ranks, binned_curve, spearman, variance_explained, Bin, Correlation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievabilityRow {
    pub concept: String,
    pub retrievability: f64,
    /// `Σ_i s_ic` over the test instances.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievabilityReport {
    pub p: f64,
    pub rows: Vec<RetrievabilityRow>,
    /// Concepts without any affinity mass on the test set.
    pub omitted: Vec<String>,
}

impl RetrievabilityReport {
    pub fn get(&self, concept: &str) -> Option<&RetrievabilityRow> {
        self.rows.iter().find(|r| r.concept == concept)
    }
}

/// `Σ_i s_ic · 𝕀[r_i ≤ p] / Σ_i s_ic` for every concept with positive mass.
/// Affinity rows are matched to the result's instances by id.
pub fn retrievability(result: &RetrievalResult, affinity: &AffinityMatrix, p: f64) -> Result<RetrievabilityReport> {
    result.instance_hit_rate(p)?;
    let aff = affinity.aligned_to(&result.instance_ids)?;
    let hits = result.hits(p);
    let per_concept: Vec<(f64, f64)> = (0..aff.concepts().len())
        .into_par_iter()
        .map(|c| {
            let mass = aff.column_mass(c);
            let hit: f64 = (0..aff.n_instances()).filter(|&i| hits[i]).map(|i| aff.get(i, c)).sum();
            (mass, hit)
        })
        .collect();
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for (concept, (mass, hit)) in aff.concepts().iter().zip(per_concept) {
        if mass > 0.0 {
            rows.push(RetrievabilityRow {
                concept: concept.clone(),
                retrievability: (hit / mass).clamp(0.0, 1.0),
                mass,
            });
        } else {
            omitted.push(concept.clone());
        }
    }
    if !omitted.is_empty() {
        warn!("{} concepts have zero affinity mass on the test set and were omitted", omitted.len());
    }
    Ok(RetrievabilityReport { p, rows, omitted })
}

/// Reads a `concept,score` CSV.
pub fn read_external_scores<R: Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format("external scores", e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["concept", "score"] {
        return Err(Error::format("external scores", "expected header concept,score"));
    }
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec.map_err(|e| Error::format("external scores", e.to_string()))?;
            let score: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::format("external scores", format!("row {row}: bad score {:?}", &rec[1])))?;
            Ok((rec[0].to_string(), score))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalCorrelation {
    pub rho: f64,
    pub p_value: f64,
    pub n_overlap: usize,
}

/// Spearman correlation between concreteness and external scores over the
/// concepts present in both.
pub fn correlate_external(scores: &[ConcretenessScore], external: &[(String, f64)]) -> Result<ExternalCorrelation> {
    let ext: HashMap<&str, f64> = external.iter().map(|(c, s)| (c.as_str(), *s)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = scores
        .iter()
        .filter_map(|s| ext.get(s.concept.as_str()).map(|&e| (s.score, e)))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InsufficientOverlap { overlap: x.len() });
    }
    let c = spearman(&x, &y)?;
    Ok(ExternalCorrelation {
        rho: c.rho,
        p_value: c.p_value,
        n_overlap: c.n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedConcept {
    pub concept: String,
    pub concreteness: f64,
    pub frequency: f64,
    pub retrievability: f64,
    pub mass: f64,
}

/// Concepts present in both reports, in the order of `scores`.
pub fn join_concepts(scores: &[ConcretenessScore], retr: &RetrievabilityReport) -> Vec<JoinedConcept> {
    let by_name: HashMap<&str, &RetrievabilityRow> = retr.rows.iter().map(|r| (r.concept.as_str(), r)).collect();
    scores
        .iter()
        .filter_map(|s| {
            by_name.get(s.concept.as_str()).map(|r| JoinedConcept {
                concept: s.concept.clone(),
                concreteness: s.score,
                frequency: s.frequency,
                retrievability: r.retrievability,
                mass: r.mass,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub p: f64,
    pub bins: usize,
    /// Regress on `ln(1 + x)` instead of `x`.
    pub log_x: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            p: 1.0,
            bins: 10,
            log_x: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub rho: f64,
    pub p_value: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub n_concepts: usize,
    pub concreteness: PredictorSummary,
    /// `None` when every concept has the same frequency.
    pub frequency: Option<PredictorSummary>,
}

fn summarize(x: &[f64], y: &[f64], log_x: bool) -> Result<PredictorSummary> {
    let c = spearman(x, y)?;
    Ok(PredictorSummary {
        rho: c.rho,
        p_value: c.p_value,
        r_squared: variance_explained(x, y, log_x)?,
    })
}

/// Correlation and variance-explained of concreteness and of frequency
/// against retrievability, plus the binned concreteness curve.
pub fn analyze(joined: &[JoinedConcept], config: &AnalysisConfig) -> Result<(AnalysisSummary, Vec<Bin>)> {
    let conc: Vec<f64> = joined.iter().map(|j| j.concreteness).collect();
    let freq: Vec<f64> = joined.iter().map(|j| j.frequency).collect();
    let retr: Vec<f64> = joined.iter().map(|j| j.retrievability).collect();
    let concreteness = summarize(&conc, &retr, config.log_x)?;
    let frequency = match summarize(&freq, &retr, config.log_x) {
        Ok(s) => Some(s),
        Err(Error::ConstantInput(what)) => {
            warn!("frequency baseline skipped: input is constant, {what} is undefined");
            None
        }
        Err(e) => return Err(e),
    };
    let bins = binned_curve(&conc, &retr, config.bins)?;
    Ok((
        AnalysisSummary {
            n_concepts: joined.len(),
            concreteness,
            frequency,
        },
        bins,
    ))
}

/// Writes `rows` as CSV preceded by a `# config: <json>` comment line.
pub fn write_csv_with_config<W: Write, C: Serialize, S: Serialize>(mut writer: W, config: &C, rows: &[S]) -> Result<()> {
    let echo = serde_json::to_string(config).map_err(|e| Error::format("config echo", e.to_string()))?;
    writeln!(writer, "# config: {echo}")?;
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row).map_err(|e| Error::format("csv output", e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `{"config": ..., "rows": ...}` as pretty JSON.
pub fn write_json_with_config<W: Write, C: Serialize, S: Serialize>(mut writer: W, config: &C, rows: &S) -> Result<()> {
    let doc = serde_json::json!({ "config": config, "rows": rows });
    serde_json::to_writer_pretty(&mut writer, &doc).map_err(|e| Error::format("json output", e.to_string()))?;
    writeln!(writer)?;
    Ok(())
}
