use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ci::{CiConfig, CiMethod};
use crate::error::{Error, Result};
use crate::knn::{Metric, SearchMode};

pub const REPORT_CSV_HEADER: [&str; 7] = [
    "concept",
    "score",
    "ci_low",
    "ci_high",
    "support",
    "frequency",
    "mni_mean",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcretenessScore {
    pub concept: String,
    pub score: f64,
    /// Mean mutual-neighbor count; discrete concepts only.
    pub mni_mean: Option<f64>,
    /// `|V_w|` for words, `Σ_v Y_vt` for topics.
    pub support: f64,
    pub frequency: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub ci_method: CiMethod,
}

impl ConcretenessScore {
    pub fn new(
        concept: String,
        score: f64,
        mni_mean: Option<f64>,
        support: f64,
        frequency: f64,
        interval: Option<(f64, f64)>,
        ci_method: CiMethod,
    ) -> Self {
        // Percentile intervals need not contain the point estimate; widen to it.
        let (ci_low, ci_high) = match interval {
            Some((lo, hi)) => (Some(lo.min(score)), Some(hi.max(score))),
            None => (None, None),
        };
        ConcretenessScore {
            concept,
            score,
            mni_mean,
            support,
            frequency,
            ci_low,
            ci_high,
            ci_method: if interval.is_some() { ci_method } else { CiMethod::None },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub kind: ConceptKind,
    pub k: usize,
    pub metric: Metric,
    pub mode: SearchMode,
    pub min_support: Option<usize>,
    pub seed: u64,
    pub ci: CiConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcretenessReport {
    pub config: ReportConfig,
    /// Descending by score, ties by concept label.
    pub scores: Vec<ConcretenessScore>,
}

impl ConcretenessReport {
    pub fn new(mut scores: Vec<ConcretenessScore>, config: ReportConfig) -> Self {
        scores.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.concept.cmp(&b.concept))
        });
        ConcretenessReport { config, scores }
    }

    pub fn get(&self, concept: &str) -> Option<&ConcretenessScore> {
        self.scores.iter().find(|s| s.concept == concept)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::format("report csv", e.to_string());
        wtr.write_record(REPORT_CSV_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.scores {
            wtr.write_record([
                s.concept.clone(),
                s.score.to_string(),
                opt(s.ci_low),
                opt(s.ci_high),
                s.support.to_string(),
                s.frequency.to_string(),
                opt(s.mni_mean),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)
            .map_err(|e| Error::format("report json", e.to_string()))?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        serde_json::from_reader(reader).map_err(|e| Error::format("report json", e.to_string()))
    }
}

/// Reads the score rows of a report CSV (the CSV carries no config echo).
pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ConcretenessScore>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format("report csv", e.to_string()))?
        .clone();
    if header.iter().ne(REPORT_CSV_HEADER) {
        return Err(Error::format("report csv", format!("unexpected header {header:?}")));
    }
    let num = |field: &str, row: usize| -> Result<Option<f64>> {
        if field.is_empty() {
            return Ok(None);
        }
        field
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::format("report csv", format!("row {row}: bad number {field:?}")))
    };
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("report csv", e.to_string()))?;
        let req = |i: usize| -> Result<f64> {
            num(&rec[i], row)?
                .ok_or_else(|| Error::format("report csv", format!("row {row}: missing {}", REPORT_CSV_HEADER[i])))
        };
        let ci_low = num(&rec[2], row)?;
        out.push(ConcretenessScore {
            concept: rec[0].to_string(),
            score: req(1)?,
            ci_low,
            ci_high: num(&rec[3], row)?,
            support: req(4)?,
            frequency: req(5)?,
            mni_mean: num(&rec[6], row)?,
            ci_method: if ci_low.is_some() { CiMethod::Bootstrap } else { CiMethod::None },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ReportConfig {
        ReportConfig {
            kind: ConceptKind::Discrete,
            k: 3,
            metric: Metric::Cosine,
            mode: SearchMode::Exact,
            min_support: Some(1),
            seed: 0,
            ci: CiConfig::default(),
        }
    }

    fn score(c: &str, s: f64) -> ConcretenessScore {
        ConcretenessScore::new(c.into(), s, Some(1.0), 2.0, 0.1, Some((s - 0.5, s + 0.5)), CiMethod::Normal)
    }

    #[test]
    fn sorted_descending_with_label_ties() {
        let r = ConcretenessReport::new(vec![score("b", 1.0), score("c", 2.0), score("a", 1.0)], config());
        let order: Vec<&str> = r.scores.iter().map(|s| s.concept.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn interval_is_widened_to_contain_score() {
        let s = ConcretenessScore::new("x".into(), 2.0, None, 1.0, 0.1, Some((2.1, 3.0)), CiMethod::Bootstrap);
        assert_eq!((s.ci_low, s.ci_high), (Some(2.0), Some(3.0)));
    }

    #[test]
    fn csv_and_json_emission() {
        let r = ConcretenessReport::new(vec![score("dog", 3.25), score("idea", 0.75)], config());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("concept,score,ci_low,ci_high,support,frequency,mni_mean\ndog,3.25,2.75,3.75,2,0.1,1\n"));
        let back = read_report_csv(buf.as_slice()).unwrap();
        assert_eq!(back[1].concept, "idea");
        assert_eq!(back[1].score, 0.75);

        let mut json = Vec::new();
        r.write_json(&mut json).unwrap();
        assert_eq!(ConcretenessReport::read_json(json.as_slice()).unwrap(), r);
    }
}
