use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::illumination::RatioLadder;

use super::ablation::AblationTable;
use super::features::CosineTable;
use super::metrics::{score_counting, score_multichoice, ChoicePair};
use super::parse::{parse_choice_answer, parse_count_answer};
use super::qa::{index_responses, ModelResponse, TaskKind, TripletSample};

/// Provenance echoed into every report. Wall-clock time is deliberately
/// absent so equal runs write equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    /// Hex SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub brightness_model: String,
    pub f1_averaging: String,
    pub ratio_averaging: String,
    pub config: serde_json::Value,
}

impl Default for ReportMeta {
    fn default() -> Self {
        ReportMeta {
            config_hash: config_hash(&serde_json::Value::Null),
            seeds: BTreeMap::new(),
            brightness_model: "linear".into(),
            f1_averaging: "micro".into(),
            ratio_averaging: "unweighted".into(),
            config: serde_json::Value::Null,
        }
    }
}

impl ReportMeta {
    pub fn new(config: &impl Serialize, seeds: BTreeMap<String, u64>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(ReportMeta {
            config_hash: config_hash(&config),
            seeds,
            config,
            ..ReportMeta::default()
        })
    }
}

/// Hex SHA-256 of a value's compact JSON (object keys sorted).
pub fn config_hash(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Scores for one ratio, or their unweighted mean across ratios. Metrics for
/// a task with no questions are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub mc_accuracy: Option<f64>,
    pub mc_micro_f1: Option<f64>,
    pub cnt_accuracy: Option<f64>,
    pub cnt_mae: Option<f64>,
    pub n_items: usize,
    /// Fraction of answers whose text yielded nothing parseable.
    pub unparsed_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioRow {
    pub ratio: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub rows: Vec<RatioRow>,
    /// Unweighted mean of the ratio rows; `n_items` is their total.
    pub average: Metrics,
}

/// Parses and scores every answer. Each ladder ratio gets one row; a question
/// without a response at some ratio counts as unparsed and wrong.
pub fn score_responses(
    samples: &[TripletSample],
    responses: &[ModelResponse],
    ladder: &RatioLadder,
) -> Result<EvalReport> {
    let index = index_responses(responses)?;
    let known: std::collections::HashSet<(&str, &str)> = samples
        .iter()
        .flat_map(|s| s.qa.iter().map(move |q| (s.id.as_str(), q.id.as_str())))
        .collect();
    if let Some(r) = responses.iter().find(|r| !known.contains(&(r.sample_id.as_str(), r.qa_id.as_str()))) {
        return Err(Error::format(format!(
            "response for unknown question: sample {} question {}",
            r.sample_id, r.qa_id
        )));
    }

    let mut ordered: Vec<&TripletSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut rows = Vec::with_capacity(ladder.len());
    for &ratio in ladder.ratios() {
        let mut choice = Vec::new();
        let mut counts = Vec::new();
        let mut unparsed = 0usize;
        for s in &ordered {
            for q in &s.qa {
                let text = index
                    .get(&(s.id.clone(), q.id.clone(), ratio.to_bits()))
                    .copied()
                    .unwrap_or("");
                match q.task {
                    TaskKind::MultiChoice => {
                        let letters = q.letters();
                        let p = parse_choice_answer(text, &letters);
                        unparsed += usize::from(!p.parsed_ok);
                        choice.push(ChoicePair {
                            pred: p.letters,
                            gt: q.gt_set.clone().unwrap_or_default(),
                            n_options: letters.len(),
                        });
                    }
                    TaskKind::Counting => {
                        let p = parse_count_answer(text);
                        unparsed += usize::from(!p.parsed_ok);
                        counts.push((p.value, q.gt_count.unwrap_or(0)));
                    }
                }
            }
        }
        let mc = if choice.is_empty() { None } else { Some(score_multichoice(&choice)?) };
        let cnt = if counts.is_empty() { None } else { Some(score_counting(&counts)?) };
        let n = choice.len() + counts.len();
        rows.push(RatioRow {
            ratio,
            metrics: Metrics {
                mc_accuracy: mc.map(|m| m.0),
                mc_micro_f1: mc.map(|m| m.1),
                cnt_accuracy: cnt.map(|c| c.0),
                cnt_mae: cnt.map(|c| c.1),
                n_items: n,
                unparsed_rate: if n == 0 { 0.0 } else { unparsed as f64 / n as f64 },
            },
        });
    }
    let average = average_metrics(&rows);
    Ok(EvalReport {
        meta: ReportMeta::default(),
        rows,
        average,
    })
}

fn mean_of(rows: &[RatioRow], f: impl Fn(&Metrics) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| f(&r.metrics)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Unweighted mean of each metric over the rows that report it.
pub fn average_metrics(rows: &[RatioRow]) -> Metrics {
    Metrics {
        mc_accuracy: mean_of(rows, |m| m.mc_accuracy),
        mc_micro_f1: mean_of(rows, |m| m.mc_micro_f1),
        cnt_accuracy: mean_of(rows, |m| m.cnt_accuracy),
        cnt_mae: mean_of(rows, |m| m.cnt_mae),
        n_items: rows.iter().map(|r| r.metrics.n_items).sum(),
        unparsed_rate: mean_of(rows, |m| Some(m.unparsed_rate)).unwrap_or(0.0),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// A report that can be written as a CSV table plus a JSON mirror.
pub trait Tabular: Serialize + DeserializeOwned {
    /// File stem used by [`write_report`].
    const STEM: &'static str;
    fn to_csv(&self) -> String;
}

impl Tabular for EvalReport {
    const STEM: &'static str = "eval_report";

    fn to_csv(&self) -> String {
        let mut s = String::from("ratio,mc_accuracy,mc_micro_f1,cnt_accuracy,cnt_mae,n_items,unparsed_rate\n");
        let line = |label: String, m: &Metrics| {
            format!(
                "{label},{},{},{},{},{},{}\n",
                fmt_opt(m.mc_accuracy),
                fmt_opt(m.mc_micro_f1),
                fmt_opt(m.cnt_accuracy),
                fmt_opt(m.cnt_mae),
                m.n_items,
                fmt(m.unparsed_rate)
            )
        };
        for r in &self.rows {
            s.push_str(&line(fmt(r.ratio), &r.metrics));
        }
        s.push_str(&line("avg".into(), &self.average));
        s
    }
}

impl Tabular for CosineTable {
    const STEM: &'static str = "cosine_table";

    fn to_csv(&self) -> String {
        let mut s = String::from("ratio,no_fusion,fusion\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", fmt(r.ratio), fmt(r.no_fusion), fmt_opt(r.fusion)));
        }
        s.push_str(&format!(
            "avg,{},{}\n",
            fmt(self.average.no_fusion),
            fmt_opt(self.average.fusion)
        ));
        s
    }
}

impl Tabular for AblationTable {
    const STEM: &'static str = "ablation";

    fn to_csv(&self) -> String {
        let mut s = String::from("strategy,alignment\n");
        for r in &self.rows {
            s.push_str(&format!("{},{}\n", r.strategy.name(), fmt(r.alignment)));
        }
        s
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<STEM>.csv` and `<STEM>.json` into `out_dir` and returns both
/// paths. The directory must exist.
pub fn write_report<T: Tabular>(report: &T, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv = out_dir.join(format!("{}.csv", T::STEM));
    let json = out_dir.join(format!("{}.json", T::STEM));
    write_file(&csv, &report.to_csv())?;
    write_file(&json, &to_json(report)?)?;
    Ok((csv, json))
}

pub fn read_report<T: Tabular>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
