use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{parse_event_csv, EventStream, SensorSize};
use crate::illumination::{pnm, ratio_ladder, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultiChoice,
    Counting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceOption {
    pub letter: char,
    pub text: String,
}

/// One benchmark question. Multiple-choice items may have several correct
/// letters; counting items have an integer ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaItem {
    pub id: String,
    pub task: TaskKind,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<ChoiceOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_set: Option<BTreeSet<char>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_count: Option<u32>,
}

impl QaItem {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::format(format!("qa item {}: {m}", self.id)));
        match self.task {
            TaskKind::MultiChoice => {
                if self.options.is_empty() || self.options.len() > 8 {
                    return bad(format!("needs 1..=8 options, has {}", self.options.len()));
                }
                let letters = self.letters();
                if letters.len() != self.options.len() || letters.iter().any(|c| !('A'..='H').contains(c)) {
                    return bad("option letters must be distinct A-H".into());
                }
                let Some(gt) = &self.gt_set else {
                    return bad("multi_choice item without gt_set".into());
                };
                if !gt.iter().all(|c| letters.contains(c)) {
                    return bad(format!("gt_set {gt:?} not within options"));
                }
                if self.gt_count.is_some() {
                    return bad("multi_choice item with gt_count".into());
                }
            }
            TaskKind::Counting => {
                if self.gt_count.is_none() {
                    return bad("counting item without gt_count".into());
                }
                if self.gt_set.is_some() || !self.options.is_empty() {
                    return bad("counting item with options".into());
                }
            }
        }
        Ok(())
    }

    pub fn letters(&self) -> BTreeSet<char> {
        self.options.iter().map(|o| o.letter).collect()
    }
}

/// Manifest line: an original frame, its event recording and questions.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletSample {
    pub id: String,
    pub original: PathBuf,
    pub events: PathBuf,
    pub qa: Vec<QaItem>,
}

/// A manifest entry with its files loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub id: String,
    pub image: ImageTensor,
    pub events: EventStream,
    pub qa: Vec<QaItem>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<TripletSample>> {
    let mut out: Vec<TripletSample> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: TripletSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::format(format!("duplicate sample id {:?}", s.id)));
        }
        for q in &s.qa {
            q.validate()?;
        }
        out.push(s);
    }
    Ok(out)
}

pub fn manifest_jsonl(samples: &[TripletSample]) -> Result<String> {
    let mut s = String::new();
    for t in samples {
        s.push_str(&serde_json::to_string(t)?);
        s.push('\n');
    }
    Ok(s)
}

/// Reads a manifest and every file it references. Event CSV geometry comes
/// from the `<csv>.json` sidecar when present, else from the image size.
pub fn load_manifest(path: &Path) -> Result<Vec<LoadedSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text)?
        .into_iter()
        .map(|s| {
            let image = pnm::load(&base.join(&s.original))?;
            let ev_path = base.join(&s.events);
            let size = read_sensor_size(&ev_path)?.unwrap_or(SensorSize {
                width: image.width() as u32,
                height: image.height() as u32,
            });
            let csv = std::fs::read_to_string(&ev_path).map_err(|e| Error::io(&ev_path, e))?;
            let events = parse_event_csv(&csv, size.width, size.height)?;
            Ok(LoadedSample {
                id: s.id,
                image,
                events,
                qa: s.qa,
            })
        })
        .collect()
}

/// Sidecar `<csv>.json` next to an event file, if any.
pub fn read_sensor_size(csv_path: &Path) -> Result<Option<SensorSize>> {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".json");
    let p = PathBuf::from(p);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

/// A model's free-text answer to one question at one brightness ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelResponse {
    pub sample_id: String,
    pub qa_id: String,
    pub ratio: f64,
    pub answer_text: String,
}

pub fn parse_responses(text: &str) -> Result<Vec<ModelResponse>> {
    let ladder = ratio_ladder();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ModelResponse = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !ladder.contains(r.ratio) {
            return Err(Error::format(format!(
                "line {}: ratio {} is not on the brightness ladder",
                i + 1,
                r.ratio
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn load_responses(path: &Path) -> Result<Vec<ModelResponse>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_responses(&text)
}

/// Responses keyed by `(sample_id, qa_id, ratio bits)`; duplicates are an
/// error.
pub(crate) fn index_responses(responses: &[ModelResponse]) -> Result<HashMap<(String, String, u64), &str>> {
    let mut map = HashMap::with_capacity(responses.len());
    for r in responses {
        let key = (r.sample_id.clone(), r.qa_id.clone(), r.ratio.to_bits());
        if map.insert(key, r.answer_text.as_str()).is_some() {
            return Err(Error::format(format!(
                "duplicate response for sample {} question {} ratio {}",
                r.sample_id, r.qa_id, r.ratio
            )));
        }
    }
    Ok(map)
}
