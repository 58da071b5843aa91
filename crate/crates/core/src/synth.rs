//! Seeded procedural corpus: flat-shaded geometric objects on a graded
//! background, simulated events from a one-pixel horizontal pan, and
//! questions whose answers are exact by construction.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::{ChoiceOption, ModelResponse, QaItem, TaskKind, TripletSample};
use crate::events::{simulate_events, EventStream};
use crate::illumination::{pnm, quantize8, ImageTensor};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub size: usize,
    pub max_objects: usize,
    pub shift_px: i64,
    pub threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 64,
            seed: 7,
            size: 32,
            max_objects: 5,
            shift_px: 1,
            threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    Circle,
    Square,
}

impl Shape {
    pub const ALL: [Shape; 2] = [Shape::Circle, Shape::Square];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [0.85, 0.15, 0.15],
            Color::Green => [0.15, 0.75, 0.2],
            Color::Blue => [0.15, 0.25, 0.85],
            Color::Yellow => [0.9, 0.85, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
}

impl SceneObject {
    fn covers(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        match self.shape {
            Shape::Circle => dy * dy + dx * dx <= self.radius * self.radius,
            Shape::Square => dy.abs() <= self.radius && dx.abs() <= self.radius,
        }
    }

    fn clear_of(&self, other: &SceneObject) -> bool {
        let gap = self.radius + other.radius + 2.0;
        (self.cy - other.cy).abs() > gap || (self.cx - other.cx).abs() > gap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub objects: Vec<SceneObject>,
    pub image: ImageTensor,
    pub events: EventStream,
    pub qa: Vec<QaItem>,
}

fn place_objects(rng: &mut Rng, size: usize, max_objects: usize) -> Vec<SceneObject> {
    let want = 1 + rng.below(max_objects.max(1));
    let mut objs: Vec<SceneObject> = Vec::with_capacity(want);
    let mut tries = 0;
    while objs.len() < want && tries < 200 {
        tries += 1;
        let radius = 2.0 + 1.5 * rng.uniform();
        let span = size as f64 - 2.0 * (radius + 1.0);
        let o = SceneObject {
            shape: Shape::ALL[rng.below(2)],
            color: Color::ALL[rng.below(4)],
            cy: radius + 1.0 + span * rng.uniform(),
            cx: radius + 1.0 + span * rng.uniform(),
            radius,
        };
        if objs.iter().all(|p| o.clear_of(p)) {
            objs.push(o);
        }
    }
    objs
}

fn render(rng: &mut Rng, size: usize, objs: &[SceneObject]) -> Result<ImageTensor> {
    // Bluish night ambient of varying strength.
    let lum = 0.15 + 0.4 * rng.uniform();
    let base = [
        lum * (0.05 + 0.1 * rng.uniform()),
        lum * (0.25 + 0.1 * rng.uniform()),
        lum,
    ];
    let mut v = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        let grad = 0.1 * (y as f64 / (size - 1) as f64 - 0.5);
        for x in 0..size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let hit = objs.iter().find(|o| o.covers(py, px));
            for c in 0..3 {
                let val = match hit {
                    Some(o) => o.color.rgb()[c],
                    None => base[c] + grad,
                };
                v.push(quantize8(val.clamp(0.0, 1.0)));
            }
        }
    }
    ImageTensor::new(size, size, 3, v)
}

fn questions(rng: &mut Rng, objs: &[SceneObject]) -> Vec<QaItem> {
    let count = |id: &str, q: String, n: usize| QaItem {
        id: id.into(),
        task: TaskKind::Counting,
        question: q,
        options: vec![],
        gt_set: None,
        gt_count: Some(n as u32),
    };
    let color = Color::ALL[rng.below(4)];
    let mut qa = vec![
        count("q0", "How many objects are in the scene?".into(), objs.len()),
        count(
            "q1",
            "How many circles are there?".into(),
            objs.iter().filter(|o| o.shape == Shape::Circle).count(),
        ),
        count(
            "q2",
            format!("How many {} objects are there?", color.name()),
            objs.iter().filter(|o| o.color == color).count(),
        ),
    ];

    let present: BTreeSet<(Color, Shape)> = objs.iter().map(|o| (o.color, o.shape)).collect();
    let mut truths: Vec<(Color, Shape)> = present.iter().copied().collect();
    let mut lies: Vec<(Color, Shape)> = Color::ALL
        .iter()
        .flat_map(|&c| Shape::ALL.iter().map(move |&s| (c, s)))
        .filter(|p| !present.contains(p))
        .collect();
    rng.shuffle(&mut truths);
    rng.shuffle(&mut lies);
    let n_true = (1 + rng.below(3)).min(truths.len());
    let mut stmts: Vec<((Color, Shape), bool)> = truths[..n_true].iter().map(|&p| (p, true)).collect();
    stmts.extend(lies.iter().take(4 - n_true).map(|&p| (p, false)));
    rng.shuffle(&mut stmts);
    let letters = ['A', 'B', 'C', 'D'];
    qa.push(QaItem {
        id: "q3".into(),
        task: TaskKind::MultiChoice,
        question: "Which of the following statements are true? Select all that apply.".into(),
        options: stmts
            .iter()
            .zip(letters)
            .map(|(((c, s), _), l)| ChoiceOption {
                letter: l,
                text: format!("There is a {} {}.", c.name(), s.name()),
            })
            .collect(),
        gt_set: Some(stmts.iter().zip(letters).filter(|((_, t), _)| *t).map(|(_, l)| l).collect()),
        gt_count: None,
    });
    qa
}

/// Generates the corpus. Sample `i` draws from its own stream seeded by the
/// `i`-th output of `Rng::new(cfg.seed)`, so a prefix of a larger corpus
/// equals the smaller corpus.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    if cfg.size < 8 || cfg.max_objects == 0 || !(cfg.threshold > 0.0) {
        return Err(Error::contract(format!(
            "synth needs size >= 8, max_objects >= 1, threshold > 0; got {cfg:?}"
        )));
    }
    let mut master = Rng::new(cfg.seed);
    (0..cfg.n)
        .map(|i| {
            let mut rng = Rng::new(master.next_u64());
            let objects = place_objects(&mut rng, cfg.size, cfg.max_objects);
            let image = render(&mut rng, cfg.size, &objects)?;
            let events = simulate_events(&image.to_gray(), cfg.shift_px, cfg.threshold)?;
            let qa = questions(&mut rng, &objects);
            Ok(SynthSample {
                id: format!("s{i:03}"),
                objects,
                image,
                events,
                qa,
            })
        })
        .collect()
}

/// Writes `manifest.jsonl`, `images/<id>.ppm` and `events/<id>.csv` (with a
/// `.csv.json` geometry sidecar) under `dir`.
pub fn write_corpus(samples: &[SynthSample], dir: &Path) -> Result<()> {
    for sub in ["images", "events"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = String::new();
    for s in samples {
        let img_rel = format!("images/{}.ppm", s.id);
        let ev_rel = format!("events/{}.csv", s.id);
        pnm::save(&dir.join(&img_rel), &s.image)?;
        let ev_path = dir.join(&ev_rel);
        std::fs::write(&ev_path, s.events.to_csv()).map_err(|e| Error::io(&ev_path, e))?;
        let side = dir.join(format!("{ev_rel}.json"));
        std::fs::write(&side, serde_json::to_string(&s.events.size())? + "\n").map_err(|e| Error::io(&side, e))?;
        let entry = TripletSample {
            id: s.id.clone(),
            original: img_rel.into(),
            events: ev_rel.into(),
            qa: s.qa.clone(),
        };
        manifest.push_str(&serde_json::to_string(&entry)?);
        manifest.push('\n');
    }
    let mp = dir.join("manifest.jsonl");
    std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))
}

/// A deterministic stand-in answerer for exercising the scoring pipeline.
/// Each answer is correct with probability `exp(-|ln ratio| / 2)`;
/// otherwise the count is off by one or two, or a choice letter is
/// flipped. One answer in fifty is an unparseable refusal.
pub fn mock_responses(samples: &[TripletSample], ratios: &[f64], seed: u64) -> Vec<ModelResponse> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for &r in ratios {
        let p_right = (-r.ln().abs() / 2.0).exp();
        for s in samples {
            for q in &s.qa {
                let right = rng.uniform() < p_right;
                let refuse = rng.below(50) == 0;
                let answer_text = if refuse {
                    "I cannot tell from this image.".to_string()
                } else {
                    match q.task {
                        TaskKind::Counting => {
                            let gt = q.gt_count.unwrap_or(0) as i64;
                            let v = if right { gt } else { (gt + [-2, -1, 1, 2][rng.below(4)]).max(0) };
                            format!("There are {v}.")
                        }
                        TaskKind::MultiChoice => {
                            let mut set = q.gt_set.clone().unwrap_or_default();
                            if !right {
                                let letters: Vec<char> = q.letters().into_iter().collect();
                                let l = letters[rng.below(letters.len())];
                                if !set.remove(&l) {
                                    set.insert(l);
                                }
                            }
                            let v: Vec<String> = set.iter().map(|c| c.to_string()).collect();
                            format!("The answer is {}.", v.join(", "))
                        }
                    }
                };
                out.push(ModelResponse {
                    sample_id: s.id.clone(),
                    qa_id: q.id.clone(),
                    ratio: r,
                    answer_text,
                });
            }
        }
    }
    out
}
