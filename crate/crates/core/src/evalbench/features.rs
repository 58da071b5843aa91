use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{encode_from_file, write_features, Encoder, FeatureMap, SourceTag, StubEncoder, StubEncoderConfig};
use crate::error::{Error, Result};
use crate::events::{accumulate_all, render_event_frame};
use crate::fusion::{baseline_prefusion, FusionModel, Triplet};
use crate::illumination::{degrade, ratio_label, ImageTensor, RatioLadder};
use crate::numerics::{cosine_similarity, mean_pool, pca_embed, Tensor};

use super::qa::LoadedSample;
use super::report::ReportMeta;

/// Rendered event image for a sample: the whole stream accumulated into
/// polarity counts, drawn red/blue on gray.
pub fn event_image(s: &LoadedSample) -> Result<ImageTensor> {
    let img = render_event_frame(&accumulate_all(&s.events));
    if (img.height(), img.width()) != (s.image.height(), s.image.width()) {
        return Err(Error::contract(format!(
            "sample {}: event sensor {}x{} differs from image {}x{}",
            s.id,
            img.width(),
            img.height(),
            s.image.width(),
            s.image.height()
        )));
    }
    Ok(img)
}

/// Where encoder features for a sample come from.
pub trait FeatureSource {
    /// Vision features of the normal-light frame.
    fn original(&self, s: &LoadedSample) -> Result<Tensor>;
    /// Vision features of the frame degraded by `ratio`.
    fn extreme(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor>;
    /// Secondary-branch features of the degraded frame.
    fn dino(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor>;
    /// Vision features of the rendered event frame.
    fn event(&self, s: &LoadedSample) -> Result<Tensor>;
    /// Vision features of the pixel-level pre-fusion image.
    fn prefused(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubSourceConfig {
    pub vision: StubEncoderConfig,
    pub dino: StubEncoderConfig,
}

impl Default for StubSourceConfig {
    fn default() -> Self {
        StubSourceConfig {
            vision: StubEncoderConfig {
                patch: 8,
                dim: 16,
                seed: 101,
            },
            dino: StubEncoderConfig {
                patch: 4,
                dim: 16,
                seed: 202,
            },
        }
    }
}

/// Features computed on the fly by two seeded stub encoders over RGB input.
#[derive(Debug, Clone)]
pub struct StubSource {
    vision: StubEncoder,
    dino: StubEncoder,
}

impl StubSource {
    pub fn new(cfg: &StubSourceConfig) -> Result<Self> {
        Ok(StubSource {
            vision: StubEncoder::new(cfg.vision, 3, SourceTag::Vision)?,
            dino: StubEncoder::new(cfg.dino, 3, SourceTag::Dino)?,
        })
    }

    pub fn vision(&self) -> &StubEncoder {
        &self.vision
    }

    pub fn dino_encoder(&self) -> &StubEncoder {
        &self.dino
    }

    fn enc(e: &StubEncoder, img: &ImageTensor) -> Result<Tensor> {
        e.encode(&img.to_rgb()).map(FeatureMap::into_tokens)
    }
}

impl FeatureSource for StubSource {
    fn original(&self, s: &LoadedSample) -> Result<Tensor> {
        Self::enc(&self.vision, &s.image)
    }

    fn extreme(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor> {
        Self::enc(&self.vision, &degrade(&s.image, ratio)?)
    }

    fn dino(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor> {
        Self::enc(&self.dino, &degrade(&s.image, ratio)?)
    }

    fn event(&self, s: &LoadedSample) -> Result<Tensor> {
        Self::enc(&self.vision, &event_image(s)?)
    }

    fn prefused(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor> {
        let x = degrade(&s.image, ratio)?.to_rgb();
        Self::enc(&self.vision, &baseline_prefusion(&x, &event_image(s)?)?)
    }
}

/// Precomputed features laid out as `<root>/<sample id>/<name>.evmf` with
/// names `original`, `event`, `extreme_<ratio>`, `dino_<ratio>` and
/// `prefused_<ratio>` (ratio as its shortest decimal, e.g. `0.05`, `20`).
#[derive(Debug, Clone)]
pub struct FileSource {
    root: PathBuf,
}

impl FileSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileSource { root: root.into() }
    }

    pub fn path(&self, sample_id: &str, name: &str) -> PathBuf {
        self.root.join(sample_id).join(format!("{name}.evmf"))
    }

    fn read(&self, sample_id: &str, name: &str) -> Result<Tensor> {
        encode_from_file(&self.path(sample_id, name)).map(FeatureMap::into_tokens)
    }
}

impl FeatureSource for FileSource {
    fn original(&self, s: &LoadedSample) -> Result<Tensor> {
        self.read(&s.id, "original")
    }

    fn extreme(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor> {
        self.read(&s.id, &format!("extreme_{}", ratio_label(ratio)))
    }

    fn dino(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor> {
        self.read(&s.id, &format!("dino_{}", ratio_label(ratio)))
    }

    fn event(&self, s: &LoadedSample) -> Result<Tensor> {
        self.read(&s.id, "event")
    }

    fn prefused(&self, s: &LoadedSample, ratio: f64) -> Result<Tensor> {
        self.read(&s.id, &format!("prefused_{}", ratio_label(ratio)))
    }
}

/// Writes every feature a [`FileSource`] can serve, taken from `source`.
pub fn export_features(
    source: &dyn FeatureSource,
    samples: &[LoadedSample],
    ratios: &[f64],
    root: &Path,
    model_name: &str,
) -> Result<()> {
    let files = FileSource::new(root);
    for s in samples {
        let dir = root.join(&s.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let put = |name: &str, t: Tensor, tag: SourceTag| -> Result<()> {
            write_features(&files.path(&s.id, name), &FeatureMap::new(t, tag)?, model_name)
        };
        put("original", source.original(s)?, SourceTag::Vision)?;
        put("event", source.event(s)?, SourceTag::Vision)?;
        for &r in ratios {
            let l = ratio_label(r);
            put(&format!("extreme_{l}"), source.extreme(s, r)?, SourceTag::Vision)?;
            put(&format!("dino_{l}"), source.dino(s, r)?, SourceTag::Dino)?;
            put(&format!("prefused_{l}"), source.prefused(s, r)?, SourceTag::Vision)?;
        }
    }
    Ok(())
}

/// Training triplets for every sample at every ratio, sample-major.
pub fn build_corpus(source: &dyn FeatureSource, samples: &[LoadedSample], ratios: &[f64]) -> Result<Vec<Triplet>> {
    let mut out = Vec::with_capacity(samples.len() * ratios.len());
    for s in samples {
        let original = source.original(s)?;
        let event = source.event(s)?;
        for &r in ratios {
            out.push(Triplet {
                extreme: source.extreme(s, r)?,
                dino: source.dino(s, r)?,
                event: event.clone(),
                original: original.clone(),
            });
        }
    }
    Ok(out)
}

/// Cosine similarity between the token-mean of `candidate` and of `target`.
pub fn pooled_cosine(candidate: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(cosine_similarity(&mean_pool(candidate)?, &mean_pool(target)?)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineRow {
    pub ratio: f64,
    /// Degraded-frame features vs normal-light features.
    pub no_fusion: f64,
    /// Fused features vs normal-light features, when a model was given.
    pub fusion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineAverage {
    pub no_fusion: f64,
    pub fusion: Option<f64>,
}

/// Mean pooled cosine similarity to the normal-light features, per ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineTable {
    pub meta: ReportMeta,
    pub rows: Vec<CosineRow>,
    pub average: CosineAverage,
}

impl CosineTable {
    pub fn row(&self, ratio: f64) -> Option<&CosineRow> {
        self.rows.iter().find(|r| r.ratio == ratio)
    }
}

/// For every ratio, averages over samples (in order) the pooled cosine
/// similarity between the degraded-frame features, or the fused features
/// when `model` is given, and the normal-light features.
pub fn cosine_table(
    source: &dyn FeatureSource,
    model: Option<&FusionModel>,
    samples: &[LoadedSample],
    ladder: &RatioLadder,
) -> Result<CosineTable> {
    if samples.is_empty() {
        return Err(Error::contract("cosine table over zero samples"));
    }
    let n = samples.len() as f64;
    let originals = samples.iter().map(|s| source.original(s)).collect::<Result<Vec<_>>>()?;
    let events = match model {
        Some(_) => samples.iter().map(|s| source.event(s).map(Some)).collect::<Result<Vec<_>>>()?,
        None => vec![None; samples.len()],
    };
    let mut rows = Vec::with_capacity(ladder.len());
    for &r in ladder.ratios() {
        let (mut plain, mut fused) = (0.0, 0.0);
        for (i, s) in samples.iter().enumerate() {
            let ext = source.extreme(s, r)?;
            plain += pooled_cosine(&ext, &originals[i])?;
            if let (Some(m), Some(ev)) = (model, &events[i]) {
                let out = m.forward(&ext, &source.dino(s, r)?, ev)?;
                fused += pooled_cosine(&out, &originals[i])?;
            }
        }
        rows.push(CosineRow {
            ratio: r,
            no_fusion: plain / n,
            fusion: model.map(|_| fused / n),
        });
    }
    let k = rows.len() as f64;
    let average = CosineAverage {
        no_fusion: rows.iter().map(|r| r.no_fusion).sum::<f64>() / k,
        fusion: model.map(|_| rows.iter().filter_map(|r| r.fusion).sum::<f64>() / k),
    };
    Ok(CosineTable {
        meta: ReportMeta::default(),
        rows,
        average,
    })
}

/// A pooled feature vector tagged for the embedding plot.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub label: String,
    pub ratio: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaPoint {
    pub label: String,
    pub ratio: f64,
    pub x: f64,
    pub y: f64,
}

/// Projects the vectors onto their first two principal components.
pub fn pca_export(vectors: &[LabeledVector]) -> Result<Vec<PcaPoint>> {
    if vectors.len() < 2 {
        return Err(Error::contract(format!("pca export needs >= 2 vectors, got {}", vectors.len())));
    }
    let rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.vector.clone()).collect();
    let pca = pca_embed(&Tensor::from_rows(&rows)?, 2)?;
    Ok(vectors
        .iter()
        .enumerate()
        .map(|(i, v)| PcaPoint {
            label: v.label.clone(),
            ratio: v.ratio,
            x: pca.projected.get2(i, 0),
            y: pca.projected.get2(i, 1),
        })
        .collect())
}

/// `label,ratio,x,y` with 6-decimal floats.
pub fn pca_csv(points: &[PcaPoint]) -> String {
    let mut s = String::from("label,ratio,x,y\n");
    for p in points {
        s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", p.label, p.ratio, p.x, p.y));
    }
    s
}

/// Pooled vectors for the embedding plot: each sample's normal-light
/// features (`original`, ratio 1), its degraded features at every ratio
/// (`extreme`) and, with a model, its fused features (`fusion`).
pub fn collect_pca_vectors(
    source: &dyn FeatureSource,
    model: Option<&FusionModel>,
    samples: &[LoadedSample],
    ratios: &[f64],
) -> Result<Vec<LabeledVector>> {
    let mut out = Vec::new();
    for s in samples {
        out.push(LabeledVector {
            label: "original".into(),
            ratio: 1.0,
            vector: mean_pool(&source.original(s)?)?,
        });
        let ev = match model {
            Some(_) => Some(source.event(s)?),
            None => None,
        };
        for &r in ratios {
            let ext = source.extreme(s, r)?;
            out.push(LabeledVector {
                label: "extreme".into(),
                ratio: r,
                vector: mean_pool(&ext)?,
            });
            if let (Some(m), Some(ev)) = (model, &ev) {
                out.push(LabeledVector {
                    label: "fusion".into(),
                    ratio: r,
                    vector: mean_pool(&m.forward(&ext, &source.dino(s, r)?, ev)?)?,
                });
            }
        }
    }
    Ok(out)
}
