use serde::{Deserialize, Serialize};

use crate::encoders::{FeatureMap, SourceTag};
use crate::error::{Error, Result};
use crate::fusion::{baseline_postfusion, train_stage1, FusionConfig, TrainConfig};
use crate::numerics::Tensor;

use super::features::{build_corpus, pooled_cosine, FeatureSource};
use super::qa::LoadedSample;
use super::report::ReportMeta;

/// Ratios whose alignment is averaged into the ablation score.
pub const ABLATION_RATIOS: [f64; 4] = [0.05, 0.1, 10.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Degraded frame and event image summed in pixel space, then encoded.
    PreFusion,
    /// Degraded-frame and event-image features added.
    PostFusion,
    /// Illumination-indicator fusion network.
    Ours,
}

impl FusionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::PreFusion => "pre-fusion",
            FusionStrategy::PostFusion => "post-fusion",
            FusionStrategy::Ours => "ours",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub strategy: FusionStrategy,
    /// Mean pooled cosine similarity to the normal-light features over
    /// [`ABLATION_RATIOS`].
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationTable {
    pub meta: ReportMeta,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn score(&self, s: FusionStrategy) -> f64 {
        self.rows.iter().find(|r| r.strategy == s).map(|r| r.alignment).unwrap_or(f64::NAN)
    }
}

/// Scores the three fusion strategies against the normal-light features.
///
/// The baselines fuse and encode with the frozen encoder only: pre-fusion
/// encodes the pixel-level sum of the degraded frame and the rendered event
/// frame, post-fusion adds the two frozen feature maps. Neither has an
/// alignment stage. The full model is trained with [`train_stage1`] on
/// `train_ratios` under `cfg` and `arch`.
pub fn run_ablation(
    source: &dyn FeatureSource,
    samples: &[LoadedSample],
    train_ratios: &[f64],
    cfg: &TrainConfig,
    arch: &FusionConfig,
) -> Result<AblationTable> {
    if samples.is_empty() {
        return Err(Error::contract("ablation over zero samples"));
    }
    let originals = samples.iter().map(|s| source.original(s)).collect::<Result<Vec<_>>>()?;
    let events = samples.iter().map(|s| source.event(s)).collect::<Result<Vec<_>>>()?;
    let corpus = build_corpus(source, samples, train_ratios)?;
    let (ours, _) = train_stage1(&corpus, cfg, arch)?;

    let pre = mean_alignment(|i, r| source.prefused(&samples[i], r), &originals)?;
    let post = mean_alignment(
        |i, r| {
            let ext = FeatureMap::new(source.extreme(&samples[i], r)?, SourceTag::Vision)?;
            let ev = FeatureMap::new(events[i].clone(), SourceTag::Vision)?;
            baseline_postfusion(&ext, &ev).map(FeatureMap::into_tokens)
        },
        &originals,
    )?;
    let full = mean_alignment(
        |i, r| ours.forward(&source.extreme(&samples[i], r)?, &source.dino(&samples[i], r)?, &events[i]),
        &originals,
    )?;
    let row = |strategy, alignment| AblationRow { strategy, alignment };
    Ok(AblationTable {
        meta: ReportMeta::default(),
        rows: vec![
            row(FusionStrategy::PreFusion, pre),
            row(FusionStrategy::PostFusion, post),
            row(FusionStrategy::Ours, full),
        ],
    })
}

fn mean_alignment(candidate: impl Fn(usize, f64) -> Result<Tensor>, originals: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for &r in &ABLATION_RATIOS {
        let mut per_ratio = 0.0;
        for (i, orig) in originals.iter().enumerate() {
            per_ratio += pooled_cosine(&candidate(i, r)?, orig)?;
        }
        total += per_ratio / originals.len() as f64;
    }
    Ok(total / ABLATION_RATIOS.len() as f64)
}
