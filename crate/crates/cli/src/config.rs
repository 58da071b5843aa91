use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evfusion::evalbench::StubSourceConfig;
use evfusion::fusion::{FusionConfig, FusionDims, IlluMode, LoraConfig, TrainConfig};
use evfusion::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub data: u64,
    pub lora: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            init: 0,
            shuffle: 0,
            data: 7,
            lora: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraSection {
    pub rank: usize,
    pub alpha: f64,
    pub epochs: usize,
}

impl Default for LoraSection {
    fn default() -> Self {
        let l = LoraConfig::default();
        LoraSection {
            rank: l.rank,
            alpha: l.alpha,
            epochs: l.epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Stub,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub kind: EncoderKind,
    pub stub: StubSourceConfig,
    /// Root of precomputed features when `kind` is `file`.
    pub features_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n: usize,
    pub size: usize,
    pub max_objects: usize,
    pub shift_px: i64,
    pub threshold: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            n: s.n,
            size: s.size,
            max_objects: s.max_objects,
            shift_px: s.shift_px,
            threshold: s.threshold,
        }
    }
}

/// Default file locations; subcommand flags take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a run depends on. Unknown keys are rejected; absent keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Seeds,
    pub dims: FusionDims,
    pub illu_mode: IlluMode,
    pub train: TrainSection,
    pub lora: LoraSection,
    pub encoder: EncoderSection,
    pub synth: SynthSection,
    /// Not part of the echoed or hashed config.
    #[serde(skip_serializing)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            shuffle_seed: self.seeds.shuffle,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            dims: self.dims,
            illu_mode: self.illu_mode,
            init_seed: self.seeds.init,
            ..FusionConfig::default()
        }
    }

    pub fn lora_config(&self) -> LoraConfig {
        LoraConfig {
            rank: self.lora.rank,
            alpha: self.lora.alpha,
            seed: self.seeds.lora,
            epochs: self.lora.epochs,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            n: s.n,
            seed: self.seeds.data,
            size: s.size,
            max_objects: s.max_objects,
            shift_px: s.shift_px,
            threshold: s.threshold,
        }
    }

    pub fn seed_map(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("data".to_string(), self.seeds.data),
            ("init".to_string(), self.seeds.init),
            ("shuffle".to_string(), self.seeds.shuffle),
            ("lora".to_string(), self.seeds.lora),
            ("vision_encoder".to_string(), self.encoder.stub.vision.seed),
            ("dino_encoder".to_string(), self.encoder.stub.dino.seed),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seeds": {"init": 1, "bogus": 2}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.seeds, Seeds::default());
    }

    #[test]
    fn paths_excluded_from_echo() {
        let mut c = RunConfig::default();
        c.paths.manifest = Some("x/manifest.jsonl".into());
        let v = serde_json::to_value(&c).unwrap();
        assert!(v.get("paths").is_none());
    }
}
