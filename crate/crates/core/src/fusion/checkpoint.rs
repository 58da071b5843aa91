//! Model checkpoints.
//!
//! Layout: magic `b"EVCK"`, `u32` LE version (1), `u64` LE header length,
//! the UTF-8 JSON [`CheckpointHeader`], then one EVMF blob per parameter
//! tensor. Blob order: `mlp_a`, `mlp_b`, `mlp_fusion`; per MLP, layer by
//! layer, weight (`out x in`) then bias (`out`). A stage-2 checkpoint
//! continues with every LoRA adapter in the same layer order, `A` then `B`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{evmf, Tensor};

use super::lora::{LoraAdapter, LoraSet};
use super::mlp::{Linear, Mlp};
use super::model::{FusionDims, FusionModel, IlluMode};

const MAGIC: &[u8; 4] = b"EVCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraHeader {
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    pub mlp_a: Vec<usize>,
    pub mlp_b: Vec<usize>,
    pub mlp_fusion: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub stage: u8,
    pub dims: FusionDims,
    pub widths: Widths,
    pub illu_mode: IlluMode,
    pub init_seed: u64,
    pub shuffle_seed: Option<u64>,
    pub lora: Option<LoraHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: FusionModel,
    pub lora: Option<LoraSet>,
}

impl Checkpoint {
    pub fn stage1(model: FusionModel, shuffle_seed: Option<u64>) -> Self {
        Checkpoint {
            header: header_for(&model, 1, shuffle_seed, None),
            model,
            lora: None,
        }
    }

    pub fn stage2(model: FusionModel, lora: LoraSet, lora_seed: u64, shuffle_seed: Option<u64>) -> Self {
        let lh = LoraHeader {
            rank: lora.rank(),
            alpha: lora.alpha(),
            seed: lora_seed,
        };
        Checkpoint {
            header: header_for(&model, 2, shuffle_seed, Some(lh)),
            model,
            lora: Some(lora),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for mlp in [&self.model.mlp_a, &self.model.mlp_b, &self.model.mlp_fusion] {
            for l in mlp.layers() {
                out.extend(evmf::encode(&l.w));
                out.extend(evmf::encode(&Tensor::new(vec![l.b.len()], l.b.clone())?));
            }
        }
        if let Some(set) = &self.lora {
            for ads in [&set.mlp_a, &set.mlp_b, &set.mlp_fusion] {
                for ad in ads {
                    out.extend(evmf::encode(&ad.a));
                    out.extend(evmf::encode(&ad.b));
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::format("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let hbytes = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::format("checkpoint header truncated"))?;
        let header: CheckpointHeader = serde_json::from_slice(hbytes)?;
        let mut rest = &bytes[16 + hlen..];
        let mut next = || -> Result<Tensor> {
            let (t, used) = evmf::decode_prefix(rest)?;
            rest = &rest[used..];
            Ok(t)
        };
        let mut read_mlp = |widths: &[usize]| -> Result<Mlp> {
            let mut layers = Vec::new();
            for w in widths.windows(2) {
                let wt = next()?;
                let bt = next()?;
                if wt.shape() != [w[1], w[0]] || bt.shape() != [w[1]] {
                    return Err(Error::format(format!(
                        "layer blob shapes {:?}/{:?} do not match widths {w:?}",
                        wt.shape(),
                        bt.shape()
                    )));
                }
                layers.push(Linear::new(wt, bt.into_data())?);
            }
            Mlp::new(layers)
        };
        let mlp_a = read_mlp(&header.widths.mlp_a)?;
        let mlp_b = read_mlp(&header.widths.mlp_b)?;
        let mlp_fusion = read_mlp(&header.widths.mlp_fusion)?;
        let mut model = FusionModel::from_parts(mlp_a, mlp_b, mlp_fusion, header.illu_mode)
            .map_err(|e| Error::format(e.to_string()))?;
        model.init_seed = header.init_seed;

        let lora = match &header.lora {
            None => None,
            Some(lh) => {
                let mut read_ads = |mlp: &Mlp| -> Result<Vec<LoraAdapter>> {
                    mlp.layers()
                        .iter()
                        .map(|l| {
                            let a = next()?;
                            let b = next()?;
                            if a.shape() != [lh.rank, l.in_dim()] || b.shape() != [l.out_dim(), lh.rank] {
                                return Err(Error::format("adapter blob shapes do not match model"));
                            }
                            Ok(LoraAdapter { a, b, alpha: lh.alpha })
                        })
                        .collect()
                };
                Some(LoraSet {
                    mlp_a: read_ads(&model.mlp_a)?,
                    mlp_b: read_ads(&model.mlp_b)?,
                    mlp_fusion: read_ads(&model.mlp_fusion)?,
                })
            }
        };
        if !rest.is_empty() {
            return Err(Error::format(format!("{} trailing bytes in checkpoint", rest.len())));
        }
        Ok(Checkpoint { header, model, lora })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn header_for(model: &FusionModel, stage: u8, shuffle_seed: Option<u64>, lora: Option<LoraHeader>) -> CheckpointHeader {
    CheckpointHeader {
        stage,
        dims: model.dims(),
        widths: Widths {
            mlp_a: model.mlp_a.widths(),
            mlp_b: model.mlp_b.widths(),
            mlp_fusion: model.mlp_fusion.widths(),
        },
        illu_mode: model.illu_mode,
        init_seed: model.init_seed,
        shuffle_seed,
        lora,
    }
}

/// `epoch,mean_loss` CSV, epochs numbered from 1, losses in `%.9e` form.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        s.push_str(&format!("{},{:.9e}\n", i + 1, l));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{lora_attach, FusionConfig};

    #[test]
    fn roundtrip_stage1_and_stage2() {
        let m = FusionModel::init(&FusionConfig { init_seed: 4, ..Default::default() }).unwrap();
        let c1 = Checkpoint::stage1(m.clone(), Some(9));
        assert_eq!(Checkpoint::decode(&c1.encode().unwrap()).unwrap(), c1);

        let mut ad = lora_attach(&m, 2, 2.0, 5).unwrap();
        ad.lora.mlp_b[0].b.data_mut()[0] = 0.125;
        let c2 = Checkpoint::stage2(m, ad.lora, 5, Some(9));
        assert_eq!(Checkpoint::decode(&c2.encode().unwrap()).unwrap(), c2);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::decode(b"nope"), Err(Error::Format(_))));
        let m = FusionModel::init(&FusionConfig::default()).unwrap();
        let mut b = Checkpoint::stage1(m, None).encode().unwrap();
        b.truncate(b.len() - 3);
        assert!(Checkpoint::decode(&b).is_err());
    }

    #[test]
    fn history_csv() {
        assert_eq!(loss_history_csv(&[0.5, 0.25]), "epoch,mean_loss\n1,5.000000000e-1\n2,2.500000000e-1\n");
    }
}
