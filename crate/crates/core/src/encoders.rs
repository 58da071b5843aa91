//! Frozen encoders producing token feature maps.
//!
//! [`StubEncoder`] is a seeded random patch embedding with a `tanh`
//! nonlinearity; it stands in for a pretrained vision backbone in
//! self-contained runs. [`encode_from_file`] replays features exported
//! offline from a real model as EVMF rank-2 files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::illumination::ImageTensor;
use crate::numerics::{evmf, mean_pool, Rng, Tensor};

/// Which branch produced a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Vision,
    Dino,
}

/// `N x D` token features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    tokens: Tensor,
    source: SourceTag,
}

impl FeatureMap {
    pub fn new(tokens: Tensor, source: SourceTag) -> Result<Self> {
        let (n, d) = tokens.dims2()?;
        if n == 0 || d == 0 {
            return Err(Error::contract(format!(
                "feature map needs N >= 1 and D >= 1, got {n}x{d}"
            )));
        }
        Ok(FeatureMap { tokens, source })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn into_tokens(self) -> Tensor {
        self.tokens
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }
}

/// Something that maps an image to token features.
pub trait Encoder {
    fn encode(&self, img: &ImageTensor) -> Result<FeatureMap>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubEncoderConfig {
    pub patch: usize,
    pub dim: usize,
    pub seed: u64,
}

/// Seeded patch embedding: `token = tanh(W * flatten(patch) + b)`.
///
/// Weights are drawn once, row-major `W` (`dim x fan_in`) followed by `b`
/// (`dim`), each as `normal() / sqrt(fan_in)` from `Rng::new(seed)`. Patch
/// pixels flatten in `(row, column, channel)` order.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    cfg: StubEncoderConfig,
    channels: usize,
    weights: Tensor,
    bias: Vec<f64>,
    source: SourceTag,
}

impl StubEncoder {
    pub fn new(cfg: StubEncoderConfig, channels: usize, source: SourceTag) -> Result<Self> {
        if cfg.patch == 0 || cfg.dim == 0 || channels == 0 {
            return Err(Error::contract(format!(
                "stub encoder needs patch, dim and channels >= 1: {cfg:?}, channels={channels}"
            )));
        }
        let fan_in = cfg.patch * cfg.patch * channels;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut rng = Rng::new(cfg.seed);
        let w: Vec<f64> = (0..cfg.dim * fan_in).map(|_| rng.normal() * scale).collect();
        let bias = (0..cfg.dim).map(|_| rng.normal() * scale).collect();
        Ok(StubEncoder {
            cfg,
            channels,
            weights: Tensor::new(vec![cfg.dim, fan_in], w)?,
            bias,
            source,
        })
    }

    pub fn config(&self) -> StubEncoderConfig {
        self.cfg
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Token count for an image of the given size.
    pub fn token_count(&self, height: usize, width: usize) -> usize {
        (height / self.cfg.patch) * (width / self.cfg.patch)
    }
}

impl Encoder for StubEncoder {
    fn encode(&self, img: &ImageTensor) -> Result<FeatureMap> {
        let p = self.cfg.patch;
        let (h, w, c) = (img.height(), img.width(), img.channels());
        if h % p != 0 || w % p != 0 {
            return Err(Error::contract(format!(
                "image {h}x{w}x{c} not divisible by patch {p}"
            )));
        }
        if c != self.channels {
            return Err(Error::contract(format!(
                "encoder expects {} channels, image {h}x{w}x{c}",
                self.channels
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let fan_in = p * p * c;
        let mut patch = vec![0.0; fan_in];
        let mut out = Vec::with_capacity(gh * gw * self.cfg.dim);
        for py in 0..gh {
            for px in 0..gw {
                let mut k = 0;
                for dy in 0..p {
                    for dx in 0..p {
                        for ch in 0..c {
                            patch[k] = img.get(py * p + dy, px * p + dx, ch);
                            k += 1;
                        }
                    }
                }
                for (j, b) in self.bias.iter().enumerate() {
                    let mut acc = 0.0;
                    for (wv, xv) in self.weights.row(j).iter().zip(&patch) {
                        acc += wv * xv;
                    }
                    out.push((b + acc).tanh());
                }
            }
        }
        FeatureMap::new(Tensor::new(vec![gh * gw, self.cfg.dim], out)?, self.source)
    }
}

/// Provenance sidecar written next to exported feature files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSidecar {
    pub model_name: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub source_tag: SourceTag,
}

/// Reads a rank-2 EVMF feature file. The source tag comes from the
/// `<path>.json` sidecar when present, otherwise defaults to `Vision`.
pub fn encode_from_file(path: &Path) -> Result<FeatureMap> {
    let t = evmf::load(path)?;
    if t.rank() != 2 {
        return Err(Error::format(format!(
            "{}: feature file must be rank 2, got shape {:?}",
            path.display(),
            t.shape()
        )));
    }
    let sidecar = sidecar_path(path);
    let source = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: FeatureSidecar = serde_json::from_str(&text)?;
        if (meta.n, meta.d) != (t.rows(), t.cols()) {
            return Err(Error::format(format!(
                "{}: sidecar says {}x{}, file holds {:?}",
                path.display(),
                meta.n,
                meta.d,
                t.shape()
            )));
        }
        meta.source_tag
    } else {
        SourceTag::Vision
    };
    FeatureMap::new(t, source).map_err(|e| Error::format(e.to_string()))
}

/// Writes the feature map as EVMF plus its provenance sidecar.
pub fn write_features(path: &Path, f: &FeatureMap, model_name: &str) -> Result<()> {
    evmf::save(path, f.tokens())?;
    let meta = FeatureSidecar {
        model_name: model_name.to_string(),
        n: f.n_tokens(),
        d: f.dim(),
        source_tag: f.source(),
    };
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&sidecar, e))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Mean over tokens.
pub fn pool_global(f: &FeatureMap) -> Result<Vec<f64>> {
    mean_pool(f.tokens())
}

/// Average-pools a square `g' x g'` token grid onto a square `g x g` grid
/// (`g'` a multiple of `g`), row-major tokens on both sides. Used when a
/// secondary branch emits a finer grid than the vision branch.
pub fn reconcile_tokens(f: &Tensor, target_tokens: usize) -> Result<Tensor> {
    let (n, d) = f.dims2()?;
    if n == target_tokens {
        return Ok(f.clone());
    }
    let src = isqrt(n);
    let dst = isqrt(target_tokens);
    if src * src != n || dst * dst != target_tokens || dst == 0 || src % dst != 0 {
        return Err(Error::contract(format!(
            "cannot pool {n} tokens onto {target_tokens}: grids must be square and nested"
        )));
    }
    let k = src / dst;
    let mut out = Tensor::zeros(vec![target_tokens, d]);
    let inv = 1.0 / (k * k) as f64;
    for gy in 0..dst {
        for gx in 0..dst {
            let row = out.row_mut(gy * dst + gx);
            for dy in 0..k {
                for dx in 0..k {
                    let s = f.row((gy * k + dy) * src + gx * k + dx);
                    row.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                }
            }
            row.iter_mut().for_each(|a| *a *= inv);
        }
    }
    Ok(out)
}

fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(patch: usize, dim: usize, channels: usize) -> StubEncoder {
        StubEncoder::new(StubEncoderConfig { patch, dim, seed: 11 }, channels, SourceTag::Vision).unwrap()
    }

    #[test]
    fn zero_image_gives_tanh_bias() {
        let e = enc(4, 5, 1);
        let f = e.encode(&ImageTensor::filled(8, 8, 1, 0.0).unwrap()).unwrap();
        for i in 0..f.n_tokens() {
            for (v, b) in f.tokens().row(i).iter().zip(e.bias()) {
                assert_eq!(*v, b.tanh());
            }
        }
    }

    #[test]
    fn shape_and_determinism() {
        let img = ImageTensor::new(32, 32, 1, (0..1024).map(|i| (i % 97) as f64 / 96.0).collect()).unwrap();
        let e = enc(8, 16, 1);
        let a = e.encode(&img).unwrap();
        assert_eq!(a.tokens().shape(), &[16, 16]);
        let b = enc(8, 16, 1).encode(&img).unwrap();
        assert_eq!(a, b);
        assert!(a.tokens().data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn divisibility_and_channel_errors() {
        let e = enc(8, 4, 3);
        let err = e.encode(&ImageTensor::filled(12, 16, 3, 0.1).unwrap()).unwrap_err();
        assert!(err.is_contract());
        assert!(err.to_string().contains("12x16x3"));
        assert!(e.encode(&ImageTensor::filled(16, 16, 1, 0.1).unwrap()).unwrap_err().is_contract());
    }

    #[test]
    fn changing_one_patch_changes_one_token() {
        let e = enc(4, 6, 3);
        let a = ImageTensor::filled(8, 8, 3, 0.3).unwrap();
        let mut vals = a.values().to_vec();
        // Pixel (5, 6) lies in patch (1, 1) -> token 3.
        vals[(5 * 8 + 6) * 3 + 1] = 0.9;
        let b = ImageTensor::new(8, 8, 3, vals).unwrap();
        let (fa, fb) = (e.encode(&a).unwrap(), e.encode(&b).unwrap());
        for i in 0..4 {
            assert_eq!(fa.tokens().row(i) == fb.tokens().row(i), i != 3, "token {i}");
        }
    }

    #[test]
    fn file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureMap::new(
            Tensor::new(vec![3, 2], vec![0.1, -0.2, 1e-300, 4.0, 5.5, -6.25]).unwrap(),
            SourceTag::Dino,
        )
        .unwrap();
        let p = dir.path().join("f.evmf");
        write_features(&p, &f, "dinov2-small").unwrap();
        assert_eq!(encode_from_file(&p).unwrap(), f);

        let missing = dir.path().join("nope.evmf");
        assert!(matches!(encode_from_file(&missing), Err(Error::Io { .. })));

        let bad = dir.path().join("bad.evmf");
        let mut bytes = evmf::encode(f.tokens());
        bytes[..4].copy_from_slice(b"XXXX");
        std::fs::write(&bad, bytes).unwrap();
        assert!(matches!(encode_from_file(&bad), Err(Error::Format(_))));

        let r3 = dir.path().join("r3.evmf");
        evmf::save(&r3, &Tensor::zeros(vec![1, 2, 3])).unwrap();
        assert!(matches!(encode_from_file(&r3), Err(Error::Format(_))));
    }

    #[test]
    fn pool_examples() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let f = FeatureMap::new(t, SourceTag::Vision).unwrap();
        assert_eq!(pool_global(&f).unwrap(), vec![1.0, 2.0]);
        let t = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, -1.0], vec![2.0, 2.0]]).unwrap();
        let p = Tensor::from_rows(&[vec![2.0, 2.0], vec![1.0, 5.0], vec![3.0, -1.0]]).unwrap();
        assert_eq!(
            pool_global(&FeatureMap::new(t, SourceTag::Vision).unwrap()).unwrap(),
            pool_global(&FeatureMap::new(p, SourceTag::Vision).unwrap()).unwrap()
        );
    }

    #[test]
    fn reconcile_pools_nested_grids() {
        // 4x4 grid with token value = index, pooled onto 2x2.
        let t = Tensor::new(vec![16, 1], (0..16).map(|i| i as f64).collect()).unwrap();
        let r = reconcile_tokens(&t, 4).unwrap();
        assert_eq!(r.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(reconcile_tokens(&t, 3).unwrap_err().is_contract());
    }
}
