use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::mlp::{Linear, Mlp};
use super::model::{FusionGrads, FusionModel};

/// Low-rank update for one layer: effective weight `W + (alpha / r) B A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r x in`
    pub a: Tensor,
    /// `out x r`, zero at attach time.
    pub b: Tensor,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    fn attach(layer: &Linear, rank: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        let (out, input) = (layer.out_dim(), layer.in_dim());
        if rank == 0 || rank > out.min(input) {
            return Err(Error::contract(format!(
                "LoRA rank {rank} outside 1..={} for layer {out}x{input}",
                out.min(input)
            )));
        }
        let std = 1.0 / (input as f64).sqrt();
        let a = (0..rank * input).map(|_| rng.normal() * std).collect();
        Ok(LoraAdapter {
            a: Tensor::new(vec![rank, input], a)?,
            b: Tensor::zeros(vec![out, rank]),
            alpha,
        })
    }

    /// `z += scale * (x A^T) B^T`, skipping exact zeros so an untrained
    /// adapter leaves `z` bit-identical.
    pub(crate) fn add_delta(&self, x: &Tensor, z: &mut Tensor) -> Result<()> {
        let (n, input) = x.dims2()?;
        let r = self.rank();
        if input != self.a.cols() || z.cols() != self.b.rows() {
            return Err(Error::contract(format!(
                "adapter A {:?} / B {:?} does not fit input {:?}",
                self.a.shape(),
                self.b.shape(),
                x.shape()
            )));
        }
        let s = self.scale();
        let mut hidden = vec![0.0; r];
        for i in 0..n {
            for (k, h) in hidden.iter_mut().enumerate() {
                *h = self.a.row(k).iter().zip(x.row(i)).map(|(a, v)| a * v).sum();
            }
            for (j, zv) in z.row_mut(i).iter_mut().enumerate() {
                let d: f64 = self.b.row(j).iter().zip(&hidden).map(|(b, h)| b * h).sum();
                let d = s * d;
                if d != 0.0 {
                    *zv += d;
                }
            }
        }
        Ok(())
    }

    /// `(alpha / r) B A`, shaped like the base weight.
    pub fn delta_weight(&self) -> Tensor {
        let (out, r) = (self.b.rows(), self.rank());
        let input = self.a.cols();
        let s = self.scale();
        let mut w = Tensor::zeros(vec![out, input]);
        for j in 0..out {
            for i in 0..input {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += self.b.get2(j, k) * self.a.get2(k, i);
                }
                w.set2(j, i, s * acc);
            }
        }
        w
    }

    fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Stage-2 passes over the corpus.
    pub epochs: usize,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 2,
            alpha: 2.0,
            seed: 0,
            epochs: 1,
        }
    }
}

/// One adapter per layer of each fusion MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraSet {
    pub mlp_a: Vec<LoraAdapter>,
    pub mlp_b: Vec<LoraAdapter>,
    pub mlp_fusion: Vec<LoraAdapter>,
}

impl LoraSet {
    fn all(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.mlp_a.iter().chain(&self.mlp_b).chain(&self.mlp_fusion)
    }

    fn all_mut(&mut self) -> impl Iterator<Item = &mut LoraAdapter> {
        self.mlp_a.iter_mut().chain(self.mlp_b.iter_mut()).chain(self.mlp_fusion.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.all().map(LoraAdapter::param_count).sum()
    }

    pub fn rank(&self) -> usize {
        self.mlp_a[0].rank()
    }

    pub fn alpha(&self) -> f64 {
        self.mlp_a[0].alpha
    }

    /// Flat parameters: for each adapter (mlp_a, mlp_b, mlp_fusion, layer
    /// order) `A` row-major then `B` row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for ad in self.all() {
            v.extend_from_slice(ad.a.data());
            v.extend_from_slice(ad.b.data());
        }
        v
    }

    pub fn set_flat_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::contract(format!(
                "expected {} adapter parameters, got {}",
                self.param_count(),
                src.len()
            )));
        }
        let mut k = 0;
        for ad in self.all_mut() {
            let na = ad.a.len();
            ad.a.data_mut().copy_from_slice(&src[k..k + na]);
            k += na;
            let nb = ad.b.len();
            ad.b.data_mut().copy_from_slice(&src[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    /// Chains effective-weight gradients onto the adapter factors:
    /// `dB = s G A^T`, `dA = s B^T G`. Flat order matches
    /// [`LoraSet::flat_params`].
    pub fn chain_grads(&self, g: &FusionGrads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        let pairs = [(&self.mlp_a, &g.mlp_a), (&self.mlp_b, &g.mlp_b), (&self.mlp_fusion, &g.mlp_fusion)];
        for (adapters, grads) in pairs {
            for (ad, lg) in adapters.iter().zip(&grads.layers) {
                chain_layer(ad, lg, &mut out);
            }
        }
        out
    }
}

fn chain_layer(ad: &LoraAdapter, g: &Linear, out: &mut Vec<f64>) {
    let s = ad.scale();
    let (r, input, o) = (ad.rank(), ad.a.cols(), ad.b.rows());
    for k in 0..r {
        for i in 0..input {
            let mut acc = 0.0;
            for j in 0..o {
                acc += ad.b.get2(j, k) * g.w.get2(j, i);
            }
            out.push(s * acc);
        }
    }
    for j in 0..o {
        for k in 0..r {
            let mut acc = 0.0;
            for i in 0..input {
                acc += g.w.get2(j, i) * ad.a.get2(k, i);
            }
            out.push(s * acc);
        }
    }
}

/// Frozen base model plus trainable adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedModel {
    pub base: FusionModel,
    pub lora: LoraSet,
}

/// Attaches rank-`rank` adapters to every layer. `A` is drawn as
/// `normal() / sqrt(in)` from `Rng::new(seed)` in flat-parameter order; `B`
/// starts at zero.
pub fn lora_attach(model: &FusionModel, rank: usize, alpha: f64, seed: u64) -> Result<AdaptedModel> {
    let mut rng = Rng::new(seed);
    let mut build = |mlp: &Mlp| -> Result<Vec<LoraAdapter>> {
        mlp.layers().iter().map(|l| LoraAdapter::attach(l, rank, alpha, &mut rng)).collect()
    };
    let lora = LoraSet {
        mlp_a: build(&model.mlp_a)?,
        mlp_b: build(&model.mlp_b)?,
        mlp_fusion: build(&model.mlp_fusion)?,
    };
    Ok(AdaptedModel {
        base: model.clone(),
        lora,
    })
}

/// Folds `(alpha / r) B A` into each base weight and drops the adapters.
pub fn lora_merge(adapted: &AdaptedModel) -> FusionModel {
    let mut m = adapted.base.clone();
    let fold = |mlp: &mut Mlp, ads: &[LoraAdapter]| {
        for (layer, ad) in mlp.layers_mut().iter_mut().zip(ads) {
            let dw = ad.delta_weight();
            for (w, d) in layer.w.data_mut().iter_mut().zip(dw.data()) {
                *w += d;
            }
        }
    };
    fold(&mut m.mlp_a, &adapted.lora.mlp_a);
    fold(&mut m.mlp_b, &adapted.lora.mlp_b);
    fold(&mut m.mlp_fusion, &adapted.lora.mlp_fusion);
    m
}

impl AdaptedModel {
    pub fn forward(&self, extreme: &Tensor, dino: &Tensor, event: &Tensor) -> Result<Tensor> {
        self.base.forward_with(Some(&self.lora), extreme, dino, event)
    }
}
