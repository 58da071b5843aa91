use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::adam::{AdamHyper, AdamState};
use super::lora::{lora_attach, AdaptedModel, LoraConfig, LoraSet};
use super::model::{FusionConfig, FusionModel, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 30,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid training config {self:?}")))
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Runs `epochs` passes of shuffled mini-batch Adam.
///
/// Each epoch draws a fresh Fisher-Yates permutation of `0..len` from one
/// `Rng::new(shuffle_seed)` stream that continues across epochs; the last
/// partial batch is kept. The recorded epoch loss is the mean of every item's
/// loss at the moment its batch was evaluated, summed in item-index order.
fn run_epochs<T>(
    corpus: &[T],
    cfg: &TrainConfig,
    epochs: usize,
    params: &mut Vec<f64>,
    mut batch_grad: impl FnMut(&[f64], &[&T]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    cfg.validate()?;
    let mut adam = AdamState::new(params.len(), cfg.adam());
    let mut rng = Rng::new(cfg.shuffle_seed);
    let mut history = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut item_loss = vec![0.0; corpus.len()];
    for _ in 0..epochs {
        order.sort_unstable();
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&T> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (losses, grads) = batch_grad(params, &batch)?;
            for (&i, l) in chunk.iter().zip(losses) {
                item_loss[i] = l;
            }
            adam.step(params, &grads)?;
        }
        let mean = item_loss.iter().sum::<f64>() / corpus.len() as f64;
        if !mean.is_finite() {
            return Err(Error::contract("training diverged: non-finite epoch loss"));
        }
        history.push(mean);
    }
    Ok(history)
}

/// Stage 1: trains all three fusion MLPs from a fresh initialization on the
/// illumination-correction loss. Returns the model and per-epoch mean loss.
pub fn train_stage1(corpus: &[Triplet], cfg: &TrainConfig, arch: &FusionConfig) -> Result<(FusionModel, Vec<f64>)> {
    let model = FusionModel::init(arch)?;
    train_model(model, corpus, cfg)
}

/// Continues stage-1 training from an existing model.
pub fn train_model(mut model: FusionModel, corpus: &[Triplet], cfg: &TrainConfig) -> Result<(FusionModel, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let mut params = model.flat_params();
    let mut probe = model.clone();
    let history = run_epochs(corpus, cfg, cfg.epochs, &mut params, |p, batch| {
        probe.set_flat_params(p)?;
        let g = probe.loss_and_grad(batch)?;
        Ok((g.sample_losses, g.grads.flatten()))
    })?;
    model.set_flat_params(&params)?;
    Ok((model, history))
}

/// Stage 2: attaches LoRA adapters to every fusion layer and trains only the
/// adapters, `lora.epochs` passes, with the optimizer settings of `cfg`. The
/// base model is never modified.
pub fn train_stage2_lora(
    model: &FusionModel,
    corpus: &[Triplet],
    cfg: &TrainConfig,
    lora: &LoraConfig,
) -> Result<(LoraSet, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let AdaptedModel { lora: mut set, .. } = lora_attach(model, lora.rank, lora.alpha, lora.seed)?;
    let mut params = set.flat_params();
    let mut probe = set.clone();
    let history = run_epochs(corpus, cfg, lora.epochs, &mut params, |p, batch| {
        probe.set_flat_params(p)?;
        // Gradients w.r.t. the effective weights, taken at the merged model,
        // then chained onto A and B.
        let merged = super::lora::lora_merge(&AdaptedModel {
            base: model.clone(),
            lora: probe.clone(),
        });
        let g = merged.loss_and_grad(batch)?;
        let losses = batch
            .iter()
            .map(|t| {
                super::loss_ic(&model.forward_with(Some(&probe), &t.extreme, &t.dino, &t.event)?, &t.original)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((losses, probe.chain_grads(&g.grads)))
    })?;
    set.set_flat_params(&params)?;
    Ok((set, history))
}

