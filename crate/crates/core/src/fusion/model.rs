use serde::{Deserialize, Serialize};

use crate::encoders::{reconcile_tokens, FeatureMap, SourceTag};
use crate::error::{Error, Result};
use crate::numerics::{mean_pool, Rng, Tensor};

use super::lora::LoraSet;
use super::mlp::{Mlp, MlpCache, MlpGrads};

/// How the illumination indicator reaches the fusion MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IlluMode {
    /// Pool the secondary-branch tokens to one vector, run the indicator MLP
    /// once and broadcast its output to every token.
    #[default]
    Global,
    /// Pool the secondary-branch grid onto the vision grid and run the
    /// indicator MLP per token.
    PerToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionDims {
    /// Vision feature width.
    pub d: usize,
    /// Illumination-indicator width.
    pub d_illu: usize,
    /// Projected event-feature width.
    pub d_ev: usize,
    /// Secondary (illumination) branch feature width.
    pub d_dino: usize,
}

impl Default for FusionDims {
    fn default() -> Self {
        FusionDims {
            d: 16,
            d_illu: 4,
            d_ev: 8,
            d_dino: 16,
        }
    }
}

/// Architecture and initialization of a [`FusionModel`]. Each MLP has one
/// hidden layer; `None` widths default to twice the MLP's output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub dims: FusionDims,
    #[serde(default)]
    pub hidden_a: Option<usize>,
    #[serde(default)]
    pub hidden_b: Option<usize>,
    #[serde(default)]
    pub hidden_fusion: Option<usize>,
    #[serde(default)]
    pub illu_mode: IlluMode,
    pub init_seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            dims: FusionDims::default(),
            hidden_a: None,
            hidden_b: None,
            hidden_fusion: None,
            illu_mode: IlluMode::Global,
            init_seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn widths_a(&self) -> [usize; 3] {
        let d = &self.dims;
        [d.d_dino, self.hidden_a.unwrap_or(2 * d.d_illu), d.d_illu]
    }

    pub fn widths_b(&self) -> [usize; 3] {
        let d = &self.dims;
        [d.d, self.hidden_b.unwrap_or(2 * d.d_ev), d.d_ev]
    }

    pub fn widths_fusion(&self) -> [usize; 3] {
        let d = &self.dims;
        [d.d + d.d_illu + d.d_ev, self.hidden_fusion.unwrap_or(2 * d.d), d.d]
    }
}

/// One training example: encoder outputs for the degraded frame, the
/// secondary branch on the degraded frame, the event frame, and the
/// normal-light target.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    /// `N x D`
    pub extreme: Tensor,
    /// `N' x D_dino`
    pub dino: Tensor,
    /// `N x D`, raw encoder output on the event frame.
    pub event: Tensor,
    /// `N x D`
    pub original: Tensor,
}

/// The illumination-guided fusion network: indicator MLP `mlp_a`, event
/// projection `mlp_b` and the final `mlp_fusion` over
/// `[F_extreme, F_illu, F_event]` per token.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub mlp_a: Mlp,
    pub mlp_b: Mlp,
    pub mlp_fusion: Mlp,
    pub illu_mode: IlluMode,
    pub init_seed: u64,
}

/// Parameter gradients, one [`MlpGrads`] per fusion MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub mlp_a: MlpGrads,
    pub mlp_b: MlpGrads,
    pub mlp_fusion: MlpGrads,
}

impl FusionGrads {
    pub fn zeros_like(m: &FusionModel) -> Self {
        FusionGrads {
            mlp_a: MlpGrads::zeros_like(&m.mlp_a),
            mlp_b: MlpGrads::zeros_like(&m.mlp_b),
            mlp_fusion: MlpGrads::zeros_like(&m.mlp_fusion),
        }
    }

    /// Same order as [`FusionModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.mlp_a.flatten_into(&mut v);
        self.mlp_b.flatten_into(&mut v);
        self.mlp_fusion.flatten_into(&mut v);
        v
    }
}

/// Gradient of the batch-mean loss together with each item's loss.
#[derive(Debug, Clone)]
pub struct BatchGrad {
    pub grads: FusionGrads,
    pub sample_losses: Vec<f64>,
}

impl BatchGrad {
    pub fn mean_loss(&self) -> f64 {
        self.sample_losses.iter().sum::<f64>() / self.sample_losses.len() as f64
    }
}

struct Trace {
    out: Tensor,
    illu_input: Tensor,
    cache_a: MlpCache,
    cache_b: MlpCache,
    cache_f: MlpCache,
}

impl FusionModel {
    /// Fresh model; MLPs are initialized in the order a, b, fusion from a
    /// single `Rng::new(init_seed)` stream.
    pub fn init(cfg: &FusionConfig) -> Result<Self> {
        let mut rng = Rng::new(cfg.init_seed);
        let mlp_a = Mlp::init(&cfg.widths_a(), &mut rng)?;
        let mlp_b = Mlp::init(&cfg.widths_b(), &mut rng)?;
        let mlp_fusion = Mlp::init(&cfg.widths_fusion(), &mut rng)?;
        Ok(FusionModel {
            mlp_a,
            mlp_b,
            mlp_fusion,
            illu_mode: cfg.illu_mode,
            init_seed: cfg.init_seed,
        })
    }

    /// Assembles a model from explicit MLPs, checking the dimension chain.
    pub fn from_parts(mlp_a: Mlp, mlp_b: Mlp, mlp_fusion: Mlp, illu_mode: IlluMode) -> Result<Self> {
        let (d, d_illu, d_ev) = (mlp_b.in_dim(), mlp_a.out_dim(), mlp_b.out_dim());
        if mlp_fusion.in_dim() != d + d_illu + d_ev || mlp_fusion.out_dim() != d {
            return Err(Error::contract(format!(
                "fusion MLP {:?} must map D + D_illu + D_ev = {} to D = {d}",
                mlp_fusion.widths(),
                d + d_illu + d_ev
            )));
        }
        Ok(FusionModel {
            mlp_a,
            mlp_b,
            mlp_fusion,
            illu_mode,
            init_seed: 0,
        })
    }

    pub fn dims(&self) -> FusionDims {
        FusionDims {
            d: self.mlp_b.in_dim(),
            d_illu: self.mlp_a.out_dim(),
            d_ev: self.mlp_b.out_dim(),
            d_dino: self.mlp_a.in_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp_a.param_count() + self.mlp_b.param_count() + self.mlp_fusion.param_count()
    }

    /// All parameters: mlp_a, mlp_b, mlp_fusion; within each MLP layer by
    /// layer, `W` row-major then `b`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.mlp_a.flatten_into(&mut v);
        self.mlp_b.flatten_into(&mut v);
        self.mlp_fusion.flatten_into(&mut v);
        v
    }

    pub fn set_flat_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                src.len()
            )));
        }
        let mut k = self.mlp_a.unflatten_from(src);
        k += self.mlp_b.unflatten_from(&src[k..]);
        self.mlp_fusion.unflatten_from(&src[k..]);
        Ok(())
    }

    pub fn forward(&self, extreme: &Tensor, dino: &Tensor, event: &Tensor) -> Result<Tensor> {
        self.forward_with(None, extreme, dino, event)
    }

    pub(crate) fn forward_with(
        &self,
        lora: Option<&LoraSet>,
        extreme: &Tensor,
        dino: &Tensor,
        event: &Tensor,
    ) -> Result<Tensor> {
        self.trace(lora, extreme, dino, event).map(|t| t.out)
    }

    fn trace(&self, lora: Option<&LoraSet>, extreme: &Tensor, dino: &Tensor, event: &Tensor) -> Result<Trace> {
        let dims = self.dims();
        let (n, d) = extreme.dims2()?;
        let (ne, de) = event.dims2()?;
        if n != ne {
            return Err(Error::contract(format!(
                "token count mismatch: extreme {:?} vs event {:?}",
                extreme.shape(),
                event.shape()
            )));
        }
        if d != dims.d || de != dims.d {
            return Err(Error::contract(format!(
                "feature width must be {}: extreme {:?}, event {:?}",
                dims.d,
                extreme.shape(),
                event.shape()
            )));
        }
        let (_, dd) = dino.dims2()?;
        if dd != dims.d_dino {
            return Err(Error::contract(format!(
                "illumination branch width must be {}, got {:?}",
                dims.d_dino,
                dino.shape()
            )));
        }

        let illu_input = match self.illu_mode {
            IlluMode::Global => Tensor::new(vec![1, dd], mean_pool(dino)?)?,
            IlluMode::PerToken => reconcile_tokens(dino, n)?,
        };
        let (illu, cache_a) = self.mlp_a.forward_cached(&illu_input, lora.map(|l| l.mlp_a.as_slice()))?;
        let (ev, cache_b) = self.mlp_b.forward_cached(event, lora.map(|l| l.mlp_b.as_slice()))?;

        let width = dims.d + dims.d_illu + dims.d_ev;
        let mut z = Vec::with_capacity(n * width);
        for i in 0..n {
            z.extend_from_slice(extreme.row(i));
            z.extend_from_slice(match self.illu_mode {
                IlluMode::Global => illu.row(0),
                IlluMode::PerToken => illu.row(i),
            });
            z.extend_from_slice(ev.row(i));
        }
        let z = Tensor::new(vec![n, width], z)?;
        let (out, cache_f) = self.mlp_fusion.forward_cached(&z, lora.map(|l| l.mlp_fusion.as_slice()))?;
        Ok(Trace {
            out,
            illu_input,
            cache_a,
            cache_b,
            cache_f,
        })
    }

    /// Backpropagates `d_out` through one traced sample, adding into `grads`.
    fn backward_trace(&self, tr: &Trace, d_out: &Tensor, grads: &mut FusionGrads) -> Result<()> {
        let dims = self.dims();
        let dz = self.mlp_fusion.backward(&tr.cache_f, d_out, &mut grads.mlp_fusion)?;
        let n = dz.rows();
        let illu_rows = tr.illu_input.rows();
        let mut d_illu = Tensor::zeros(vec![illu_rows, dims.d_illu]);
        let mut d_ev = Tensor::zeros(vec![n, dims.d_ev]);
        for i in 0..n {
            let row = dz.row(i);
            let target = if illu_rows == 1 { 0 } else { i };
            for (acc, v) in d_illu.row_mut(target).iter_mut().zip(&row[dims.d..dims.d + dims.d_illu]) {
                *acc += v;
            }
            d_ev.row_mut(i).copy_from_slice(&row[dims.d + dims.d_illu..]);
        }
        self.mlp_a.backward(&tr.cache_a, &d_illu, &mut grads.mlp_a)?;
        self.mlp_b.backward(&tr.cache_b, &d_ev, &mut grads.mlp_b)?;
        Ok(())
    }

    /// Mean illumination-correction loss over `batch` and its exact gradient.
    /// Items are processed in index order.
    pub fn loss_and_grad(&self, batch: &[&Triplet]) -> Result<BatchGrad> {
        self.loss_and_grad_with(None, batch)
    }

    pub(crate) fn loss_and_grad_with(&self, lora: Option<&LoraSet>, batch: &[&Triplet]) -> Result<BatchGrad> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut grads = FusionGrads::zeros_like(self);
        let mut sample_losses = Vec::with_capacity(batch.len());
        for t in batch {
            let tr = self.trace(lora, &t.extreme, &t.dino, &t.event)?;
            sample_losses.push(loss_ic(&tr.out, &t.original)?);
            let d_out = loss_ic_grad(&tr.out, &t.original)?;
            self.backward_trace(&tr, &d_out, &mut grads)?;
        }
        let inv = 1.0 / batch.len() as f64;
        for mlp in [&mut grads.mlp_a, &mut grads.mlp_b, &mut grads.mlp_fusion] {
            for l in &mut mlp.layers {
                l.w.data_mut().iter_mut().for_each(|g| *g *= inv);
                l.b.iter_mut().for_each(|g| *g *= inv);
            }
        }
        Ok(BatchGrad { grads, sample_losses })
    }

    /// Mean loss over a set of triplets without gradients.
    pub fn mean_loss(&self, items: &[Triplet]) -> Result<f64> {
        self.mean_loss_with(None, items)
    }

    pub(crate) fn mean_loss_with(&self, lora: Option<&LoraSet>, items: &[Triplet]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::contract("mean loss over an empty set"));
        }
        let mut total = 0.0;
        for t in items {
            total += loss_ic(&self.forward_with(lora, &t.extreme, &t.dino, &t.event)?, &t.original)?;
        }
        Ok(total / items.len() as f64)
    }
}

/// Fuses degraded-frame features with event features under the illumination
/// indicator derived from the secondary branch.
pub fn fusion_forward(
    model: &FusionModel,
    f_extreme: &FeatureMap,
    f_dino_raw: &FeatureMap,
    f_event_raw: &FeatureMap,
) -> Result<FeatureMap> {
    let out = model.forward(f_extreme.tokens(), f_dino_raw.tokens(), f_event_raw.tokens())?;
    FeatureMap::new(out, SourceTag::Vision)
}

/// Illumination-correction loss: mean over all `N * D` elements of the
/// squared difference.
pub fn loss_ic(fused: &Tensor, original: &Tensor) -> Result<f64> {
    if fused.shape() != original.shape() {
        return Err(Error::contract(format!(
            "loss shapes differ: {:?} vs {:?}",
            fused.shape(),
            original.shape()
        )));
    }
    if fused.is_empty() {
        return Err(Error::contract("loss over empty tensors"));
    }
    let sum: f64 = fused
        .data()
        .iter()
        .zip(original.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / fused.len() as f64)
}

/// `d loss_ic / d fused = 2 (fused - original) / (N * D)`.
pub fn loss_ic_grad(fused: &Tensor, original: &Tensor) -> Result<Tensor> {
    if fused.shape() != original.shape() {
        return Err(Error::contract(format!(
            "loss shapes differ: {:?} vs {:?}",
            fused.shape(),
            original.shape()
        )));
    }
    let k = 2.0 / fused.len() as f64;
    Tensor::new(
        fused.shape().to_vec(),
        fused.data().iter().zip(original.data()).map(|(a, b)| k * (a - b)).collect(),
    )
}

/// Batch gradient for every parameter of the three fusion MLPs.
pub fn backward(model: &FusionModel, batch: &[&Triplet]) -> Result<FusionGrads> {
    model.loss_and_grad(batch).map(|g| g.grads)
}
