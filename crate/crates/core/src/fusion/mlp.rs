use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::lora::LoraAdapter;

/// Affine layer `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn new(w: Tensor, b: Vec<f64>) -> Result<Self> {
        let (out, _) = w.dims2()?;
        if b.len() != out {
            return Err(Error::contract(format!(
                "bias length {} does not match weight shape {:?}",
                b.len(),
                w.shape()
            )));
        }
        Ok(Linear { w, b })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Tensor::zeros(vec![output, input]),
            b: vec![0.0; output],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `x W^T + b`, accumulating bias first, then inputs in ascending order.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, input) = x.dims2()?;
        if input != self.in_dim() {
            return Err(Error::contract(format!(
                "layer expects {} inputs, got tensor {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        let out = self.out_dim();
        let mut y = Vec::with_capacity(n * out);
        for i in 0..n {
            let xi = x.row(i);
            for j in 0..out {
                let mut acc = self.b[j];
                for (w, v) in self.w.row(j).iter().zip(xi) {
                    acc += w * v;
                }
                y.push(acc);
            }
        }
        Tensor::new(vec![n, out], y)
    }
}

/// Per-token MLP with `tanh` between layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of every layer; `inputs[l + 1]` is `tanh` of layer `l`'s
    /// pre-activation.
    inputs: Vec<Tensor>,
}

/// Gradients shaped like an [`Mlp`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Linear>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp.layers.iter().map(|l| Linear::zeros(l.in_dim(), l.out_dim())).collect(),
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
    }
}

impl Mlp {
    pub fn new(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::contract(format!(
                    "layer widths do not chain: {:?} then {:?}",
                    pair[0].w.shape(),
                    pair[1].w.shape()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Layers sized by `widths` (`[in, hidden.., out]`); weights drawn as
    /// `normal() / sqrt(fan_in)` row-major, biases zero.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(format!("invalid MLP widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|wd| {
                let (input, output) = (wd[0], wd[1]);
                let scale = 1.0 / (input as f64).sqrt();
                let w = (0..input * output).map(|_| rng.normal() * scale).collect();
                Linear::new(Tensor::new(vec![output, input], w)?, vec![0.0; output])
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[in, hidden.., out]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Linear::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_cached(x, None).map(|(y, _)| y)
    }

    /// Forward pass, optionally through LoRA adapters (one per layer).
    pub fn forward_cached(&self, x: &Tensor, lora: Option<&[LoraAdapter]>) -> Result<(Tensor, MlpCache)> {
        if let Some(ad) = lora {
            if ad.len() != self.layers.len() {
                return Err(Error::contract(format!(
                    "{} adapters for {} layers",
                    ad.len(),
                    self.layers.len()
                )));
            }
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h)?;
            if let Some(ad) = lora {
                ad[l].add_delta(&h, &mut z)?;
            }
            inputs.push(h);
            h = if l < last { z.map(f64::tanh) } else { z };
        }
        Ok((h, MlpCache { inputs }))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the output) through the cached
    /// forward pass, adding parameter gradients into `grads` and returning the
    /// gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, d_out: &Tensor, grads: &mut MlpGrads) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut delta = d_out.clone();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let x = &cache.inputs[l];
            let (n, input) = x.dims2()?;
            let out = layer.out_dim();
            if delta.shape() != [n, out] {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match layer output {n}x{out}",
                    delta.shape()
                )));
            }
            let g = &mut grads.layers[l];
            for i in 0..n {
                let (di, xi) = (delta.row(i), x.row(i));
                for j in 0..out {
                    let dj = di[j];
                    g.b[j] += dj;
                    for (gw, xv) in g.w.row_mut(j).iter_mut().zip(xi) {
                        *gw += dj * xv;
                    }
                }
            }
            let mut dx = Tensor::zeros(vec![n, input]);
            for i in 0..n {
                for j in 0..out {
                    let dj = delta.get2(i, j);
                    for (d, w) in dx.row_mut(i).iter_mut().zip(layer.w.row(j)) {
                        *d += dj * w;
                    }
                }
            }
            if l > 0 {
                // x is tanh of the previous pre-activation: d tanh = 1 - tanh^2.
                for (d, a) in dx.data_mut().iter_mut().zip(x.data()) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
    }

    /// Reads parameters back in [`Mlp::flatten_into`] order; returns how many
    /// values were consumed.
    pub fn unflatten_from(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.data_mut().copy_from_slice(&src[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&src[k..k + nb]);
            k += nb;
        }
        k
    }
}
