//! Ablation fusion strategies without an illumination indicator.

use crate::encoders::FeatureMap;
use crate::error::{Error, Result};
use crate::illumination::ImageTensor;
use crate::numerics::Tensor;

/// Pixel-level summation: `clamp(x + (event_vis - 0.5), 0, 1)`. The rendered
/// event image is centered on its gray background, so a frame without events
/// leaves `x` unchanged.
pub fn baseline_prefusion(x_extreme: &ImageTensor, event_vis: &ImageTensor) -> Result<ImageTensor> {
    if !x_extreme.same_shape(event_vis) {
        return Err(Error::contract(format!(
            "pre-fusion shapes differ: {:?} vs {:?}",
            x_extreme.tensor().shape(),
            event_vis.tensor().shape()
        )));
    }
    let vals = x_extreme
        .values()
        .iter()
        .zip(event_vis.values())
        .map(|(x, e)| (x + (e - 0.5)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(x_extreme.height(), x_extreme.width(), x_extreme.channels(), vals)
}

/// Feature-level addition.
pub fn baseline_postfusion(f_extreme: &FeatureMap, f_event: &FeatureMap) -> Result<FeatureMap> {
    let (a, b) = (f_extreme.tokens(), f_event.tokens());
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "post-fusion shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sum = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    FeatureMap::new(Tensor::new(a.shape().to_vec(), sum)?, f_extreme.source())
}
