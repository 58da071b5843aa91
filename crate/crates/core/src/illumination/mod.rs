//! Extreme-light degradation: linear brightness scaling, clamping to `[0, 1]`
//! and 8-bit requantization. The transform is applied in linear space with no
//! gamma model.

mod image;
pub mod pnm;

pub use image::{quantize8, ImageTensor};

use crate::error::{Error, Result};

/// Brightness ratios of the evaluation protocol, ascending. `1.0` is the
/// unmodified image.
pub const RATIOS: [f64; 17] = [
    0.05, 0.08, 0.1, 0.125, 0.2, 0.4, 0.5, 0.75, 1.0, 2.0, 3.0, 5.0, 7.5, 8.0, 10.0, 15.0, 20.0,
];

/// The 17-level brightness ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioLadder {
    ratios: Vec<f64>,
}

impl RatioLadder {
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    pub fn contains(&self, r: f64) -> bool {
        self.ratios.contains(&r)
    }

    /// Index of the identity ratio.
    pub fn identity_index(&self) -> usize {
        self.ratios.iter().position(|&r| r == 1.0).expect("ladder contains 1.0")
    }
}

pub fn ratio_ladder() -> RatioLadder {
    RatioLadder {
        ratios: RATIOS.to_vec(),
    }
}

/// Shortest decimal label for a ratio (`0.05`, `1`, `7.5`), used in file
/// names and manifests.
pub fn ratio_label(r: f64) -> String {
    format!("{r}")
}

/// Scales every value by `ratio`, clamps to `[0, 1]` and snaps onto the 8-bit
/// grid `{k / 255}`.
pub fn degrade(img: &ImageTensor, ratio: f64) -> Result<ImageTensor> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::contract(format!("brightness ratio must be > 0, got {ratio}")));
    }
    Ok(img.map_clamped(|v| quantize8((ratio * v).clamp(0.0, 1.0))))
}

/// Fraction of values clipped to exactly 0.0 or 1.0.
pub fn saturation_fraction(img: &ImageTensor) -> f64 {
    let vals = img.values();
    let clipped = vals.iter().filter(|&&v| v == 0.0 || v == 1.0).count();
    clipped as f64 / vals.len() as f64
}
