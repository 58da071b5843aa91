use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `H x W x C` intensity image with values in `[0, 1]`, `C` in `{1, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Tensor,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![height, width, channels], values)?)
    }

    pub fn from_tensor(data: Tensor) -> Result<Self> {
        let shape = data.shape();
        let [h, w, c] = shape else {
            return Err(Error::contract(format!("image must be H x W x C, got {shape:?}")));
        };
        if *h == 0 || *w == 0 {
            return Err(Error::contract(format!("image dimensions must be >= 1, got {shape:?}")));
        }
        if *c != 1 && *c != 3 {
            return Err(Error::contract(format!("image must have 1 or 3 channels, got {c}")));
        }
        if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageTensor { data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn values(&self) -> &[f64] {
        self.data.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data.data()[(y * self.width() + x) * self.channels() + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.data.shape() == other.data.shape()
    }

    /// Applies `f` to every value and clamps the result into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            data: self.data.map(|v| f(v).clamp(0.0, 1.0)),
        }
    }

    /// Single-channel luminance (Rec. 601 weights); grayscale input is
    /// returned unchanged.
    pub fn to_gray(&self) -> ImageTensor {
        if self.channels() == 1 {
            return self.clone();
        }
        let vals = self
            .values()
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        ImageTensor::new(self.height(), self.width(), 1, vals).expect("luminance stays in range")
    }

    /// Three-channel copy; grayscale is replicated into R, G and B.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels() == 3 {
            return self.clone();
        }
        let vals = self.values().iter().flat_map(|&v| [v, v, v]).collect();
        ImageTensor::new(self.height(), self.width(), 3, vals).expect("same values")
    }
}

/// `round(x * 255) / 255`.
pub fn quantize8(x: f64) -> f64 {
    (x * 255.0).round() / 255.0
}
