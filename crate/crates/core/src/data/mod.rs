//! Samples, the synthetic generator, manifests and the preprocessing chain.

pub mod augment;
pub mod bilateral;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use zian_tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Manifest,
}

/// An RGB image in [0, 1] with one landmark `(u, v)` = (column, row) in its pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `3×H×W`.
    pub image: Tensor<f32>,
    pub landmark: (f64, f64),
    pub id: String,
    pub source: Source,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Landmark inside the pixel-center extent `[-0.5, W-0.5) × [-0.5, H-0.5)`.
    pub fn landmark_inside(&self) -> bool {
        inside(self.landmark, self.height(), self.width())
    }
}

pub(crate) fn inside(p: (f64, f64), h: usize, w: usize) -> bool {
    p.0 >= -0.5 && p.0 < w as f64 - 0.5 && p.1 >= -0.5 && p.1 < h as f64 - 0.5
}

/// Bilinear read of channel plane `plane` (row-major `h×w`) at `(x, y)`, zero outside.
pub(crate) fn bilinear_zero(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |r: i64, c: i64| -> f32 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            plane[r as usize * w + c as usize]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}
