//! Left/right split at the vertical centerline. The right half is mirrored so
//! both halves share chirality.

use zian_tensor::Tensor;

use super::Sample;
use crate::error::{Result, ZianError};

/// One half of a split image; `landmark` is set only on the half that received it.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfImage {
    /// `C×H×(W/2)` for the left half, `C×H×(W − W/2)` for the right.
    pub image: Tensor<f32>,
    pub landmark: Option<(f64, f64)>,
    pub id: String,
}

impl HalfImage {
    /// A sample, when this half holds the landmark.
    pub fn into_sample(self, source: super::Source) -> Option<Sample> {
        let landmark = self.landmark?;
        Some(Sample {
            image: self.image,
            landmark,
            id: self.id,
            source,
        })
    }
}

/// Columns strictly left of this `u` (pixel centers) belong to the left half;
/// the centerline itself goes left as well.
fn centerline(w: usize) -> f64 {
    (w / 2) as f64 - 0.5
}

fn columns(image: &Tensor<f32>, from: usize, to: usize, mirrored: bool) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let nw = to - from;
    let mut out = Vec::with_capacity(c * h * nw);
    for ch in 0..c {
        for r in 0..h {
            let row = &image.data()[(ch * h + r) * w..(ch * h + r + 1) * w];
            if mirrored {
                out.extend(row[from..to].iter().rev());
            } else {
                out.extend_from_slice(&row[from..to]);
            }
        }
    }
    Tensor::new(vec![c, h, nw], out).expect("shape matches")
}

pub fn split_bilateral(s: &Sample) -> Result<(HalfImage, HalfImage)> {
    let w = s.width();
    if w < 2 {
        return Err(ZianError::Invalid(format!("cannot split image of width {w}")));
    }
    let half = w / 2;
    let (u, v) = s.landmark;
    let goes_left = u <= centerline(w);
    let left = HalfImage {
        image: columns(&s.image, 0, half, false),
        landmark: goes_left.then_some((u, v)),
        id: format!("{}_L", s.id),
    };
    let right = HalfImage {
        image: columns(&s.image, half, w, true),
        // Right-half column j sits at original column W−1−j.
        landmark: (!goes_left).then_some((w as f64 - 1.0 - u, v)),
        id: format!("{}_R", s.id),
    };
    Ok((left, right))
}

/// Inverse of [`split_bilateral`]: the original image and landmark.
pub fn merge_bilateral(left: &HalfImage, right: &HalfImage) -> Result<(Tensor<f32>, Option<(f64, f64)>)> {
    let (ls, rs) = (left.image.shape(), right.image.shape());
    if ls[0] != rs[0] || ls[1] != rs[1] {
        return Err(ZianError::Invalid(format!("halves disagree: {ls:?} vs {rs:?}")));
    }
    let (c, h, lw, rw) = (ls[0], ls[1], ls[2], rs[2]);
    let w = lw + rw;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for r in 0..h {
            out.extend_from_slice(&left.image.data()[(ch * h + r) * lw..(ch * h + r + 1) * lw]);
            out.extend(right.image.data()[(ch * h + r) * rw..(ch * h + r + 1) * rw].iter().rev());
        }
    }
    let landmark = match (left.landmark, right.landmark) {
        (Some(p), None) => Some(p),
        (None, Some((u, v))) => Some((w as f64 - 1.0 - u, v)),
        (None, None) => None,
        (Some(_), Some(_)) => return Err(ZianError::Invalid("landmark present in both halves".into())),
    };
    Ok((Tensor::new(vec![c, h, w], out)?, landmark))
}
