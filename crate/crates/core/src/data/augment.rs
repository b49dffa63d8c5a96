//! Random flips, shifts, scalings and rotations applied to image and landmark alike.

use rand::Rng;
use serde::{Deserialize, Serialize};
use zian_tensor::Tensor;

use super::{bilinear_zero, inside, Sample};
use crate::error::{Result, ZianError};
use crate::heatmap::CoordFrame;

/// `(u, v) → (a·u + b·v + tx, c·u + d·v + ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn apply(&self, (u, v): (f64, f64)) -> (f64, f64) {
        (self.a * u + self.b * v + self.tx, self.c * u + self.d * v + self.ty)
    }

    /// `self ∘ inner`.
    pub fn then(&self, inner: &Affine2) -> Affine2 {
        Affine2 {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
            tx: self.a * inner.tx + self.b * inner.ty + self.tx,
            ty: self.c * inner.tx + self.d * inner.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Affine2 {
        let det = self.a * self.d - self.b * self.c;
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Affine2 {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        }
    }

    pub fn from_frame(f: &CoordFrame) -> Affine2 {
        Affine2 {
            a: f.scale_u,
            b: 0.0,
            c: 0.0,
            d: f.scale_v,
            tx: f.offset_u,
            ty: f.offset_v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    /// Translation in pixels.
    pub shift: (f64, f64),
    pub scale: f64,
    /// Degrees.
    pub rotation: f64,
    /// Seed the parameters were drawn with, for bookkeeping.
    pub seed: u64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        shift: (0.0, 0.0),
        scale: 1.0,
        rotation: 0.0,
        seed: 0,
    };

    pub fn is_identity(&self) -> bool {
        !self.flip && self.shift == (0.0, 0.0) && self.scale == 1.0 && self.rotation == 0.0
    }

    /// Map from original to augmented pixel coordinates of an `h×w` image:
    /// optional mirror, then scale and rotation about the image center, then shift.
    pub fn forward_map(&self, h: usize, w: usize) -> Affine2 {
        let (cu, cv) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let flip = if self.flip {
            Affine2 {
                a: -1.0,
                tx: w as f64 - 1.0,
                ..Affine2::IDENTITY
            }
        } else {
            Affine2::IDENTITY
        };
        let (sin, cos) = self.rotation.to_radians().sin_cos();
        let s = self.scale;
        let rot = Affine2 {
            a: s * cos,
            b: -s * sin,
            c: s * sin,
            d: s * cos,
            tx: 0.0,
            ty: 0.0,
        };
        let to_center = Affine2 {
            tx: -cu,
            ty: -cv,
            ..Affine2::IDENTITY
        };
        let back = Affine2 {
            tx: cu + self.shift.0,
            ty: cv + self.shift.1,
            ..Affine2::IDENTITY
        };
        back.then(&rot).then(&to_center).then(&flip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub flip_prob: f64,
    /// Maximum shift as a fraction of the image side.
    pub shift_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            shift_frac: 0.05,
            scale_min: 0.9,
            scale_max: 1.1,
            rotation_deg: 10.0,
        }
    }
}

impl AugmentRanges {
    pub fn sample<R: Rng>(&self, rng: &mut R, h: usize, w: usize, seed: u64) -> AugmentParams {
        let flip = rng.random_bool(self.flip_prob);
        let du = rng.random_range(-1.0..=1.0) * self.shift_frac * w as f64;
        let dv = rng.random_range(-1.0..=1.0) * self.shift_frac * h as f64;
        let scale = rng.random_range(self.scale_min..=self.scale_max);
        let rotation = rng.random_range(-self.rotation_deg..=self.rotation_deg);
        AugmentParams {
            flip,
            shift: (du, dv),
            scale,
            rotation,
            seed,
        }
    }
}

/// Resample `3×H×W` `image` onto an `out_h×out_w` grid; `out_to_src` maps output pixels
/// to source coordinates. Outside reads are zero.
pub fn warp_affine(image: &Tensor<f32>, out_h: usize, out_w: usize, out_to_src: &Affine2) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0f32; c * out_h * out_w];
    for r in 0..out_h {
        for col in 0..out_w {
            let (x, y) = out_to_src.apply((col as f64, r as f64));
            for ch in 0..c {
                let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
                out[(ch * out_h + r) * out_w + col] = bilinear_zero(plane, h, w, x, y);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).expect("shape matches")
}

/// Warp a sample; fails if the landmark leaves the image.
pub fn augment(sample: &Sample, params: &AugmentParams) -> Result<Sample> {
    if params.is_identity() {
        return Ok(sample.clone());
    }
    let (h, w) = (sample.height(), sample.width());
    let fwd = params.forward_map(h, w);
    let landmark = fwd.apply(sample.landmark);
    if !inside(landmark, h, w) {
        return Err(ZianError::Invalid(format!(
            "augmentation moves landmark of {} off the image to {landmark:?}",
            sample.id
        )));
    }
    Ok(Sample {
        image: warp_affine(&sample.image, h, w, &fwd.inverse()),
        landmark,
        id: sample.id.clone(),
        source: sample.source,
    })
}

/// Draw parameters until the landmark stays inside (at most `tries` draws).
/// Returns the identity and `true` when every draw was rejected.
pub fn draw_valid_params<R: Rng>(
    ranges: &AugmentRanges,
    rng: &mut R,
    landmark: (f64, f64),
    h: usize,
    w: usize,
    seed: u64,
    tries: usize,
) -> (AugmentParams, bool) {
    for _ in 0..tries {
        let p = ranges.sample(rng, h, w, seed);
        if inside(p.forward_map(h, w).apply(landmark), h, w) {
            return (p, false);
        }
    }
    log::warn!("no valid augmentation in {tries} draws; using identity");
    (AugmentParams::IDENTITY, true)
}
