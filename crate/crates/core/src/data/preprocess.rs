//! Resize → center crop → (random) crop, producing the network input and the
//! exact frame from input pixels back to raw pixels.
//!
//! Resizing uses half-pixel centers, so input pixel `x` reads raw coordinate
//! `(x + o + 0.5)·W/R − 0.5`, where `R` is the resize side and `o` the total
//! crop offset. The whole chain is therefore a single axis-aligned resampling
//! of the raw image.

use rand::Rng;
use serde::{Deserialize, Serialize};
use zian_tensor::{Padding, SampleGrid, Tape, Tensor};

use super::augment::{warp_affine, Affine2, AugmentParams};
use super::{inside, Sample};
use crate::error::{Result, ZianError};
use crate::heatmap::CoordFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resize_side: usize,
    pub center_crop_side: usize,
    /// Side of the network input.
    pub crop_side: usize,
    /// The coarse pass runs at `crop_side / coarse_factor`.
    pub coarse_factor: usize,
}

impl Default for PreprocessConfig {
    /// Desk scale: 304 → 292 → 256, coarse input 64.
    fn default() -> Self {
        Self {
            resize_side: 304,
            center_crop_side: 292,
            crop_side: 256,
            coarse_factor: 4,
        }
    }
}

impl PreprocessConfig {
    /// Full-resolution chain: 1064 → 1024 → 896, coarse input 224.
    pub fn full_scale() -> Self {
        Self {
            resize_side: 1064,
            center_crop_side: 1024,
            crop_side: 896,
            coarse_factor: 4,
        }
    }

    /// The full-resolution chain with every side divided by `factor` (rounded).
    pub fn scaled(factor: f64) -> Self {
        let f = Self::full_scale();
        let div = |s: usize| (s as f64 / factor).round() as usize;
        Self {
            resize_side: div(f.resize_side),
            center_crop_side: div(f.center_crop_side),
            crop_side: div(f.crop_side),
            coarse_factor: f.coarse_factor,
        }
    }

    pub fn coarse_side(&self) -> usize {
        self.crop_side / self.coarse_factor
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_side == 0 || self.center_crop_side < self.crop_side || self.resize_side < self.center_crop_side {
            return Err(ZianError::Config(format!(
                "preprocess sides must satisfy resize ≥ center crop ≥ crop > 0, got {self:?}"
            )));
        }
        if self.coarse_factor == 0 || self.crop_side % self.coarse_factor != 0 {
            return Err(ZianError::Config(format!(
                "crop side {} is not a multiple of the coarse factor {}",
                self.crop_side, self.coarse_factor
            )));
        }
        Ok(())
    }

    fn center_offset(&self) -> usize {
        (self.resize_side - self.center_crop_side) / 2
    }

    /// Largest random-crop offset inside the center crop.
    pub fn max_crop_offset(&self) -> usize {
        self.center_crop_side - self.crop_side
    }

    pub fn centered_offset(&self) -> (usize, usize) {
        let o = self.max_crop_offset() / 2;
        (o, o)
    }

    /// Frame from network-input pixels to raw pixels of an `h×w` image.
    pub fn frame(&self, h: usize, w: usize, crop_offset: (usize, usize)) -> CoordFrame {
        let su = w as f64 / self.resize_side as f64;
        let sv = h as f64 / self.resize_side as f64;
        let ou = (self.center_offset() + crop_offset.0) as f64;
        let ov = (self.center_offset() + crop_offset.1) as f64;
        CoordFrame::new(su, sv, (ou + 0.5) * su - 0.5, (ov + 0.5) * sv - 0.5)
    }
}

fn frame_grid(f: &CoordFrame) -> SampleGrid {
    SampleGrid {
        scale_y: f.scale_v,
        offset_y: f.offset_v,
        scale_x: f.scale_u,
        offset_x: f.offset_u,
    }
}

/// Resample raw `3×H×W` into the `3×S×S` network input; `crop_offset = None` centers the crop.
pub fn preprocess(raw: &Tensor<f32>, cfg: &PreprocessConfig, crop_offset: Option<(usize, usize)>) -> Result<(Tensor<f32>, CoordFrame)> {
    cfg.validate()?;
    let s = raw.shape();
    if s.len() != 3 {
        return Err(ZianError::Config(format!("raw image must be C×H×W, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let offset = crop_offset.unwrap_or_else(|| cfg.centered_offset());
    if offset.0 > cfg.max_crop_offset() || offset.1 > cfg.max_crop_offset() {
        return Err(ZianError::Invalid(format!("crop offset {offset:?} exceeds the center crop")));
    }
    let frame = cfg.frame(h, w, offset);
    let side = cfg.crop_side;
    let mut tape = Tape::new();
    let x = tape.constant(&raw.clone().reshape(vec![1, c, h, w])?);
    let y = tape.affine_sample(x, &[frame_grid(&frame)], side, side, Padding::Border)?;
    let out = tape.tensor(y).reshape(vec![c, side, side])?;
    Ok((out, frame))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A network input with its landmark in input coordinates.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// `3×S×S`.
    pub input: Tensor<f32>,
    pub landmark: (f64, f64),
    /// Input pixels → raw pixels.
    pub frame: CoordFrame,
    pub id: String,
    /// The landmark could not be kept inside a random crop; the centered crop was used.
    pub crop_fallback: bool,
}

pub const CROP_RETRIES: usize = 16;

/// Full chain for one sample. Train mode draws a random crop offset that keeps
/// the landmark inside (bounded retries, then the centered crop).
pub fn preprocess_chain<R: Rng>(raw: &Sample, cfg: &PreprocessConfig, mode: Mode, rng: &mut R) -> Result<Prepared> {
    let (offset, crop_fallback) = choose_offset(raw.landmark, raw.height(), raw.width(), cfg, mode, rng);
    let (input, frame) = preprocess(&raw.image, cfg, Some(offset))?;
    Ok(Prepared {
        input,
        landmark: frame.invert(raw.landmark),
        frame,
        id: raw.id.clone(),
        crop_fallback,
    })
}

fn choose_offset<R: Rng>(
    landmark: (f64, f64),
    h: usize,
    w: usize,
    cfg: &PreprocessConfig,
    mode: Mode,
    rng: &mut R,
) -> ((usize, usize), bool) {
    if mode == Mode::Eval {
        return (cfg.centered_offset(), false);
    }
    let m = cfg.max_crop_offset();
    for _ in 0..CROP_RETRIES {
        let o = (rng.random_range(0..=m), rng.random_range(0..=m));
        if inside(cfg.frame(h, w, o).invert(landmark), cfg.crop_side, cfg.crop_side) {
            return (o, false);
        }
    }
    log::warn!("landmark {landmark:?} left every random crop; using the centered crop");
    (cfg.centered_offset(), true)
}

/// Augmentation and the train-mode chain fused into one resampling of the raw
/// image (zero fill outside it). The returned frame maps input pixels to the
/// augmented raw image, in which the landmark is expressed.
pub fn preprocess_augmented<R: Rng>(
    raw: &Sample,
    aug: &AugmentParams,
    cfg: &PreprocessConfig,
    rng: &mut R,
) -> Result<Prepared> {
    cfg.validate()?;
    let (h, w) = (raw.height(), raw.width());
    let fwd = aug.forward_map(h, w);
    let landmark_aug = fwd.apply(raw.landmark);
    let (offset, crop_fallback) = choose_offset(landmark_aug, h, w, cfg, Mode::Train, rng);
    let frame = cfg.frame(h, w, offset);
    let side = cfg.crop_side;
    let input_to_raw = fwd.inverse().then(&Affine2::from_frame(&frame));
    let input = warp_affine(&raw.image, side, side, &input_to_raw);
    Ok(Prepared {
        input,
        landmark: frame.invert(landmark_aug),
        frame,
        id: raw.id.clone(),
        crop_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn raw(h: usize, w: usize) -> Sample {
        let data = (0..3 * h * w).map(|i| ((i * 7) % 113) as f32 / 113.0).collect();
        Sample {
            image: Tensor::new(vec![3, h, w], data).unwrap(),
            landmark: (w as f64 * 0.4, h as f64 * 0.6),
            id: "r".into(),
            source: Source::Synthetic,
        }
    }

    #[test]
    fn quarter_scale_chain_sides() {
        let cfg = PreprocessConfig::scaled(4.0);
        assert_eq!((cfg.resize_side, cfg.center_crop_side, cfg.crop_side), (266, 256, 224));
        assert_eq!(cfg.coarse_side(), 56);
        assert_eq!(PreprocessConfig::full_scale().coarse_side(), 224);
        assert_eq!(PreprocessConfig::default().coarse_side(), 64);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let s = raw(96, 80);
        let cfg = PreprocessConfig {
            resize_side: 76,
            center_crop_side: 72,
            crop_side: 64,
            coarse_factor: 4,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = preprocess_chain(&s, &cfg, Mode::Eval, &mut r1).unwrap();
        let b = preprocess_chain(&s, &cfg, Mode::Eval, &mut r2).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.landmark, b.landmark);
    }

    #[test]
    fn landmark_round_trip_matches_direct_arithmetic() {
        let s = raw(120, 90);
        let cfg = PreprocessConfig {
            resize_side: 100,
            center_crop_side: 90,
            crop_side: 80,
            coarse_factor: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = preprocess_chain(&s, &cfg, Mode::Train, &mut rng).unwrap();
            // Total crop offset recovered from the frame, then resize and crop by hand.
            let ou = ((p.frame.offset_u + 0.5) / p.frame.scale_u - 0.5).round();
            let ov = ((p.frame.offset_v + 0.5) / p.frame.scale_v - 0.5).round();
            assert!((5.0..=15.0).contains(&ou) && (5.0..=15.0).contains(&ov));
            let direct_u = (s.landmark.0 + 0.5) * 100.0 / 90.0 - 0.5 - ou;
            let direct_v = (s.landmark.1 + 0.5) * 100.0 / 120.0 - 0.5 - ov;
            assert!((p.landmark.0 - direct_u).abs() <= 1e-9);
            assert!((p.landmark.1 - direct_v).abs() <= 1e-9);
            let back = p.frame.apply(p.landmark);
            assert!((back.0 - s.landmark.0).abs() <= 1e-9 && (back.1 - s.landmark.1).abs() <= 1e-9);
        }
    }

    #[test]
    fn chain_equals_resize_then_crop() {
        let s = raw(40, 40);
        let cfg = PreprocessConfig {
            resize_side: 32,
            center_crop_side: 28,
            crop_side: 24,
            coarse_factor: 4,
        };
        let (input, _) = preprocess(&s.image, &cfg, Some((3, 1))).unwrap();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(&s.image.clone().reshape(vec![1, 3, 40, 40]).unwrap());
        let r = tape.bilinear_resize(x, 32, 32, false).unwrap();
        let resized = tape.tensor(r);
        let (cu, cv) = (2 + 3, 2 + 1);
        for ch in 0..3 {
            for y in 0..24 {
                for xx in 0..24 {
                    let a = input.data()[(ch * 24 + y) * 24 + xx];
                    let b = resized.data()[(ch * 32 + y + cv) * 32 + xx + cu];
                    assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn identity_augmentation_fuses_to_plain_chain() {
        let s = raw(64, 64);
        let cfg = PreprocessConfig {
            resize_side: 64,
            center_crop_side: 64,
            crop_side: 48,
            coarse_factor: 4,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = preprocess_augmented(&s, &AugmentParams::IDENTITY, &cfg, &mut r1).unwrap();
        let b = preprocess_chain(&s, &cfg, Mode::Train, &mut r2).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.landmark, b.landmark);
        for (x, y) in a.input.data().iter().zip(b.input.data()) {
            assert!((x - y).abs() <= 1e-5);
        }
    }

    #[test]
    fn invalid_sides_are_rejected() {
        let cfg = PreprocessConfig {
            resize_side: 100,
            center_crop_side: 120,
            crop_side: 80,
            coarse_factor: 4,
        };
        assert!(cfg.validate().is_err());
    }
}
