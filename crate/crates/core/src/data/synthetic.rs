//! Synthetic samples whose landmark is defined only by context: a point on the
//! segment between a bright and a dark blurred disk, over smooth texture, with
//! nothing at the landmark itself to give it away.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use zian_tensor::Tensor;

use super::{Sample, Source};
use crate::error::{Result, ZianError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Raw image side.
    pub side: usize,
    /// Landmark position along bright → dark center segment.
    pub fraction: f64,
    /// Landmark range as fractions of the side, per axis.
    pub landmark_range: (f64, f64),
    /// Disk radius range as fractions of the side.
    pub radius_range: (f64, f64),
    /// Center separation range as fractions of the side.
    pub separation_range: (f64, f64),
    /// Intensity offset of each disk over the background.
    pub contrast: f64,
    /// Logistic edge width in pixels.
    pub edge_blur: f64,
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            side: 384,
            fraction: 0.5,
            landmark_range: (0.2, 0.8),
            radius_range: (0.075, 0.11),
            separation_range: (0.30, 0.42),
            contrast: 0.2,
            edge_blur: 4.0,
            texture_amplitude: 0.05,
            noise_sigma: 0.02,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 32 {
            return Err(ZianError::Config(format!("synthetic side must be ≥ 32, got {}", self.side)));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && 0.0 <= a && a <= b;
        if !(0.0..=1.0).contains(&self.fraction)
            || !ordered(self.landmark_range)
            || self.landmark_range.1 > 1.0
            || !ordered(self.radius_range)
            || !ordered(self.separation_range)
            || self.edge_blur <= 0.0
        {
            return Err(ZianError::Config(format!("invalid synthetic config {self:?}")));
        }
        Ok(())
    }
}

/// Where the generator put things, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub landmark: (f64, f64),
    pub bright_center: (f64, f64),
    pub dark_center: (f64, f64),
    pub bright_radius: f64,
    pub dark_radius: f64,
}

const DIRECTION_TRIES: usize = 16;

fn layout(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Layout {
    let side = cfg.side as f64;
    let span = |r: &mut ChaCha8Rng, (a, b): (f64, f64)| if a == b { a } else { r.random_range(a..b) };
    let lu = span(rng, cfg.landmark_range) * side;
    let lv = span(rng, cfg.landmark_range) * side;
    let sep = span(rng, cfg.separation_range) * side;
    let bright_radius = span(rng, cfg.radius_range) * side;
    let dark_radius = span(rng, cfg.radius_range) * side;
    let ends = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let a = (lu - cfg.fraction * sep * c, lv - cfg.fraction * sep * s);
        let b = (lu + (1.0 - cfg.fraction) * sep * c, lv + (1.0 - cfg.fraction) * sep * s);
        (a, b)
    };
    let margin = |p: (f64, f64)| p.0.min(p.1).min(side - 1.0 - p.0).min(side - 1.0 - p.1);
    // Keep both centers inside the image; otherwise take the best direction seen.
    let mut best = (f64::NEG_INFINITY, 0.0);
    for _ in 0..DIRECTION_TRIES {
        let theta = rng.random_range(0.0..2.0 * PI);
        let (a, b) = ends(theta);
        let m = margin(a).min(margin(b));
        if m >= 0.0 {
            best = (m, theta);
            break;
        }
        if m > best.0 {
            best = (m, theta);
        }
    }
    let (bright_center, dark_center) = ends(best.1);
    Layout {
        landmark: (lu, lv),
        bright_center,
        dark_center,
        bright_radius,
        dark_radius,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic in `seed`.
pub fn generate_with_layout(seed: u64, cfg: &SyntheticConfig) -> Result<(Sample, Layout)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = layout(&mut rng, cfg);
    let n = cfg.side;
    let side = n as f64;

    // Separable texture: a few random sines per axis.
    let mut row_tex = vec![0.0f64; n];
    let mut col_tex = vec![0.0f64; n];
    for tex in [&mut row_tex, &mut col_tex] {
        for _ in 0..3 {
            let cycles = rng.random_range(1.0..6.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.3..1.0) / 3.0;
            for (i, t) in tex.iter_mut().enumerate() {
                *t += amp * (2.0 * PI * cycles * i as f64 / side + phase).sin();
            }
        }
    }
    let base = rng.random_range(0.35..0.45);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");

    let mut shade = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            let (u, v) = (c as f64, r as f64);
            let disk = |center: (f64, f64), radius: f64| {
                let d = ((u - center.0).powi(2) + (v - center.1).powi(2)).sqrt();
                logistic((radius - d) / cfg.edge_blur)
            };
            shade[r * n + c] = base
                + cfg.texture_amplitude * (row_tex[r] + col_tex[c])
                + cfg.contrast * (disk(lay.bright_center, lay.bright_radius) - disk(lay.dark_center, lay.dark_radius));
        }
    }
    let mut data = vec![0.0f32; 3 * n * n];
    for (ch, t) in tint.iter().enumerate() {
        for (i, s) in shade.iter().enumerate() {
            data[ch * n * n + i] = (s + t + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    let sample = Sample {
        image: Tensor::new(vec![3, n, n], data)?,
        landmark: lay.landmark,
        id: format!("syn{seed:06}"),
        source: Source::Synthetic,
    };
    Ok((sample, lay))
}

pub fn generate_synthetic_sample(seed: u64, cfg: &SyntheticConfig) -> Result<Sample> {
    generate_with_layout(seed, cfg).map(|(s, _)| s)
}

/// `count` samples from consecutive seeds starting at `first_seed`.
pub fn generate_set(first_seed: u64, count: usize, cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    (0..count as u64).map(|i| generate_synthetic_sample(first_seed + i, cfg)).collect()
}
