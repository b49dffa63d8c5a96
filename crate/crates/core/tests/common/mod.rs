#![allow(dead_code)]

use zian_core::attention::AttentionConfig;
use zian_core::backbone::BackboneConfig;
use zian_core::config::ExperimentConfig;
use zian_core::data::preprocess::PreprocessConfig;
use zian_core::data::synthetic::SyntheticConfig;
use zian_core::zian::{Ablation, RoiConfig};

pub const ACCEPTANCE_TOML: &str = include_str!("../../../../configs/acceptance.toml");

pub fn acceptance_config() -> ExperimentConfig {
    ExperimentConfig::from_toml(ACCEPTANCE_TOML).expect("acceptance config parses")
}

/// Two epochs on four 80×80 images with a 64×64 input.
pub fn tiny_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 3,
        ablation: Some(Ablation::Full),
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = 2;
    cfg.train.batch_size = 2;
    cfg.train.lr_drop_epoch = Some(1);
    cfg.data.train_count = 4;
    cfg.data.test_count = 3;
    cfg.data.synthetic = SyntheticConfig {
        side: 80,
        ..SyntheticConfig::default()
    };
    cfg.preprocess = PreprocessConfig {
        resize_side: 72,
        center_crop_side: 68,
        crop_side: 64,
        coarse_factor: 4,
    };
    cfg.backbone = BackboneConfig {
        channels: vec![2, 3, 3],
        num_stages: 3,
        feature_channels: 2,
        output_stride: 4,
        in_channels: 3,
    };
    cfg.attention = AttentionConfig {
        enable_co_attention: true,
        enable_self_attention: true,
        m: 4,
        d: 8,
        heads: 2,
    };
    cfg.model.input_side = 64;
    cfg.model.roi = RoiConfig {
        scales: vec![1.0, 2.0],
        base_side: 16,
        fine_input_side: 16,
    };
    cfg
}

/// Bilinear sample of channel `c` of a `C×H×W` image at `(u, v)`, zero outside.
pub fn bilinear_zero(data: &[f32], h: usize, w: usize, c: usize, (u, v): (f64, f64)) -> f64 {
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            data[(c * h + y as usize) * w + x as usize] as f64
        }
    };
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
}
