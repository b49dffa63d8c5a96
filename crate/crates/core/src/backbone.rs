//! Small conv–batchnorm–ReLU pyramid with one upsampling merge.
//!
//! Stage 0 keeps the input resolution; every further stage halves it, so the
//! output stride is `2^(num_stages-1)`. One extra stride-2 block is upsampled
//! back and merged with the last stage to produce the feature map `V`, and a
//! 1×1 convolution turns `V` into heatmap logits.

use serde::{Deserialize, Serialize};
use zian_tensor::{ParamStore, Real, Var};

use crate::error::{Result, ZianError};
use crate::heatmap::CoordFrame;
use crate::nn::{Conv, ConvBnRelu, Ctx, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Width of each stage.
    pub channels: Vec<usize>,
    pub num_stages: usize,
    /// Channels of the feature map `V`.
    pub feature_channels: usize,
    pub output_stride: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

fn default_in_channels() -> usize {
    3
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 32],
            num_stages: 3,
            feature_channels: 32,
            output_stride: 4,
            in_channels: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ZianError::Config(format!("backbone: {msg}")));
        if self.num_stages == 0 || self.channels.len() != self.num_stages {
            return bad(format!(
                "num_stages = {} but {} channel widths given",
                self.num_stages,
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) || self.feature_channels == 0 || self.in_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.output_stride != 1 << (self.num_stages - 1) {
            return bad(format!(
                "output_stride {} does not match {} stages (expected {})",
                self.output_stride,
                self.num_stages,
                1usize << (self.num_stages - 1)
            ));
        }
        Ok(())
    }

    /// Reject input sizes the pyramid cannot process exactly.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let s = self.output_stride;
        for (size, what) in [(height, "backbone input height"), (width, "backbone input width")] {
            if size == 0 || size % s != 0 {
                return Err(ZianError::Indivisible {
                    what,
                    size,
                    multiple: s,
                });
            }
        }
        Ok(())
    }

    /// Frame of the output grid relative to the input grid.
    pub fn output_frame(&self) -> CoordFrame {
        CoordFrame::downsample(self.output_stride as f64)
    }

    /// Parameter count from layer shapes alone.
    pub fn closed_form_param_count(&self) -> usize {
        let ch = &self.channels;
        let last = ch[self.num_stages - 1];
        let mut total = ConvBnRelu::param_count(self.in_channels, ch[0], 3);
        for k in 1..self.num_stages {
            total += ConvBnRelu::param_count(ch[k - 1], ch[k], 3);
        }
        total += ConvBnRelu::param_count(last, last, 3);
        total += ConvBnRelu::param_count(2 * last, self.feature_channels, 3);
        total + Conv::param_count(self.feature_channels, 1, 1, true)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    stages: Vec<ConvBnRelu>,
    deep: ConvBnRelu,
    merge: ConvBnRelu,
    pub head: Conv,
}

pub struct BackboneOutput {
    /// `N×C×H/s×W/s`.
    pub features: Var,
    /// `N×1×H/s×W/s`.
    pub logits: Var,
}

impl Backbone {
    pub fn build<T: Real>(init: &mut Init<'_, T>, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let ch = &config.channels;
        let mut stages = Vec::with_capacity(config.num_stages);
        for k in 0..config.num_stages {
            let (cin, stride) = if k == 0 { (config.in_channels, 1) } else { (ch[k - 1], 2) };
            stages.push(ConvBnRelu::new(&mut init.child(&format!("stage{k}")), cin, ch[k], 3, stride)?);
        }
        let last = ch[config.num_stages - 1];
        let deep = ConvBnRelu::new(&mut init.child("deep"), last, last, 3, 2)?;
        let merge = ConvBnRelu::new(&mut init.child("merge"), 2 * last, config.feature_channels, 3, 1)?;
        let head = Conv::new(&mut init.child("head"), config.feature_channels, 1, 1, 1, true, 1.0)?;
        Ok(Self {
            config: config.clone(),
            stages,
            deep,
            merge,
            head,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<BackboneOutput> {
        let features = self.features(ctx, image)?;
        let logits = self.head.forward(ctx, features)?;
        ctx.check_finite(logits, "backbone head")?;
        Ok(BackboneOutput { features, logits })
    }

    pub fn features<T: Real>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        let shape = ctx.tape.shape(image).to_vec();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(ZianError::Config(format!(
                "backbone expects N×{}×H×W input, got {shape:?}",
                self.config.in_channels
            )));
        }
        self.config.check_input(shape[2], shape[3])?;
        let mut x = image;
        for stage in &self.stages {
            x = stage.forward(ctx, x)?;
        }
        let (h, w) = (ctx.tape.shape(x)[2], ctx.tape.shape(x)[3]);
        let deep = self.deep.forward(ctx, x)?;
        let up = ctx.tape.bilinear_resize(deep, h, w, false)?;
        let cat = ctx.tape.concat(&[x, up], 1)?;
        let v = self.merge.forward(ctx, cat)?;
        ctx.check_finite(v, "backbone")?;
        Ok(v)
    }
}

/// Build a backbone in its own parameter store, all names prefixed with `backbone`.
pub fn build_backbone<T: Real>(config: &BackboneConfig, seed: u64) -> Result<(Backbone, ParamStore<T>)> {
    let mut store = ParamStore::new();
    let bb = Backbone::build(&mut Init::new(&mut store, seed).child("backbone"), config)?;
    Ok((bb, store))
}
