//! The zoom-in pipeline: coarse pass, multi-scale ROI crops around the coarse
//! peak, per-ROI backbones, co-attention, fusion with coarse features and the
//! fine head, plus the three-term heatmap loss and prediction decoding.
//!
//! All frames here map grids to the coordinates of the network input image
//! (the preprocessed crop); [`predict`] maps the result back to raw pixels.

use serde::{Deserialize, Serialize};
use zian_tensor::{Padding, ParamStore, Real, SampleGrid, Tape, Tensor, Var};

use crate::attention::{roi_heatmap_head, AttentionConfig, CoAttention, FineHead, Fusion, CO_ATTENTION_DOWNSAMPLE};
use crate::backbone::{Backbone, BackboneConfig};
use crate::data::preprocess::{preprocess, PreprocessConfig};
use crate::error::{Result, ZianError};
use crate::heatmap::{gaussian_target_in_frame, peak_coords, CoordFrame, Heatmap};
use crate::nn::{Ctx, Init};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiConfig {
    /// Window side multipliers, strictly increasing.
    pub scales: Vec<f64>,
    /// Side of the ×1 window in input pixels.
    pub base_side: usize,
    /// Side every window is resampled to before its backbone.
    pub fine_input_side: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0, 2.0],
            base_side: 32,
            fine_input_side: 32,
        }
    }
}

/// ROI windows around one center.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSpec {
    pub center: (f64, f64),
    pub scales: Vec<f64>,
    pub base_side: usize,
    pub fine_input_side: usize,
}

impl RoiSpec {
    pub fn new(center: (f64, f64), cfg: &RoiConfig) -> Self {
        Self {
            center,
            scales: cfg.scales.clone(),
            base_side: cfg.base_side,
            fine_input_side: cfg.fine_input_side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.25,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Stop after the coarse pass.
    #[serde(default)]
    pub coarse_only: bool,
    /// Side of the square network input.
    pub input_side: usize,
    /// The coarse pass sees the input downsampled by this factor.
    #[serde(default = "default_coarse_downsample")]
    pub coarse_downsample: usize,
    #[serde(default)]
    pub roi: RoiConfig,
    #[serde(default)]
    pub loss: LossWeights,
    /// Gaussian target radius, in cells of each head's grid.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Give every ROI branch the same initial weights and start the co-attention form at identity.
    #[serde(default)]
    pub symmetric_roi_init: bool,
}

fn default_coarse_downsample() -> usize {
    4
}

fn default_delta() -> f64 {
    2.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            coarse_only: false,
            input_side: 256,
            coarse_downsample: 4,
            roi: RoiConfig::default(),
            loss: LossWeights::default(),
            delta: 2.0,
            symmetric_roi_init: false,
        }
    }
}

/// Architecture rows of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    BackboneOnly,
    OneRoi,
    OneRoiSa,
    MultiRoiSa,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::BackboneOnly,
        Ablation::OneRoi,
        Ablation::OneRoiSa,
        Ablation::MultiRoiSa,
        Ablation::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::BackboneOnly => "backbone-only",
            Ablation::OneRoi => "+1ROI",
            Ablation::OneRoiSa => "+1ROI+SA",
            Ablation::MultiRoiSa => "+MR+SA",
            Ablation::Full => "full",
        }
    }

    /// Set the structural flags of `cfg` to this row. Multi-ROI rows keep the
    /// configured scales (×1 and ×2 by default); single-ROI rows keep the first.
    pub fn apply(self, cfg: &mut ZianConfig) {
        let (coarse_only, multi, sa, co) = match self {
            Ablation::BackboneOnly => (true, false, false, false),
            Ablation::OneRoi => (false, false, false, false),
            Ablation::OneRoiSa => (false, false, true, false),
            Ablation::MultiRoiSa => (false, true, true, false),
            Ablation::Full => (false, true, true, true),
        };
        cfg.model.coarse_only = coarse_only;
        if !multi {
            cfg.model.roi.scales.truncate(1);
        } else if cfg.model.roi.scales.len() < 2 {
            let first = cfg.model.roi.scales.first().copied().unwrap_or(1.0);
            cfg.model.roi.scales = vec![first, 2.0 * first];
        }
        cfg.attention.enable_self_attention = sa;
        cfg.attention.enable_co_attention = co;
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Ablation {
    type Err = ZianError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| {
                a.label().eq_ignore_ascii_case(s)
                    || serde_json::to_value(a).ok().and_then(|v| v.as_str().map(|x| x == s)) == Some(true)
            })
            .ok_or_else(|| ZianError::Config(format!("unknown ablation {s:?}")))
    }
}

/// Everything that determines the network's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZianConfig {
    pub backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub model: ModelConfig,
}

impl Default for ZianConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            attention: AttentionConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl ZianConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        ablation.apply(&mut self);
        self
    }

    pub fn ablation(&self) -> Option<Ablation> {
        let m = &self.model;
        let a = &self.attention;
        if m.coarse_only {
            return Some(Ablation::BackboneOnly);
        }
        match (m.roi.scales.len(), a.enable_self_attention, a.enable_co_attention) {
            (1, false, false) => Some(Ablation::OneRoi),
            (1, true, false) => Some(Ablation::OneRoiSa),
            (2, true, false) => Some(Ablation::MultiRoiSa),
            (2, true, true) => Some(Ablation::Full),
            _ => None,
        }
    }

    pub fn num_rois(&self) -> usize {
        if self.model.coarse_only {
            0
        } else {
            self.model.roi.scales.len()
        }
    }

    pub fn coarse_input_side(&self) -> usize {
        self.model.input_side / self.model.coarse_downsample
    }

    /// Side of the ROI feature maps (and of the fine heatmap).
    pub fn fine_grid_side(&self) -> usize {
        self.model.roi.fine_input_side / self.backbone.output_stride
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.attention.validate()?;
        let m = &self.model;
        let bad = |msg: String| Err(ZianError::Config(msg));
        if m.coarse_downsample == 0 || m.input_side == 0 || m.input_side % m.coarse_downsample != 0 {
            return bad(format!(
                "input side {} must be a positive multiple of the coarse downsample factor {}",
                m.input_side, m.coarse_downsample
            ));
        }
        let coarse = self.coarse_input_side();
        self.backbone.check_input(coarse, coarse)?;
        if !(m.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", m.delta));
        }
        let w = &m.loss;
        if !(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0) {
            return bad(format!("loss weights must be non-negative, got {w:?}"));
        }
        if m.coarse_only {
            return Ok(());
        }
        let roi = &m.roi;
        if roi.scales.is_empty() {
            return bad("at least one ROI scale is required".into());
        }
        if roi.scales.iter().any(|&s| !(s > 0.0)) || roi.scales.windows(2).any(|p| p[1] <= p[0]) {
            return bad(format!("ROI scales must be positive and strictly increasing, got {:?}", roi.scales));
        }
        if roi.base_side == 0 {
            return bad("ROI base side must be positive".into());
        }
        self.backbone.check_input(roi.fine_input_side, roi.fine_input_side)?;
        if self.attention.enable_co_attention {
            if roi.scales.len() != 2 {
                return bad(format!(
                    "co-attention needs exactly two ROIs, {} configured",
                    roi.scales.len()
                ));
            }
            let g = self.fine_grid_side();
            if g % CO_ATTENTION_DOWNSAMPLE != 0 {
                return Err(ZianError::Indivisible {
                    what: "ROI feature side for co-attention",
                    size: g,
                    multiple: CO_ATTENTION_DOWNSAMPLE,
                });
            }
        }
        Ok(())
    }
}

/// Resampling grid and frame of one square window of side `side` centered at `center`,
/// resampled to `out` pixels per side. The window covers `[c - side/2, c + side/2)`.
pub fn roi_window(center: (f64, f64), side: f64, out: usize) -> (SampleGrid, CoordFrame) {
    let step = side / out as f64;
    let ou = center.0 - 0.5 * side + 0.5 * step - 0.5;
    let ov = center.1 - 0.5 * side + 0.5 * step - 0.5;
    let grid = SampleGrid {
        scale_y: step,
        offset_y: ov,
        scale_x: step,
        offset_x: ou,
    };
    (grid, CoordFrame::uniform(step, ou, ov))
}

/// One resampled ROI window of a single image.
#[derive(Debug, Clone)]
pub struct RoiCrop<T: Real> {
    /// `1×C×F×F`.
    pub image: Tensor<T>,
    pub frame: CoordFrame,
    /// The center lies outside the image; the window is (mostly) padding.
    pub off_image: bool,
}

fn center_off_image(center: (f64, f64), h: usize, w: usize) -> bool {
    !(center.0 >= -0.5 && center.0 < w as f64 - 0.5 && center.1 >= -0.5 && center.1 < h as f64 - 0.5)
}

/// Crop and resample every ROI window of `spec` from a `C×H×W` (or `1×C×H×W`) image, zero-padded.
pub fn crop_rois<T: Real>(image: &Tensor<T>, spec: &RoiSpec) -> Result<Vec<RoiCrop<T>>> {
    let shape = image.shape();
    let (c, h, w) = match shape.len() {
        3 => (shape[0], shape[1], shape[2]),
        4 if shape[0] == 1 => (shape[1], shape[2], shape[3]),
        _ => {
            return Err(ZianError::Config(format!(
                "crop_rois expects C×H×W or 1×C×H×W, got {shape:?}"
            )))
        }
    };
    if !(spec.center.0.is_finite() && spec.center.1.is_finite()) {
        return Err(ZianError::Invalid(format!("ROI center {:?} is not finite", spec.center)));
    }
    let off_image = center_off_image(spec.center, h, w);
    if off_image {
        log::warn!("ROI center {:?} lies outside the {h}×{w} image", spec.center);
    }
    let x = image.clone().reshape(vec![1, c, h, w])?;
    let f = spec.fine_input_side;
    spec.scales
        .iter()
        .map(|&s| {
            let (grid, frame) = roi_window(spec.center, spec.base_side as f64 * s, f);
            let mut tape = Tape::new();
            let xv = tape.constant(&x);
            let y = tape.affine_sample(xv, &[grid], f, f, Padding::Zeros)?;
            Ok(RoiCrop {
                image: tape.tensor(y),
                frame,
                off_image,
            })
        })
        .collect()
}

/// Sample `N×C×h×w` coarse features (grid frame `coarse`) at the cells of each
/// sample's ROI frame, clamping at the border.
pub fn crop_coarse_features<T: Real>(
    tape: &mut Tape<T>,
    coarse_features: Var,
    coarse: CoordFrame,
    roi_frames: &[CoordFrame],
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    if out_h == 0 || out_w == 0 || !coarse.is_valid() || roi_frames.iter().any(|f| !f.is_valid()) {
        return Err(ZianError::Invalid("degenerate ROI for coarse feature cropping".into()));
    }
    let grids: Vec<SampleGrid> = roi_frames
        .iter()
        .map(|r| SampleGrid {
            scale_y: r.scale_v / coarse.scale_v,
            offset_y: (r.offset_v - coarse.offset_v) / coarse.scale_v,
            scale_x: r.scale_u / coarse.scale_u,
            offset_x: (r.offset_u - coarse.offset_u) / coarse.scale_u,
        })
        .collect();
    Ok(tape.affine_sample(coarse_features, &grids, out_h, out_w, Padding::Border)?)
}

#[derive(Debug, Clone)]
pub struct ZianModel {
    pub config: ZianConfig,
    pub coarse: Backbone,
    pub rois: Vec<Backbone>,
    pub co_attention: Option<CoAttention>,
    pub fusion: Option<Fusion>,
    pub fine_head: Option<FineHead>,
}

/// Per-sample geometry of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrames {
    pub coarse: CoordFrame,
    /// Crop center (the coarse peak), in input coordinates.
    pub center: (f64, f64),
    pub center_off_image: bool,
    /// Frames of the resampled ROI images.
    pub roi_images: Vec<CoordFrame>,
    /// Frames of the ROI feature maps and ROI heatmaps.
    pub roi_heatmaps: Vec<CoordFrame>,
    /// Frame of the fine heatmap (the ×1 ROI heatmap frame).
    pub fine: Option<CoordFrame>,
}

/// Tape handles of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `N×1×h×w` coarse logits.
    pub coarse: Var,
    /// One `N×1×g×g` map per ROI.
    pub rois: Vec<Var>,
    pub fine: Option<Var>,
    pub frames: Vec<SampleFrames>,
}

/// Decoded outputs for one image.
#[derive(Debug, Clone)]
pub struct ZianOutputs {
    pub coarse_hm: Heatmap,
    pub roi_hms: Vec<Heatmap>,
    pub fine_hm: Option<Heatmap>,
    /// Final prediction in input coordinates.
    pub pred: (f64, f64),
    pub coarse_pred: (f64, f64),
    /// The fine heatmap was flat and the coarse peak was used instead.
    pub fell_back: bool,
    pub frames: SampleFrames,
}

impl ZianModel {
    pub fn build<T: Real>(config: &ZianConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = Self::build_into(&mut Init::new(&mut store, seed), config)?;
        Ok((model, store))
    }

    pub fn build_into<T: Real>(init: &mut Init<'_, T>, config: &ZianConfig) -> Result<Self> {
        config.validate()?;
        let coarse = Backbone::build(&mut init.child("coarse"), &config.backbone)?;
        let nroi = config.num_rois();
        let sym = config.model.symmetric_roi_init;
        let mut rois = Vec::with_capacity(nroi);
        for k in 0..nroi {
            let name = format!("roi{k}");
            let key = if sym { "roi".to_string() } else { name.clone() };
            rois.push(Backbone::build(&mut init.child_keyed(&name, &key), &config.backbone)?);
        }
        let c = config.backbone.feature_channels;
        let co_attention = if nroi > 0 && config.attention.enable_co_attention {
            Some(CoAttention::new(&mut init.child("co_attention"), c, sym)?)
        } else {
            None
        };
        let (fusion, fine_head) = if nroi > 0 {
            let sa = config.attention.enable_self_attention;
            let in_ch = nroi * c + if sa { c } else { 0 };
            let g = config.fine_grid_side();
            let fusion = Fusion::new(&mut init.child("fusion"), in_ch, (g, g), &config.attention, sa)?;
            let head = FineHead::new(&mut init.child("fine_head"), config.attention.d)?;
            (Some(fusion), Some(head))
        } else {
            (None, None)
        };
        Ok(Self {
            config: config.clone(),
            coarse,
            rois,
            co_attention,
            fusion,
            fine_head,
        })
    }

    /// Frame of the coarse heatmap in input coordinates.
    pub fn coarse_frame(&self) -> CoordFrame {
        CoordFrame::downsample(self.config.model.coarse_downsample as f64).then(&self.config.backbone.output_frame())
    }

    /// Run the network on `N×3×S×S` input images.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, images: Var) -> Result<ForwardPass> {
        let shape = ctx.tape.shape(images).to_vec();
        let side = self.config.model.input_side;
        if shape.len() != 4 || shape[2] != side || shape[3] != side {
            return Err(ZianError::Config(format!(
                "model expects N×C×{side}×{side} input, got {shape:?}"
            )));
        }
        let n = shape[0];
        let cs = self.config.coarse_input_side();
        let coarse_in = ctx.tape.bilinear_resize(images, cs, cs, false)?;
        let coarse_out = self.coarse.forward(ctx, coarse_in)?;
        let coarse_frame = self.coarse_frame();
        let ch = ctx.tape.shape(coarse_out.logits)[2];
        let cw = ctx.tape.shape(coarse_out.logits)[3];

        let mut frames: Vec<SampleFrames> = (0..n)
            .map(|i| {
                let hm = slice_heatmap(ctx.tape, coarse_out.logits, i, coarse_frame);
                let p = peak_coords(&hm);
                SampleFrames {
                    coarse: coarse_frame,
                    center: (p.u, p.v),
                    center_off_image: center_off_image((p.u, p.v), side, side),
                    roi_images: Vec::new(),
                    roi_heatmaps: Vec::new(),
                    fine: None,
                }
            })
            .collect();
        debug_assert!(ch * cw > 0);

        if self.rois.is_empty() {
            return Ok(ForwardPass {
                coarse: coarse_out.logits,
                rois: Vec::new(),
                fine: None,
                frames,
            });
        }

        let roi_cfg = &self.config.model.roi;
        let f = roi_cfg.fine_input_side;
        let bb_frame = self.config.backbone.output_frame();
        let mut features = Vec::with_capacity(self.rois.len());
        for (k, branch) in self.rois.iter().enumerate() {
            let side_k = roi_cfg.base_side as f64 * roi_cfg.scales[k];
            let mut grids = Vec::with_capacity(n);
            for fr in frames.iter_mut() {
                let (grid, frame) = roi_window(fr.center, side_k, f);
                grids.push(grid);
                fr.roi_images.push(frame);
                fr.roi_heatmaps.push(frame.then(&bb_frame));
            }
            let crop = ctx.tape.affine_sample(images, &grids, f, f, Padding::Zeros)?;
            features.push(branch.features(ctx, crop)?);
        }

        if let Some(co) = &self.co_attention {
            let (a, b) = co.forward(ctx, features[0], features[1])?;
            features[0] = a;
            features[1] = b;
        }
        let mut rois = Vec::with_capacity(self.rois.len());
        for (branch, &v) in self.rois.iter().zip(&features) {
            rois.push(roi_heatmap_head(ctx, v, &branch.head)?);
        }

        let g = self.config.fine_grid_side();
        let fine_frames: Vec<CoordFrame> = frames.iter().map(|fr| fr.roi_heatmaps[0]).collect();
        let mut fusion_in = features.clone();
        let fusion = self.fusion.as_ref().expect("fusion exists with ROIs");
        if fusion.blocks.is_some() {
            let vg = crop_coarse_features(ctx.tape, coarse_out.features, coarse_frame, &fine_frames, g, g)?;
            fusion_in.push(vg);
        }
        let x = fusion.forward(ctx, &fusion_in)?;
        let fine = self.fine_head.as_ref().expect("fine head exists with ROIs").forward(ctx, x)?;
        for (fr, ff) in frames.iter_mut().zip(fine_frames) {
            fr.fine = Some(ff);
        }
        Ok(ForwardPass {
            coarse: coarse_out.logits,
            rois,
            fine: Some(fine),
            frames,
        })
    }

    /// Per-image heatmaps and predictions (input coordinates) of a forward pass.
    pub fn decode<T: Real>(&self, tape: &Tape<T>, pass: &ForwardPass) -> Vec<ZianOutputs> {
        pass.frames
            .iter()
            .enumerate()
            .map(|(i, fr)| {
                let coarse_hm = slice_heatmap(tape, pass.coarse, i, fr.coarse);
                let roi_hms = pass
                    .rois
                    .iter()
                    .zip(&fr.roi_heatmaps)
                    .map(|(&v, &frame)| slice_heatmap(tape, v, i, frame))
                    .collect();
                let fine_hm = pass.fine.map(|v| slice_heatmap(tape, v, i, fr.fine.expect("fine frame")));
                let cp = peak_coords(&coarse_hm);
                let coarse_pred = (cp.u, cp.v);
                let (pred, fell_back) = decode_prediction(fine_hm.as_ref(), coarse_pred);
                ZianOutputs {
                    coarse_hm,
                    roi_hms,
                    fine_hm,
                    pred,
                    coarse_pred,
                    fell_back,
                    frames: fr.clone(),
                }
            })
            .collect()
    }
}

/// Fine peak, or the coarse prediction when there is no fine head or its map is flat.
pub fn decode_prediction(fine: Option<&Heatmap>, coarse_pred: (f64, f64)) -> ((f64, f64), bool) {
    match fine {
        None => (coarse_pred, false),
        Some(hm) => {
            let p = peak_coords(hm);
            if p.degenerate {
                log::warn!("flat fine heatmap; falling back to the coarse prediction");
                (coarse_pred, true)
            } else {
                ((p.u, p.v), false)
            }
        }
    }
}

fn slice_heatmap<T: Real>(tape: &Tape<T>, v: Var, i: usize, frame: CoordFrame) -> Heatmap {
    let s = tape.shape(v);
    let (h, w) = (s[2], s[3]);
    let vals = tape.value(v)[i * h * w..(i + 1) * h * w].iter().map(|x| x.as_f64()).collect();
    Heatmap::new(h, w, vals, frame).expect("network outputs are checked finite")
}

/// Per-term values of the loss, for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub coarse: f64,
    pub rois: Vec<f64>,
    pub fine: Option<f64>,
    pub total: f64,
}

/// `α·L_coarse + β·ΣL_roi + γ·L_fine`.
pub fn combine_losses(w: &LossWeights, coarse: f64, roi_sum: f64, fine: f64) -> f64 {
    w.alpha * coarse + w.beta * roi_sum + w.gamma * fine
}

/// Gaussian targets for every head of a forward pass, as `N×1×h×w` tensors.
pub fn render_targets<T: Real>(
    tape: &Tape<T>,
    pass: &ForwardPass,
    gts: &[(f64, f64)],
    delta: f64,
) -> (Tensor<T>, Vec<Tensor<T>>, Option<Tensor<T>>) {
    let render = |v: Var, frame_of: &dyn Fn(&SampleFrames) -> CoordFrame| -> Tensor<T> {
        let s = tape.shape(v).to_vec();
        let (h, w) = (s[2], s[3]);
        let mut data = Vec::with_capacity(s[0] * h * w);
        for (fr, &gt) in pass.frames.iter().zip(gts) {
            let hm = gaussian_target_in_frame(gt, frame_of(fr), h, w, delta);
            data.extend(hm.values().iter().map(|&x| T::of(x)));
        }
        Tensor::new(s, data).expect("target shape matches head")
    };
    let coarse = render(pass.coarse, &|fr| fr.coarse);
    let rois = pass
        .rois
        .iter()
        .enumerate()
        .map(|(k, &v)| render(v, &|fr| fr.roi_heatmaps[k]))
        .collect();
    let fine = pass.fine.map(|v| render(v, &|fr| fr.fine.expect("fine frame")));
    (coarse, rois, fine)
}

/// Three-term heatmap regression loss against landmarks `gts` (input coordinates).
pub fn zian_loss<T: Real>(
    tape: &mut Tape<T>,
    pass: &ForwardPass,
    gts: &[(f64, f64)],
    weights: &LossWeights,
    delta: f64,
) -> Result<(Var, LossParts)> {
    if gts.len() != pass.frames.len() {
        return Err(ZianError::LengthMismatch {
            preds: pass.frames.len(),
            gts: gts.len(),
        });
    }
    if gts.iter().any(|g| !(g.0.is_finite() && g.1.is_finite())) {
        return Err(ZianError::Invalid("ground-truth landmark is not finite".into()));
    }
    let (gc, grois, gfine) = render_targets(tape, pass, gts, delta);
    let tc = tape.constant(&gc);
    let lc = tape.mse_loss(pass.coarse, tc)?;
    let mut total = tape.scale(lc, T::of(weights.alpha));
    let mut parts = LossParts {
        coarse: tape.item(lc).as_f64(),
        rois: Vec::new(),
        fine: None,
        total: 0.0,
    };
    for (&v, g) in pass.rois.iter().zip(&grois) {
        let t = tape.constant(g);
        let l = tape.mse_loss(v, t)?;
        parts.rois.push(tape.item(l).as_f64());
        let term = tape.scale(l, T::of(weights.beta));
        total = tape.add(total, term)?;
    }
    if let (Some(v), Some(g)) = (pass.fine, gfine) {
        let t = tape.constant(&g);
        let l = tape.mse_loss(v, t)?;
        parts.fine = Some(tape.item(l).as_f64());
        let term = tape.scale(l, T::of(weights.gamma));
        total = tape.add(total, term)?;
    }
    parts.total = tape.item(total).as_f64();
    if !parts.total.is_finite() {
        return Err(ZianError::NonFinite { module: "loss" });
    }
    Ok((total, parts))
}

/// A prediction in raw-image pixels.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub u: f64,
    pub v: f64,
    pub coarse_u: f64,
    pub coarse_v: f64,
    pub fell_back: bool,
    /// Frame of the network input in raw pixels.
    pub input_frame: CoordFrame,
    pub outputs: ZianOutputs,
}

/// Run the model in eval mode on preprocessed `3×S×S` inputs and map predictions
/// through each input's frame back to raw pixels.
pub fn predict_inputs<T: Real>(
    model: &ZianModel,
    store: &mut ParamStore<T>,
    inputs: &[(Tensor<T>, CoordFrame)],
) -> Result<Vec<Prediction>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let shape = inputs[0].0.shape().to_vec();
    let mut data = Vec::with_capacity(inputs.len() * inputs[0].0.len());
    for (x, _) in inputs {
        if x.shape() != shape.as_slice() {
            return Err(ZianError::Config("prediction inputs must share a shape".into()));
        }
        data.extend_from_slice(x.data());
    }
    let mut batch_shape = vec![inputs.len()];
    batch_shape.extend_from_slice(&shape);
    let batch = Tensor::new(batch_shape, data)?;
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let x = tape.constant(&batch);
    let mut ctx = Ctx {
        tape: &mut tape,
        binding: &binding,
        store,
        train: false,
    };
    let pass = model.forward(&mut ctx, x)?;
    let outputs = model.decode(&tape, &pass);
    Ok(outputs
        .into_iter()
        .zip(inputs)
        .map(|(out, (_, frame))| {
            let (u, v) = frame.apply(out.pred);
            let (coarse_u, coarse_v) = frame.apply(out.coarse_pred);
            Prediction {
                u,
                v,
                coarse_u,
                coarse_v,
                fell_back: out.fell_back,
                input_frame: *frame,
                outputs: out,
            }
        })
        .collect())
}

/// Preprocess a raw `3×H×W` image (eval mode) and predict its landmark in raw pixels.
pub fn predict<T: Real>(
    model: &ZianModel,
    store: &mut ParamStore<T>,
    raw: &Tensor<f32>,
    pre: &PreprocessConfig,
) -> Result<Prediction> {
    let (input, frame) = preprocess(raw, pre, None)?;
    let mut preds = predict_inputs(model, store, &[(input.cast::<T>(), frame)])?;
    Ok(preds.remove(0))
}
