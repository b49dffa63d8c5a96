//! ROI co-attention, self-attention fusion and the heatmap heads.

use serde::{Deserialize, Serialize};
use zian_tensor::{ParamId, Real, Tape, Tensor, Var};

use crate::error::{Result, ZianError};
use crate::nn::{Conv, ConvBnRelu, Ctx, Init, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub enable_co_attention: bool,
    pub enable_self_attention: bool,
    /// Number of inducing tokens in the squeezed block.
    #[serde(rename = "M")]
    pub m: usize,
    /// Token width.
    #[serde(rename = "D")]
    pub d: usize,
    pub heads: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            enable_co_attention: true,
            enable_self_attention: true,
            m: 16,
            d: 64,
            heads: 4,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(ZianError::Config(format!(
                "attention: D = {} must be a positive multiple of heads = {}",
                self.d, self.heads
            )));
        }
        if self.m == 0 {
            return Err(ZianError::Config("attention: M must be at least 1".into()));
        }
        Ok(())
    }
}

/// Intermediate products of the co-attention summaries, all flattened to `N×C×L` / `N×L×L`.
pub struct CoAttentionSummaries {
    /// `S = V_bᵀ W V_a`, `N×L×L`.
    pub similarity: Var,
    /// Column-softmax of `S`.
    pub attn_a: Var,
    /// Column-softmax of `Sᵀ`.
    pub attn_b: Var,
    /// `Z_a = V_a · Softmax(S)`.
    pub z_a: Var,
    /// `Z_b = V_b · Softmax(Sᵀ)`.
    pub z_b: Var,
}

/// Co-attention summaries of two flattened feature maps `N×C×L` and a `C×C` form `W`.
pub fn co_attention_summaries<T: Real>(tape: &mut Tape<T>, va: Var, vb: Var, w: Var) -> Result<CoAttentionSummaries> {
    let sa = tape.shape(va).to_vec();
    let sb = tape.shape(vb).to_vec();
    if sa != sb || sa.len() != 3 {
        return Err(ZianError::Config(format!(
            "co-attention needs two N×C×L maps of equal shape, got {sa:?} and {sb:?}"
        )));
    }
    let c = sa[1];
    if tape.shape(w) != [c, c] {
        return Err(ZianError::Config(format!(
            "co-attention form must be {c}×{c}, got {:?}",
            tape.shape(w)
        )));
    }
    let wb = tape.expand_leading(w, sa[0]);
    let wva = tape.matmul(wb, va)?;
    let similarity = tape.matmul_t(vb, wva, true, false)?;
    let attn_a = tape.softmax(similarity, 1)?;
    let st = tape.permute(similarity, &[0, 2, 1])?;
    let attn_b = tape.softmax(st, 1)?;
    let z_a = tape.matmul(va, attn_a)?;
    let z_b = tape.matmul(vb, attn_b)?;
    Ok(CoAttentionSummaries {
        similarity,
        attn_a,
        attn_b,
        z_a,
        z_b,
    })
}

/// Co-attention between two ROI feature maps, run at a quarter of their resolution.
#[derive(Debug, Clone)]
pub struct CoAttention {
    pub w: ParamId,
    pub mix_a: ConvBnRelu,
    pub mix_b: ConvBnRelu,
    pub channels: usize,
}

pub const CO_ATTENTION_DOWNSAMPLE: usize = 4;

impl CoAttention {
    /// With `symmetric`, `W` starts at the identity and both mixing layers share initial weights.
    pub fn new<T: Real>(init: &mut Init<'_, T>, c: usize, symmetric: bool) -> Result<Self> {
        let w = init.normal("w", &[c, c], (1.0 / c as f64).sqrt())?;
        if symmetric {
            let w = init.store.get_mut(w).data_mut();
            w.fill(T::zero());
            for i in 0..c {
                w[i * c + i] = T::one();
            }
        }
        let key_b = if symmetric { "mix_a" } else { "mix_b" };
        Ok(Self {
            w,
            mix_a: ConvBnRelu::new(&mut init.child("mix_a"), 2 * c, c, 3, 1)?,
            mix_b: ConvBnRelu::new(&mut init.child_keyed("mix_b", key_b), 2 * c, c, 3, 1)?,
            channels: c,
        })
    }

    /// `(V_a, V_b) → (V'_a, V'_b)`, all `N×C×H×W` with `H`, `W` multiples of 4.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, va: Var, vb: Var) -> Result<(Var, Var)> {
        let shape = ctx.tape.shape(va).to_vec();
        if shape != ctx.tape.shape(vb) || shape.len() != 4 || shape[1] != self.channels {
            return Err(ZianError::Config(format!(
                "co-attention inputs must both be N×{}×H×W, got {shape:?} and {:?}",
                self.channels,
                ctx.tape.shape(vb)
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let f = CO_ATTENTION_DOWNSAMPLE;
        for (size, what) in [(h, "co-attention height"), (w, "co-attention width")] {
            if size % f != 0 {
                return Err(ZianError::Indivisible { what, size, multiple: f });
            }
        }
        let (hs, ws) = (h / f, w / f);
        let da = ctx.tape.bilinear_resize(va, hs, ws, false)?;
        let db = ctx.tape.bilinear_resize(vb, hs, ws, false)?;
        let fa = ctx.tape.reshape(da, &[n, c, hs * ws])?;
        let fb = ctx.tape.reshape(db, &[n, c, hs * ws])?;
        let sums = co_attention_summaries(ctx.tape, fa, fb, ctx.param(self.w))?;
        let mut outs = [va; 2];
        for (k, (z, v, mix)) in [(sums.z_a, fa, &self.mix_a), (sums.z_b, fb, &self.mix_b)].into_iter().enumerate() {
            let x = ctx.tape.concat(&[z, v], 1)?;
            let x = ctx.tape.reshape(x, &[n, 2 * c, hs, ws])?;
            let x = mix.forward(ctx, x)?;
            outs[k] = ctx.tape.bilinear_resize(x, h, w, false)?;
        }
        ctx.check_finite(outs[0], "co-attention")?;
        ctx.check_finite(outs[1], "co-attention")?;
        Ok((outs[0], outs[1]))
    }
}

/// 1×1 convolution from `C` channels to one heatmap channel.
pub fn roi_heatmap_head<T: Real>(ctx: &mut Ctx<'_, T>, features: Var, head: &Conv) -> Result<Var> {
    let y = head.forward(ctx, features)?;
    ctx.check_finite(y, "ROI head")?;
    Ok(y)
}

/// Query/key/value/output projections of one attention.
#[derive(Debug, Clone)]
pub struct AttentionProj {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl AttentionProj {
    fn new<T: Real>(init: &mut Init<'_, T>, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&mut init.child("q"), d, d, 1.0)?,
            k: Linear::new(&mut init.child("k"), d, d, 1.0)?,
            v: Linear::new(&mut init.child("v"), d, d, 1.0)?,
            o: Linear::new(&mut init.child("o"), d, d, 1.0)?,
            heads,
        })
    }

    fn linears(&self) -> [&Linear; 4] {
        [&self.q, &self.k, &self.v, &self.o]
    }

    /// Scaled dot-product attention of `queries` (`N×Lq×D`) over `context` (`N×Lk×D`).
    fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, queries: Var, context: Var) -> Result<Var> {
        let qs = ctx.tape.shape(queries).to_vec();
        let lk = ctx.tape.shape(context)[1];
        let (n, lq, d) = (qs[0], qs[1], qs[2]);
        let h = self.heads;
        let dh = d / h;
        let q = self.q.forward(ctx, queries)?;
        let k = self.k.forward(ctx, context)?;
        let v = self.v.forward(ctx, context)?;
        let split = |tape: &mut Tape<T>, x: Var, l: usize| -> Result<Var> {
            if h == 1 {
                return Ok(x);
            }
            let x = tape.reshape(x, &[n, l, h, dh])?;
            let x = tape.permute(x, &[0, 2, 1, 3])?;
            Ok(tape.reshape(x, &[n * h, l, dh])?)
        };
        let q = split(ctx.tape, q, lq)?;
        let k = split(ctx.tape, k, lk)?;
        let v = split(ctx.tape, v, lk)?;
        let scores = ctx.tape.matmul_t(q, k, false, true)?;
        let scores = ctx.tape.scale(scores, T::of(1.0 / (dh as f64).sqrt()));
        let attn = ctx.tape.softmax(scores, 2)?;
        let mut out = ctx.tape.matmul(attn, v)?;
        if h > 1 {
            out = ctx.tape.reshape(out, &[n, h, lq, dh])?;
            out = ctx.tape.permute(out, &[0, 2, 1, 3])?;
            out = ctx.tape.reshape(out, &[n, lq, d])?;
        }
        self.o.forward(ctx, out)
    }
}

/// Inducing-token squeeze followed by an expanded multi-head block, both pre-norm residual.
#[derive(Debug, Clone)]
pub struct AttentionBlocks {
    pub inducing: ParamId,
    pub squeeze_in: AttentionProj,
    pub squeeze_in_norm_q: LayerNorm,
    pub squeeze_in_norm_kv: LayerNorm,
    pub squeeze_out: AttentionProj,
    pub squeeze_out_norm_q: LayerNorm,
    pub squeeze_out_norm_kv: LayerNorm,
    /// Row and column embeddings, `H×D` and `W×D`.
    pub pos_row: ParamId,
    pub pos_col: ParamId,
    pub expand: AttentionProj,
    pub expand_norm: LayerNorm,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub grid: (usize, usize),
}

/// Channel concat → 1×1 projection to `D` → optional attention blocks.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub proj: Conv,
    pub blocks: Option<AttentionBlocks>,
    pub d: usize,
}

pub const FFN_EXPANSION: usize = 2;

impl Fusion {
    /// `in_channels` is the total channel count of the concatenated inputs,
    /// `grid` the spatial size of the token map.
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        in_channels: usize,
        grid: (usize, usize),
        cfg: &AttentionConfig,
        self_attention: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let proj = Conv::new(&mut init.child("proj"), in_channels, d, 1, 1, true, 1.0)?;
        let blocks = if self_attention {
            if cfg.m > grid.0 * grid.1 {
                log::warn!("{} inducing tokens exceed the {} tokens they summarize", cfg.m, grid.0 * grid.1);
            }
            Some(AttentionBlocks {
                inducing: init.normal("inducing", &[cfg.m, d], 1.0)?,
                squeeze_in: AttentionProj::new(&mut init.child("squeeze_in"), d, 1)?,
                squeeze_in_norm_q: LayerNorm::new(&mut init.child("squeeze_in_norm_q"), d)?,
                squeeze_in_norm_kv: LayerNorm::new(&mut init.child("squeeze_in_norm_kv"), d)?,
                squeeze_out: AttentionProj::new(&mut init.child("squeeze_out"), d, 1)?,
                squeeze_out_norm_q: LayerNorm::new(&mut init.child("squeeze_out_norm_q"), d)?,
                squeeze_out_norm_kv: LayerNorm::new(&mut init.child("squeeze_out_norm_kv"), d)?,
                pos_row: init.normal("pos_row", &[grid.0, d], 0.02)?,
                pos_col: init.normal("pos_col", &[grid.1, d], 0.02)?,
                expand: AttentionProj::new(&mut init.child("expand"), d, cfg.heads)?,
                expand_norm: LayerNorm::new(&mut init.child("expand_norm"), d)?,
                ffn_norm: LayerNorm::new(&mut init.child("ffn_norm"), d)?,
                ffn_in: Linear::new(&mut init.child("ffn_in"), d, FFN_EXPANSION * d, 2.0)?,
                ffn_out: Linear::new(&mut init.child("ffn_out"), FFN_EXPANSION * d, d, 1.0)?,
                grid,
            })
        } else {
            None
        };
        Ok(Self { proj, blocks, d })
    }

    /// Fuse `N×Cᵢ×H×W` maps into `N×D×H×W`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, inputs: &[Var]) -> Result<Var> {
        let shape = ctx.tape.shape(inputs[0]).to_vec();
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        for &x in inputs {
            let s = ctx.tape.shape(x);
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(ZianError::Config(format!(
                    "fusion inputs must share N, H and W: {shape:?} vs {s:?}"
                )));
            }
        }
        let x = if inputs.len() == 1 {
            inputs[0]
        } else {
            ctx.tape.concat(inputs, 1)?
        };
        let x = self.proj.forward(ctx, x)?;
        let Some(blocks) = &self.blocks else {
            ctx.check_finite(x, "fusion projection")?;
            return Ok(x);
        };
        if (h, w) != blocks.grid {
            return Err(ZianError::Config(format!(
                "fusion built for a {:?} grid, got {h}×{w}",
                blocks.grid
            )));
        }
        let d = self.d;
        let l = h * w;
        let tokens = ctx.tape.reshape(x, &[n, d, l])?;
        let tokens = ctx.tape.permute(tokens, &[0, 2, 1])?;
        let out = blocks.forward(ctx, tokens)?;
        let out = ctx.tape.permute(out, &[0, 2, 1])?;
        let out = ctx.tape.reshape(out, &[n, d, h, w])?;
        ctx.check_finite(out, "self-attention fusion")?;
        Ok(out)
    }
}

impl AttentionBlocks {
    /// `N×L×D` tokens in, same shape out.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let n = ctx.tape.shape(x)[0];
        let (h, w) = self.grid;

        // Squeeze: inducing tokens summarize the map, then the map reads the summaries back.
        let inducing = ctx.tape.expand_leading(ctx.param(self.inducing), n);
        let q = self.squeeze_in_norm_q.forward(ctx, inducing)?;
        let kv = self.squeeze_in_norm_kv.forward(ctx, x)?;
        let upd = self.squeeze_in.forward(ctx, q, kv)?;
        let summaries = ctx.tape.add(inducing, upd)?;
        let q = self.squeeze_out_norm_q.forward(ctx, x)?;
        let kv = self.squeeze_out_norm_kv.forward(ctx, summaries)?;
        let upd = self.squeeze_out.forward(ctx, q, kv)?;
        let x = ctx.tape.add(x, upd)?;

        // Expand: positional embedding, multi-head self-attention, feed-forward.
        let pos = self.positions(ctx, h, w)?;
        let x = ctx.tape.add_suffix(x, pos)?;
        let y = self.expand_norm.forward(ctx, x)?;
        let upd = self.expand.forward(ctx, y, y)?;
        let x = ctx.tape.add(x, upd)?;
        let y = self.ffn_norm.forward(ctx, x)?;
        let y = self.ffn_in.forward(ctx, y)?;
        let y = ctx.tape.relu(y);
        let upd = self.ffn_out.forward(ctx, y)?;
        Ok(ctx.tape.add(x, upd)?)
    }

    /// `pos[r·W + c] = row[r] + col[c]`, built with constant selection matrices.
    fn positions<T: Real>(&self, ctx: &mut Ctx<'_, T>, h: usize, w: usize) -> Result<Var> {
        let l = h * w;
        let mut rows = vec![T::zero(); l * h];
        let mut cols = vec![T::zero(); l * w];
        for r in 0..h {
            for c in 0..w {
                rows[(r * w + c) * h + r] = T::one();
                cols[(r * w + c) * w + c] = T::one();
            }
        }
        let rs = ctx.tape.constant(&Tensor::new(vec![l, h], rows)?);
        let cs = ctx.tape.constant(&Tensor::new(vec![l, w], cols)?);
        let pr = ctx.tape.matmul(rs, ctx.param(self.pos_row))?;
        let pc = ctx.tape.matmul(cs, ctx.param(self.pos_col))?;
        Ok(ctx.tape.add(pr, pc)?)
    }

    /// Every attention and feed-forward weight and bias.
    pub fn update_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for proj in [&self.squeeze_in, &self.squeeze_out, &self.expand] {
            for lin in proj.linears() {
                ids.extend([lin.weight, lin.bias]);
            }
        }
        for lin in [&self.ffn_in, &self.ffn_out] {
            ids.extend([lin.weight, lin.bias]);
        }
        ids
    }
}

/// Two 3×3 conv–BN–ReLU layers at width `D` and a 1×1 convolution to one channel.
#[derive(Debug, Clone)]
pub struct FineHead {
    pub conv1: ConvBnRelu,
    pub conv2: ConvBnRelu,
    pub out: Conv,
}

impl FineHead {
    pub fn new<T: Real>(init: &mut Init<'_, T>, d: usize) -> Result<Self> {
        Ok(Self {
            conv1: ConvBnRelu::new(&mut init.child("conv1"), d, d, 3, 1)?,
            conv2: ConvBnRelu::new(&mut init.child("conv2"), d, d, 3, 1)?,
            out: Conv::new(&mut init.child("out"), d, 1, 1, 1, true, 1.0)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.conv2.forward(ctx, y)?;
        let y = self.out.forward(ctx, y)?;
        ctx.check_finite(y, "fine head")?;
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use zian_tensor::ParamStore;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn pseudo(n: usize, salt: usize) -> Vec<f64> {
        (0..n).map(|i| (((i + salt) * 7919) % 263) as f64 / 131.5 - 1.0).collect()
    }

    fn with_ctx<R>(store: &mut ParamStore<f64>, train: bool, f: impl FnOnce(&mut Ctx<'_, f64>) -> R) -> R {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let mut ctx = Ctx {
            tape: &mut tape,
            binding: &binding,
            store,
            train,
        };
        f(&mut ctx)
    }

    #[test]
    fn hand_evaluated_two_position_case() {
        let mut tape = Tape::<f64>::new();
        let va = tape.constant(&t(&[1, 1, 2], vec![1.0, 0.0]));
        let vb = tape.constant(&t(&[1, 1, 2], vec![1.0, 0.0]));
        let w = tape.constant(&t(&[1, 1], vec![1.0]));
        let s = co_attention_summaries(&mut tape, va, vb, w).unwrap();
        assert_eq!(tape.value(s.similarity), &[1.0, 0.0, 0.0, 0.0]);
        let e = std::f64::consts::E;
        let expect = [e / (e + 1.0), 0.5, 1.0 / (e + 1.0), 0.5];
        for (a, b) in tape.value(s.attn_a).iter().zip(expect) {
            assert!((a - b).abs() <= 1e-12);
        }
        let z = tape.value(s.z_a);
        assert!((z[0] - e / (e + 1.0)).abs() <= 1e-12);
        assert!((z[1] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn identical_inputs_and_identity_form_give_equal_summaries() {
        let mut tape = Tape::<f64>::new();
        let v = t(&[2, 3, 5], pseudo(30, 1));
        let va = tape.constant(&v);
        let vb = tape.constant(&v);
        let mut eye = vec![0.0; 9];
        eye[0] = 1.0;
        eye[4] = 1.0;
        eye[8] = 1.0;
        let w = tape.constant(&t(&[3, 3], eye));
        let s = co_attention_summaries(&mut tape, va, vb, w).unwrap();
        assert_eq!(tape.value(s.z_a), tape.value(s.z_b));
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let va = tape.constant(&t(&[1, 4, 6], pseudo(24, 3)));
        let vb = tape.constant(&t(&[1, 4, 6], pseudo(24, 8)));
        let w = tape.constant(&t(&[4, 4], pseudo(16, 5)));
        let s = co_attention_summaries(&mut tape, va, vb, w).unwrap();
        for attn in [s.attn_a, s.attn_b] {
            let a = tape.value(attn);
            for col in 0..6 {
                let sum: f64 = (0..6).map(|row| a[row * 6 + col]).sum();
                assert!((sum - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let va = tape.constant(&t(&[1, 2, 4], pseudo(8, 0)));
        let vb = tape.constant(&t(&[1, 2, 3], pseudo(6, 0)));
        let w = tape.constant(&t(&[2, 2], pseudo(4, 0)));
        assert!(co_attention_summaries(&mut tape, va, vb, w).is_err());
    }

    proptest! {
        #[test]
        fn swapping_inputs_and_transposing_form_swaps_summaries(
            a in prop::collection::vec(-2i32..3, 12),
            b in prop::collection::vec(-2i32..3, 12),
            w in prop::collection::vec(-2i32..3, 9),
        ) {
            // Small integers keep S exact, so the two evaluation orders agree bitwise.
            let f = |v: &[i32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
            let wt: Vec<f64> = (0..9).map(|i| w[(i % 3) * 3 + i / 3] as f64).collect();
            let mut tape = Tape::<f64>::new();
            let va = tape.constant(&t(&[1, 3, 4], f(&a)));
            let vb = tape.constant(&t(&[1, 3, 4], f(&b)));
            let wv = tape.constant(&t(&[3, 3], f(&w)));
            let wtv = tape.constant(&t(&[3, 3], wt));
            let fwd = co_attention_summaries(&mut tape, va, vb, wv).unwrap();
            let rev = co_attention_summaries(&mut tape, vb, va, wtv).unwrap();
            prop_assert_eq!(tape.value(fwd.z_a), tape.value(rev.z_b));
            prop_assert_eq!(tape.value(fwd.z_b), tape.value(rev.z_a));
        }
    }

    #[test]
    fn co_attention_preserves_shapes() {
        let mut store = ParamStore::new();
        let co = CoAttention::new(&mut Init::new(&mut store, 4), 3, false).unwrap();
        with_ctx(&mut store, true, |ctx| {
            let va = ctx.tape.constant(&t(&[2, 3, 8, 8], pseudo(384, 2)));
            let vb = ctx.tape.constant(&t(&[2, 3, 8, 8], pseudo(384, 9)));
            let (a, b) = co.forward(ctx, va, vb).unwrap();
            assert_eq!(ctx.tape.shape(a), &[2, 3, 8, 8]);
            assert_eq!(ctx.tape.shape(b), &[2, 3, 8, 8]);
        });
    }

    #[test]
    fn roi_head_is_affine_per_pixel() {
        let mut store = ParamStore::new();
        let head = Conv::new(&mut Init::new(&mut store, 0), 1, 1, 1, 1, true, 1.0).unwrap();
        store.get_mut(head.weight).data_mut()[0] = 2.0;
        store.get_mut(head.bias.unwrap()).data_mut()[0] = 1.0;
        with_ctx(&mut store, false, |ctx| {
            let x = ctx.tape.constant(&Tensor::full(&[1, 1, 4, 4], 3.0));
            let y = roi_heatmap_head(ctx, x, &head).unwrap();
            assert!(ctx.tape.value(y).iter().all(|&v| v == 7.0));
        });
    }

    #[test]
    fn zero_roi_head_gives_zero_map() {
        let mut store = ParamStore::new();
        let head = Conv::new(&mut Init::new(&mut store, 0), 4, 1, 1, 1, true, 1.0).unwrap();
        store.get_mut(head.weight).data_mut().fill(0.0);
        with_ctx(&mut store, false, |ctx| {
            let x = ctx.tape.constant(&t(&[1, 4, 2, 2], pseudo(16, 4)));
            let y = roi_heatmap_head(ctx, x, &head).unwrap();
            assert!(ctx.tape.value(y).iter().all(|&v| v == 0.0));
        });
    }

    fn small_fusion(store: &mut ParamStore<f64>, grid: (usize, usize)) -> Fusion {
        let cfg = AttentionConfig {
            m: 4,
            d: 8,
            heads: 2,
            ..AttentionConfig::default()
        };
        Fusion::new(&mut Init::new(store, 6), 6, grid, &cfg, true).unwrap()
    }

    #[test]
    fn zero_updates_leave_projected_input() {
        let mut store = ParamStore::new();
        let fusion = small_fusion(&mut store, (4, 4));
        let blocks = fusion.blocks.clone().unwrap();
        for id in blocks.update_params().into_iter().chain([blocks.pos_row, blocks.pos_col]) {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let inputs: Vec<Tensor<f64>> = (0..3).map(|k| t(&[1, 2, 4, 4], pseudo(32, k))).collect();
        let (out, projected) = with_ctx(&mut store, false, |ctx| {
            let xs: Vec<Var> = inputs.iter().map(|x| ctx.tape.constant(x)).collect();
            let out = fusion.forward(ctx, &xs).unwrap();
            let cat = ctx.tape.concat(&xs, 1).unwrap();
            let p = fusion.proj.forward(ctx, cat).unwrap();
            (ctx.tape.tensor(out), ctx.tape.tensor(p))
        });
        assert_eq!(out, projected);
    }

    #[test]
    fn token_permutation_commutes_without_positions() {
        let mut store = ParamStore::new();
        let fusion = small_fusion(&mut store, (4, 4));
        let blocks = fusion.blocks.clone().unwrap();
        store.get_mut(blocks.pos_row).data_mut().fill(0.0);
        store.get_mut(blocks.pos_col).data_mut().fill(0.0);
        let perm: Vec<usize> = (0..16).map(|i| (i * 5 + 3) % 16).collect();
        let inputs: Vec<Vec<f64>> = (0..3).map(|k| pseudo(32, 10 + k)).collect();
        let permute = |x: &[f64], c: usize| {
            let mut y = vec![0.0; x.len()];
            for ch in 0..c {
                for (i, &p) in perm.iter().enumerate() {
                    y[ch * 16 + i] = x[ch * 16 + p];
                }
            }
            y
        };
        let run = |store: &mut ParamStore<f64>, maps: Vec<Vec<f64>>| {
            with_ctx(store, false, |ctx| {
                let xs: Vec<Var> = maps.into_iter().map(|m| ctx.tape.constant(&t(&[1, 2, 4, 4], m))).collect();
                let out = fusion.forward(ctx, &xs).unwrap();
                ctx.tape.value(out).to_vec()
            })
        };
        let plain = run(&mut store, inputs.clone());
        let permuted = run(&mut store, inputs.iter().map(|m| permute(m, 2)).collect());
        let expect = permute(&plain, 8);
        for (a, b) in permuted.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fusion_without_attention_is_projection() {
        let mut store = ParamStore::new();
        let cfg = AttentionConfig {
            d: 8,
            heads: 2,
            ..AttentionConfig::default()
        };
        let fusion = Fusion::new(&mut Init::new(&mut store, 1), 4, (4, 4), &cfg, false).unwrap();
        assert!(fusion.blocks.is_none());
        with_ctx(&mut store, false, |ctx| {
            let a = ctx.tape.constant(&t(&[1, 2, 4, 4], pseudo(32, 0)));
            let b = ctx.tape.constant(&t(&[1, 2, 4, 4], pseudo(32, 1)));
            let out = fusion.forward(ctx, &[a, b]).unwrap();
            assert_eq!(ctx.tape.shape(out), &[1, 8, 4, 4]);
        });
    }

    #[test]
    fn invalid_head_split_is_rejected() {
        let cfg = AttentionConfig {
            d: 10,
            heads: 4,
            ..AttentionConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_final_conv_gives_zero_fine_map() {
        let mut store = ParamStore::new();
        let head = FineHead::new(&mut Init::new(&mut store, 2), 4).unwrap();
        store.get_mut(head.out.weight).data_mut().fill(0.0);
        with_ctx(&mut store, false, |ctx| {
            let x = ctx.tape.constant(&t(&[1, 4, 4, 4], pseudo(64, 3)));
            let y = head.forward(ctx, x).unwrap();
            assert!(ctx.tape.value(y).iter().all(|&v| v == 0.0));
        });
    }

    #[test]
    fn center_tap_fine_head_carries_a_constant_channel() {
        let d = 3;
        let mut store = ParamStore::new();
        let head = FineHead::new(&mut Init::new(&mut store, 2), d).unwrap();
        for layer in [&head.conv1, &head.conv2] {
            let w = store.get_mut(layer.conv.weight).data_mut();
            w.fill(0.0);
            for c in 0..d {
                w[(c * d + c) * 9 + 4] = 1.0;
            }
            // Running variance 1 - eps turns eval-mode batch norm into the identity.
            store.get_mut(layer.bn.running_var).data_mut().fill(1.0 - 1e-5);
        }
        store.get_mut(head.out.weight).data_mut().copy_from_slice(&[0.0, 2.0, 0.0]);
        store.get_mut(head.out.bias.unwrap()).data_mut()[0] = 0.5;
        let mut x = vec![0.0; d * 36];
        x[36..72].fill(1.25);
        with_ctx(&mut store, false, |ctx| {
            let xv = ctx.tape.constant(&t(&[1, d, 6, 6], x));
            let y = head.forward(ctx, xv).unwrap();
            for &v in ctx.tape.value(y) {
                assert!((v - 3.0).abs() <= 1e-12);
            }
        });
    }
}
