//! Separable bilinear resampling: resizing and axis-aligned affine grid sampling.
//!
//! Grid coordinates are pixel centers at integer positions. Every output
//! pixel is a fixed linear combination of at most four input pixels, so the
//! backward pass is the transpose of the same weights.

use crate::error::{Result, TensorError};
use crate::ops::expect_rank;
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

/// What a sample outside the input grid reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Out-of-range taps contribute zero.
    Zeros,
    /// Coordinates are clamped into the grid.
    Border,
}

/// Axis-aligned map from output pixel index to input grid coordinate:
/// `src_y = offset_y + scale_y * oy`, `src_x = offset_x + scale_x * ox`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub scale_y: f64,
    pub offset_y: f64,
    pub scale_x: f64,
    pub offset_x: f64,
}

impl SampleGrid {
    /// Grid of a half-pixel-center resize from `(in_h, in_w)` to `(out_h, out_w)`.
    pub fn resize(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let sy = in_h as f64 / out_h as f64;
        let sx = in_w as f64 / out_w as f64;
        Self {
            scale_y: sy,
            offset_y: 0.5 * sy - 0.5,
            scale_x: sx,
            offset_x: 0.5 * sx - 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisTap<T> {
    idx: [usize; 2],
    w: [T; 2],
}

/// Two-tap linear interpolation weights for coordinate `s` on an axis of length `n`.
pub(crate) fn axis_tap<T: Real>(s: f64, n: usize, padding: Padding) -> AxisTap<T> {
    let last = (n - 1) as f64;
    match padding {
        Padding::Border => {
            let s = s.clamp(0.0, last);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            let lambda = s - i0 as f64;
            AxisTap {
                idx: [i0, i1],
                w: [T::of(1.0 - lambda), T::of(lambda)],
            }
        }
        Padding::Zeros => {
            let f = s.floor();
            let lambda = s - f;
            let mut tap = AxisTap {
                idx: [0, 0],
                w: [T::zero(), T::zero()],
            };
            for (k, (pos, w)) in [(f, 1.0 - lambda), (f + 1.0, lambda)].into_iter().enumerate() {
                if pos >= 0.0 && pos <= last {
                    tap.idx[k] = pos as usize;
                    tap.w[k] = T::of(w);
                }
            }
            tap
        }
    }
}

/// Precomputed interpolation weights, one row/column table per batch item.
#[derive(Debug)]
pub struct ResamplePlan<T: Real> {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    rows: Vec<Vec<AxisTap<T>>>,
    cols: Vec<Vec<AxisTap<T>>>,
}

impl<T: Real> ResamplePlan<T> {
    fn apply(&self, item: usize, src: &[T], dst: &mut [T]) {
        let (rows, cols) = (&self.rows[item], &self.cols[item]);
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, cx) in cols.iter().enumerate() {
                let mut acc = T::zero();
                for a in 0..2 {
                    let row = &src[ry.idx[a] * self.in_w..];
                    acc += ry.w[a] * (cx.w[0] * row[cx.idx[0]] + cx.w[1] * row[cx.idx[1]]);
                }
                dst[oy * self.out_w + ox] = acc;
            }
        }
    }

    fn apply_transpose(&self, item: usize, dout: &[T], dsrc: &mut [T]) {
        let (rows, cols) = (&self.rows[item], &self.cols[item]);
        for (oy, ry) in rows.iter().enumerate() {
            for (ox, cx) in cols.iter().enumerate() {
                let d = dout[oy * self.out_w + ox];
                for a in 0..2 {
                    for b in 0..2 {
                        dsrc[ry.idx[a] * self.in_w + cx.idx[b]] += ry.w[a] * cx.w[b] * d;
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Bilinear resize of an NCHW tensor.
    ///
    /// With `align_corners = false` output pixel `o` samples input coordinate
    /// `(o + 0.5) * in / out - 0.5` clamped to the grid; with `true` the corner
    /// pixels of input and output coincide.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize, align_corners: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("bilinear_resize", &shape, 4)?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "bilinear_resize",
                msg: format!("output size must be positive, got {out_h}x{out_w}"),
            });
        }
        let (h, w) = (shape[2], shape[3]);
        let grid = if align_corners {
            let ratio = |i: usize, o: usize| if o > 1 { (i - 1) as f64 / (o - 1) as f64 } else { 0.0 };
            SampleGrid {
                scale_y: ratio(h, out_h),
                offset_y: 0.0,
                scale_x: ratio(w, out_w),
                offset_x: 0.0,
            }
        } else {
            SampleGrid::resize(h, w, out_h, out_w)
        };
        self.resample(x, &[grid], out_h, out_w, Padding::Border, "bilinear_resize")
    }

    /// Sample each batch item on its own axis-aligned grid (one `SampleGrid` per item).
    pub fn affine_sample(
        &mut self,
        x: Var,
        grids: &[SampleGrid],
        out_h: usize,
        out_w: usize,
        padding: Padding,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("affine_sample", &shape, 4)?;
        if grids.len() != shape[0] {
            return Err(TensorError::DimMismatch {
                op: "affine_sample",
                axis: 0,
                expected: grids.len(),
                found: shape[0],
            });
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::InvalidArgument {
                op: "affine_sample",
                msg: format!("output size must be positive, got {out_h}x{out_w}"),
            });
        }
        if let Some(g) = grids.iter().find(|g| {
            ![g.scale_x, g.scale_y, g.offset_x, g.offset_y]
                .iter()
                .all(|v| v.is_finite())
        }) {
            return Err(TensorError::InvalidArgument {
                op: "affine_sample",
                msg: format!("non-finite sampling grid {g:?}"),
            });
        }
        self.resample(x, grids, out_h, out_w, padding, "affine_sample")
    }

    fn resample(
        &mut self,
        x: Var,
        grids: &[SampleGrid],
        out_h: usize,
        out_w: usize,
        padding: Padding,
        _op: &'static str,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plan = ResamplePlan {
            in_h: h,
            in_w: w,
            out_h,
            out_w,
            rows: grids
                .iter()
                .map(|g| (0..out_h).map(|o| axis_tap(g.offset_y + g.scale_y * o as f64, h, padding)).collect())
                .collect(),
            cols: grids
                .iter()
                .map(|g| (0..out_w).map(|o| axis_tap(g.offset_x + g.scale_x * o as f64, w, padding)).collect())
                .collect(),
        };
        let xv = self.value(x);
        let (ip, op) = (h * w, out_h * out_w);
        let mut out = vec![T::zero(); n * c * op];
        for b in 0..n {
            let item = if grids.len() == 1 { 0 } else { b };
            for ch in 0..c {
                let k = b * c + ch;
                plan.apply(item, &xv[k * ip..(k + 1) * ip], &mut out[k * op..(k + 1) * op]);
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(
            vec![n, c, out_h, out_w],
            out,
            rg,
            Op::Resample {
                x,
                plan: std::sync::Arc::new(plan),
            },
        ))
    }
}

pub(crate) fn resample_backward<T: Real>(sink: &mut GradSink<'_, T>, x: Var, plan: &ResamplePlan<T>, gout: &[T]) {
    let shape = sink.tape.shape(x).to_vec();
    let (n, c) = (shape[0], shape[1]);
    let (ip, op) = (plan.in_h * plan.in_w, plan.out_h * plan.out_w);
    sink.with(x, |g| {
        for b in 0..n {
            let item = if plan.rows.len() == 1 { 0 } else { b };
            for ch in 0..c {
                let k = b * c + ch;
                plan.apply_transpose(item, &gout[k * op..(k + 1) * op], &mut g[k * ip..(k + 1) * ip]);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn same_size_is_identity() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let x = tape.constant(&Tensor::new(vec![1, 1, 4, 5], data.clone()).unwrap());
        let y = tape.bilinear_resize(x, 4, 5, false).unwrap();
        assert_eq!(tape.value(y), &data[..]);
    }

    #[test]
    fn zero_output_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.bilinear_resize(x, 0, 3, false).is_err());
    }

    #[test]
    fn zero_padding_drops_outside_taps() {
        let t = axis_tap::<f64>(-0.25, 4, Padding::Zeros);
        assert_eq!(t.idx[1], 0);
        assert_eq!(t.w, [0.0, 0.75]);
        let t = axis_tap::<f64>(10.0, 4, Padding::Zeros);
        assert_eq!(t.w, [0.0, 0.0]);
    }

    #[test]
    fn border_clamps() {
        let t = axis_tap::<f64>(-3.0, 4, Padding::Border);
        assert_eq!((t.idx, t.w), ([0, 1], [1.0, 0.0]));
        let t = axis_tap::<f64>(7.5, 4, Padding::Border);
        assert_eq!((t.idx, t.w), ([3, 3], [1.0, 0.0]));
    }
}
