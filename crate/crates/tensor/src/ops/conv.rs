//! 2-D cross-correlation via im2col and a matrix product.

use crate::error::{Result, TensorError};
use crate::ops::linalg::{gemm, gemm_t};
use crate::ops::{expect_dim, expect_rank};
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        expect_rank("conv2d", input, 4)?;
        expect_rank("conv2d", weight, 4)?;
        expect_dim("conv2d", 1, weight[1], input[1])?;
        if weight[2] != weight[3] {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                axis: 3,
                expected: weight[2],
                found: weight[3],
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                msg: "stride must be at least 1".into(),
            });
        }
        let k = weight[2];
        let (h, w) = (input[2], input[3]);
        if h + 2 * padding < k {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                axis: 2,
                expected: k,
                found: h + 2 * padding,
            });
        }
        if w + 2 * padding < k {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                axis: 3,
                expected: k,
                found: w + 2 * padding,
            });
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            height: h,
            width: w,
            out_channels: weight[0],
            kernel: k,
            stride,
            padding,
            out_height: (h + 2 * padding - k) / stride + 1,
            out_width: (w + 2 * padding - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_item(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Source index for kernel tap `(ky, kx)` at output position `(oy, ox)`, if in bounds.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let plane = self.out_plane();
        let k = self.kernel;
        for c in 0..self.in_channels {
            let xc = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_height {
                        for ox in 0..self.out_width {
                            dst[oy * self.out_width + ox] = match self.source(oy, ox, ky, kx) {
                                Some((y, xx)) => xc[y * self.width + xx],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let plane = self.out_plane();
        let k = self.kernel;
        for c in 0..self.in_channels {
            let dxc = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_height {
                        for ox in 0..self.out_width {
                            if let Some((y, xx)) = self.source(oy, ox, ky, kx) {
                                dxc[y * self.width + xx] += src[oy * self.out_width + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// NCHW cross-correlation with square `O×C×k×k` weights and optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            let bs = self.shape(b);
            expect_rank("conv2d", bs, 1)?;
            expect_dim("conv2d", 0, geom.out_channels, bs[0])?;
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let plane = geom.out_plane();
        let out_item = geom.out_channels * plane;
        let mut out = vec![T::zero(); geom.batch * out_item];
        let mut cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); geom.col_rows() * plane]
        };
        for n in 0..geom.batch {
            let xn = &xv[n * geom.in_item()..(n + 1) * geom.in_item()];
            let src = if geom.is_pointwise() {
                xn
            } else {
                geom.im2col(xn, &mut cols);
                &cols[..]
            };
            let on = &mut out[n * out_item..(n + 1) * out_item];
            gemm(geom.out_channels, geom.col_rows(), plane, wv, src, on, false);
            if let Some(b) = b {
                for (row, &bias) in on.chunks_mut(plane).zip(self.value(b)) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        let shape = vec![geom.batch, geom.out_channels, geom.out_height, geom.out_width];
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(shape, out, rg, Op::Conv2d { x, w, b, geom }))
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeometry,
    gout: &[T],
) {
    let tape = sink.tape;
    let (xv, wv) = (tape.value(x), tape.value(w));
    let plane = geom.out_plane();
    let out_item = geom.out_channels * plane;
    let rows = geom.col_rows();

    if let Some(b) = b {
        sink.with(b, |g| {
            for n in 0..geom.batch {
                for (o, row) in gout[n * out_item..(n + 1) * out_item].chunks(plane).enumerate() {
                    g[o] += row.iter().fold(T::zero(), |acc, &v| acc + v);
                }
            }
        });
    }

    if sink.wants(w) {
        let mut cols = vec![T::zero(); rows * plane];
        sink.with(w, |g| {
            for n in 0..geom.batch {
                let xn = &xv[n * geom.in_item()..(n + 1) * geom.in_item()];
                let src = if geom.is_pointwise() {
                    xn
                } else {
                    geom.im2col(xn, &mut cols);
                    &cols[..]
                };
                let dn = &gout[n * out_item..(n + 1) * out_item];
                gemm_t(false, true, geom.out_channels, plane, rows, dn, src, g, true);
            }
        });
    }

    if sink.wants(x) {
        let mut dcols = vec![T::zero(); rows * plane];
        sink.with(x, |g| {
            for n in 0..geom.batch {
                let dn = &gout[n * out_item..(n + 1) * out_item];
                let gx = &mut g[n * geom.in_item()..(n + 1) * geom.in_item()];
                if geom.is_pointwise() {
                    gemm_t(true, false, rows, geom.out_channels, plane, wv, dn, gx, true);
                } else {
                    gemm_t(true, false, rows, geom.out_channels, plane, wv, dn, &mut dcols, false);
                    geom.col2im(&dcols, gx);
                }
            }
        });
    }
}
