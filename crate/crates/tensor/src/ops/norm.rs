use crate::error::{Result, TensorError};
use crate::ops::{expect_dim, expect_rank};
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Running statistics of a batch-norm layer, updated in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Real> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<T: Real> Tape<T> {
    /// Per-channel normalization of an NCHW tensor.
    ///
    /// Train mode normalizes with batch statistics (biased variance) and folds
    /// the unbiased variance into `state` with momentum 0.1. Eval mode uses `state`.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        train: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("batch_norm2d", &shape, 4)?;
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        for (v, name) in [(gamma, "gamma"), (beta, "beta")] {
            let s = self.shape(v);
            expect_rank("batch_norm2d", s, 1).map_err(|_| TensorError::InvalidArgument {
                op: "batch_norm2d",
                msg: format!("{name} must be a vector, got {s:?}"),
            })?;
            expect_dim("batch_norm2d", 1, s[0], c)?;
        }
        expect_dim("batch_norm2d", 1, state.mean.len(), c)?;
        let count = n * plane;
        if train && count < 2 {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm2d",
                msg: format!("train mode needs at least 2 values per channel, got {count}"),
            });
        }
        let xv = self.value(x);
        let eps = T::of(BATCH_NORM_EPS);
        let mut inv_std = vec![T::zero(); c];
        let mut means = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = T::zero();
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    sum += xv[base..base + plane].iter().fold(T::zero(), |a, &v| a + v);
                }
                let mean = sum / T::of(count as f64);
                let mut sq = T::zero();
                for b in 0..n {
                    let base = (b * c + ch) * plane;
                    sq += xv[base..base + plane]
                        .iter()
                        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
                }
                let var = sq / T::of(count as f64);
                let m = T::of(BATCH_NORM_MOMENTUM);
                let unbiased = sq / T::of((count - 1) as f64);
                state.mean[ch] = (T::one() - m) * state.mean[ch] + m * mean;
                state.var[ch] = (T::one() - m) * state.var[ch] + m * unbiased;
                (mean, var)
            } else {
                (state.mean[ch], state.var[ch])
            };
            means[ch] = mean;
            inv_std[ch] = T::one() / (var + eps).sqrt();
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    let h = (xv[i] - means[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Normalize over the last axis (no affine terms; compose with `mul_suffix`/`add_suffix`).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensors have rank >= 1");
        let xv = self.value(x);
        let eps = T::of(LAYER_NORM_EPS);
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / T::of(d as f64);
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / T::of(d as f64);
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
        }
        let rg = self.requires_grad(x);
        let value = xhat.clone();
        Ok(self.push(shape, value, rg, Op::LayerNorm { x, xhat, inv_std }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Real>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    gout: &[T],
) {
    let shape = sink.tape.shape(x).to_vec();
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = T::of((n * plane) as f64);
    let mut sum_d = vec![T::zero(); c];
    let mut sum_dh = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                sum_d[ch] += gout[i];
                sum_dh[ch] += gout[i] * xhat[i];
            }
        }
    }
    sink.add(beta, &sum_d);
    sink.add(gamma, &sum_dh);
    let gv = sink.tape.value(gamma).to_vec();
    sink.with(x, |g| {
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let scale = gv[ch] * inv_std[ch];
                for i in base..base + plane {
                    g[i] += if train {
                        scale * (gout[i] - sum_d[ch] / count - xhat[i] * sum_dh[ch] / count)
                    } else {
                        scale * gout[i]
                    };
                }
            }
        }
    });
}

pub(crate) fn layer_norm_backward<T: Real>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    xhat: &[T],
    inv_std: &[T],
    gout: &[T],
) {
    let d = *sink.tape.shape(x).last().expect("rank >= 1");
    let df = T::of(d as f64);
    sink.with(x, |g| {
        for (r, &is) in inv_std.iter().enumerate() {
            let range = r * d..(r + 1) * d;
            let dy = &gout[range.clone()];
            let h = &xhat[range.clone()];
            let sd = dy.iter().fold(T::zero(), |a, &v| a + v);
            let sdh = dy.iter().zip(h).fold(T::zero(), |a, (&v, &hh)| a + v * hh);
            for ((gi, &dyi), &hi) in g[range].iter_mut().zip(dy).zip(h) {
                *gi += is * (dyi - sd / df - hi * sdh / df);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn constant_map_collapses_to_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::full(&[2, 1, 3, 3], 4.2));
        let g = tape.constant(&Tensor::full(&[1], 1.0));
        let b = tape.constant(&Tensor::full(&[1], 5.0));
        let mut st = BatchNormState::new(1);
        let y = tape.batch_norm2d(x, g, b, &mut st, true).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 5.0));
        assert!((st.mean[0] - 0.42).abs() < 1e-12);
        assert!((st.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::full(&[1, 2, 1, 1], 1.0));
        let g = tape.constant(&Tensor::full(&[2], 1.0));
        let b = tape.constant(&Tensor::full(&[2], 0.0));
        let mut st = BatchNormState::new(2);
        assert!(tape.batch_norm2d(x, g, b, &mut st, true).is_err());
        assert!(tape.batch_norm2d(x, g, b, &mut st, false).is_ok());
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::from_f64(vec![1, 1, 1, 2], &[3.0, 5.0]).unwrap());
        let g = tape.constant(&Tensor::full(&[1], 2.0));
        let b = tape.constant(&Tensor::full(&[1], 1.0));
        let mut st = BatchNormState { mean: vec![1.0], var: vec![4.0 - BATCH_NORM_EPS] };
        let y = tape.batch_norm2d(x, g, b, &mut st, false).unwrap();
        let v = tape.value(y);
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] - 5.0).abs() < 1e-12);
    }
}
