use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

/// (outer, axis length, inner) decomposition of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    /// Max-subtracted softmax along `axis`. Non-finite inputs are rejected.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let xv = self.value(x);
        if let Some(index) = xv.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax", index });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out = vec![T::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| xv[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (xv[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(shape, out, rg, Op::Softmax { x, axis }))
    }
}

pub(crate) fn softmax_backward<T: Real>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    axis: usize,
    shape: &[usize],
    y: &[T],
    gout: &[T],
) {
    let (outer, len, inner) = split_axis(shape, axis);
    sink.with(x, |g| {
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let dot = (0..len).fold(T::zero(), |a, j| a + gout[idx(j)] * y[idx(j)]);
                for j in 0..len {
                    g[idx(j)] += y[idx(j)] * (gout[idx(j)] - dot);
                }
            }
        }
    });
}
