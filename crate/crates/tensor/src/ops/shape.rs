use crate::error::{Result, TensorError};
use crate::ops::expect_dim;
use crate::ops::softmax::split_axis;
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};
use crate::tensor::numel;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output element of `permute(shape, axes)`, the source offset in the input.
fn permute_sources(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let total = numel(&out_shape);
    let mut src = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..total {
        src.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    src
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(shape.to_vec(), value, rg, Op::Reshape(x)))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                msg: format!("{axes:?} is not a permutation of the axes of {shape:?}"),
            });
        }
        let xv = self.value(x);
        let value = permute_sources(&shape, axes).into_iter().map(|s| xv[s]).collect();
        let out_shape = axes.iter().map(|&a| shape[a]).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(out_shape, value, rg, Op::Permute(x, axes.to_vec())))
    }

    /// Repeat `x` `n` times along a new leading axis.
    pub fn expand_leading(&mut self, x: Var, n: usize) -> Var {
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape(x));
        let value = self.value(x).repeat(n);
        let rg = self.requires_grad(x);
        self.push(shape, value, rg, Op::ExpandLeading(x))
    }

    /// Concatenate along `axis`; every other axis must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() {
                return Err(TensorError::Rank {
                    op: "concat",
                    expected: base.len(),
                    found: s.to_vec(),
                });
            }
            for d in 0..s.len() {
                if d != axis {
                    expect_dim("concat", d, base[d], s[d])?;
                }
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }
}

pub(crate) fn permute_backward<T: Real>(sink: &mut GradSink<'_, T>, x: Var, axes: &[usize], gout: &[T]) {
    let src = permute_sources(sink.tape.shape(x), axes);
    sink.with(x, |g| {
        for (&s, &d) in src.iter().zip(gout) {
            g[s] += d;
        }
    });
}

pub(crate) fn expand_backward<T: Real>(sink: &mut GradSink<'_, T>, x: Var, gout: &[T]) {
    let len = sink.tape.value(x).len();
    sink.with(x, |g| {
        for chunk in gout.chunks(len) {
            g.iter_mut().zip(chunk).for_each(|(g, &d)| *g += d);
        }
    });
}

pub(crate) fn concat_backward<T: Real>(
    sink: &mut GradSink<'_, T>,
    inputs: &[Var],
    axis: usize,
    out_shape: &[usize],
    gout: &[T],
) {
    let (outer, total, inner) = split_axis(out_shape, axis);
    let mut offset = 0;
    for &v in inputs {
        let len = sink.tape.shape(v)[axis];
        sink.with(v, |g| {
            for o in 0..outer {
                let src = &gout[(o * total + offset) * inner..(o * total + offset + len) * inner];
                g[o * len * inner..(o + 1) * len * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(g, &d)| *g += d);
            }
        });
        offset += len;
    }
}
