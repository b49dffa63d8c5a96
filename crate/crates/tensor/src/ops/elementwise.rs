use crate::error::{Result, TensorError};
use crate::ops::expect_same_shape;
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

impl<T: Real> Tape<T> {
    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        expect_same_shape(op, self.shape(a), self.shape(b))?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((self.shape(a).to_vec(), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, value, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, value, rg, Op::Mul(a, b)))
    }

    fn suffix_len(&self, op: &'static str, x: Var, y: Var) -> Result<usize> {
        let xs = self.shape(x);
        let ys = self.shape(y);
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(TensorError::ShapeMismatch {
                op,
                left: xs.to_vec(),
                right: ys.to_vec(),
            });
        }
        Ok(self.value(y).len())
    }

    /// `x + y` where `y`'s shape is a trailing suffix of `x`'s, repeated over the leading axes.
    pub fn add_suffix(&mut self, x: Var, y: Var) -> Result<Var> {
        let inner = self.suffix_len("add_suffix", x, y)?;
        let yv = self.value(y);
        let value = self
            .value(x)
            .chunks(inner)
            .flat_map(|c| c.iter().zip(yv).map(|(&a, &b)| a + b))
            .collect();
        let rg = self.any_grad(&[x, y]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, rg, Op::AddSuffix(x, y)))
    }

    /// `x * y` with the same suffix broadcasting as [`Tape::add_suffix`].
    pub fn mul_suffix(&mut self, x: Var, y: Var) -> Result<Var> {
        let inner = self.suffix_len("mul_suffix", x, y)?;
        let yv = self.value(y);
        let value = self
            .value(x)
            .chunks(inner)
            .flat_map(|c| c.iter().zip(yv).map(|(&a, &b)| a * b))
            .collect();
        let rg = self.any_grad(&[x, y]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, rg, Op::MulSuffix(x, y)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).iter().map(|&v| v * s).collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, value, rg, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.requires_grad(x);
        self.push(vec![1], vec![total], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let rg = self.requires_grad(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, value, rg, Op::Relu(x))
    }
}

pub(crate) fn mul_backward<T: Real>(sink: &mut GradSink<'_, T>, a: Var, b: Var, gout: &[T]) {
    let tape = sink.tape;
    let (av, bv) = (tape.value(a), tape.value(b));
    sink.with(a, |g| {
        for ((g, &d), &y) in g.iter_mut().zip(gout).zip(bv) {
            *g += d * y;
        }
    });
    sink.with(b, |g| {
        for ((g, &d), &x) in g.iter_mut().zip(gout).zip(av) {
            *g += d * x;
        }
    });
}

pub(crate) fn add_suffix_backward<T: Real>(sink: &mut GradSink<'_, T>, x: Var, y: Var, gout: &[T]) {
    sink.add(x, gout);
    let inner = sink.tape.value(y).len();
    sink.with(y, |g| {
        for chunk in gout.chunks(inner) {
            g.iter_mut().zip(chunk).for_each(|(g, &d)| *g += d);
        }
    });
}

pub(crate) fn mul_suffix_backward<T: Real>(sink: &mut GradSink<'_, T>, x: Var, y: Var, gout: &[T]) {
    let tape = sink.tape;
    let (xv, yv) = (tape.value(x), tape.value(y));
    let inner = yv.len();
    sink.with(x, |g| {
        for (gc, dc) in g.chunks_mut(inner).zip(gout.chunks(inner)) {
            for ((g, &d), &b) in gc.iter_mut().zip(dc).zip(yv) {
                *g += d * b;
            }
        }
    });
    sink.with(y, |g| {
        for (xc, dc) in xv.chunks(inner).zip(gout.chunks(inner)) {
            for ((g, &d), &a) in g.iter_mut().zip(dc).zip(xc) {
                *g += d * a;
            }
        }
    });
}
