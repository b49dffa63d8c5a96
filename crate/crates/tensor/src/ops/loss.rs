use crate::error::Result;
use crate::ops::expect_same_shape;
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

impl<T: Real> Tape<T> {
    /// Mean over all elements of the squared difference.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        expect_same_shape("mse_loss", self.shape(pred), self.shape(target))?;
        let n = T::of(self.value(pred).len() as f64);
        let total = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .fold(T::zero(), |a, (&p, &t)| a + (p - t) * (p - t));
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(vec![1], vec![total / n], rg, Op::Mse { pred, target }))
    }
}

pub(crate) fn mse_backward<T: Real>(sink: &mut GradSink<'_, T>, pred: Var, target: Var, gout: &[T]) {
    let tape = sink.tape;
    let (pv, tv) = (tape.value(pred), tape.value(target));
    let k = gout[0] * T::of(2.0) / T::of(pv.len() as f64);
    sink.with(pred, |g| {
        for ((g, &p), &t) in g.iter_mut().zip(pv).zip(tv) {
            *g += k * (p - t);
        }
    });
    sink.with(target, |g| {
        for ((g, &p), &t) in g.iter_mut().zip(pv).zip(tv) {
            *g -= k * (p - t);
        }
    });
}
