//! Parameterized layers shared by the backbone, attention blocks and heads.
//!
//! Layers only hold [`ParamId`]s; the values live in a [`ParamStore`] and are
//! bound to a tape once per forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use zian_tensor::{BatchNormState, Binding, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};

use crate::error::{Result, ZianError};

/// Everything a forward pass needs: the tape, the bound parameters and the
/// store (for batch-norm running statistics).
pub struct Ctx<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub binding: &'a Binding,
    pub store: &'a mut ParamStore<T>,
    pub train: bool,
}

impl<T: Real> Ctx<'_, T> {
    pub fn param(&self, id: ParamId) -> Var {
        self.binding[id]
    }

    pub fn check_finite(&self, v: Var, module: &'static str) -> Result<()> {
        if self.tape.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(ZianError::NonFinite { module })
        }
    }
}

/// Stable 64-bit seed for a named parameter.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the key, then a splitmix finalizer mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Registers parameters under a dotted name. Random values are drawn from a
/// generator keyed by `key` rather than `name`, so two modules built with the
/// same key get identical weights.
pub struct Init<'a, T: Real> {
    pub store: &'a mut ParamStore<T>,
    seed: u64,
    name: String,
    key: String,
}

fn join(a: &str, b: &str) -> String {
    if a.is_empty() {
        b.to_string()
    } else {
        format!("{a}.{b}")
    }
}

impl<'a, T: Real> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            seed,
            name: String::new(),
            key: String::new(),
        }
    }

    pub fn child(&mut self, name: &str) -> Init<'_, T> {
        self.child_keyed(name, name)
    }

    pub fn child_keyed(&mut self, name: &str, key: &str) -> Init<'_, T> {
        Init {
            store: self.store,
            seed: self.seed,
            name: join(&self.name, name),
            key: join(&self.key, key),
        }
    }

    fn add(&mut self, name: &str, tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        Ok(self.store.add(join(&self.name, name), tensor, kind)?)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &join(&self.key, name)));
        let dist = Normal::new(0.0, std).map_err(|e| ZianError::Config(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(&mut rng))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::of(value)), ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::of(value)), ParamKind::Buffer)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// Square `k×k` convolution with "same" padding, He-normal weights and optional zero bias.
    /// `gain` is 2 for layers followed by a ReLU and 1 otherwise.
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        gain: f64,
    ) -> Result<Self> {
        let std = (gain / (cin * k * k) as f64).sqrt();
        let weight = init.normal("weight", &[cout, cin, k, k], std)?;
        let bias = if bias {
            Some(init.constant("bias", &[cout], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        Ok(ctx.tape.conv2d(x, w, b, self.stride, self.padding)?)
    }

    pub fn param_count(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
        cout * cin * k * k + if bias { cout } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(init: &mut Init<'_, T>, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[c], 1.0)?,
            beta: init.constant("beta", &[c], 0.0)?,
            running_mean: init.buffer("running_mean", &[c], 0.0)?,
            running_var: init.buffer("running_var", &[c], 1.0)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut state = BatchNormState {
            mean: ctx.store.get(self.running_mean).data().to_vec(),
            var: ctx.store.get(self.running_var).data().to_vec(),
        };
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let y = ctx.tape.batch_norm2d(x, g, b, &mut state, ctx.train)?;
        if ctx.train {
            ctx.store.get_mut(self.running_mean).data_mut().copy_from_slice(&state.mean);
            ctx.store.get_mut(self.running_var).data_mut().copy_from_slice(&state.var);
        }
        Ok(y)
    }
}

/// Convolution (no bias), batch norm, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new<T: Real>(init: &mut Init<'_, T>, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(&mut init.child("conv"), cin, cout, k, stride, false, 2.0)?,
            bn: BatchNorm::new(&mut init.child("bn"), cout)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y))
    }

    pub fn param_count(cin: usize, cout: usize, k: usize) -> usize {
        Conv::param_count(cin, cout, k, false) + 2 * cout
    }
}

/// `y = x W + b` over the last axis; `W` is `[din, dout]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<'_, T>, din: usize, dout: usize, gain: f64) -> Result<Self> {
        Ok(Self {
            weight: init.normal("weight", &[din, dout], (gain / din as f64).sqrt())?,
            bias: init.constant("bias", &[dout], 0.0)?,
            din,
            dout,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.tape.shape(x).to_vec();
        let rows = shape.iter().product::<usize>() / self.din;
        let flat = ctx.tape.reshape(x, &[rows, self.din])?;
        let y = ctx.tape.matmul(flat, ctx.binding[self.weight])?;
        let y = ctx.tape.add_suffix(y, ctx.binding[self.bias])?;
        let mut out = shape;
        *out.last_mut().expect("rank >= 1") = self.dout;
        Ok(ctx.tape.reshape(y, &out)?)
    }
}

/// Layer normalization over the last axis with a learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(init: &mut Init<'_, T>, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant("gamma", &[d], 1.0)?,
            beta: init.constant("beta", &[d], 0.0)?,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = ctx.tape.layer_norm(x)?;
        let y = ctx.tape.mul_suffix(y, ctx.binding[self.gamma])?;
        Ok(ctx.tape.add_suffix(y, ctx.binding[self.beta])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_key_and_seed() {
        assert_ne!(derive_seed(1, "a.weight"), derive_seed(1, "b.weight"));
        assert_ne!(derive_seed(1, "a.weight"), derive_seed(2, "a.weight"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }

    #[test]
    fn shared_key_gives_identical_weights() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Init::new(&mut store, 3);
        let a = Conv::new(&mut init.child_keyed("roi0", "roi"), 2, 3, 3, 1, true, 2.0).unwrap();
        let b = Conv::new(&mut init.child_keyed("roi1", "roi"), 2, 3, 3, 1, true, 2.0).unwrap();
        let c = Conv::new(&mut init.child("roi2"), 2, 3, 3, 1, true, 2.0).unwrap();
        assert_eq!(store.get(a.weight).data(), store.get(b.weight).data());
        assert_ne!(store.get(a.weight).data(), store.get(c.weight).data());
        assert_eq!(store.name(b.weight), "roi1.weight");
    }

    #[test]
    fn linear_maps_last_axis() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut Init::new(&mut store, 0), 3, 2, 1.0).unwrap();
        store.get_mut(lin.weight).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        store.get_mut(lin.bias).data_mut().copy_from_slice(&[0.5, -0.5]);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.constant(&Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 1.0]).unwrap());
        let mut ctx = Ctx {
            tape: &mut tape,
            binding: &binding,
            store: &mut store,
            train: false,
        };
        let y = lin.forward(&mut ctx, x).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.value(y), &[4.5, 4.5, 1.5, 0.5]);
    }
}
