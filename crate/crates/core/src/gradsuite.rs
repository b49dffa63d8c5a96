//! Named finite-difference checks of every differentiable primitive and of the
//! composite blocks, shared by the `gradcheck` command and the test suite.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zian_tensor::{
    finite_difference_check, BatchNormState, Binding, GradCheckOptions, GradCheckReport, Padding, ParamStore, SampleGrid,
    Tape, Tensor, Var,
};

use crate::attention::{AttentionConfig, CoAttention, Fusion};
use crate::backbone::BackboneConfig;
use crate::error::{Result, ZianError};
use crate::nn::{Ctx, Init};
use crate::zian::{ModelConfig, RoiConfig, ZianConfig, ZianModel};

/// Maximum relative error accepted by every check.
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: std::ops::Range<u64> = 0..20;

type Check = fn(u64) -> Result<GradCheckReport>;

pub struct GradCase {
    pub name: &'static str,
    pub run: Check,
}

#[derive(Debug, Clone)]
pub struct CaseSummary {
    pub name: &'static str,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub checked: usize,
    pub elapsed: Duration,
}

impl CaseSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

pub fn cases() -> Vec<GradCase> {
    vec![
        GradCase { name: "conv2d", run: conv2d },
        GradCase { name: "relu", run: relu },
        GradCase { name: "batch_norm2d", run: batch_norm },
        GradCase { name: "matmul", run: matmul },
        GradCase { name: "softmax", run: softmax },
        GradCase { name: "bilinear_resize", run: bilinear_resize },
        GradCase { name: "affine_sample", run: affine_sample },
        GradCase { name: "mse_loss", run: mse },
        GradCase { name: "elementwise", run: elementwise },
        GradCase { name: "shape_ops", run: shape_ops },
        GradCase { name: "layer_norm", run: layer_norm },
        GradCase { name: "co_attention", run: co_attention },
        GradCase { name: "self_attention_fusion", run: fusion },
        GradCase { name: "zian_forward", run: zian_forward },
    ]
}

/// Run every case whose name contains `filter` over `seeds`.
pub fn run_suite(filter: Option<&str>, seeds: std::ops::Range<u64>) -> Result<Vec<CaseSummary>> {
    let selected: Vec<_> = cases().into_iter().filter(|c| filter.is_none_or(|f| c.name.contains(f))).collect();
    if selected.is_empty() {
        let names: Vec<_> = cases().iter().map(|c| c.name).collect();
        return Err(ZianError::Invalid(format!(
            "no gradient check matches {:?}; available: {}",
            filter.unwrap_or(""),
            names.join(", ")
        )));
    }
    selected.iter().map(|c| run_case(c, seeds.clone())).collect()
}

pub fn run_case(case: &GradCase, seeds: std::ops::Range<u64>) -> Result<CaseSummary> {
    let start = Instant::now();
    let mut s = CaseSummary {
        name: case.name,
        seeds: 0,
        max_rel_error: 0.0,
        worst_seed: seeds.start,
        checked: 0,
        elapsed: Duration::ZERO,
    };
    for seed in seeds {
        let r = (case.run)(seed)?;
        s.seeds += 1;
        s.checked += r.checked;
        if r.max_rel_error > s.max_rel_error {
            s.max_rel_error = r.max_rel_error;
            s.worst_seed = seed;
        }
    }
    s.elapsed = start.elapsed();
    Ok(s)
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// `Σ y ⊙ r` for a fixed random `r`: every output element gets its own weight.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> zian_tensor::Result<Var> {
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> zian_tensor::Result<Var>,
{
    Ok(finite_difference_check(f, inputs, GradCheckOptions::default())?)
}

fn worst(reports: impl IntoIterator<Item = Result<GradCheckReport>>) -> Result<GradCheckReport> {
    let mut out = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for r in reports {
        let r = r?;
        out.checked += r.checked;
        if out.worst.is_none() || r.max_rel_error > out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst = r.worst;
        }
    }
    Ok(out)
}

fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 1);
    let stride = 1 + (seed as usize % 2);
    let x = uniform(&mut r, &[2, 3, 7, 7]);
    let w = uniform(&mut r, &[4, 3, 3, 3]);
    let b = uniform(&mut r, &[4]);
    let o = (7 + 2 - 3) / stride + 1;
    let wt = uniform(&mut r, &[2, 4, o, o]);
    let w1 = uniform(&mut r, &[2, 3, 1, 1]);
    let wt1 = uniform(&mut r, &[2, 2, 7, 7]);
    worst([
        check(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride, 1)?;
                weighted_sum(t, y, &wt)
            },
            &[x.clone(), w, b],
        ),
        check(
            |t, v| {
                let y = t.conv2d(v[0], v[1], None, 1, 0)?;
                weighted_sum(t, y, &wt1)
            },
            &[x, w1],
        ),
    ])
}

fn relu(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 2);
    let x = uniform(&mut r, &[3, 7]);
    let wt = uniform(&mut r, &[3, 7]);
    check(
        |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y, &wt)
        },
        &[x],
    )
}

fn batch_norm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 3);
    let x = uniform(&mut r, &[2, 3, 4, 5]);
    let g = uniform(&mut r, &[3]);
    let b = uniform(&mut r, &[3]);
    let wt = uniform(&mut r, &[2, 3, 4, 5]);
    worst([true, false].map(|train| {
        check(
            |t, v| {
                let mut st = BatchNormState {
                    mean: vec![0.1, -0.2, 0.3],
                    var: vec![0.5, 1.5, 2.0],
                };
                let y = t.batch_norm2d(v[0], v[1], v[2], &mut st, train)?;
                weighted_sum(t, y, &wt)
            },
            &[x.clone(), g.clone(), b.clone()],
        )
    }))
}

fn matmul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 4);
    let a = uniform(&mut r, &[2, 4, 6]);
    let b = uniform(&mut r, &[2, 6, 3]);
    let at = uniform(&mut r, &[2, 6, 4]);
    let bt = uniform(&mut r, &[2, 3, 6]);
    let wt = uniform(&mut r, &[2, 4, 3]);
    worst([
        check(
            |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, &wt)
            },
            &[a.clone(), b],
        ),
        check(
            |t, v| {
                let y = t.matmul_t(v[0], v[1], true, true)?;
                weighted_sum(t, y, &wt)
            },
            &[at, bt.clone()],
        ),
        check(
            |t, v| {
                let y = t.matmul_t(v[0], v[1], false, true)?;
                weighted_sum(t, y, &wt)
            },
            &[a, bt],
        ),
    ])
}

fn softmax(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 5);
    let x = uniform(&mut r, &[2, 5, 4]);
    let wt = uniform(&mut r, &[2, 5, 4]);
    worst([1, 2].map(|axis| {
        check(
            |t, v| {
                let y = t.softmax(v[0], axis)?;
                weighted_sum(t, y, &wt)
            },
            &[x.clone()],
        )
    }))
}

fn bilinear_resize(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 6);
    let x = uniform(&mut r, &[2, 2, 5, 6]);
    let (oh, ow) = (r.random_range(2..12), r.random_range(2..12));
    let wt = uniform(&mut r, &[2, 2, oh, ow]);
    worst([false, true].map(|ac| {
        check(
            |t, v| {
                let y = t.bilinear_resize(v[0], oh, ow, ac)?;
                weighted_sum(t, y, &wt)
            },
            &[x.clone()],
        )
    }))
}

fn affine_sample(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 7);
    let x = uniform(&mut r, &[2, 2, 5, 6]);
    let (oh, ow) = (r.random_range(2..9), r.random_range(2..9));
    let wt = uniform(&mut r, &[2, 2, oh, ow]);
    let grids: Vec<SampleGrid> = (0..2)
        .map(|_| SampleGrid {
            scale_y: r.random_range(0.3..1.7),
            offset_y: r.random_range(-2.0..3.0),
            scale_x: r.random_range(0.3..1.7),
            offset_x: r.random_range(-2.0..3.0),
        })
        .collect();
    worst([Padding::Zeros, Padding::Border].map(|pad| {
        check(
            |t, v| {
                let y = t.affine_sample(v[0], &grids, oh, ow, pad)?;
                weighted_sum(t, y, &wt)
            },
            &[x.clone()],
        )
    }))
}

fn mse(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 8);
    let p = uniform(&mut r, &[3, 4]);
    let q = uniform(&mut r, &[3, 4]);
    check(|t, v| t.mse_loss(v[0], v[1]), &[p, q])
}

fn elementwise(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 9);
    let a = uniform(&mut r, &[2, 3, 4]);
    let b = uniform(&mut r, &[2, 3, 4]);
    let s = uniform(&mut r, &[3, 4]);
    let wt = uniform(&mut r, &[2, 3, 4]);
    check(
        |t, v| {
            let x = t.mul(v[0], v[1])?;
            let x = t.sub(x, v[0])?;
            let x = t.add(x, v[1])?;
            let x = t.add_suffix(x, v[2])?;
            let x = t.mul_suffix(x, v[2])?;
            let x = t.scale(x, 0.7);
            let m = t.mean(x);
            let y = weighted_sum(t, x, &wt)?;
            t.add(y, m)
        },
        &[a, b, s],
    )
}

fn shape_ops(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 10);
    let a = uniform(&mut r, &[2, 3, 4]);
    let b = uniform(&mut r, &[2, 1, 4]);
    let e = uniform(&mut r, &[3, 4]);
    let wt = uniform(&mut r, &[4, 2, 7]);
    check(
        |t, v| {
            let x = t.concat(&[v[0], v[1]], 1)?;
            let ex = t.expand_leading(v[2], 2);
            let x = t.concat(&[x, ex], 1)?;
            let x = t.reshape(x, &[2, 28])?;
            let x = t.reshape(x, &[2, 7, 4])?;
            let x = t.permute(x, &[2, 0, 1])?;
            weighted_sum(t, x, &wt)
        },
        &[a, b, e],
    )
}

fn layer_norm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 11);
    let x = uniform(&mut r, &[3, 6]);
    let g = uniform(&mut r, &[6]);
    let b = uniform(&mut r, &[6]);
    let wt = uniform(&mut r, &[3, 6]);
    check(
        |t, v| {
            let y = t.layer_norm(v[0])?;
            let y = t.mul_suffix(y, v[1])?;
            let y = t.add_suffix(y, v[2])?;
            weighted_sum(t, y, &wt)
        },
        &[x, g, b],
    )
}

/// Attention key biases add the same score to every key of a query, which the
/// softmax cancels. Their gradient is exactly zero, so a relative error is noise.
pub fn is_shift_invariant(name: &str) -> bool {
    name.ends_with(".k.bias")
}

/// Check `f` with respect to `data` and every entry of `store`; the parameters are
/// passed in as gradient-check inputs and bound in place of the store's own values.
/// Shift-invariant parameters are bound as constants.
pub fn check_with_params<F>(
    store: &ParamStore<f64>,
    data: Vec<Tensor<f64>>,
    train: bool,
    opts: GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
{
    let nd = data.len();
    let mut inputs = data;
    let checked: Vec<bool> = store.iter().map(|(_, name, _, _)| !is_shift_invariant(name)).collect();
    inputs.extend(
        store
            .iter()
            .zip(&checked)
            .filter(|(_, &c)| c)
            .map(|((_, _, _, t), _)| Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("shape matches")),
    );
    let report = finite_difference_check(
        |tape, vars| {
            let mut st = store.clone();
            let mut free = vars[nd..].iter();
            let bound = store
                .iter()
                .zip(&checked)
                .map(|((_, _, _, t), &c)| if c { *free.next().expect("one var per checked param") } else { tape.constant(t) })
                .collect();
            let binding = Binding::from_vars(bound);
            let mut ctx = Ctx {
                tape,
                binding: &binding,
                store: &mut st,
                train,
            };
            f(&mut ctx, &vars[..nd]).map_err(|e| zian_tensor::TensorError::InvalidArgument {
                op: "gradsuite",
                msg: e.to_string(),
            })
        },
        &inputs,
        opts,
    )?;
    Ok(report)
}

fn co_attention(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 12);
    let mut store = ParamStore::new();
    let co = CoAttention::new(&mut Init::new(&mut store, seed), 2, false)?;
    let va = uniform(&mut r, &[1, 2, 8, 8]);
    let vb = uniform(&mut r, &[1, 2, 8, 8]);
    let wa = uniform(&mut r, &[1, 2, 8, 8]);
    let wb = uniform(&mut r, &[1, 2, 8, 8]);
    check_with_params(&store, vec![va, vb], false, GradCheckOptions::default(), |ctx, v| {
        let (a, b) = co.forward(ctx, v[0], v[1])?;
        let sa = weighted_sum(ctx.tape, a, &wa)?;
        let sb = weighted_sum(ctx.tape, b, &wb)?;
        Ok(ctx.tape.add(sa, sb)?)
    })
}

fn fusion(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 13);
    let mut store = ParamStore::new();
    let cfg = AttentionConfig {
        enable_co_attention: true,
        enable_self_attention: true,
        m: 4,
        d: 8,
        heads: 2,
    };
    let fu = Fusion::new(&mut Init::new(&mut store, seed), 6, (4, 4), &cfg, true)?;
    let xs: Vec<_> = (0..3).map(|_| uniform(&mut r, &[2, 2, 4, 4])).collect();
    let wt = uniform(&mut r, &[2, 8, 4, 4]);
    let opts = GradCheckOptions {
        max_elements_per_input: Some(12),
        ..GradCheckOptions::default()
    };
    check_with_params(&store, xs, false, opts, |ctx, v| {
        let y = fu.forward(ctx, v)?;
        Ok(weighted_sum(ctx.tape, y, &wt)?)
    })
}

/// The full pipeline at C = 2 with a 16×16 coarse input.
pub fn tiny_zian_config() -> ZianConfig {
    ZianConfig {
        backbone: BackboneConfig {
            channels: vec![2, 3, 3],
            num_stages: 3,
            feature_channels: 2,
            output_stride: 4,
            in_channels: 3,
        },
        attention: AttentionConfig {
            enable_co_attention: true,
            enable_self_attention: true,
            m: 4,
            d: 8,
            heads: 2,
        },
        model: ModelConfig {
            input_side: 64,
            roi: RoiConfig {
                scales: vec![1.0, 2.0],
                base_side: 16,
                fine_input_side: 32,
            },
            ..ModelConfig::default()
        },
    }
}

fn zian_forward(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 14);
    let cfg = tiny_zian_config();
    let (model, store) = ZianModel::build::<f64>(&cfg, seed)?;
    let image = uniform(&mut r, &[1, 3, 64, 64]);
    let opts = GradCheckOptions {
        max_elements_per_input: Some(3),
        ..GradCheckOptions::default()
    };
    // Probe weights for every output map, drawn once so the checked function is fixed.
    let probe = std::cell::RefCell::new((r.clone(), Vec::<Tensor<f64>>::new()));
    check_with_params(&store, vec![image], true, opts, |ctx, v| {
        let pass = model.forward(ctx, v[0])?;
        let outputs: Vec<Var> = std::iter::once(pass.coarse).chain(pass.rois.iter().copied()).chain(pass.fine).collect();
        let (pr, probe) = &mut *probe.borrow_mut();
        if probe.is_empty() {
            *probe = outputs.iter().map(|&o| uniform(pr, ctx.tape.shape(o))).collect();
        }
        let mut total = weighted_sum(ctx.tape, outputs[0], &probe[0])?;
        for (&o, w) in outputs.iter().zip(probe.iter()).skip(1) {
            let s = weighted_sum(ctx.tape, o, w)?;
            total = ctx.tape.add(total, s)?;
        }
        Ok(total)
    })
}
