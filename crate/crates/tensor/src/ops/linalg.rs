use crate::error::{Result, TensorError};
use crate::ops::expect_dim;
use crate::real::Real;
use crate::tape::{GradSink, Op, Tape, Var};

const COL_BLOCK: usize = 256;

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major and contiguous.
///
/// Fixed loop order, so results are bitwise reproducible.
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.fill(T::zero());
    }
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        let mut i = 0;
        while i + 4 <= m {
            let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            let (c0, c1, c2, c3) = (&mut c0[j0..j1], &mut c1[j0..j1], &mut c2[j0..j1], &mut c3[j0..j1]);
            for p in 0..k {
                let a0 = a[i * k + p];
                let a1 = a[(i + 1) * k + p];
                let a2 = a[(i + 2) * k + p];
                let a3 = a[(i + 3) * k + p];
                let brow = &b[p * n + j0..p * n + j1];
                for j in 0..brow.len() {
                    let bv = brow[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
            i += 4;
        }
        while i < m {
            let crow = &mut c[i * n + j0..i * n + j1];
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n + j0..p * n + j1];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
            i += 1;
        }
    }
}

pub fn transpose<T: Real>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for (c, &v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

/// `c (+)= op(a) · op(b)` where `op` optionally transposes the stored matrix.
/// `m`, `k`, `n` describe the logical product.
#[allow(clippy::too_many_arguments)]
pub fn gemm_t<T: Real>(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let at;
    let a = if ta {
        at = transpose(k, m, a);
        &at[..]
    } else {
        a
    };
    let bt;
    let b = if tb {
        bt = transpose(n, k, b);
        &bt[..]
    } else {
        b
    };
    gemm(m, k, n, a, b, c, accumulate);
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(ashape: &[usize], bshape: &[usize], ta: bool, tb: bool) -> Result<MatDims> {
    if ashape.len() < 2 || ashape.len() != bshape.len() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: ashape.to_vec(),
            right: bshape.to_vec(),
        });
    }
    let r = ashape.len();
    for axis in 0..r - 2 {
        expect_dim("matmul", axis, ashape[axis], bshape[axis])?;
    }
    let (m, k) = if ta { (ashape[r - 1], ashape[r - 2]) } else { (ashape[r - 2], ashape[r - 1]) };
    let (kb, n) = if tb { (bshape[r - 1], bshape[r - 2]) } else { (bshape[r - 2], bshape[r - 1]) };
    let b_inner_axis = if tb { r - 1 } else { r - 2 };
    expect_dim("matmul", b_inner_axis, k, kb)?;
    Ok(MatDims {
        batch: ashape[..r - 2].iter().product(),
        m,
        k,
        n,
    })
}

impl<T: Real> Tape<T> {
    /// Matrix product over the last two axes; leading axes must agree and are batched.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Batched `op(a) · op(b)`, transposing the last two axes of an operand when its flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let d = matmul_dims(self.shape(a), self.shape(b), ta, tb)?;
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        for i in 0..d.batch {
            gemm_t(
                ta,
                tb,
                d.m,
                d.k,
                d.n,
                &av[i * d.m * d.k..(i + 1) * d.m * d.k],
                &bv[i * d.k * d.n..(i + 1) * d.k * d.n],
                &mut out[i * d.m * d.n..(i + 1) * d.m * d.n],
                false,
            );
        }
        let mut shape = self.shape(a).to_vec();
        let r = shape.len();
        shape[r - 2] = d.m;
        shape[r - 1] = d.n;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(shape, out, rg, Op::MatMul { a, b, ta, tb }))
    }
}

pub(crate) fn matmul_backward<T: Real>(
    sink: &mut GradSink<'_, T>,
    a: Var,
    b: Var,
    ta: bool,
    tb: bool,
    _out_shape: &[usize],
    gout: &[T],
) {
    let tape = sink.tape;
    let d = matmul_dims(tape.shape(a), tape.shape(b), ta, tb).expect("validated in forward");
    let (av, bv) = (tape.value(a), tape.value(b));
    let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
    sink.with(a, |g| {
        for i in 0..d.batch {
            let dc = &gout[i * mn..(i + 1) * mn];
            let bi = &bv[i * kn..(i + 1) * kn];
            let ga = &mut g[i * mk..(i + 1) * mk];
            if ta {
                // stored a is k×m: grad = op(b) · dcᵀ
                gemm_t(tb, true, d.k, d.n, d.m, bi, dc, ga, true);
            } else {
                // grad = dc · op(b)ᵀ
                gemm_t(false, !tb, d.m, d.n, d.k, dc, bi, ga, true);
            }
        }
    });
    sink.with(b, |g| {
        for i in 0..d.batch {
            let dc = &gout[i * mn..(i + 1) * mn];
            let ai = &av[i * mk..(i + 1) * mk];
            let gb = &mut g[i * kn..(i + 1) * kn];
            if tb {
                // stored b is n×k: grad = dcᵀ · op(a)
                gemm_t(true, ta, d.n, d.m, d.k, dc, ai, gb, true);
            } else {
                // grad = op(a)ᵀ · dc
                gemm_t(!ta, false, d.k, d.m, d.n, ai, dc, gb, true);
            }
        }
    });
}
