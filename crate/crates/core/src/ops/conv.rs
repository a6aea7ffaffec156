use std::borrow::Cow;

use rayon::prelude::*;

use super::{ConvSpec, GradPair};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

const ROW_BLOCK: usize = 8;
const COL_TILE: usize = 256;

/// `out[m×p] += a[m×k] · b[k×p]`. Each output element accumulates over `k`
/// in ascending order regardless of blocking or thread count.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    if m == 0 || p == 0 {
        return;
    }
    out.par_chunks_mut(ROW_BLOCK * p)
        .enumerate()
        .for_each(|(blk, rows)| {
            let r0 = blk * ROW_BLOCK;
            let nrows = rows.len() / p;
            for j0 in (0..p).step_by(COL_TILE) {
                let j1 = (j0 + COL_TILE).min(p);
                for kk in 0..k {
                    let brow = &b[kk * p + j0..kk * p + j1];
                    for r in 0..nrows {
                        let av = a[(r0 + r) * k + kk];
                        let orow = &mut rows[r * p + j0..r * p + j1];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o = *o + av * bv;
                        }
                    }
                }
            }
        });
}

/// `out[k×p] += aᵀ · b` with `a: m×k`, `b: m×p`; accumulation over `m` ascending.
pub(crate) fn gemm_at_b_rows<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * p);
    debug_assert_eq!(out.len(), k * p);
    if k == 0 || p == 0 {
        return;
    }
    out.par_chunks_mut(ROW_BLOCK * p)
        .enumerate()
        .for_each(|(blk, rows)| {
            let r0 = blk * ROW_BLOCK;
            let nrows = rows.len() / p;
            for j0 in (0..p).step_by(COL_TILE) {
                let j1 = (j0 + COL_TILE).min(p);
                for mm in 0..m {
                    let brow = &b[mm * p + j0..mm * p + j1];
                    for r in 0..nrows {
                        let av = a[mm * k + r0 + r];
                        let orow = &mut rows[r * p + j0..r * p + j1];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o = *o + av * bv;
                        }
                    }
                }
            }
        });
}

/// `out[m×k] += a · bᵀ` with `a: m×p`, `b: k×p`; each element is a sequential dot product.
pub(crate) fn gemm_a_bt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, p: usize) {
    if m == 0 || k == 0 {
        return;
    }
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let arow = &a[i * p..(i + 1) * p];
        for (kk, o) in row.iter_mut().enumerate() {
            let brow = &b[kk * p..(kk + 1) * p];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            *o = *o + acc;
        }
    });
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel == (1, 1) && spec.stride == (1, 1) && spec.padding == (0, 0)
}

/// Unfolds one `(c, h, w)` item into a `(c·kh·kw) × (oh·ow)` column matrix.
fn im2col<'a, T: Scalar>(
    item: &'a [T],
    (c, h, w): (usize, usize, usize),
    spec: &ConvSpec,
    (oh, ow): (usize, usize),
) -> Cow<'a, [T]> {
    if is_pointwise(spec) {
        return Cow::Borrowed(item);
    }
    let (kh, kw) = spec.kernel;
    let taps = kh * kw;
    let p = oh * ow;
    let mut col = vec![T::zero(); c * taps * p];
    if p == 0 {
        return Cow::Owned(col);
    }
    col.par_chunks_mut(taps * p).enumerate().for_each(|(ci, block)| {
        let plane = &item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut block[(ky * kw + kx) * p..(ky * kw + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    });
    Cow::Owned(col)
}

/// Scatters a column-matrix gradient back onto one `(c, h, w)` item.
fn col2im<T: Scalar>(
    col: &[T],
    (c, h, w): (usize, usize, usize),
    spec: &ConvSpec,
    (oh, ow): (usize, usize),
    out: &mut [T],
) {
    let (kh, kw) = spec.kernel;
    let taps = kh * kw;
    let p = oh * ow;
    if h * w == 0 {
        return;
    }
    debug_assert_eq!(out.len(), c * h * w);
    out.par_chunks_mut(h * w).enumerate().for_each(|(ci, plane)| {
        let block = &col[ci * taps * p..(ci + 1) * taps * p];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &block[(ky * kw + kx) * p..(ky * kw + kx + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                        if ix >= 0 && ix < w as isize {
                            let dst = &mut plane[iy as usize * w + ix as usize];
                            *dst = *dst + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    });
}

/// Validates operands and returns the output shape.
pub(crate) fn conv_output_shape<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Shape> {
    spec.validate()?;
    let Shape([n, c, h, w]) = input.shape();
    let Shape([co, ci, kh, kw]) = weight.shape();
    if c != ci {
        return shape_err(op, format!("input {} has {c} channels, weight {} expects {ci}", input.shape(), weight.shape()));
    }
    if (kh, kw) != spec.kernel {
        return shape_err(op, format!("weight kernel ({kh},{kw}) disagrees with spec kernel {:?}", spec.kernel));
    }
    if let Some(b) = bias {
        if b.numel() != co {
            return shape_err(op, format!("bias {} has {} elements, expected {co}", b.shape(), b.numel()));
        }
    }
    let Some((oh, ow)) = spec.output_size(h, w) else {
        return shape_err(op, format!("negative output size for input {h}x{w} with {spec:?}"));
    };
    Ok(Shape([n, co, oh, ow]))
}

/// Dilated 2-D cross-correlation (no kernel flip) plus bias.
///
/// `weight` is `(co, ci, kh, kw)`; `bias`, when given, has `co` elements in any
/// shape (`(co,1,1,1)` or `(1,co,1,1)` are both accepted).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = conv_output_shape("conv2d", input, weight, bias, spec)?;
    let Shape([n, c, h, w]) = input.shape();
    let Shape([_, co, oh, ow]) = out_shape;
    let k = c * spec.taps();
    let p = oh * ow;
    let mut out = Tensor::zeros(out_shape);
    for b in 0..n {
        let col = im2col(input.item(b), (c, h, w), spec, (oh, ow));
        let dst = &mut out.data_mut()[b * co * p..(b + 1) * co * p];
        if let Some(bias) = bias {
            for (row, &bv) in dst.chunks_mut(p.max(1)).zip(bias.data()) {
                row.fill(bv);
            }
        }
        gemm_acc(weight.data(), &col, dst, co, k, p);
    }
    Ok(out)
}

pub(crate) struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution without recomputing its forward value.
pub(crate) fn conv2d_grads<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = conv_output_shape("conv2d_backward", input, weight, None, spec)?;
    if grad_out.shape() != out_shape {
        return shape_err(
            "conv2d_backward",
            format!("grad_out {} but forward output is {out_shape}", grad_out.shape()),
        );
    }
    let Shape([n, c, h, w]) = input.shape();
    let Shape([_, co, oh, ow]) = out_shape;
    let k = c * spec.taps();
    let p = oh * ow;
    let mut g_in = Tensor::zeros(input.shape());
    let mut g_w = Tensor::zeros(weight.shape());
    let mut g_b = Tensor::zeros((co, 1, 1, 1));
    for b in 0..n {
        let go = &grad_out.data()[b * co * p..(b + 1) * co * p];
        for (acc, row) in g_b.data_mut().iter_mut().zip(go.chunks(p.max(1))) {
            if p > 0 {
                *acc = *acc + row.iter().copied().sum::<T>();
            }
        }
        let col = im2col(input.item(b), (c, h, w), spec, (oh, ow));
        gemm_a_bt(go, &col, g_w.data_mut(), co, k, p);

        let item_len = c * h * w;
        let gin_item = &mut g_in.data_mut()[b * item_len..(b + 1) * item_len];
        if is_pointwise(spec) {
            gemm_at_b_rows(weight.data(), go, gin_item, co, k, p);
        } else {
            let mut gcol = vec![T::zero(); k * p];
            gemm_at_b_rows(weight.data(), go, &mut gcol, co, k, p);
            col2im(&gcol, (c, h, w), spec, (oh, ow), gin_item);
        }
    }
    Ok(ConvGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    })
}

/// Gradients of [`conv2d`] for slots `input`, `weight` and `bias`.
///
/// `grad(bias)[c]` is the sum of `grad_out` over `(n, h, w)` at channel `c`,
/// returned with the bias tensor's own shape.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<GradPair<T>> {
    let value = conv2d(input, weight, bias, spec)?;
    let g = conv2d_grads(input, weight, spec, grad_out)?;
    let mut pair = GradPair::new(value).with("input", g.input).with("weight", g.weight);
    if let Some(bias) = bias {
        pair = pair.with("bias", Tensor::from_vec(bias.shape(), g.bias.into_vec())?);
    }
    Ok(pair)
}
