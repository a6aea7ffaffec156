use super::elementwise::sigmoid_scalar;
use super::{check_same_shape, gemm_a_bt, gemm_acc, GradPair};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Spatial correlation `R = QᵀK` for each batch item.
///
/// With `N = h·w`, `result[n, i, y, x]` is the dot product over channels of the
/// query at flattened position `i` and the key at `(y, x)`. The first axis is
/// the query index; the trailing `(h, w)` axes index keys.
pub fn affinity_matrix<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("affinity_matrix", q, k)?;
    let Shape([n, c, h, w]) = q.shape();
    let npos = h * w;
    let mut out = Tensor::zeros((n, npos, h, w));
    let mut qt = vec![T::zero(); npos * c];
    for b in 0..n {
        let qi = q.item(b);
        for ch in 0..c {
            for i in 0..npos {
                qt[i * c + ch] = qi[ch * npos + i];
            }
        }
        let dst = &mut out.data_mut()[b * npos * npos..(b + 1) * npos * npos];
        gemm_acc(&qt, k.item(b), dst, npos, c, npos);
    }
    Ok(out)
}

/// Slots `q` and `k`.
pub fn affinity_matrix_backward<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    let value = affinity_matrix(q, k)?;
    check_same_shape("affinity_matrix_backward", &value, grad_out)?;
    let Shape([n, c, h, w]) = q.shape();
    let npos = h * w;
    let mut g_q = Tensor::zeros(q.shape());
    let mut g_k = Tensor::zeros(k.shape());
    let item = c * npos;
    for b in 0..n {
        let g = &grad_out.data()[b * npos * npos..(b + 1) * npos * npos];
        // dQ[c, i] = sum_j K[c, j] G[i, j]
        gemm_a_bt(k.item(b), g, &mut g_q.data_mut()[b * item..(b + 1) * item], c, npos, npos);
        // dK[c, j] = sum_i Q[c, i] G[i, j]
        gemm_acc(q.item(b), g, &mut g_k.data_mut()[b * item..(b + 1) * item], c, npos, npos);
    }
    Ok(GradPair::new(value).with("q", g_q).with("k", g_k))
}

/// Largest value strictly below one and smallest positive normal, per precision.
fn open_unit_bounds<T: Scalar>() -> (T, T) {
    let half_ulp = T::epsilon() / (T::one() + T::one());
    (T::min_positive_value(), T::one() - half_ulp)
}

/// Sigmoid then mean over the leading (query) axis: `(n, N, h, w) -> (n, 1, h, w)`.
///
/// Saturated results are clamped to the nearest representable values inside
/// `(0, 1)`, so the map never reaches exactly 0 or 1.
pub fn attn_collapse<T: Scalar>(r: &Tensor<T>) -> Result<Tensor<T>> {
    let Shape([n, big_n, h, w]) = r.shape();
    if big_n == 0 {
        return shape_err("attn_collapse", format!("empty pooling axis in {}", r.shape()));
    }
    let plane = h * w;
    let denom = T::from_usize(big_n).expect("axis length fits the scalar type");
    let (lo, hi) = open_unit_bounds::<T>();
    let mut out = Tensor::zeros((n, 1, h, w));
    for b in 0..n {
        let src = r.item(b);
        let dst = &mut out.data_mut()[b * plane..(b + 1) * plane];
        for i in 0..big_n {
            for (o, &v) in dst.iter_mut().zip(&src[i * plane..(i + 1) * plane]) {
                *o = *o + sigmoid_scalar(v);
            }
        }
        for o in dst.iter_mut() {
            let mean: T = *o / denom;
            *o = mean.max(lo).min(hi);
        }
    }
    Ok(out)
}

/// Slot `input`: `grad_out / N · σ(r)(1 − σ(r))` broadcast over the pooled axis.
pub fn attn_collapse_backward<T: Scalar>(r: &Tensor<T>, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    let value = attn_collapse(r)?;
    check_same_shape("attn_collapse_backward", &value, grad_out)?;
    let Shape([n, big_n, h, w]) = r.shape();
    let plane = h * w;
    let denom = T::from_usize(big_n).expect("axis length fits the scalar type");
    let mut grad = Tensor::zeros(r.shape());
    for b in 0..n {
        let go = &grad_out.data()[b * plane..(b + 1) * plane];
        for i in 0..big_n {
            let base = (b * big_n + i) * plane;
            let src = &r.data()[base..base + plane];
            for ((o, &v), &g) in grad.data_mut()[base..base + plane].iter_mut().zip(src).zip(go) {
                let s = sigmoid_scalar(v);
                *o = g / denom * s * (T::one() - s);
            }
        }
    }
    Ok(GradPair::new(value).with("input", grad))
}
