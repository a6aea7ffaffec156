use super::{check_same_shape, GradPair};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    check_same_shape("sigmoid_backward", input, grad_out)?;
    let value = sigmoid(input);
    let grad = Tensor::from_vec(
        input.shape(),
        value
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (T::one() - s))
            .collect(),
    )?;
    Ok(GradPair::new(value).with("input", grad))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the input is strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    check_same_shape("relu_backward", input, grad_out)?;
    let grad = Tensor::from_vec(
        input.shape(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect(),
    )?;
    Ok(GradPair::new(relu(input)).with("input", grad))
}

/// Masks `grad_out` by `output > 0`; used where only the activation output is kept.
pub(crate) fn relu_mask_grad<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

pub fn add_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    let value = add(a, b)?;
    check_same_shape("add_backward", &value, grad_out)?;
    Ok(GradPair::new(value)
        .with("a", grad_out.clone())
        .with("b", grad_out.clone()))
}

fn check_attention_operands<T: Scalar>(op: &'static str, v: &Tensor<T>, attn: &Tensor<T>) -> Result<()> {
    let Shape([n, _, h, w]) = v.shape();
    if attn.shape() != Shape([n, 1, h, w]) {
        return shape_err(
            op,
            format!("attention {} must be ({n},1,{h},{w}) to broadcast over {}", attn.shape(), v.shape()),
        );
    }
    Ok(())
}

/// `out[n,c,y,x] = v[n,c,y,x] * attn[n,0,y,x]`: one spatial map scales every channel.
pub fn mul_attention<T: Scalar>(v: &Tensor<T>, attn: &Tensor<T>) -> Result<Tensor<T>> {
    check_attention_operands("mul_attention", v, attn)?;
    let Shape([n, c, h, w]) = v.shape();
    let plane = h * w;
    let mut out = v.clone();
    for b in 0..n {
        let a = &attn.data()[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for (o, &s) in out.data_mut()[base..base + plane].iter_mut().zip(a) {
                *o = *o * s;
            }
        }
    }
    Ok(out)
}

/// Slots `v` and `attn`; the attention gradient sums over channels.
pub fn mul_attention_backward<T: Scalar>(
    v: &Tensor<T>,
    attn: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<GradPair<T>> {
    let value = mul_attention(v, attn)?;
    check_same_shape("mul_attention_backward", &value, grad_out)?;
    let g_v = mul_attention(grad_out, attn)?;
    let Shape([n, c, h, w]) = v.shape();
    let plane = h * w;
    let mut g_a = Tensor::zeros(attn.shape());
    for b in 0..n {
        let dst = &mut g_a.data_mut()[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let vs = &v.data()[base..base + plane];
            let gs = &grad_out.data()[base..base + plane];
            for i in 0..plane {
                dst[i] = dst[i] + gs[i] * vs[i];
            }
        }
    }
    Ok(GradPair::new(value).with("v", g_v).with("attn", g_a))
}

/// Stacks tensors along the channel axis, preserving input order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = inputs.first() else {
        return shape_err("concat_channels", "no inputs");
    };
    let Shape([n, _, h, w]) = first.shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        if (s.n(), s.h(), s.w()) != (n, h, w) {
            return shape_err(
                "concat_channels",
                format!("{} does not match (n,h,w) of {}", s, first.shape()),
            );
        }
        channels += s.c();
    }
    let mut data = Vec::with_capacity(n * channels * h * w);
    for b in 0..n {
        for t in inputs {
            data.extend_from_slice(t.item(b));
        }
    }
    Tensor::from_vec((n, channels, h, w), data)
}

/// Slots `"0"`, `"1"`, ... in input order.
pub fn concat_channels_backward<T: Scalar>(inputs: &[&Tensor<T>], grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    let value = concat_channels(inputs)?;
    check_same_shape("concat_channels_backward", &value, grad_out)?;
    let mut pair = GradPair::new(value);
    let mut start = 0;
    for (i, t) in inputs.iter().enumerate() {
        let c = t.shape().c();
        pair = pair.with(i.to_string(), grad_out.channel_slice(start, c)?);
        start += c;
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_and_extremes() {
        let t = Tensor::<f64>::from_vec((1, 1, 1, 3), vec![0.0, -800.0, 800.0]).unwrap();
        let s = sigmoid(&t);
        assert_eq!(s.data(), &[0.5, 0.0, 1.0]);
    }

    #[test]
    fn attention_identity_and_zero() {
        let v = Tensor::<f64>::from_fn((2, 3, 2, 2), |n, c, y, x| (n + c * 2 + y * 3 + x) as f64 - 2.5);
        let ones = Tensor::full((2, 1, 2, 2), 1.0);
        assert_eq!(mul_attention(&v, &ones).unwrap(), v);
        let zeros = Tensor::zeros((2, 1, 2, 2));
        assert!(mul_attention(&v, &zeros).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attention_broadcast_mismatch() {
        let v = Tensor::<f32>::zeros((1, 3, 2, 2));
        assert!(mul_attention(&v, &Tensor::zeros((1, 2, 2, 2))).is_err());
        assert!(mul_attention(&v, &Tensor::zeros((1, 1, 2, 3))).is_err());
    }

    #[test]
    fn concat_dense_widths() {
        let a = Tensor::<f32>::zeros((1, 2048, 2, 2));
        let b = Tensor::<f32>::zeros((1, 256, 2, 2));
        assert_eq!(concat_channels(&[&a, &b]).unwrap().shape().c(), 2304);
        let parts: Vec<_> = (0..6).map(|_| b.clone()).collect();
        let refs: Vec<_> = parts.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap().shape().c(), 1536);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros((1, 2, 2, 2));
        let b = Tensor::<f32>::zeros((1, 2, 3, 2));
        assert!(concat_channels(&[&a, &b]).is_err());
        assert!(concat_channels::<f32>(&[]).is_err());
    }

    #[test]
    fn relu_grad_masks_nonpositive() {
        let x = Tensor::<f64>::from_vec((1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::full((1, 1, 1, 3), 5.0)).unwrap();
        assert_eq!(g.grad("input").data(), &[0.0, 0.0, 5.0]);
    }
}
