use rayon::prelude::*;

use super::GradPair;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Source taps `(lo, hi, frac)` for each output coordinate along one axis,
/// using half-pixel centres (align-corners false).
fn axis_taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, T::from_f64_lossy(frac))
        })
        .collect()
}

fn resize_shape<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Shape> {
    if out_h == 0 || out_w == 0 {
        return shape_err("bilinear_resize", format!("target size {out_h}x{out_w} must be positive"));
    }
    if input.shape().plane() == 0 {
        return shape_err("bilinear_resize", format!("empty input {}", input.shape()));
    }
    Ok(input.shape().with_hw(out_h, out_w))
}

/// Bilinear interpolation to `(out_h, out_w)` with half-pixel centres and edge clamping.
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let shape = resize_shape(input, out_h, out_w)?;
    let Shape([_, _, h, w]) = input.shape();
    let ys = axis_taps::<T>(h, out_h);
    let xs = axis_taps::<T>(w, out_w);
    let mut out = Tensor::zeros(shape);
    out.data_mut()
        .par_chunks_mut(out_h * out_w)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(dst, src)| {
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let hy = T::one() - ly;
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let hx = T::one() - lx;
                    let top = hx * src[y0 * w + x0] + lx * src[y0 * w + x1];
                    let bot = hx * src[y1 * w + x0] + lx * src[y1 * w + x1];
                    dst[oy * out_w + ox] = hy * top + ly * bot;
                }
            }
        });
    Ok(out)
}

/// Transpose of [`bilinear_resize`]: scatters each output gradient with its interpolation weights.
pub fn bilinear_resize_backward<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    grad_out: &Tensor<T>,
) -> Result<GradPair<T>> {
    let value = bilinear_resize(input, out_h, out_w)?;
    if grad_out.shape() != value.shape() {
        return shape_err("bilinear_resize_backward", format!("grad_out {} vs output {}", grad_out.shape(), value.shape()));
    }
    let Shape([_, _, h, w]) = input.shape();
    let ys = axis_taps::<T>(h, out_h);
    let xs = axis_taps::<T>(w, out_w);
    let mut grad = Tensor::zeros(input.shape());
    grad.data_mut()
        .par_chunks_mut(h * w)
        .zip(grad_out.data().par_chunks(out_h * out_w))
        .for_each(|(dst, go)| {
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let hy = T::one() - ly;
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let hx = T::one() - lx;
                    let g = go[oy * out_w + ox];
                    for (i, wt) in [
                        (y0 * w + x0, hy * hx),
                        (y0 * w + x1, hy * lx),
                        (y1 * w + x0, ly * hx),
                        (y1 * w + x1, ly * lx),
                    ] {
                        dst[i] = dst[i] + g * wt;
                    }
                }
            }
        });
    Ok(GradPair::new(value).with("input", grad))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return shape_err("upsample_nearest", "factor must be positive");
    }
    let Shape([n, c, h, w]) = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros((n, c, oh, ow));
    if oh * ow == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(input.data().par_chunks(h * w))
        .for_each(|(dst, src)| {
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / factor) * w + x / factor];
                }
            }
        });
    Ok(out)
}

/// Sums each `factor × factor` block of `grad_out`.
pub fn upsample_nearest_backward<T: Scalar>(input: &Tensor<T>, factor: usize, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    let value = upsample_nearest(input, factor)?;
    if grad_out.shape() != value.shape() {
        return shape_err("upsample_nearest_backward", format!("grad_out {} vs output {}", grad_out.shape(), value.shape()));
    }
    let Shape([_, _, h, w]) = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut grad = Tensor::zeros(input.shape());
    if oh * ow > 0 {
        grad.data_mut()
            .par_chunks_mut(h * w)
            .zip(grad_out.data().par_chunks(oh * ow))
            .for_each(|(dst, go)| {
                for y in 0..oh {
                    for x in 0..ow {
                        let i = (y / factor) * w + x / factor;
                        dst[i] = dst[i] + go[y * ow + x];
                    }
                }
            });
    }
    Ok(GradPair::new(value).with("input", grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_replicates() {
        let x = Tensor::<f32>::from_fn((1, 256, 1, 1), |_, c, _, _| c as f32 * 0.37 - 11.0);
        let y = bilinear_resize(&x, 16, 16).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 256, 16, 16));
        for c in 0..256 {
            assert!(y.item(0)[c * 256..(c + 1) * 256].iter().all(|&v| v == x.data()[c]));
        }
    }

    #[test]
    fn same_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::rand_uniform((2, 3, 5, 7), -1.0, 1.0, &mut rng);
        assert_eq!(bilinear_resize(&x, 5, 7).unwrap(), x);
    }

    #[test]
    fn hand_interpolated_row() {
        // out x=0: src -0.25 -> clamp 0; x=1: 0.25; x=2: 0.75; x=3: 1.25 -> clamp to last
        let x = Tensor::<f64>::from_vec((1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn rejects_zero_target() {
        let x = Tensor::<f64>::zeros((1, 1, 2, 2));
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }

    #[test]
    fn nearest_of_single_pixel_is_block() {
        let x = Tensor::<f64>::from_vec((1, 1, 1, 1), vec![7.0]).unwrap();
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[7.0; 4]);
    }

    #[test]
    fn nearest_backward_sums_blocks() {
        let x = Tensor::<f64>::zeros((1, 1, 1, 2));
        let go = Tensor::from_vec((1, 1, 2, 4), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let g = upsample_nearest_backward(&x, 2, &go).unwrap();
        assert_eq!(g.grad("input").data(), &[14.0, 22.0]);
    }
}
