use rayon::prelude::*;

use super::GradPair;
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Shape, Tensor};

fn pool_output(input: Shape, kernel: (usize, usize), stride: (usize, usize)) -> Result<(usize, usize)> {
    let (h, w) = (input.h(), input.w());
    if h == 0 || w == 0 {
        return shape_err("max_pool2d", format!("zero spatial input {input}"));
    }
    if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return shape_err("max_pool2d", format!("kernel {kernel:?} and stride {stride:?} must be positive"));
    }
    if kernel.0 > h || kernel.1 > w {
        return shape_err("max_pool2d", format!("kernel {kernel:?} larger than input {h}x{w}"));
    }
    Ok(((h - kernel.0) / stride.0 + 1, (w - kernel.1) / stride.1 + 1))
}

/// Row-major index of the first maximum in each window, per output element of one plane.
fn argmax_plane<T: Scalar>(
    plane: &[T],
    w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<usize> {
    let mut idx = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let (y0, x0) = (oy * stride.0, ox * stride.1);
            let mut best = y0 * w + x0;
            for ky in 0..kernel.0 {
                for kx in 0..kernel.1 {
                    let i = (y0 + ky) * w + x0 + kx;
                    // strict comparison keeps the first occurrence on ties
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
            }
            idx.push(best);
        }
    }
    idx
}

/// Max pooling without padding; output size `floor((in - k) / s) + 1`.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor<T>> {
    let Shape([n, c, h, w]) = input.shape();
    let (oh, ow) = pool_output(input.shape(), kernel, stride)?;
    let mut out = Tensor::zeros((n, c, oh, ow));
    let (src, dst) = (input.data(), out.data_mut());
    dst.par_chunks_mut((oh * ow).max(1))
        .zip(src.par_chunks(h * w))
        .for_each(|(o, plane)| {
            for (v, i) in o.iter_mut().zip(argmax_plane(plane, w, kernel, stride, (oh, ow))) {
                *v = plane[i];
            }
        });
    Ok(out)
}

/// Routes each output gradient to the first maximum of its window.
pub fn max_pool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    grad_out: &Tensor<T>,
) -> Result<GradPair<T>> {
    let value = max_pool2d(input, kernel, stride)?;
    if grad_out.shape() != value.shape() {
        return shape_err("max_pool2d_backward", format!("grad_out {} vs output {}", grad_out.shape(), value.shape()));
    }
    let Shape([_, _, h, w]) = input.shape();
    let Shape([_, _, oh, ow]) = value.shape();
    let mut grad = Tensor::zeros(input.shape());
    grad.data_mut()
        .par_chunks_mut(h * w)
        .zip(input.data().par_chunks(h * w))
        .zip(grad_out.data().par_chunks((oh * ow).max(1)))
        .for_each(|((g, plane), go)| {
            for (&gv, i) in go.iter().zip(argmax_plane(plane, w, kernel, stride, (oh, ow))) {
                g[i] = g[i] + gv;
            }
        });
    Ok(GradPair::new(value).with("input", grad))
}

/// Mean over `(h, w)` per channel.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let Shape([n, c, h, w]) = input.shape();
    if h * w == 0 {
        return shape_err("global_avg_pool", format!("zero spatial extent {}", input.shape()));
    }
    let denom = T::from_usize(h * w).expect("plane size fits the scalar type");
    let data = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec((n, c, 1, 1), data)
}

pub fn global_avg_pool_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<GradPair<T>> {
    let value = global_avg_pool(input)?;
    if grad_out.shape() != value.shape() {
        return shape_err("global_avg_pool_backward", format!("grad_out {} vs output {}", grad_out.shape(), value.shape()));
    }
    let plane = input.shape().plane();
    let denom = T::from_usize(plane).expect("plane size fits the scalar type");
    let mut grad = Tensor::zeros(input.shape());
    for (dst, &g) in grad.data_mut().chunks_mut(plane).zip(grad_out.data()) {
        dst.fill(g / denom);
    }
    Ok(GradPair::new(value).with("input", grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_of_four() {
        let x = Tensor::<f64>::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = max_pool2d(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::<f32>::full((1, 2, 6, 6), 1.5);
        let y = max_pool2d(&x, (2, 2), (2, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn random_matches_windowed_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::rand_uniform((1, 3, 8, 8), -1.0, 1.0, &mut rng);
        let y = max_pool2d(&x, (2, 2), (2, 2)).unwrap();
        for c in 0..3 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x.at(0, c, 2 * oy + dy, 2 * ox + dx))
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(y.at(0, c, oy, ox), m);
                }
            }
        }
    }

    #[test]
    fn ties_route_to_first() {
        let x = Tensor::<f64>::full((1, 1, 2, 2), 2.0);
        let g = max_pool2d_backward(&x, (2, 2), (2, 2), &Tensor::full((1, 1, 1, 1), 1.0)).unwrap();
        assert_eq!(g.grad("input").data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn kernel_one_stride_two_subsamples() {
        let x = Tensor::<f64>::from_fn((1, 1, 4, 4), |_, _, y, x| (y * 4 + x) as f64);
        let y = max_pool2d(&x, (1, 1), (2, 2)).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn rejects_empty_and_oversized() {
        assert!(max_pool2d(&Tensor::<f32>::zeros((1, 1, 0, 4)), (1, 1), (1, 1)).is_err());
        assert!(max_pool2d(&Tensor::<f32>::zeros((1, 1, 2, 2)), (3, 3), (1, 1)).is_err());
        assert!(global_avg_pool(&Tensor::<f32>::zeros((1, 1, 0, 0))).is_err());
    }

    #[test]
    fn gap_values() {
        let x = Tensor::<f64>::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let x = Tensor::<f32>::full((1, 2048, 16, 16), 0.25);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2048, 1, 1));
        assert!(y.data().iter().all(|&v| v == 0.25));
    }
}
