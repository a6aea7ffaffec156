//! Deformable 2-D convolution with a sibling offset-predicting convolution.
//!
//! Offsets come from `conv2d(input, offset_weight, offset_bias, spec)`, one
//! `(dy, dx)` pair per kernel tap shared across input channels: channel `2t`
//! holds `dy` and `2t + 1` holds `dx` for tap `t = ky·kw + kx`. Samples are
//! read from the zero-padded input by bilinear interpolation.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::ops::{self, conv2d_grads, gemm_a_bt, gemm_acc, gemm_at_b_rows, ConvSpec, GradPair};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DeformConv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub offset_weight: Tensor<T>,
    pub offset_bias: Tensor<T>,
    pub spec: ConvSpec,
}

impl<T: Scalar> DeformConv2d<T> {
    /// Layer with zero offset parameters, i.e. a plain (dilated) convolution.
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, spec: ConvSpec) -> Self {
        let Shape([_, ci, kh, kw]) = weight.shape();
        let taps2 = 2 * kh * kw;
        DeformConv2d {
            weight,
            bias,
            offset_weight: Tensor::zeros((taps2, ci, kh, kw)),
            offset_bias: Tensor::zeros((taps2, 1, 1, 1)),
            spec,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let Shape([co, ci, kh, kw]) = self.weight.shape();
        let taps2 = 2 * kh * kw;
        if (kh, kw) != self.spec.kernel {
            return shape_err("deform_conv2d", format!("weight kernel ({kh},{kw}) vs spec {:?}", self.spec.kernel));
        }
        if self.bias.numel() != co {
            return shape_err("deform_conv2d", format!("bias has {} elements, expected {co}", self.bias.numel()));
        }
        if self.offset_weight.shape() != Shape([taps2, ci, kh, kw]) {
            return shape_err(
                "deform_conv2d",
                format!("offset weight {} must be ({taps2},{ci},{kh},{kw})", self.offset_weight.shape()),
            );
        }
        if self.offset_bias.numel() != taps2 {
            return shape_err("deform_conv2d", format!("offset bias has {} elements, expected {taps2}", self.offset_bias.numel()));
        }
        Ok(())
    }
}

#[inline]
fn fetch<T: Scalar>(plane: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
        plane[y as usize * w + x as usize]
    } else {
        T::zero()
    }
}

/// Four-neighbour bilinear read of one `h×w` plane; zero outside `[0,h)×[0,w)`.
#[inline]
pub(crate) fn sample_plane<T: Scalar>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let (hf, wf) = (T::from_usize(h).unwrap(), T::from_usize(w).unwrap());
    if !(y > -T::one() && y < hf && x > -T::one() && x < wf) {
        return T::zero();
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (T::one() - ly, T::one() - lx);
    let (yi, xi) = (y0.to_isize().unwrap(), x0.to_isize().unwrap());
    hy * hx * fetch(plane, h, w, yi, xi)
        + hy * lx * fetch(plane, h, w, yi, xi + 1)
        + ly * hx * fetch(plane, h, w, yi + 1, xi)
        + ly * lx * fetch(plane, h, w, yi + 1, xi + 1)
}

/// Bilinear read of every channel of batch item `n` at `(y, x)`.
pub fn bilinear_sample<T: Scalar>(map: &Tensor<T>, n: usize, y: T, x: T) -> Vec<T> {
    let Shape([_, c, h, w]) = map.shape();
    let item = map.item(n);
    (0..c)
        .map(|ch| sample_plane(&item[ch * h * w..(ch + 1) * h * w], h, w, y, x))
        .collect()
}

/// Sample location for tap `(ky, kx)` at output `(oy, ox)` before offsets.
#[inline]
fn grid_point(spec: &ConvSpec, oy: usize, ox: usize, ky: usize, kx: usize) -> (isize, isize) {
    (
        (oy * spec.stride.0 + ky * spec.dilation.0) as isize - spec.padding.0 as isize,
        (ox * spec.stride.1 + kx * spec.dilation.1) as isize - spec.padding.1 as isize,
    )
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn taps(&self) -> usize {
        self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Sampling coordinates `(y, x)` for tap `t` at flattened output position `p`.
#[inline]
fn sample_coords<T: Scalar>(g: &Geometry, spec: &ConvSpec, offsets: &[T], t: usize, p: usize) -> (T, T) {
    let (oy, ox) = (p / g.ow, p % g.ow);
    let (ky, kx) = (t / g.kw, t % g.kw);
    let (gy, gx) = grid_point(spec, oy, ox, ky, kx);
    let np = g.p();
    let dy = offsets[(2 * t) * np + p];
    let dx = offsets[(2 * t + 1) * np + p];
    (T::from_isize(gy).unwrap() + dy, T::from_isize(gx).unwrap() + dx)
}

fn deform_columns<T: Scalar>(item: &[T], offsets: &[T], g: &Geometry, spec: &ConvSpec) -> Vec<T> {
    let (taps, np) = (g.taps(), g.p());
    let mut col = vec![T::zero(); g.c * taps * np];
    if np == 0 {
        return col;
    }
    col.par_chunks_mut(taps * np).enumerate().for_each(|(ci, block)| {
        let plane = &item[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for t in 0..taps {
            for p in 0..np {
                let (y, x) = sample_coords(g, spec, offsets, t, p);
                block[t * np + p] = sample_plane(plane, g.h, g.w, y, x);
            }
        }
    });
    col
}

fn geometry<T: Scalar>(input: &Tensor<T>, layer: &DeformConv2d<T>) -> Result<(Geometry, Shape)> {
    layer.validate()?;
    let out_shape = ops::conv_output_shape("deform_conv2d", input, &layer.weight, Some(&layer.bias), &layer.spec)?;
    let Shape([_, c, h, w]) = input.shape();
    let Shape([_, _, oh, ow]) = out_shape;
    let (kh, kw) = layer.spec.kernel;
    Ok((Geometry { c, h, w, oh, ow, kh, kw }, out_shape))
}

/// Deformable convolution forward pass.
///
/// With all offset parameters zero every sample lands on an integer grid point,
/// the bilinear weights are exactly `(1, 0, 0, 0)`, and the result equals
/// [`ops::conv2d`] with the same weight, bias and spec bit for bit.
pub fn deform_conv2d<T: Scalar>(input: &Tensor<T>, layer: &DeformConv2d<T>) -> Result<Tensor<T>> {
    let (g, out_shape) = geometry(input, layer)?;
    let offsets = ops::conv2d(input, &layer.offset_weight, Some(&layer.offset_bias), &layer.spec)?;
    let co = out_shape.c();
    let (k, np) = (g.c * g.taps(), g.p());
    let mut out = Tensor::zeros(out_shape);
    for b in 0..out_shape.n() {
        let col = deform_columns(input.item(b), offsets.item(b), &g, &layer.spec);
        let dst = &mut out.data_mut()[b * co * np..(b + 1) * co * np];
        for (row, &bv) in dst.chunks_mut(np.max(1)).zip(layer.bias.data()) {
            row.fill(bv);
        }
        gemm_acc(layer.weight.data(), &col, dst, co, k, np);
    }
    Ok(out)
}

/// Gradients for slots `input`, `weight`, `bias`, `offset_weight`, `offset_bias`.
///
/// The offset gradient differentiates the bilinear kernel `max(0, 1 − |q − y|)`
/// with `sign(0) = 0`, so the subgradient is zero at integer sample coordinates.
pub fn deform_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DeformConv2d<T>,
    grad_out: &Tensor<T>,
) -> Result<GradPair<T>> {
    let (g, out_shape) = geometry(input, layer)?;
    if grad_out.shape() != out_shape {
        return shape_err(
            "deform_conv2d_backward",
            format!("grad_out {} but forward output is {out_shape}", grad_out.shape()),
        );
    }
    let spec = &layer.spec;
    let offsets = ops::conv2d(input, &layer.offset_weight, Some(&layer.offset_bias), spec)?;
    let co = out_shape.c();
    let (taps, np) = (g.taps(), g.p());
    let k = g.c * taps;
    let plane = g.h * g.w;

    let mut value = Tensor::zeros(out_shape);
    let mut g_in = Tensor::zeros(input.shape());
    let mut g_w = Tensor::zeros(layer.weight.shape());
    let mut g_b = Tensor::zeros(layer.bias.shape());
    let mut g_off = Tensor::zeros(offsets.shape());

    for b in 0..out_shape.n() {
        let item = input.item(b);
        let off = offsets.item(b);
        let col = deform_columns(item, off, &g, spec);
        let go = &grad_out.data()[b * co * np..(b + 1) * co * np];

        let dst = &mut value.data_mut()[b * co * np..(b + 1) * co * np];
        for (row, &bv) in dst.chunks_mut(np.max(1)).zip(layer.bias.data()) {
            row.fill(bv);
        }
        gemm_acc(layer.weight.data(), &col, dst, co, k, np);

        if np > 0 {
            for (acc, row) in g_b.data_mut().iter_mut().zip(go.chunks(np)) {
                *acc = *acc + row.iter().copied().sum::<T>();
            }
        }
        gemm_a_bt(go, &col, g_w.data_mut(), co, k, np);
        let mut gcol = vec![T::zero(); k * np];
        gemm_at_b_rows(layer.weight.data(), go, &mut gcol, co, k, np);

        // input: each channel scatters into its own plane
        let gin_item = &mut g_in.data_mut()[b * g.c * plane..(b + 1) * g.c * plane];
        if plane > 0 {
            gin_item.par_chunks_mut(plane).enumerate().for_each(|(ci, gp)| {
                for t in 0..taps {
                    for p in 0..np {
                        let gv = gcol[(ci * taps + t) * np + p];
                        let (y, x) = sample_coords(&g, spec, off, t, p);
                        scatter_plane(gp, g.h, g.w, y, x, gv);
                    }
                }
            });
        }

        // offsets: each tap owns its (dy, dx) rows and sums over channels in order
        let goff_item = &mut g_off.data_mut()[b * 2 * taps * np..(b + 1) * 2 * taps * np];
        if np > 0 {
            goff_item.par_chunks_mut(2 * np).enumerate().for_each(|(t, rows)| {
                let (gy_row, gx_row) = rows.split_at_mut(np);
                for ci in 0..g.c {
                    let src = &item[ci * plane..(ci + 1) * plane];
                    for p in 0..np {
                        let gv = gcol[(ci * taps + t) * np + p];
                        let (y, x) = sample_coords(&g, spec, off, t, p);
                        let (dy, dx) = sample_grad_coords(src, g.h, g.w, y, x);
                        gy_row[p] = gy_row[p] + gv * dy;
                        gx_row[p] = gx_row[p] + gv * dx;
                    }
                }
            });
        }
    }

    let og = conv2d_grads(input, &layer.offset_weight, spec, &g_off)?;
    g_in.add_assign(&og.input)?;
    let g_ob = Tensor::from_vec(layer.offset_bias.shape(), og.bias.into_vec())?;
    Ok(GradPair::new(value)
        .with("input", g_in)
        .with("weight", g_w)
        .with("bias", g_b)
        .with("offset_weight", og.weight)
        .with("offset_bias", g_ob))
}

#[inline]
fn scatter_plane<T: Scalar>(plane: &mut [T], h: usize, w: usize, y: T, x: T, g: T) {
    let (hf, wf) = (T::from_usize(h).unwrap(), T::from_usize(w).unwrap());
    if !(y > -T::one() && y < hf && x > -T::one() && x < wf) {
        return;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (T::one() - ly, T::one() - lx);
    let (yi, xi) = (y0.to_isize().unwrap(), x0.to_isize().unwrap());
    for (dy, dx, wt) in [(0, 0, hy * hx), (0, 1, hy * lx), (1, 0, ly * hx), (1, 1, ly * lx)] {
        let (yy, xx) = (yi + dy, xi + dx);
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            let i = yy as usize * w + xx as usize;
            plane[i] = plane[i] + g * wt;
        }
    }
}

/// `(∂s/∂y, ∂s/∂x)` of [`sample_plane`]; zero along an axis whose coordinate is integral.
#[inline]
fn sample_grad_coords<T: Scalar>(plane: &[T], h: usize, w: usize, y: T, x: T) -> (T, T) {
    let (hf, wf) = (T::from_usize(h).unwrap(), T::from_usize(w).unwrap());
    if !(y > -T::one() && y < hf && x > -T::one() && x < wf) {
        return (T::zero(), T::zero());
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (T::one() - ly, T::one() - lx);
    let (yi, xi) = (y0.to_isize().unwrap(), x0.to_isize().unwrap());
    let v00 = fetch(plane, h, w, yi, xi);
    let v01 = fetch(plane, h, w, yi, xi + 1);
    let v10 = fetch(plane, h, w, yi + 1, xi);
    let v11 = fetch(plane, h, w, yi + 1, xi + 1);
    let dy = if ly == T::zero() {
        T::zero()
    } else {
        hx * (v10 - v00) + lx * (v11 - v01)
    };
    let dx = if lx == T::zero() {
        T::zero()
    } else {
        hy * (v01 - v00) + ly * (v11 - v10)
    };
    (dy, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, co: usize, ci: usize, spec: ConvSpec) -> DeformConv2d<f64> {
        let (kh, kw) = spec.kernel;
        DeformConv2d::new(
            Tensor::rand_uniform((co, ci, kh, kw), -1.0, 1.0, rng),
            Tensor::rand_uniform((co, 1, 1, 1), -1.0, 1.0, rng),
            spec,
        )
    }

    #[test]
    fn sample_integer_point_is_exact() {
        let m = Tensor::<f64>::from_fn((1, 2, 3, 3), |_, c, y, x| (c * 9 + y * 3 + x) as f64);
        assert_eq!(bilinear_sample(&m, 0, 1.0, 2.0), vec![5.0, 14.0]);
    }

    #[test]
    fn sample_midpoint_averages() {
        let m = Tensor::<f64>::from_vec((1, 1, 1, 2), vec![3.0, 8.0]).unwrap();
        assert_eq!(bilinear_sample(&m, 0, 0.0, 0.5), vec![5.5]);
    }

    #[test]
    fn sample_far_outside_is_zero() {
        let m = Tensor::<f64>::full((1, 3, 4, 4), 2.0);
        assert_eq!(bilinear_sample(&m, 0, -50.0, 1.0), vec![0.0; 3]);
        assert_eq!(bilinear_sample(&m, 0, 1.0, 4.0), vec![0.0; 3]);
    }

    #[test]
    fn zero_offsets_reduce_to_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = ConvSpec::atrous3x3(2);
        let layer = random_layer(&mut rng, 3, 2, spec);
        let x = Tensor::rand_uniform((2, 2, 6, 5), -1.0, 1.0, &mut rng);
        let a = deform_conv2d(&x, &layer).unwrap();
        let b = ops::conv2d(&x, &layer.weight, Some(&layer.bias), &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_field_ignores_offsets_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = ConvSpec::square(3).with_padding(1);
        let mut layer = random_layer(&mut rng, 2, 2, spec);
        layer.offset_weight = Tensor::rand_uniform(layer.offset_weight.shape(), -0.05, 0.05, &mut rng);
        layer.offset_bias = Tensor::rand_uniform(layer.offset_bias.shape(), -0.4, 0.4, &mut rng);
        let (h, w) = (9, 9);
        let x = Tensor::full((1, 2, h, w), 1.25);
        let out = deform_conv2d(&x, &layer).unwrap();
        let plain = ops::conv2d(&x, &layer.weight, Some(&layer.bias), &spec).unwrap();
        let offsets = ops::conv2d(&x, &layer.offset_weight, Some(&layer.offset_bias), &spec).unwrap();
        let mut checked = 0;
        for oy in 0..h {
            for ox in 0..w {
                let inside = (0..9).all(|t| {
                    let (gy, gx) = grid_point(&spec, oy, ox, t / 3, t % 3);
                    let y = gy as f64 + offsets.at(0, 2 * t, oy, ox);
                    let x = gx as f64 + offsets.at(0, 2 * t + 1, oy, ox);
                    y >= 0.0 && x >= 0.0 && y.ceil() <= (h - 1) as f64 && x.ceil() <= (w - 1) as f64
                        && (gy >= 0 && gx >= 0 && gy < h as isize && gx < w as isize)
                });
                if inside {
                    checked += 1;
                    for c in 0..2 {
                        assert!((out.at(0, c, oy, ox) - plain.at(0, c, oy, ox)).abs() < 1e-12);
                    }
                }
            }
        }
        assert!(checked >= 25, "only {checked} interior positions");
    }

    #[test]
    fn integer_offset_shifts_rows() {
        let x = Tensor::<f64>::from_fn((1, 1, 5, 4), |_, _, y, x| (y * 10 + x) as f64);
        let mut layer = DeformConv2d::new(
            Tensor::full((1, 1, 1, 1), 2.0),
            Tensor::full((1, 1, 1, 1), 0.5),
            ConvSpec::square(1),
        );
        layer.offset_bias = Tensor::from_vec((2, 1, 1, 1), vec![1.0, 0.0]).unwrap();
        let out = deform_conv2d(&x, &layer).unwrap();
        for y in 0..4 {
            for xx in 0..4 {
                assert_eq!(out.at(0, 0, y, xx), 2.0 * x.at(0, 0, y + 1, xx) + 0.5);
            }
        }
        // last row samples the zero padding
        assert_eq!(out.at(0, 0, 4, 0), 0.5);
    }

    #[test]
    fn zero_offset_backward_matches_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let spec = ConvSpec::atrous3x3(1);
        let layer = random_layer(&mut rng, 3, 2, spec);
        let x = Tensor::rand_uniform((1, 2, 5, 5), -1.0, 1.0, &mut rng);
        let go = Tensor::rand_uniform((1, 3, 5, 5), -1.0, 1.0, &mut rng);
        let d = deform_conv2d_backward(&x, &layer, &go).unwrap();
        let c = ops::conv2d_backward(&x, &layer.weight, Some(&layer.bias), &spec, &go).unwrap();
        for slot in ["input", "weight", "bias"] {
            assert!(d.grad(slot).max_abs_diff(c.grad(slot)) < 1e-12, "{slot}");
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut layer = random_layer(&mut rng, 2, 2, ConvSpec::atrous3x3(1));
        layer.offset_bias = Tensor::rand_uniform(layer.offset_bias.shape(), 0.2, 0.8, &mut rng);
        let x = Tensor::rand_uniform((1, 2, 4, 4), -1.0, 1.0, &mut rng);
        let d = deform_conv2d_backward(&x, &layer, &Tensor::zeros((1, 2, 4, 4))).unwrap();
        for (slot, g) in &d.grads {
            assert!(g.data().iter().all(|&v| v == 0.0), "{slot}");
        }
    }

    #[test]
    fn rejects_bad_offset_shapes() {
        let mut layer = DeformConv2d::<f64>::new(Tensor::zeros((2, 2, 3, 3)), Tensor::zeros((2, 1, 1, 1)), ConvSpec::atrous3x3(1));
        layer.offset_weight = Tensor::zeros((9, 2, 3, 3));
        assert!(deform_conv2d(&Tensor::zeros((1, 2, 4, 4)), &layer).is_err());
        let layer = DeformConv2d::<f64>::new(Tensor::zeros((2, 2, 3, 3)), Tensor::zeros((2, 1, 1, 1)), ConvSpec::atrous3x3(1));
        assert!(deform_conv2d(&Tensor::zeros((1, 3, 4, 4)), &layer).is_err());
    }
}
