//! Differentiable primitives over [`Tensor`].
//!
//! Every forward op has a matching `*_backward` that returns a [`GradPair`]
//! holding the forward value and one gradient per named input slot. There is
//! no tape: composite blocks chain these calls explicitly.
//!
//! Work is split across rayon threads by output channel (or by the axis that
//! owns each output element) and every reduction runs in a fixed sequential
//! order, so results are bit-identical for any thread count.

mod attention;
mod conv;
mod elementwise;
mod pool;
mod resize;

use std::collections::BTreeMap;

pub use attention::{affinity_matrix, affinity_matrix_backward, attn_collapse, attn_collapse_backward};
pub use conv::{conv2d, conv2d_backward};
pub(crate) use conv::{conv2d_grads, conv_output_shape, gemm_a_bt, gemm_acc, gemm_at_b_rows};
pub(crate) use elementwise::relu_mask_grad;
pub use elementwise::{
    add, add_backward, concat_channels, concat_channels_backward, mul_attention, mul_attention_backward,
    relu, relu_backward, sigmoid, sigmoid_backward,
};
pub use pool::{global_avg_pool, global_avg_pool_backward, max_pool2d, max_pool2d_backward};
pub use resize::{
    bilinear_resize, bilinear_resize_backward, upsample_nearest, upsample_nearest_backward,
};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Geometry of a 2-D convolution or pooling window, as `(vertical, horizontal)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no dilation.
    pub const fn square(k: usize) -> Self {
        ConvSpec {
            kernel: (k, k),
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }

    /// 3×3 kernel with `padding == dilation == rate`; preserves spatial size.
    pub const fn atrous3x3(rate: usize) -> Self {
        ConvSpec {
            kernel: (3, 3),
            stride: (1, 1),
            padding: (rate, rate),
            dilation: (rate, rate),
        }
    }

    pub const fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub const fn with_padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub const fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            kernel,
            stride,
            dilation,
            ..
        } = *self;
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::InvalidSpec(format!("kernel {kernel:?} must be positive")));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidSpec(format!("stride {stride:?} must be positive")));
        }
        if dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::InvalidSpec(format!("dilation {dilation:?} must be positive")));
        }
        Ok(())
    }

    /// `floor((in + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is negative.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let axis = |len: usize, k: usize, s: usize, p: usize, d: usize| {
            let span = d * (k - 1) + 1;
            // floor((x - span) / s) + 1 == floor((x - span + s) / s)
            let num = (len + 2 * p + s).checked_sub(span)?;
            Some(num / s)
        };
        Some((
            axis(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            axis(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }

    pub fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec::square(1)
    }
}

/// Forward value plus per-input gradients, keyed by input slot name.
#[derive(Debug, Clone)]
pub struct GradPair<T: Scalar> {
    pub value: Tensor<T>,
    pub grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Tensor<T>) -> Self {
        GradPair {
            value,
            grads: BTreeMap::new(),
        }
    }

    pub fn with(mut self, slot: impl Into<String>, grad: Tensor<T>) -> Self {
        self.grads.insert(slot.into(), grad);
        self
    }

    /// Panics if the slot was not produced. Slot names are fixed per op; variadic
    /// ops use `"0"`, `"1"`, ...
    pub fn grad(&self, slot: &str) -> &Tensor<T> {
        self.grads
            .get(slot)
            .unwrap_or_else(|| panic!("no gradient for slot `{slot}`"))
    }

    pub fn take(&mut self, slot: &str) -> Option<Tensor<T>> {
        self.grads.remove(slot)
    }
}

pub(crate) fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return crate::error::shape_err(op, format!("{} vs {}", a.shape(), b.shape()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let s = ConvSpec::atrous3x3(24);
        assert_eq!(s.output_size(16, 16), Some((16, 16)));
        let s = ConvSpec::square(3).with_stride(2).with_padding(1);
        assert_eq!(s.output_size(8, 7), Some((4, 4)));
        assert_eq!(ConvSpec::square(5).output_size(4, 4), Some((0, 0)));
        assert_eq!(ConvSpec::square(5).output_size(3, 3), None);
        assert_eq!(ConvSpec::square(1).output_size(0, 0), Some((0, 0)));
    }

    #[test]
    fn validate_rejects_zero_fields() {
        assert!(ConvSpec::square(0).validate().is_err());
        assert!(ConvSpec::square(3).with_stride(0).validate().is_err());
        assert!(ConvSpec::square(3).with_dilation(0).validate().is_err());
    }
}
