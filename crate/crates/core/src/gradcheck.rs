//! Central-difference verification of analytic backward passes.
//!
//! The scalar loss is the plain sum of the op's outputs, so the analytic side
//! is the backward pass evaluated at an all-ones upstream gradient. The
//! numeric side sums per-output differences `(y⁺ − y⁻) / 2ε` rather than
//! differencing two loss totals, which keeps cancellation error proportional
//! to the outputs the probe actually moves.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{deform_conv2d, deform_conv2d_backward, DeformConv2d};
use crate::error::{Error, Result};
use crate::graph::{LayerGraph, Params};
use crate::ops::{self, ConvSpec};
use crate::tensor::Tensor;

/// Denominator floor in the relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub const REL_ERR_FLOOR: f64 = 1e-8;
pub const DEFAULT_EPS: f64 = 1e-6;

/// A double-precision op with (optionally) an analytic backward.
pub trait DiffOp: Sync {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    /// Gradient of `sum(forward(inputs) * grad_out)` with respect to each input.
    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let _ = (inputs, grad_out);
        Err(Error::NoBackward(self.name().to_string()))
    }
}

/// Outcome of one check; `worst` is `(input index, flat element index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(usize, usize)>,
    pub probes: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Perturbs every input scalar by `±epsilon` and returns the max relative error.
pub fn grad_check(op: &dyn DiffOp, inputs: &[Tensor<f64>], epsilon: f64) -> Result<f64> {
    grad_check_report(op, inputs, epsilon, None).map(|r| r.max_rel_error)
}

/// Like [`grad_check`], but with `max_probes = Some(k)` only `k` elements per
/// input (chosen by a fixed-seed sampler) are perturbed.
pub fn grad_check_report(
    op: &dyn DiffOp,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    max_probes: Option<usize>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::Precondition(format!(
            "epsilon {epsilon:e} outside [1e-7, 1e-4]"
        )));
    }
    let out = op.forward(inputs)?;
    let ones = Tensor::full(out.shape(), 1.0);
    let analytic = op.backward(inputs, &ones)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Precondition(format!(
            "{} returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }
    for (g, x) in analytic.iter().zip(inputs) {
        if g.shape() != x.shape() {
            return crate::error::shape_err(
                "grad_check",
                format!("{}: gradient {} for input {}", op.name(), g.shape(), x.shape()),
            );
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        probes: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for slot in 0..inputs.len() {
        let len = inputs[slot].numel();
        let picks: Vec<usize> = match max_probes {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for idx in picks {
            let orig = inputs[slot].data()[idx];
            work[slot].data_mut()[idx] = orig + epsilon;
            let plus = op.forward(&work)?;
            work[slot].data_mut()[idx] = orig - epsilon;
            let minus = op.forward(&work)?;
            work[slot].data_mut()[idx] = orig;

            let numeric = plus
                .data()
                .iter()
                .zip(minus.data())
                .map(|(p, m)| p - m)
                .sum::<f64>()
                / (2.0 * epsilon);
            let err = relative_error(analytic[slot].data()[idx], numeric);
            report.probes += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((slot, idx));
            }
        }
    }
    Ok(report)
}

type ForwardFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Send + Sync>;
type BackwardFn = Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>> + Send + Sync>;

/// An op assembled from closures. Built with [`FnOp::forward_only`] it has no
/// backward and is rejected by [`grad_check`].
pub struct FnOp {
    name: String,
    forward: ForwardFn,
    backward: Option<BackwardFn>,
}

impl FnOp {
    pub fn new(
        name: impl Into<String>,
        forward: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Send + Sync + 'static,
        backward: impl Fn(&[Tensor<f64>], &Tensor<f64>) -> Result<Vec<Tensor<f64>>> + Send + Sync + 'static,
    ) -> Self {
        FnOp {
            name: name.into(),
            forward: Box::new(forward),
            backward: Some(Box::new(backward)),
        }
    }

    pub fn forward_only(
        name: impl Into<String>,
        forward: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + Send + Sync + 'static,
    ) -> Self {
        FnOp {
            name: name.into(),
            forward: Box::new(forward),
            backward: None,
        }
    }
}

impl DiffOp for FnOp {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        (self.forward)(inputs)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        match &self.backward {
            Some(b) => b(inputs, grad_out),
            None => Err(Error::NoBackward(self.name.clone())),
        }
    }
}

fn arity(name: &str, inputs: &[Tensor<f64>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::Precondition(format!("{name} takes {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

fn take_slots(mut pair: ops::GradPair<f64>, slots: &[&str]) -> Vec<Tensor<f64>> {
    slots
        .iter()
        .map(|s| pair.take(s).unwrap_or_else(|| panic!("missing slot {s}")))
        .collect()
}

/// Inputs: `[input, weight, bias]`.
pub struct Conv2dOp(pub ConvSpec);

impl DiffOp for Conv2dOp {
    fn name(&self) -> &str {
        "conv2d"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("conv2d", x, 3)?;
        ops::conv2d(&x[0], &x[1], Some(&x[2]), &self.0)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        arity("conv2d", x, 3)?;
        let pair = ops::conv2d_backward(&x[0], &x[1], Some(&x[2]), &self.0, g)?;
        Ok(take_slots(pair, &["input", "weight", "bias"]))
    }
}

pub struct MaxPoolOp {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

impl DiffOp for MaxPoolOp {
    fn name(&self) -> &str {
        "max_pool2d"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("max_pool2d", x, 1)?;
        ops::max_pool2d(&x[0], self.kernel, self.stride)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::max_pool2d_backward(&x[0], self.kernel, self.stride, g)?, &["input"]))
    }
}

pub struct GlobalAvgPoolOp;

impl DiffOp for GlobalAvgPoolOp {
    fn name(&self) -> &str {
        "global_avg_pool"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("global_avg_pool", x, 1)?;
        ops::global_avg_pool(&x[0])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::global_avg_pool_backward(&x[0], g)?, &["input"]))
    }
}

pub struct BilinearResizeOp {
    pub out_h: usize,
    pub out_w: usize,
}

impl DiffOp for BilinearResizeOp {
    fn name(&self) -> &str {
        "bilinear_resize"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("bilinear_resize", x, 1)?;
        ops::bilinear_resize(&x[0], self.out_h, self.out_w)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::bilinear_resize_backward(&x[0], self.out_h, self.out_w, g)?, &["input"]))
    }
}

pub struct UpsampleNearestOp(pub usize);

impl DiffOp for UpsampleNearestOp {
    fn name(&self) -> &str {
        "upsample_nearest"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("upsample_nearest", x, 1)?;
        ops::upsample_nearest(&x[0], self.0)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::upsample_nearest_backward(&x[0], self.0, g)?, &["input"]))
    }
}

/// Variadic: every input is concatenated along channels.
pub struct ConcatOp;

impl DiffOp for ConcatOp {
    fn name(&self) -> &str {
        "concat_channels"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::concat_channels(&x.iter().collect::<Vec<_>>())
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut pair = ops::concat_channels_backward(&x.iter().collect::<Vec<_>>(), g)?;
        Ok((0..x.len()).map(|i| pair.take(&i.to_string()).expect("slot")).collect())
    }
}

pub struct SigmoidOp;

impl DiffOp for SigmoidOp {
    fn name(&self) -> &str {
        "sigmoid"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("sigmoid", x, 1)?;
        Ok(ops::sigmoid(&x[0]))
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::sigmoid_backward(&x[0], g)?, &["input"]))
    }
}

pub struct ReluOp;

impl DiffOp for ReluOp {
    fn name(&self) -> &str {
        "relu"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("relu", x, 1)?;
        Ok(ops::relu(&x[0]))
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::relu_backward(&x[0], g)?, &["input"]))
    }
}

pub struct AddOp;

impl DiffOp for AddOp {
    fn name(&self) -> &str {
        "add"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("add", x, 2)?;
        ops::add(&x[0], &x[1])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::add_backward(&x[0], &x[1], g)?, &["a", "b"]))
    }
}

/// Inputs: `[v, attn]`.
pub struct MulAttentionOp;

impl DiffOp for MulAttentionOp {
    fn name(&self) -> &str {
        "mul_attention"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("mul_attention", x, 2)?;
        ops::mul_attention(&x[0], &x[1])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::mul_attention_backward(&x[0], &x[1], g)?, &["v", "attn"]))
    }
}

/// Inputs: `[q, k]`.
pub struct AffinityOp;

impl DiffOp for AffinityOp {
    fn name(&self) -> &str {
        "affinity_matrix"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("affinity_matrix", x, 2)?;
        ops::affinity_matrix(&x[0], &x[1])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::affinity_matrix_backward(&x[0], &x[1], g)?, &["q", "k"]))
    }
}

pub struct AttnCollapseOp;

impl DiffOp for AttnCollapseOp {
    fn name(&self) -> &str {
        "attn_collapse"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        arity("attn_collapse", x, 1)?;
        ops::attn_collapse(&x[0])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(take_slots(ops::attn_collapse_backward(&x[0], g)?, &["input"]))
    }
}

/// Inputs: `[input, weight, bias, offset_weight, offset_bias]`.
pub struct DeformConv2dOp(pub ConvSpec);

impl DeformConv2dOp {
    fn layer(&self, x: &[Tensor<f64>]) -> Result<DeformConv2d<f64>> {
        arity("deform_conv2d", x, 5)?;
        Ok(DeformConv2d {
            weight: x[1].clone(),
            bias: x[2].clone(),
            offset_weight: x[3].clone(),
            offset_bias: x[4].clone(),
            spec: self.0,
        })
    }
}

impl DiffOp for DeformConv2dOp {
    fn name(&self) -> &str {
        "deform_conv2d"
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        deform_conv2d(&x[0], &self.layer(x)?)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let pair = deform_conv2d_backward(&x[0], &self.layer(x)?, g)?;
        Ok(take_slots(pair, &["input", "weight", "bias", "offset_weight", "offset_bias"]))
    }
}

type Feeds<'g, 't> = Vec<(&'g str, &'t Tensor<f64>)>;

/// A whole [`LayerGraph`] as one op.
///
/// Inputs are the graph inputs followed by every parameter, both in node
/// order; the output is all graph outputs flattened into `(1, total, 1, 1)`.
pub struct GraphOp<'a> {
    name: String,
    graph: &'a LayerGraph,
    inputs: Vec<String>,
    keys: Vec<String>,
}

impl<'a> GraphOp<'a> {
    pub fn new(name: impl Into<String>, graph: &'a LayerGraph) -> Self {
        GraphOp {
            name: name.into(),
            graph,
            inputs: graph.input_names().into_iter().map(String::from).collect(),
            keys: graph.param_shapes().into_iter().map(|(k, _)| k).collect(),
        }
    }

    /// Packs feeds and params into the op's input list.
    pub fn pack(&self, feeds: &[(&str, &Tensor<f64>)], params: &Params<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut out = Vec::with_capacity(self.inputs.len() + self.keys.len());
        for name in &self.inputs {
            let t = feeds
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Graph(format!("no tensor fed for input `{name}`")))?;
            out.push(t.1.clone());
        }
        for k in &self.keys {
            out.push(params.get(k)?.clone());
        }
        Ok(out)
    }

    /// Graph input or parameter key behind input slot `i`.
    pub fn slot_name(&self, i: usize) -> &str {
        if i < self.inputs.len() {
            &self.inputs[i]
        } else {
            &self.keys[i - self.inputs.len()]
        }
    }

    fn unpack<'t>(&self, x: &'t [Tensor<f64>]) -> Result<(Feeds<'_, 't>, Params<f64>)> {
        arity(&self.name, x, self.inputs.len() + self.keys.len())?;
        let feeds = self.inputs.iter().map(String::as_str).zip(x).collect();
        let mut params = Params::new();
        for (k, t) in self.keys.iter().zip(&x[self.inputs.len()..]) {
            params.insert(k.clone(), t.clone());
        }
        Ok((feeds, params))
    }
}

impl DiffOp for GraphOp<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (feeds, params) = self.unpack(x)?;
        let acts = self.graph.forward(&params, &feeds)?;
        let mut flat = Vec::new();
        for node in self.graph.outputs() {
            flat.extend_from_slice(acts.get(&node.name)?.data());
        }
        Tensor::from_vec((1, flat.len(), 1, 1), flat)
    }

    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (feeds, params) = self.unpack(x)?;
        let acts = self.graph.forward(&params, &feeds)?;
        let mut seeds = Vec::new();
        let mut start = 0;
        for node in self.graph.outputs() {
            let shape = acts.get(&node.name)?.shape();
            let len = shape.numel();
            if start + len > g.numel() {
                return crate::error::shape_err("GraphOp::backward", format!("upstream gradient {} too short", g.shape()));
            }
            seeds.push((node.name.as_str(), Tensor::from_vec(shape, g.data()[start..start + len].to_vec())?));
            start += len;
        }
        let seed_refs: Vec<(&str, &Tensor<f64>)> = seeds.iter().map(|(n, t)| (*n, t)).collect();
        let mut grads = self.graph.backward(&params, &acts, &seed_refs)?;
        let mut out = Vec::with_capacity(x.len());
        for (name, t) in self.inputs.iter().zip(x) {
            out.push(grads.inputs.remove(name).unwrap_or_else(|| Tensor::zeros(t.shape())));
        }
        for k in &self.keys {
            out.push(grads.params.get(k)?.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn concat_is_exact() {
        let mut r = rng();
        let a = Tensor::rand_uniform((1, 2, 3, 3), -1.0, 1.0, &mut r);
        let b = Tensor::rand_uniform((1, 3, 3, 3), -1.0, 1.0, &mut r);
        assert!(grad_check(&ConcatOp, &[a, b], DEFAULT_EPS).unwrap() <= 1e-10);
    }

    #[test]
    fn sigmoid_within_tolerance() {
        let x = Tensor::rand_uniform((1, 2, 4, 4), -4.0, 4.0, &mut rng());
        assert!(grad_check(&SigmoidOp, &[x], DEFAULT_EPS).unwrap() <= 1e-6);
    }

    #[test]
    fn dilated_conv_within_tolerance() {
        let mut r = rng();
        let spec = ConvSpec::square(3).with_dilation(2).with_padding(2);
        let inputs = [
            Tensor::rand_uniform((1, 3, 6, 6), -1.0, 1.0, &mut r),
            Tensor::rand_uniform((2, 3, 3, 3), -1.0, 1.0, &mut r),
            Tensor::rand_uniform((2, 1, 1, 1), -1.0, 1.0, &mut r),
        ];
        assert!(grad_check(&Conv2dOp(spec), &inputs, DEFAULT_EPS).unwrap() <= 1e-5);
    }

    #[test]
    fn rejects_missing_backward() {
        let op = FnOp::forward_only("square", |x| Ok(x[0].map(|v| v * v)));
        let x = Tensor::full((1, 1, 1, 1), 2.0);
        assert!(matches!(grad_check(&op, &[x], DEFAULT_EPS), Err(Error::NoBackward(name)) if name == "square"));
    }

    #[test]
    fn rejects_epsilon_out_of_range() {
        let x = Tensor::full((1, 1, 1, 1), 2.0);
        assert!(grad_check(&SigmoidOp, std::slice::from_ref(&x), 1e-3).is_err());
        assert!(grad_check(&SigmoidOp, &[x], 1e-9).is_err());
    }

    #[test]
    fn detects_wrong_backward() {
        let op = FnOp::new(
            "bad_square",
            |x| Ok(x[0].map(|v| v * v)),
            |x, g| Ok(vec![Tensor::from_vec(x[0].shape(), x[0].data().iter().zip(g.data()).map(|(v, g)| 3.0 * v * g).collect())?]),
        );
        let x = Tensor::rand_uniform((1, 1, 2, 2), 0.5, 1.0, &mut rng());
        let r = grad_check_report(&op, &[x], DEFAULT_EPS, None).unwrap();
        assert!(r.max_rel_error > 0.3);
        assert_eq!(r.probes, 4);
        assert!(r.worst.is_some());
    }

    #[test]
    fn deform_within_tolerance() {
        let mut r = rng();
        let spec = ConvSpec::atrous3x3(1);
        let inputs = [
            Tensor::rand_uniform((1, 2, 6, 6), -1.0, 1.0, &mut r),
            Tensor::rand_uniform((2, 2, 3, 3), -1.0, 1.0, &mut r),
            Tensor::rand_uniform((2, 1, 1, 1), -1.0, 1.0, &mut r),
            Tensor::rand_uniform((18, 2, 3, 3), -0.02, 0.02, &mut r),
            Tensor::rand_uniform((18, 1, 1, 1), 0.3, 0.7, &mut r),
        ];
        let e = grad_check(&DeformConv2dOp(spec), &inputs, DEFAULT_EPS).unwrap();
        assert!(e <= 1e-4, "{e}");
    }

    #[test]
    fn sampled_probes_cap() {
        let x = Tensor::rand_uniform((1, 4, 4, 4), -1.0, 1.0, &mut rng());
        let r = grad_check_report(&SigmoidOp, &[x], DEFAULT_EPS, Some(5)).unwrap();
        assert_eq!(r.probes, 5);
    }

    #[test]
    fn graph_op_round_trip() {
        use crate::graph::{ConvNode, OpKind};
        let mut g = LayerGraph::new();
        g.add("x", OpKind::Input { channels: 2 }, &[]).unwrap();
        g.add("c", OpKind::Conv(ConvNode::new(2, 3, ConvSpec::atrous3x3(2))), &["x"]).unwrap();
        g.add("gap", OpKind::GlobalAvgPool, &["c"]).unwrap();
        g.add("up", OpKind::ResizeLike, &["gap", "x"]).unwrap();
        g.add("cat", OpKind::Concat, &["c", "up"]).unwrap();
        g.set_outputs(&["cat", "gap"]).unwrap();
        let p = Params::init(&g, 5);
        let x = Tensor::rand_uniform((1, 2, 5, 5), -1.0, 1.0, &mut rng());
        let op = GraphOp::new("graph", &g);
        let inputs = op.pack(&[("x", &x)], &p).unwrap();
        assert_eq!(op.slot_name(2), "c.bias");
        let r = grad_check_report(&op, &inputs, DEFAULT_EPS, None).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?} at {}", op.slot_name(r.worst.unwrap().0));
    }
}
