//! The gradient-check suite: every differentiable op, the attention paths and
//! a tiny end-to-end pyramid, each against its tolerance.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{am_build, AmConfig};
use crate::error::Result;
use crate::gradcheck::*;
use crate::graph::Params;
use crate::ops::ConvSpec;
use crate::pyramid::{acfpn_build, AcfpnConfig, IMAGE_INPUT};
use crate::tensor::Tensor;

pub const GENERAL_TOLERANCE: f64 = 1e-5;
pub const DEFORM_TOLERANCE: f64 = 1e-4;
/// Probes per input tensor in the end-to-end check.
pub const END_TO_END_PROBES: usize = 6;

/// Names accepted by the fault-injection hook, in suite order.
pub const SUITE_OPS: [&str; 16] = [
    "conv2d",
    "max_pool2d",
    "global_avg_pool",
    "bilinear_resize",
    "upsample_nearest",
    "concat_channels",
    "sigmoid",
    "relu",
    "add",
    "affinity_matrix",
    "attn_collapse",
    "mul_attention",
    "deform_conv2d",
    "cxam",
    "cnam",
    "acfpn_tiny",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub op: String,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub probes: usize,
    pub cases: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.threshold
    }
}

impl fmt::Display for SuiteEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {:>10.3e} <= {:<8.0e} {:>4} {:>6} probes  {}",
            self.op,
            self.max_rel_error,
            self.threshold,
            format!("x{}", self.cases),
            self.probes,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

/// Wraps an op and scales its analytic gradients by 1.5.
pub struct Faulty<'a>(pub &'a dyn DiffOp);

impl DiffOp for Faulty<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        self.0.forward(inputs)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(self.0.backward(inputs, grad_out)?.into_iter().map(|g| g.scale(1.5)).collect())
    }
}

struct Case {
    inputs: Vec<Tensor<f64>>,
    probes: Option<usize>,
}

fn run(
    name: &str,
    op: &dyn DiffOp,
    cases: Vec<Case>,
    threshold: f64,
    fault: Option<&str>,
) -> Result<SuiteEntry> {
    let faulty = Faulty(op);
    let op: &dyn DiffOp = if fault == Some(name) { &faulty } else { op };
    let mut entry = SuiteEntry {
        op: name.to_string(),
        max_rel_error: 0.0,
        threshold,
        probes: 0,
        cases: cases.len(),
    };
    for case in cases {
        let r = grad_check_report(op, &case.inputs, DEFAULT_EPS, case.probes)?;
        entry.probes += r.probes;
        if r.max_rel_error > entry.max_rel_error || r.max_rel_error.is_nan() {
            entry.max_rel_error = r.max_rel_error;
        }
    }
    Ok(entry)
}

fn uniform(shape: (usize, usize, usize, usize), lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

fn full(inputs: Vec<Tensor<f64>>) -> Vec<Case> {
    vec![Case { inputs, probes: None }]
}

/// Pushes every scalar at least `margin` away from zero, keeping its sign.
fn away_from_zero(t: Tensor<f64>, margin: f64) -> Tensor<f64> {
    t.map(|v| if v >= 0.0 { v + margin } else { v - margin })
}

/// Runs the whole suite, optionally corrupting the backward of the op named `fault`.
pub fn gradcheck_suite(seed: u64, fault: Option<&str>) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = Vec::new();

    let mut conv_cases = Vec::new();
    for k in [1, 3] {
        for s in [1, 2] {
            for p in [0, 1, 2] {
                for d in [1, 2] {
                    let spec = ConvSpec::square(k).with_stride(s).with_padding(p).with_dilation(d);
                    conv_cases.push((spec, vec![uniform((2, 4, 8, 8), -1.0, 1.0, r), uniform((3, 4, k, k), -1.0, 1.0, r), uniform((3, 1, 1, 1), -1.0, 1.0, r)]));
                }
            }
        }
    }
    // one op per spec, reported together
    let mut conv_entry: Option<SuiteEntry> = None;
    for (spec, inputs) in conv_cases {
        let e = run("conv2d", &Conv2dOp(spec), full(inputs), GENERAL_TOLERANCE, fault)?;
        conv_entry = Some(match conv_entry {
            None => e,
            Some(mut acc) => {
                acc.max_rel_error = acc.max_rel_error.max(e.max_rel_error);
                acc.probes += e.probes;
                acc.cases += 1;
                acc
            }
        });
    }
    out.extend(conv_entry);

    let pool_in = uniform((1, 3, 8, 8), -1.0, 1.0, r);
    out.push(run("max_pool2d", &MaxPoolOp { kernel: (2, 2), stride: (2, 2) }, full(vec![pool_in]), GENERAL_TOLERANCE, fault)?);
    out.push(run("global_avg_pool", &GlobalAvgPoolOp, full(vec![uniform((2, 3, 4, 5), -1.0, 1.0, r)]), GENERAL_TOLERANCE, fault)?);
    out.push(run(
        "bilinear_resize",
        &BilinearResizeOp { out_h: 7, out_w: 4 },
        full(vec![uniform((1, 2, 3, 5), -1.0, 1.0, r)]),
        GENERAL_TOLERANCE,
        fault,
    )?);
    out.push(run("upsample_nearest", &UpsampleNearestOp(2), full(vec![uniform((1, 2, 3, 3), -1.0, 1.0, r)]), GENERAL_TOLERANCE, fault)?);
    out.push(run(
        "concat_channels",
        &ConcatOp,
        full(vec![uniform((1, 2, 3, 3), -1.0, 1.0, r), uniform((1, 3, 3, 3), -1.0, 1.0, r)]),
        GENERAL_TOLERANCE,
        fault,
    )?);
    out.push(run("sigmoid", &SigmoidOp, full(vec![uniform((1, 2, 4, 4), -4.0, 4.0, r)]), GENERAL_TOLERANCE, fault)?);
    let relu_in = away_from_zero(uniform((1, 2, 4, 4), -1.0, 1.0, r), 1e-3);
    out.push(run("relu", &ReluOp, full(vec![relu_in]), GENERAL_TOLERANCE, fault)?);
    out.push(run(
        "add",
        &AddOp,
        full(vec![uniform((1, 2, 3, 3), -1.0, 1.0, r), uniform((1, 2, 3, 3), -1.0, 1.0, r)]),
        GENERAL_TOLERANCE,
        fault,
    )?);
    out.push(run(
        "affinity_matrix",
        &AffinityOp,
        full(vec![uniform((1, 4, 3, 3), -1.0, 1.0, r), uniform((1, 4, 3, 3), -1.0, 1.0, r)]),
        GENERAL_TOLERANCE,
        fault,
    )?);
    out.push(run("attn_collapse", &AttnCollapseOp, full(vec![uniform((1, 9, 3, 3), -3.0, 3.0, r)]), GENERAL_TOLERANCE, fault)?);
    out.push(run(
        "mul_attention",
        &MulAttentionOp,
        full(vec![uniform((1, 3, 3, 3), -1.0, 1.0, r), uniform((1, 1, 3, 3), 0.0, 1.0, r)]),
        GENERAL_TOLERANCE,
        fault,
    )?);

    // non-integer sampling: small offset weights, offset biases inside (0.3, 0.7)
    let deform_inputs = vec![
        uniform((1, 2, 6, 6), -1.0, 1.0, r),
        uniform((2, 2, 3, 3), -1.0, 1.0, r),
        uniform((2, 1, 1, 1), -1.0, 1.0, r),
        uniform((18, 2, 3, 3), -0.02, 0.02, r),
        uniform((18, 1, 1, 1), 0.3, 0.7, r),
    ];
    out.push(run("deform_conv2d", &DeformConv2dOp(ConvSpec::atrous3x3(1)), full(deform_inputs), DEFORM_TOLERANCE, fault)?);

    let am_small = AmConfig { channels: 4, key_channels: 2, context_channels: 6, cnam_channels: 3, ..AmConfig::default() };
    for (name, cfg) in [
        ("cxam", AmConfig { cnam: false, ..am_small }),
        ("cnam", AmConfig { cxam: false, ..am_small }),
    ] {
        let g = am_build(&cfg)?;
        let params = Params::<f64>::init(&g, seed ^ 0xa77e);
        let f = uniform((1, 4, 3, 3), -1.0, 1.0, r);
        let f5 = uniform((1, 6, 3, 3), -1.0, 1.0, r);
        let op = GraphOp::new(name, &g);
        let inputs = op.pack(&[("f", &f), ("f5", &f5)], &params)?;
        out.push(run(name, &op, full(inputs), GENERAL_TOLERANCE, fault)?);
    }

    let (g, params, image) = tiny_network(seed)?;
    let op = GraphOp::new("acfpn_tiny", &g);
    let inputs = op.pack(&[(IMAGE_INPUT, &image)], &params)?;
    let cases = vec![Case { inputs, probes: Some(END_TO_END_PROBES) }];
    out.push(run("acfpn_tiny", &op, cases, DEFORM_TOLERANCE, fault)?);
    Ok(out)
}

/// Tiny pyramid in double precision with non-integer deformable offsets and a random image.
pub fn tiny_network(seed: u64) -> Result<(crate::graph::LayerGraph, Params<f64>, Tensor<f64>)> {
    let g = acfpn_build(&AcfpnConfig::tiny())?;
    let mut params = Params::<f64>::init(&g, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for (k, t) in params.iter_mut() {
        if k.ends_with(".offset_bias") {
            *t = Tensor::rand_uniform(t.shape(), 0.3, 0.7, &mut rng);
        } else if k.ends_with(".offset_weight") {
            *t = Tensor::rand_uniform(t.shape(), -0.02, 0.02, &mut rng);
        }
    }
    let image = Tensor::rand_uniform((1, 3, 32, 32), 0.0, 1.0, &mut rng);
    Ok((g, params, image))
}
