//! Static complexity accounting over a [`LayerGraph`]: parameters,
//! multiply-accumulates and receptive-field arithmetic.
//!
//! MAC conventions:
//! - conv: `co·ci·kh·kw·oh·ow` per batch item
//! - deformable conv: main conv + offset conv + 4 per bilinear sample (`4·ci·taps·oh·ow`)
//! - affinity: `C′·N²`
//! - pooling, resizing, attention product: one per output element
//! - sigmoid + mean collapse: one per input element
//! - add and concat: free

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{LayerGraph, Node, OpKind};
use crate::ops::ConvSpec;
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeComplexity {
    pub name: String,
    pub kind: String,
    pub output: Shape,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub nodes: Vec<NodeComplexity>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl ComplexityReport {
    pub fn node(&self, name: &str) -> Option<&NodeComplexity> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:<26} {:<18} {:>12} {:>16}", "node", "kind", "output", "params", "MACs")?;
        for n in &self.nodes {
            writeln!(f, "{:<22} {:<26} {:<18} {:>12} {:>16}", n.name, n.kind, n.output.to_string(), n.params, n.macs)?;
        }
        write!(f, "{:<22} {:<26} {:<18} {:>12} {:>16}", "total", "", "", self.total_params, self.total_macs)
    }
}

/// Learnable scalars owned by one node.
pub fn node_params(node: &Node) -> u64 {
    node.param_shapes().iter().map(|(_, s)| s.numel() as u64).sum()
}

pub fn count_params(graph: &LayerGraph) -> u64 {
    graph.nodes().iter().map(node_params).sum()
}

fn node_macs(node: &Node, inputs: &[Shape], out: Shape) -> u64 {
    let u = |x: usize| x as u64;
    let out_pixels = u(out.n() * out.h() * out.w());
    match &node.op {
        OpKind::Conv(c) => u(c.weight_shape().numel()) * out_pixels,
        OpKind::DeformConv(c) => {
            let taps = u(c.spec.taps());
            let main = u(c.weight_shape().numel()) * out_pixels;
            let offsets = u(c.offset_weight_shape().numel()) * out_pixels;
            let sampling = 4 * u(c.in_channels) * taps * out_pixels;
            main + offsets + sampling
        }
        OpKind::Affinity => {
            let q = inputs[0];
            let npos = u(q.plane());
            u(q.n()) * u(q.c()) * npos * npos
        }
        OpKind::GlobalAvgPool
        | OpKind::MaxPool { .. }
        | OpKind::ResizeLike
        | OpKind::UpsampleNearest { .. }
        | OpKind::MulAttention => u(out.numel()),
        OpKind::AttnCollapse => u(inputs[0].numel()),
        OpKind::Input { .. } | OpKind::Concat | OpKind::Add => 0,
    }
}

/// Per-node and total params and MACs for the given input shapes.
pub fn complexity_report(graph: &LayerGraph, feeds: &[(&str, Shape)]) -> Result<ComplexityReport> {
    let shapes = graph.infer_shapes(feeds)?;
    let mut nodes = Vec::with_capacity(shapes.len());
    for (node, &out) in graph.nodes().iter().zip(&shapes) {
        let ins: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
        nodes.push(NodeComplexity {
            name: node.name.clone(),
            kind: node.op.label(),
            output: out,
            params: node_params(node),
            macs: node_macs(node, &ins, out),
        });
    }
    Ok(ComplexityReport {
        total_params: nodes.iter().map(|n| n.params).sum(),
        total_macs: nodes.iter().map(|n| n.macs).sum(),
        nodes,
    })
}

pub fn count_macs(graph: &LayerGraph, feeds: &[(&str, Shape)]) -> Result<u64> {
    Ok(complexity_report(graph, feeds)?.total_macs)
}

/// Receptive field of one unit: extent and effective stride in input pixels,
/// and the input coordinate of the first unit's centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfSpec {
    pub rf: (usize, usize),
    pub jump: (usize, usize),
    pub start: (f64, f64),
}

impl RfSpec {
    /// A raw input pixel.
    pub fn identity() -> Self {
        RfSpec { rf: (1, 1), jump: (1, 1), start: (0.5, 0.5) }
    }

    /// Applies one conv or pooling window.
    pub fn then(self, spec: &ConvSpec) -> Self {
        let axis = |rf: usize, jump: usize, start: f64, k: usize, s: usize, p: usize, d: usize| {
            let span = (k - 1) * d;
            (rf + span * jump, jump * s, start + (span as f64 / 2.0 - p as f64) * jump as f64)
        };
        let (rh, jh, sh) = axis(self.rf.0, self.jump.0, self.start.0, spec.kernel.0, spec.stride.0, spec.padding.0, spec.dilation.0);
        let (rw, jw, sw) = axis(self.rf.1, self.jump.1, self.start.1, spec.kernel.1, spec.stride.1, spec.padding.1, spec.dilation.1);
        RfSpec { rf: (rh, rw), jump: (jh, jw), start: (sh, sw) }
    }
}

/// Receptive field after a chain of windows, starting from raw pixels.
pub fn receptive_field(chain: &[ConvSpec]) -> Result<RfSpec> {
    if chain.is_empty() {
        return Err(Error::InvalidSpec("receptive_field needs at least one layer".into()));
    }
    receptive_field_from(RfSpec::identity(), chain)
}

/// Receptive field after a chain of windows, starting from `entry`.
pub fn receptive_field_from(entry: RfSpec, chain: &[ConvSpec]) -> Result<RfSpec> {
    let mut rf = entry;
    for spec in chain {
        spec.validate()?;
        rf = rf.then(spec);
    }
    Ok(rf)
}

/// Receptive field of every node with respect to graph input `input`.
///
/// Nodes that do not depend on `input` locally are `None`: global pooling,
/// affinity and its collapse, resizing, and anything reading only those.
/// Concat and add take the widest field among their tracked inputs, so global
/// branches do not mask the local ones.
pub fn graph_receptive_fields(graph: &LayerGraph, input: &str, entry: RfSpec) -> Result<Vec<Option<RfSpec>>> {
    let root = graph.id(input)?;
    let mut out: Vec<Option<RfSpec>> = Vec::with_capacity(graph.nodes().len());
    for (id, node) in graph.nodes().iter().enumerate() {
        let first = node.inputs.first().and_then(|&i| out[i]);
        let rf = match &node.op {
            OpKind::Input { .. } => (id == root).then_some(entry),
            OpKind::Conv(c) | OpKind::DeformConv(c) => first.map(|r| r.then(&c.spec)),
            OpKind::MaxPool { kernel, stride } => first.map(|r| {
                r.then(&ConvSpec { kernel: *kernel, stride: *stride, ..ConvSpec::default() })
            }),
            OpKind::MulAttention => first,
            OpKind::Concat | OpKind::Add => node
                .inputs
                .iter()
                .filter_map(|&i| out[i])
                .max_by_key(|r| r.rf.0 * r.rf.1),
            OpKind::GlobalAvgPool
            | OpKind::Affinity
            | OpKind::AttnCollapse
            | OpKind::ResizeLike
            | OpKind::UpsampleNearest { .. } => None,
        };
        out.push(rf);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cem::{cem_build, channel_plan, CemConfig, CEM_INPUT, CEM_OUTPUT};
    use crate::graph::ConvNode;

    #[test]
    fn single_conv_params_and_macs() {
        let cfg = CemConfig::default();
        let g = cem_build(&cfg).unwrap();
        let r = complexity_report(&g, &[(CEM_INPUT, Shape::new(1, 2048, 16, 16))]).unwrap();
        let n = r.node("cem_3_1x1").unwrap();
        assert_eq!(n.params, 1_049_088);
        assert_eq!(n.macs, 268_435_456);
        assert_eq!(r.total_params, count_params(&g));
        assert_eq!(r.total_macs, r.nodes.iter().map(|n| n.macs).sum::<u64>());
    }

    #[test]
    fn bias_free_identity() {
        let mut g = LayerGraph::new();
        g.add("x", OpKind::Input { channels: 1 }, &[]).unwrap();
        g.add("c", OpKind::Conv(ConvNode::new(1, 1, ConvSpec::square(1)).no_bias()), &["x"]).unwrap();
        assert_eq!(count_params(&g), 1);
    }

    #[test]
    fn zero_spatial_input_costs_nothing() {
        let g = cem_build(&CemConfig::default()).unwrap();
        assert_eq!(count_macs(&g, &[(CEM_INPUT, Shape::new(1, 2048, 0, 0))]).unwrap(), 0);
    }

    #[test]
    fn hand_counted_pair() {
        let mut g = LayerGraph::new();
        g.add("x", OpKind::Input { channels: 3 }, &[]).unwrap();
        g.add("a", OpKind::Conv(ConvNode::new(3, 4, ConvSpec::square(3).with_padding(1))), &["x"]).unwrap();
        g.add("p", OpKind::MaxPool { kernel: (2, 2), stride: (2, 2) }, &["a"]).unwrap();
        let macs = count_macs(&g, &[("x", Shape::new(1, 3, 8, 8))]).unwrap();
        assert_eq!(macs, 4 * 3 * 9 * 64 + 4 * 16);
    }

    #[test]
    fn dense_param_delta_closed_form() {
        let dense = CemConfig::default();
        let flat = CemConfig { use_dense: false, ..CemConfig::default() };
        let diff = count_params(&cem_build(&dense).unwrap()) - count_params(&cem_build(&flat).unwrap());
        let widths: usize = channel_plan(&dense).iter().zip(channel_plan(&flat)).map(|(a, b)| a - b).sum();
        assert_eq!(diff, (widths * dense.mid_channels) as u64);
    }

    #[test]
    fn rf_hand_cases() {
        assert_eq!(receptive_field(&[ConvSpec::square(3)]).unwrap().rf, (3, 3));
        let entry = RfSpec { rf: (100, 100), jump: (32, 32), start: (16.0, 16.0) };
        let r = receptive_field_from(entry, &[ConvSpec::atrous3x3(24)]).unwrap();
        assert_eq!(r.rf.0 - 100, 1536);
        assert_eq!(r.start, entry.start);
        assert!(receptive_field(&[]).is_err());
    }

    #[test]
    fn rf_two_stride_two() {
        let r = receptive_field(&[ConvSpec::square(3).with_stride(2), ConvSpec::square(3).with_stride(2)]).unwrap();
        assert_eq!((r.rf, r.jump), ((7, 7), (4, 4)));
    }

    #[test]
    fn cem_rf_growth() {
        let g = cem_build(&CemConfig::default()).unwrap();
        let entry = RfSpec { rf: (1, 1), jump: (32, 32), start: (0.5, 0.5) };
        let rfs = graph_receptive_fields(&g, CEM_INPUT, entry).unwrap();
        let out = rfs[g.id(CEM_OUTPUT).unwrap()].unwrap();
        assert_eq!(out.rf.0 - 1, 4032);
        assert!(rfs[g.id("cem_global_context").unwrap()].is_none());
    }
}
