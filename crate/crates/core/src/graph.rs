//! Declarative layer graphs with a forward executor and a reverse pass.
//!
//! A [`LayerGraph`] is an ordered list of named nodes; every node may only read
//! nodes added before it, so insertion order is a topological order. Learnable
//! tensors live outside the graph in [`Params`], keyed `"{node}.{slot}"`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{deform_conv2d, deform_conv2d_backward, DeformConv2d};
use crate::error::{Error, Result};
use crate::ops::{self, relu_mask_grad, ConvSpec};
use crate::tensor::{Scalar, Shape, Tensor};

/// A convolution layer's static description. ReLU, when set, is fused on the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvNode {
    pub in_channels: usize,
    pub out_channels: usize,
    pub spec: ConvSpec,
    pub bias: bool,
    pub relu: bool,
}

impl ConvNode {
    pub fn new(in_channels: usize, out_channels: usize, spec: ConvSpec) -> Self {
        ConvNode {
            in_channels,
            out_channels,
            spec,
            bias: true,
            relu: false,
        }
    }

    pub fn relu(mut self) -> Self {
        self.relu = true;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.spec.kernel;
        Shape::new(self.out_channels, self.in_channels, kh, kw)
    }

    pub fn offset_weight_shape(&self) -> Shape {
        let (kh, kw) = self.spec.kernel;
        Shape::new(2 * kh * kw, self.in_channels, kh, kw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Input { channels: usize },
    Conv(ConvNode),
    DeformConv(ConvNode),
    Concat,
    GlobalAvgPool,
    /// Bilinear resize of input 0 to the spatial size of input 1.
    ResizeLike,
    MaxPool { kernel: (usize, usize), stride: (usize, usize) },
    UpsampleNearest { factor: usize },
    Add,
    Affinity,
    AttnCollapse,
    MulAttention,
}

impl OpKind {
    /// Human-readable kind, in the vocabulary of layer tables.
    pub fn label(&self) -> String {
        match self {
            OpKind::Input { .. } => "Input".into(),
            OpKind::Conv(c) if c.spec.dilation != (1, 1) => format!("Conv(dilate={})", c.spec.dilation.0),
            OpKind::Conv(_) => "Conv".into(),
            OpKind::DeformConv(c) => format!("DeformConv(dilate={})", c.spec.dilation.0),
            OpKind::Concat => "Concatenation".into(),
            OpKind::GlobalAvgPool => "Global Average Pooling".into(),
            OpKind::ResizeLike => "Bilinear Interpolation".into(),
            OpKind::MaxPool { .. } => "Max Pooling".into(),
            OpKind::UpsampleNearest { .. } => "Nearest Upsampling".into(),
            OpKind::Add => "Add".into(),
            OpKind::Affinity => "Affinity".into(),
            OpKind::AttnCollapse => "Sigmoid+Average".into(),
            OpKind::MulAttention => "Attention Product".into(),
        }
    }

    pub fn conv(&self) -> Option<&ConvNode> {
        match self {
            OpKind::Conv(c) | OpKind::DeformConv(c) => Some(c),
            _ => None,
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Input { .. } => Some(0),
            OpKind::Concat | OpKind::Add => None,
            OpKind::ResizeLike | OpKind::Affinity | OpKind::MulAttention => Some(2),
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: OpKind,
    pub inputs: Vec<usize>,
}

impl Node {
    /// `(param key, shape)` for every learnable tensor this node owns.
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        let mut out = Vec::new();
        if let Some(c) = self.op.conv() {
            out.push((format!("{}.weight", self.name), c.weight_shape()));
            if c.bias {
                out.push((format!("{}.bias", self.name), Shape::new(c.out_channels, 1, 1, 1)));
            }
            if let OpKind::DeformConv(_) = self.op {
                let ow = c.offset_weight_shape();
                out.push((format!("{}.offset_weight", self.name), ow));
                out.push((format!("{}.offset_bias", self.name), Shape::new(ow.n(), 1, 1, 1)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGraph {
    nodes: Vec<Node>,
    outputs: Vec<usize>,
    index: HashMap<String, usize>,
}

impl LayerGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node reading the named (already present) inputs.
    pub fn add(&mut self, name: impl Into<String>, op: OpKind, inputs: &[&str]) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Graph(format!("duplicate node `{name}`")));
        }
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(Error::Graph(format!("`{name}` ({}) takes {n} inputs, got {}", op.label(), inputs.len())));
            }
        } else if inputs.is_empty() {
            return Err(Error::Graph(format!("`{name}` ({}) needs at least one input", op.label())));
        }
        let inputs = inputs
            .iter()
            .map(|i| self.id(i))
            .collect::<Result<Vec<_>>>()?;
        let id = self.nodes.len();
        self.index.insert(name.clone(), id);
        self.nodes.push(Node { name, op, inputs });
        Ok(id)
    }

    pub fn set_outputs(&mut self, names: &[&str]) -> Result<()> {
        self.outputs = names.iter().map(|n| self.id(n)).collect::<Result<_>>()?;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Graph(format!("unknown node `{name}`")))
    }

    pub fn node(&self, name: &str) -> Result<&Node> {
        Ok(&self.nodes[self.id(name)?])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Node> {
        self.outputs.iter().map(|&i| &self.nodes[i])
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs().map(|n| n.name.as_str()).collect()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, OpKind::Input { .. }))
            .map(|n| n.name.as_str())
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        self.nodes.iter().flat_map(Node::param_shapes).collect()
    }

    /// Output shape of every node given the shapes of the graph inputs.
    pub fn infer_shapes(&self, feeds: &[(&str, Shape)]) -> Result<Vec<Shape>> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let bad = |msg: String| Error::Graph(format!("`{}`: {msg}", node.name));
            let s = match &node.op {
                OpKind::Input { channels } => {
                    let s = feeds
                        .iter()
                        .find(|(n, _)| *n == node.name)
                        .map(|(_, s)| *s)
                        .ok_or_else(|| bad("no shape fed".into()))?;
                    if s.c() != *channels {
                        return Err(bad(format!("fed {s} but expects {channels} channels")));
                    }
                    s
                }
                OpKind::Conv(c) | OpKind::DeformConv(c) => {
                    c.spec.validate()?;
                    if ins[0].c() != c.in_channels {
                        return Err(bad(format!("input {} but layer expects {} channels", ins[0], c.in_channels)));
                    }
                    let (oh, ow) = c
                        .spec
                        .output_size(ins[0].h(), ins[0].w())
                        .ok_or_else(|| bad(format!("negative output size for {}", ins[0])))?;
                    Shape::new(ins[0].n(), c.out_channels, oh, ow)
                }
                OpKind::Concat => {
                    let first = ins[0];
                    if ins.iter().any(|s| (s.n(), s.h(), s.w()) != (first.n(), first.h(), first.w())) {
                        return Err(bad(format!("spatial mismatch among {ins:?}")));
                    }
                    first.with_c(ins.iter().map(|s| s.c()).sum())
                }
                OpKind::GlobalAvgPool => {
                    if ins[0].plane() == 0 {
                        ins[0].with_hw(0, 0)
                    } else {
                        ins[0].with_hw(1, 1)
                    }
                }
                OpKind::ResizeLike => ins[0].with_hw(ins[1].h(), ins[1].w()),
                OpKind::MaxPool { kernel, stride } => {
                    let (h, w) = (ins[0].h(), ins[0].w());
                    if h < kernel.0 || w < kernel.1 {
                        ins[0].with_hw(0, 0)
                    } else {
                        ins[0].with_hw((h - kernel.0) / stride.0 + 1, (w - kernel.1) / stride.1 + 1)
                    }
                }
                OpKind::UpsampleNearest { factor } => ins[0].with_hw(ins[0].h() * factor, ins[0].w() * factor),
                OpKind::Add => {
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(bad(format!("operand shapes differ: {ins:?}")));
                    }
                    ins[0]
                }
                OpKind::Affinity => {
                    if ins[0] != ins[1] {
                        return Err(bad(format!("query {} vs key {}", ins[0], ins[1])));
                    }
                    ins[0].with_c(ins[0].plane())
                }
                OpKind::AttnCollapse => ins[0].with_c(1),
                OpKind::MulAttention => {
                    let (v, a) = (ins[0], ins[1]);
                    if a != v.with_c(1) {
                        return Err(bad(format!("attention {a} cannot scale {v}")));
                    }
                    v
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Runs every node in order.
    pub fn forward<T: Scalar>(&self, params: &Params<T>, feeds: &[(&str, &Tensor<T>)]) -> Result<Activations<T>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = self.eval_node(node, params, feeds, &values)?;
            values.push(v);
        }
        Ok(Activations { values, index: self.index.clone() })
    }

    fn eval_node<T: Scalar>(
        &self,
        node: &Node,
        params: &Params<T>,
        feeds: &[(&str, &Tensor<T>)],
        values: &[Tensor<T>],
    ) -> Result<Tensor<T>> {
        let x = |i: usize| &values[node.inputs[i]];
        Ok(match &node.op {
            OpKind::Input { channels } => {
                let t = feeds
                    .iter()
                    .find(|(n, _)| *n == node.name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| Error::Graph(format!("no tensor fed for input `{}`", node.name)))?;
                if t.shape().c() != *channels {
                    return crate::error::shape_err(
                        "graph input",
                        format!("`{}` expects {channels} channels, got {}", node.name, t.shape()),
                    );
                }
                t.clone()
            }
            OpKind::Conv(c) => {
                let w = params.get(&format!("{}.weight", node.name))?;
                let b = if c.bias { Some(params.get(&format!("{}.bias", node.name))?) } else { None };
                let y = ops::conv2d(x(0), w, b, &c.spec)?;
                if c.relu { ops::relu(&y) } else { y }
            }
            OpKind::DeformConv(c) => {
                let layer = deform_layer(params, &node.name, c)?;
                let y = deform_conv2d(x(0), &layer)?;
                if c.relu { ops::relu(&y) } else { y }
            }
            OpKind::Concat => {
                let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
                ops::concat_channels(&ins)?
            }
            OpKind::GlobalAvgPool => ops::global_avg_pool(x(0))?,
            OpKind::ResizeLike => {
                let r = x(1).shape();
                ops::bilinear_resize(x(0), r.h(), r.w())?
            }
            OpKind::MaxPool { kernel, stride } => ops::max_pool2d(x(0), *kernel, *stride)?,
            OpKind::UpsampleNearest { factor } => ops::upsample_nearest(x(0), *factor)?,
            OpKind::Add => {
                let mut acc = x(0).clone();
                for &i in &node.inputs[1..] {
                    if values[i].shape() != acc.shape() {
                        return crate::error::shape_err(
                            "add",
                            format!("`{}`: {} vs {}", node.name, acc.shape(), values[i].shape()),
                        );
                    }
                    acc.add_assign(&values[i])?;
                }
                acc
            }
            OpKind::Affinity => ops::affinity_matrix(x(0), x(1))?,
            OpKind::AttnCollapse => ops::attn_collapse(x(0))?,
            OpKind::MulAttention => ops::mul_attention(x(0), x(1))?,
        })
    }

    /// Reverse pass from upstream gradients on any subset of nodes.
    ///
    /// Every parameter receives a gradient (zero when unreached); graph inputs
    /// that receive gradient appear in [`Gradients::inputs`].
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        acts: &Activations<T>,
        seeds: &[(&str, &Tensor<T>)],
    ) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (name, g) in seeds {
            let id = self.id(name)?;
            if g.shape() != acts.values[id].shape() {
                return crate::error::shape_err(
                    "backward",
                    format!("seed for `{name}` is {} but node output is {}", g.shape(), acts.values[id].shape()),
                );
            }
            accumulate(&mut grads[id], (*g).clone())?;
        }

        let mut out = Gradients {
            params: Params::zeros_for(self),
            inputs: BTreeMap::new(),
        };
        for (id, node) in self.nodes.iter().enumerate().rev() {
            let Some(g) = grads[id].take() else { continue };
            let x = |i: usize| &acts.values[node.inputs[i]];
            match &node.op {
                OpKind::Input { .. } => {
                    out.inputs.insert(node.name.clone(), g);
                }
                OpKind::Conv(c) => {
                    let g = if c.relu { relu_mask_grad(&acts.values[id], &g) } else { g };
                    let w = params.get(&format!("{}.weight", node.name))?;
                    let cg = ops::conv2d_grads(x(0), w, &c.spec, &g)?;
                    out.params.add_into(&format!("{}.weight", node.name), &cg.weight)?;
                    if c.bias {
                        out.params.add_into_flat(&format!("{}.bias", node.name), &cg.bias)?;
                    }
                    accumulate(&mut grads[node.inputs[0]], cg.input)?;
                }
                OpKind::DeformConv(c) => {
                    let g = if c.relu { relu_mask_grad(&acts.values[id], &g) } else { g };
                    let layer = deform_layer(params, &node.name, c)?;
                    let mut pair = deform_conv2d_backward(x(0), &layer, &g)?;
                    for slot in ["weight", "bias", "offset_weight", "offset_bias"] {
                        let t = pair.take(slot).expect("deform slot");
                        out.params.add_into_flat(&format!("{}.{slot}", node.name), &t)?;
                    }
                    accumulate(&mut grads[node.inputs[0]], pair.take("input").expect("deform input slot"))?;
                }
                OpKind::Concat => {
                    let mut start = 0;
                    for &i in &node.inputs {
                        let c = acts.values[i].shape().c();
                        accumulate(&mut grads[i], g.channel_slice(start, c)?)?;
                        start += c;
                    }
                }
                OpKind::GlobalAvgPool => {
                    let gi = ops::global_avg_pool_backward(x(0), &g)?.take("input").unwrap();
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                OpKind::ResizeLike => {
                    let s = g.shape();
                    let gi = ops::bilinear_resize_backward(x(0), s.h(), s.w(), &g)?.take("input").unwrap();
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                OpKind::MaxPool { kernel, stride } => {
                    let gi = ops::max_pool2d_backward(x(0), *kernel, *stride, &g)?.take("input").unwrap();
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                OpKind::UpsampleNearest { factor } => {
                    let gi = ops::upsample_nearest_backward(x(0), *factor, &g)?.take("input").unwrap();
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                OpKind::Add => {
                    for &i in &node.inputs {
                        accumulate(&mut grads[i], g.clone())?;
                    }
                }
                OpKind::Affinity => {
                    let mut pair = ops::affinity_matrix_backward(x(0), x(1), &g)?;
                    accumulate(&mut grads[node.inputs[0]], pair.take("q").unwrap())?;
                    accumulate(&mut grads[node.inputs[1]], pair.take("k").unwrap())?;
                }
                OpKind::AttnCollapse => {
                    let gi = ops::attn_collapse_backward(x(0), &g)?.take("input").unwrap();
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                OpKind::MulAttention => {
                    let mut pair = ops::mul_attention_backward(x(0), x(1), &g)?;
                    accumulate(&mut grads[node.inputs[0]], pair.take("v").unwrap())?;
                    accumulate(&mut grads[node.inputs[1]], pair.take("attn").unwrap())?;
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for LayerGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for node in &self.nodes {
            let ins: Vec<&str> = node.inputs.iter().map(|&i| self.nodes[i].name.as_str()).collect();
            writeln!(f, "{:<24} {:<26} <- {}", node.name, node.op.label(), ins.join(", "))?;
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn deform_layer<T: Scalar>(params: &Params<T>, name: &str, c: &ConvNode) -> Result<DeformConv2d<T>> {
    let co = c.out_channels;
    let bias = if c.bias {
        params.get(&format!("{name}.bias"))?.clone()
    } else {
        Tensor::zeros((co, 1, 1, 1))
    };
    Ok(DeformConv2d {
        weight: params.get(&format!("{name}.weight"))?.clone(),
        bias,
        offset_weight: params.get(&format!("{name}.offset_weight"))?.clone(),
        offset_bias: params.get(&format!("{name}.offset_bias"))?.clone(),
        spec: c.spec,
    })
}

/// Output of every node from one forward run.
#[derive(Debug, Clone)]
pub struct Activations<T: Scalar> {
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Activations<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.values[i])
            .ok_or_else(|| Error::Graph(format!("unknown node `{name}`")))
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }
}

/// Named learnable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params<T: Scalar> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params { map: BTreeMap::new() }
    }

    pub fn zeros_for(graph: &LayerGraph) -> Self {
        Params {
            map: graph
                .param_shapes()
                .into_iter()
                .map(|(k, s)| (k, Tensor::zeros(s)))
                .collect(),
        }
    }

    /// Fan-in scaled uniform init drawn in node order from a seeded stream.
    ///
    /// Weights use `U(-√(3g/fan_in), √(3g/fan_in))` with `g = 2` before a fused
    /// ReLU and `g = 1` otherwise, which keeps activation variance roughly
    /// constant with depth. Biases use `U(-1/√fan_in, 1/√fan_in)`. Offset
    /// predictors start at zero.
    pub fn init(graph: &LayerGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = BTreeMap::new();
        for node in graph.nodes() {
            let Some(c) = node.op.conv() else { continue };
            let ws = c.weight_shape();
            let fan_in = (ws.c() * ws.h() * ws.w()).max(1) as f64;
            let gain = if c.relu { 2.0 } else { 1.0 };
            let w_bound = (3.0 * gain / fan_in).sqrt();
            let b_bound = 1.0 / fan_in.sqrt();
            for (key, shape) in node.param_shapes() {
                let t = if key.ends_with(".offset_weight") || key.ends_with(".offset_bias") {
                    Tensor::zeros(shape)
                } else if key.ends_with(".weight") {
                    Tensor::rand_uniform(shape, -w_bound, w_bound, &mut rng)
                } else {
                    Tensor::rand_uniform(shape, -b_bound, b_bound, &mut rng)
                };
                map.insert(key, t);
            }
        }
        Params { map }
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        self.map.get(key).ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    pub fn get_mut(&mut self, key: &str) -> Result<&mut Tensor<T>> {
        self.map.get_mut(key).ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    /// Replaces a tensor, keeping the existing shape contract.
    pub fn set(&mut self, key: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(key)?;
        if slot.numel() != value.numel() {
            return crate::error::shape_err("Params::set", format!("`{key}` is {} but got {}", slot.shape(), value.shape()));
        }
        *slot = Tensor::from_vec(slot.shape(), value.into_vec())?;
        Ok(())
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Tensor<T>) {
        self.map.insert(key.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    fn add_into(&mut self, key: &str, g: &Tensor<T>) -> Result<()> {
        self.get_mut(key)?.add_assign(g)
    }

    /// Adds a gradient whose element count matches but whose shape may differ (bias vectors).
    fn add_into_flat(&mut self, key: &str, g: &Tensor<T>) -> Result<()> {
        let slot = self.get_mut(key)?;
        if slot.numel() != g.numel() {
            return crate::error::shape_err("backward", format!("`{key}` gradient {} for {}", g.shape(), slot.shape()));
        }
        for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
            *a = *a + *b;
        }
        Ok(())
    }
}

/// Result of [`LayerGraph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub params: Params<T>,
    pub inputs: BTreeMap<String, Tensor<T>>,
}
