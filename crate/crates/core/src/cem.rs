//! Context extraction module: dense multi-path dilated (optionally deformable)
//! convolutions over the coarsest backbone map, plus a global-context branch.

use crate::error::{Error, Result};
use crate::graph::{ConvNode, LayerGraph, OpKind, Params};
use crate::ops::ConvSpec;
use crate::tensor::{Scalar, Tensor};

/// Name of the graph input created by [`cem_build`].
pub const CEM_INPUT: &str = "f5";
/// Name of the CEM output node.
pub const CEM_OUTPUT: &str = "cem_reduce_1x1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CemConfig {
    pub rates: Vec<usize>,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub path_channels: usize,
    pub out_channels: usize,
    pub use_deformable: bool,
    pub use_dense: bool,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            rates: vec![3, 6, 12, 18, 24],
            in_channels: 2048,
            mid_channels: 512,
            path_channels: 256,
            out_channels: 256,
            use_deformable: true,
            use_dense: true,
        }
    }
}

impl CemConfig {
    pub fn with_rates(mut self, rates: &[usize]) -> Self {
        self.rates = rates.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::Config("cem.rates must not be empty".into()));
        }
        if self.rates.contains(&0) {
            return Err(Error::Config(format!("cem.rates must be positive, got {:?}", self.rates)));
        }
        for (i, r) in self.rates.iter().enumerate() {
            if self.rates[..i].contains(r) {
                return Err(Error::Config(format!("cem.rates repeats rate {r}")));
            }
        }
        for (key, v) in [
            ("cem.in_channels", self.in_channels),
            ("cem.mid_channels", self.mid_channels),
            ("cem.path_channels", self.path_channels),
            ("cem.out_channels", self.out_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        Ok(())
    }

    pub fn paths(&self) -> usize {
        self.rates.len()
    }
}

/// Input width of each path's 1×1 reduce conv.
pub fn channel_plan(config: &CemConfig) -> Vec<usize> {
    (0..config.paths())
        .map(|k| {
            if config.use_dense {
                config.in_channels + k * config.path_channels
            } else {
                config.in_channels
            }
        })
        .collect()
}

/// Standalone CEM graph reading input [`CEM_INPUT`].
pub fn cem_build(config: &CemConfig) -> Result<LayerGraph> {
    let mut g = LayerGraph::new();
    g.add(CEM_INPUT, OpKind::Input { channels: config.in_channels }, &[])?;
    let out = cem_build_into(&mut g, config, CEM_INPUT)?;
    g.set_outputs(&[&out])?;
    Ok(g)
}

/// Appends the CEM nodes reading `input` and returns the output node name.
pub fn cem_build_into(g: &mut LayerGraph, config: &CemConfig, input: &str) -> Result<String> {
    config.validate()?;
    let plan = channel_plan(config);
    let mut running = input.to_string();
    let mut path_outputs = Vec::with_capacity(config.paths());
    for (k, (&rate, &width)) in config.rates.iter().zip(&plan).enumerate() {
        let reduce = format!("cem_{rate}_1x1");
        let path = format!("cem_{rate}_3x3");
        let source = if config.use_dense { running.as_str() } else { input };
        g.add(
            &reduce,
            OpKind::Conv(ConvNode::new(width, config.mid_channels, ConvSpec::square(1)).relu()),
            &[source],
        )?;
        let node = ConvNode::new(config.mid_channels, config.path_channels, ConvSpec::atrous3x3(rate)).relu();
        let op = if config.use_deformable { OpKind::DeformConv(node) } else { OpKind::Conv(node) };
        g.add(&path, op, &[&reduce])?;
        if config.use_dense && k + 1 < config.paths() {
            let cat = format!("cem_concat_{}", k + 1);
            g.add(&cat, OpKind::Concat, &[&running, &path])?;
            running = cat;
        }
        path_outputs.push(path);
    }

    g.add("cem_global_context", OpKind::GlobalAvgPool, &[input])?;
    g.add(
        "cem_gc_reduce_1x1",
        OpKind::Conv(ConvNode::new(config.in_channels, config.path_channels, ConvSpec::square(1)).relu()),
        &["cem_global_context"],
    )?;
    g.add("cem_gc_upsample", OpKind::ResizeLike, &["cem_gc_reduce_1x1", input])?;
    path_outputs.push("cem_gc_upsample".to_string());

    let fused = format!("cem_concat_{}", config.paths());
    let refs: Vec<&str> = path_outputs.iter().map(String::as_str).collect();
    g.add(&fused, OpKind::Concat, &refs)?;
    let fused_width = (config.paths() + 1) * config.path_channels;
    g.add(
        CEM_OUTPUT,
        OpKind::Conv(ConvNode::new(fused_width, config.out_channels, ConvSpec::square(1)).relu()),
        &[&fused],
    )?;
    Ok(CEM_OUTPUT.to_string())
}

/// Runs a graph from [`cem_build`] on `f5`.
pub fn cem_forward<T: Scalar>(graph: &LayerGraph, params: &Params<T>, f5: &Tensor<T>) -> Result<Tensor<T>> {
    let acts = graph.forward(params, &[(CEM_INPUT, f5)])?;
    Ok(acts.get(CEM_OUTPUT)?.clone())
}
