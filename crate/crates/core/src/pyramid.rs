//! Full pyramid assembly: stub backbone, CEM and attention on the coarsest map,
//! then an FPN top-down pathway emitting P2..P6.

use crate::attention::{am_build_into, AmConfig};
use crate::cem::{cem_build_into, CemConfig};
use crate::error::{Error, Result};
use crate::graph::{Activations, ConvNode, Gradients, LayerGraph, OpKind, Params};
use crate::ops::ConvSpec;
use crate::tensor::{Scalar, Tensor};

pub const IMAGE_INPUT: &str = "image";
pub const FEATURE_NAMES: [&str; 4] = ["f2", "f3", "f4", "f5"];
pub const LEVEL_NAMES: [&str; 5] = ["p2", "p3", "p4", "p5", "p6"];
/// Total stride of the coarsest backbone map.
pub const MAX_STRIDE: usize = 32;

/// Desk-scale stand-in for a ResNet: a stride-2 conv + 2×2 max-pool stem, then
/// four 3×3 conv + ReLU stages at strides 4, 8, 16, 32.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub image_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            image_channels: 3,
            stem_channels: 64,
            stage_channels: [256, 512, 1024, 2048],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PyramidConfig {
    pub lateral_channels: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { lateral_channels: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AcfpnConfig {
    pub backbone: BackboneConfig,
    pub cem: CemConfig,
    pub am: AmConfig,
    pub pyramid: PyramidConfig,
}

impl AcfpnConfig {
    /// Every width of the default network divided by 16, for end-to-end gradient checks.
    pub fn tiny() -> Self {
        AcfpnConfig {
            backbone: BackboneConfig {
                image_channels: 3,
                stem_channels: 4,
                stage_channels: [16, 32, 64, 128],
            },
            cem: CemConfig {
                in_channels: 128,
                mid_channels: 32,
                path_channels: 16,
                out_channels: 16,
                ..CemConfig::default()
            },
            am: AmConfig {
                channels: 16,
                key_channels: 8,
                context_channels: 128,
                cnam_channels: 16,
                ..AmConfig::default()
            },
            pyramid: PyramidConfig { lateral_channels: 16 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cem.validate()?;
        let f5 = self.backbone.stage_channels[3];
        let lat = self.pyramid.lateral_channels;
        let checks = [
            (self.cem.in_channels == f5, format!("cem.in_channels {} != backbone f5 width {f5}", self.cem.in_channels)),
            (self.cem.out_channels == lat, format!("cem.out_channels {} != lateral width {lat}", self.cem.out_channels)),
            (self.am.channels == lat, format!("attention width {} != lateral width {lat}", self.am.channels)),
            (self.am.context_channels == f5, format!("attention context width {} != f5 width {f5}", self.am.context_channels)),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg));
            }
        }
        Ok(())
    }
}

fn conv3x3(ci: usize, co: usize, stride: usize) -> ConvNode {
    ConvNode::new(ci, co, ConvSpec::square(3).with_padding(1).with_stride(stride))
}

fn backbone_into(g: &mut LayerGraph, cfg: &BackboneConfig) -> Result<()> {
    g.add(IMAGE_INPUT, OpKind::Input { channels: cfg.image_channels }, &[])?;
    g.add("stem", OpKind::Conv(conv3x3(cfg.image_channels, cfg.stem_channels, 2).relu()), &[IMAGE_INPUT])?;
    g.add("stem_pool", OpKind::MaxPool { kernel: (2, 2), stride: (2, 2) }, &["stem"])?;
    let mut prev = ("stem_pool", cfg.stem_channels);
    for (k, (&name, &co)) in FEATURE_NAMES.iter().zip(&cfg.stage_channels).enumerate() {
        let stride = if k == 0 { 1 } else { 2 };
        g.add(name, OpKind::Conv(conv3x3(prev.1, co, stride).relu()), &[prev.0])?;
        prev = (name, co);
    }
    Ok(())
}

pub fn backbone_build(cfg: &BackboneConfig) -> Result<LayerGraph> {
    let mut g = LayerGraph::new();
    backbone_into(&mut g, cfg)?;
    g.set_outputs(&FEATURE_NAMES)?;
    Ok(g)
}

pub fn acfpn_build(cfg: &AcfpnConfig) -> Result<LayerGraph> {
    cfg.validate()?;
    let mut g = LayerGraph::new();
    backbone_into(&mut g, &cfg.backbone)?;
    let context = cem_build_into(&mut g, &cfg.cem, "f5")?;
    let top = am_build_into(&mut g, &cfg.am, &context, "f5")?;

    let lat = cfg.pyramid.lateral_channels;
    let mut merged = top;
    let mut merged_names = vec![merged.clone()];
    for k in (2..=4).rev() {
        let f = FEATURE_NAMES[k - 2];
        let lateral = format!("lateral_{k}");
        let up = format!("top_down_{k}");
        let m = format!("m{k}");
        g.add(&lateral, OpKind::Conv(ConvNode::new(cfg.backbone.stage_channels[k - 2], lat, ConvSpec::square(1))), &[f])?;
        g.add(&up, OpKind::UpsampleNearest { factor: 2 }, &[&merged])?;
        g.add(&m, OpKind::Add, &[&lateral, &up])?;
        merged = m;
        merged_names.push(merged.clone());
    }
    // merged_names runs m5, m4, m3, m2
    for (k, m) in (2..=5).rev().zip(&merged_names) {
        g.add(format!("p{k}"), OpKind::Conv(conv3x3(lat, lat, 1)), &[m])?;
    }
    g.add("p6", OpKind::MaxPool { kernel: (1, 1), stride: (2, 2) }, &["p5"])?;
    g.set_outputs(&LEVEL_NAMES)?;
    Ok(g)
}

fn check_image<T: Scalar>(image: &Tensor<T>) -> Result<()> {
    let s = image.shape();
    if s.h() == 0 || s.w() == 0 || !s.h().is_multiple_of(MAX_STRIDE) || !s.w().is_multiple_of(MAX_STRIDE) {
        return Err(Error::Precondition(format!(
            "image {s}: height and width must be positive multiples of {MAX_STRIDE}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features<T: Scalar> {
    pub f2: Tensor<T>,
    pub f3: Tensor<T>,
    pub f4: Tensor<T>,
    pub f5: Tensor<T>,
}

/// Runs a graph from [`backbone_build`] (or any graph containing the backbone nodes).
pub fn backbone_forward<T: Scalar>(graph: &LayerGraph, params: &Params<T>, image: &Tensor<T>) -> Result<Features<T>> {
    check_image(image)?;
    let acts = graph.forward(params, &[(IMAGE_INPUT, image)])?;
    let get = |n: &str| acts.get(n).cloned();
    Ok(Features { f2: get("f2")?, f3: get("f3")?, f4: get("f4")?, f5: get("f5")? })
}

/// Pyramid levels P2..P6 in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid<T: Scalar> {
    pub levels: [Tensor<T>; 5],
}

impl<T: Scalar> Pyramid<T> {
    pub fn from_activations(acts: &Activations<T>) -> Result<Self> {
        let get = |n: &str| acts.get(n).cloned();
        Ok(Pyramid {
            levels: [get("p2")?, get("p3")?, get("p4")?, get("p5")?, get("p6")?],
        })
    }

    /// `(name, stride, tensor)` per level.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, usize, &Tensor<T>)> {
        LEVEL_NAMES
            .iter()
            .zip(&self.levels)
            .enumerate()
            .map(|(i, (&n, t))| (n, 4 << i, t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        LEVEL_NAMES.iter().position(|&n| n == name).map(|i| &self.levels[i])
    }
}

/// Full forward pass; keeps every intermediate for the reverse pass.
pub fn acfpn_forward_with_activations<T: Scalar>(
    graph: &LayerGraph,
    params: &Params<T>,
    image: &Tensor<T>,
) -> Result<Activations<T>> {
    check_image(image)?;
    graph.forward(params, &[(IMAGE_INPUT, image)])
}

pub fn acfpn_forward<T: Scalar>(graph: &LayerGraph, params: &Params<T>, image: &Tensor<T>) -> Result<Pyramid<T>> {
    Pyramid::from_activations(&acfpn_forward_with_activations(graph, params, image)?)
}

/// Gradients of every parameter (and the image) given upstream gradients on P2..P6.
pub fn pyramid_backward<T: Scalar>(
    graph: &LayerGraph,
    params: &Params<T>,
    acts: &Activations<T>,
    grads: &Pyramid<T>,
) -> Result<Gradients<T>> {
    let seeds: Vec<(&str, &Tensor<T>)> = grads.iter().map(|(n, _, t)| (n, t)).collect();
    graph.backward(params, acts, &seeds)
}
