//! Context attention (CxAM) and content attention (CnAM).
//!
//! Both blocks project a feature map to query/key maps with 1×1 convs, build
//! the `N×N` spatial affinity, collapse it to a single `(n,1,h,w)` map with
//! sigmoid + mean, and scale the CxAM value map `V` by it. The fused feature
//! is `f + E + D`.

use crate::error::{Error, Result};
use crate::graph::{ConvNode, LayerGraph, OpKind, Params};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CxamWeights<T: Scalar = f32> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnamWeights<T: Scalar = f32> {
    pub wp: Tensor<T>,
    pub bp: Tensor<T>,
    pub wz: Tensor<T>,
    pub bz: Tensor<T>,
}

fn pointwise<T: Scalar>(ci: usize, co: usize) -> (Tensor<T>, Tensor<T>) {
    (Tensor::zeros((co, ci, 1, 1)), Tensor::zeros((co, 1, 1, 1)))
}

fn param<T: Scalar>(params: &Params<T>, key: String) -> Result<Tensor<T>> {
    params.get(&key).cloned()
}

impl<T: Scalar> CxamWeights<T> {
    /// All-zero weights for `channels → key_channels` (Q, K) and `channels → channels` (V).
    pub fn zeros(channels: usize, key_channels: usize) -> Self {
        let (wq, bq) = pointwise(channels, key_channels);
        let (wk, bk) = pointwise(channels, key_channels);
        let (wv, bv) = pointwise(channels, channels);
        CxamWeights { wq, bq, wk, bk, wv, bv }
    }

    /// Reads the `cxam_q`, `cxam_k`, `cxam_v` nodes of a graph built by [`am_build_into`].
    pub fn from_params(params: &Params<T>) -> Result<Self> {
        Ok(CxamWeights {
            wq: param(params, "cxam_q.weight".into())?,
            bq: param(params, "cxam_q.bias".into())?,
            wk: param(params, "cxam_k.weight".into())?,
            bk: param(params, "cxam_k.bias".into())?,
            wv: param(params, "cxam_v.weight".into())?,
            bv: param(params, "cxam_v.bias".into())?,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.wq.shape() != self.wk.shape() {
            return Err(Error::InvalidSpec(format!("wq {} and wk {} differ", self.wq.shape(), self.wk.shape())));
        }
        Ok(())
    }
}

impl<T: Scalar> CnamWeights<T> {
    pub fn zeros(in_channels: usize, channels: usize) -> Self {
        let (wp, bp) = pointwise(in_channels, channels);
        let (wz, bz) = pointwise(in_channels, channels);
        CnamWeights { wp, bp, wz, bz }
    }

    pub fn from_params(params: &Params<T>) -> Result<Self> {
        Ok(CnamWeights {
            wp: param(params, "cnam_p.weight".into())?,
            bp: param(params, "cnam_p.bias".into())?,
            wz: param(params, "cnam_z.weight".into())?,
            bz: param(params, "cnam_z.bias".into())?,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.wp.shape() != self.wz.shape() {
            return Err(Error::InvalidSpec(format!("wp {} and wz {} differ", self.wp.shape(), self.wz.shape())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CxamOutput<T: Scalar> {
    pub e: Tensor<T>,
    pub v: Tensor<T>,
    pub attn: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnamOutput<T: Scalar> {
    pub d: Tensor<T>,
    pub attn: Tensor<T>,
}

fn conv1x1<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ops::conv2d(x, w, Some(b), &ConvSpec::square(1))
}

pub fn cxam_forward<T: Scalar>(f: &Tensor<T>, weights: &CxamWeights<T>) -> Result<CxamOutput<T>> {
    weights.validate()?;
    let q = conv1x1(f, &weights.wq, &weights.bq)?;
    let k = conv1x1(f, &weights.wk, &weights.bk)?;
    let attn = ops::attn_collapse(&ops::affinity_matrix(&q, &k)?)?;
    let v = conv1x1(f, &weights.wv, &weights.bv)?;
    let e = ops::mul_attention(&v, &attn)?;
    Ok(CxamOutput { e, v, attn })
}

pub fn cnam_forward<T: Scalar>(f5: &Tensor<T>, v: &Tensor<T>, weights: &CnamWeights<T>) -> Result<CnamOutput<T>> {
    weights.validate()?;
    let (a, b) = (f5.shape(), v.shape());
    if (a.n(), a.h(), a.w()) != (b.n(), b.h(), b.w()) {
        return crate::error::shape_err("cnam_forward", format!("f5 {a} and value map {b} must share (n,h,w)"));
    }
    let p = conv1x1(f5, &weights.wp, &weights.bp)?;
    let z = conv1x1(f5, &weights.wz, &weights.bz)?;
    let attn = ops::attn_collapse(&ops::affinity_matrix(&p, &z)?)?;
    let d = ops::mul_attention(v, &attn)?;
    Ok(CnamOutput { d, attn })
}

/// `f + e + d`.
pub fn am_fuse<T: Scalar>(f: &Tensor<T>, e: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
    ops::add(&ops::add(f, e)?, d)
}

/// Widths and switches of the attention graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmConfig {
    pub cxam: bool,
    pub cnam: bool,
    /// Channels of the attended feature (CEM output) and of `V`.
    pub channels: usize,
    /// Query/key width in CxAM.
    pub key_channels: usize,
    /// Channels of the raw backbone map feeding CnAM.
    pub context_channels: usize,
    /// Query/key width in CnAM.
    pub cnam_channels: usize,
}

impl Default for AmConfig {
    fn default() -> Self {
        AmConfig {
            cxam: true,
            cnam: true,
            channels: 256,
            key_channels: 128,
            context_channels: 2048,
            cnam_channels: 256,
        }
    }
}

impl AmConfig {
    pub fn enabled(&self) -> bool {
        self.cxam || self.cnam
    }
}

/// Standalone attention graph over inputs `f` and `f5`, output `am_fuse`.
pub fn am_build(config: &AmConfig) -> Result<LayerGraph> {
    let mut g = LayerGraph::new();
    g.add("f", OpKind::Input { channels: config.channels }, &[])?;
    g.add("f5", OpKind::Input { channels: config.context_channels }, &[])?;
    let out = am_build_into(&mut g, config, "f", "f5")?;
    g.set_outputs(&[&out])?;
    Ok(g)
}

/// Appends attention nodes; returns the fused node name (`f` itself when both blocks are off).
pub fn am_build_into(g: &mut LayerGraph, config: &AmConfig, f: &str, f5: &str) -> Result<String> {
    if !config.enabled() {
        return Ok(f.to_string());
    }
    let pw = |ci, co| OpKind::Conv(ConvNode::new(ci, co, ConvSpec::square(1)));
    let c = config.channels;
    g.add("cxam_v", pw(c, c), &[f])?;
    let mut terms = vec![f.to_string()];
    if config.cxam {
        g.add("cxam_q", pw(c, config.key_channels), &[f])?;
        g.add("cxam_k", pw(c, config.key_channels), &[f])?;
        g.add("cxam_affinity", OpKind::Affinity, &["cxam_q", "cxam_k"])?;
        g.add("cxam_attn", OpKind::AttnCollapse, &["cxam_affinity"])?;
        g.add("cxam_e", OpKind::MulAttention, &["cxam_v", "cxam_attn"])?;
        terms.push("cxam_e".into());
    }
    if config.cnam {
        g.add("cnam_p", pw(config.context_channels, config.cnam_channels), &[f5])?;
        g.add("cnam_z", pw(config.context_channels, config.cnam_channels), &[f5])?;
        g.add("cnam_affinity", OpKind::Affinity, &["cnam_p", "cnam_z"])?;
        g.add("cnam_attn", OpKind::AttnCollapse, &["cnam_affinity"])?;
        g.add("cnam_d", OpKind::MulAttention, &["cxam_v", "cnam_attn"])?;
        terms.push("cnam_d".into());
    }
    let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    g.add("am_fuse", OpKind::Add, &refs)?;
    Ok("am_fuse".into())
}

/// Expected attention-map shape for a feature of shape `s`.
pub fn attention_shape(s: Shape) -> Shape {
    s.with_c(1)
}
