use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Distribution, InputSource, RunConfig};
use crate::analysis::{complexity_report, count_params, graph_receptive_fields, receptive_field, RfSpec};
use crate::attention::am_build;
use crate::cem::{cem_build, channel_plan, CEM_INPUT, CEM_OUTPUT};
use crate::checks::{gradcheck_suite, SuiteEntry, SUITE_OPS};
use crate::error::{Error, Result};
use crate::graph::Params;
use crate::io::{decode_pnm, normalize_map, read_image, write_acft, write_pgm};
use crate::ops::ConvSpec;
use crate::pyramid::{acfpn_build, acfpn_forward_with_activations, Pyramid, MAX_STRIDE};
use crate::tensor::{Precision, Scalar, Shape, Tensor};

/// Parameter delta between the reference detector with and without the context
/// and attention modules (54.58M − 39.82M).
pub const REFERENCE_ADDED_PARAMS: u64 = 14_760_000;

/// Seed offset separating the synthetic input stream from weight init.
const INPUT_STREAM: u64 = 0x1a9e;

fn out_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(out_err(dir))
}

fn emit(w: &mut dyn Write, text: &str) -> Result<()> {
    w.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(out_err(path))
}

/// The input tensor a config describes.
pub fn load_input<T: Scalar>(cfg: &RunConfig) -> Result<Tensor<T>> {
    match &cfg.input {
        InputSource::File(p) => read_image(p),
        InputSource::Synthetic { shape, distribution } => Ok(match distribution {
            Distribution::Zeros => Tensor::zeros(*shape),
            Distribution::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INPUT_STREAM);
                Tensor::rand_uniform(*shape, 0.0, 1.0, &mut rng)
            }
            Distribution::Ramp => {
                let denom = (shape.h() + shape.w()).max(1) as f64;
                Tensor::from_fn(*shape, |_, _, y, x| T::from_f64_lossy((x + y) as f64 / denom))
            }
        }),
    }
}

fn input_shape(cfg: &RunConfig) -> Result<Shape> {
    match &cfg.input {
        InputSource::Synthetic { shape, .. } => Ok(*shape),
        InputSource::File(p) => {
            let img = decode_pnm(&fs::read(p).map_err(out_err(p))?)?;
            Ok(Shape::new(1, 3, img.height, img.width))
        }
    }
}

fn describe(cfg: &RunConfig, precision: Precision, input: Shape) -> String {
    let cem = &cfg.network.cem;
    let rates: Vec<String> = cem.rates.iter().map(usize::to_string).collect();
    format!(
        "seed={} precision={} input={} cem.paths={} cem.rates={} cem.use_deformable={} cem.use_dense={} am.cxam={} am.cnam={}\n",
        cfg.seed,
        precision.as_str(),
        input,
        cem.paths(),
        rates.join(","),
        cem.use_deformable,
        cem.use_dense,
        cfg.network.am.cxam,
        cfg.network.am.cnam,
    )
}

fn forward_impl<T: Scalar>(cfg: &RunConfig, w: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let graph = acfpn_build(&cfg.network)?;
    let params = Params::<T>::init(&graph, cfg.seed);
    let image = load_input::<T>(cfg)?;
    let acts = acfpn_forward_with_activations(&graph, &params, &image)?;
    let pyramid = Pyramid::from_activations(&acts)?;

    let mut text = describe(cfg, T::PRECISION, image.shape());
    let mut written = Vec::new();
    ensure_dir(&cfg.output_dir)?;
    for (name, stride, t) in pyramid.iter() {
        let (lo, hi, mean) = t.min_max_mean().unwrap_or((T::zero(), T::zero(), T::zero()));
        text += &format!(
            "{name} stride={stride} shape={} min={:.6e} max={:.6e} mean={:.6e}\n",
            t.shape(),
            lo.as_f64(),
            hi.as_f64(),
            mean.as_f64()
        );
        if cfg.dump {
            let path = cfg.output_dir.join(format!("{name}.acft"));
            write_acft(&path, t)?;
            written.push(path);
        }
    }
    let summary = cfg.output_dir.join("forward_summary.txt");
    write_text(&summary, &text)?;
    written.push(summary);
    emit(w, &text)?;
    Ok(written)
}

/// Runs the pyramid and writes per-level summaries (and ACFT dumps when enabled).
/// Returns the files written.
pub fn cmd_forward(cfg: &RunConfig, w: &mut dyn Write) -> Result<Vec<PathBuf>> {
    match cfg.precision.unwrap_or(Precision::Single) {
        Precision::Single => forward_impl::<f32>(cfg, w),
        Precision::Double => forward_impl::<f64>(cfg, w),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub entries: Vec<SuiteEntry>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(SuiteEntry::passed)
    }

    pub fn failed_ops(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.passed()).map(|e| e.op.as_str()).collect()
    }
}

/// Runs the gradient-check suite in double precision. `fault` corrupts one op's backward.
pub fn cmd_gradcheck(cfg: &RunConfig, fault: Option<&str>, w: &mut dyn Write) -> Result<GradcheckOutcome> {
    if cfg.precision == Some(Precision::Single) {
        return Err(Error::Precondition("gradcheck needs double precision; use --precision f64".into()));
    }
    if let Some(op) = fault {
        if !SUITE_OPS.contains(&op) {
            return Err(Error::Precondition(format!("unknown op `{op}`; expected one of {}", SUITE_OPS.join(", "))));
        }
    }
    let entries = gradcheck_suite(cfg.seed, fault)?;
    let mut text = String::new();
    for e in &entries {
        text += &format!("{e}\n");
    }
    let outcome = GradcheckOutcome { entries };
    text += &match outcome.failed_ops().as_slice() {
        [] => format!("all {} ops within tolerance\n", outcome.entries.len()),
        failed => format!("FAILED: {}\n", failed.join(", ")),
    };
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("gradcheck.txt"), &text)?;
    emit(w, &text)?;
    Ok(outcome)
}

/// Key figures from [`cmd_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub cem_params: u64,
    pub am_params: u64,
    pub network_params: u64,
    pub cem_macs: u64,
    pub am_macs: u64,
    pub rf_growth: usize,
}

impl ReportSummary {
    pub fn added_params(&self) -> u64 {
        self.cem_params + self.am_params
    }

    /// Signed deviation from [`REFERENCE_ADDED_PARAMS`] in percent.
    pub fn deviation_pct(&self) -> f64 {
        (self.added_params() as f64 / REFERENCE_ADDED_PARAMS as f64 - 1.0) * 100.0
    }
}

/// Receptive field of the backbone's F5 units.
pub fn backbone_f5_rf() -> RfSpec {
    let s3 = |s| ConvSpec::square(3).with_padding(1).with_stride(s);
    let pool = ConvSpec::square(2).with_stride(2);
    receptive_field(&[s3(2), pool, s3(1), s3(2), s3(2), s3(2)]).expect("non-empty chain")
}

/// Prints per-node and total params/MACs for the CEM and attention graphs and CEM receptive-field growth.
pub fn cmd_report(cfg: &RunConfig, w: &mut dyn Write) -> Result<ReportSummary> {
    let net = &cfg.network;
    let input = input_shape(cfg)?;
    let f5 = Shape::new(input.n(), net.cem.in_channels, input.h() / MAX_STRIDE, input.w() / MAX_STRIDE);
    let cem = cem_build(&net.cem)?;
    let am = am_build(&net.am)?;
    let cem_report = complexity_report(&cem, &[(CEM_INPUT, f5)])?;
    let am_report = complexity_report(&am, &[("f", f5.with_c(net.am.channels)), ("f5", f5)])?;

    let entry = backbone_f5_rf();
    let rfs = graph_receptive_fields(&cem, CEM_INPUT, entry)?;
    let out_rf = rfs[cem.id(CEM_OUTPUT)?].expect("CEM output has a local receptive field");
    let summary = ReportSummary {
        cem_params: cem_report.total_params,
        am_params: am_report.total_params,
        network_params: count_params(&acfpn_build(net)?),
        cem_macs: cem_report.total_macs,
        am_macs: am_report.total_macs,
        rf_growth: out_rf.rf.0 - entry.rf.0,
    };

    let plan = channel_plan(&net.cem);
    let flat_plan = vec![net.cem.in_channels; plan.len()];
    let dense_extra: usize = plan.iter().zip(&flat_plan).map(|(a, b)| a - b).sum::<usize>() * net.cem.mid_channels;
    let rates: Vec<String> = net.cem.rates.iter().map(usize::to_string).collect();
    let plan_s: Vec<String> = plan.iter().map(usize::to_string).collect();

    let mut text = format!("CEM at F5 {f5}\n{cem_report}\n\nattention at F5 {f5}\n{am_report}\n\n");
    text += &format!(
        "CEM + attention add {} parameters; reference delta {} ({:+.2}%)\n\n",
        summary.added_params(),
        REFERENCE_ADDED_PARAMS,
        summary.deviation_pct()
    );
    for (k, v) in [
        ("cem.paths", net.cem.paths().to_string()),
        ("cem.rates", rates.join(",")),
        ("cem.channel_plan", plan_s.join(",")),
        ("cem.dense_extra_params", dense_extra.to_string()),
        ("params.cem", summary.cem_params.to_string()),
        ("params.am", summary.am_params.to_string()),
        ("params.added", summary.added_params().to_string()),
        ("params.reference", REFERENCE_ADDED_PARAMS.to_string()),
        ("params.deviation_pct", format!("{:.2}", summary.deviation_pct())),
        ("params.network", summary.network_params.to_string()),
        ("macs.cem", summary.cem_macs.to_string()),
        ("macs.am", summary.am_macs.to_string()),
        ("rf.f5", entry.rf.0.to_string()),
        ("rf.f5_jump", entry.jump.0.to_string()),
        ("rf.cem_growth", summary.rf_growth.to_string()),
        ("rf.cem_output", out_rf.rf.0.to_string()),
    ] {
        text += &format!("{k}={v}\n");
    }
    ensure_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("report.txt"), &text)?;
    emit(w, &text)?;
    Ok(summary)
}

fn dump_attention_impl<T: Scalar>(cfg: &RunConfig, w: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let graph = acfpn_build(&cfg.network)?;
    let params = Params::<T>::init(&graph, cfg.seed);
    let image = load_input::<T>(cfg)?;
    let acts = acfpn_forward_with_activations(&graph, &params, &image)?;

    ensure_dir(&cfg.output_dir)?;
    let mut meta = String::from("# min-max normalized per map to 0..255; a constant map is written as all zeros\n");
    let mut written = Vec::new();
    for (node, enabled) in [("cxam_attn", cfg.network.am.cxam), ("cnam_attn", cfg.network.am.cnam)] {
        if !enabled {
            continue;
        }
        let (map, norm) = normalize_map(acts.get(node)?, 0)?;
        let path = cfg.output_dir.join(format!("{node}.pgm"));
        write_pgm(&path, &map)?;
        meta += &format!(
            "{node}.pgm width={} height={} min={:.9e} max={:.9e} constant={}\n",
            map.width, map.height, norm.min, norm.max, norm.constant
        );
        written.push(path);
    }
    let meta_path = cfg.output_dir.join("attention_meta.txt");
    write_text(&meta_path, &meta)?;
    written.push(meta_path);
    emit(w, &meta)?;
    Ok(written)
}

/// Writes the attention maps of batch item 0 as 8-bit graymaps.
pub fn cmd_dump_attention(cfg: &RunConfig, w: &mut dyn Write) -> Result<Vec<PathBuf>> {
    if !cfg.network.am.enabled() {
        return Err(Error::Precondition("dump-attention needs am.cxam or am.cnam enabled".into()));
    }
    match cfg.precision.unwrap_or(Precision::Single) {
        Precision::Single => dump_attention_impl::<f32>(cfg, w),
        Precision::Double => dump_attention_impl::<f64>(cfg, w),
    }
}
