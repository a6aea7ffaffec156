//! Acceptance gate: one pass/fail line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use acfpn::analysis::{count_params, graph_receptive_fields, receptive_field, RfSpec};
use acfpn::attention::{am_build, am_fuse, cnam_forward, cxam_forward, AmConfig, CnamWeights, CxamWeights};
use acfpn::cem::{cem_build, channel_plan, CemConfig, CEM_INPUT, CEM_OUTPUT};
use acfpn::checks::gradcheck_suite;
use acfpn::cli::{load_input, RunConfig};
use acfpn::graph::Params;
use acfpn::io::{normalize_map, read_acft, read_pgm};
use acfpn::ops::conv2d;
use acfpn::pyramid::{acfpn_build, acfpn_forward, acfpn_forward_with_activations, AcfpnConfig, Pyramid};
use acfpn::{deform_conv2d, ConvSpec, DeformConv2d, Shape, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t <= budget, || format!("took {t:.1?}, budget {budget:?}"))
}

fn shape_table() -> Outcome {
    let start = Instant::now();
    let cfg = CemConfig::default();
    let g = cem_build(&cfg).map_err(|e| e.to_string())?;
    let params = Params::<f32>::init(&g, 0);
    let x = Tensor::<f32>::rand_uniform((1, 2048, 16, 16), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let acts = g.forward(&params, &[(CEM_INPUT, &x)]).map_err(|e| e.to_string())?;
    let shape = |name: &str| acts.get(name).map(Tensor::shape).map_err(|e| e.to_string());
    let s = |c, hw| Shape::new(1, c, hw, hw);

    let mut rows: Vec<(String, Shape, Shape)> = Vec::new();
    for (k, r) in cfg.rates.iter().enumerate() {
        let width = 2048 + 256 * k;
        rows.push((format!("cem_{r}_1x1"), s(width, 16), s(512, 16)));
        rows.push((format!("cem_{r}_3x3"), s(512, 16), s(256, 16)));
        if k + 1 < cfg.rates.len() {
            rows.push((format!("cem_concat_{}", k + 1), s(width, 16), s(width + 256, 16)));
        }
    }
    rows.push(("cem_global_context".into(), s(2048, 16), s(2048, 1)));
    rows.push(("cem_gc_reduce_1x1".into(), s(2048, 1), s(256, 1)));
    rows.push(("cem_gc_upsample".into(), s(256, 1), s(256, 16)));
    rows.push(("cem_concat_5".into(), s(256, 16), s(1536, 16)));
    rows.push((CEM_OUTPUT.into(), s(1536, 16), s(256, 16)));

    for (name, input, output) in &rows {
        let node = g.node(name).map_err(|e| e.to_string())?;
        let first = g.nodes()[node.inputs[0]].name.clone();
        let got_in = shape(&first)?;
        let got_out = shape(name)?;
        ensure(got_in == *input && got_out == *output, || {
            format!("{name}: {got_in} -> {got_out}, expected {input} -> {output}")
        })?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("{} rows, concat widths 2304/2560/2816/3072/1536 in {:.2?}", rows.len(), start.elapsed()))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let entries = gradcheck_suite(0, None).map_err(|e| e.to_string())?;
    let failed: Vec<String> = entries.iter().filter(|e| !e.passed()).map(|e| e.to_string()).collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    within(start, Duration::from_secs(300))?;
    let worst = entries.iter().map(|e| (e.max_rel_error / e.threshold, e)).fold(None::<(f64, &_)>, |acc, x| match acc {
        Some(a) if a.0 >= x.0 => Some(a),
        _ => Some(x),
    });
    let (_, w) = worst.ok_or("empty suite")?;
    Ok(format!("{} ops, closest to its bound: {} at {:.2e} <= {:.0e}", entries.len(), w.op, w.max_rel_error, w.threshold))
}

fn zero_offset() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let spec = ConvSpec::square(k)
            .with_stride(rng.random_range(1..=2))
            .with_padding(rng.random_range(0..=3))
            .with_dilation(rng.random_range(1..=3));
        let (ci, co) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let span = (k - 1) * spec.dilation.0 + 1;
        let hw = rng.random_range(span.max(4)..=span + 6);
        let x = Tensor::<f64>::rand_uniform((rng.random_range(1..=2), ci, hw, hw), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform((co, ci, k, k), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform((co, 1, 1, 1), -1.0, 1.0, &mut rng);
        let plain = conv2d(&x, &w, Some(&b), &spec).map_err(|e| e.to_string())?;
        let deform = deform_conv2d(&x, &DeformConv2d::new(w, b, spec)).map_err(|e| e.to_string())?;
        ensure(plain.shape() == deform.shape(), || format!("{} vs {}", plain.shape(), deform.shape()))?;
        worst = worst.max(plain.max_abs_diff(&deform));
    }
    ensure(worst <= 1e-12, || format!("max diff {worst:.3e}"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("100 cases, max diff {worst:.1e}"))
}

fn attention_invariants() -> Outcome {
    let start = Instant::now();
    let cfg = AmConfig { channels: 32, key_channels: 16, context_channels: 64, cnam_channels: 16, ..AmConfig::default() };
    let mut checked = 0;
    for seed in 0..5 {
        let params = Params::<f64>::init(&am_build(&cfg).map_err(|e| e.to_string())?, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let f = Tensor::<f64>::rand_uniform((2, 32, 6, 5), -2.0, 2.0, &mut rng);
        let f5 = Tensor::<f64>::rand_uniform((2, 64, 6, 5), 0.0, 3.0, &mut rng);
        let cx = cxam_forward(&f, &CxamWeights::from_params(&params).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let cn = cnam_forward(&f5, &cx.v, &CnamWeights::from_params(&params).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for (name, a) in [("R'", &cx.attn), ("S'", &cn.attn)] {
            ensure(a.data().iter().all(|&v| v > 0.0 && v < 1.0), || format!("{name} leaves (0,1) at seed {seed}"))?;
        }
        for (name, t) in [("E", &cx.e), ("D", &cn.d)] {
            let ok = t.data().iter().zip(cx.v.data()).all(|(a, v)| a.abs() <= v.abs());
            ensure(ok, || format!("|{name}| > |V| at seed {seed}"))?;
        }
        checked += cx.attn.numel() + cn.attn.numel();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = Tensor::<f64>::rand_uniform((1, 8, 4, 4), -1.0, 1.0, &mut rng);
    let f5 = Tensor::<f64>::rand_uniform((1, 12, 4, 4), -1.0, 1.0, &mut rng);
    let cx = cxam_forward(&f, &CxamWeights::zeros(8, 4)).map_err(|e| e.to_string())?;
    let cn = cnam_forward(&f5, &cx.v, &CnamWeights::zeros(12, 6)).map_err(|e| e.to_string())?;
    let fused = am_fuse(&f, &cx.e, &cn.d).map_err(|e| e.to_string())?;
    ensure(fused == f, || "zero-weight fusion changed the feature".into())?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("{checked} attention values in (0,1), zero-weight fusion is identity"))
}

fn parameter_delta() -> Outcome {
    let start = Instant::now();
    let cem = count_params(&cem_build(&CemConfig::default()).map_err(|e| e.to_string())?);
    let am = count_params(&am_build(&AmConfig::default()).map_err(|e| e.to_string())?);
    let total = cem + am;
    let dev = (total as f64 / 14.76e6 - 1.0) * 100.0;
    ensure(dev.abs() <= 10.0, || format!("{total} params is {dev:+.2}% from 14.76M"))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("{cem} + {am} = {total} ({dev:+.2}% from 14.76M)"))
}

fn ablation_configs() -> Outcome {
    let configs: [&[usize]; 4] = [&[1], &[3, 12, 24], &[3, 6, 12, 18, 24], &[3, 6, 9, 12, 18, 24, 32]];
    for rates in configs {
        let cfg = CemConfig::default().with_rates(rates);
        let g = cem_build(&cfg).map_err(|e| format!("{rates:?} rejected: {e}"))?;
        let plan = channel_plan(&cfg);
        let expected: Vec<usize> = (0..rates.len()).map(|k| 2048 + k * 256).collect();
        ensure(plan == expected, || format!("{rates:?}: plan {plan:?}, expected {expected:?}"))?;
        let shapes = g.infer_shapes(&[(CEM_INPUT, Shape::new(1, 2048, 4, 4))]).map_err(|e| e.to_string())?;
        for (r, width) in rates.iter().zip(&plan) {
            let node = g.node(&format!("cem_{r}_1x1")).map_err(|e| e.to_string())?;
            let got = shapes[node.inputs[0]].c();
            ensure(got == *width, || format!("{rates:?}: cem_{r}_1x1 reads {got} channels, plan says {width}"))?;
        }
        let last = shapes[g.id(CEM_OUTPUT).map_err(|e| e.to_string())?];
        ensure(last == Shape::new(1, 256, 4, 4), || format!("{rates:?}: output {last}"))?;
    }
    Ok("1, 3, 5 and 7 path configs build with dense widths 2048 + 256k".into())
}

fn pyramid_run(cfg: &AcfpnConfig, threads: usize) -> Result<Pyramid<f32>, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let g = acfpn_build(cfg)?;
        let params = Params::<f32>::init(&g, 11);
        let image = Tensor::<f32>::rand_uniform((1, 3, 128, 128), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(11));
        acfpn_forward(&g, &params, &image)
    })
    .map_err(|e| e.to_string())
}

fn bits(p: &Pyramid<f32>) -> Vec<u32> {
    p.iter().flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

fn pyramid_contract() -> Outcome {
    let start = Instant::now();
    let cfg = AcfpnConfig::default();
    let a = pyramid_run(&cfg, 4)?;
    for ((name, stride, t), expected) in a.iter().zip([4, 8, 16, 32, 64]) {
        let want = Shape::new(1, 256, 128 / expected, 128 / expected);
        ensure(stride == expected && t.shape() == want, || format!("{name}: stride {stride} shape {}", t.shape()))?;
    }
    let reference = bits(&a);
    for threads in [4, 1, 3] {
        ensure(bits(&pyramid_run(&cfg, threads)?) == reference, || format!("{threads}-thread run differs"))?;
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("P2..P6 at strides 4..64, identical across 1/3/4 threads in {:.2?}", start.elapsed()))
}

fn receptive_fields() -> Outcome {
    let g = cem_build(&CemConfig::default()).map_err(|e| e.to_string())?;
    let entry = RfSpec { rf: (1, 1), jump: (32, 32), start: (0.5, 0.5) };
    let rfs = graph_receptive_fields(&g, CEM_INPUT, entry).map_err(|e| e.to_string())?;
    let growth = rfs[g.id(CEM_OUTPUT).map_err(|e| e.to_string())?].ok_or("no receptive field at output")?.rf.0 - 1;

    // r_out = r_in + (k - 1)·d·j over the chain of path convs
    let mut r = 1usize;
    for d in [3, 6, 12, 18, 24] {
        r += (3 - 1) * d * 32;
    }
    let independent = r - 1;
    ensure(growth == 4032 && independent == 4032, || format!("graph {growth}, recurrence {independent}"))?;

    let cases: [(&[ConvSpec], usize, usize); 4] = [
        (&[ConvSpec::square(3)], 3, 1),
        (&[ConvSpec::square(3).with_dilation(2)], 5, 1),
        (&[ConvSpec::square(7).with_stride(2)], 7, 2),
        (&[ConvSpec::square(3).with_stride(2), ConvSpec::square(3), ConvSpec::square(2).with_stride(2)], 7 + 2, 4),
    ];
    for (chain, rf, jump) in cases {
        let got = receptive_field(chain).map_err(|e| e.to_string())?;
        ensure(got.rf == (rf, rf) && got.jump == (jump, jump), || format!("{chain:?}: {got:?}, expected rf {rf} jump {jump}"))?;
    }
    Ok(format!("CEM growth {growth} over F5, 4 hand cases"))
}

fn acfpn(out: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_acfpn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())
}

fn cli_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_path = dir.path().join("run.cfg");
    let text = "seed = 5\ninput.shape = 1,3,64,64\noutput.dump = true\n";
    std::fs::write(&cfg_path, text).map_err(|e| e.to_string())?;
    let cfg_arg = cfg_path.to_str().ok_or("non-utf8 temp path")?;
    let cfg = RunConfig::parse(text).map_err(|e| e.to_string())?;

    let graph = acfpn_build(&cfg.network).map_err(|e| e.to_string())?;
    let params = Params::<f32>::init(&graph, cfg.seed);
    let image = load_input::<f32>(&cfg).map_err(|e| e.to_string())?;
    let acts = acfpn_forward_with_activations(&graph, &params, &image).map_err(|e| e.to_string())?;
    let pyramid = Pyramid::from_activations(&acts).map_err(|e| e.to_string())?;

    let out = dir.path().join("fwd");
    let run = acfpn(&out, &["forward", "--config", cfg_arg])?;
    ensure(run.status.success(), || format!("forward failed: {}", String::from_utf8_lossy(&run.stderr)))?;
    for (name, _, t) in pyramid.iter() {
        let back = read_acft(out.join(format!("{name}.acft"))).map_err(|e| e.to_string())?;
        let same = back.shape() == t.shape() && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("{name}.acft differs from the in-process tensor"))?;
    }

    let out = dir.path().join("attn");
    let run = acfpn(&out, &["dump-attention", "--config", cfg_arg])?;
    ensure(run.status.success(), || format!("dump-attention failed: {}", String::from_utf8_lossy(&run.stderr)))?;
    for node in ["cxam_attn", "cnam_attn"] {
        let (want, _) = normalize_map(acts.get(node).map_err(|e| e.to_string())?, 0).map_err(|e| e.to_string())?;
        let got = read_pgm(out.join(format!("{node}.pgm"))).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("{node}.pgm pixels differ"))?;
    }

    let out = dir.path().join("gc");
    let clean = acfpn(&out, &["gradcheck"])?;
    ensure(clean.status.code() == Some(0), || format!("clean gradcheck exited {:?}", clean.status.code()))?;
    for op in ["conv2d", "deform_conv2d", "cnam"] {
        let run = acfpn(&out, &["gradcheck", "--inject-fault", op])?;
        ensure(run.status.code() == Some(1), || format!("fault in {op}: exit {:?}", run.status.code()))?;
        let stdout = String::from_utf8_lossy(&run.stdout);
        ensure(stdout.contains(&format!("FAILED: {op}")), || format!("fault in {op} not named in output"))?;
    }
    Ok("5 ACFT dumps bit-identical, 2 PGM maps pixel-identical, gradcheck exits 0 clean and 1 on 3 faults".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("shape table", shape_table),
        ("gradient suite", gradient_suite),
        ("zero-offset reduction", zero_offset),
        ("attention invariants", attention_invariants),
        ("parameter delta", parameter_delta),
        ("ablation configs", ablation_configs),
        ("pyramid contract", pyramid_contract),
        ("receptive fields", receptive_fields),
        ("cli round trips", cli_round_trips),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[{}] PASS {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("[{}] FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
