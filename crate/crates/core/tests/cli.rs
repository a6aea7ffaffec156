use std::fs;
use std::process::{Command, Output};

use acfpn::io::read_acft;

fn acfpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acfpn")).args(args).output().expect("binary runs")
}

fn small_config(dir: &std::path::Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("input.shape = 1,3,64,64\n{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "cem.ratez = 3\n");
    let out = acfpn(&["forward", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("cem.ratez"), "{err}");
}

#[test]
fn gradcheck_refuses_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let out = acfpn(&["gradcheck", "--precision", "f32", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_fault_target_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = acfpn(&["gradcheck", "--inject-fault", "softmax", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "seed = 1\noutput.dump = true\n");
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = acfpn(&["forward", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read_acft(out.join("p3.acft")).unwrap()
    };
    let a = run("4", "a");
    assert_eq!(a, run("4", "b"));
    assert_ne!(a, run("5", "c"));
}

#[test]
fn double_precision_dumps_are_f32() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "output.dump = true\n");
    let o = acfpn(&["forward", "--config", &cfg, "--precision", "f64", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let p6 = read_acft(dir.path().join("p6.acft")).unwrap();
    assert_eq!(p6.shape().c(), 256);
    assert!(String::from_utf8_lossy(&o.stdout).contains("precision=f64"));
}

#[test]
fn report_prints_key_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = acfpn(&["report", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("rf.cem_growth=4032"));
    assert!(text.contains("cem.channel_plan=2048,2304,2560,2816,3072"));
    assert_eq!(fs::read_to_string(dir.path().join("report.txt")).unwrap(), text);
}

#[test]
fn dump_attention_needs_a_block() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "am.cxam = false\nam.cnam = false\n");
    let o = acfpn(&["dump-attention", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = small_config(dir.path(), "am.cnam = false\n");
    let o = acfpn(&["dump-attention", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(dir.path().join("cxam_attn.pgm").exists());
    assert!(!dir.path().join("cnam_attn.pgm").exists());
}
