use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faintline::checkpoint::load_checkpoint_auto;
use faintline::datagen::{read_manifest, Variant};
use faintline::pnm::{quantize, read_gray, write_pgm};
use faintline::trainer::Predictor;
use faintline::{GrayImage, Model};

fn faintline(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faintline")).current_dir(dir).args(args).output().expect("spawn faintline")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = faintline(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Tiny edge dataset and a width-4 checkpoint trained for a few steps.
fn edge_fixture(dir: &Path) -> PathBuf {
    ok(dir, &["gen-edges", "--base", "4", "--size", "32", "--snrs", "1,2", "--seed", "3", "--out", "d"]);
    ok(dir, &["train", "--data", "d", "--ckpt", "m/m.nel", "--width", "4", "--epochs", "1", "--crop", "0", "--max-steps", "2"]);
    dir.join("m/m.nel")
}

fn first_input(dir: &Path, split: &str) -> PathBuf {
    let d = dir.join("d").join(split);
    let mut names: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    names.into_iter().find(|p| p.to_string_lossy().ends_with("_in.pgm")).unwrap()
}

#[test]
fn gen_edges_writes_manifest_and_core_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen-edges", "--base", "10", "--size", "128", "--seed", "7", "--out", "d/"]);
    let m = read_manifest(tmp.path().join("d")).unwrap();
    let core: Vec<_> = m.samples.iter().filter(|s| s.variant != Variant::PureNoise).collect();
    assert_eq!(core.len(), 120);
    for s in &m.samples {
        let dir = tmp.path().join("d").join(s.split.dir());
        assert!(dir.join(format!("{}_in.pgm", s.id)).exists());
        assert!(dir.join(format!("{}_label.pgm", s.id)).exists());
    }
    assert!(tmp.path().join("d/run-config.json").exists());
}

#[test]
fn rerun_from_sidecar_reproduces_the_output() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen-edges", "--base", "3", "--size", "32", "--snrs", "1.5", "--out", "a"]);
    let config = fs::read_to_string(tmp.path().join("a/run-config.json")).unwrap();
    let first = fs::read(tmp.path().join("a/manifest.json")).unwrap();
    fs::remove_dir_all(tmp.path().join("a")).unwrap();
    let elsewhere = tmp.path().join("elsewhere");
    fs::create_dir(&elsewhere).unwrap();
    fs::write(elsewhere.join("cfg.json"), &config).unwrap();
    ok(&elsewhere, &["rerun", "cfg.json"]);
    assert_eq!(fs::read(tmp.path().join("a/manifest.json")).unwrap(), first);
    assert_eq!(fs::read_to_string(tmp.path().join("a/run-config.json")).unwrap(), config);
}

#[test]
fn sidecar_records_resolved_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    edge_fixture(tmp.path());
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("m/run-config.json")).unwrap()).unwrap();
    assert_eq!(cfg["command"], "train");
    assert_eq!(cfg["task"], "edges");
    assert_eq!(cfg["optimizer"], "adam");
    assert_eq!(cfg["lambda_edge"], 0.0);
    assert_eq!(cfg["input_shift"], 0.45);
    assert!(Path::new(cfg["data"].as_str().unwrap()).is_absolute());
}

#[test]
fn detect_rejects_indivisible_image() {
    let tmp = tempfile::tempdir().unwrap();
    edge_fixture(tmp.path());
    write_pgm(&GrayImage::filled(64, 63, 0.4), tmp.path().join("img.pgm")).unwrap();
    let out = faintline(
        tmp.path(),
        &["detect", "--ckpt", "m/m.nel", "--in", "img.pgm", "--out", "edges.pgm", "--threshold", "0.5"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("divisible by 8"), "{err}");
    assert!(!tmp.path().join("edges.pgm").exists());
}

#[test]
fn detect_writes_mask_or_quantized_map() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = edge_fixture(tmp.path());
    let input = first_input(tmp.path(), "test");
    let input_s = input.to_str().unwrap();
    ok(tmp.path(), &["detect", "--ckpt", "m/m.nel", "--in", input_s, "--out", "map.pgm"]);
    ok(tmp.path(), &["detect", "--ckpt", "m/m.nel", "--in", input_s, "--out", "mask.pgm", "--threshold", "0.5"]);
    let model: Model<f32> = load_checkpoint_auto(&ckpt).unwrap();
    let y = model.predict(&read_gray(&input).unwrap()).unwrap();
    let map = read_gray(tmp.path().join("map.pgm")).unwrap();
    for (a, b) in map.data().iter().zip(y.data()) {
        assert_eq!((a * 255.0).round() as u8, quantize(*b));
    }
    let mask = read_gray(tmp.path().join("mask.pgm")).unwrap();
    assert!(mask.is_binary());
    for (m, v) in mask.data().iter().zip(y.data()) {
        assert_eq!(*m == 1.0, *v >= 0.5);
    }
}

#[test]
fn missing_checkpoint_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = faintline(tmp.path(), &["sweep", "--ckpt", "nope.nel", "--csv", "s.csv", "--svg", "s.svg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: "));
    assert_eq!(stderr(&out).lines().count(), 1);
}

#[test]
fn usage_errors_exit_2_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["detect", "--ckpt", "a", "--in", "b", "--out", "c", "--bogus"],
        vec!["gen-edges"],
        vec!["eval", "--data", "d"],
        vec!["bench", "--ckpt", "m", "--repeat", "0"],
    ] {
        let out = faintline(tmp.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).contains("Usage"), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn bench_reports_medians() {
    let tmp = tempfile::tempdir().unwrap();
    edge_fixture(tmp.path());
    let out = ok(tmp.path(), &["bench", "--ckpt", "m/m.nel", "--sizes", "16,32", "--repeat", "3"]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "size,median_ms");
    assert_eq!(lines.len(), 3);
    for (line, size) in lines[1..].iter().zip(["16", "32"]) {
        let (s, ms) = line.split_once(',').unwrap();
        assert_eq!(s, size);
        assert!(ms.parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn sweep_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    edge_fixture(tmp.path());
    let args = |csv: &'static str, svg: &'static str| {
        vec!["sweep", "--ckpt", "m/m.nel", "--iterations", "1", "--seed", "5", "--size", "64", "--csv", csv, "--svg", svg]
    };
    ok(tmp.path(), &args("s1.csv", "s1.svg"));
    ok(tmp.path(), &args("s2.csv", "s2.svg"));
    let a = fs::read_to_string(tmp.path().join("s1.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("s2.csv")).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "snr,method,f_mean,f_std");
    assert_eq!(lines.len(), 1 + 6 * 2);
    assert!(fs::read_to_string(tmp.path().join("s1.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn eval_reports_snr_buckets_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    edge_fixture(tmp.path());
    let model = stdout(&ok(tmp.path(), &["eval", "--data", "d", "--ckpt", "m/m.nel"]));
    let canny = stdout(&ok(tmp.path(), &["eval", "--data", "d", "--canny"]));
    let header = "snr,count,f_mean,f_std,precision,recall";
    assert_eq!(model.lines().next(), Some(header));
    assert_eq!(canny.lines().next(), Some(header));
    assert_eq!(model.lines().count(), canny.lines().count());
    let again = stdout(&ok(tmp.path(), &["eval", "--data", "d", "--ckpt", "m/m.nel"]));
    assert_eq!(model, again);
}

#[test]
fn denoise_psnr_survives_the_file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-denoise", "--count", "3", "--size", "32", "--sigmas", "25", "--out", "d"]);
    ok(dir, &["train", "--data", "d", "--ckpt", "m/m.nel", "--width", "4", "--epochs", "1", "--crop", "0", "--max-steps", "2"]);
    let noisy = first_input(dir, "train");
    let clean = PathBuf::from(noisy.to_string_lossy().replace("_in.pgm", "_label.pgm"));
    let (noisy, clean) = (noisy.to_str().unwrap(), clean.to_str().unwrap());
    let inproc = stdout(&ok(dir, &["denoise", "--ckpt", "m/m.nel", "--in", noisy, "--out", "out.pgm", "--clean", clean]));
    let evaluated = stdout(&ok(dir, &["eval", "--pred", "out.pgm", "--clean", clean]));
    let field = |text: &str, i: usize| -> f64 { text.lines().nth(1).unwrap().split(',').nth(i).unwrap().parse().unwrap() };
    assert!((field(&inproc, 0) - field(&evaluated, 0)).abs() <= 1e-6);
    assert!((field(&inproc, 1) - field(&evaluated, 1)).abs() <= 1e-6);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-edges", "--base", "3", "--size", "32", "--snrs", "2", "--out", "d"]);
    let common = ["--data", "d", "--width", "4", "--crop", "0", "--batch", "2"];
    let run = |ckpt: &str, epochs: &str, resume: bool| {
        let mut args = vec!["train", "--ckpt", ckpt, "--epochs", epochs];
        args.extend(common);
        if resume {
            args.push("--resume");
        }
        ok(dir, &args);
    };
    run("full/m.nel", "2", false);
    run("split/m.nel", "1", false);
    run("split/m.nel", "2", true);
    assert_eq!(fs::read(dir.join("full/m.nel")).unwrap(), fs::read(dir.join("split/m.nel")).unwrap());
}

#[test]
fn gradcheck_subcommand_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--seeds", "1", "--width", "4", "--size", "8"]);
    let text = stdout(&out);
    assert!(text.starts_with("check,seed,checked,max_rel_error,tol,passed\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");
    assert!(text.contains("unet_width4_8x8"));
}
