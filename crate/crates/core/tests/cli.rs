use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ogan::data::{write_image_file, ImageSet};

fn ogan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ogan")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{"n_z": 8, "gen_hidden": [16, 16], "enc_hidden": [16, 16], "batch_size": 32,
                "iterations": 40, "log_every": 5, "checkpoint_every": 20{extra}}}"#
        ),
    )
    .unwrap();
    path
}

fn train(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let cfg = write_config(dir, extra);
    let out = dir.join(name);
    let o = ogan(&["train", "--config", s(&cfg), "--seed", "42", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn training_twice_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", "");
    let b = train(dir.path(), "b", "");
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 1 + 40 / 5);
    for name in ["ckpt-00000020.ogan", "ckpt-00000040.ogan", "final.ogan", "config.json"] {
        assert!(a.join(name).exists(), "{name}");
    }
    assert_eq!(fs::read(a.join("final.ogan")).unwrap().len(), fs::read(b.join("final.ogan")).unwrap().len());
}

#[test]
fn cli_resume_matches_the_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = train(dir.path(), "straight", "");
    let split = train(dir.path(), "split", "");
    let ckpt = split.join("ckpt-00000020.ogan");
    let o = ogan(&["train", "--config", "unused.json", "--seed", "42", "--out", s(&split), "--resume", s(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(straight.join("metrics.csv")).unwrap(),
        fs::read(split.join("metrics.csv")).unwrap()
    );
}

#[test]
fn eval_leaves_the_checkpoint_alone_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "run", "");
    let ckpt = run.join("final.ogan");
    let before = fs::read(&ckpt).unwrap();
    let args = ["eval", "--ckpt", s(&ckpt), "--out", s(&run), "--samples", "2000"];
    let first = ogan(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let metrics_once = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let report_once = fs::read_to_string(run.join("eval.txt")).unwrap();
    let second = ogan(&args);
    assert!(second.status.success());
    assert_eq!(fs::read(&ckpt).unwrap(), before);
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap(), metrics_once);
    assert_eq!(fs::read_to_string(run.join("eval.txt")).unwrap(), report_once);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(metrics_once.lines().filter(|l| l.starts_with("#eval,")).count(), 1);
    for key in ["recon_rho=", "latent_avg=", "latent_std=", "modes_covered=", "coverage_fractions="] {
        assert!(report_once.contains(key), "{key}");
    }
}

#[test]
fn plot_draws_one_polyline_per_metric() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "run", "");
    let svg = dir.path().join("curves.svg");
    let o = ogan(&["plot", "--metrics", s(&run.join("metrics.csv")), "--out", s(&svg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 6);
}

#[test]
fn sample_scatter_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "run", "");
    let ckpt = run.join("final.ogan");
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    for out in [&a, &b] {
        let o = ogan(&["sample", "--ckpt", s(&ckpt), "-n", "300", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.matches("<circle").count(), 300);

    let csv = dir.path().join("s.csv");
    assert!(ogan(&["sample", "--ckpt", s(&ckpt), "-n", "10", "--out", s(&csv)]).status.success());
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 10);
    assert!(rows.lines().all(|l| l.split(',').count() == 2));
}

#[test]
fn reconstruct_and_interpolate_write_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "run", "");
    let ckpt = run.join("final.ogan");
    let data = dir.path().join("x.csv");
    fs::write(&data, "x,y\n0.7,0.0\n0.0,-0.7\n-0.5,0.5\n").unwrap();
    let out = dir.path().join("r.csv");
    let o = ogan(&["reconstruct", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);

    let path = dir.path().join("i.csv");
    let o = ogan(&[
        "interpolate", "--ckpt", s(&ckpt), "--a", "0", "--b", "2", "--steps", "7", "--data", s(&data), "--out",
        s(&path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 7);
    let recon: Vec<String> = fs::read_to_string(&out).unwrap().lines().map(String::from).collect();
    assert_eq!(lines[0], recon[0]);
    assert_eq!(lines[6], recon[2]);
}

#[test]
fn sampling_image_models_to_svg_suggests_projection() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("tiny.oimg");
    let set = ImageSet {
        count: 4,
        height: 2,
        width: 2,
        channels: 1,
        pixels: vec![0, 255, 255, 0, 255, 0, 0, 255, 0, 0, 255, 255, 255, 255, 0, 0],
    };
    write_image_file(&set, &images).unwrap();
    let extra = format!(r#", "dataset": "binary-image-file", "data_path": "{}""#, s(&images));
    let run = train(dir.path(), "run", &extra);
    let ckpt = run.join("final.ogan");
    let svg = dir.path().join("s.svg");
    let o = ogan(&["sample", "--ckpt", s(&ckpt), "-n", "20", "--out", s(&svg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--project"));
    let o = ogan(&["sample", "--ckpt", s(&ckpt), "-n", "20", "--out", s(&svg), "--project"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<circle").count(), 20);
}

#[test]
fn gradcheck_passes() {
    let o = ogan(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn usage_errors_exit_two_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    for args in [
        vec!["train", "--bogus"],
        vec!["frobnicate"],
        vec!["train", "--config", "/nonexistent/cfg.json", "--seed", "1", "--out", s(&out)],
        vec!["train", "--config", "x.json", "--seed", "1", "--out", s(&out), "--variant", "wgan"],
    ] {
        let o = ogan(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        let first = err.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap_or_else(|e| panic!("{first}: {e}"));
        assert!(v.get("error").is_some() && v.get("message").is_some());
        assert!(err.contains("Usage") || err.contains("usage"), "{err}");
    }

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_z": 8, "learning_rat": 0.1}"#).unwrap();
    let o = ogan(&["train", "--config", s(&bad), "--seed", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ogan");
    let o = ogan(&["eval", "--ckpt", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let garbage = dir.path().join("garbage.ogan");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = ogan(&["eval", "--ckpt", s(&garbage), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}
