use std::path::Path;
use std::process::{Command, Output};

fn respan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_respan"))
        .args(args)
        .env_remove("RESPAN_THREADS")
        .output()
        .expect("spawn respan")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(respan(&[]).status.code(), Some(2));
    let out = respan(&["schedule", "--nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("Usage"));
    assert_eq!(
        respan(&["train", "--loss", "l3", "--data-dir", ".", "--ckpt", "x"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn schedule_to_stdout() {
    let out = respan(&["schedule", "--T", "15", "--p", "0.008", "--csv", "-"]);
    assert!(out.status.success());
    let s = text(&out.stdout);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "t,alpha,alpha_bar,marginal_coeff,marginal_std");
    assert_eq!(lines.len(), 17);
    let err = text(&out.stderr);
    assert!(err.contains("config:") && err.contains("\"kappa\":1.0"));
}

#[test]
fn runtime_failure_exits_1_with_module() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.rpdc");
    let out = respan(&[
        "sample",
        "--ckpt",
        p(&missing),
        "--lrms",
        p(&missing),
        "--pan",
        p(&missing),
        "--out",
        "x",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("error: io:"));
    let out = respan(&["schedule", "--p=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("schedule"));
}

#[test]
fn data_train_sample_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    assert!(respan(&[
        "gen-data",
        "--out",
        p(&d("data")),
        "--count",
        "5",
        "--size",
        "16",
        "--seed",
        "3"
    ])
    .status
    .success());
    let train = respan(&[
        "train",
        "--data-dir",
        p(&d("data")),
        "--epochs",
        "2",
        "--hidden",
        "4",
        "--blocks",
        "1",
        "--ckpt",
        p(&d("m.rpdc")),
        "--log",
        p(&d("log.csv")),
        "--loss",
        "l1",
        "--no-sci",
        "--input",
        "et",
    ]);
    assert!(train.status.success(), "{}", text(&train.stderr));
    let log = std::fs::read_to_string(d("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let sample = respan(&[
        "sample",
        "--ckpt",
        p(&d("m.rpdc")),
        "--lrms",
        p(&d("data")),
        "--out",
        p(&d("pred")),
    ]);
    assert!(sample.status.success(), "{}", text(&sample.stderr));
    let eval = respan(&[
        "eval",
        "--pred",
        p(&d("pred")),
        "--gt",
        p(&d("data")),
        "--csv",
        p(&d("m.csv")),
    ]);
    assert!(eval.status.success(), "{}", text(&eval.stderr));
    let csv = std::fs::read_to_string(d("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,sam_deg,ergas,scc,psnr_db");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("mean±std,"));

    // Single-file mode, and the condition dump.
    let one = respan(&[
        "sample",
        "--ckpt",
        p(&d("m.rpdc")),
        "--lrms",
        p(&d("data/000_lrms.mbif")),
        "--pan",
        p(&d("data/000_pan.mbif")),
        "--out",
        p(&d("one.mbif")),
        "--seed",
        "4",
    ]);
    assert!(one.status.success());
    let dump = respan(&[
        "eval",
        "--dump-cond",
        p(&d("cond")),
        "--lrms",
        p(&d("data/000_lrms.mbif")),
        "--pan",
        p(&d("data/000_pan.mbif")),
    ]);
    assert!(dump.status.success(), "{}", text(&dump.stderr));
    assert_eq!(std::fs::read_dir(d("cond")).unwrap().count(), 11);
}

#[test]
fn oracle_trajectories_are_straight() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("runs/traj");
    let out = respan(&[
        "trajectory",
        "--pairing",
        "swirl",
        "--oracle",
        "--zero-noise",
        "--n",
        "20",
        "--out-prefix",
        p(&prefix),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("mean_ratio,1.000000"));
    let csv = std::fs::read_to_string(dir.path().join("runs/traj.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let svg = std::fs::read_to_string(dir.path().join("runs/traj.svg")).unwrap();
    assert!(svg.contains("<svg") && !svg.contains("href"));
}
