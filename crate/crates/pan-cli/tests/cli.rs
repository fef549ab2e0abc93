//! End-to-end checks of the `pan` binary: help/config-key parity, exact
//! parameter counts, exit codes, and idempotent outputs.

use std::path::Path;
use std::process::{Command, Output};

use pan_cli::CONFIG_KEYS;

fn pan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pan"))
}

fn run(args: &[&str]) -> Output {
    pan().args(args).output().expect("spawn pan")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub const MICRO_CFG: &str = "\
data.classes=3
data.samples_per_class=6
data.frames=8
data.joints=5
data.persons=1
data.grid_h=4
data.grid_w=4
data.channels=8
data.patch=8
data.img_h=32
data.img_w=32
data.noise=0.3
model.classes=3
model.persons=1
model.channels=8
model.cr=8
model.heads=2
model.rgb_channels=8,8
model.skel_channels=4,8
model.skel_post_channels=8,8
model.t_rgb=8
model.t_skel=16
model.topology=line:5
train.epochs=2
train.milestones=auto
train.batch=8
";

fn write_micro_cfg(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("micro.cfg");
    std::fs::write(&path, MICRO_CFG).unwrap();
    path
}

#[test]
fn help_enumerates_every_config_key() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for key in CONFIG_KEYS {
        assert!(
            text.contains(key.name),
            "--help is missing config key {}",
            key.name
        );
    }
    // and the help does not advertise keys the parser rejects
    for line in text.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("data.").or_else(|| t.strip_prefix("model."))
        {
            let name = t.split_whitespace().next().unwrap();
            assert!(
                CONFIG_KEYS.iter().any(|k| k.name == name),
                "help advertises unknown key {name} ({rest})"
            );
        }
    }
}

#[test]
fn params_prints_the_exact_no_pan_count() {
    let out = run(&[
        "params",
        "--set",
        "model.no_pan=true",
        "--set",
        "model.channels=384",
        "--set",
        "model.classes=120",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.lines().any(|l| l == "total 46200"),
        "expected `total 46200` in:\n{text}"
    );
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let out = run(&["params", "--set", "bogus.key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_micro_cfg(dir.path());
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        dir.path().join("nope").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corrupt_container_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pant");
    std::fs::write(&bad, b"XXXX not a container").unwrap();
    let out = run(&[
        "sample",
        "--grid",
        bad.to_str().unwrap(),
        "--strategy",
        "even",
        "--joints",
        "4",
        "--out",
        dir.path().join("o.pant").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn guided_sampling_without_skeleton_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_micro_cfg(dir.path());
    let data = dir.path().join("data");
    let gen = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(gen.status.success());
    let out = run(&[
        "sample",
        "--grid",
        data.join("samples/s00000.grid.pant").to_str().unwrap(),
        "--strategy",
        "guided",
        "--patch",
        "8",
        "--out",
        dir.path().join("o.pant").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forced_gradcheck_failure_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_micro_cfg(dir.path());
    let out = run(&[
        "gradcheck",
        "--config",
        cfg.to_str().unwrap(),
        "--tolerance",
        "0",
        "--max-elements",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn generate_is_idempotent_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_micro_cfg(dir.path());
    for name in ["a", "b"] {
        let out = run(&[
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for rel in [
        "manifest.tsv",
        "config.resolved",
        "config.hash",
        "samples/s00000.grid.pant",
        "samples/s00011.skel3d.pant",
    ] {
        let a = std::fs::read(dir.path().join("a").join(rel)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between identical runs");
    }
}

#[test]
fn train_eval_attnmaps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_micro_cfg(dir.path());
    let data = dir.path().join("data");
    assert!(run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap()
    ])
    .status
    .success());
    let out_dir = dir.path().join("run");
    let train = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(out_dir.join("metrics.csv").exists());
    assert!(out_dir.join("run.log").exists());
    // metrics carry no wall-clock columns; timings live in the log
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,loss,top1,mca\n"));

    let ckpt = out_dir.join("checkpoint");
    let eval = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(stdout(&eval).contains("split=val"));

    let maps = dir.path().join("maps.pant");
    let attn = run(&[
        "attnmaps",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--sample",
        "s00000",
        "--out",
        maps.to_str().unwrap(),
    ]);
    assert!(attn.status.success(), "{}", String::from_utf8_lossy(&attn.stderr));
    // rows of the dumped maps sum to one
    match pan_cli::container::read_tensor(&maps).unwrap() {
        pan_cli::container::AnyTensor::F32(t) => {
            let n = *t.dims().last().unwrap();
            for row in t.data().chunks(n) {
                let s: f32 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-4, "attention row sums to {s}");
            }
        }
        _ => panic!("unexpected dtype"),
    }

    // evaluating against a mismatched dataset is a config error
    let other = dir.path().join("data2");
    assert!(run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "data.joints=4",
        "--set",
        "model.topology=line:4",
        "--out",
        other.to_str().unwrap()
    ])
    .status
    .success());
    let bad_eval = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        other.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert_eq!(bad_eval.status.code(), Some(2));
}
