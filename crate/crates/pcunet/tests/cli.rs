//! End-to-end exercise of the command-line interface on a tiny dataset.

use std::path::Path;
use std::process::Command;

fn pcunet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pcunet"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn pcunet");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(path: &Path, variant: &str) {
    let cfg = serde_json::json!({
        "variant": variant,
        "epochs": 1,
        "encoder_channels": [4, 8],
        "pointnet_channels": [8, 16, 32],
        "seed": 5,
    });
    std::fs::write(path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn cli_pipeline_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let s = |p: &Path| p.to_str().unwrap().to_owned();

    // generate a tiny dataset
    run_ok(pcunet().args([
        "generate-data",
        "--out",
        &s(&data),
        "--n-samples",
        "4",
        "--grid",
        "32x32x16",
        "--n-points",
        "32",
        "--folds",
        "2",
        "--seed",
        "31",
    ]));
    assert!(data.join("manifest.json").exists());
    assert!(data.join("sample_0000_image.mha").exists());

    // train one epoch from a config file
    let cfg = root.path().join("unet.json");
    write_config(&cfg, "unet_vol3d");
    let run = root.path().join("run");
    let out = pcunet()
        .args([
            "train", "--data", &s(&data), "--out", &s(&run), "--config", &s(&cfg),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("model.ckpt").exists());
    assert!(run.join("experiment.json").exists());
    assert!(run.join("report.json").exists());
    // history and progress logs are line-delimited JSON
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
    for line in history.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    for line in String::from_utf8_lossy(&out.stderr).lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    // evaluate the checkpoint on the held-out fold
    let eval = root.path().join("eval");
    let stdout = run_ok(pcunet().args([
        "evaluate",
        "--data",
        &s(&data),
        "--checkpoint",
        &s(&run.join("model.ckpt")),
        "--out",
        &s(&eval),
        "--fold",
        "0",
    ]));
    assert!(stdout.contains("dice"));
    assert!(eval.join("eval.csv").exists());
    assert!(eval.join("summary.json").exists());
    // the point-cloud column renders as a dash for a mask-only model
    let csv = std::fs::read_to_string(eval.join("eval.csv")).unwrap();
    assert!(csv.contains("—"));

    // cross-validation artifacts
    let cv = root.path().join("cv");
    run_ok(pcunet().args([
        "cross-validate",
        "--data",
        &s(&data),
        "--out",
        &s(&cv),
        "--config",
        &s(&cfg),
        "--quiet",
    ]));
    assert!(cv.join("unet_vol3d_cv.json").exists());
    assert!(cv.join("unet_vol3d_fold1.csv").exists());

    // comparison matrix from explicit config rows
    let cfg2 = root.path().join("pout.json");
    write_config(&cfg2, "pointoutnet_vol3d");
    let matrix = root.path().join("matrix");
    let stdout = run_ok(pcunet().args([
        "run-matrix",
        "--data",
        &s(&data),
        "--out",
        &s(&matrix),
        "--configs",
        &format!("{},{}", s(&cfg), s(&cfg2)),
        "--quiet",
    ]));
    assert!(stdout.contains("unet_vol3d"));
    assert!(stdout.contains("pointoutnet_vol3d"));
    assert!(matrix.join("matrix.json").exists());
    let table = std::fs::read_to_string(matrix.join("matrix.txt")).unwrap();
    assert!(table.contains("chamfer_mm") && table.contains("—"));

    // shape pipeline: mask -> mesh -> centered cloud
    let cloud = root.path().join("gt.xyz");
    let mesh = root.path().join("gt.obj");
    let stdout = run_ok(pcunet().args([
        "pc-from-mask",
        "--mask",
        &s(&data.join("sample_0000_mask.mha")),
        "--out",
        &s(&cloud),
        "--n-points",
        "16",
        "--mesh-out",
        &s(&mesh),
    ]));
    assert!(stdout.contains("16 points"));
    assert!(cloud.exists() && mesh.exists());

    // preprocessing a raw pair
    let pre = root.path().join("pre");
    run_ok(pcunet().args([
        "preprocess",
        "--image",
        &s(&data.join("sample_0000_image.mha")),
        "--mask",
        &s(&data.join("sample_0000_mask.mha")),
        "--out",
        &s(&pre),
        "--size",
        "16x16x8",
        "--margin-mm",
        "2",
    ]));
    assert!(pre.join("image.mha").exists());
    assert!(pre.join("mask.mha").exists());

    // inference export
    let exp = root.path().join("export");
    run_ok(pcunet().args([
        "export",
        "--checkpoint",
        &s(&run.join("model.ckpt")),
        "--image",
        &s(&data.join("sample_0001_image.mha")),
        "--out",
        &s(&exp),
    ]));
    assert!(exp.join("mask.mha").exists());
    let ppm = std::fs::read(exp.join("overlay.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
}

#[test]
fn cli_rejects_bad_input() {
    // train without --variant or --config
    let out = pcunet()
        .args(["train", "--data", "/nonexistent", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--variant"));

    // unknown variant name
    let out = pcunet()
        .args([
            "train", "--data", "/nonexistent", "--out", "/tmp/x", "--variant", "resnet",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
