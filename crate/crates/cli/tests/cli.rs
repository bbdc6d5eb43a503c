use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn micap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_micap"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = micap(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    micap(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{"model":{"dim":16,"heads":2,"ff_mult":2,"encoder_layers":1,"fusion_layers":1,"decoder_layers":1},
"lr_decoder":1e-3,"lr_encoder":1e-3,"batch_size":4,"beam_width":2}"#;

fn dataset(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&[
        "generate-data",
        "--out",
        p(&data),
        "--count",
        "8",
        "--seed",
        "3",
        "--test-count",
        "2",
    ]);
    data
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = dataset(root);
    assert!(data.join("manifest.json").exists() && data.join("blobs.bin").exists());
    let cfg = root.join("tiny.json");
    fs::write(&cfg, TINY).unwrap();

    let ckpt = root.join("m.ckpt");
    let args = [
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--variant",
        "micap",
        "--steps",
        "3",
        "--seed",
        "1",
    ];
    ok(&[&["train", "--out", p(&ckpt)], &args[..]].concat());
    let log = fs::read_to_string(root.join("m.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("step=")).count(), 3);
    let again = root.join("again.ckpt");
    ok(&[&["train", "--out", p(&again)], &args[..]].concat());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());

    let report = root.join("eval/report.json");
    let printed = ok(&[
        "evaluate",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--report",
        p(&report),
    ]);
    assert!(printed.contains("AVG"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["samples"], 2);
    assert_eq!(
        fs::read_to_string(root.join("eval/report.results.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let caption = ok(&[
        "caption",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--id",
        "video00000",
        "--beam",
        "2",
    ]);
    assert!(!caption.trim().is_empty());

    let out = root.join("explain");
    ok(&[
        "explain",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--id",
        "video00001",
        "--token",
        "0",
        "--out",
        p(&out),
    ]);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("explanation.json")).unwrap()).unwrap();
    assert_eq!(doc["attention"].as_array().unwrap().len(), 3);
    assert!(out.join("audio_video_frame0.ppm").exists());
    assert!(out.join("video_audio.svg").exists());
    assert!(out.join("saliency_video_frame3.svg").exists());

    let emb = root.join("emb.jsonl");
    let summary = ok(&[
        "export-embeddings",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&emb),
    ]);
    assert!(summary.contains("\"gap\""));
    assert_eq!(fs::read_to_string(&emb).unwrap().lines().count(), 8);
}

#[test]
fn ablation_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("abl");
    let table = ok(&[
        "ablation",
        "--data",
        p(&data),
        "--steps",
        "1",
        "--seed",
        "2",
        "--out",
        p(&out),
        "--config",
        p(&cfg),
        "--lr-schedule",
        "linear",
    ]);
    for name in [
        "audio_raw",
        "vision_based",
        "audio_based",
        "fusion",
        "micap",
    ] {
        assert!(table.contains(name), "{table}");
    }
    assert!(out.join("micap.ckpt").exists() && out.join("table.json").exists());
}

#[test]
fn bad_configuration_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let base = [
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--steps",
        "1",
    ];
    assert_eq!(code(&[&base[..], &["--variant", "telepathy"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--tau", "0"]].concat()), 2);
    assert_eq!(code(&[&base[..], &["--lr-schedule", "cosine"]].concat()), 2);
    assert_eq!(
        code(&[
            "generate-data",
            "--out",
            p(&dir.path().join("x")),
            "--count",
            "2",
            "--seed",
            "1",
            "--size",
            "18x18"
        ]),
        2
    );
    assert!(!ckpt.exists());
}

#[test]
fn corrupt_data_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let blobs = data.join("blobs.bin");
    let bytes = fs::read(&blobs).unwrap();
    fs::write(&blobs, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(
        code(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&ckpt),
            "--steps",
            "1"
        ]),
        3
    );

    fs::write(&ckpt, b"not a checkpoint").unwrap();
    fs::write(&blobs, &bytes).unwrap();
    let report = dir.path().join("r.json");
    assert_eq!(
        code(&[
            "evaluate",
            "--ckpt",
            p(&ckpt),
            "--data",
            p(&data),
            "--report",
            p(&report)
        ]),
        3
    );
}

#[test]
fn divergent_training_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let status = code(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--config",
        p(&cfg),
        "--steps",
        "30",
        "--lr-decoder",
        "1e300",
        "--lr-encoder",
        "1e300",
    ]);
    assert_eq!(status, 4);
}
