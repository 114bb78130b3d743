use std::fs;
use std::path::Path;
use std::process::Command;

use cafm::commands::{self, AnalysisSource, Input, Session};
use cafm::config::RunConfig;
use cafm::delivery::{open_reader, storage_report};
use cafm::frames::{image_files, load_dir};
use cafm::workdir::load_bundle;
use cafm_core::bundle::reconstruct_chunk;
use cafm_core::train::TrainMode;

const CONFIG: &str = r#"
seed = 3

[media]
chunks = 2
test_stride = 2

[train]
iterations = 4
batch = 2
patch_lr = 8
lr = 0.001
log_interval = 2
kernel = 3
"#;

fn session(dir: &Path) -> Session {
    Session::new(RunConfig::parse(CONFIG).unwrap(), dir)
}

fn synthetic() -> Input {
    Input::Synthetic { frames_per_clip: 3, size: 32 }
}

fn cafm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cafm")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn prepared() -> (tempfile::TempDir, Session) {
    let dir = tempfile::tempdir().unwrap();
    let s = session(dir.path());
    commands::prepare(&s, &synthetic()).unwrap();
    (dir, s)
}

#[test]
fn prepare_writes_the_cache_layout() {
    let (dir, s) = prepared();
    let root = dir.path();
    assert_eq!(image_files(&root.join("hr")).unwrap().len(), 6);
    assert_eq!(image_files(&root.join("lrx2")).unwrap().len(), 6);
    let chunks: serde_json::Value = serde_json::from_slice(&fs::read(root.join("chunks.json")).unwrap()).unwrap();
    assert_eq!(chunks["n"], 2);
    assert_eq!(chunks["scale"], 2);
    assert_eq!(chunks["test_stride"], 2);
    assert_eq!(chunks["ranges"], serde_json::json!([[0, 3], [3, 6]]));
    let arch: serde_json::Value = serde_json::from_slice(&fs::read(root.join("arch.json")).unwrap()).unwrap();
    assert!(arch["layers"].as_array().unwrap().len() > 3);
    let lr = load_dir(&root.join("lrx2"), None).unwrap();
    assert_eq!((lr[0].height(), lr[0].width()), (16, 16));
    // a second prepare over the same workdir gives the same files
    let before = fs::read(root.join("lrx2/000004.png")).unwrap();
    commands::prepare(&s, &synthetic()).unwrap();
    assert_eq!(fs::read(root.join("lrx2/000004.png")).unwrap(), before);
}

#[test]
fn full_pipeline_through_the_library() {
    let (dir, s) = prepared();
    for mode in [TrainMode::M0, TrainMode::Separate, TrainMode::Ft, TrainMode::Joint] {
        let t = commands::train(&s, mode).unwrap();
        assert!(t.test_psnr.is_finite());
        let expected = if mode == TrainMode::Separate { 2 } else { 1 };
        assert_eq!(t.checkpoints.len(), expected);
    }
    assert!(dir.path().join("runs/joint/ckpt_8.bundle").is_file());
    assert!(dir.path().join("runs/joint/ckpt_8.optim").is_file());
    assert!(dir.path().join("runs/separate/chunk_1/ckpt_4.bundle").is_file());
    let log = fs::read_to_string(dir.path().join("runs/joint/train_log.csv")).unwrap();
    assert!(log.starts_with("iter,loss,psnr_mean\n"));

    let packed = commands::pack(&s, TrainMode::Joint).unwrap();
    assert_eq!(packed, vec![dir.path().join("delivery/joint.bundle")]);
    assert_eq!(fs::read(&packed[0]).unwrap(), fs::read(dir.path().join("runs/joint/ckpt_8.bundle")).unwrap());
    assert_eq!(commands::pack(&s, TrainMode::Separate).unwrap().len(), 2);

    let out = commands::reconstruct(&s, TrainMode::Joint, None, None).unwrap();
    let sr = load_dir(&out, None).unwrap();
    assert_eq!(sr.len(), 6);
    assert_eq!((sr[0].height(), sr[0].width()), (32, 32));
    let bundle = load_bundle(&packed[0]).unwrap();
    let lr = load_dir(&dir.path().join("lrx2"), None).unwrap();
    let direct = reconstruct_chunk(&bundle, 1, &lr[3..6]).unwrap();
    assert_eq!(sr[4].to_rgb8(), direct[1].to_rgb8());

    let rows = commands::report(&s).unwrap();
    // bicubic + four trained modes, two chunks each
    assert_eq!(rows.len(), 5 * 2);
    let csv = fs::read(dir.path().join("report.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 11);
    assert!(dir.path().join("plots/psnr_vs_storage.png").is_file());
    commands::report(&s).unwrap();
    assert_eq!(fs::read(dir.path().join("report.csv")).unwrap(), csv);

    let joint = rows.iter().find(|r| r.mode == "joint").unwrap();
    let lr_files = image_files(&dir.path().join("lrx2")).unwrap();
    let storage = storage_report(&packed[0], &lr_files).unwrap();
    assert_eq!(joint.total_bytes, storage.total_bytes);
    assert_eq!(
        storage.total_bytes,
        storage.lr_video_bytes + storage.shared_bytes + storage.per_chunk_cafm_bytes.iter().sum::<u64>()
    );
    assert!(joint.margin_vs_separate_db.is_some());

    let summary = commands::analyze(&s, AnalysisSource::Separate, None).unwrap();
    assert!(summary.matrices.iter().all(|m| m.pair == (0, 1)));
    let distances = fs::read_to_string(dir.path().join("distances.csv")).unwrap();
    assert_eq!(distances.lines().count(), summary.matrices.len() + 1);
    assert_eq!(image_files(&dir.path().join("heatmaps")).unwrap().len(), summary.matrices.len());
    commands::analyze(&s, AnalysisSource::Joint, None).unwrap();
}

#[test]
fn reader_over_a_file_matches_the_in_memory_bundle() {
    let (dir, s) = prepared();
    commands::train(&s, TrainMode::Joint).unwrap();
    let path = commands::pack(&s, TrainMode::Joint).unwrap().remove(0);
    let bundle = load_bundle(&path).unwrap();
    let lr = load_dir(&dir.path().join("lrx2"), None).unwrap();
    let mut reader = open_reader(&path).unwrap();
    reader.clear_reads();
    let from_file = reader.reconstruct_chunk(0, &lr[..3]).unwrap();
    assert_eq!(from_file, reconstruct_chunk(&bundle, 0, &lr[..3]).unwrap());
    let (start, end) = reader.section_range(2).unwrap();
    assert!(reader.reads().iter().all(|&(o, len)| o + len <= start || o >= end));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let run = || {
        let (dir, s) = prepared();
        commands::train(&s, TrainMode::Separate).unwrap();
        commands::train(&s, TrainMode::Joint).unwrap();
        let bundle = fs::read(commands::pack(&s, TrainMode::Joint).unwrap().remove(0)).unwrap();
        commands::report(&s).unwrap();
        let report = fs::read(dir.path().join("report.csv")).unwrap();
        (bundle, report)
    };
    assert_eq!(run(), run());
}

#[test]
fn binary_runs_the_commands() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path().to_str().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let ok = |args: &[&str]| {
        let out = cafm(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["prepare", "--synthetic", "--frames-per-clip", "3", "--size", "32", "--config", cfg, "--workdir", wd]);
    let out = ok(&["train", "--mode", "joint", "--workdir", wd, "--iterations", "2"]);
    assert!(out.contains("joint: 4 steps"), "{out}");
    ok(&["pack", "--mode", "joint", "--workdir", wd]);
    let bundle = dir.path().join("delivery/joint.bundle");
    let inspect = ok(&["unpack", bundle.to_str().unwrap(), "--inspect"]);
    assert!(inspect.contains("modulation sets 2 kernel 3"), "{inspect}");
    assert!(inspect.contains("section offset bytes name dims"));
    assert!(inspect.contains("head.a [8,3,3]"), "{inspect}");
    ok(&["reconstruct", "--mode", "joint", "--workdir", wd, "--chunk", "1"]);
    assert_eq!(image_files(&dir.path().join("sr/joint")).unwrap().len(), 3);
    let out = ok(&["report", "--workdir", wd]);
    assert!(out.starts_with("4 rows"), "{out}");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path().to_str().unwrap();
    assert_eq!(cafm(&["report", "--workdir", wd]).status.code(), Some(2));
    assert_eq!(cafm(&["train", "--mode", "fastest", "--workdir", wd]).status.code(), Some(2));
    assert_eq!(cafm(&["train"]).status.code(), Some(2));
    assert_eq!(cafm(&["frobnicate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 3\n").unwrap();
    assert_eq!(cafm(&["report", "--workdir", wd, "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let prepared = cafm(&["prepare", "--synthetic", "--frames-per-clip", "2", "--size", "16", "--workdir", wd]);
    assert!(prepared.status.success());
    assert_eq!(cafm(&["train", "--mode", "ft", "--workdir", wd]).status.code(), Some(2), "ft needs an m0 run");
    assert_eq!(cafm(&["train", "--workdir", wd, "--scale", "3"]).status.code(), Some(2));

    let junk = dir.path().join("junk.bundle");
    fs::write(&junk, b"CAFM\x01\x00\x00\x00\xff").unwrap();
    assert_eq!(cafm(&["unpack", junk.to_str().unwrap()]).status.code(), Some(3));

    let missing = Command::new(env!("CARGO_BIN_EXE_cafm"))
        .args(["codec-compare", "--workdir", wd, "--budget", "10000"])
        .env("CAFM_FFMPEG", dir.path().join("no-such-ffmpeg"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(5), "{}", String::from_utf8_lossy(&missing.stderr));
}

#[test]
fn diverging_training_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let wd = dir.path().to_str().unwrap();
    let cfg = dir.path().join("hot.toml");
    fs::write(&cfg, CONFIG.replace("lr = 0.001", "lr = 1e30")).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(cafm(&["prepare", "--synthetic", "--frames-per-clip", "2", "--size", "32", "--config", cfg, "--workdir", wd])
        .status
        .success());
    assert_eq!(cafm(&["train", "--mode", "m0", "--workdir", wd, "--iterations", "20"]).status.code(), Some(4));
}
