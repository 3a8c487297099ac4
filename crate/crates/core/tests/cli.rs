use std::path::Path;
use std::process::{Command, Output};

use pfn_core::data::io;
use pfn_core::experiments::{SweepResult, NOISE_COLUMNS};
use pfn_core::loss_metrics::MetricsReport;
use pfn_core::tensor::Planes;

const TINY: &str = r#"
[model]
input_size = [16, 16]
schedule = [1.0, 3.0]
backbone_channels = [4, 8]
sarrm_channels = 4
band_feature_channels = 4

[train]
epochs = 3
lr0 = 1e-3

[data]
synthetic_train = 12
synthetic_test = 4
synthetic_side = 16

[timing]
resolutions = [[16, 16], [32, 32]]
layer_counts = [2, 3]
"#;

fn pfn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfn"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn with_data(base: &str, lines: &str) -> String {
    base.replace("[data]\n", &format!("[data]\n{lines}\n"))
}

fn parse_eval(stdout: &str) -> f64 {
    let mut lines = stdout.lines();
    assert_eq!(lines.next().unwrap(), MetricsReport::CSV_HEADER);
    lines.next().unwrap().split(',').next().unwrap().parse().unwrap()
}

#[test]
fn divide_writes_versioned_bands() {
    let dir = setup();
    let img = Planes::from_fn(3, 32, 32, |c, y, x| ((c * 5 + y * 3 + x * 7) % 11) as f64 / 10.0);
    io::write_png(dir.path().join("img.png"), &img, 0.0, 1.0).unwrap();
    let out = ok(&pfn(dir.path(), &["--out", "o", "divide", "img.png", "--cutoffs", "2,4,8"]));
    assert!(out.contains("reconstruction_error"));
    for i in 0..4 {
        assert!(dir.path().join(format!("o/img_bands/band{i}.pfm")).exists());
        assert!(dir.path().join(format!("o/img_bands/band{i}.png")).exists());
    }
    ok(&pfn(dir.path(), &["--out", "o", "divide", "img.png", "--cutoffs", "2,4,8"]));
    assert!(dir.path().join("o/img_bands.v2/band3.pfm").exists());
    let err = pfn(dir.path(), &["--out", "o", "divide", "img.png", "--cutoffs", "20"]);
    assert!(!err.status.success());
}

#[test]
fn train_then_eval_beats_untrained() {
    let dir = setup();
    std::fs::write(dir.path().join("tiny.toml"), TINY.replace("epochs = 3", "epochs = 30")).unwrap();
    let out = ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "train"]));
    assert!(out.contains("best epoch"));
    let ckpt = dir.path().join("o/train/best.ckpt");
    assert!(ckpt.exists());
    let log = std::fs::read_to_string(dir.path().join("o/train/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 31);
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "init"]));

    // Evaluate on the training scenes.
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "data", "gen-synth"]));
    std::fs::write(dir.path().join("train_eval.toml"), with_data(TINY, "root = \"data\"\ntest_split = \"train\"")).unwrap();
    let trained = parse_eval(&ok(&pfn(
        dir.path(),
        &["--config", "train_eval.toml", "eval", "--checkpoint", "o/train/best.ckpt", "--capture", "preds"],
    )));
    let untrained = parse_eval(&ok(&pfn(
        dir.path(),
        &["--config", "train_eval.toml", "eval", "--checkpoint", "o/init.ckpt"],
    )));
    assert!(trained < untrained, "{trained} vs {untrained}");
    let captured = std::fs::read_dir(dir.path().join("preds")).unwrap().count();
    assert_eq!(captured, 12);
    // A second training run does not overwrite the first.
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "train"]));
    assert!(dir.path().join("o/train.v2/best.ckpt").exists());
}

#[test]
fn missing_dataset_fails_with_message() {
    let dir = setup();
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "init"]));
    std::fs::write(
        dir.path().join("missing.toml"),
        with_data(TINY, "root = \"does/not/exist\""),
    )
    .unwrap();
    let out = pfn(dir.path(), &["--config", "missing.toml", "eval", "--checkpoint", "o/init.ckpt"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does/not/exist") && err.contains("test_split"), "{err}");
}

#[test]
fn config_errors_name_the_field() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "[train]\nbatchsize = 2\n").unwrap();
    let out = pfn(dir.path(), &["--config", "bad.toml", "train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batchsize"));
    std::fs::write(dir.path().join("bad2.toml"), "[model]\nsarrm_channels = 0\n").unwrap();
    let out = pfn(dir.path(), &["--config", "bad2.toml", "train"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.sarrm_channels"));
}

#[test]
fn empty_ablation_grid_succeeds_with_warning() {
    let dir = setup();
    std::fs::write(dir.path().join("abl.toml"), format!("{TINY}\n[ablation]\nlayer_counts = []\n")).unwrap();
    let out = pfn(dir.path(), &["--config", "abl.toml", "--out", "o", "ablate"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    let csv = std::fs::read_to_string(dir.path().join("o/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn noise_sweep_and_timing_write_csv() {
    let dir = setup();
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "init"]));
    ok(&pfn(
        dir.path(),
        &["--config", "tiny.toml", "--out", "o", "noise-sweep", "--checkpoint", "o/init.ckpt", "--variances", "0,0.001"],
    ));
    let s = SweepResult::read_csv(dir.path().join("o/noise_sweep.csv"), &NOISE_COLUMNS).unwrap();
    assert_eq!(s.rows.len(), 2);
    let out = ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "timing"]));
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().next().unwrap().starts_with("layers,height,width,runs,mean_ms,var_ms"));
}

#[test]
fn gen_synth_round_trips_through_loader() {
    let dir = setup();
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "data", "gen-synth"]));
    std::fs::write(dir.path().join("disk.toml"), with_data(TINY, "root = \"data\"")).unwrap();
    ok(&pfn(dir.path(), &["--config", "tiny.toml", "--out", "o", "init"]));
    let a = ok(&pfn(dir.path(), &["--config", "disk.toml", "eval", "--checkpoint", "o/init.ckpt"]));
    let b = ok(&pfn(dir.path(), &["--config", "tiny.toml", "eval", "--checkpoint", "o/init.ckpt"]));
    assert_eq!(a, b);
}
