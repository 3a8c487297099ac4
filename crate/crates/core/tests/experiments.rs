use pfn_core::data::{io, Dataset};
use pfn_core::experiments::*;
use pfn_core::model::{init_model, ModelConfig};
use pfn_core::spectral::{nyquist, CutoffSchedule};
use pfn_core::tensor::Planes;
use pfn_core::training::{train_split, TrainConfig, TrainOutputs};

const SIDE: usize = 32;
const EPOCHS: usize = 30;

fn data() -> (Dataset, Dataset) {
    let train = Dataset::synthetic(96, SIDE, 7).unwrap();
    let val = Dataset::synthetic(24, SIDE, 8).unwrap();
    (train, val)
}

fn model() -> ModelConfig {
    ModelConfig {
        backbone_channels: vec![8, 12, 16],
        ..ModelConfig::desk(SIDE, CutoffSchedule::reference_for(SIDE))
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr0: 1e-3,
        lr_halving_period: epochs.div_ceil(3).max(1),
        ..TrainConfig::default()
    }
}

fn rel(s: &SweepResult, col: &str, val: &str) -> f64 {
    s.by_field(col, val).and_then(|r| r.metrics).unwrap().rel
}

#[test]
fn divide_reference_schedule_at_full_size() {
    let dir = tempfile::tempdir().unwrap();
    let img = Planes::from_fn(3, 512, 512, |c, y, x| {
        (((x * 13 + y * 7 + c * 31) % 97) as f64 / 96.0 + (y as f64 / 40.0).sin()) * 0.5
    });
    let path = dir.path().join("scene.pfm");
    io::write_pfm(&path, &img).unwrap();
    let schedule = CutoffSchedule::new(vec![5.0, 10.0, 50.0, 100.0]).unwrap();
    let r = cmd_divide(&path, &schedule, dir.path()).unwrap();
    assert_eq!(r.band_pfm.len(), 5);
    assert_eq!(r.band_png.len(), 5);
    assert!(r.reconstruction_error < 1e-5, "{}", r.reconstruction_error);
    let mut sum = Planes::<f64>::zeros(3, 512, 512);
    for p in &r.band_pfm {
        let b = io::read_pfm(p).unwrap();
        sum.data_mut().iter_mut().zip(b.data()).for_each(|(s, v)| *s += v);
    }
    assert!(sum.max_abs_diff(&img) < 1e-4);

    let again = cmd_divide(&path, &schedule, dir.path()).unwrap();
    assert_ne!(again.out_dir, r.out_dir);
    assert!(r.band_pfm.iter().all(|p| p.exists()));

    let single = cmd_divide(&path, &CutoffSchedule::empty(), dir.path()).unwrap();
    assert_eq!(single.band_pfm.len(), 1);
    // PFM stores single precision.
    let img32 = img.map(|v| v as f32 as f64);
    assert_eq!(io::read_pfm(&single.band_pfm[0]).unwrap().max_abs_diff(&img32), 0.0);
}

#[test]
fn bandinfo_lpf_curve() {
    let (train, val) = data();
    let ny = nyquist(SIDE, SIDE);
    let mut grid = log_grid(1.0, ny, 4);
    grid.retain(|f| *f < ny);
    grid.push(ny);
    let s = cmd_bandinfo(&train, &val, &grid, FilterMode::Lpf, &model(), &train_cfg(EPOCHS), None).unwrap();
    assert_eq!(s.rows.len(), grid.len() + 1);
    assert!(s.rows.iter().all(|r| r.status == CellStatus::Ok));
    let base = s.by_field("mode", "none").unwrap().metrics.unwrap();
    let at_ny = s.by_field("cutoff", &ny.to_string()).unwrap().metrics.unwrap();
    assert_eq!(base, at_ny);
    let acc: Vec<f64> = s.rows[1..].iter().map(|r| r.metrics.unwrap().delta1).collect();
    for w in acc.windows(2) {
        assert!(w[1] >= w[0] - 0.01, "lpf accuracy fell: {acc:?}");
    }
}

#[test]
fn bandinfo_hpf_at_nyquist_loses_depth() {
    let train = Dataset::synthetic(192, SIDE, 7).unwrap();
    let val = Dataset::synthetic(24, SIDE, 8).unwrap();
    let ny = nyquist(SIDE, SIDE);
    let s = cmd_bandinfo(&train, &val, &[ny], FilterMode::Hpf, &model(), &train_cfg(60), None).unwrap();
    let base = rel(&s, "mode", "none");
    let hpf = rel(&s, "mode", "hpf");
    assert!(hpf >= 2.0 * base, "hpf {hpf} vs unfiltered {base}");
}

#[test]
fn ablation_more_layers_help_and_cells_dedup() {
    let (train, val) = data();
    let spec = AblationSpec {
        candidate_cutoffs: vec![5.0, 10.0, 50.0, 100.0],
        layer_counts: vec![2, 5],
        cells: Some(vec![vec![10.0], vec![5.0, 10.0, 50.0, 100.0], vec![10.0]]),
    };
    let s = cmd_ablate(&spec, &model(), &train_cfg(EPOCHS), &train, &val, None).unwrap();
    assert_eq!(s.rows.len(), 2);
    assert_eq!(s.columns, ["layers", "f5", "f10", "f50", "f100", "schedule"]);
    let two = rel(&s, "layers", "2");
    let five = rel(&s, "layers", "5");
    assert!(five <= two, "5 layers {five} vs 2 layers {two}");

    let empty = AblationSpec {
        layer_counts: vec![],
        ..spec
    };
    assert!(cmd_ablate(&empty, &model(), &train_cfg(EPOCHS), &train, &val, None).unwrap().rows.is_empty());
}

#[test]
fn noise_sweep_degrades_monotonically() {
    let (train, val) = data();
    let (params, _) = train_split(&model(), &train_cfg(EPOCHS), &train, &val, &TrainOutputs::default()).unwrap();
    let clean = cmd_eval(&params, &val, None).unwrap();
    let variances = [0.0, 1e-5, 1e-4, 1e-3, 1e-2];
    let s = cmd_noise_sweep(&params, &val, &variances, 3, None).unwrap();
    assert_eq!(s.rows[0].metrics.unwrap(), clean);
    let acc: Vec<f64> = s.rows.iter().map(|r| r.metrics.unwrap().delta1).collect();
    for w in acc.windows(2) {
        assert!(w[1] <= w[0] + 0.01, "accuracy rose with noise: {acc:?}");
    }
    assert!(cmd_noise_sweep(&params, &val, &[-1.0], 3, None).is_err());
}

#[test]
fn sweeps_resume_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("noise.csv");
    let (_, val) = data();
    let params = init_model(&model()).unwrap();
    let first = cmd_noise_sweep(&params, &val, &[0.0, 1e-3], 1, Some(csv.clone())).unwrap();
    let on_disk = SweepResult::read_csv(&csv, &NOISE_COLUMNS).unwrap();
    assert_eq!(on_disk, first);

    // Doctor a completed row; a resumed run must keep it rather than recompute.
    let mut doctored = on_disk.clone();
    doctored.rows[1].wall_ms = -7.0;
    doctored.write_csv(&csv).unwrap();
    let resumed = cmd_noise_sweep(&params, &val, &[0.0, 1e-3, 1e-2], 1, Some(csv.clone())).unwrap();
    assert_eq!(resumed.rows.len(), 3);
    assert_eq!(resumed.rows[1].wall_ms, -7.0);
    assert_eq!(SweepResult::read_csv(&csv, &NOISE_COLUMNS).unwrap(), resumed);

    let csv = dir.path().join("timing.csv");
    let models = timing_models(&model(), &[2]).unwrap();
    let first = cmd_timing(&models, &[(16, 16)], 20, 512, Some(csv.clone())).unwrap();
    let mut doctored = first.clone();
    doctored.rows[0].wall_ms = -7.0;
    doctored.write_csv(&csv).unwrap();
    let resumed = cmd_timing(&models, &[(16, 16), (24, 32)], 20, 512, Some(csv)).unwrap();
    assert_eq!(resumed.rows.len(), 2);
    assert_eq!(resumed.rows[0].wall_ms, -7.0);
    assert!(resumed.rows[1].wall_ms > 0.0);
}

#[test]
fn timing_rows_per_model_and_resolution() {
    let models = timing_models(&model(), &[2, 3]).unwrap();
    let s = cmd_timing(&models, &[(16, 16), (24, 32)], 20, 512, None).unwrap();
    assert_eq!(s.rows.len(), 4);
    assert!(s.rows.iter().all(|r| r.status == CellStatus::Ok));
    assert!(cmd_timing(&models, &[(16, 16)], 5, 512, None).is_err());
    let huge = cmd_timing(&models[..1], &[(20000, 20000)], 20, 1, None).unwrap();
    assert_eq!(huge.rows[0].status, CellStatus::Failed);
}

#[test]
fn forward_estimate_grows_with_size_and_depth() {
    let models = timing_models(&ModelConfig::default(), &[2, 6]).unwrap();
    let est = |i: usize, h, w| estimate_forward_bytes(&models[i].at_resolution(h, w).config);
    assert!(est(0, 240, 320) < est(0, 600, 800));
    assert!(est(0, 600, 800) < est(1, 600, 800));
    assert!(est(1, 600, 800) < 2048 << 20);
}
