use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{AblationSpec, ExperimentConfig, FilterMode};
use super::sweep::{cell_hash, ResumableSweep, SweepResult};
use crate::data::{add_gaussian_noise, io, Dataset, NoiseSpec};
use crate::error::{PfnError, Result};
use crate::loss_metrics::MetricsReport;
use crate::model::{init_model, pfn_forward, save_checkpoint, ModelConfig, ModelParams};
use crate::spectral::{band_filter, divide_bands, nyquist, reconstruct, CutoffSchedule};
use crate::tensor::{Planes, RgbImage};
use crate::training::{evaluate_model, train_split, TrainConfig, TrainLog, TrainOutputs};

/// First of `base`, `base.v2`, `base.v3`, ... that does not exist yet.
pub fn versioned_path(base: &Path) -> PathBuf {
    if !base.exists() {
        return base.to_path_buf();
    }
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (2..)
        .map(|v| base.with_file_name(format!("{name}.v{v}")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| PfnError::io(path, e))
}

fn read_image(path: &Path) -> Result<RgbImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        io::read_pfm(path)
    } else {
        io::read_rgb_png(path)
    }
}

#[derive(Debug, Clone)]
pub struct DivideReport {
    /// Fresh directory holding this run's files.
    pub out_dir: PathBuf,
    pub band_pfm: Vec<PathBuf>,
    pub band_png: Vec<PathBuf>,
    /// Max absolute difference between the band sum and the input.
    pub reconstruction_error: f64,
}

/// Splits an image into bands and writes each as PFM (exact) and PNG (display).
pub fn cmd_divide(input: &Path, schedule: &CutoffSchedule, out_dir: &Path) -> Result<DivideReport> {
    let image = read_image(input)?;
    let (h, w) = image.dims();
    schedule.validate_for(h, w)?;
    let stack = divide_bands(&image, schedule)?;
    let error = reconstruct(&stack)?.max_abs_diff(&image);
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("image".into());
    let dir = versioned_path(&out_dir.join(format!("{stem}_bands")));
    create_dir(&dir)?;
    let mut report = DivideReport {
        out_dir: dir.clone(),
        band_pfm: vec![],
        band_png: vec![],
        reconstruction_error: error,
    };
    for (i, band) in stack.bands.iter().enumerate() {
        let pfm = dir.join(format!("band{i}.pfm"));
        let png = dir.join(format!("band{i}.png"));
        io::write_pfm(&pfm, band)?;
        if i == 0 {
            io::write_png(&png, band, 0.0, 1.0)?;
        } else {
            let m = band.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            io::write_png(&png, band, -m, m)?;
        }
        report.band_pfm.push(pfm);
        report.band_png.push(png);
    }
    let summary = dir.join("reconstruction_error.txt");
    std::fs::write(&summary, format!("{error:e}\n")).map_err(|e| PfnError::io(&summary, e))?;
    Ok(report)
}

/// Low- or high-pass copy of an image. A low-pass cut-off at or above
/// Nyquist passes everything; the high-pass is the exact complement.
pub fn filter_image(image: &RgbImage, mode: FilterMode, cutoff: f64) -> Result<RgbImage> {
    let (h, w) = image.dims();
    let low = if cutoff >= nyquist(h, w) {
        image.clone()
    } else {
        band_filter(image, 0.0, cutoff)?
    };
    Ok(match mode {
        FilterMode::Lpf => low,
        FilterMode::Hpf => {
            let mut d = image.clone();
            for (x, l) in d.data_mut().iter_mut().zip(low.data()) {
                *x -= l;
            }
            d
        }
    })
}

pub fn filter_dataset(ds: &Dataset, mode: FilterMode, cutoff: f64) -> Result<Dataset> {
    let pairs = ds
        .pairs
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.image = filter_image(&p.image, mode, cutoff)?;
            Ok(q)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { pairs })
}

/// Short digest of a dataset's identity and contents.
pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for p in &ds.pairs {
        h.update(p.source_id.as_bytes());
        for v in p.image.data().iter().chain(p.depth.data()) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn params_fingerprint(params: &ModelParams) -> String {
    let mut h = Sha256::new();
    h.update(params.config.hash().as_bytes());
    for (_, t) in params.named_tensors() {
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn train_cell(
    model: &ModelConfig,
    tc: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<(Option<MetricsReport>, f64)> {
    let start = Instant::now();
    let (_, log) = train_split(model, tc, train, val, &TrainOutputs::default())?;
    let best = log
        .best()
        .and_then(|r| r.val)
        .ok_or_else(|| PfnError::InvalidArgument("no validation metrics (empty validation set?)".into()))?;
    Ok((Some(best), start.elapsed().as_secs_f64() * 1e3))
}

#[derive(Serialize)]
struct BandInfoCell<'a> {
    command: &'static str,
    mode: Option<FilterMode>,
    cutoff: Option<f64>,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    data: (String, String),
}

pub const BANDINFO_COLUMNS: [&str; 2] = ["mode", "cutoff"];

/// Trains a single-band baseline on low- or high-passed inputs per cut-off.
/// The first row (`mode = none`) is the unfiltered reference.
pub fn cmd_bandinfo(
    train: &Dataset,
    val: &Dataset,
    cutoffs: &[f64],
    mode: FilterMode,
    model: &ModelConfig,
    tc: &TrainConfig,
    out_csv: Option<PathBuf>,
) -> Result<SweepResult> {
    if train.is_empty() {
        return Err(PfnError::InvalidArgument("dataset is empty".into()));
    }
    let model = ModelConfig {
        schedule: CutoffSchedule::empty(),
        ..model.clone()
    };
    let data = (dataset_fingerprint(train), dataset_fingerprint(val));
    let mut sweep = ResumableSweep::open(out_csv, &BANDINFO_COLUMNS)?;
    let hash = cell_hash(&BandInfoCell {
        command: "bandinfo",
        mode: None,
        cutoff: None,
        model: &model,
        train: tc,
        data: data.clone(),
    });
    sweep.run_cell(vec!["none".into(), String::new()], "unfiltered".into(), hash, || {
        train_cell(&model, tc, train, val)
    })?;
    for &f in cutoffs {
        let hash = cell_hash(&BandInfoCell {
            command: "bandinfo",
            mode: Some(mode),
            cutoff: Some(f),
            model: &model,
            train: tc,
            data: data.clone(),
        });
        sweep.run_cell(vec![mode.to_string(), f.to_string()], format!("{mode}@{f}"), hash, || {
            let tr = filter_dataset(train, mode, f)?;
            let va = filter_dataset(val, mode, f)?;
            train_cell(&model, tc, &tr, &va)
        })?;
    }
    Ok(sweep.finish())
}

/// Leading columns of the ablation table for a candidate set.
pub fn ablation_columns(spec: &AblationSpec) -> Vec<String> {
    let mut c = vec!["layers".to_string()];
    c.extend(spec.candidate_cutoffs.iter().map(|f| format!("f{f}")));
    c.push("schedule".into());
    c
}

#[derive(Serialize)]
struct AblationCell<'a> {
    command: &'static str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    data: (String, String),
}

/// One PFN per grid cell; candidate flags per row, one row per unique schedule.
pub fn cmd_ablate(
    spec: &AblationSpec,
    base: &ModelConfig,
    tc: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    out_csv: Option<PathBuf>,
) -> Result<SweepResult> {
    let grid = spec.grid()?;
    let columns = ablation_columns(spec);
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut sweep = ResumableSweep::open(out_csv, &cols)?;
    if grid.is_empty() {
        log::warn!("ablation grid is empty; nothing to train");
        sweep.flush()?;
        return Ok(sweep.finish());
    }
    let (h, w) = base.input_size;
    let factor = h.min(w) as f64 / CutoffSchedule::REFERENCE_SIDE as f64;
    let data = (dataset_fingerprint(train), dataset_fingerprint(val));
    for reference in grid {
        let model = ModelConfig {
            schedule: reference.scaled(factor),
            ..base.clone()
        };
        let mut fields = vec![reference.num_bands().to_string()];
        fields.extend(spec.candidate_cutoffs.iter().map(|f| {
            if reference.cutoffs().contains(f) { "1" } else { "0" }.to_string()
        }));
        fields.push(reference.label());
        let hash = cell_hash(&AblationCell {
            command: "ablate",
            model: &model,
            train: tc,
            data: data.clone(),
        });
        sweep.run_cell(fields, format!("layers={} [{}]", reference.num_bands(), reference.label()), hash, || {
            model.validate()?;
            train_cell(&model, tc, train, val)
        })?;
    }
    Ok(sweep.finish())
}

/// Copy of `ds` with per-image noise seeds derived from `seed`.
pub fn noisy_dataset(ds: &Dataset, variance: f64, seed: u64) -> Result<Dataset> {
    let pairs = ds
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut q = p.clone();
            let spec = NoiseSpec::new(variance, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            q.image = add_gaussian_noise(&p.image, &spec)?;
            Ok(q)
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { pairs })
}

pub const NOISE_COLUMNS: [&str; 1] = ["variance"];

#[derive(Serialize)]
struct NoiseCell {
    command: &'static str,
    params: String,
    data: String,
    variance: f64,
    seed: u64,
}

/// Evaluates `params` on noise-corrupted copies of `test`.
pub fn cmd_noise_sweep(
    params: &ModelParams,
    test: &Dataset,
    variances: &[f64],
    seed: u64,
    out_csv: Option<PathBuf>,
) -> Result<SweepResult> {
    if let Some(v) = variances.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(PfnError::InvalidArgument(format!("noise variance must be >= 0, got {v}")));
    }
    let mut sweep = ResumableSweep::open(out_csv, &NOISE_COLUMNS)?;
    let (pf, df) = (params_fingerprint(params), dataset_fingerprint(test));
    for &variance in variances {
        let hash = cell_hash(&NoiseCell {
            command: "noise-sweep",
            params: pf.clone(),
            data: df.clone(),
            variance,
            seed,
        });
        sweep.run_cell(vec![variance.to_string()], format!("variance={variance}"), hash, || {
            let start = Instant::now();
            let noisy = noisy_dataset(test, variance, seed)?;
            let (m, _) = evaluate_model(params, &noisy)?;
            Ok((Some(m), start.elapsed().as_secs_f64() * 1e3))
        })?;
    }
    Ok(sweep.finish())
}

/// Trains from a full experiment config, writing `best.ckpt`,
/// `train_log.csv` and the resolved `config.toml` under a fresh directory.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(ModelParams, TrainLog, PathBuf)> {
    cfg.validate()?;
    let data = cfg.data.load_train()?;
    let (tr, va) = data.split(cfg.train.val_fraction);
    let dir = versioned_path(&out_dir.join("train"));
    create_dir(&dir)?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| PfnError::io(&cfg_path, e))?;
    let outputs = TrainOutputs {
        checkpoint: Some(dir.join("best.ckpt")),
        log_csv: Some(dir.join("train_log.csv")),
    };
    let (params, log) = train_split(&cfg.model, &cfg.train, &tr, &va, &outputs)?;
    Ok((params, log, dir))
}

/// Scores `params` on `test`; predictions go to `capture` as PFM when given.
pub fn cmd_eval(params: &ModelParams, test: &Dataset, capture: Option<&Path>) -> Result<MetricsReport> {
    let (report, preds) = evaluate_model(params, test)?;
    if let Some(dir) = capture {
        create_dir(dir)?;
        for (p, d) in test.pairs.iter().zip(&preds) {
            io::write_pfm(dir.join(format!("{}_pred.pfm", p.source_id)), d)?;
        }
    }
    Ok(report)
}

pub const TIMING_COLUMNS: [&str; 6] = ["layers", "height", "width", "runs", "mean_ms", "var_ms"];

/// Rough peak footprint of one inference forward pass in bytes: the band
/// stack plus the largest single convolution working set (input, patch
/// matrix, output).
pub fn estimate_forward_bytes(config: &ModelConfig) -> usize {
    let (h, w) = config.input_size;
    let widths = &config.backbone_channels;
    let w0 = widths.first().copied().unwrap_or(1);
    let conv = |cin: usize, cout: usize| 10 * cin + cout;
    let mut backbone = conv(3, w0);
    if let Some(&w1) = widths.get(1) {
        let deeper: usize = widths[1..].iter().sum();
        backbone = backbone.max(w0 + conv(w0 + w1, w0) + deeper / 4);
    }
    let (f, s) = (config.band_feature_channels, config.sarrm_channels);
    let stage = f + conv(1 + f, s).max(conv(s, s) + s) + 2;
    let per_pixel = 3 * (config.num_bands() + 1) + 2 + backbone.max(stage);
    h * w * per_pixel * std::mem::size_of::<f64>()
}

fn timing_input(params: &ModelParams, seed: u64) -> Planes<f64> {
    let (h, w) = params.config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Planes::from_fn(3, h, w, |_, _, _| rng.gen::<f64>())
}

/// Milliseconds for one forward pass, band division included.
fn forward_ms(params: &ModelParams, image: &Planes<f64>) -> Result<f64> {
    let start = Instant::now();
    let stack = divide_bands(image, &params.config.schedule)?;
    std::hint::black_box(pfn_forward(&stack, params)?);
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

fn mean_var(times: &[f64]) -> (f64, f64) {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = if times.len() > 1 {
        times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

struct TimingCell {
    fields: Vec<String>,
    name: String,
    hash: String,
    /// `None` when a previous run already finished the cell.
    job: Option<Result<(ModelParams, Planes<f64>)>>,
    times: Vec<f64>,
}

/// Forward latency per model and resolution. Runs are interleaved
/// round-robin across cells so load spikes hit every cell alike.
pub fn cmd_timing(
    models: &[ModelParams],
    resolutions: &[(usize, usize)],
    runs: usize,
    memory_budget_mb: usize,
    out_csv: Option<PathBuf>,
) -> Result<SweepResult> {
    if runs < 20 {
        return Err(PfnError::InvalidArgument(format!("timing needs at least 20 runs, got {runs}")));
    }
    let mut sweep = ResumableSweep::open(out_csv, &TIMING_COLUMNS)?;
    let mut cells = vec![];
    for params in models {
        for &(h, w) in resolutions {
            let scaled = params.at_resolution(h, w);
            let layers = scaled.num_bands();
            let hash = cell_hash(&(params_fingerprint(params), h, w, runs));
            let job = (!sweep.is_completed(&hash)).then(|| {
                scaled.config.validate()?;
                let need = estimate_forward_bytes(&scaled.config);
                if need > memory_budget_mb << 20 {
                    return Err(PfnError::InvalidArgument(format!(
                        "needs about {} MiB, budget is {memory_budget_mb} MiB",
                        need >> 20
                    )));
                }
                let image = timing_input(&scaled, 0);
                Ok((scaled, image))
            });
            cells.push(TimingCell {
                fields: vec![layers.to_string(), h.to_string(), w.to_string(), runs.to_string()],
                name: format!("layers={layers} {h}x{w}"),
                hash,
                job,
                times: Vec::with_capacity(runs),
            });
        }
    }
    // Round 0 is a discarded warm-up.
    for round in 0..=runs {
        for cell in &mut cells {
            if let Some(Ok((params, image))) = &cell.job {
                match forward_ms(params, image) {
                    Ok(t) if round > 0 => cell.times.push(t),
                    Ok(_) => {}
                    Err(e) => cell.job = Some(Err(e)),
                }
            }
        }
    }
    for cell in cells {
        let TimingCell {
            mut fields,
            name,
            hash,
            job,
            times,
        } = cell;
        let result = match job {
            Some(Err(e)) => Err(e),
            _ => Ok(mean_var(&times)),
        };
        match &result {
            Ok((mean, var)) => fields.extend([mean.to_string(), var.to_string()]),
            Err(_) => fields.extend([String::new(), String::new()]),
        }
        sweep.run_cell(fields, name, hash, || result.map(|(mean, _)| (None, mean)))?;
    }
    Ok(sweep.finish())
}

/// Freshly initialized models of each pyramid depth, cut-offs taken from
/// the ablation candidates (highest first dropped) at the base resolution.
pub fn timing_models(base: &ModelConfig, layer_counts: &[usize]) -> Result<Vec<ModelParams>> {
    let (h, w) = base.input_size;
    let factor = h.min(w) as f64 / CutoffSchedule::REFERENCE_SIDE as f64;
    layer_counts
        .iter()
        .map(|&n| {
            let cands = CutoffSchedule::ABLATION_CANDIDATES;
            if !(1..=cands.len() + 1).contains(&n) {
                return Err(PfnError::InvalidArgument(format!("unsupported layer count {n}")));
            }
            let cut = CutoffSchedule::new(cands[cands.len() + 1 - n..].to_vec())?;
            init_model(&ModelConfig {
                schedule: cut.scaled(factor),
                ..base.clone()
            })
        })
        .collect()
}

/// Writes `params` to `path` without clobbering an existing file.
pub fn save_versioned_checkpoint(params: &ModelParams, path: &Path) -> Result<PathBuf> {
    let path = versioned_path(path);
    save_checkpoint(params, &path)?;
    Ok(path)
}
