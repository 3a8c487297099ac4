use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pfn_core::data::Dataset;
use pfn_core::experiments::{self, ExperimentConfig, FilterMode, SweepResult};
use pfn_core::loss_metrics::MetricsReport;
use pfn_core::model::{init_model, load_checkpoint_unchecked, save_checkpoint};
use pfn_core::spectral::CutoffSchedule;

#[derive(Parser)]
#[command(name = "pfn", version, about = "Frequency-pyramid monocular depth experiments")]
struct Cli {
    /// TOML file with [model], [train], [ablation], [data], [bandinfo], [noise], [timing] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reproducible shuffling (default unless the config disables it).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "pfn-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into frequency bands.
    Divide {
        image: PathBuf,
        /// Comma-separated cut-offs in cycles per image.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        cutoffs: Option<Vec<f64>>,
        /// Treat cut-offs as 512-px reference values and rescale to the image.
        #[arg(long)]
        rescale: bool,
    },
    /// Train single-band baselines on low- or high-passed inputs.
    Bandinfo {
        #[arg(long)]
        mode: Option<FilterMode>,
    },
    /// Train one model per cut-off configuration.
    Ablate,
    /// Evaluate a checkpoint under additive Gaussian noise.
    NoiseSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variances: Option<Vec<f64>>,
    },
    /// Train a model from the configuration.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write predicted depth maps as PFM into this directory.
        #[arg(long)]
        capture: Option<PathBuf>,
    },
    /// Forward-pass latency per pyramid depth and resolution.
    Timing {
        /// Time this checkpoint instead of freshly initialized models.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Resolutions as HxW, comma separated.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<String>>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write the configured synthetic dataset to disk.
    GenSynth,
    /// Write an untrained checkpoint for the configured model.
    Init,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if cli.deterministic {
        cfg.train.deterministic = true;
    }
    Ok(cfg)
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("cannot create {}", p.display()))
}

fn print_sweep(s: &SweepResult) -> Result<()> {
    print!("{}", s.to_csv()?);
    Ok(())
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("resolution {s:?} is not HxW"))?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn load_test(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.data.load_test().with_context(|| match &cfg.data.root {
        Some(r) => format!(
            "cannot load test split {:?} under {}; set [data] root/test_split",
            cfg.data.test_split,
            r.display()
        ),
        None => "cannot generate synthetic test data".into(),
    })
}

fn load_train(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.data.load_train().with_context(|| match &cfg.data.root {
        Some(r) => format!(
            "cannot load train split {:?} under {}; set [data] root/train_split",
            cfg.data.train_split,
            r.display()
        ),
        None => "cannot generate synthetic training data".into(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Divide {
            image,
            cutoffs,
            rescale,
        } => {
            let mut schedule = match cutoffs {
                Some(c) => CutoffSchedule::new(c.clone())?,
                None => CutoffSchedule::new(CutoffSchedule::REFERENCE_CUTOFFS.to_vec())?,
            };
            if *rescale {
                let img = image::image_dimensions(image)
                    .map(|(w, h)| (h as usize, w as usize))
                    .or_else(|_| pfn_core::data::io::read_pfm(image).map(|g| g.dims()))
                    .with_context(|| format!("cannot read {}", image.display()))?;
                schedule = schedule
                    .scaled(img.0.min(img.1) as f64 / CutoffSchedule::REFERENCE_SIDE as f64);
            }
            ensure_dir(out)?;
            let r = experiments::cmd_divide(image, &schedule, out)?;
            println!("schedule: {}", schedule.label());
            for (pfm, png) in r.band_pfm.iter().zip(&r.band_png) {
                println!("{} {}", pfm.display(), png.display());
            }
            println!("reconstruction_error: {:e}", r.reconstruction_error);
        }
        Command::Bandinfo { mode } => {
            ensure_dir(out)?;
            let data = load_train(&cfg)?;
            let (tr, va) = data.split(cfg.train.val_fraction);
            let (h, w) = data.dims()?;
            let mode = mode.unwrap_or(cfg.bandinfo.mode);
            let grid = cfg.bandinfo.grid(h, w);
            let s = experiments::cmd_bandinfo(
                &tr,
                &va,
                &grid,
                mode,
                &cfg.model,
                &cfg.train,
                Some(out.join(format!("bandinfo_{mode}.csv"))),
            )?;
            print_sweep(&s)?;
        }
        Command::Ablate => {
            ensure_dir(out)?;
            let data = load_train(&cfg)?;
            let (tr, va) = data.split(cfg.train.val_fraction);
            let s = experiments::cmd_ablate(
                &cfg.ablation,
                &cfg.model,
                &cfg.train,
                &tr,
                &va,
                Some(out.join("ablation.csv")),
            )?;
            if s.rows.is_empty() {
                eprintln!("warning: ablation grid is empty");
            }
            print_sweep(&s)?;
        }
        Command::NoiseSweep {
            checkpoint,
            variances,
        } => {
            ensure_dir(out)?;
            let params = load_checkpoint_unchecked(checkpoint)
                .with_context(|| format!("invalid checkpoint {}", checkpoint.display()))?;
            let test = load_test(&cfg)?;
            let v = variances.clone().unwrap_or(cfg.noise.variances.clone());
            let s = experiments::cmd_noise_sweep(
                &params,
                &test,
                &v,
                cfg.noise.seed,
                Some(out.join("noise_sweep.csv")),
            )?;
            print_sweep(&s)?;
        }
        Command::Train => {
            ensure_dir(out)?;
            let (_, log, dir) = experiments::cmd_train(&cfg, out)?;
            match log.best() {
                Some(b) => println!(
                    "best epoch {} (val rel {}) -> {}",
                    b.epoch,
                    b.val.map_or("-".into(), |m| format!("{:.4}", m.rel)),
                    dir.join("best.ckpt").display()
                ),
                None => println!("no epochs run -> {}", dir.join("best.ckpt").display()),
            }
        }
        Command::Eval {
            checkpoint,
            capture,
        } => {
            let params = load_checkpoint_unchecked(checkpoint)
                .with_context(|| format!("invalid checkpoint {}", checkpoint.display()))?;
            let test = load_test(&cfg)?;
            let m = experiments::cmd_eval(&params, &test, capture.as_deref())?;
            println!("{}", MetricsReport::CSV_HEADER);
            println!("{}", m.csv_row());
        }
        Command::Timing {
            checkpoint,
            resolutions,
            runs,
        } => {
            ensure_dir(out)?;
            let models = match checkpoint {
                Some(p) => vec![load_checkpoint_unchecked(p)
                    .with_context(|| format!("invalid checkpoint {}", p.display()))?],
                None => experiments::timing_models(&cfg.model, &cfg.timing.layer_counts)?,
            };
            let res = match resolutions {
                Some(r) => r.iter().map(|s| parse_resolution(s)).collect::<Result<_>>()?,
                None => cfg.timing.resolutions.clone(),
            };
            let s = experiments::cmd_timing(
                &models,
                &res,
                runs.unwrap_or(cfg.timing.runs),
                cfg.timing.memory_budget_mb,
                Some(out.join("timing.csv")),
            )?;
            print_sweep(&s)?;
        }
        Command::GenSynth => {
            if cfg.data.root.is_some() {
                bail!("[data] root is set; gen-synth writes synthetic data only");
            }
            load_train(&cfg)?.write_dir(out, &cfg.data.train_split)?;
            load_test(&cfg)?.write_dir(out, &cfg.data.test_split)?;
            println!("wrote {}", out.display());
        }
        Command::Init => {
            ensure_dir(out)?;
            let params = init_model(&cfg.model)?;
            let path = experiments::versioned_path(&out.join("init.ckpt"));
            save_checkpoint(&params, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
