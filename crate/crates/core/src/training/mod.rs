//! Supervised training of [`ModelParams`] on RGB-D pairs.

mod adam;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::data::{add_gaussian_noise, Dataset, NoiseSpec, RgbdPair};
use crate::error::{PfnError, Result};
use crate::loss_metrics::{evaluate, loss_mix_with_grad, MetricsReport};
use crate::model::{init_model, pfn_backward, pfn_forward, pfn_forward_traced, save_checkpoint};
use crate::model::{ModelConfig, ModelParams};
use crate::spectral::{BandDivider, BandStack};
use crate::tensor::DepthMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr0: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// When false the shuffle order is drawn from OS entropy.
    pub deterministic: bool,
    /// Trailing fraction of the dataset held out by [`train`].
    pub val_fraction: f64,
    /// Variance of fresh Gaussian noise added to every training image at
    /// every step; 0 trains on clean images.
    pub train_noise_variance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.99,
            beta2: 0.999,
            epsilon: 1e-5,
            lr0: 1e-4,
            lr_halving_period: 100,
            batch_size: 1,
            epochs: 50,
            seed: 0,
            deterministic: true,
            val_fraction: 0.1,
            train_noise_variance: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(PfnError::config("lr0", format!("must be > 0, got {}", self.lr0)));
        }
        if !unit(self.beta1) {
            return Err(PfnError::config("beta1", "must lie in [0, 1)"));
        }
        if !unit(self.beta2) {
            return Err(PfnError::config("beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(PfnError::config("epsilon", "must be > 0"));
        }
        if self.lr_halving_period < 1 {
            return Err(PfnError::config("lr_halving_period", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(PfnError::config("batch_size", "must be >= 1"));
        }
        if !unit(self.val_fraction) {
            return Err(PfnError::config("val_fraction", "must lie in [0, 1)"));
        }
        if !(self.train_noise_variance >= 0.0 && self.train_noise_variance.is_finite()) {
            return Err(PfnError::config("train_noise_variance", "must be >= 0"));
        }
        Ok(())
    }
}

/// `lr0 * 0.5^floor(epoch / period)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let halvings = epoch / config.lr_halving_period.max(1);
    config.lr0 * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's training steps.
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters were returned, if any epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,lr,seconds,rel,sq_rel,rms,rms_log,delta1,delta2,delta3,n_valid";

    pub fn csv_row(r: &EpochRecord) -> String {
        let val = match &r.val {
            Some(m) => m.csv_row(),
            None => ",,,,,,,0".to_string(),
        };
        format!("{},{},{},{},{}", r.epoch, r.train_loss, r.lr, r.seconds, val)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            s.push_str(&Self::csv_row(r));
            s.push('\n');
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.records.iter().find(|r| r.epoch == e)
    }
}

/// Optional artifacts written while training.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Rewritten whenever validation REL improves.
    pub checkpoint: Option<PathBuf>,
    /// CSV log, one row appended per epoch.
    pub log_csv: Option<PathBuf>,
}

/// A pair with its band stack precomputed.
pub struct PreparedPair<'a> {
    pub pair: &'a RgbdPair,
    pub stack: BandStack<f64>,
}

/// Divides every image once with the model's schedule.
pub fn prepare<'a>(config: &ModelConfig, dataset: &'a Dataset) -> Result<Vec<PreparedPair<'a>>> {
    if dataset.is_empty() {
        return Ok(vec![]);
    }
    let dims = dataset.dims()?;
    if dims != config.input_size {
        return Err(PfnError::ShapeMismatch(format!(
            "dataset images are {}x{}, model expects {}x{}",
            dims.0, dims.1, config.input_size.0, config.input_size.1
        )));
    }
    let divider = BandDivider::<f64>::new(dims.0, dims.1, &config.schedule)?;
    dataset
        .pairs
        .iter()
        .map(|pair| {
            Ok(PreparedPair {
                pair,
                stack: divider.divide(&pair.image)?,
            })
        })
        .collect()
}

/// Predictions for every prepared pair.
pub fn predict_all(params: &ModelParams, prepared: &[PreparedPair]) -> Result<Vec<DepthMap>> {
    prepared.iter().map(|p| pfn_forward(&p.stack, params)).collect()
}

/// Pixel-pooled metrics over pairs with a non-empty mask.
pub fn evaluate_predictions(preds: &[DepthMap], pairs: &[&RgbdPair]) -> Result<MetricsReport> {
    let reports = preds
        .iter()
        .zip(pairs)
        .filter(|(_, p)| p.mask.count() > 0)
        .map(|(d, p)| evaluate(d, &p.depth, &p.mask))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::pooled(&reports).ok_or(PfnError::EmptyMask)
}

/// Runs the model over a dataset and scores it.
pub fn evaluate_model(params: &ModelParams, dataset: &Dataset) -> Result<(MetricsReport, Vec<DepthMap>)> {
    let prepared = prepare(&params.config, dataset)?;
    let preds = predict_all(params, &prepared)?;
    let pairs: Vec<&RgbdPair> = dataset.pairs.iter().collect();
    Ok((evaluate_predictions(&preds, &pairs)?, preds))
}

/// Trains on the leading part of `dataset`, validating on the trailing
/// `val_fraction`; returns the parameters with the best validation REL.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dataset: &Dataset,
) -> Result<(ModelParams, TrainLog)> {
    let (tr, va) = dataset.split(train_config.val_fraction);
    train_split(model_config, train_config, &tr, &va, &TrainOutputs::default())
}

/// Like [`train`] with an explicit validation set. An empty validation set
/// selects by mean training loss instead.
pub fn train_split(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    outputs: &TrainOutputs,
) -> Result<(ModelParams, TrainLog)> {
    model_config.validate()?;
    train_config.validate()?;
    if train_set.is_empty() {
        return Err(PfnError::InvalidArgument("training set is empty".into()));
    }
    let train_data = prepare(model_config, train_set)?;
    let val_data = prepare(model_config, val_set)?;
    let val_pairs: Vec<&RgbdPair> = val_set.pairs.iter().collect();
    let usable: Vec<&PreparedPair> = train_data.iter().filter(|p| p.pair.mask.count() > 0).collect();
    if usable.is_empty() {
        return Err(PfnError::EmptyMask);
    }

    let mut params = init_model(model_config)?;
    let mut log = TrainLog::default();
    let mut best = params.clone();
    let mut best_score = f64::INFINITY;
    let mut adam = Adam::new(&params, train_config.beta1, train_config.beta2, train_config.epsilon);
    let mut rng = if train_config.deterministic {
        ChaCha8Rng::seed_from_u64(train_config.seed)
    } else {
        ChaCha8Rng::from_entropy()
    };
    let mut noise_rng = if train_config.deterministic {
        ChaCha8Rng::seed_from_u64(train_config.seed ^ 0x6e6f_6973_6521)
    } else {
        ChaCha8Rng::from_entropy()
    };
    let noise_divider = if train_config.train_noise_variance > 0.0 {
        let (h, w) = model_config.input_size;
        Some(BandDivider::<f64>::new(h, w, &model_config.schedule)?)
    } else {
        None
    };
    let mut csv = match &outputs.log_csv {
        Some(path) => {
            let f = File::create(path).map_err(|e| PfnError::io(path, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{}", TrainLog::CSV_HEADER).map_err(|e| PfnError::io(path, e))?;
            Some((w, path.clone()))
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 0..train_config.epochs {
        let start = Instant::now();
        let lr = lr_schedule(epoch, train_config);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            let mut grads: Option<ModelParams> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = usable[i];
                let noisy;
                let stack = match &noise_divider {
                    Some(divider) => {
                        let spec = NoiseSpec::new(train_config.train_noise_variance, noise_rng.gen());
                        noisy = divider.divide(&add_gaussian_noise(&p.pair.image, &spec)?)?;
                        &noisy
                    }
                    None => &p.stack,
                };
                let (pred, trace) = pfn_forward_traced(stack, &params)?;
                let (loss, g) = loss_mix_with_grad(&pred, &p.pair.depth, &p.pair.mask)?;
                if !loss.is_finite() {
                    return Err(PfnError::Diverged { epoch, loss });
                }
                batch_loss += loss;
                let step = pfn_backward(&params, &trace, &g);
                match &mut grads {
                    None => grads = Some(step),
                    Some(acc) => add_assign(acc, &step),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            if batch.len() > 1 {
                scale(&mut grads, 1.0 / batch.len() as f64);
            }
            adam.update(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(PfnError::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            batch_loss /= batch.len() as f64;
            log.step_losses.push(batch_loss);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / usable.len() as f64;
        let val = if val_data.is_empty() {
            None
        } else {
            Some(evaluate_predictions(&predict_all(&params, &val_data)?, &val_pairs)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        let score = val.map_or(train_loss, |m| m.rel);
        if score < best_score {
            best_score = score;
            best = params.clone();
            log.best_epoch = Some(epoch);
            if let Some(path) = &outputs.checkpoint {
                save_checkpoint(&best, path)?;
            }
        }
        log::info!(
            "epoch {epoch}: loss {train_loss:.5}, val rel {}, lr {lr:e}, {:.1}s",
            val.map_or("-".to_string(), |m| format!("{:.4}", m.rel)),
            record.seconds
        );
        if let Some((w, path)) = &mut csv {
            writeln!(w, "{}", TrainLog::csv_row(&record))
                .and_then(|_| w.flush())
                .map_err(|e| PfnError::io(path.as_path(), e))?;
        }
        log.records.push(record);
    }
    if train_config.epochs == 0 {
        if let Some(path) = &outputs.checkpoint {
            save_checkpoint(&best, path)?;
        }
    }
    Ok((best, log))
}

fn add_assign(acc: &mut ModelParams, other: &ModelParams) {
    let other = other.named_tensors();
    for (a, (_, b)) in acc.tensors_mut().into_iter().zip(other) {
        for (x, y) in a.data.iter_mut().zip(&b.data) {
            *x += y;
        }
    }
}

fn scale(p: &mut ModelParams, s: f64) {
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Writes a [`TrainLog`] as CSV.
pub fn write_log_csv(log: &TrainLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, log.to_csv()).map_err(|e| PfnError::io(path, e))
}
