//! Mixed L1 + L2 training loss and the standard depth evaluation metrics,
//! all computed over an explicit validity mask.

use serde::{Deserialize, Serialize};

use crate::error::{PfnError, Result};
use crate::tensor::{DepthMap, Mask};

/// δ thresholds: 1.25, 1.25², 1.25³.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];

fn check_shapes(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<()> {
    if pred.channels() != 1 || gt.channels() != 1 {
        return Err(PfnError::ShapeMismatch("depth maps must be single-channel".into()));
    }
    if pred.dims() != gt.dims() || mask.dims() != gt.dims() {
        return Err(PfnError::ShapeMismatch(format!(
            "pred {:?}, gt {:?}, mask {:?}",
            pred.dims(),
            gt.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// `(pred, gt)` pairs under the mask; errors if none are selected.
fn masked_pairs<'a>(
    pred: &'a DepthMap,
    gt: &'a DepthMap,
    mask: &'a Mask,
) -> Result<impl Iterator<Item = (f64, f64)> + Clone + 'a> {
    check_shapes(pred, gt, mask)?;
    if mask.count() == 0 {
        return Err(PfnError::EmptyMask);
    }
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| (p, g)))
}

fn require(
    pairs: impl Iterator<Item = (f64, f64)>,
    pred_positive: bool,
) -> Result<()> {
    for (p, g) in pairs {
        if !(g.is_finite() && g > 0.0) {
            return Err(PfnError::InvalidArgument(format!(
                "ground truth {g} inside the mask must be finite and positive"
            )));
        }
        if !p.is_finite() || (pred_positive && p <= 0.0) {
            return Err(PfnError::InvalidArgument(format!(
                "prediction {p} inside the mask must be finite{}",
                if pred_positive { " and positive" } else { "" }
            )));
        }
    }
    Ok(())
}

fn mean(pairs: impl Iterator<Item = (f64, f64)>, f: impl Fn(f64, f64) -> f64) -> f64 {
    let (sum, n) = pairs.fold((0.0, 0usize), |(s, n), (p, g)| (s + f(p, g), n + 1));
    sum / n as f64
}

/// `mean |gt - pred| + mean (gt - pred)²` over the mask.
pub fn loss_mix(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    Ok(mean(pairs, |p, g| {
        let d = g - p;
        d.abs() + d * d
    }))
}

/// [`loss_mix`] together with its gradient w.r.t. `pred` (zero off-mask).
pub fn loss_mix_with_grad(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<(f64, DepthMap)> {
    let loss = loss_mix(pred, gt, mask)?;
    let n = mask.count() as f64;
    let mut grad = DepthMap::zeros(1, pred.height(), pred.width());
    for (((g, &p), &y), &m) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(gt.data())
        .zip(mask.data())
    {
        if m {
            let d = p - y;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g = (sign + 2.0 * d) / n;
        }
    }
    Ok((loss, grad))
}

/// Mean absolute relative error.
pub fn metric_rel(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    require(pairs.clone(), false)?;
    Ok(mean(pairs, |p, g| (p - g).abs() / g))
}

/// Mean squared relative error.
pub fn metric_sq_rel(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    require(pairs.clone(), false)?;
    Ok(mean(pairs, |p, g| (p - g) * (p - g) / g))
}

/// Root mean squared error.
pub fn metric_rms(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    Ok(mean(pairs, |p, g| (p - g) * (p - g)).sqrt())
}

/// Root mean squared natural-log error.
pub fn metric_rms_log(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, mask)?;
    require(pairs.clone(), true)?;
    Ok(mean(pairs, |p, g| {
        let d = p.ln() - g.ln();
        d * d
    })
    .sqrt())
}

/// Fraction of pixels with `max(pred/gt, gt/pred) < threshold`.
pub fn metric_delta(pred: &DepthMap, gt: &DepthMap, mask: &Mask, threshold: f64) -> Result<f64> {
    if threshold.is_nan() || threshold <= 1.0 {
        return Err(PfnError::InvalidArgument(format!(
            "δ threshold must exceed 1, got {threshold}"
        )));
    }
    let pairs = masked_pairs(pred, gt, mask)?;
    require(pairs.clone(), true)?;
    Ok(mean(pairs, |p, g| {
        if (p / g).max(g / p) < threshold {
            1.0
        } else {
            0.0
        }
    }))
}

/// One evaluation of the full metric suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "rel,sq_rel,rms,rms_log,delta1,delta2,delta3,n_valid";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rel,
            self.sq_rel,
            self.rms,
            self.rms_log,
            self.delta1,
            self.delta2,
            self.delta3,
            self.n_valid
        )
    }

    pub fn field_values(&self) -> [f64; 7] {
        [
            self.rel,
            self.sq_rel,
            self.rms,
            self.rms_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    /// Pixel-weighted average of several reports.
    pub fn pooled(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let total: usize = reports.iter().map(|r| r.n_valid).sum();
        if total == 0 {
            return None;
        }
        let wmean = |f: fn(&MetricsReport) -> f64| {
            reports.iter().map(|r| f(r) * r.n_valid as f64).sum::<f64>() / total as f64
        };
        let wrms = |f: fn(&MetricsReport) -> f64| {
            (reports
                .iter()
                .map(|r| f(r) * f(r) * r.n_valid as f64)
                .sum::<f64>()
                / total as f64)
                .sqrt()
        };
        Some(MetricsReport {
            rel: wmean(|r| r.rel),
            sq_rel: wmean(|r| r.sq_rel),
            rms: wrms(|r| r.rms),
            rms_log: wrms(|r| r.rms_log),
            delta1: wmean(|r| r.delta1),
            delta2: wmean(|r| r.delta2),
            delta3: wmean(|r| r.delta3),
            n_valid: total,
        })
    }
}

/// All metrics at once, thresholds 1.25, 1.25², 1.25³.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<MetricsReport> {
    let [t1, t2, t3] = DELTA_THRESHOLDS;
    Ok(MetricsReport {
        rel: metric_rel(pred, gt, mask)?,
        sq_rel: metric_sq_rel(pred, gt, mask)?,
        rms: metric_rms(pred, gt, mask)?,
        rms_log: metric_rms_log(pred, gt, mask)?,
        delta1: metric_delta(pred, gt, mask, t1)?,
        delta2: metric_delta(pred, gt, mask, t2)?,
        delta3: metric_delta(pred, gt, mask, t3)?,
        n_valid: mask.count(),
    })
}
