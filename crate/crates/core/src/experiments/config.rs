use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetProfile};
use crate::error::{PfnError, Result};
use crate::model::ModelConfig;
use crate::spectral::{nyquist, CutoffSchedule};
use crate::training::TrainConfig;

/// Cut-off grid for the layer-count ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSpec {
    /// Candidates at the reference resolution (512 px shorter side).
    pub candidate_cutoffs: Vec<f64>,
    /// Pyramid depths to enumerate; a depth of `n` uses `n - 1` cut-offs.
    pub layer_counts: Vec<usize>,
    /// Explicit cells (reference-scale cut-offs); replaces enumeration.
    pub cells: Option<Vec<Vec<f64>>>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            candidate_cutoffs: CutoffSchedule::ABLATION_CANDIDATES.to_vec(),
            layer_counts: vec![2, 3, 4, 5, 6],
            cells: None,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        CutoffSchedule::new(self.candidate_cutoffs.clone())
            .map_err(|e| PfnError::config("candidate_cutoffs", e.to_string()))?;
        for (i, &n) in self.layer_counts.iter().enumerate() {
            if !(2..=self.candidate_cutoffs.len() + 1).contains(&n) {
                return Err(PfnError::config(
                    format!("layer_counts[{i}]"),
                    format!(
                        "{n} layers needs {} cut-offs, {} candidates available",
                        n.saturating_sub(1),
                        self.candidate_cutoffs.len()
                    ),
                ));
            }
        }
        if let Some(cells) = &self.cells {
            for (i, c) in cells.iter().enumerate() {
                CutoffSchedule::new(c.clone())
                    .map_err(|e| PfnError::config(format!("cells[{i}]"), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Unique reference-scale schedules, ordered by layer count then lexicographically.
    pub fn grid(&self) -> Result<Vec<CutoffSchedule>> {
        self.validate()?;
        let mut out: Vec<CutoffSchedule> = match &self.cells {
            Some(cells) => cells
                .iter()
                .filter(|c| self.layer_counts.contains(&(c.len() + 1)))
                .map(|c| CutoffSchedule::new(c.clone()))
                .collect::<Result<_>>()?,
            None => {
                let mut cands = self.candidate_cutoffs.clone();
                cands.sort_by(f64::total_cmp);
                let mut v = vec![];
                let mut counts = self.layer_counts.clone();
                counts.sort_unstable();
                counts.dedup();
                for n in counts {
                    for combo in combinations(&cands, n - 1) {
                        v.push(CutoffSchedule::new(combo)?);
                    }
                }
                v
            }
        };
        let mut seen = Vec::<CutoffSchedule>::new();
        out.retain(|s| {
            if seen.contains(s) {
                false
            } else {
                seen.push(s.clone());
                true
            }
        });
        Ok(out)
    }
}

fn combinations(items: &[f64], k: usize) -> Vec<Vec<f64>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = vec![];
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Where image/depth pairs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root; synthetic scenes are generated when absent.
    pub root: Option<PathBuf>,
    pub train_split: String,
    pub test_split: String,
    /// Overrides the per-record manifest profile.
    pub profile: Option<DatasetProfile>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub synthetic_side: usize,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            train_split: "train".into(),
            test_split: "test".into(),
            profile: None,
            synthetic_train: 200,
            synthetic_test: 20,
            synthetic_side: 64,
            synthetic_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn load_train(&self) -> Result<Dataset> {
        match &self.root {
            Some(root) => Dataset::load_dir(root, &self.train_split, self.profile),
            None => Dataset::synthetic(self.synthetic_train, self.synthetic_side, self.synthetic_seed),
        }
    }

    pub fn load_test(&self) -> Result<Dataset> {
        match &self.root {
            Some(root) => Dataset::load_dir(root, &self.test_split, self.profile),
            None => Dataset::synthetic(
                self.synthetic_test,
                self.synthetic_side,
                self.synthetic_seed.wrapping_add(1),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Lpf,
    Hpf,
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterMode::Lpf => "lpf",
            FilterMode::Hpf => "hpf",
        })
    }
}

impl std::str::FromStr for FilterMode {
    type Err = PfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lpf" => Ok(Self::Lpf),
            "hpf" => Ok(Self::Hpf),
            _ => Err(PfnError::InvalidArgument(format!("mode must be lpf or hpf, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandInfoConfig {
    pub mode: FilterMode,
    /// Explicit cut-offs in cycles per image; log-spaced up to Nyquist when absent.
    pub cutoffs: Option<Vec<f64>>,
    pub points: usize,
}

impl Default for BandInfoConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::Lpf,
            cutoffs: None,
            points: 8,
        }
    }
}

impl BandInfoConfig {
    pub fn grid(&self, height: usize, width: usize) -> Vec<f64> {
        match &self.cutoffs {
            Some(c) => c.clone(),
            None => log_grid(1.0, nyquist(height, width), self.points),
        }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub variances: Vec<f64>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            variances: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    /// `(height, width)` pairs.
    pub resolutions: Vec<(usize, usize)>,
    pub runs: usize,
    /// Pyramid depths timed with freshly initialized weights when no
    /// checkpoint is given.
    pub layer_counts: Vec<usize>,
    /// Cells whose estimated activation memory exceeds this are reported as failed.
    pub memory_budget_mb: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![(240, 320), (600, 800)],
            runs: 20,
            layer_counts: vec![2, 3, 4, 5, 6],
            memory_budget_mb: 2048,
        }
    }
}

/// Everything one invocation of the tool may need, one TOML table per part.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSpec,
    pub data: DataConfig,
    pub bandinfo: BandInfoConfig,
    pub noise: NoiseConfig,
    pub timing: TimingConfig,
}

fn prefixed(section: &str, e: PfnError) -> PfnError {
    match e {
        PfnError::Config { path, message } => PfnError::config(format!("{section}.{path}"), message),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            PfnError::config("<toml>", format!("{msg}{at}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PfnError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            PfnError::Config { path: p, message } if p == "<toml>" => {
                PfnError::config(path.display().to_string(), message)
            }
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| prefixed("model", e))?;
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.ablation.validate().map_err(|e| prefixed("ablation", e))?;
        if self.timing.runs < 20 {
            return Err(PfnError::config("timing.runs", "at least 20 runs are required"));
        }
        if let Some(i) = self.noise.variances.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(PfnError::config(
                format!("noise.variances[{i}]"),
                "variances must be finite and >= 0",
            ));
        }
        Ok(())
    }

    /// Applies the global `--seed` to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self.noise.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip_through_toml() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(ExperimentConfig::from_toml_str("[bogus]\n").is_err());
    }

    #[test]
    fn validation_reports_field_paths() {
        let err = ExperimentConfig::from_toml_str("[model]\nbackbone_channels = [8, 16, 0]\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("model.backbone_channels[2]"), "{err}");
        let err = ExperimentConfig::from_toml_str("[train]\nbatch_size = 0\n").unwrap_err().to_string();
        assert!(err.contains("train.batch_size"), "{err}");
        let err = ExperimentConfig::from_toml_str("[ablation]\nlayer_counts = [7]\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("ablation.layer_counts[0]"), "{err}");
    }

    #[test]
    fn ablation_grid_enumerates_and_dedups() {
        let spec = AblationSpec::default();
        let grid = spec.grid().unwrap();
        // C(5,1) + C(5,2) + C(5,3) + C(5,4) + C(5,5)
        assert_eq!(grid.len(), 31);
        assert!(grid.iter().all(|s| s.num_bands() >= 2 && s.num_bands() <= 6));
        let spec = AblationSpec {
            layer_counts: vec![2, 5],
            cells: Some(vec![vec![10.0], vec![5.0, 10.0, 50.0, 100.0], vec![10.0], vec![1.0, 5.0]]),
            ..Default::default()
        };
        let grid = spec.grid().unwrap();
        assert_eq!(grid.len(), 2);
        let empty = AblationSpec {
            layer_counts: vec![],
            ..Default::default()
        };
        assert!(empty.grid().unwrap().is_empty());
    }

    #[test]
    fn log_grid_ends_exactly_at_bounds() {
        let g = log_grid(1.0, 32.0, 6);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[5], 32.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[1] - 2.0).abs() < 1e-12);
    }
}
