use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PfnError, Result};
use crate::spectral::CutoffSchedule;

/// Architecture of a pyramid frequency network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `(height, width)` of the working resolution.
    pub input_size: (usize, usize),
    pub schedule: CutoffSchedule,
    /// Encoder widths, one per resolution level (finest first).
    pub backbone_channels: Vec<usize>,
    pub sarrm_channels: usize,
    pub band_feature_channels: usize,
    pub seed: u64,
    /// Depth (meters) the backbone head outputs before any training.
    #[serde(default = "default_init_depth")]
    pub init_depth: f64,
}

fn default_init_depth() -> f64 {
    3.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(64, CutoffSchedule::reference_for(64))
    }
}

impl ModelConfig {
    /// Compact square configuration used for CPU-scale experiments.
    pub fn desk(side: usize, schedule: CutoffSchedule) -> Self {
        Self {
            input_size: (side, side),
            schedule,
            backbone_channels: vec![8, 16, 24, 32],
            sarrm_channels: 8,
            band_feature_channels: 8,
            seed: 0,
            init_depth: default_init_depth(),
        }
    }

    pub fn num_bands(&self) -> usize {
        self.schedule.num_bands()
    }

    pub fn num_stages(&self) -> usize {
        self.num_bands() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h < 2 || w < 2 {
            return Err(PfnError::config(
                "input_size",
                format!("must be at least 2x2, got {h}x{w}"),
            ));
        }
        if self.backbone_channels.is_empty() {
            return Err(PfnError::config(
                "backbone_channels",
                "at least one level is required",
            ));
        }
        for (i, &c) in self.backbone_channels.iter().enumerate() {
            if c < 1 {
                return Err(PfnError::config(
                    format!("backbone_channels[{i}]"),
                    "channel width must be >= 1",
                ));
            }
        }
        if self.sarrm_channels < 1 {
            return Err(PfnError::config("sarrm_channels", "channel width must be >= 1"));
        }
        if self.band_feature_channels < 1 {
            return Err(PfnError::config(
                "band_feature_channels",
                "channel width must be >= 1",
            ));
        }
        if !(self.init_depth.is_finite() && self.init_depth > 0.0) {
            return Err(PfnError::config("init_depth", "must be finite and positive"));
        }
        self.schedule
            .validate_for(h, w)
            .map_err(|e| PfnError::config("schedule", e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same architecture at another resolution; cut-offs scale with the
    /// shorter side so the band layout stays proportional.
    pub fn at_resolution(&self, height: usize, width: usize) -> Self {
        let old = self.input_size.0.min(self.input_size.1) as f64;
        let new = height.min(width) as f64;
        Self {
            input_size: (height, width),
            schedule: self.schedule.scaled(new / old),
            ..self.clone()
        }
    }
}
