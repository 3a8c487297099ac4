//! RGB-D pairs: on-disk datasets, synthetic scenes and noise injection.
//!
//! On-disk layout, one directory per split:
//!
//! ```text
//! root/{split}/manifest.csv        id,depth_scale,profile
//! root/{split}/{id}.png            image (or {id}_image.pfm)
//! root/{split}/{id}.pfm            depth in units of depth_scale meters
//!                                  (or {id}_depth.png, 16-bit)
//! ```
//!
//! Without a manifest every `{id}.png` / `{id}_image.pfm` with a matching
//! depth file is loaded at scale 1.

pub mod io;
mod noise;
mod preprocess;
mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use noise::{add_gaussian_noise, NoiseSpec};
pub use preprocess::{
    depth_cap, load_rgbd_pair, preprocess_pair, resize_bilinear, resize_nearest, DatasetProfile,
};
pub use synth::{synth_scene, SceneSpec};

use crate::error::{PfnError, Result};
use crate::tensor::{DepthMap, Mask, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbdPair {
    pub image: RgbImage,
    pub depth: DepthMap,
    pub mask: Mask,
    pub source_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    depth_scale: f64,
    profile: DatasetProfile,
}

const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<RgbdPair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `count` scenes of `side x side` pixels with per-scene seeds derived from `seed`.
    pub fn synthetic(count: usize, side: usize, seed: u64) -> Result<Self> {
        let pairs = (0..count as u64)
            .map(|i| synth_scene(&SceneSpec::new(side, seed.wrapping_mul(1_000_003).wrapping_add(i))))
            .collect::<Result<_>>()?;
        Ok(Self { pairs })
    }

    /// Holds out the last `ceil(len * val_fraction)` pairs for validation.
    pub fn split(&self, val_fraction: f64) -> (Dataset, Dataset) {
        let n_val = ((self.len() as f64 * val_fraction).ceil() as usize).min(self.len());
        let cut = self.len() - n_val;
        (
            Dataset {
                pairs: self.pairs[..cut].to_vec(),
            },
            Dataset {
                pairs: self.pairs[cut..].to_vec(),
            },
        )
    }

    /// Input resolution shared by every pair.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self
            .pairs
            .first()
            .ok_or_else(|| PfnError::InvalidArgument("dataset is empty".into()))?;
        let dims = first.image.dims();
        if let Some(p) = self.pairs.iter().find(|p| p.image.dims() != dims) {
            return Err(PfnError::ShapeMismatch(format!(
                "{} is {:?}, {} is {:?}",
                p.source_id,
                p.image.dims(),
                first.source_id,
                dims
            )));
        }
        Ok(dims)
    }

    /// Loads `root/split` following the layout in the module docs.
    /// `profile` overrides the manifest's per-record profile.
    pub fn load_dir(
        root: impl AsRef<Path>,
        split: &str,
        profile: Option<DatasetProfile>,
    ) -> Result<Self> {
        let dir = root.as_ref().join(split);
        if !dir.is_dir() {
            return Err(PfnError::io(
                &dir,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "dataset split directory not found",
                ),
            ));
        }
        let manifest = dir.join(MANIFEST);
        let records: Vec<ManifestRecord> = if manifest.exists() {
            let mut rdr = csv::Reader::from_path(&manifest)?;
            rdr.deserialize().collect::<std::result::Result<_, _>>()?
        } else {
            discover_ids(&dir)?
                .into_iter()
                .map(|id| ManifestRecord {
                    id,
                    depth_scale: 1.0,
                    profile: DatasetProfile::Native,
                })
                .collect()
        };
        let pairs = records
            .iter()
            .map(|r| {
                let image = first_existing(&dir, &[format!("{}_image.pfm", r.id), format!("{}.png", r.id)])?;
                let depth = first_existing(&dir, &[format!("{}.pfm", r.id), format!("{}_depth.png", r.id)])?;
                let mut pair = load_rgbd_pair(&image, &depth, profile.unwrap_or(r.profile), r.depth_scale)?;
                pair.source_id = r.id.clone();
                Ok(pair)
            })
            .collect::<Result<_>>()?;
        Ok(Self { pairs })
    }

    /// Writes exact PFM files plus a manifest under `root/split`.
    pub fn write_dir(&self, root: impl AsRef<Path>, split: &str) -> Result<()> {
        let dir = root.as_ref().join(split);
        std::fs::create_dir_all(&dir).map_err(|e| PfnError::io(&dir, e))?;
        let mut wtr = csv::Writer::from_path(dir.join(MANIFEST))?;
        for p in &self.pairs {
            io::write_pfm(dir.join(format!("{}_image.pfm", p.source_id)), &p.image)?;
            io::write_pfm(dir.join(format!("{}.pfm", p.source_id)), &p.depth)?;
            wtr.serialize(ManifestRecord {
                id: p.source_id.clone(),
                depth_scale: 1.0,
                profile: DatasetProfile::Native,
            })?;
        }
        wtr.flush().map_err(|e| PfnError::io(dir.join(MANIFEST), e))
    }
}

fn first_existing(dir: &Path, names: &[String]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| {
            PfnError::io(
                dir.join(&names[0]),
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("none of {names:?} exist")),
            )
        })
}

fn discover_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = vec![];
    for entry in std::fs::read_dir(dir).map_err(|e| PfnError::io(dir, e))? {
        let name = entry.map_err(|e| PfnError::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        let id = if let Some(id) = name.strip_suffix("_image.pfm") {
            id
        } else if let Some(id) = name.strip_suffix(".png") {
            if id.ends_with("_depth") {
                continue;
            }
            id
        } else {
            continue;
        };
        if !ids.iter().any(|i| i == id) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}
