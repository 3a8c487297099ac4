use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::io;
use super::RgbdPair;
use crate::error::{PfnError, Result};
use crate::tensor::{DepthMap, Mask, Planes, RgbImage};

/// Target resolution family for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetProfile {
    /// 512 x 512.
    NyuLike,
    /// 620 wide, 188 tall.
    KittiLike,
    /// 512 x 512.
    Make3dLike,
    /// Keep whatever size the files have.
    Native,
}

impl DatasetProfile {
    /// `(height, width)` or `None` for [`DatasetProfile::Native`].
    pub fn size(self) -> Option<(usize, usize)> {
        match self {
            DatasetProfile::NyuLike | DatasetProfile::Make3dLike => Some((512, 512)),
            DatasetProfile::KittiLike => Some((188, 620)),
            DatasetProfile::Native => None,
        }
    }
}

impl fmt::Display for DatasetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetProfile::NyuLike => "nyu_like",
            DatasetProfile::KittiLike => "kitti_like",
            DatasetProfile::Make3dLike => "make3d_like",
            DatasetProfile::Native => "native",
        })
    }
}

impl FromStr for DatasetProfile {
    type Err = PfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nyu_like" => Ok(Self::NyuLike),
            "kitti_like" => Ok(Self::KittiLike),
            "make3d_like" => Ok(Self::Make3dLike),
            "native" => Ok(Self::Native),
            _ => Err(PfnError::InvalidArgument(format!(
                "unknown dataset profile {s:?} (nyu_like, kitti_like, make3d_like, native)"
            ))),
        }
    }
}

/// Bilinear resize with half-pixel centers; identity when the size already matches.
pub fn resize_bilinear(img: &Planes<f64>, h: usize, w: usize) -> Planes<f64> {
    let (ih, iw) = img.dims();
    if (ih, iw) == (h, w) {
        return img.clone();
    }
    let (sy, sx) = (ih as f64 / h as f64, iw as f64 / w as f64);
    let coord = |dst: usize, scale: f64, n: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let rows: Vec<_> = (0..h).map(|y| coord(y, sy, ih)).collect();
    let cols: Vec<_> = (0..w).map(|x| coord(x, sx, iw)).collect();
    Planes::from_fn(img.channels(), h, w, |c, y, x| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
        let bot = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Nearest-neighbour resize; never invents values across boundaries.
pub fn resize_nearest(img: &Planes<f64>, h: usize, w: usize) -> Planes<f64> {
    let (ih, iw) = img.dims();
    if (ih, iw) == (h, w) {
        return img.clone();
    }
    let pick = |dst: usize, n_in: usize, n_out: usize| {
        (((dst as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1)
    };
    Planes::from_fn(img.channels(), h, w, |c, y, x| {
        img.get(c, pick(y, ih, h), pick(x, iw, w))
    })
}

/// Resizes an already-decoded pair to the profile and rebuilds the mask.
pub fn preprocess_pair(
    image: RgbImage,
    depth: DepthMap,
    profile: DatasetProfile,
    source_id: impl Into<String>,
) -> Result<RgbdPair> {
    if image.channels() != 3 {
        return Err(PfnError::ShapeMismatch(format!(
            "image has {} channels, expected 3",
            image.channels()
        )));
    }
    if depth.channels() != 1 {
        return Err(PfnError::ShapeMismatch(format!(
            "depth has {} channels, expected 1",
            depth.channels()
        )));
    }
    let source_id = source_id.into();
    let aspect = |(h, w): (usize, usize)| w as f64 / h as f64;
    let (ai, ad) = (aspect(image.dims()), aspect(depth.dims()));
    if ((ai - ad) / ai).abs() > 0.05 {
        log::warn!(
            "{source_id}: image {:?} and depth {:?} differ in aspect ratio",
            image.dims(),
            depth.dims()
        );
    }
    let (h, w) = profile.size().unwrap_or(image.dims());
    let image = resize_bilinear(&image, h, w).map(|v| v.clamp(0.0, 1.0));
    let depth = resize_nearest(&depth, h, w);
    let mask = Mask::from_depth(&depth);
    Ok(RgbdPair {
        image,
        depth,
        mask,
        source_id,
    })
}

/// Reads an image (PNG or PFM) and a depth map (PFM, or 16-bit PNG times
/// `depth_scale`) and conforms them to `profile`.
pub fn load_rgbd_pair(
    image_path: impl AsRef<Path>,
    depth_path: impl AsRef<Path>,
    profile: DatasetProfile,
    depth_scale: f64,
) -> Result<RgbdPair> {
    let (ip, dp) = (image_path.as_ref(), depth_path.as_ref());
    let is_pfm = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let image = if is_pfm(ip) {
        io::read_pfm(ip)?
    } else {
        io::read_rgb_png(ip)?
    };
    if image.channels() != 3 {
        return Err(PfnError::Format {
            path: ip.to_path_buf(),
            message: format!("expected an RGB image, got {} channels", image.channels()),
        });
    }
    let depth = if is_pfm(dp) {
        io::read_pfm(dp)?.map(|v| v * depth_scale)
    } else {
        io::read_depth_png16(dp, depth_scale)?
    };
    if depth.channels() != 1 {
        return Err(PfnError::Format {
            path: dp.to_path_buf(),
            message: format!("expected a single-channel depth map, got {}", depth.channels()),
        });
    }
    let id = ip
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches("_image").to_string())
        .unwrap_or_default();
    preprocess_pair(image, depth, profile, id)
}

/// Invalidates pixels deeper than `cap_meters`; depth values are untouched.
pub fn depth_cap(depth: &DepthMap, mask: &Mask, cap_meters: f64) -> Result<Mask> {
    if cap_meters.is_nan() || cap_meters <= 0.0 {
        return Err(PfnError::InvalidArgument(format!(
            "depth cap must be positive, got {cap_meters}"
        )));
    }
    if depth.dims() != mask.dims() {
        return Err(PfnError::ShapeMismatch("depth and mask differ in size".into()));
    }
    let mut out = mask.clone();
    for (m, &d) in out.data_mut().iter_mut().zip(depth.data()) {
        if d > cap_meters {
            *m = false;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_examples() {
        let d = DepthMap::from_vec(1, 1, 3, vec![60.0, 75.0, 85.0]).unwrap();
        let m = Mask::all(1, 3, true);
        assert_eq!(depth_cap(&d, &m, f64::INFINITY).unwrap(), m);
        assert_eq!(depth_cap(&d, &m, 80.0).unwrap().data(), &[true, true, false]);
        assert_eq!(depth_cap(&d, &m, 70.0).unwrap().data(), &[true, false, false]);
        assert_eq!(d.data(), &[60.0, 75.0, 85.0]);
        assert!(depth_cap(&d, &m, 0.0).is_err());
    }

    #[test]
    fn kitti_profile_is_188_by_620() {
        let img = RgbImage::filled(3, 375, 1242, 0.5);
        let d = DepthMap::filled(1, 375, 1242, 10.0);
        let p = preprocess_pair(img, d, DatasetProfile::KittiLike, "k").unwrap();
        assert_eq!(p.image.dims(), (188, 620));
        assert_eq!(p.depth.dims(), (188, 620));
    }

    #[test]
    fn preprocessing_is_idempotent() {
        let img = RgbImage::from_fn(3, 9, 13, |c, y, x| ((c * 5 + y * 3 + x) % 11) as f64 / 10.0);
        let d = DepthMap::from_fn(1, 20, 26, |_, y, x| 1.0 + (y * 26 + x) as f64 * 0.01);
        let once = preprocess_pair(img, d, DatasetProfile::NyuLike, "a").unwrap();
        let twice = preprocess_pair(
            once.image.clone(),
            once.depth.clone(),
            DatasetProfile::NyuLike,
            "a",
        )
        .unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn nearest_keeps_original_values() {
        let d = DepthMap::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = resize_nearest(&d, 5, 7);
        assert!(r.data().iter().all(|v| [1.0, 2.0, 3.0, 4.0].contains(v)));
        let b = resize_bilinear(&RgbImage::filled(3, 4, 4, 0.25), 9, 3);
        assert!(b.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
