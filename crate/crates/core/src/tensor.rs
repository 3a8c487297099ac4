//! Planar multi-channel grids shared by every module.
//!
//! Storage is channel-major: element `(c, y, x)` lives at
//! `c * height * width + y * width + x`.

use crate::error::{PfnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Planes<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// RGB image with values in `[0, 1]`.
pub type RgbImage = Planes<f64>;
/// Single-channel depth in meters.
pub type DepthMap = Planes<f64>;
/// Activations inside the network.
pub type FeatureMap = Planes<f64>;

impl<T: Copy + Default> Planes<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::default(); channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(PfnError::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Copies out a single channel as a one-channel grid.
    pub fn channel_planes(&self, c: usize) -> Planes<T> {
        Planes {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    /// Stacks one-channel (or multi-channel) grids along the channel axis.
    pub fn concat(parts: &[&Planes<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| PfnError::ShapeMismatch("nothing to concatenate".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.dims() != (h, w) {
                return Err(PfnError::ShapeMismatch(format!(
                    "cannot concatenate {:?} with {:?}",
                    p.dims(),
                    (h, w)
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> Planes<U> {
        Planes {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Planes<T> {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape<U>(&self, other: &Planes<U>) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

impl<T: Copy> Planes<T> {
    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: T) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }
}

impl Planes<f64> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel validity flags for a depth map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn all(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(PfnError::ShapeMismatch(format!(
                "{} mask values for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Valid where the depth is finite and strictly positive.
    pub fn from_depth(depth: &DepthMap) -> Self {
        Self {
            height: depth.height(),
            width: depth.width(),
            data: depth
                .channel(0)
                .iter()
                .map(|&d| d.is_finite() && d > 0.0)
                .collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_major() {
        let p = Planes::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(p.get(1, 2, 3), 123.0);
        assert_eq!(p.channel(1)[0], 100.0);
        assert_eq!(p.data()[12], 100.0);
    }

    #[test]
    fn concat_rejects_mismatched_dims() {
        let a = Planes::<f64>::zeros(1, 2, 2);
        let b = Planes::<f64>::zeros(1, 2, 3);
        assert!(Planes::concat(&[&a, &b]).is_err());
        let c = Planes::concat(&[&a, &a]).unwrap();
        assert_eq!(c.channels(), 2);
    }

    #[test]
    fn mask_from_depth_drops_holes() {
        let d = Planes::from_vec(1, 1, 4, vec![1.0, 0.0, -2.0, f64::NAN]).unwrap();
        let m = Mask::from_depth(&d);
        assert_eq!(m.data(), &[true, false, false, false]);
    }
}
