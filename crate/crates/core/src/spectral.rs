//! 2D Fourier transforms and radial frequency-band division.
//!
//! Spectra are kept in the unshifted FFT layout (DC at index `(0, 0)`).
//! Radial frequency is measured on the centered grid in cycles per image:
//! bin `(ky, kx)` maps to signed frequencies `(u, v)` (cycles over the image
//! height and width respectively) and `r = sqrt(u² + v²)`.
//!
//! Bands are ideal annuli `[f_lo, f_hi)`. A schedule of `N` cut-offs yields
//! `N + 1` masks that are pairwise disjoint and cover every bin, so the bands
//! of an image always sum back to the image.

use std::fmt::Debug;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::num_traits::Float;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{PfnError, Result};
use crate::tensor::Planes;

/// Real scalar usable by the spectral routines (`f32` or `f64`).
pub trait Real: FftNum + Float + Default + Debug {}
impl<T: FftNum + Float + Default + Debug> Real for T {}

fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 converts to any float type")
}

/// Signed frequency of FFT bin `k` on an axis of length `n`.
#[inline]
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial frequency (cycles per image) of bin `(ky, kx)` on an `h × w` grid.
#[inline]
pub fn radial_frequency(h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let u = signed_frequency(ky, h);
    let v = signed_frequency(kx, w);
    (u * u + v * v).sqrt()
}

/// Largest representable radial cut-off: `min(H, W) / 2`.
pub fn nyquist(h: usize, w: usize) -> f64 {
    h.min(w) as f64 / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    height: usize,
    width: usize,
    coefficients: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn from_parts(height: usize, width: usize, coefficients: Vec<Complex<T>>) -> Result<Self> {
        if coefficients.len() != height * width {
            return Err(PfnError::ShapeMismatch(format!(
                "{} coefficients declared as {height}x{width}",
                coefficients.len()
            )));
        }
        Ok(Self {
            height,
            width,
            coefficients,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coefficients(&self) -> &[Complex<T>] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coefficients
    }

    #[inline]
    pub fn at(&self, ky: usize, kx: usize) -> Complex<T> {
        self.coefficients[ky * self.width + kx]
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.norm_sqr().to_f64().unwrap_or(f64::NAN))
            .sum()
    }

    /// Multiplies every coefficient by its mask weight.
    pub fn masked(&self, mask: &BandMask) -> Result<Self> {
        if mask.dims() != (self.height, self.width) {
            return Err(PfnError::ShapeMismatch(format!(
                "mask {:?} on spectrum {:?}",
                mask.dims(),
                (self.height, self.width)
            )));
        }
        let coefficients = self
            .coefficients
            .iter()
            .zip(mask.bins())
            .map(|(&c, &keep)| if keep { c } else { Complex::new(T::zero(), T::zero()) })
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            coefficients,
        })
    }
}

/// Output of [`inverse_fft2`]: the real part plus the discarded imaginary norm.
#[derive(Debug, Clone)]
pub struct RealGrid<T> {
    pub values: Planes<T>,
    /// L2 norm of the imaginary parts that were dropped.
    pub imag_norm: f64,
}

/// Cached row/column plans for repeated transforms of one grid size.
pub struct Fft2d<T: Real> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2d<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(PfnError::Dimensions(format!(
                "FFT grid must be at least 2x2, got {height}x{width}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    fn transform(&self, buf: &mut [Complex<T>], rows: &dyn Fft<T>, cols: &dyn Fft<T>) {
        let (h, w) = (self.height, self.width);
        rows.process(buf);
        let mut t = vec![Complex::new(T::zero(), T::zero()); h * w];
        transpose(buf, &mut t, h, w);
        cols.process(&mut t);
        transpose(&t, buf, w, h);
    }

    pub fn forward(&self, values: &[T]) -> Spectrum<T> {
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut buf, self.row_fwd.as_ref(), self.col_fwd.as_ref());
        Spectrum {
            height: self.height,
            width: self.width,
            coefficients: buf,
        }
    }

    pub fn inverse(&self, spectrum: &Spectrum<T>) -> Result<RealGrid<T>> {
        if (spectrum.height, spectrum.width) != (self.height, self.width) {
            return Err(PfnError::ShapeMismatch(format!(
                "spectrum {}x{} on a {}x{} plan",
                spectrum.height, spectrum.width, self.height, self.width
            )));
        }
        let mut buf = spectrum.coefficients.clone();
        self.transform(&mut buf, self.row_inv.as_ref(), self.col_inv.as_ref());
        let scale = real::<T>(1.0 / (self.height * self.width) as f64);
        let mut imag_sq = 0.0;
        let values: Vec<T> = buf
            .iter()
            .map(|c| {
                let im = (c.im * scale).to_f64().unwrap_or(f64::NAN);
                imag_sq += im * im;
                c.re * scale
            })
            .collect();
        Ok(RealGrid {
            values: Planes::from_vec(1, self.height, self.width, values)?,
            imag_norm: imag_sq.sqrt(),
        })
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn single_channel<T>(grid: &Planes<T>) -> Result<()> {
    if grid.channels() != 1 {
        return Err(PfnError::Dimensions(format!(
            "expected a single-channel grid, got {} channels",
            grid.channels()
        )));
    }
    Ok(())
}

/// Unnormalized 2D DFT of a single-channel real grid.
pub fn forward_fft2<T: Real>(grid: &Planes<T>) -> Result<Spectrum<T>> {
    single_channel(grid)?;
    let plan = Fft2d::new(grid.height(), grid.width())?;
    Ok(plan.forward(grid.data()))
}

/// Inverse DFT (scaled by `1 / HW`), keeping the real part.
pub fn inverse_fft2<T: Real>(spectrum: &Spectrum<T>) -> Result<RealGrid<T>> {
    Fft2d::new(spectrum.height, spectrum.width)?.inverse(spectrum)
}

/// Binary annular mask in unshifted layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMask {
    height: usize,
    width: usize,
    f_lo: f64,
    f_hi: f64,
    bins: Vec<bool>,
}

impl BandMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn f_lo(&self) -> f64 {
        self.f_lo
    }

    /// Upper bound; `f64::INFINITY` for the terminal band.
    pub fn f_hi(&self) -> f64 {
        self.f_hi
    }

    pub fn bins(&self) -> &[bool] {
        &self.bins
    }

    pub fn weight(&self, ky: usize, kx: usize) -> f64 {
        if self.bins[ky * self.width + kx] {
            1.0
        } else {
            0.0
        }
    }

    /// Mask as a `{0, 1}` grid.
    pub fn weights<T: Real>(&self) -> Planes<T> {
        let data = self
            .bins
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect();
        Planes::from_vec(1, self.height, self.width, data).expect("mask length matches dims")
    }

    pub fn count(&self) -> usize {
        self.bins.iter().filter(|&&b| b).count()
    }
}

/// Mask selecting `f_lo <= r < f_hi` (or `r >= f_lo` when `f_hi` is infinite).
pub fn radial_band_mask(height: usize, width: usize, f_lo: f64, f_hi: f64) -> Result<BandMask> {
    if height == 0 || width == 0 {
        return Err(PfnError::Dimensions(format!("empty {height}x{width} grid")));
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo < 0.0 || f_hi < 0.0 {
        return Err(PfnError::InvalidArgument(format!(
            "band bounds must be non-negative, got [{f_lo}, {f_hi})"
        )));
    }
    if f_lo >= f_hi || f_lo.is_infinite() {
        return Err(PfnError::InvalidArgument(format!(
            "band lower bound {f_lo} must be below upper bound {f_hi}"
        )));
    }
    let mut bins = Vec::with_capacity(height * width);
    for ky in 0..height {
        for kx in 0..width {
            let r = radial_frequency(height, width, ky, kx);
            bins.push(r >= f_lo && r < f_hi);
        }
    }
    Ok(BandMask {
        height,
        width,
        f_lo,
        f_hi,
        bins,
    })
}

/// Strictly ascending radial cut-offs in cycles per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CutoffSchedule {
    cutoffs: Vec<f64>,
}

impl CutoffSchedule {
    /// Reference resolution the published cut-offs were chosen for.
    pub const REFERENCE_SIDE: usize = 512;
    /// The five-layer schedule at the reference resolution.
    pub const REFERENCE_CUTOFFS: [f64; 4] = [5.0, 10.0, 50.0, 100.0];
    /// Cut-off candidates swept by the ablation grid at the reference resolution.
    pub const ABLATION_CANDIDATES: [f64; 5] = [1.0, 5.0, 10.0, 50.0, 100.0];

    pub fn new(cutoffs: Vec<f64>) -> Result<Self> {
        for (i, &c) in cutoffs.iter().enumerate() {
            if !c.is_finite() || c <= 0.0 {
                return Err(PfnError::Schedule(format!(
                    "cut-off {i} is {c}; cut-offs must be finite and positive"
                )));
            }
            if i > 0 && c <= cutoffs[i - 1] {
                return Err(PfnError::Schedule(format!(
                    "cut-offs must be strictly ascending, got {} then {c}",
                    cutoffs[i - 1]
                )));
            }
        }
        Ok(Self { cutoffs })
    }

    pub fn empty() -> Self {
        Self { cutoffs: vec![] }
    }

    /// `[5, 10, 50, 100]` rescaled linearly from a 512 grid to `min_side`.
    pub fn reference_for(min_side: usize) -> Self {
        Self::new(Self::REFERENCE_CUTOFFS.to_vec())
            .expect("reference schedule is valid")
            .scaled(min_side as f64 / Self::REFERENCE_SIDE as f64)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            cutoffs: self.cutoffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn num_bands(&self) -> usize {
        self.cutoffs.len() + 1
    }

    /// `[lo, hi)` of band `i`; the last band is open-ended.
    pub fn band_bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { 0.0 } else { self.cutoffs[i - 1] };
        let hi = self.cutoffs.get(i).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// Index of the band whose interval contains radial frequency `r`.
    pub fn band_of(&self, r: f64) -> usize {
        self.cutoffs.iter().take_while(|&&c| c <= r).count()
    }

    /// Rejects cut-offs at or above the grid's Nyquist radius.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        let nyq = nyquist(height, width);
        if let Some(&c) = self.cutoffs.iter().find(|&&c| c >= nyq) {
            return Err(PfnError::Schedule(format!(
                "cut-off {c} is at or above the Nyquist radius {nyq} of a {height}x{width} grid"
            )));
        }
        Ok(())
    }

    pub fn masks(&self, height: usize, width: usize) -> Result<Vec<BandMask>> {
        (0..self.num_bands())
            .map(|i| {
                let (lo, hi) = self.band_bounds(i);
                radial_band_mask(height, width, lo, hi)
            })
            .collect()
    }

    /// Short label such as `5-10-50-100` (or `none`).
    pub fn label(&self) -> String {
        if self.cutoffs.is_empty() {
            return "none".into();
        }
        self.cutoffs
            .iter()
            .map(|c| format!("{c}"))
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl TryFrom<Vec<f64>> for CutoffSchedule {
    type Error = PfnError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CutoffSchedule> for Vec<f64> {
    fn from(s: CutoffSchedule) -> Self {
        s.cutoffs
    }
}

/// Band-filtered copies of one image, lowest band first.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack<T> {
    pub bands: Vec<Planes<T>>,
    pub schedule: CutoffSchedule,
}

impl<T> BandStack<T> {
    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }
}

/// Reusable band divider for one grid size and schedule.
pub struct BandDivider<T: Real> {
    plan: Fft2d<T>,
    masks: Vec<BandMask>,
    schedule: CutoffSchedule,
}

impl<T: Real> BandDivider<T> {
    pub fn new(height: usize, width: usize, schedule: &CutoffSchedule) -> Result<Self> {
        let plan = Fft2d::new(height, width)?;
        schedule.validate_for(height, width)?;
        Ok(Self {
            plan,
            masks: schedule.masks(height, width)?,
            schedule: schedule.clone(),
        })
    }

    pub fn masks(&self) -> &[BandMask] {
        &self.masks
    }

    pub fn divide(&self, image: &Planes<T>) -> Result<BandStack<T>> {
        let (h, w) = image.dims();
        if (h, w) != (self.plan.height, self.plan.width) {
            return Err(PfnError::ShapeMismatch(format!(
                "image {h}x{w} on a divider built for {}x{}",
                self.plan.height, self.plan.width
            )));
        }
        let nb = self.masks.len();
        if nb == 1 {
            return Ok(BandStack {
                bands: vec![image.clone()],
                schedule: self.schedule.clone(),
            });
        }
        let mut bands = vec![Planes::<T>::zeros(image.channels(), h, w); nb];
        for c in 0..image.channels() {
            let spectrum = self.plan.forward(image.channel(c));
            for (band, mask) in bands.iter_mut().zip(&self.masks) {
                let filtered = self.plan.inverse(&spectrum.masked(mask)?)?;
                band.channel_mut(c).copy_from_slice(filtered.values.data());
            }
        }
        Ok(BandStack {
            bands,
            schedule: self.schedule.clone(),
        })
    }
}

/// Splits every channel of `image` into the bands of `schedule`.
pub fn divide_bands<T: Real>(image: &Planes<T>, schedule: &CutoffSchedule) -> Result<BandStack<T>> {
    BandDivider::new(image.height(), image.width(), schedule)?.divide(image)
}

/// Keeps only radial frequencies in `[f_lo, f_hi)` of every channel.
pub fn band_filter<T: Real>(image: &Planes<T>, f_lo: f64, f_hi: f64) -> Result<Planes<T>> {
    let (h, w) = image.dims();
    let plan = Fft2d::new(h, w)?;
    let mask = radial_band_mask(h, w, f_lo, f_hi)?;
    let mut out = Planes::zeros(image.channels(), h, w);
    for c in 0..image.channels() {
        let filtered = plan.inverse(&plan.forward(image.channel(c)).masked(&mask)?)?;
        out.channel_mut(c).copy_from_slice(filtered.values.data());
    }
    Ok(out)
}

/// Element-wise sum of all bands.
pub fn reconstruct<T: Real>(stack: &BandStack<T>) -> Result<Planes<T>> {
    let first = stack
        .bands
        .first()
        .ok_or_else(|| PfnError::ShapeMismatch("empty band stack".into()))?;
    let mut out = first.clone();
    for (i, band) in stack.bands.iter().enumerate().skip(1) {
        if !band.same_shape(first) {
            return Err(PfnError::ShapeMismatch(format!(
                "band {i} is {}x{}x{}, band 0 is {}x{}x{}",
                band.channels(),
                band.height(),
                band.width(),
                first.channels(),
                first.height(),
                first.width()
            )));
        }
        for (o, &v) in out.data_mut().iter_mut().zip(band.data()) {
            *o = *o + v;
        }
    }
    Ok(out)
}
