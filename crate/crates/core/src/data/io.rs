//! PFM and PNG readers/writers for images, depth maps and band dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{PfnError, Result};
use crate::tensor::Planes;

fn format_err(path: &Path, message: impl Into<String>) -> PfnError {
    PfnError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes a 1- or 3-channel grid as little-endian PFM (rows stored bottom-up).
pub fn write_pfm(path: impl AsRef<Path>, grid: &Planes<f64>) -> Result<()> {
    let path = path.as_ref();
    let tag = match grid.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(format_err(path, format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    let (h, w) = grid.dims();
    let mut buf = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    buf.reserve(h * w * grid.channels() * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..grid.channels() {
                buf.extend_from_slice(&(grid.get(c, y, x) as f32).to_le_bytes());
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| PfnError::io(path, e))?;
    f.write_all(&buf).map_err(|e| PfnError::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Planes<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PfnError::io(path, e))?;
    // Three whitespace-terminated header lines.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(format_err(path, format!("not a PFM file (tag {t:?})"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(path, format!("bad PFM dimension {s:?}")))
    };
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f64 = fields[3]
        .parse()
        .map_err(|_| format_err(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let need = h * w * channels * 4;
    let body = bytes
        .get(pos..pos + need)
        .ok_or_else(|| format_err(path, "truncated PFM data"))?;
    let mut out = Planes::zeros(channels, h, w);
    let mut it = body.chunks_exact(4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..channels {
                let b: [u8; 4] = it.next().expect("length checked").try_into().expect("4 bytes");
                let v = if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                out.set(c, y, x, v as f64);
            }
        }
    }
    Ok(out)
}

/// Loads an 8- or 16-bit PNG (or any format `image` decodes) as RGB in `[0, 1]`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Planes<f64>> {
    let path = path.as_ref();
    let img = image::open(path)?.into_rgb32f();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    Ok(Planes::from_fn(3, h, w, |c, y, x| {
        img.get_pixel(x as u32, y as u32).0[c] as f64
    }))
}

/// 8-bit PNG of a 1- or 3-channel grid, values clipped to `[lo, hi]`.
pub fn write_png(path: impl AsRef<Path>, grid: &Planes<f64>, lo: f64, hi: f64) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = grid.dims();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let q = |v: f64| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
    match grid.channels() {
        1 => {
            let buf = ImageBuffer::<Luma<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
                Luma([q(grid.get(0, y as usize, x as usize))])
            });
            buf.save(path)?;
        }
        3 => {
            let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([q(grid.get(0, y, x)), q(grid.get(1, y, x)), q(grid.get(2, y, x))])
            });
            buf.save(path)?;
        }
        c => return Err(format_err(path, format!("PNG export needs 1 or 3 channels, not {c}"))),
    }
    Ok(())
}

/// 16-bit single-channel PNG; stored units are `value / scale`.
pub fn write_depth_png16(path: impl AsRef<Path>, depth: &Planes<f64>, scale: f64) -> Result<()> {
    let (h, w) = depth.dims();
    let buf = ImageBuffer::<Luma<u16>, _>::from_fn(w as u32, h as u32, |x, y| {
        let v = depth.get(0, y as usize, x as usize) / scale;
        Luma([v.round().clamp(0.0, u16::MAX as f64) as u16])
    });
    buf.save(path.as_ref())?;
    Ok(())
}

/// 16-bit single-channel PNG scaled to meters by `scale`.
pub fn read_depth_png16(path: impl AsRef<Path>, scale: f64) -> Result<Planes<f64>> {
    let img = image::open(path.as_ref())?.into_luma16();
    let (w, h) = img.dimensions();
    Ok(Planes::from_fn(1, h as usize, w as usize, |_, y, x| {
        img.get_pixel(x as u32, y as u32).0[0] as f64 * scale
    }))
}
