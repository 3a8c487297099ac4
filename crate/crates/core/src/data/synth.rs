//! Procedural RGB-D scenes.
//!
//! A ground plane recedes to a horizon, a back wall sits at the far limit,
//! and fronto-parallel rectangles/ellipses stand on the ground at sampled
//! depths (apparent size shrinks with distance). Radiance follows an
//! aerial-perspective model: surface colour is attenuated by
//! `t = exp(-β d)` and replaced by a bluish airlight, so distant surfaces
//! are brighter and bluer. Ground texture shrinks with distance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RgbdPair;
use crate::error::{PfnError, Result};
use crate::tensor::{DepthMap, Mask, RgbImage};

const AIRLIGHT: [f64; 3] = [0.72, 0.80, 0.92];
/// Fraction of radiance left at the far limit.
const FAR_TRANSMISSION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// `(height, width)`.
    pub size: (usize, usize),
    pub num_objects: usize,
    /// `(near, far)` in meters.
    pub depth_range: (f64, f64),
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(side: usize, seed: u64) -> Self {
        Self {
            size: (side, side),
            num_objects: 4,
            depth_range: (1.0, 10.0),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_objects == 0 {
            return Err(PfnError::config("num_objects", "must be at least 1"));
        }
        let (near, far) = self.depth_range;
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(PfnError::config(
                "depth_range",
                format!("need 0 < near < far, got ({near}, {far})"),
            ));
        }
        if self.size.0 < 4 || self.size.1 < 4 {
            return Err(PfnError::config("size", "scenes must be at least 4x4"));
        }
        Ok(())
    }
}

struct Surface {
    albedo: [f64; 3],
    stripe_amp: f64,
    stripe_freq: f64,
    stripe_angle: f64,
}

impl Surface {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let base = rng.gen_range(0.08..0.55);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.04..0.04));
        Self {
            albedo: std::array::from_fn(|c| (base + tint[c]).clamp(0.0, 1.0)),
            stripe_amp: rng.gen_range(0.0..0.12),
            stripe_freq: rng.gen_range(0.15..0.8),
            stripe_angle: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }

    fn color(&self, y: f64, x: f64) -> [f64; 3] {
        let (s, c) = self.stripe_angle.sin_cos();
        let m = 1.0 + self.stripe_amp * (self.stripe_freq * (x * c + y * s)).sin();
        self.albedo.map(|a| a * m)
    }
}

/// Generates one scene; identical output for identical specs.
pub fn synth_scene(spec: &SceneSpec) -> Result<RgbdPair> {
    spec.validate()?;
    let (h, w) = spec.size;
    let (near, far) = spec.depth_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beta = -FAR_TRANSMISSION.ln() / far;

    let horizon = h as f64 * rng.gen_range(0.2..0.45);
    // Ground depth at image row `y`; the bottom row sits at `near`.
    let ground_depth = |y: f64| -> f64 {
        let below = y + 0.5 - horizon;
        if below <= 0.0 {
            far
        } else {
            (near * (h as f64 - horizon) / below).clamp(near, far)
        }
    };
    // Focal length in pixels: a 1 m object at `near` spans ~45% of the height.
    let focal = 0.45 * h as f64 * near;

    let mut depth = DepthMap::zeros(1, h, w);
    let mut albedo = RgbImage::zeros(3, h, w);

    let wall = Surface::random(&mut rng);
    let ground_dark = rng.gen_range(0.12..0.3);
    let ground_light = ground_dark + rng.gen_range(0.1..0.25);
    let tile = rng.gen_range(0.3..0.7);
    for y in 0..h {
        let gd = ground_depth(y as f64);
        for x in 0..w {
            depth.set(0, y, x, gd);
            let col = if gd >= far {
                wall.color(y as f64, x as f64)
            } else {
                // Checker on the ground plane in metric coordinates.
                let gx = (x as f64 + 0.5 - w as f64 / 2.0) * gd / focal;
                let cell = (gx / tile).floor() as i64 + (gd / tile).floor() as i64;
                let v = if cell.rem_euclid(2) == 0 {
                    ground_dark
                } else {
                    ground_light
                };
                [v * 0.95, v, v * 0.9]
            };
            for (c, v) in col.into_iter().enumerate() {
                albedo.set(c, y, x, v);
            }
        }
    }

    struct Object {
        depth: f64,
        cx: f64,
        base: f64,
        half_w: f64,
        height: f64,
        ellipse: bool,
        surface: Surface,
    }
    let mut objects: Vec<Object> = (0..spec.num_objects)
        .map(|_| {
            let d = near + (far - near) * rng.gen_range(0.05f64..0.75).powf(1.5);
            let base = horizon - 0.5 + near * (h as f64 - horizon) / d;
            let scale = focal / d;
            Object {
                depth: d,
                cx: rng.gen_range(0.0..w as f64),
                base: base.min(h as f64),
                half_w: 0.5 * scale * rng.gen_range(0.4..1.4),
                height: scale * rng.gen_range(0.5..1.6),
                ellipse: rng.gen_bool(0.5),
                surface: Surface::random(&mut rng),
            }
        })
        .collect();
    // Painter's order: far objects first.
    objects.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for o in &objects {
        let top = o.base - o.height;
        let y0 = top.floor().max(0.0) as usize;
        let y1 = (o.base.ceil() as usize).min(h);
        let x0 = (o.cx - o.half_w).floor().max(0.0) as usize;
        let x1 = ((o.cx + o.half_w).ceil() as usize).min(w);
        for y in y0..y1 {
            let py = y as f64 + 0.5;
            if py < top || py > o.base {
                continue;
            }
            for x in x0..x1 {
                let px = x as f64 + 0.5;
                let inside = if o.ellipse {
                    let dx = (px - o.cx) / o.half_w;
                    let dy = (py - (top + o.base) / 2.0) / (o.height / 2.0);
                    dx * dx + dy * dy <= 1.0
                } else {
                    (px - o.cx).abs() <= o.half_w
                };
                if inside {
                    depth.set(0, y, x, o.depth);
                    for (c, v) in o.surface.color(py - top, px - o.cx).into_iter().enumerate() {
                        albedo.set(c, y, x, v);
                    }
                }
            }
        }
    }

    let image = RgbImage::from_fn(3, h, w, |c, y, x| {
        let t = (-beta * depth.get(0, y, x)).exp();
        let v = albedo.get(c, y, x) * t + AIRLIGHT[c] * (1.0 - t);
        // Values exactly representable in f32 so PFM round trips are lossless.
        (v.clamp(0.0, 1.0) as f32) as f64
    });
    let depth = depth.map(|d| (d.clamp(near, far) as f32) as f64);
    let mask = Mask::from_depth(&depth);
    Ok(RgbdPair {
        image,
        depth,
        mask,
        source_id: format!("synth-{:06}", spec.seed),
    })
}
