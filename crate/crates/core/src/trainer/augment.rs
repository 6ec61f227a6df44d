//! Random image transforms for building augmented views.

use serde::{Deserialize, Serialize};

use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub crop: bool,
    pub rotate: bool,
    pub zoom: bool,
    pub noise: bool,
    pub color: bool,
    /// Probability that each enabled transform fires.
    pub apply_prob: f64,
    pub crop_pad: usize,
    pub max_rotation_deg: f64,
    pub zoom_range: [f64; 2],
    pub noise_sigma: f64,
    pub contrast_range: [f64; 2],
    pub brightness_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop: true,
            rotate: true,
            zoom: true,
            noise: true,
            color: true,
            apply_prob: 0.5,
            crop_pad: 4,
            max_rotation_deg: 15.0,
            zoom_range: [0.9, 1.1],
            noise_sigma: 0.05,
            contrast_range: [0.8, 1.2],
            brightness_range: [-0.1, 0.1],
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            crop: false,
            rotate: false,
            zoom: false,
            noise: false,
            color: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let ok = (0.0..=1.0).contains(&self.apply_prob)
            && self.max_rotation_deg >= 0.0
            && self.noise_sigma >= 0.0
            && range_ok(self.zoom_range)
            && self.zoom_range[0] > 0.0
            && range_ok(self.contrast_range)
            && range_ok(self.brightness_range);
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!(
                "augment: invalid ranges in {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    Crop,
    Rotate,
    Zoom,
    Noise,
    Color,
}

/// Applies each enabled transform with probability `apply_prob`, in an
/// rng-shuffled order. Shape is preserved.
pub fn augment(image: &Tensor, rng: &mut Rng, cfg: &AugmentConfig) -> Tensor {
    let mut order = [
        Transform::Crop,
        Transform::Rotate,
        Transform::Zoom,
        Transform::Noise,
        Transform::Color,
    ];
    rng.shuffle(&mut order);
    let mut x = image.clone();
    for t in order {
        let enabled = match t {
            Transform::Crop => cfg.crop,
            Transform::Rotate => cfg.rotate,
            Transform::Zoom => cfg.zoom,
            Transform::Noise => cfg.noise,
            Transform::Color => cfg.color,
        };
        if !enabled || !rng.bernoulli(cfg.apply_prob) {
            continue;
        }
        x = match t {
            Transform::Crop => {
                let p = cfg.crop_pad as i64;
                let dy = rng.below(2 * cfg.crop_pad + 1) as i64 - p;
                let dx = rng.below(2 * cfg.crop_pad + 1) as i64 - p;
                resample(&x, |y, xx| (y + dy as f64, xx + dx as f64))
            }
            Transform::Rotate => {
                let theta = rng
                    .uniform_range(-cfg.max_rotation_deg, cfg.max_rotation_deg)
                    .to_radians();
                let (s, c) = theta.sin_cos();
                let (cy, cx) = center(&x);
                resample(&x, |y, xx| {
                    let (ry, rx) = (y - cy, xx - cx);
                    (cy + c * ry - s * rx, cx + s * ry + c * rx)
                })
            }
            Transform::Zoom => {
                let z = rng.uniform_range(cfg.zoom_range[0], cfg.zoom_range[1]);
                let (cy, cx) = center(&x);
                resample(&x, |y, xx| (cy + (y - cy) / z, cx + (xx - cx) / z))
            }
            Transform::Noise => {
                x.data_mut()
                    .iter_mut()
                    .for_each(|v| *v += cfg.noise_sigma * rng.normal());
                x
            }
            Transform::Color => {
                let channels = x.shape()[0];
                let plane = x.len() / channels;
                for px in x.data_mut().chunks_exact_mut(plane) {
                    let contrast = rng.uniform_range(cfg.contrast_range[0], cfg.contrast_range[1]);
                    let shift = rng.uniform_range(cfg.brightness_range[0], cfg.brightness_range[1]);
                    let mean = px.iter().sum::<f64>() / plane as f64;
                    px.iter_mut()
                        .for_each(|v| *v = (*v - mean) * contrast + mean + shift);
                }
                x
            }
        };
    }
    x
}

fn center(x: &Tensor) -> (f64, f64) {
    let s = x.shape();
    ((s[1] as f64 - 1.0) / 2.0, (s[2] as f64 - 1.0) / 2.0)
}

/// Nearest-neighbour inverse mapping: output `(y, x)` reads source
/// `map(y, x)`; out-of-range sources read zero.
fn resample(x: &Tensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = x.data();
    let mut out = Tensor::zeros(x.shape());
    let dst = out.data_mut();
    for y in 0..h {
        for xx in 0..w {
            let (sy, sx) = map(y as f64, xx as f64);
            let (sy, sx) = (sy.round(), sx.round());
            if sy < 0.0 || sx < 0.0 || sy >= h as f64 || sx >= w as f64 {
                continue;
            }
            let (sy, sx) = (sy as usize, sx as usize);
            for ch in 0..c {
                dst[(ch * h + y) * w + xx] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    out
}
