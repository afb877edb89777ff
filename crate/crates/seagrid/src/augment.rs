//! Patch augmentations: flips, color jitter, Gaussian blur, random crop.
//!
//! Every augmentation is a deterministic function of (input, config, rng
//! state); the contrastive pretext task and few-shot fine-tuning both draw
//! their views from here.

use crate::dataset::{Patch, Pixels};
use crate::error::{Error, Result};
use rand::Rng;

/// Augmentation switches and parameter ranges. Probabilities of zero turn
/// an operation off entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct AugConfig {
    pub hflip_p: f64,
    pub vflip_p: f64,
    /// Probability that color jitter is applied at all.
    pub jitter_p: f64,
    /// Jitter amplitudes: factors are drawn from `[1-a, 1+a]` (brightness,
    /// contrast, saturation) and the hue shift from `[-a, a]` turns.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub blur_p: f64,
    /// Gaussian blur sigma range, sampled uniformly.
    pub blur_sigma: (f64, f64),
    /// Optional random crop to (height, width).
    pub crop: Option<(usize, usize)>,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            hflip_p: 0.5,
            vflip_p: 0.5,
            jitter_p: 1.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.2,
            blur_p: 0.5,
            blur_sigma: (0.0, 1.5),
            crop: None,
        }
    }
}

impl AugConfig {
    /// Identity configuration: every probability zero, no crop.
    pub fn none() -> Self {
        AugConfig {
            hflip_p: 0.0,
            vflip_p: 0.0,
            jitter_p: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            blur_p: 0.0,
            blur_sigma: (0.0, 0.0),
            crop: None,
        }
    }

    /// The fine-tuning recipe: color-channel, contrast, blur, brightness,
    /// hue and saturation jitter plus geometric scaling and left/right
    /// flipping (scaling realized as a random crop to `crop_to`).
    pub fn finetune(crop_to: Option<(usize, usize)>) -> Self {
        AugConfig {
            hflip_p: 0.5,
            vflip_p: 0.0,
            jitter_p: 1.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.1,
            blur_p: 0.5,
            blur_sigma: (0.0, 1.0),
            crop: crop_to,
        }
    }

    pub fn validate(&self, patch_size: (usize, usize)) -> Result<()> {
        for (name, p) in [
            ("hflip_p", self.hflip_p),
            ("vflip_p", self.vflip_p),
            ("jitter_p", self.jitter_p),
            ("blur_p", self.blur_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::data(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        if self.blur_sigma.0 > self.blur_sigma.1 || self.blur_sigma.0 < 0.0 {
            return Err(Error::data("blur sigma range must be 0 <= lo <= hi"));
        }
        if let Some((h, w)) = self.crop {
            if h == 0 || w == 0 || h > patch_size.0 || w > patch_size.1 {
                return Err(Error::data(format!(
                    "crop {h}x{w} exceeds patch {}x{}",
                    patch_size.0, patch_size.1
                )));
            }
        }
        Ok(())
    }
}

/// Apply the configured augmentations in order: crop, flips, color jitter,
/// blur. Output pixels are clamped to `[0, 1]`.
pub fn augment<R: Rng>(patch: &Patch, cfg: &AugConfig, rng: &mut R) -> Result<Patch> {
    cfg.validate((patch.pixels.height(), patch.pixels.width()))?;
    let mut out = match cfg.crop {
        Some(size) => random_crop(patch, size, rng)?,
        None => patch.clone(),
    };
    if cfg.hflip_p > 0.0 && rng.random::<f64>() < cfg.hflip_p {
        flip_horizontal(&mut out.pixels);
    }
    if cfg.vflip_p > 0.0 && rng.random::<f64>() < cfg.vflip_p {
        flip_vertical(&mut out.pixels);
    }
    if cfg.jitter_p > 0.0 && rng.random::<f64>() < cfg.jitter_p {
        let b = 1.0 + rng.random_range(-cfg.brightness..=cfg.brightness);
        let c = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast);
        let s = 1.0 + rng.random_range(-cfg.saturation..=cfg.saturation);
        let h = rng.random_range(-cfg.hue..=cfg.hue);
        color_jitter(&mut out.pixels, b as f32, c as f32, s as f32, h as f32);
    }
    if cfg.blur_p > 0.0 && rng.random::<f64>() < cfg.blur_p {
        let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        gaussian_blur(&mut out.pixels, sigma);
    }
    for v in out.pixels.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Contiguous sub-block of the requested size at a uniformly random
/// position. Cropping to the full patch size is the identity.
pub fn random_crop<R: Rng>(patch: &Patch, size: (usize, usize), rng: &mut R) -> Result<Patch> {
    let (h, w) = (patch.pixels.height(), patch.pixels.width());
    let (ch, cw) = size;
    if ch == 0 || cw == 0 || ch > h || cw > w {
        return Err(Error::data(format!(
            "cannot crop {h}x{w} patch to {ch}x{cw}"
        )));
    }
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let pixels = Pixels::from_fn(ch, cw, |r, c| patch.pixels.get(top + r, left + c));
    Ok(Patch {
        pixels,
        ..patch.clone()
    })
}

fn flip_horizontal(px: &mut Pixels) {
    let (h, w) = (px.height(), px.width());
    for r in 0..h {
        for c in 0..w / 2 {
            let a = px.get(r, c);
            let b = px.get(r, w - 1 - c);
            px.set(r, c, b);
            px.set(r, w - 1 - c, a);
        }
    }
}

fn flip_vertical(px: &mut Pixels) {
    let (h, w) = (px.height(), px.width());
    for r in 0..h / 2 {
        for c in 0..w {
            let a = px.get(r, c);
            let b = px.get(h - 1 - r, c);
            px.set(r, c, b);
            px.set(h - 1 - r, c, a);
        }
    }
}

fn rgb_to_hsv(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

fn hsv_to_rgb(hsv: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = hsv;
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Brightness/contrast/saturation scaling plus a hue rotation (in turns).
fn color_jitter(px: &mut Pixels, brightness: f32, contrast: f32, saturation: f32, hue: f32) {
    // Linear contrast blends with the patch's gray mean.
    let means = px.channel_means();
    let gray_mean =
        (0.299 * means[0] + 0.587 * means[1] + 0.114 * means[2]) as f32;
    let (h, w) = (px.height(), px.width());
    for r in 0..h {
        for c in 0..w {
            let mut rgb = px.get(r, c);
            for v in rgb.iter_mut() {
                *v *= brightness;
                *v = gray_mean + (*v - gray_mean) * contrast;
            }
            let gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
            for v in rgb.iter_mut() {
                *v = gray + (*v - gray) * saturation;
            }
            if hue != 0.0 {
                let mut hsv = rgb_to_hsv([
                    rgb[0].clamp(0.0, 1.0),
                    rgb[1].clamp(0.0, 1.0),
                    rgb[2].clamp(0.0, 1.0),
                ]);
                hsv[0] = (hsv[0] + hue).rem_euclid(1.0);
                rgb = hsv_to_rgb(hsv);
            }
            px.set(r, c, rgb);
        }
    }
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)` and
/// clamp-to-edge boundaries. A sigma of zero is the identity.
fn gaussian_blur(px: &mut Pixels, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }
    let (h, w) = (px.height() as i64, px.width() as i64);
    // Horizontal pass.
    let mut tmp = px.clone();
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kv) in kernel.iter().enumerate() {
                let sc = (c + ki as i64 - radius).clamp(0, w - 1);
                let p = px.get(r as usize, sc as usize);
                for ch in 0..3 {
                    acc[ch] += *kv * p[ch] as f64;
                }
            }
            tmp.set(r as usize, c as usize, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
        }
    }
    // Vertical pass.
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kv) in kernel.iter().enumerate() {
                let sr = (r + ki as i64 - radius).clamp(0, h - 1);
                let p = tmp.get(sr as usize, c as usize);
                for ch in 0..3 {
                    acc[ch] += *kv * p[ch] as f64;
                }
            }
            px.set(r as usize, c as usize, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
        }
    }
}
