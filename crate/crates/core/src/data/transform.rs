//! Resizing, cropping and training-time augmentation.

use image::imageops::{self, FilterType};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{Image, RangeTag, SegMap};
use super::PairedSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PreprocessMode {
    Resize,
    /// Central `crop x crop` window, then resize.
    CenterCropResize { crop: usize },
    /// Leftmost quarter of a panorama (full height), then resize.
    QuarterCropResize,
}

/// Bilinear resize of a byte-range image; identity when sizes already match.
pub fn resize_image(img: &Image, height: usize, width: usize) -> Image {
    if img.height == height && img.width == width {
        return img.clone();
    }
    // The float resampler clamps to [0, 1], so work in that range.
    let (lo, hi) = img.range.bounds();
    let unit: Vec<f32> = img.pixels.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let buf = image::Rgb32FImage::from_raw(img.width as u32, img.height as u32, unit).expect("sized buffer");
    let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
    Image {
        height,
        width,
        pixels: out.into_raw().into_iter().map(|v| (lo + v * (hi - lo)).clamp(lo, hi)).collect(),
        range: img.range,
    }
}

/// Nearest-neighbor resize of a label map.
pub fn resize_labels(seg: &SegMap, height: usize, width: usize) -> SegMap {
    if seg.height == height && seg.width == width {
        return seg.clone();
    }
    let buf = image::GrayImage::from_raw(seg.width as u32, seg.height as u32, seg.labels.clone())
        .expect("sized buffer");
    let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Nearest);
    SegMap { height, width, labels: out.into_raw(), palette: seg.palette.clone() }
}

pub fn preprocess(raw: &Image, target: usize, mode: PreprocessMode) -> Result<Image> {
    if raw.range != RangeTag::Byte {
        return Err(Error::Range("preprocess expects a byte-range image".into()));
    }
    if target == 0 {
        return Err(Error::InvalidArgument("target size must be positive".into()));
    }
    let cropped = match mode {
        PreprocessMode::Resize => raw.clone(),
        PreprocessMode::CenterCropResize { crop } => {
            check_dim("height", raw.height, crop)?;
            check_dim("width", raw.width, crop)?;
            raw.crop((raw.height - crop) / 2, (raw.width - crop) / 2, crop, crop)?
        }
        PreprocessMode::QuarterCropResize => {
            check_dim("width", raw.width, 4)?;
            raw.crop(0, 0, raw.height, raw.width / 4)?
        }
    };
    Ok(resize_image(&cropped, target, target))
}

fn check_dim(axis: &'static str, actual: usize, required: usize) -> Result<()> {
    if actual < required {
        Err(Error::DimensionTooSmall { axis, actual, required })
    } else {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Pixels added by the upscale before cropping back.
    pub jitter_px: usize,
    pub flip_prob: f64,
}

impl AugmentConfig {
    /// 30 px at 256×256, scaled proportionally for other sizes.
    pub fn for_resolution(resolution: usize) -> Self {
        Self { jitter_px: (30 * resolution + 128) / 256, flip_prob: 0.5 }
    }
}

/// Concrete random choices of one augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    /// `(top, left)` crop offsets inside the upscaled aerial view.
    pub aerial_offset: (usize, usize),
    pub ground_offset: (usize, usize),
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let flip = rng.random::<f64>() < cfg.flip_prob;
        let mut offset = || (rng.random_range(0..=cfg.jitter_px), rng.random_range(0..=cfg.jitter_px));
        let aerial_offset = offset();
        let ground_offset = offset();
        Self { flip, aerial_offset, ground_offset }
    }
}

/// Random flip (shared by every field) plus per-view jitter.
pub fn augment(sample: &PairedSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<PairedSample> {
    let draw = AugmentDraw::sample(cfg, rng);
    augment_with(sample, cfg, draw)
}

pub fn augment_with(sample: &PairedSample, cfg: &AugmentConfig, draw: AugmentDraw) -> Result<PairedSample> {
    let (aerial, aerial_seg) = jitter_view(&sample.aerial, &sample.aerial_seg, cfg.jitter_px, draw.aerial_offset)?;
    let (ground, ground_seg) = jitter_view(&sample.ground, &sample.ground_seg, cfg.jitter_px, draw.ground_offset)?;
    let mut out = PairedSample { id: sample.id.clone(), aerial, ground, aerial_seg, ground_seg };
    if draw.flip {
        out.aerial = out.aerial.flip_horizontal();
        out.ground = out.ground.flip_horizontal();
        out.aerial_seg = out.aerial_seg.flip_horizontal();
        out.ground_seg = out.ground_seg.flip_horizontal();
    }
    Ok(out)
}

fn jitter_view(img: &Image, seg: &SegMap, jitter: usize, (top, left): (usize, usize)) -> Result<(Image, SegMap)> {
    if jitter == 0 {
        return Ok((img.clone(), seg.clone()));
    }
    if top > jitter || left > jitter {
        return Err(Error::InvalidArgument(format!("crop offset ({top},{left}) exceeds jitter {jitter}")));
    }
    let (h, w) = (img.height, img.width);
    let up = resize_image(img, h + jitter, w + jitter);
    let up_seg = resize_labels(seg, h + jitter, w + jitter);
    Ok((up.crop(top, left, h, w)?, up_seg.crop(top, left, h, w)?))
}
