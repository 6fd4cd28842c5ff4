use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeTag {
    /// `[0, 255]`
    Byte,
    /// `[-1, 1]`
    Normalized,
}

impl RangeTag {
    pub fn bounds(self) -> (f32, f32) {
        match self {
            RangeTag::Byte => (0.0, 255.0),
            RangeTag::Normalized => (-1.0, 1.0),
        }
    }
}

/// Real-valued `H x W x 3` image, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub range: RangeTag,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, range: RangeTag) -> Result<Self> {
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "{} values cannot form a {height}x{width}x3 image",
                pixels.len()
            )));
        }
        let img = Self { height, width, pixels, range };
        img.check_range()?;
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3], range: RangeTag) -> Self {
        let pixels = (0..height * width).flat_map(|_| value).collect();
        Self { height, width, pixels, range }
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn check_range(&self) -> Result<()> {
        let (lo, hi) = self.range.bounds();
        match self.pixels.iter().position(|v| !(lo..=hi).contains(v)) {
            Some(i) => Err(Error::Range(format!(
                "value {} at index {i} outside {:?} range [{lo}, {hi}]",
                self.pixels[i], self.range
            ))),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.pixels[i..i + 3].copy_from_slice(&v);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Sub-image with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for y in top..top + height {
            let row = (y * self.width + left) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[row..row + width * CHANNELS]);
        }
        Ok(Image { height, width, pixels, range: self.range })
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, self.width - 1 - x, self.at(y, x));
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        let bytes = match self.range {
            RangeTag::Byte => self.clone(),
            RangeTag::Normalized => denormalize(self)?,
        };
        let buf = bytes.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Ok(image::RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("sized buffer"))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        Image {
            height: img.height() as usize,
            width: img.width() as usize,
            pixels: img.as_raw().iter().map(|&b| b as f32).collect(),
            range: RangeTag::Byte,
        }
    }

    /// Write as 8-bit PNG (values rounded to the nearest byte).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        Ok(Image::from_rgb8(&img.to_rgb8()))
    }
}

/// `[0,255] -> [-1,1]`
pub fn normalize(img: &Image) -> Result<Image> {
    if img.range != RangeTag::Byte {
        return Err(Error::Range("normalize expects a byte-range image".into()));
    }
    img.check_range()?;
    let pixels = img.pixels.iter().map(|&v| v / 127.5 - 1.0).collect();
    Ok(Image { pixels, range: RangeTag::Normalized, ..*img })
}

/// `[-1,1] -> [0,255]`
pub fn denormalize(img: &Image) -> Result<Image> {
    if img.range != RangeTag::Normalized {
        return Err(Error::Range("denormalize expects a normalized image".into()));
    }
    img.check_range()?;
    let pixels = img.pixels.iter().map(|&v| ((v + 1.0) * 127.5).clamp(0.0, 255.0)).collect();
    Ok(Image { pixels, range: RangeTag::Byte, ..*img })
}

/// Semantic classes of the synthetic scenes, in label order.
pub const CLASS_NAMES: [&str; 5] = ["void", "sky", "road", "building", "vegetation"];
pub const VOID: u8 = 0;
pub const SKY: u8 = 1;
pub const ROAD: u8 = 2;
pub const BUILDING: u8 = 3;
pub const VEGETATION: u8 = 4;
pub const MAX_CLASSES: usize = 20;

/// Class → color table. Colors are distinct so color-coded maps decode
/// back to labels exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    pub names: Vec<String>,
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            colors: vec![[0, 0, 0], [70, 130, 180], [128, 64, 128], [70, 70, 70], [107, 142, 35]],
        }
    }
}

impl Palette {
    pub fn new(names: Vec<String>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if names.len() != colors.len() || names.is_empty() || names.len() > MAX_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "palette needs 1..={MAX_CLASSES} named colors, got {} names and {} colors",
                names.len(),
                colors.len()
            )));
        }
        for (i, c) in colors.iter().enumerate() {
            if colors[..i].contains(c) {
                return Err(Error::InvalidArgument(format!("duplicate palette color {c:?}")));
            }
        }
        Ok(Self { names, colors })
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    /// Exact color lookup.
    pub fn decode(&self, rgb: [u8; 3]) -> Option<u8> {
        self.colors.iter().position(|c| *c == rgb).map(|i| i as u8)
    }

    /// Class whose color is nearest in squared RGB distance (lowest index on ties).
    pub fn nearest(&self, rgb: [f32; 3]) -> u8 {
        let mut best = (f32::INFINITY, 0u8);
        for (i, c) in self.colors.iter().enumerate() {
            let d: f32 = (0..3).map(|k| (rgb[k] - c[k] as f32).powi(2)).sum();
            if d < best.0 {
                best = (d, i as u8);
            }
        }
        best.1
    }

    /// JSON object `class_name -> [R,G,B]` in label order.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (n, c) in self.names.iter().zip(&self.colors) {
            map.insert(n.clone(), serde_json::json!(c));
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(s)?;
        let mut names = Vec::new();
        let mut colors = Vec::new();
        for (k, v) in map {
            names.push(k);
            colors.push(serde_json::from_value::<[u8; 3]>(v)?);
        }
        Palette::new(names, colors)
    }
}

/// Per-pixel class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub palette: Palette,
}

impl SegMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, palette: Palette) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!("{} labels for a {height}x{width} map", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= palette.len()) {
            return Err(Error::Range(format!("label {bad} outside palette of {}", palette.len())));
        }
        Ok(Self { height, width, labels, palette })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn n_classes(&self) -> usize {
        self.palette.len()
    }

    /// Color-coded 3-channel rendering (byte range).
    pub fn colorized(&self) -> Image {
        let pixels = self
            .labels
            .iter()
            .flat_map(|&l| self.palette.colors[l as usize].map(f32::from))
            .collect();
        Image { height: self.height, width: self.width, pixels, range: RangeTag::Byte }
    }

    /// Exact inverse of [`SegMap::colorized`]; fails on colors outside the palette.
    pub fn from_colorized(img: &Image, palette: &Palette) -> Result<Self> {
        let rgb = img.to_rgb8()?;
        let mut labels = Vec::with_capacity(img.height * img.width);
        for p in rgb.pixels() {
            labels.push(
                palette
                    .decode(p.0)
                    .ok_or_else(|| Error::Range(format!("color {:?} is not in the palette", p.0)))?,
            );
        }
        SegMap::new(img.height, img.width, labels, palette.clone())
    }

    /// Nearest-palette-color labeling of a generated color-coded map.
    pub fn quantize(img: &Image, palette: &Palette) -> Result<Self> {
        let bytes = match img.range {
            RangeTag::Byte => img.clone(),
            RangeTag::Normalized => denormalize(img)?,
        };
        let labels = bytes.pixels.chunks(CHANNELS).map(|p| palette.nearest([p[0], p[1], p[2]])).collect();
        SegMap::new(img.height, img.width, labels, palette.clone())
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<SegMap> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape("segmentation crop out of bounds".into()));
        }
        let mut labels = Vec::with_capacity(height * width);
        for y in top..top + height {
            labels.extend_from_slice(&self.labels[y * self.width + left..y * self.width + left + width]);
        }
        Ok(SegMap { height, width, labels, palette: self.palette.clone() })
    }

    pub fn flip_horizontal(&self) -> SegMap {
        let mut out = self.clone();
        for row in out.labels.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}
