//! The trainable network set for one architecture and the image/tensor
//! conversions around it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{denormalize, normalize, Image, PairedSample, RangeTag, View};
use crate::error::{Error, Result};
use crate::networks::{
    build_discriminator, build_generator, init_weights, Arch, Discriminator, Generator, Network, NetworkSpec,
};
use crate::objectives::Architecture;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    A2g,
    G2a,
}

impl Direction {
    pub fn source(self) -> View {
        match self {
            Direction::A2g => View::Aerial,
            Direction::G2a => View::Ground,
        }
    }

    pub fn target(self) -> View {
        match self {
            Direction::A2g => View::Ground,
            Direction::G2a => View::Aerial,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::A2g => "a2g",
            Direction::G2a => "g2a",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2g" => Ok(Direction::A2g),
            "g2a" => Ok(Direction::G2a),
            other => Err(Error::InvalidArgument(format!("unknown direction {other:?}; expected a2g or g2a"))),
        }
    }
}

/// Network specs for one architecture: the stage-1 generator and
/// discriminator, plus the segmentation stage for the sequential variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecs {
    pub arch: Architecture,
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
    pub stage2: Option<NetworkSpec>,
}

impl ModelSpecs {
    /// `width_divisor` shrinks every channel count (1 keeps the full widths).
    pub fn new(arch: Architecture, resolution: usize, width_divisor: usize, skip_connections: bool) -> Result<Self> {
        if width_divisor == 0 {
            return Err(Error::InvalidArgument("width divisor must be positive".into()));
        }
        let shrink = |spec: NetworkSpec| {
            let mut s = spec.with_widths(|c| (c / width_divisor).max(1));
            s.skip_connections = skip_connections;
            s
        };
        let g_arch = if arch == Architecture::Fork { Arch::Fork } else { Arch::Baseline };
        let generator = shrink(NetworkSpec::new(g_arch, resolution)?);
        let discriminator = shrink(NetworkSpec::new(Arch::Baseline, resolution)?);
        let stage2 = (arch == Architecture::Xseq).then(|| {
            let mut s = discriminator.clone();
            s.out_channels = s.seg_channels;
            s
        });
        Ok(Self { arch, generator, discriminator, stage2 })
    }

    pub fn resolution(&self) -> usize {
        self.generator.resolution
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub specs: ModelSpecs,
    pub g: Generator<f32>,
    pub d: Discriminator<f32>,
    /// Image-to-segmentation stage of the sequential variant.
    pub g2: Option<Generator<f32>>,
    pub d2: Option<Discriminator<f32>>,
}

/// Output of a generation pass, as normalized tensors.
#[derive(Clone, Debug)]
pub struct Generated {
    pub image: Tensor<f32>,
    pub seg: Option<Tensor<f32>>,
}

impl Model {
    pub fn build(specs: &ModelSpecs) -> Result<Self> {
        let g = build_generator(&specs.generator)?;
        let d = build_discriminator(&specs.discriminator)?;
        let (g2, d2) = match &specs.stage2 {
            Some(s) => (Some(build_generator(s)?), Some(build_discriminator(s)?)),
            None => (None, None),
        };
        Ok(Self { specs: specs.clone(), g, d, g2, d2 })
    }

    /// Build and draw initial weights from `seed`.
    pub fn initialized(specs: &ModelSpecs, seed: u64) -> Result<Self> {
        let mut m = Self::build(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, net) in m.networks_mut() {
            init_weights(net, &mut rng);
        }
        Ok(m)
    }

    pub fn arch(&self) -> Architecture {
        self.specs.arch
    }

    /// Every network with its checkpoint prefix, in a fixed order.
    pub fn networks_mut(&mut self) -> Vec<(&'static str, &mut dyn Network<f32>)> {
        let mut v: Vec<(&'static str, &mut dyn Network<f32>)> = vec![("g", &mut self.g), ("d", &mut self.d)];
        if let Some(g2) = &mut self.g2 {
            v.push(("g2", g2));
        }
        if let Some(d2) = &mut self.d2 {
            v.push(("d2", d2));
        }
        v
    }

    pub fn generators_mut(&mut self) -> Vec<&mut dyn Network<f32>> {
        let mut v: Vec<&mut dyn Network<f32>> = vec![&mut self.g];
        if let Some(g2) = &mut self.g2 {
            v.push(g2);
        }
        v
    }

    pub fn discriminators_mut(&mut self) -> Vec<&mut dyn Network<f32>> {
        let mut v: Vec<&mut dyn Network<f32>> = vec![&mut self.d];
        if let Some(d2) = &mut self.d2 {
            v.push(d2);
        }
        v
    }

    pub fn set_train(&mut self, train: bool) {
        for (_, n) in self.networks_mut() {
            n.set_train(train);
        }
    }

    /// Combined checksum over all networks.
    pub fn checksum(&mut self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, n) in self.networks_mut() {
            h.update(name.as_bytes());
            h.update(n.checksum().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Forward through the generator(s) in the current mode.
    pub fn generate(&mut self, cond: &Tensor<f32>) -> Result<Generated> {
        let out = self.g.forward(cond)?;
        let seg = match &mut self.g2 {
            Some(g2) => Some(g2.forward(&out.image)?.image),
            None => out.seg,
        };
        Ok(Generated { image: out.image, seg })
    }

    /// Eval-mode generation over byte-range conditioning images, returned as
    /// byte images (and color-coded segmentation renderings).
    pub fn generate_images(&mut self, conds: &[&Image], batch_size: usize) -> Result<Vec<(Image, Option<Image>)>> {
        self.set_train(false);
        let mut out = Vec::with_capacity(conds.len());
        for chunk in conds.chunks(batch_size.max(1)) {
            let t = images_to_tensor(chunk)?;
            let gen = self.generate(&t)?;
            let imgs = tensor_to_images(&gen.image)?;
            let segs = match &gen.seg {
                Some(s) => tensor_to_images(s)?.into_iter().map(Some).collect(),
                None => vec![None; imgs.len()],
            };
            out.extend(imgs.into_iter().zip(segs));
        }
        Ok(out)
    }
}

/// Stack byte-range images into a normalized `3 x N x H x W` tensor.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Empty("no images to batch".into()))?;
    let normed: Vec<Image> = images
        .iter()
        .map(|img| match img.range {
            RangeTag::Byte => normalize(img),
            RangeTag::Normalized => Ok((*img).clone()),
        })
        .collect::<Result<_>>()?;
    let slices: Vec<&[f32]> = normed.iter().map(|i| i.pixels.as_slice()).collect();
    Tensor::from_hwc_samples(&slices, first.height, first.width, 3)
}

/// Split a normalized 3-channel tensor back into byte-range images.
pub fn tensor_to_images(t: &Tensor<f32>) -> Result<Vec<Image>> {
    if t.channels != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", t.channels)));
    }
    (0..t.batch)
        .map(|n| {
            let px: Vec<f32> = t.sample_hwc(n).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            denormalize(&Image::new(t.height, t.width, px, RangeTag::Normalized)?)
        })
        .collect()
}

/// Conditioning, target image and target segmentation rendering for a batch.
pub struct Batch {
    pub cond: Tensor<f32>,
    pub target: Tensor<f32>,
    pub target_seg: Tensor<f32>,
}

impl Batch {
    pub fn from_samples(samples: &[&PairedSample], direction: Direction) -> Result<Self> {
        let (src, dst) = (direction.source(), direction.target());
        let conds: Vec<&Image> = samples.iter().map(|s| s.image(src)).collect();
        let targets: Vec<&Image> = samples.iter().map(|s| s.image(dst)).collect();
        let segs: Vec<Image> = samples.iter().map(|s| s.seg(dst).colorized()).collect();
        let seg_refs: Vec<&Image> = segs.iter().collect();
        Ok(Self {
            cond: images_to_tensor(&conds)?,
            target: images_to_tensor(&targets)?,
            target_seg: images_to_tensor(&seg_refs)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_per_architecture() {
        let b = ModelSpecs::new(Architecture::Baseline, 64, 1, false).unwrap();
        assert!(b.stage2.is_none());
        let f = ModelSpecs::new(Architecture::Fork, 64, 1, false).unwrap();
        assert_eq!(f.generator.arch, Arch::Fork);
        let x = ModelSpecs::new(Architecture::Xseq, 64, 8, false).unwrap();
        let s2 = x.stage2.as_ref().unwrap();
        assert_eq!((s2.in_channels, s2.out_channels), (3, 3));
        assert_eq!(x.generator.enc_channels[0], 8);
        assert!(ModelSpecs::new(Architecture::Xseq, 100, 1, false).is_err());
    }

    #[test]
    fn tensor_image_round_trip() {
        let mut img = Image::filled(4, 4, [0.0; 3], RangeTag::Byte);
        img.set(1, 2, [255.0, 10.0, 128.0]);
        let t = images_to_tensor(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), [3, 2, 4, 4]);
        let back = tensor_to_images(&t).unwrap();
        for b in back {
            for (x, y) in b.pixels.iter().zip(&img.pixels) {
                assert!((x - y).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn xseq_generates_segmentation_from_stage_two() {
        let specs = ModelSpecs::new(Architecture::Xseq, 64, 16, false).unwrap();
        let mut m = Model::initialized(&specs, 1).unwrap();
        let img = Image::filled(64, 64, [90.0; 3], RangeTag::Byte);
        let out = m.generate_images(&[&img], 4).unwrap();
        assert!(out[0].1.is_some());
        let again = m.generate_images(&[&img], 4).unwrap();
        assert_eq!(out, again);
    }
}
