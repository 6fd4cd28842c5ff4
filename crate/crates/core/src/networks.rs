//! Encoder–decoder generators (plain and forked) and the conditional
//! discriminator, at 256×256 or the reduced 64×64 configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Param, Pass, Sequential};
use crate::tensor::{Float, Tensor, Window};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Baseline,
    Fork,
}

/// Declarative generator/discriminator description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: Arch,
    pub resolution: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Output channels of each stride-2 encoder block.
    pub enc_channels: Vec<usize>,
    /// Output channels of each decoder block before the final Tanh layer.
    pub dec_channels: Vec<usize>,
    /// Leading decoder blocks shared by both heads of the forked generator.
    pub fork_shared_blocks: usize,
    pub seg_channels: usize,
    pub dropout_blocks: usize,
    pub dropout: f64,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub skip_connections: bool,
}

const ENC_256: [usize; 8] = [64, 128, 256, 512, 512, 512, 512, 512];
const DEC_256: [usize; 7] = [512, 512, 512, 512, 256, 128, 64];

impl NetworkSpec {
    /// Standard configuration; 64×64 drops the last two encoder blocks and the
    /// first two decoder blocks of the 256×256 network.
    pub fn new(arch: Arch, resolution: usize) -> Result<Self> {
        let (enc, dec) = match resolution {
            256 => (ENC_256.to_vec(), DEC_256.to_vec()),
            64 => (ENC_256[..6].to_vec(), DEC_256[2..].to_vec()),
            other => return Err(Error::InvalidSize(other)),
        };
        let decoder_blocks = dec.len() + 1;
        Ok(Self {
            arch,
            resolution,
            in_channels: 3,
            out_channels: 3,
            enc_channels: enc,
            dec_channels: dec,
            fork_shared_blocks: decoder_blocks - 2,
            seg_channels: 3,
            dropout_blocks: 3,
            dropout: 0.5,
            kernel: 4,
            stride: 2,
            skip_connections: false,
        })
    }

    /// Same topology with every hidden width replaced by `f(width)`.
    pub fn with_widths(mut self, f: impl Fn(usize) -> usize) -> Self {
        self.enc_channels = self.enc_channels.iter().map(|&c| f(c).max(1)).collect();
        self.dec_channels = self.dec_channels.iter().map(|&c| f(c).max(1)).collect();
        self
    }

    pub fn encoder_blocks(&self) -> usize {
        self.enc_channels.len()
    }

    /// Upsampling blocks including the output layer.
    pub fn decoder_blocks(&self) -> usize {
        self.dec_channels.len() + 1
    }

    pub fn window(&self) -> Window {
        Window { kernel: self.kernel, stride: self.stride, pad: (self.kernel - self.stride) / 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.kernel != 4 || self.stride != 2 {
            return bad(format!("kernel {} stride {}; expected 4 and 2", self.kernel, self.stride));
        }
        if self.resolution != 64 && self.resolution != 256 {
            return Err(Error::InvalidSize(self.resolution));
        }
        let e = self.encoder_blocks();
        if e == 0 || self.resolution >> e != 1 || self.resolution != 1 << e {
            return bad(format!(
                "{} encoder blocks do not reduce {} to a 1x1 bottleneck",
                e, self.resolution
            ));
        }
        if self.decoder_blocks() != e {
            return bad(format!("{} decoder blocks cannot undo {} encoder blocks", self.decoder_blocks(), e));
        }
        if self.arch == Arch::Fork && self.fork_shared_blocks + 2 > self.decoder_blocks() {
            return bad(format!(
                "fork shares {} of {} decoder blocks; each head needs a penultimate and output block",
                self.fork_shared_blocks,
                self.decoder_blocks()
            ));
        }
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0)
            || self.in_channels == 0
            || self.out_channels == 0
            || (self.arch == Arch::Fork && self.seg_channels == 0)
        {
            return bad("zero channel count".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0,1)", self.dropout));
        }
        Ok(())
    }

    /// Input channels of decoder block `i`.
    fn decoder_input(&self, i: usize) -> usize {
        let e = self.encoder_blocks();
        if i == 0 {
            return self.enc_channels[e - 1];
        }
        let skip = if self.skip_connections { self.enc_channels[e - 1 - i] } else { 0 };
        self.dec_channels[i - 1] + skip
    }
}

/// Common surface of the trainable networks.
pub trait Network<T: Float> {
    fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<T>));
    fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Vec<T>));
    fn set_train(&mut self, train: bool);
    fn is_train(&self) -> bool;

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name));
        names
    }

    /// SHA-256 over parameters and buffers in visiting order.
    fn checksum(&mut self) -> String {
        let mut hasher = Sha256::new();
        self.visit_params(&mut |name, p| {
            hasher.update(name.as_bytes());
            p.value.iter().for_each(|v| hasher.update(v.as_f64().to_le_bytes()));
        });
        self.visit_buffers(&mut |name, b| {
            hasher.update(name.as_bytes());
            b.iter().for_each(|v| hasher.update(v.as_f64().to_le_bytes()));
        });
        hex::encode(hasher.finalize())
    }
}

/// Draw fresh weights: convolution kernels ~ N(0, 0.02²), batch-norm scales
/// ~ N(1, 0.02²), biases and shifts zero.
pub fn init_weights<T: Float, N: Network<T> + ?Sized>(net: &mut N, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    net.visit_params(&mut |name, p| {
        let center = if name.ends_with(".weight") {
            Some(0.0)
        } else if name.ends_with(".gamma") {
            Some(1.0)
        } else {
            None
        };
        match center {
            Some(c) => p.value.iter_mut().for_each(|v| *v = T::from_f64_lossy(c + normal.sample(rng))),
            None => p.value.iter_mut().for_each(|v| *v = T::zero()),
        }
    });
}

fn encoder_block<T: Float>(i: usize, cin: usize, cout: usize, win: Window) -> Sequential<T> {
    let mut s = Sequential::new();
    // first block has no normalization
    s.push("conv", Layer::Conv(Conv2d::new(cin, cout, win, i == 0)));
    if i > 0 {
        s.push("bn", Layer::BatchNorm(BatchNorm2d::new(cout)));
    }
    s.push("act", Layer::leaky_relu());
    s
}

fn decoder_block<T: Float>(spec: &NetworkSpec, i: usize, out_final: usize) -> Sequential<T> {
    let win = spec.window();
    let cin = spec.decoder_input(i);
    let mut s = Sequential::new();
    if i + 1 == spec.decoder_blocks() {
        s.push("upconv", Layer::ConvTranspose(ConvTranspose2d::new(cin, out_final, win, true)));
        s.push("act", Layer::tanh());
    } else {
        let cout = spec.dec_channels[i];
        s.push("upconv", Layer::ConvTranspose(ConvTranspose2d::new(cin, cout, win, false)));
        s.push("bn", Layer::BatchNorm(BatchNorm2d::new(cout)));
        if i < spec.dropout_blocks {
            s.push("dropout", Layer::dropout(spec.dropout));
        }
        s.push("act", Layer::relu());
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput<T> {
    pub image: Tensor<T>,
    pub seg: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub spec: NetworkSpec,
    encoder: Vec<Sequential<T>>,
    trunk: Vec<Sequential<T>>,
    heads: Vec<Vec<Sequential<T>>>,
    train: bool,
    rng: ChaCha8Rng,
    skips: Vec<Tensor<T>>,
    last_bottleneck: Option<[usize; 4]>,
}

pub fn build_generator<T: Float>(spec: &NetworkSpec) -> Result<Generator<T>> {
    spec.validate()?;
    let win = spec.window();
    let mut cin = spec.in_channels;
    let mut encoder = Vec::new();
    for (i, &c) in spec.enc_channels.iter().enumerate() {
        encoder.push(encoder_block(i, cin, c, win));
        cin = c;
    }
    let shared = match spec.arch {
        Arch::Baseline => spec.decoder_blocks(),
        Arch::Fork => spec.fork_shared_blocks,
    };
    let trunk = (0..shared).map(|i| decoder_block(spec, i, spec.out_channels)).collect();
    let mut heads = Vec::new();
    if spec.arch == Arch::Fork {
        for out in [spec.out_channels, spec.seg_channels] {
            heads.push((shared..spec.decoder_blocks()).map(|i| decoder_block(spec, i, out)).collect());
        }
    }
    Ok(Generator {
        spec: spec.clone(),
        encoder,
        trunk,
        heads,
        train: true,
        rng: ChaCha8Rng::seed_from_u64(0),
        skips: Vec::new(),
        last_bottleneck: None,
    })
}

impl<T: Float> Generator<T> {
    /// Reset the dropout noise stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Shape (`C x N x H x W`) of the innermost activation of the last forward.
    pub fn last_bottleneck(&self) -> Option<[usize; 4]> {
        self.last_bottleneck
    }

    pub fn forward(&mut self, cond: &Tensor<T>) -> Result<GeneratorOutput<T>> {
        let res = self.spec.resolution;
        if cond.height != res || cond.width != res || cond.channels != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "generator expects {}x{}x{} input, got {}x{}x{}",
                res, res, self.spec.in_channels, cond.height, cond.width, cond.channels
            )));
        }
        let skips_on = self.spec.skip_connections;
        let e = self.encoder.len();
        let mut pass = Pass { train: self.train, rng: &mut self.rng };
        self.skips.clear();
        let mut h = cond.clone();
        for block in &mut self.encoder {
            h = block.forward(h, &mut pass)?;
            if skips_on {
                self.skips.push(h.clone());
            }
        }
        self.last_bottleneck = Some(h.shape());
        let skips = &self.skips;
        let stage_input = |i: usize, h: Tensor<T>| -> Result<Tensor<T>> {
            if skips_on && i > 0 {
                Tensor::concat_channels(&h, &skips[e - 1 - i])
            } else {
                Ok(h)
            }
        };
        for (i, block) in self.trunk.iter_mut().enumerate() {
            h = block.forward(stage_input(i, h)?, &mut pass)?;
        }
        if self.heads.is_empty() {
            return Ok(GeneratorOutput { image: h, seg: None });
        }
        let shared = self.trunk.len();
        let mut outs = Vec::with_capacity(2);
        for head in &mut self.heads {
            let mut hh = h.clone();
            for (j, block) in head.iter_mut().enumerate() {
                hh = block.forward(stage_input(shared + j, hh)?, &mut pass)?;
            }
            outs.push(hh);
        }
        let seg = outs.pop();
        let image = outs.pop().expect("image head");
        Ok(GeneratorOutput { image, seg })
    }

    /// Back-propagate output gradients; returns the gradient w.r.t. the input.
    /// A missing segmentation gradient is treated as zero.
    pub fn backward(&mut self, d_image: Tensor<T>, d_seg: Option<Tensor<T>>) -> Result<Tensor<T>> {
        let skips_on = self.spec.skip_connections;
        let e = self.encoder.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; e];
        let spec = &self.spec;
        // Undo one decoder stage: route the skip part of the input gradient aside.
        let unstage = |i: usize, g: Tensor<T>, skip_grads: &mut Vec<Option<Tensor<T>>>| -> Tensor<T> {
            if skips_on && i > 0 {
                let (main, skip) = g.split_channels(spec.dec_channels[i - 1]);
                match &mut skip_grads[e - 1 - i] {
                    Some(acc) => acc.add_assign(&skip),
                    slot => *slot = Some(skip),
                }
                main
            } else {
                g
            }
        };
        let shared = self.trunk.len();
        let mut g = if self.heads.is_empty() {
            d_image
        } else {
            let mut trunk_grad: Option<Tensor<T>> = None;
            for (head, dout) in self.heads.iter_mut().zip([Some(d_image), d_seg]) {
                let Some(mut gh) = dout else { continue };
                for (j, block) in head.iter_mut().enumerate().rev() {
                    gh = unstage(shared + j, block.backward(gh)?, &mut skip_grads);
                }
                match &mut trunk_grad {
                    Some(acc) => acc.add_assign(&gh),
                    None => trunk_grad = Some(gh),
                }
            }
            trunk_grad.expect("image gradient present")
        };
        for (i, block) in self.trunk.iter_mut().enumerate().rev() {
            g = unstage(i, block.backward(g)?, &mut skip_grads);
        }
        for (j, block) in self.encoder.iter_mut().enumerate().rev() {
            if let Some(s) = skip_grads[j].take() {
                g.add_assign(&s);
            }
            g = block.backward(g)?;
        }
        Ok(g)
    }

    /// Every layer in the order it is applied (trunk before heads).
    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.encoder
            .iter()
            .chain(&self.trunk)
            .chain(self.heads.iter().flatten())
            .flat_map(|s| s.layers.iter().map(|(_, l)| l))
    }

    pub fn encoder_len(&self) -> usize {
        self.encoder.len()
    }

    pub fn trunk_len(&self) -> usize {
        self.trunk.len()
    }

    pub fn head_len(&self) -> usize {
        self.heads.first().map_or(0, Vec::len)
    }

    /// Decoder upsampling blocks on the image path.
    pub fn decoder_len(&self) -> usize {
        self.trunk.len() + self.head_len()
    }
}

impl<T: Float> Network<T> for Generator<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_params(&format!("enc{i}"), f);
        }
        for (i, b) in self.trunk.iter_mut().enumerate() {
            b.visit_params(&format!("dec{i}"), f);
        }
        let shared = self.trunk.len();
        for (name, head) in ["image", "seg"].iter().zip(&mut self.heads) {
            for (j, b) in head.iter_mut().enumerate() {
                b.visit_params(&format!("{name}.dec{}", shared + j), f);
            }
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Vec<T>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_buffers(&format!("enc{i}"), f);
        }
        for (i, b) in self.trunk.iter_mut().enumerate() {
            b.visit_buffers(&format!("dec{i}"), f);
        }
        let shared = self.trunk.len();
        for (name, head) in ["image", "seg"].iter().zip(&mut self.heads) {
            for (j, b) in head.iter_mut().enumerate() {
                b.visit_buffers(&format!("{name}.dec{}", shared + j), f);
            }
        }
    }

    fn set_train(&mut self, train: bool) {
        self.train = train;
    }

    fn is_train(&self) -> bool {
        self.train
    }
}

/// Conditional discriminator: sees the channel concatenation of the
/// conditioning image and a candidate, returns a realness probability map.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub spec: NetworkSpec,
    pub cond_channels: usize,
    pub cand_channels: usize,
    blocks: Vec<Sequential<T>>,
    head: Sequential<T>,
    train: bool,
    rng: ChaCha8Rng,
}

/// Discriminator judging `(spec.in_channels conditioning, spec.out_channels candidate)` pairs.
pub fn build_discriminator<T: Float>(spec: &NetworkSpec) -> Result<Discriminator<T>> {
    spec.validate()?;
    let win = spec.window();
    let (cond, cand) = (spec.in_channels, spec.out_channels);
    let mut cin = cond + cand;
    let mut blocks = Vec::new();
    for (i, &c) in spec.enc_channels.iter().enumerate() {
        blocks.push(encoder_block(i, cin, c, win));
        cin = c;
    }
    let mut head = Sequential::new();
    let point = Window { kernel: 1, stride: 1, pad: 0 };
    head.push("conv", Layer::Conv(Conv2d::new(cin, 1, point, true)));
    head.push("act", Layer::sigmoid());
    Ok(Discriminator {
        spec: spec.clone(),
        cond_channels: cond,
        cand_channels: cand,
        blocks,
        head,
        train: true,
        rng: ChaCha8Rng::seed_from_u64(0),
    })
}

impl<T: Float> Discriminator<T> {
    /// Probability map of shape `1 x N x h x w`.
    pub fn forward(&mut self, cond: &Tensor<T>, cand: &Tensor<T>) -> Result<Tensor<T>> {
        if !cond.same_geometry(cand) {
            return Err(Error::Shape(format!(
                "conditioning {:?} and candidate {:?} differ",
                cond.shape(),
                cand.shape()
            )));
        }
        if cond.channels != self.cond_channels || cand.channels != self.cand_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {}+{} channels, got {}+{}",
                self.cond_channels, self.cand_channels, cond.channels, cand.channels
            )));
        }
        if cond.height != self.spec.resolution || cond.width != self.spec.resolution {
            return Err(Error::Shape(format!(
                "discriminator expects {0}x{0} inputs, got {1}x{2}",
                self.spec.resolution, cond.height, cond.width
            )));
        }
        let mut pass = Pass { train: self.train, rng: &mut self.rng };
        let mut h = Tensor::concat_channels(cond, cand)?;
        for b in &mut self.blocks {
            h = b.forward(h, &mut pass)?;
        }
        self.head.forward(h, &mut pass)
    }

    /// Per-sample realness: the mean of each sample's probability map.
    pub fn scores(map: &Tensor<T>) -> Vec<T> {
        let per = map.height * map.width;
        (0..map.batch)
            .map(|n| {
                let s: T = map.data[n * per..(n + 1) * per].iter().copied().sum();
                s / T::from_usize(per).unwrap()
            })
            .collect()
    }

    /// Returns gradients w.r.t. (conditioning, candidate).
    pub fn backward(&mut self, d_map: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = self.head.backward(d_map)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(g)?;
        }
        Ok(g.split_channels(self.cond_channels))
    }

    pub fn downsampling_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.blocks.iter().chain(std::iter::once(&self.head)).flat_map(|s| s.layers.iter().map(|(_, l)| l))
    }
}

impl<T: Float> Network<T> for Discriminator<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("block{i}"), f);
        }
        self.head.visit_params("out", f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Vec<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers(&format!("block{i}"), f);
        }
        self.head.visit_buffers("out", f);
    }

    fn set_train(&mut self, train: bool) {
        self.train = train;
    }

    fn is_train(&self) -> bool {
        self.train
    }
}
