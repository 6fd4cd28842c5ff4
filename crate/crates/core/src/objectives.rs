//! Adversarial and reconstruction losses, and the per-architecture objectives.

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_LAMBDA: f64 = 100.0;
pub const DEFAULT_REAL_LABEL: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Baseline,
    Fork,
    Xseq,
}

impl Architecture {
    pub fn has_seg(self) -> bool {
        !matches!(self, Architecture::Baseline)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Baseline => "baseline",
            Architecture::Fork => "fork",
            Architecture::Xseq => "xseq",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "pix2pix" => Ok(Architecture::Baseline),
            "fork" | "x-fork" => Ok(Architecture::Fork),
            "xseq" | "x-seq" => Ok(Architecture::Xseq),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Form of the generator's adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLossForm {
    /// `-log D(G(x))`
    #[default]
    NonSaturating,
    /// `log(1 - D(G(x)))`, minimized directly.
    Minimax,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Binary cross-entropy of probability `p` against target `y`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `d bce / d p` at the clamped probability.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Discriminator loss with a (possibly smoothed) real target and fake target 0.
pub fn gan_loss_discriminator(real_score: f64, fake_score: f64, real_label: f64) -> f64 {
    bce(real_score, real_label) + bce(fake_score, 0.0)
}

pub fn gan_loss_generator(fake_score: f64) -> f64 {
    gan_loss_generator_with(fake_score, GeneratorLossForm::NonSaturating)
}

pub fn gan_loss_generator_with(fake_score: f64, form: GeneratorLossForm) -> f64 {
    let p = clamp_prob(fake_score);
    match form {
        GeneratorLossForm::NonSaturating => -p.ln(),
        GeneratorLossForm::Minimax => (1.0 - p).ln(),
    }
}

fn gan_loss_generator_grad(fake_score: f64, form: GeneratorLossForm) -> f64 {
    let p = clamp_prob(fake_score);
    match form {
        GeneratorLossForm::NonSaturating => -1.0 / p,
        GeneratorLossForm::Minimax => -1.0 / (1.0 - p),
    }
}

/// Mean BCE over every entry of a probability map, with its gradient.
pub fn bce_map<T: Float>(map: &Tensor<T>, target: f64) -> (f64, Tensor<T>) {
    let n = map.data.len() as f64;
    let loss = map.data.iter().map(|p| bce(p.as_f64(), target)).sum::<f64>() / n;
    let grad = map.clone().map(|p| T::from_f64_lossy(bce_grad(p.as_f64(), target) / n));
    (loss, grad)
}

/// Mean generator adversarial loss over a probability map, with its gradient.
pub fn generator_adversarial_map<T: Float>(map: &Tensor<T>, form: GeneratorLossForm) -> (f64, Tensor<T>) {
    let n = map.data.len() as f64;
    let loss = map.data.iter().map(|p| gan_loss_generator_with(p.as_f64(), form)).sum::<f64>() / n;
    let grad = map.clone().map(|p| T::from_f64_lossy(gan_loss_generator_grad(p.as_f64(), form) / n));
    (loss, grad)
}

/// Mean absolute difference between two normalized images.
pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    if a.height != b.height || a.width != b.width || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "l1 between {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let n = a.pixels.len() as f64;
    Ok(a.pixels.iter().zip(&b.pixels).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / n)
}

/// Mean absolute difference between tensors, and its gradient w.r.t. `pred`.
pub fn l1_tensor<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("l1 between {:?} and {:?}", pred.shape(), target.shape())));
    }
    let n = pred.data.len() as f64;
    let inv = T::from_f64_lossy(1.0 / n);
    let mut sum = 0.0;
    let mut grad = pred.clone();
    for (g, &t) in grad.data.iter_mut().zip(&target.data) {
        let d = *g - t;
        sum += d.abs().as_f64();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((sum / n, grad))
}

/// Raw loss terms from one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1_image: f64,
    pub g_l1_seg: f64,
    pub stage2: Option<Stage2Parts>,
}

/// Terms of the image-to-segmentation cGAN in the sequential architecture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Parts {
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1_seg: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1_image: f64,
    pub g_l1_seg: f64,
    pub d2_loss: f64,
    pub g2_gan: f64,
    pub g2_l1_seg: f64,
    pub total_g: f64,
    pub lambda: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.d_loss,
            self.g_gan,
            self.g_l1_image,
            self.g_l1_seg,
            self.d2_loss,
            self.g2_gan,
            self.g2_l1_seg,
            self.total_g,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `total = g_gan + λ·l1_image`
pub fn objective_baseline(parts: &LossParts, lambda: f64) -> LossReport {
    LossReport {
        d_loss: parts.d_loss,
        g_gan: parts.g_gan,
        g_l1_image: parts.g_l1_image,
        total_g: parts.g_gan + lambda * parts.g_l1_image,
        lambda,
        ..Default::default()
    }
}

/// `total = g_gan + λ·(l1_image + l1_seg)`; the discriminator term is the
/// baseline one since it never sees segmentation pairs.
pub fn objective_fork(parts: &LossParts, lambda: f64) -> LossReport {
    LossReport {
        d_loss: parts.d_loss,
        g_gan: parts.g_gan,
        g_l1_image: parts.g_l1_image,
        g_l1_seg: parts.g_l1_seg,
        total_g: parts.g_gan + lambda * (parts.g_l1_image + parts.g_l1_seg),
        lambda,
        ..Default::default()
    }
}

/// `total = gan(G1,D1) + λ·l1(G1) + w·(gan(G2,D2) + λ·l1(G2))` with `w = 1` by default.
pub fn objective_xseq(parts: &LossParts, lambda: f64, stage2_weight: f64) -> Result<LossReport> {
    let s2 = parts
        .stage2
        .ok_or_else(|| Error::InvalidArgument("sequential objective needs stage-2 loss terms".into()))?;
    Ok(LossReport {
        d_loss: parts.d_loss,
        g_gan: parts.g_gan,
        g_l1_image: parts.g_l1_image,
        g_l1_seg: 0.0,
        d2_loss: s2.d_loss,
        g2_gan: s2.g_gan,
        g2_l1_seg: s2.g_l1_seg,
        total_g: parts.g_gan
            + lambda * parts.g_l1_image
            + stage2_weight * (s2.g_gan + lambda * s2.g_l1_seg),
        lambda,
    })
}

/// Objective selection plus the coefficients used to seed back-propagation,
/// kept in one place so the reported total and the gradients agree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub arch: Architecture,
    pub lambda: f64,
    pub stage2_weight: f64,
}

impl Objective {
    pub fn new(arch: Architecture, lambda: f64) -> Self {
        Self { arch, lambda, stage2_weight: 1.0 }
    }

    pub fn compose(&self, parts: &LossParts) -> Result<LossReport> {
        match self.arch {
            Architecture::Baseline => Ok(objective_baseline(parts, self.lambda)),
            Architecture::Fork => Ok(objective_fork(parts, self.lambda)),
            Architecture::Xseq => objective_xseq(parts, self.lambda, self.stage2_weight),
        }
    }

    /// d total / d g_gan
    pub fn adversarial_weight(&self) -> f64 {
        1.0
    }

    /// d total / d (any stage-1 L1 term)
    pub fn l1_weight(&self) -> f64 {
        self.lambda
    }

    pub fn stage2_adversarial_weight(&self) -> f64 {
        self.stage2_weight
    }

    pub fn stage2_l1_weight(&self) -> f64 {
        self.stage2_weight * self.lambda
    }
}
