//! Small convolutional scene classifier used as the probability oracle for
//! the classification-based scores.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::transform::resize_image;
use crate::data::{DatasetManifest, Image, View};
use crate::data::scene::N_CATEGORIES;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Layer, Param, Pass, Sequential};
use crate::model::images_to_tensor;
use crate::networks::{init_weights, Network};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Tensor, Window};

/// Side length images are resized to before classification.
pub const INPUT_SIZE: usize = 64;
/// Minimum held-out top-1 accuracy, in percent, for an oracle to be accepted.
pub const MIN_ACCURACY: f64 = 90.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of the labeled images held out for the acceptance check.
    pub holdout: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 15, batch_size: 32, lr: 1e-3, holdout: 0.2 }
    }
}

#[derive(Clone, Debug)]
struct Net {
    body: Sequential<f32>,
    train: bool,
}

impl Network<f32> for Net {
    fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<f32>)) {
        self.body.visit_params("net", f);
    }
    fn visit_buffers(&mut self, f: &mut dyn FnMut(String, &mut Vec<f32>)) {
        self.body.visit_buffers("net", f);
    }
    fn set_train(&mut self, train: bool) {
        self.train = train;
    }
    fn is_train(&self) -> bool {
        self.train
    }
}

impl Net {
    fn new(n_classes: usize) -> Self {
        let down = Window { kernel: 4, stride: 2, pad: 1 };
        let mut body = Sequential::new();
        let widths = [3, 16, 32, 64, 64];
        for i in 0..4 {
            body.push(format!("conv{i}"), Layer::Conv(Conv2d::new(widths[i], widths[i + 1], down, i == 0)));
            if i > 0 {
                body.push(format!("bn{i}"), Layer::BatchNorm(BatchNorm2d::new(widths[i + 1])));
            }
            body.push(format!("act{i}"), Layer::leaky_relu());
        }
        // 4x4 -> 1x1 logits
        let head = Window { kernel: 4, stride: 1, pad: 0 };
        body.push("logits", Layer::Conv(Conv2d::new(64, n_classes, head, true)));
        Self { body, train: true }
    }

    /// Logits as rows, one per sample.
    fn logits(&mut self, x: Tensor<f32>, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let train = self.train;
        let out = self.body.forward(x, &mut Pass { train, rng })?;
        let (c, n) = (out.channels, out.batch);
        Ok((0..n).map(|i| (0..c).map(|k| out.data[k * n + i] as f64).collect()).collect())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn prepare(img: &Image) -> Image {
    if img.height == INPUT_SIZE && img.width == INPUT_SIZE {
        img.clone()
    } else {
        resize_image(img, INPUT_SIZE, INPUT_SIZE)
    }
}

/// Trained classifier for images of one view.
#[derive(Clone, Debug)]
pub struct ClassifierOracle {
    pub n_classes: usize,
    pub view: View,
    /// Top-1 accuracy on the held-out images, in percent.
    pub heldout_accuracy: f64,
    net: Net,
}

impl ClassifierOracle {
    /// Class probabilities, one row per image.
    pub fn predict(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let mut net = self.net.clone();
        net.set_train(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let prepared: Vec<Image> = chunk.iter().map(|i| prepare(i)).collect();
            let refs: Vec<&Image> = prepared.iter().collect();
            let logits = net.logits(images_to_tensor(&refs)?, &mut rng)?;
            rows.extend(logits.iter().map(|l| softmax(l)));
        }
        Ok(rows)
    }

    /// Top-1 accuracy in percent against known labels.
    pub fn accuracy(&self, images: &[&Image], labels: &[usize]) -> Result<f64> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(Error::Shape(format!("{} images for {} labels", images.len(), labels.len())));
        }
        let rows = self.predict(images)?;
        let hits = rows.iter().zip(labels).filter(|(r, &l)| argmax(r) == l).count();
        Ok(100.0 * hits as f64 / labels.len() as f64)
    }
}

fn argmax(r: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in r.iter().enumerate() {
        if *v > r[best] {
            best = i;
        }
    }
    best
}

/// Train on `train`, then accept the classifier only if it reaches
/// [`MIN_ACCURACY`] on `heldout`.
pub fn train_classifier(
    train: &[(Image, usize)],
    heldout: &[(Image, usize)],
    n_classes: usize,
    view: View,
    seed: u64,
    config: &ClassifierConfig,
) -> Result<ClassifierOracle> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::Empty("classifier needs training and held-out images".into()));
    }
    if let Some((_, l)) = train.iter().chain(heldout).find(|(_, l)| *l >= n_classes) {
        return Err(Error::Range(format!("label {l} outside {n_classes} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Net::new(n_classes);
    init_weights(&mut net, &mut rng);
    let mut opt = Adam::new(AdamConfig { lr: config.lr, beta1: 0.9, beta2: 0.999 });
    let prepared: Vec<(Image, usize)> = train.iter().map(|(i, l)| (prepare(i), *l)).collect();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            // a batch of one gives degenerate batch statistics
            if chunk.len() < 2 {
                continue;
            }
            let imgs: Vec<Image> = chunk
                .iter()
                .map(|&i| if rng.random::<bool>() { prepared[i].0.flip_horizontal() } else { prepared[i].0.clone() })
                .collect();
            let refs: Vec<&Image> = imgs.iter().collect();
            net.set_train(true);
            net.zero_grad();
            let logits = net.logits(images_to_tensor(&refs)?, &mut rng)?;
            let n = chunk.len();
            // softmax cross-entropy gradient, averaged over the batch
            let mut grad = Tensor::zeros(n_classes, n, 1, 1);
            for (s, (row, &i)) in logits.iter().zip(chunk).enumerate() {
                let p = softmax(row);
                for k in 0..n_classes {
                    let target = (k == prepared[i].1) as u8 as f64;
                    grad.data[k * n + s] = ((p[k] - target) / n as f64) as f32;
                }
            }
            net.body.backward(grad)?;
            opt.step(&mut net);
        }
    }
    net.set_train(false);
    let mut oracle = ClassifierOracle { n_classes, view, heldout_accuracy: 0.0, net };
    let images: Vec<&Image> = heldout.iter().map(|(i, _)| i).collect();
    let labels: Vec<usize> = heldout.iter().map(|(_, l)| *l).collect();
    oracle.heldout_accuracy = oracle.accuracy(&images, &labels)?;
    if oracle.heldout_accuracy < MIN_ACCURACY {
        return Err(Error::OracleRejected { accuracy: oracle.heldout_accuracy, required: MIN_ACCURACY });
    }
    Ok(oracle)
}

/// Train a scene-category classifier on `view` images of a manifest, holding
/// out a seeded random share of the scenes for the acceptance check.
pub fn train_classifier_oracle(manifest: &DatasetManifest, view: View, seed: u64) -> Result<ClassifierOracle> {
    train_classifier_oracle_with(manifest, view, seed, &ClassifierConfig::default())
}

pub fn train_classifier_oracle_with(
    manifest: &DatasetManifest,
    view: View,
    seed: u64,
    config: &ClassifierConfig,
) -> Result<ClassifierOracle> {
    let scenes = manifest.load_scenes()?;
    let samples = manifest.load_samples()?;
    let mut labeled = Vec::with_capacity(samples.len());
    for s in samples {
        let scene = scenes
            .get(&s.id)
            .ok_or_else(|| Error::Manifest(format!("no scene parameters for {}", s.id)))?;
        labeled.push((s.image(view).clone(), scene.scene_category));
    }
    if labeled.len() < 2 {
        return Err(Error::Empty("classifier needs at least two labeled scenes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_c1a5);
    labeled.shuffle(&mut rng);
    let n_held = ((labeled.len() as f64 * config.holdout).round() as usize).clamp(1, labeled.len() - 1);
    let train = labeled.split_off(n_held);
    train_classifier(&train, &labeled, N_CATEGORIES, view, seed, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RangeTag;

    fn toy(n: usize) -> Vec<(Image, usize)> {
        // class 0 dark, class 1 bright, with a little per-image variation
        (0..n)
            .map(|i| {
                let label = i % 2;
                let v = if label == 0 { 40.0 } else { 200.0 } + (i % 7) as f32;
                (Image::filled(32, 32, [v; 3], RangeTag::Byte), label)
            })
            .collect()
    }

    #[test]
    fn separable_toy_classes() {
        let cfg = ClassifierConfig { epochs: 6, batch_size: 8, lr: 2e-3, holdout: 0.2 };
        let oracle = train_classifier(&toy(24), &toy(10), 2, View::Ground, 3, &cfg).unwrap();
        assert_eq!(oracle.heldout_accuracy, 100.0);
        let data = toy(4);
        let imgs: Vec<&Image> = data.iter().map(|(i, _)| i).collect();
        for row in oracle.predict(&imgs).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|p| *p >= 0.0));
        }
        let again = train_classifier(&toy(24), &toy(10), 2, View::Ground, 3, &cfg).unwrap();
        assert_eq!(oracle.predict(&imgs).unwrap(), again.predict(&imgs).unwrap());
    }

    #[test]
    fn gate_rejects_unlearnable_labels() {
        let cfg = ClassifierConfig { epochs: 1, batch_size: 8, lr: 1e-3, holdout: 0.2 };
        // identical images with alternating labels cannot exceed 50%
        let data: Vec<(Image, usize)> =
            (0..20).map(|i| (Image::filled(16, 16, [90.0; 3], RangeTag::Byte), i % 2)).collect();
        let err = train_classifier(&data, &data, 2, View::Ground, 1, &cfg).unwrap_err();
        assert!(matches!(err, Error::OracleRejected { .. }));
    }
}
