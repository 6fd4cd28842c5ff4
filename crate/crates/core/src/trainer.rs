//! Adversarial training loop, run directory management and generation.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_matches, load_checkpoint, read_checkpoint_meta, save_checkpoint};
use crate::data::dataset::write_file;
use crate::data::transform::{resize_image, resize_labels};
use crate::data::{augment, AugmentConfig, DatasetManifest, Image, PairedSample, Split};
use crate::error::{Error, Result};
use crate::layers::{BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
use crate::model::{Batch, Direction, Generated, Model, ModelSpecs};
use crate::montage::montage;
use crate::networks::Network;
use crate::objectives::{
    bce_map, generator_adversarial_map, l1_tensor, Architecture, GeneratorLossForm, LossParts, LossReport, Objective,
    Stage2Parts,
};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const DETERMINISTIC_ENV: &str = "CROSSVIEW_DETERMINISTIC";

/// True when `CROSSVIEW_DETERMINISTIC=1` is set.
pub fn deterministic_requested() -> bool {
    std::env::var(DETERMINISTIC_ENV).map(|v| v == "1").unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub direction: Direction,
    pub resolution: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub real_label: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Training manifest, used when the caller does not pass one.
    pub train_manifest: Option<PathBuf>,
    /// Held-out manifest for per-epoch L1 and preview grids.
    pub eval_manifest: Option<PathBuf>,
    /// Divides every channel count; 1 is the full-size network.
    pub width_divisor: usize,
    pub skip_connections: bool,
    pub generator_loss: GeneratorLossForm,
    pub stage2_weight: f64,
    pub augment: bool,
    pub jitter_px: usize,
    pub flip_prob: f64,
    /// Keep only the newest `n` epoch checkpoints.
    pub keep_last: Option<usize>,
    pub preview_count: usize,
    /// Leave wall-clock fields out of the log so reruns are byte-identical.
    pub deterministic: bool,
    /// Continue from the newest checkpoint in `out_dir` if there is one.
    pub resume: bool,
}

impl TrainConfig {
    /// Defaults for a resolution: 100 epochs at batch 16 for 64×64, 35
    /// epochs at batch 4 for 256×256.
    pub fn new(arch: Architecture, direction: Direction, resolution: usize) -> Result<Self> {
        let (epochs, batch_size) = match resolution {
            64 => (100, 16),
            256 => (35, 4),
            other => return Err(Error::InvalidSize(other)),
        };
        let aug = AugmentConfig::for_resolution(resolution);
        Ok(Self {
            arch,
            direction,
            resolution,
            epochs,
            batch_size,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda: 100.0,
            real_label: 0.9,
            seed: 0,
            out_dir: PathBuf::from("runs").join(format!("{arch}_{direction}_{resolution}")),
            train_manifest: None,
            eval_manifest: None,
            width_divisor: 1,
            skip_connections: false,
            generator_loss: GeneratorLossForm::NonSaturating,
            stage2_weight: 1.0,
            augment: true,
            jitter_px: aug.jitter_px,
            flip_prob: aug.flip_prob,
            keep_last: None,
            preview_count: 4,
            deterministic: false,
            resume: false,
        })
    }

    /// The 30-epoch schedule used for the larger panorama-style dataset.
    pub fn cvusa_schedule(mut self) -> Self {
        self.epochs = 30;
        self
    }

    /// Parse a JSON config. Only `arch` and `resolution` are required;
    /// missing fields take the resolution's defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidArgument("config must be a JSON object".into()))?;
        let arch: Architecture = match obj.get("arch") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(Error::InvalidArgument("config is missing \"arch\"".into())),
        };
        let resolution = obj
            .get("resolution")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::InvalidArgument("config is missing integer \"resolution\"".into()))?;
        let direction = match obj.get("direction") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => Direction::A2g,
        };
        let mut merged = serde_json::to_value(Self::new(arch, direction, resolution as usize)?)?;
        let target = merged.as_object_mut().expect("struct serializes to an object");
        for (k, v) in obj {
            target.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.resolution != 64 && self.resolution != 256 {
            return Err(Error::InvalidSize(self.resolution));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0) || !(self.stage2_weight >= 0.0) {
            return bad("lambda and stage2_weight must be non-negative");
        }
        if !(self.real_label > 0.0 && self.real_label <= 1.0) {
            return bad("real_label must lie in (0, 1]");
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]");
        }
        if self.keep_last == Some(0) {
            return bad("keep_last must be at least 1");
        }
        Ok(())
    }

    pub fn specs(&self) -> Result<ModelSpecs> {
        ModelSpecs::new(self.arch, self.resolution, self.width_divisor, self.skip_connections)
    }

    pub fn objective(&self) -> Objective {
        Objective { arch: self.arch, lambda: self.lambda, stage2_weight: self.stage2_weight }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2 }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig { jitter_px: self.jitter_px, flip_prob: self.flip_prob }
    }
}

/// Which generator loss terms to back-propagate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub stage1: bool,
    pub stage2: bool,
}

impl LossTerms {
    pub const ALL: Self = Self { stage1: true, stage2: true };
}

fn scaled(t: Tensor<f32>, s: f64) -> Tensor<f32> {
    let s = s as f32;
    t.map(|v| v * s)
}

/// Networks, optimizers and loss settings for stepping one run.
pub struct Trainer {
    pub model: Model,
    /// One per network, in `Model::networks_mut` order.
    pub optimizers: Vec<Adam<f32>>,
    pub objective: Objective,
    pub real_label: f64,
    pub generator_loss: GeneratorLossForm,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let model = Model::initialized(&config.specs()?, config.seed)?;
        Ok(Self::with_model(config, model))
    }

    pub fn with_model(config: &TrainConfig, mut model: Model) -> Self {
        let n = model.networks_mut().len();
        Self {
            model,
            optimizers: (0..n).map(|_| Adam::new(config.adam())).collect(),
            objective: config.objective(),
            real_label: config.real_label,
            generator_loss: config.generator_loss,
        }
    }

    /// Train-mode generation; caches activations for the generator step.
    pub fn forward(&mut self, batch: &Batch) -> Result<Generated> {
        self.model.set_train(true);
        self.model.generate(&batch.cond)
    }

    /// Discriminator gradients for the current batch. Returns the stage-1
    /// and (sequential only) stage-2 losses.
    pub fn discriminator_gradients(&mut self, batch: &Batch, gen: &Generated) -> Result<(f64, Option<f64>)> {
        let d = &mut self.model.d;
        d.zero_grad();
        let real = d.forward(&batch.cond, &batch.target)?;
        let (l_real, g_real) = bce_map(&real, self.real_label);
        d.backward(g_real)?;
        let fake = d.forward(&batch.cond, &gen.image)?;
        let (l_fake, g_fake) = bce_map(&fake, 0.0);
        d.backward(g_fake)?;
        let stage2 = match (&mut self.model.d2, &gen.seg) {
            (Some(d2), Some(seg)) => {
                d2.zero_grad();
                // real pair is (generated image, true map)
                let real = d2.forward(&gen.image, &batch.target_seg)?;
                let (l_real, g_real) = bce_map(&real, self.real_label);
                d2.backward(g_real)?;
                let fake = d2.forward(&gen.image, seg)?;
                let (l_fake, g_fake) = bce_map(&fake, 0.0);
                d2.backward(g_fake)?;
                Some(l_real + l_fake)
            }
            _ => None,
        };
        Ok((l_real + l_fake, stage2))
    }

    /// Generator gradients of the selected terms; relies on the caches left
    /// by `forward`. Loss values are always reported in full.
    pub fn generator_gradients(&mut self, batch: &Batch, gen: &Generated, terms: LossTerms) -> Result<LossParts> {
        for g in self.model.generators_mut() {
            g.zero_grad();
        }
        let obj = self.objective;
        let w1 = if terms.stage1 { 1.0 } else { 0.0 };
        let w2 = if terms.stage2 { 1.0 } else { 0.0 };
        let map = self.model.d.forward(&batch.cond, &gen.image)?;
        let (g_gan, d_map) = generator_adversarial_map(&map, self.generator_loss);
        let (_, d_from_d) = self.model.d.backward(scaled(d_map, w1 * obj.adversarial_weight()))?;
        let (g_l1_image, d_l1) = l1_tensor(&gen.image, &batch.target)?;
        let mut d_image = d_from_d;
        d_image.add_assign(&scaled(d_l1, w1 * obj.l1_weight()));
        let mut parts = LossParts { g_gan, g_l1_image, ..Default::default() };
        match self.objective.arch {
            Architecture::Baseline => {
                self.model.g.backward(d_image, None)?;
            }
            Architecture::Fork => {
                let seg = gen.seg.as_ref().ok_or_else(|| Error::InvalidArgument("fork output lacks a map".into()))?;
                let (l1_seg, d_seg) = l1_tensor(seg, &batch.target_seg)?;
                parts.g_l1_seg = l1_seg;
                self.model.g.backward(d_image, Some(scaled(d_seg, w1 * obj.l1_weight())))?;
            }
            Architecture::Xseq => {
                let seg = gen.seg.as_ref().ok_or_else(|| Error::InvalidArgument("missing stage-2 output".into()))?;
                let (d2, g2) = match (&mut self.model.d2, &mut self.model.g2) {
                    (Some(d2), Some(g2)) => (d2, g2),
                    _ => return Err(Error::InvalidArgument("sequential model lacks its second stage".into())),
                };
                let map2 = d2.forward(&gen.image, seg)?;
                let (g2_gan, d_map2) = generator_adversarial_map(&map2, self.generator_loss);
                let (d_cond2, d_seg_adv) = d2.backward(scaled(d_map2, w2 * obj.stage2_adversarial_weight()))?;
                let (l1_seg, d_l1_seg) = l1_tensor(seg, &batch.target_seg)?;
                let mut d_seg = d_seg_adv;
                d_seg.add_assign(&scaled(d_l1_seg, w2 * obj.stage2_l1_weight()));
                let d_from_g2 = g2.backward(d_seg, None)?;
                d_image.add_assign(&d_cond2);
                d_image.add_assign(&d_from_g2);
                self.model.g.backward(d_image, None)?;
                parts.stage2 = Some(Stage2Parts { d_loss: 0.0, g_gan: g2_gan, g_l1_seg: l1_seg });
            }
        }
        Ok(parts)
    }

    /// One full update: discriminator(s) first, then the generator(s)
    /// jointly. Updates are skipped when any loss is non-finite.
    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        let gen = self.forward(batch)?;
        let (d_loss, d2_loss) = self.discriminator_gradients(batch, &gen)?;
        let d_ok = d_loss.is_finite() && d2_loss.is_none_or(f64::is_finite);
        if d_ok {
            self.optimizers[1].step(&mut self.model.d);
            if let Some(d2) = &mut self.model.d2 {
                self.optimizers[3].step(d2);
            }
        }
        let mut parts = self.generator_gradients(batch, &gen, LossTerms::ALL)?;
        parts.d_loss = d_loss;
        if let (Some(s2), Some(l)) = (&mut parts.stage2, d2_loss) {
            s2.d_loss = l;
        }
        let report = self.objective.compose(&parts)?;
        if d_ok && report.is_finite() {
            self.optimizers[0].step(&mut self.model.g);
            if let Some(g2) = &mut self.model.g2 {
                self.optimizers[2].step(g2);
            }
        }
        Ok(report)
    }
}

/// Per-epoch RNG: a ChaCha stream selected by epoch and purpose, so a
/// resumed run draws exactly what an uninterrupted one would.
pub fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch as u64) << 8 | purpose);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossReport,
    pub heldout_l1: Option<f64>,
    pub checkpoint: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub checksum: String,
    /// Held-out L1 before any update, when an eval set was given and the run started fresh.
    pub initial_heldout_l1: Option<f64>,
    pub epochs: Vec<EpochSummary>,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch}.ckpt"))
}

/// Newest `epoch_{k}.ckpt` under `out_dir/checkpoints`.
pub fn latest_checkpoint(out_dir: &Path) -> Option<(usize, PathBuf)> {
    let dir = out_dir.join("checkpoints");
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| {
            let p = e.ok()?.path();
            let k = p.file_name()?.to_str()?.strip_prefix("epoch_")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((k, p))
        })
        .max_by_key(|(k, _)| *k)
}

struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    fn write(&mut self, record: &serde_json::Value) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn merge(mut base: serde_json::Value, extra: impl Serialize) -> Result<serde_json::Value> {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), serde_json::to_value(extra)?) {
        b.extend(e);
    }
    Ok(base)
}

/// Load a manifest's samples at `resolution`, resizing when needed.
pub fn load_samples_at(manifest: &DatasetManifest, resolution: usize) -> Result<Vec<PairedSample>> {
    let mut samples = manifest.load_samples()?;
    for s in &mut samples {
        if s.aerial.height != resolution || s.aerial.width != resolution {
            s.aerial = resize_image(&s.aerial, resolution, resolution);
            s.aerial_seg = resize_labels(&s.aerial_seg, resolution, resolution);
        }
        if s.ground.height != resolution || s.ground.width != resolution {
            s.ground = resize_image(&s.ground, resolution, resolution);
            s.ground_seg = resize_labels(&s.ground_seg, resolution, resolution);
        }
    }
    Ok(samples)
}

/// Mean normalized-space L1 between eval-mode generations and targets.
pub fn heldout_l1(model: &mut Model, samples: &[PairedSample], direction: Direction, batch: usize) -> Result<f64> {
    model.set_train(false);
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&PairedSample> = chunk.iter().collect();
        let b = Batch::from_samples(&refs, direction)?;
        let gen = model.generate(&b.cond)?;
        total += l1_tensor(&gen.image, &b.target)?.0 * chunk.len() as f64;
    }
    model.set_train(true);
    Ok(total / samples.len() as f64)
}

fn write_preview(model: &mut Model, samples: &[PairedSample], direction: Direction, path: &Path) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    let conds: Vec<&Image> = samples.iter().map(|s| s.image(direction.source())).collect();
    let outputs = model.generate_images(&conds, samples.len())?;
    model.set_train(true);
    let mut headers: Vec<String> = ["input", "ground truth", "generated"].map(String::from).to_vec();
    let has_seg = outputs.iter().any(|o| o.1.is_some());
    if has_seg {
        headers.extend(["true seg", "gen seg"].map(String::from));
    }
    let rows: Vec<Vec<Image>> = samples
        .iter()
        .zip(outputs)
        .map(|(s, (img, seg))| {
            let mut row = vec![s.image(direction.source()).clone(), s.image(direction.target()).clone(), img];
            if let Some(seg) = seg {
                row.push(s.seg(direction.target()).colorized());
                row.push(seg);
            }
            row
        })
        .collect();
    montage(&rows, Some(&headers))?.save_png(path)
}

pub fn train(config: &TrainConfig, manifest: &DatasetManifest) -> Result<RunSummary> {
    train_with(config, manifest, &mut |_| {})
}

/// Run training, calling `on_epoch` after every completed epoch.
pub fn train_with(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    on_epoch: &mut dyn FnMut(&EpochSummary),
) -> Result<RunSummary> {
    let mut config = config.clone();
    config.deterministic |= deterministic_requested();
    config.validate()?;
    if manifest.split != Split::Train {
        return Err(Error::InvalidArgument("training needs a train-split manifest".into()));
    }
    if manifest.resolution != config.resolution {
        return Err(Error::InvalidArgument(format!(
            "manifest resolution {} differs from configured {}",
            manifest.resolution, config.resolution
        )));
    }
    let samples = load_samples_at(manifest, config.resolution)?;
    if samples.is_empty() {
        return Err(Error::Empty("training manifest has no samples".into()));
    }
    let eval_samples = match &config.eval_manifest {
        Some(p) => load_samples_at(&DatasetManifest::load(p)?, config.resolution)?,
        None => Vec::new(),
    };
    let out = config.out_dir.clone();
    for sub in ["checkpoints", "samples"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| Error::io(out.join(sub), e))?;
    }
    let config_json = serde_json::to_value(&config)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&config_json)?)
        .map_err(|e| Error::io(out.join("config.json"), e))?;

    let resume_from = if config.resume { latest_checkpoint(&out) } else { None };
    let (mut trainer, start_epoch) = match &resume_from {
        Some((_, path)) => {
            let ck = load_checkpoint(path)?;
            check_matches(&ck.model.specs, config.arch, config.resolution)?;
            if ck.model.specs != config.specs()? {
                return Err(Error::CheckpointMismatch("network specs differ from the config".into()));
            }
            let mut t = Trainer::with_model(&config, ck.model);
            t.optimizers = ck.optimizers;
            (t, ck.epoch + 1)
        }
        None => (Trainer::new(&config)?, 1),
    };
    let mut log = RunLog::open(&out.join("log.jsonl"), resume_from.is_some())?;
    let mut counts = serde_json::Map::new();
    for (name, net) in trainer.model.networks_mut() {
        counts.insert(name.to_string(), net.param_count().into());
    }
    log.write(&serde_json::json!({
        "kind": if resume_from.is_some() { "resume" } else { "start" },
        "start_epoch": start_epoch,
        "config": config_json,
        "batch_norm": { "eps": BATCH_NORM_EPS, "momentum": BATCH_NORM_MOMENTUM },
        "param_counts": counts,
        "checksum": trainer.model.checksum(),
    }))?;

    let direction = config.direction;
    let mut initial = None;
    if start_epoch == 1 && !eval_samples.is_empty() {
        let l1 = heldout_l1(&mut trainer.model, &eval_samples, direction, config.batch_size)?;
        initial = Some(l1);
        log.write(&serde_json::json!({ "kind": "eval", "epoch": 0, "heldout_l1": l1 }))?;
    }
    let aug = config.augment_config();
    let preview: Vec<PairedSample> = if eval_samples.is_empty() { &samples } else { &eval_samples }
        .iter()
        .take(config.preview_count)
        .cloned()
        .collect();
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let mut epochs = Vec::new();
    let mut last = resume_from.map(|(_, p)| p);
    for epoch in start_epoch..=config.epochs {
        let started = Instant::now();
        let mut rng = epoch_rng(config.seed, epoch, 0);
        trainer.model.g.reseed(epoch_rng(config.seed, epoch, 1).random());
        if let Some(g2) = &mut trainer.model.g2 {
            g2.reseed(epoch_rng(config.seed, epoch, 2).random());
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        let mut steps = 0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            // A lone trailing sample would give degenerate batch statistics.
            if idx.len() == 1 && config.batch_size > 1 {
                continue;
            }
            let batch_samples: Vec<PairedSample> = if config.augment {
                idx.iter().map(|&i| augment(&samples[i], &aug, &mut rng)).collect::<Result<_>>()?
            } else {
                idx.iter().map(|&i| samples[i].clone()).collect()
            };
            let refs: Vec<&PairedSample> = batch_samples.iter().collect();
            let batch = Batch::from_samples(&refs, direction)?;
            let report = trainer.step(&batch)?;
            let global_step = (epoch - 1) * steps_per_epoch + step;
            if !report.is_finite() {
                let record = merge(
                    serde_json::json!({ "kind": "diverged", "epoch": epoch, "step": step, "global_step": global_step }),
                    report,
                )?;
                log.write(&record)?;
                let detail = merge(record, serde_json::json!({ "ids": idx.iter().map(|&i| &samples[i].id).collect::<Vec<_>>() }))?;
                fs::write(out.join("diverged.json"), serde_json::to_string_pretty(&detail)?)
                    .map_err(|e| Error::io(out.join("diverged.json"), e))?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: serde_json::to_string(&report)?,
                });
            }
            log.write(&merge(
                serde_json::json!({ "kind": "step", "epoch": epoch, "step": step, "global_step": global_step }),
                report,
            )?)?;
            accumulate(&mut sum, &report);
            steps += 1;
        }
        let mean = scale_report(&sum, steps);
        let heldout = if eval_samples.is_empty() {
            None
        } else {
            Some(heldout_l1(&mut trainer.model, &eval_samples, direction, config.batch_size)?)
        };
        let ck = checkpoint_path(&out, epoch);
        save_checkpoint(&ck, &mut trainer.model, &trainer.optimizers, epoch, &config_json)?;
        if let Some(keep) = config.keep_last {
            if epoch > keep {
                let old = checkpoint_path(&out, epoch - keep);
                if old.exists() {
                    fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
                }
            }
        }
        write_preview(&mut trainer.model, &preview, direction, &out.join("samples").join(format!("epoch_{epoch}.png")))?;
        let summary = EpochSummary {
            epoch,
            steps,
            mean,
            heldout_l1: heldout,
            checkpoint: ck.clone(),
            seconds: (!config.deterministic).then(|| started.elapsed().as_secs_f64()),
        };
        log.write(&merge(serde_json::json!({ "kind": "epoch" }), &summary)?)?;
        on_epoch(&summary);
        epochs.push(summary);
        last = Some(ck);
    }
    let final_checkpoint = last.ok_or_else(|| Error::InvalidArgument("no epochs left to run".into()))?;
    Ok(RunSummary {
        out_dir: out,
        final_checkpoint,
        checksum: trainer.model.checksum(),
        initial_heldout_l1: initial,
        epochs,
    })
}

fn accumulate(sum: &mut LossReport, r: &LossReport) {
    sum.d_loss += r.d_loss;
    sum.g_gan += r.g_gan;
    sum.g_l1_image += r.g_l1_image;
    sum.g_l1_seg += r.g_l1_seg;
    sum.d2_loss += r.d2_loss;
    sum.g2_gan += r.g2_gan;
    sum.g2_l1_seg += r.g2_l1_seg;
    sum.total_g += r.total_g;
    sum.lambda = r.lambda;
}

fn scale_report(sum: &LossReport, n: usize) -> LossReport {
    let k = 1.0 / n.max(1) as f64;
    LossReport {
        d_loss: sum.d_loss * k,
        g_gan: sum.g_gan * k,
        g_l1_image: sum.g_l1_image * k,
        g_l1_seg: sum.g_l1_seg * k,
        d2_loss: sum.d2_loss * k,
        g2_gan: sum.g2_gan * k,
        g2_l1_seg: sum.g2_l1_seg * k,
        total_g: sum.total_g * k,
        lambda: sum.lambda,
    }
}

/// One generated output with its source id.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSample {
    pub id: String,
    pub image: Image,
    pub seg: Option<Image>,
}

/// Eval-mode generation over every sample of a set.
pub fn generate_samples(
    model: &mut Model,
    samples: &[PairedSample],
    direction: Direction,
    batch: usize,
) -> Result<Vec<GeneratedSample>> {
    let conds: Vec<&Image> = samples.iter().map(|s| s.image(direction.source())).collect();
    let outputs = model.generate_images(&conds, batch)?;
    Ok(samples
        .iter()
        .zip(outputs)
        .map(|(s, (image, seg))| GeneratedSample { id: s.id.clone(), image, seg })
        .collect())
}

/// Directory of generated outputs, described by a `generated.json` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSet {
    #[serde(skip)]
    pub dir: PathBuf,
    pub direction: Direction,
    pub resolution: usize,
    pub ids: Vec<String>,
    pub has_seg: bool,
}

pub const GENERATED_FILE: &str = "generated.json";

impl GeneratedSet {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(GENERATED_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut set: GeneratedSet = serde_json::from_str(&text)?;
        set.dir = dir.to_path_buf();
        Ok(set)
    }

    /// Read back every output image (and map, when present).
    pub fn load_samples(&self) -> Result<Vec<GeneratedSample>> {
        self.ids
            .iter()
            .map(|id| {
                let seg = if self.has_seg { Some(Image::load(&self.seg_path(id))?) } else { None };
                Ok(GeneratedSample { id: id.clone(), image: Image::load(&self.image_path(id))?, seg })
            })
            .collect()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.dir.join("images").join(format!("{id}.png"))
    }

    pub fn seg_path(&self, id: &str) -> PathBuf {
        self.dir.join("seg").join(format!("{id}.png"))
    }
}

/// Direction and batch size recorded in a checkpoint's run config.
pub fn checkpoint_direction(config: &serde_json::Value) -> Option<Direction> {
    serde_json::from_value(config.get("direction")?.clone()).ok()
}

/// Generate target-view images (and maps, for the two-output variants) for
/// every manifest entry, writing `images/<id>.png` and `seg/<id>.png`.
pub fn generate(checkpoint: &Path, manifest: &DatasetManifest, direction: Direction, out_dir: &Path) -> Result<GeneratedSet> {
    let meta = read_checkpoint_meta(checkpoint)?;
    if meta.specs.resolution() != manifest.resolution {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint resolution {} differs from manifest resolution {}",
            meta.specs.resolution(),
            manifest.resolution
        )));
    }
    if let Some(d) = checkpoint_direction(&meta.config) {
        if d != direction {
            return Err(Error::CheckpointMismatch(format!("checkpoint was trained for {d}, not {direction}")));
        }
    }
    let mut model = load_checkpoint(checkpoint)?.model;
    let samples = load_samples_at(manifest, manifest.resolution)?;
    let batch = meta.config.get("batch_size").and_then(|v| v.as_u64()).unwrap_or(16) as usize;
    let outputs = generate_samples(&mut model, &samples, direction, batch)?;
    let has_seg = outputs.iter().any(|o| o.seg.is_some());
    let set = GeneratedSet {
        dir: out_dir.to_path_buf(),
        direction,
        resolution: manifest.resolution,
        ids: outputs.iter().map(|o| o.id.clone()).collect(),
        has_seg,
    };
    fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;
    if has_seg {
        fs::create_dir_all(out_dir.join("seg")).map_err(|e| Error::io(out_dir, e))?;
    }
    for o in &outputs {
        o.image.save_png(&set.image_path(&o.id))?;
        if let Some(seg) = &o.seg {
            seg.save_png(&set.seg_path(&o.id))?;
        }
    }
    let sidecar = out_dir.join(GENERATED_FILE);
    write_file(&sidecar, (serde_json::to_string_pretty(&set)? + "\n").as_bytes())?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_resolution() {
        let c = TrainConfig::new(Architecture::Baseline, Direction::A2g, 64).unwrap();
        assert_eq!((c.epochs, c.batch_size), (100, 16));
        let c = TrainConfig::new(Architecture::Fork, Direction::G2a, 256).unwrap();
        assert_eq!((c.epochs, c.batch_size, c.beta1, c.beta2, c.lambda, c.real_label), (35, 4, 0.5, 0.999, 100.0, 0.9));
        assert_eq!(c.cvusa_schedule().epochs, 30);
        assert!(TrainConfig::new(Architecture::Fork, Direction::G2a, 128).is_err());
    }

    #[test]
    fn json_config_fills_defaults() {
        let c = TrainConfig::from_json(r#"{"arch": "xseq", "resolution": 64, "epochs": 3, "out_dir": "/tmp/x"}"#).unwrap();
        assert_eq!((c.arch, c.epochs, c.batch_size, c.direction), (Architecture::Xseq, 3, 16, Direction::A2g));
        assert!(TrainConfig::from_json(r#"{"resolution": 64}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"arch": "fork", "resolution": 64, "bogus": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"arch": "fork", "resolution": 64, "batch_size": 0}"#).is_err());
    }

    #[test]
    fn epoch_streams_are_distinct_and_stable() {
        let a: u64 = epoch_rng(1, 3, 0).random();
        assert_eq!(a, epoch_rng(1, 3, 0).random::<u64>());
        assert_ne!(a, epoch_rng(1, 4, 0).random::<u64>());
        assert_ne!(a, epoch_rng(1, 3, 1).random::<u64>());
    }
}
