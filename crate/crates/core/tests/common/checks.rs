//! Architecture, gradient and loss checks shared by the unit-level test
//! targets and the acceptance gate. Each check panics on failure.

#![allow(dead_code)]

use std::collections::HashMap;

use crossview::data::{make_synthetic_dataset, DatasetManifest, PairedSample};
use crossview::model::{Batch, Direction, Model};
use crossview::networks::{build_discriminator, build_generator, init_weights, Arch, Generator, Network, NetworkSpec};
use crossview::objectives::{gan_loss_discriminator, objective_baseline, objective_fork, Architecture, LossParts};
use crossview::tensor::{Float, Tensor};
use crossview::trainer::{LossTerms, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(res: usize, batch: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * batch * res * res).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    Tensor::from_vec(3, batch, res, res, data).unwrap()
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

pub fn grads<T: Float>(net: &mut dyn Network<T>) -> HashMap<String, Vec<f64>> {
    let mut out = HashMap::new();
    net.visit_params(&mut |name, p| {
        out.insert(name, p.grad.iter().map(|g| g.as_f64()).collect());
    });
    out
}

fn param_bits(net: &mut dyn Network<f32>) -> Vec<u32> {
    let mut bits = Vec::new();
    net.visit_params(&mut |_, p| bits.extend(p.value.iter().map(|v| v.to_bits())));
    bits
}

// ---- shapes ----

pub fn full_width_generators_at_both_resolutions() {
    for res in [64, 256] {
        for arch in [Arch::Baseline, Arch::Fork] {
            let spec = NetworkSpec::new(arch, res).unwrap();
            let mut g = build_generator::<f32>(&spec).unwrap();
            init_weights(&mut g, &mut ChaCha8Rng::seed_from_u64(1));
            let x = random_input(res, 2, 2);
            for train in [true, false] {
                g.set_train(train);
                let out = g.forward(&x).unwrap();
                assert_eq!(out.image.shape(), [3, 2, res, res]);
                let bottleneck = g.last_bottleneck().unwrap();
                assert_eq!(bottleneck, [*spec.enc_channels.last().unwrap(), 2, 1, 1]);
                let mut all = out.image.data.clone();
                match (arch, out.seg) {
                    (Arch::Fork, Some(seg)) => {
                        assert_eq!(seg.shape(), [3, 2, res, res]);
                        all.extend(seg.data);
                    }
                    (Arch::Baseline, None) => {}
                    other => panic!("unexpected seg output for {:?}", other.0),
                }
                assert!(all.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}

pub fn small_variant_drops_two_blocks_everywhere() {
    for arch in [Arch::Baseline, Arch::Fork] {
        let big = NetworkSpec::new(arch, 256).unwrap();
        let small = NetworkSpec::new(arch, 64).unwrap();
        let (g256, g64) = (build_generator::<f32>(&big).unwrap(), build_generator::<f32>(&small).unwrap());
        assert_eq!(g256.encoder_len(), 8);
        assert_eq!(g256.encoder_len() - g64.encoder_len(), 2);
        assert_eq!(g256.decoder_len(), 8);
        assert_eq!(g256.decoder_len() - g64.decoder_len(), 2);
        let (d256, d64) = (build_discriminator::<f32>(&big).unwrap(), build_discriminator::<f32>(&small).unwrap());
        assert_eq!(d256.downsampling_blocks() - d64.downsampling_blocks(), 2);
        if arch == Arch::Fork {
            // both variants keep two unshared blocks per head
            assert_eq!((g256.head_len(), g64.head_len()), (2, 2));
        }
    }
}

pub fn discriminator_maps_are_probabilities() {
    for res in [64, 256] {
        let spec = NetworkSpec::new(Arch::Baseline, res).unwrap();
        let mut d = build_discriminator::<f32>(&spec).unwrap();
        init_weights(&mut d, &mut ChaCha8Rng::seed_from_u64(3));
        let map = d.forward(&random_input(res, 2, 4), &random_input(res, 2, 5)).unwrap();
        assert_eq!((map.channels, map.batch), (1, 2));
        assert!(map.data.iter().all(|p| *p > 0.0 && *p < 1.0));
    }
}

pub fn initial_weights_follow_the_stated_distribution() {
    let spec = NetworkSpec::new(Arch::Baseline, 64).unwrap();
    let mut g = build_generator::<f32>(&spec).unwrap();
    init_weights(&mut g, &mut ChaCha8Rng::seed_from_u64(9));
    let (mut w, mut gamma, mut zeros) = (Vec::new(), Vec::new(), true);
    g.visit_params(&mut |name, p| {
        if name.ends_with(".weight") {
            w.extend(p.value.iter().map(|&v| v as f64));
        } else if name.ends_with(".gamma") {
            gamma.extend(p.value.iter().map(|&v| v as f64));
        } else {
            zeros &= p.value.iter().all(|&v| v == 0.0);
        }
    });
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
    };
    let (wm, ws) = stats(&w);
    assert!(wm.abs() < 1e-3 && (ws - 0.02).abs() < 1e-3, "{wm} {ws}");
    let (gm, gs) = stats(&gamma);
    assert!((gm - 1.0).abs() < 5e-3 && (gs - 0.02).abs() < 5e-3, "{gm} {gs}");
    assert!(zeros, "biases and shifts start at zero");
}

// ---- gradients ----

struct ForkCase {
    g: Generator<f64>,
    x: Tensor<f64>,
    a: Tensor<f64>,
    b: Tensor<f64>,
}

impl ForkCase {
    fn new() -> Self {
        let spec = NetworkSpec::new(Arch::Fork, 64).unwrap().with_widths(|c| c / 64);
        let mut g = build_generator::<f64>(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        init_weights(&mut g, &mut rng);
        // larger weights than the default init keep the gradients well above rounding
        g.visit_params(&mut |name, p| {
            if name.ends_with(".weight") {
                p.value.iter_mut().for_each(|v| *v *= 10.0);
            }
        });
        let x = random_tensor([3, 2, 64, 64], &mut rng);
        let a = random_tensor([3, 2, 64, 64], &mut rng);
        let b = random_tensor([3, 2, 64, 64], &mut rng);
        Self { g, x, a, b }
    }

    /// `sum(a * image) + sum(b * seg)` with a fixed dropout stream.
    fn loss(&mut self) -> f64 {
        self.g.reseed(5);
        let out = self.g.forward(&self.x).unwrap();
        let dot = |t: &Tensor<f64>, w: &Tensor<f64>| t.data.iter().zip(&w.data).map(|(p, q)| p * q).sum::<f64>();
        dot(&out.image, &self.a) + dot(&out.seg.unwrap(), &self.b)
    }

    fn gradient(&mut self, image: bool, seg: bool) -> HashMap<String, Vec<f64>> {
        self.g.zero_grad();
        self.g.reseed(5);
        let out = self.g.forward(&self.x).unwrap();
        let zero = |t: &Tensor<f64>| t.clone().map(|_| 0.0);
        let d_img = if image { self.a.clone() } else { zero(&out.image) };
        let d_seg = if seg { self.b.clone() } else { zero(&out.image) };
        self.g.backward(d_img, Some(d_seg)).unwrap();
        grads(&mut self.g)
    }

    fn nudge(&mut self, name: &str, i: usize, delta: f64) {
        self.g.visit_params(&mut |n, p| {
            if n == name {
                p.value[i] += delta;
            }
        });
    }
}

/// Returns the number of trunk parameters checked against finite differences.
pub fn forked_trunk_gradient_is_the_sum_of_head_paths() -> usize {
    let mut case = ForkCase::new();
    case.g.set_train(true);
    let full = case.gradient(true, true);
    let via_image = case.gradient(true, false);
    let via_seg = case.gradient(false, true);
    let shared: Vec<&String> = full.keys().filter(|k| k.starts_with("dec") || k.starts_with("enc")).collect();
    assert!(!shared.is_empty());
    for name in &shared {
        for ((f, i), s) in full[*name].iter().zip(&via_image[*name]).zip(&via_seg[*name]) {
            assert!((f - (i + s)).abs() <= 1e-9 * (i.abs() + s.abs()).max(1e-12), "{name}: {f} vs {i} + {s}");
        }
    }
    // each head only receives gradient from its own output
    for (name, g) in &via_image {
        if name.starts_with("seg.") {
            assert!(g.iter().all(|v| *v == 0.0), "{name}");
        }
    }
    for (name, g) in &via_seg {
        if name.starts_with("image.") {
            assert!(g.iter().all(|v| *v == 0.0), "{name}");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut names: Vec<String> = shared.iter().filter(|k| k.starts_with("dec")).map(|k| k.to_string()).collect();
    names.sort();
    let mut checked = 0;
    let eps = 1e-5;
    for attempt in 0..200 {
        if checked >= 8 {
            break;
        }
        let name = &names[attempt % names.len()];
        let idx = rng.random_range(0..full[name].len());
        let analytic = full[name][idx];
        if analytic.abs() < 1e-6 {
            continue;
        }
        case.nudge(name, idx, eps);
        let up = case.loss();
        case.nudge(name, idx, -2.0 * eps);
        let down = case.loss();
        case.nudge(name, idx, eps);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs());
        assert!(rel <= 1e-3, "{name}[{idx}]: analytic {analytic} numeric {numeric} rel {rel}");
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} trunk parameters had usable gradients");
    checked
}

pub fn tiny_setup(arch: Architecture) -> (Trainer, Batch, Vec<PairedSample>) {
    let tmp = tempfile::tempdir().unwrap();
    make_synthetic_dataset(4, 21, 64, tmp.path()).unwrap();
    let samples = DatasetManifest::load(tmp.path()).unwrap().load_samples().unwrap();
    let mut cfg = TrainConfig::new(arch, Direction::A2g, 64).unwrap();
    cfg.width_divisor = 16;
    cfg.seed = 4;
    let trainer = Trainer::new(&cfg).unwrap();
    let refs: Vec<&PairedSample> = samples.iter().take(2).collect();
    let batch = Batch::from_samples(&refs, Direction::A2g).unwrap();
    (trainer, batch, samples)
}

pub fn sequential_first_stage_learns_from_second_stage_losses_alone() {
    let (mut t, batch, _) = tiny_setup(Architecture::Xseq);
    let gen = t.forward(&batch).unwrap();
    t.generator_gradients(&batch, &gen, LossTerms { stage1: false, stage2: true }).unwrap();
    let g1 = grads(&mut t.model.g);
    let norm: f64 = g1.values().flatten().map(|v| v * v).sum();
    assert!(norm > 0.0, "stage-1 generator got no gradient from stage-2 terms");
    let g2 = grads(t.model.g2.as_mut().unwrap());
    assert!(g2.values().flatten().any(|v| *v != 0.0));
}

pub fn sequential_stage_one_alone_matches_the_baseline_gradient() {
    let (mut xseq, batch, _) = tiny_setup(Architecture::Xseq);
    let mut cfg = TrainConfig::new(Architecture::Baseline, Direction::A2g, 64).unwrap();
    cfg.width_divisor = 16;
    let specs = cfg.specs().unwrap();
    let mut base_model = Model::build(&specs).unwrap();
    base_model.g = xseq.model.g.clone();
    base_model.d = xseq.model.d.clone();
    let mut base = Trainer::with_model(&cfg, base_model);

    let gen = xseq.forward(&batch).unwrap();
    xseq.generator_gradients(&batch, &gen, LossTerms { stage1: true, stage2: false }).unwrap();
    let gen_b = base.forward(&batch).unwrap();
    assert_eq!(gen.image, gen_b.image);
    base.generator_gradients(&batch, &gen_b, LossTerms::ALL).unwrap();
    let (gx, gb) = (grads(&mut xseq.model.g), grads(&mut base.model.g));
    for (name, a) in &gx {
        for (p, q) in a.iter().zip(&gb[name]) {
            assert!((p - q).abs() <= 1e-6 * q.abs().max(1e-3), "{name}: {p} vs {q}");
        }
    }
}

pub fn discriminator_and_generator_steps_touch_only_their_own_parameters() {
    for arch in [Architecture::Baseline, Architecture::Fork, Architecture::Xseq] {
        let (mut t, batch, _) = tiny_setup(arch);
        let gen = t.forward(&batch).unwrap();
        let g_before: Vec<Vec<u32>> = t.model.generators_mut().into_iter().map(param_bits).collect();
        t.discriminator_gradients(&batch, &gen).unwrap();
        t.optimizers[1].step(&mut t.model.d);
        if let Some(d2) = &mut t.model.d2 {
            t.optimizers[3].step(d2);
        }
        let g_after: Vec<Vec<u32>> = t.model.generators_mut().into_iter().map(param_bits).collect();
        assert_eq!(g_before, g_after, "{arch}: discriminator step moved generator parameters");

        let d_before: Vec<Vec<u32>> = t.model.discriminators_mut().into_iter().map(param_bits).collect();
        t.generator_gradients(&batch, &gen, LossTerms::ALL).unwrap();
        t.optimizers[0].step(&mut t.model.g);
        if let Some(g2) = &mut t.model.g2 {
            t.optimizers[2].step(g2);
        }
        let d_after: Vec<Vec<u32>> = t.model.discriminators_mut().into_iter().map(param_bits).collect();
        assert_eq!(d_before, d_after, "{arch}: generator step moved discriminator parameters");
        let g_moved: Vec<Vec<u32>> = t.model.generators_mut().into_iter().map(param_bits).collect();
        assert_ne!(g_after, g_moved);
    }
}

pub fn full_step_updates_every_network() {
    let (mut t, batch, _) = tiny_setup(Architecture::Xseq);
    let before: Vec<Vec<u32>> = t.model.networks_mut().into_iter().map(|(_, n)| param_bits(n)).collect();
    let report = t.step(&batch).unwrap();
    assert!(report.is_finite());
    let after: Vec<Vec<u32>> = t.model.networks_mut().into_iter().map(|(_, n)| param_bits(n)).collect();
    for (b, a) in before.iter().zip(&after) {
        assert_ne!(b, a);
    }
}

// ---- losses ----

pub fn discriminator_loss_at_one_half() {
    let v = gan_loss_discriminator(0.5, 0.5, 0.9);
    assert!((v - 2.0 * std::f64::consts::LN_2).abs() <= 1e-9, "{v}");
}

pub fn fork_without_seg_l1_equals_baseline() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let p = LossParts {
            d_loss: rng.random_range(0.0..5.0),
            g_gan: rng.random_range(0.0..5.0),
            g_l1_image: rng.random_range(0.0..2.0),
            g_l1_seg: 0.0,
            stage2: None,
        };
        let lambda = rng.random_range(0.0..200.0);
        assert_eq!(objective_fork(&p, lambda), objective_baseline(&p, lambda));
    }
}

/// Generator gradients at λ ∈ {0, λ, 2λ} on the same batch and weights:
/// the gradient must be affine in λ with the L1 part scaled by λ, and the
/// reported total must carry the same weight.
pub fn lambda_scales_the_l1_gradient(arch: Architecture) {
    let (t, batch, _) = tiny_setup(arch);
    let lambda = TrainConfig::new(arch, Direction::A2g, 64).unwrap().lambda;
    assert_eq!(lambda, 100.0);
    let at = |l: f64| {
        let mut cfg = TrainConfig::new(arch, Direction::A2g, 64).unwrap();
        cfg.width_divisor = 16;
        cfg.lambda = l;
        let mut tr = Trainer::with_model(&cfg, t.model.clone());
        tr.model.g.reseed(9);
        let gen = tr.forward(&batch).unwrap();
        let parts = tr.generator_gradients(&batch, &gen, LossTerms { stage1: true, stage2: false }).unwrap();
        let report = cfg.objective().compose(&parts).unwrap();
        let mut names: Vec<(String, Vec<f64>)> = grads(&mut tr.model.g).into_iter().collect();
        names.sort_by(|a, b| a.0.cmp(&b.0));
        (names.into_iter().flat_map(|(_, g)| g).collect::<Vec<f64>>(), parts, report)
    };
    let (g0, p0, _) = at(0.0);
    let (g1, p1, r1) = at(lambda);
    let (g2, _, _) = at(2.0 * lambda);
    assert_eq!(p0.g_l1_image, p1.g_l1_image);
    let l1_seg = if arch == Architecture::Fork { p1.g_l1_seg } else { 0.0 };
    let expected_total = p1.g_gan + lambda * (p1.g_l1_image + l1_seg);
    assert!((r1.total_g - expected_total).abs() <= 1e-9 * expected_total.abs());
    let scale = g1.iter().zip(&g0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(scale > 0.0, "λ has no effect on the gradient");
    let residual = g2.iter().zip(&g1).zip(&g0).map(|((c, b), a)| (c - 2.0 * b + a).abs()).fold(0.0, f64::max);
    assert!(residual <= 1e-4 * scale, "gradient is not affine in λ: {residual} vs {scale}");
}
