//! Acceptance gate: every criterion runs in order and reports one PASS/FAIL
//! line on stderr (written directly, so it shows even when output is
//! captured). The test fails if any criterion fails.
//!
//! The desk-scale training criterion trains three full-width models for 20
//! epochs each and dominates the runtime.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{checks, oracles};
use crossview::checkpoint::load_checkpoint;
use crossview::data::{make_synthetic_dataset, make_synthetic_dataset_split, DatasetManifest, Image, Palette, Split, View};
use crossview::metrics::{
    inception_score, kl_model_data, mean_abs_diff, pixel_scores, psnr, sharpness_difference, ssim_with,
    top_k_indices, topk_accuracy, topk_smooth, train_classifier_oracle, SsimMode,
};
use crossview::model::{Direction, Model};
use crossview::objectives::Architecture;
use crossview::retrieval::knn_l1;
use crossview::trainer::{generate_samples, load_samples_at, train_with, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const TOL: f64 = 1e-9;
const ONE_MINUTE: Duration = Duration::from_secs(60);

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn criterion(id: usize, name: &str, f: impl FnOnce() -> String) -> bool {
    report(&format!("....  criterion {id}: {name}"));
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            report(&format!("PASS  criterion {id}: {name} [{detail}] ({secs:.1}s)"));
            true
        }
        Err(e) => {
            report(&format!("FAIL  criterion {id}: {name}: {} ({secs:.1}s)", panic_message(e)));
            false
        }
    }
}

struct Data {
    _dir: tempfile::TempDir,
    root: PathBuf,
    train: DatasetManifest,
    test: DatasetManifest,
}

fn desk_data() -> Data {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let train = make_synthetic_dataset(512, 7, 64, &root.join("train")).unwrap();
    let test = make_synthetic_dataset_split(128, 8, 64, &root.join("test"), Split::Test).unwrap();
    Data { _dir: dir, root, train, test }
}

// ---- 1 ----

fn metric_oracles() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases = 150;
    let mut worst = 0.0f64;
    let mut track = |name: &str, got: f64, want: f64| {
        assert!(oracles::rel_close(got, want, TOL), "{name}: {got} vs oracle {want}");
        if got != want && want != 0.0 {
            worst = worst.max((got - want).abs() / want.abs());
        }
    };
    for _ in 0..cases {
        let (h, w) = (rng.random_range(8..=32), rng.random_range(8..=32));
        let a = oracles::random_byte_image(&mut rng, h, w);
        let noise = rng.random_range(0..=100);
        let b = oracles::perturbed(&mut rng, &a, noise);
        track("ssim", ssim_with(&a, &b, SsimMode::Global).unwrap(), oracles::ssim_global(&a, &b));
        track("psnr", psnr(&a, &b).unwrap(), oracles::psnr(&a, &b));
        track("sharpness", sharpness_difference(&a, &b).unwrap(), oracles::sharpness_difference(&a, &b));
        track("l1", mean_abs_diff(&a, &b).unwrap(), oracles::l1(&a, &b));
    }
    for _ in 0..cases {
        let count = rng.random_range(2..=20);
        let side = rng.random_range(4..=12);
        let training: Vec<(String, Image)> =
            (0..count).map(|i| (format!("t{i:03}"), oracles::random_byte_image(&mut rng, side, side))).collect();
        let query = if rng.random_bool(0.3) {
            training[rng.random_range(0..count)].1.clone()
        } else {
            oracles::random_byte_image(&mut rng, side, side)
        };
        let got = knn_l1(&query, &training, count).unwrap();
        let want = oracles::knn(&query, &training, count);
        for (g, (id, d)) in got.iter().zip(&want) {
            assert_eq!(&g.id, id, "knn order");
            track("knn distance", g.distance, *d);
        }
    }
    for _ in 0..cases {
        let n = rng.random_range(2..=50);
        let real: Vec<Vec<f64>> = (0..rng.random_range(1..=40)).map(|_| oracles::random_row(&mut rng, n)).collect();
        let gen: Vec<Vec<f64>> = (0..rng.random_range(1..=40)).map(|_| oracles::random_row(&mut rng, n)).collect();
        let (m, s) = kl_model_data(&gen, &real).unwrap();
        let (om, os) = oracles::kl_model_data(&gen, &real);
        track("kl mean", m, om);
        track("kl std", s, os);
        track("inception", inception_score(&gen).unwrap(), oracles::inception_score(&gen));
    }
    let elapsed = start.elapsed();
    assert!(elapsed < ONE_MINUTE, "took {elapsed:?}");
    format!("{cases} inputs per metric, worst relative error {worst:.1e}")
}

// ---- 2 ----

fn inception_bounds() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(4..=365);
        let m = rng.random_range(1..=64);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| oracles::random_row(&mut rng, n)).collect();
        let s = inception_score(&rows).unwrap();
        assert!((1.0..=n as f64).contains(&s), "score {s} outside [1, {n}]");
        lo = lo.min(s);
        hi = hi.max(s / n as f64);
        let uniform = vec![vec![1.0 / n as f64; n]; m];
        let u = inception_score(&uniform).unwrap();
        assert!((u - 1.0).abs() <= TOL, "uniform rows give {u} at n = {n}");
        let copies = rng.random_range(1..=3);
        let onehot: Vec<Vec<f64>> =
            (0..n * copies).map(|i| (0..n).map(|j| (j == i % n) as u8 as f64).collect()).collect();
        let o = inception_score(&onehot).unwrap();
        assert!((o - n as f64).abs() <= TOL, "balanced one-hot gives {o} at n = {n}");
    }
    format!("1000 matrices, min score {lo:.4}, max score/n {hi:.4}")
}

// ---- 3 ----

fn smoothing() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut saturated = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=365);
        let k = if rng.random_bool(0.5) { [1usize, 5][rng.random_range(0..2)].min(n - 1) } else { rng.random_range(1..n) };
        let p = oracles::random_row(&mut rng, n);
        let s = topk_smooth(&p, k).unwrap();
        let top = oracles::top_k(&p, k);
        assert_eq!(top_k_indices(&p, k), top);
        assert!((s.iter().sum::<f64>() - 1.0).abs() <= TOL, "sum {}", s.iter().sum::<f64>());
        let eps = oracles::smoothing_epsilon(&p, k);
        for (i, v) in s.iter().enumerate() {
            if top.contains(&i) {
                assert_eq!(*v, p[i], "kept entry changed");
            } else {
                assert_eq!(v.to_bits(), eps.to_bits(), "epsilon {v} vs formula {eps}");
            }
        }
        let min_kept = top.iter().map(|&i| p[i]).fold(f64::INFINITY, f64::min);
        if min_kept > eps {
            let mut a = top_k_indices(&s, k);
            let mut b = top.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b, "top-k set changed");
        } else {
            // fewer than k positive entries: all mass is kept and epsilon is rounding residue
            assert!(eps.abs() <= 1e-15);
            saturated += 1;
        }
    }
    format!("1000 vectors, {saturated} with fewer than k positive entries")
}

// ---- 4 ----

fn shapes() -> String {
    let start = Instant::now();
    checks::full_width_generators_at_both_resolutions();
    checks::small_variant_drops_two_blocks_everywhere();
    checks::discriminator_maps_are_probabilities();
    checks::initial_weights_follow_the_stated_distribution();
    let elapsed = start.elapsed();
    assert!(elapsed < ONE_MINUTE, "took {elapsed:?}");
    "64 and 256, baseline and fork".into()
}

// ---- 5 ----

fn gradients() -> String {
    let checked = checks::forked_trunk_gradient_is_the_sum_of_head_paths();
    checks::sequential_first_stage_learns_from_second_stage_losses_alone();
    checks::sequential_stage_one_alone_matches_the_baseline_gradient();
    checks::discriminator_and_generator_steps_touch_only_their_own_parameters();
    checks::full_step_updates_every_network();
    format!("{checked} trunk parameters within 1e-3 of finite differences")
}

// ---- 6 ----

fn losses() -> String {
    checks::discriminator_loss_at_one_half();
    checks::fork_without_seg_l1_equals_baseline();
    for arch in [Architecture::Baseline, Architecture::Fork] {
        checks::lambda_scales_the_l1_gradient(arch);
    }
    "2 ln 2, fork = baseline, lambda = 100 scaling".into()
}

// ---- 7 ----

fn desk_run(arch: Architecture, data: &Data) -> String {
    let mut cfg = TrainConfig::new(arch, Direction::A2g, 64).unwrap();
    cfg.epochs = 20;
    cfg.seed = 1;
    cfg.keep_last = Some(1);
    cfg.out_dir = data.root.join(format!("run_{arch}"));
    cfg.eval_manifest = Some(data.test.root.clone());
    let summary = train_with(&cfg, &data.train, &mut |e| {
        report(&format!("      {arch} epoch {:>2}: held-out L1 {:.4}", e.epoch, e.heldout_l1.unwrap_or(f64::NAN)))
    })
    .unwrap();
    let initial = summary.initial_heldout_l1.unwrap();
    let last = summary.epochs.last().unwrap().heldout_l1.unwrap();

    let samples = load_samples_at(&data.test, 64).unwrap();
    let view = Direction::A2g.target();
    let mut untrained = Model::initialized(&cfg.specs().unwrap(), cfg.seed).unwrap();
    let (ssim0, _) = pixel_scores(&samples, &generate_samples(&mut untrained, &samples, Direction::A2g, 16).unwrap(), view).unwrap();
    let mut trained = load_checkpoint(&summary.final_checkpoint).unwrap().model;
    let (ssim1, seg) = pixel_scores(&samples, &generate_samples(&mut trained, &samples, Direction::A2g, 16).unwrap(), view).unwrap();

    let reduction = 1.0 - last / initial;
    let mut detail = format!("L1 {initial:.4} -> {last:.4} (-{:.0}%), SSIM {ssim0:.4} -> {ssim1:.4}", 100.0 * reduction);
    let mut failures = Vec::new();
    if reduction < 0.3 {
        failures.push("held-out L1 fell by less than 30%".to_string());
    }
    if ssim1 <= ssim0 {
        failures.push("SSIM did not rise above the untrained model".to_string());
    }
    if arch.has_seg() {
        let n_classes = Palette::default().len();
        let miou = seg.expect("two-output architectures produce maps").miou;
        detail.push_str(&format!(", mIOU {miou:.4} (random {:.2})", 1.0 / n_classes as f64));
        if miou < 2.0 / n_classes as f64 {
            failures.push(format!("mIOU {miou:.4} is below twice the random-labeling baseline"));
        }
    }
    assert!(failures.is_empty(), "{arch}: {detail}: {}", failures.join("; "));
    detail
}

fn desk_training(data: &Data) -> String {
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for arch in [Architecture::Baseline, Architecture::Fork, Architecture::Xseq] {
        let start = Instant::now();
        match panic::catch_unwind(AssertUnwindSafe(|| desk_run(arch, data))) {
            Ok(d) => {
                let line = format!("{arch}: {d} in {:.0}s", start.elapsed().as_secs_f64());
                report(&format!("      {line}"));
                lines.push(line);
            }
            Err(e) => {
                let msg = panic_message(e);
                report(&format!("      {msg}"));
                failed.push(msg);
            }
        }
    }
    assert!(failed.is_empty(), "{}", failed.join(" | "));
    lines.join("; ")
}

// ---- 8 ----

fn classifier_gate(data: &Data) -> String {
    let samples = load_samples_at(&data.test, 64).unwrap();
    let mut out = Vec::new();
    for view in [View::Ground, View::Aerial] {
        let oracle = train_classifier_oracle(&data.train, view, 0).unwrap();
        assert!(oracle.heldout_accuracy >= 90.0);
        let imgs: Vec<&Image> = samples.iter().map(|s| s.image(view)).collect();
        let p = oracle.predict(&imgs).unwrap();
        for k in [1, 5] {
            assert_eq!(topk_accuracy(&p, &p, k, false).unwrap(), 100.0);
        }
        out.push(format!("{view:?} held-out {:.1}%", oracle.heldout_accuracy));
    }
    out.join(", ")
}

// ---- 9 ----

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn cli(args: &[&str]) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_crossview"))
        .args(args)
        .env("CROSSVIEW_DETERMINISTIC", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "crossview {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn reproducibility(data: &Data) -> String {
    let root = data.root.join("repro");
    fs::create_dir_all(&root).unwrap();
    let run_dir = root.join("run");
    let cfg = root.join("config.json");
    fs::write(
        &cfg,
        serde_json::json!({
            "arch": "xseq", "resolution": 64, "epochs": 2, "width_divisor": 8, "seed": 3,
            "out_dir": run_dir, "train_manifest": data.train.root, "eval_manifest": data.test.root,
        })
        .to_string(),
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut runs = Vec::new();
    for i in 0..2 {
        let stdout = cli(&["train", "--config", &s(&cfg)]);
        let done: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
        let ck = PathBuf::from(done["final_checkpoint"].as_str().unwrap());
        runs.push((done["checksum"].as_str().unwrap().to_string(), sha(&ck), sha(&run_dir.join("log.jsonl")), ck));
        if i == 0 {
            fs::rename(&run_dir, root.join("first")).unwrap();
        }
    }
    assert_eq!(runs[0].0, runs[1].0, "model checksums differ");
    assert_eq!(runs[0].1, runs[1].1, "checkpoint files differ");
    assert_eq!(runs[0].2, runs[1].2, "training logs differ");

    let mut reports = Vec::new();
    for name in ["eval_a", "eval_b"] {
        let out = root.join(name);
        cli(&[
            "evaluate", "--checkpoint", &s(&runs[1].3), "--manifest", &s(&data.test.root),
            "--classifier-manifest", &s(&data.train.root), "--out", &s(&out),
        ]);
        reports.push((fs::read(out.join("report.json")).unwrap(), fs::read(out.join("per_image.csv")).unwrap()));
    }
    assert_eq!(reports[0].0, reports[1].0, "report.json differs between runs");
    assert_eq!(reports[0].1, reports[1].1, "per_image.csv differs between runs");
    format!("checksum {}, report sha256 {}", &runs[0].0[..16], &hex::encode(Sha256::digest(&reports[0].0))[..16])
}

#[test]
fn acceptance() {
    let data = desk_data();
    let results = [
        criterion(1, "metric oracle suite", metric_oracles),
        criterion(2, "inception score bounds", inception_bounds),
        criterion(3, "top-k smoothing", smoothing),
        criterion(4, "architecture shapes", shapes),
        criterion(5, "weight sharing and gradients", gradients),
        criterion(6, "loss arithmetic", losses),
        criterion(8, "classifier oracle gate", || classifier_gate(&data)),
        criterion(9, "reproducibility", || reproducibility(&data)),
        criterion(7, "desk-scale training", || desk_training(&data)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    report(&format!("acceptance: {passed}/{} criteria passed", results.len()));
    assert_eq!(passed, results.len(), "some acceptance criteria failed");
}
