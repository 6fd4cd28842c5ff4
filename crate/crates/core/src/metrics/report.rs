//! Dataset-level evaluation of generated images against their real targets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::ClassifierOracle;
use super::quality::{psnr, sharpness_difference, ssim};
use super::scores::{inception_score, kl_model_data, smooth_rows, topk_accuracy};
use super::seg::{evaluated_classes, SegCounts, SegScores};
use crate::data::{Image, PairedSample, SegMap, View};
use crate::error::{Error, Result};
use crate::trainer::GeneratedSample;

pub const REPORT_FILE: &str = "report.json";
pub const PER_IMAGE_FILE: &str = "per_image.csv";

/// Aggregate scores. Infinite per-image PSNR and sharpness values are left
/// out of the means and counted separately; a mean is `None` when every
/// value was infinite. Confidence-filtered accuracies are `None` when no
/// real image passes the filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub view: View,
    pub n_images: usize,
    pub n_classes: usize,
    pub classifier_heldout_accuracy: f64,
    pub inception_all: f64,
    pub inception_top1: f64,
    pub inception_top5: f64,
    pub real_inception_all: f64,
    pub real_inception_top1: f64,
    pub real_inception_top5: f64,
    pub acc_top1_all: f64,
    pub acc_top1_conf: Option<f64>,
    pub acc_top5_all: f64,
    pub acc_top5_conf: Option<f64>,
    pub kl_mean: f64,
    pub kl_std: f64,
    pub ssim: f64,
    pub psnr: Option<f64>,
    pub psnr_inf_count: usize,
    pub sharp_diff: Option<f64>,
    pub sharp_diff_inf_count: usize,
    pub seg_per_class_acc: Option<f64>,
    pub seg_miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub id: String,
    pub ssim: f64,
    pub psnr: f64,
    pub sharp_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub per_image: Vec<ImageScores>,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut inf) = (0.0, 0usize, 0usize);
    for v in values {
        if v.is_finite() {
            sum += v;
            n += 1;
        } else {
            inf += 1;
        }
    }
    ((n > 0).then(|| sum / n as f64), inf)
}

fn csv_number(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

impl Evaluation {
    pub fn report_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.report)? + "\n")
    }

    pub fn per_image_csv(&self) -> String {
        let mut s = String::from("id,ssim,psnr,sharp_diff\n");
        for r in &self.per_image {
            let _ = writeln!(s, "{},{},{},{}", r.id, csv_number(r.ssim), csv_number(r.psnr), csv_number(r.sharp_diff));
        }
        s
    }

    /// Write `report.json` and `per_image.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(REPORT_FILE);
        fs::write(&p, self.report_json()?).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(PER_IMAGE_FILE);
        fs::write(&p, self.per_image_csv()).map_err(|e| Error::io(&p, e))
    }
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Empty(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

type Pair<'a> = (&'a GeneratedSample, &'a PairedSample);

fn match_pairs<'a>(real: &'a [PairedSample], generated: &'a [GeneratedSample]) -> Result<Vec<Pair<'a>>> {
    let by_id: HashMap<&str, &PairedSample> = real.iter().map(|s| (s.id.as_str(), s)).collect();
    generated
        .iter()
        .map(|g| {
            by_id
                .get(g.id.as_str())
                .map(|r| (g, *r))
                .ok_or_else(|| Error::Manifest(format!("generated id {} is not in the manifest", g.id)))
        })
        .collect()
}

/// Pooled segmentation scores when every output carries a map.
fn seg_agreement(pairs: &[Pair<'_>], view: View) -> Result<Option<SegScores>> {
    if !pairs.iter().all(|(g, _)| g.seg.is_some()) {
        return Ok(None);
    }
    let mut counts = SegCounts::new(&evaluated_classes(view));
    for (g, r) in pairs {
        let truth = r.seg(view);
        let pred = SegMap::quantize(g.seg.as_ref().expect("checked above"), &truth.palette)?;
        counts.add(&pred, truth)?;
    }
    counts.scores().map(Some)
}

/// Mean windowed SSIM and pooled segmentation scores, without a classifier.
pub fn pixel_scores(real: &[PairedSample], generated: &[GeneratedSample], view: View) -> Result<(f64, Option<SegScores>)> {
    if generated.is_empty() {
        return Err(Error::Empty("no generated images to evaluate".into()));
    }
    let pairs = match_pairs(real, generated)?;
    let mut total = 0.0;
    for (g, r) in &pairs {
        total += ssim(&g.image, r.image(view))?;
    }
    Ok((total / pairs.len() as f64, seg_agreement(&pairs, view)?))
}

/// Score each generated output against the real sample with the same id.
/// `view` is the view the outputs depict.
pub fn evaluate_outputs(
    real: &[PairedSample],
    generated: &[GeneratedSample],
    view: View,
    oracle: &ClassifierOracle,
) -> Result<Evaluation> {
    if generated.is_empty() {
        return Err(Error::Empty("no generated images to evaluate".into()));
    }
    if oracle.view != view {
        return Err(Error::InvalidArgument(format!(
            "classifier was trained on {:?} images but outputs are {:?}",
            oracle.view, view
        )));
    }
    let pairs = match_pairs(real, generated)?;

    let mut per_image = Vec::with_capacity(pairs.len());
    for (g, r) in &pairs {
        let target = r.image(view);
        per_image.push(ImageScores {
            id: g.id.clone(),
            ssim: ssim(&g.image, target)?,
            psnr: psnr(&g.image, target)?,
            sharp_diff: sharpness_difference(&g.image, target)?,
        });
    }

    let gen_imgs: Vec<&Image> = pairs.iter().map(|(g, _)| &g.image).collect();
    let real_imgs: Vec<&Image> = pairs.iter().map(|(_, r)| r.image(view)).collect();
    let gen_p = oracle.predict(&gen_imgs)?;
    let real_p = oracle.predict(&real_imgs)?;
    let (kl_mean, kl_std) = kl_model_data(&gen_p, &real_p)?;

    let seg = seg_agreement(&pairs, view)?;
    let (seg_per_class_acc, seg_miou) = (seg.as_ref().map(|s| s.per_class_acc), seg.as_ref().map(|s| s.miou));

    let (psnr_mean, psnr_inf_count) = finite_mean(per_image.iter().map(|r| r.psnr));
    let (sharp_mean, sharp_diff_inf_count) = finite_mean(per_image.iter().map(|r| r.sharp_diff));
    let report = MetricReport {
        view,
        n_images: pairs.len(),
        n_classes: oracle.n_classes,
        classifier_heldout_accuracy: oracle.heldout_accuracy,
        inception_all: inception_score(&gen_p)?,
        inception_top1: inception_score(&smooth_rows(&gen_p, 1)?)?,
        inception_top5: inception_score(&smooth_rows(&gen_p, 5)?)?,
        real_inception_all: inception_score(&real_p)?,
        real_inception_top1: inception_score(&smooth_rows(&real_p, 1)?)?,
        real_inception_top5: inception_score(&smooth_rows(&real_p, 5)?)?,
        acc_top1_all: topk_accuracy(&real_p, &gen_p, 1, false)?,
        acc_top1_conf: optional(topk_accuracy(&real_p, &gen_p, 1, true))?,
        acc_top5_all: topk_accuracy(&real_p, &gen_p, 5, false)?,
        acc_top5_conf: optional(topk_accuracy(&real_p, &gen_p, 5, true))?,
        kl_mean,
        kl_std,
        ssim: per_image.iter().map(|r| r.ssim).sum::<f64>() / per_image.len() as f64,
        psnr: psnr_mean,
        psnr_inf_count,
        sharp_diff: sharp_mean,
        sharp_diff_inf_count,
        seg_per_class_acc,
        seg_miou,
    };
    Ok(Evaluation { report, per_image })
}

/// The real targets presented as if generated, for self-checks.
pub fn ground_truth_outputs(real: &[PairedSample], view: View) -> Vec<GeneratedSample> {
    real.iter()
        .map(|s| GeneratedSample { id: s.id.clone(), image: s.image(view).clone(), seg: Some(s.seg(view).colorized()) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_mean_skips_infinities() {
        assert_eq!(finite_mean([1.0, f64::INFINITY, 3.0].into_iter()), (Some(2.0), 1));
        assert_eq!(finite_mean([f64::INFINITY].into_iter()), (None, 1));
        assert_eq!(csv_number(f64::INFINITY), "inf");
        assert_eq!(csv_number(2.5), "2.5");
    }
}
