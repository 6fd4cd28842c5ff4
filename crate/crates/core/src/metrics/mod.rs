//! Evaluation scores: classifier-based scores, pixel-level image quality and
//! segmentation agreement.

pub mod classifier;
pub mod quality;
pub mod report;
pub mod scores;
pub mod seg;

pub use classifier::{train_classifier, train_classifier_oracle, ClassifierConfig, ClassifierOracle};
pub use quality::{mean_abs_diff, mse, psnr, sharpness_difference, ssim, ssim_with, SsimMode};
pub use report::{evaluate_outputs, ground_truth_outputs, pixel_scores, Evaluation, ImageScores, MetricReport};
pub use scores::{inception_score, kl_model_data, top_k_indices, topk_accuracy, topk_smooth};
pub use seg::{evaluated_classes, seg_scores, SegCounts, SegScores};
