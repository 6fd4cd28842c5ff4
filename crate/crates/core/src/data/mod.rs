//! Images, segmentation maps, synthetic scenes and paired datasets.

pub mod dataset;
pub mod image;
pub mod scene;
pub mod transform;

pub use dataset::{make_synthetic_dataset, make_synthetic_dataset_split, DatasetManifest, ManifestEntry, PairedSample, Split};
pub use image::{denormalize, normalize, Image, Palette, RangeTag, SegMap, CLASS_NAMES};
pub use scene::{render_scene, SceneParams, View};
pub use transform::{augment, augment_with, preprocess, AugmentConfig, AugmentDraw, PreprocessMode};
