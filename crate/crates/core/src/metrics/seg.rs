//! Per-class accuracy and mean IOU for label maps.

use serde::{Deserialize, Serialize};

use crate::data::image::{BUILDING, ROAD, SKY, VEGETATION};
use crate::data::{SegMap, View};
use crate::error::{Error, Result};

/// Classes scored for maps of each view.
pub fn evaluated_classes(view: View) -> Vec<u8> {
    match view {
        View::Ground => vec![SKY, ROAD, BUILDING, VEGETATION],
        View::Aerial => vec![ROAD, BUILDING, VEGETATION],
    }
}

/// Pixel counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: u8,
    pub gt: u64,
    pub pred: u64,
    pub intersection: u64,
}

impl ClassCounts {
    /// Fraction of ground-truth pixels labeled correctly.
    pub fn accuracy(&self) -> Option<f64> {
        (self.gt > 0).then(|| self.intersection as f64 / self.gt as f64)
    }

    pub fn iou(&self) -> Option<f64> {
        let union = self.gt + self.pred - self.intersection;
        (union > 0).then(|| self.intersection as f64 / union as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub per_class_acc: f64,
    pub miou: f64,
    pub classes: Vec<ClassCounts>,
}

/// Counts accumulated over any number of map pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SegCounts {
    pub classes: Vec<ClassCounts>,
}

impl SegCounts {
    pub fn new(classes: &[u8]) -> Self {
        Self { classes: classes.iter().map(|&class| ClassCounts { class, ..Default::default() }).collect() }
    }

    pub fn add(&mut self, pred: &SegMap, gt: &SegMap) -> Result<()> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        for c in &mut self.classes {
            for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
                c.gt += (g == c.class) as u64;
                c.pred += (p == c.class) as u64;
                c.intersection += (p == c.class && g == c.class) as u64;
            }
        }
        Ok(())
    }

    /// Means over classes that occur in the ground truth.
    pub fn scores(&self) -> Result<SegScores> {
        let present: Vec<&ClassCounts> = self.classes.iter().filter(|c| c.gt > 0).collect();
        if present.is_empty() {
            return Err(Error::Empty("none of the evaluated classes occur in the ground truth".into()));
        }
        let n = present.len() as f64;
        let per_class_acc = present.iter().filter_map(|c| c.accuracy()).sum::<f64>() / n;
        let miou = present.iter().filter_map(|c| c.iou()).sum::<f64>() / n;
        Ok(SegScores { per_class_acc, miou, classes: self.classes.clone() })
    }
}

pub fn seg_scores(pred: &SegMap, gt: &SegMap, classes: &[u8]) -> Result<SegScores> {
    let mut counts = SegCounts::new(classes);
    counts.add(pred, gt)?;
    counts.scores()
}
