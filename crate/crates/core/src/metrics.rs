//! Confusion-matrix segmentation metrics.

use thiserror::Error;

pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label maps differ in size ({pred} vs {gt} pixels)")]
    Size { pred: usize, gt: usize },

    #[error("label {label} at pixel {index} is outside 0..{classes} and not the ignore label")]
    Label { label: u8, index: usize, classes: usize },
}

/// `counts[gt * k + pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    pub ignore: Option<u8>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            ignore: Some(IGNORE_LABEL),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check(&self, label: u8, index: usize) -> Result<bool, MetricsError> {
        if Some(label) == self.ignore {
            Ok(false)
        } else if (label as usize) < self.classes {
            Ok(true)
        } else {
            Err(MetricsError::Label {
                label,
                index,
                classes: self.classes,
            })
        }
    }
}

/// Adds one pair of label maps. Pixels where either map holds the ignore
/// label are skipped. The matrix is untouched on error.
pub fn confusion_update(cm: &mut ConfusionMatrix, pred: &[u8], gt: &[u8]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Size {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let mut scored = Vec::with_capacity(pred.len());
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        let keep_g = cm.check(g, i)?;
        let keep_p = cm.check(p, i)?;
        if keep_g && keep_p {
            scored.push((g as usize, p as usize));
        }
    }
    for (g, p) in scored {
        cm.counts[g * cm.classes + p] += 1;
    }
    Ok(())
}

/// Per-class IoU; `None` for classes absent from both prediction and
/// ground truth.
pub fn class_iou(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    let k = cm.classes;
    (0..k)
        .map(|c| {
            let tp = cm.get(c, c);
            let fn_: u64 = (0..k).map(|p| cm.get(c, p)).sum::<u64>() - tp;
            let fp: u64 = (0..k).map(|g| cm.get(g, c)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect()
}

/// Mean IoU over classes present in the ground truth or the prediction;
/// `None` when nothing has been scored.
pub fn mean_iou(cm: &ConfusionMatrix) -> Option<f64> {
    let ious: Vec<f64> = class_iou(cm).into_iter().flatten().collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}
