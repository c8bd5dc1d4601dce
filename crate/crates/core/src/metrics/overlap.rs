use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::Mask;

/// Voxel-level confusion counts between a prediction and a reference mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &Mask, reference: &Mask) -> Result<ConfusionCounts> {
    pred.geometry().check_matches(reference.geometry())?;
    let mut c = ConfusionCounts::default();
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        match (p, r) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScores {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Dice, precision and recall. Both masks empty scores 1.0 everywhere; a
/// zero denominator with a nonempty counterpart scores 0.0.
pub fn overlap_scores(c: &ConfusionCounts) -> OverlapScores {
    if c.tp + c.fp + c.fn_ == 0 {
        return OverlapScores {
            dice: 1.0,
            precision: 1.0,
            recall: 1.0,
        };
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    OverlapScores {
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    }
}
