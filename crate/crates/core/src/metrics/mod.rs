//! Overlap and surface-distance scores, per-structure evaluation and
//! report aggregation.

pub mod edt;
pub mod overlap;
pub mod report;
pub mod surface;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::roi::{crop, BBox};
use crate::volume::LabelVolume;

pub use edt::{edt, squared_edt};
pub use overlap::{confusion, overlap_scores, ConfusionCounts, OverlapScores};
pub use report::{aggregate, Aggregate, DiceBins, MetricsReport, StructureSummary, Summary};
pub use surface::{nsd, surface};

pub const DEFAULT_TAU_MM: f64 = 2.0;

/// Scores for one structure of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub label_id: u32,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub nsd: f64,
    pub tau_mm: f64,
    /// Set when the label is absent from both prediction and reference.
    pub both_empty: bool,
}

#[derive(Default)]
struct LabelExtent {
    pred: Option<BBox>,
    reference: Option<BBox>,
}

fn grow(b: &mut Option<BBox>, p: [usize; 3]) {
    match b {
        None => *b = Some(BBox { lo: p, hi: p }),
        Some(b) => {
            for a in 0..3 {
                b.lo[a] = b.lo[a].min(p[a]);
                b.hi[a] = b.hi[a].max(p[a]);
            }
        }
    }
}

/// Scores every label in `labels` (binarized prediction against binarized
/// reference). Output order follows `labels`.
pub fn evaluate_case(
    pred: &LabelVolume,
    reference: &LabelVolume,
    labels: &[u32],
    tau_mm: f64,
) -> Result<Vec<StructureScore>> {
    pred.geometry().check_matches(reference.geometry())?;
    if !(tau_mm > 0.0) {
        return Err(crate::Error::Parameter(format!("tau must be positive, got {tau_mm}")));
    }
    let g = pred.geometry();

    // one pass: joint (pred, ref) histogram and per-label extents
    let mut pairs: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut extents: BTreeMap<u32, LabelExtent> = BTreeMap::new();
    for (idx, (&p, &r)) in pred.data().iter().zip(reference.data()).enumerate() {
        if p == 0 && r == 0 {
            continue;
        }
        *pairs.entry((p, r)).or_insert(0) += 1;
        let c = g.coords(idx);
        if p != 0 {
            grow(&mut extents.entry(p).or_default().pred, c);
        }
        if r != 0 {
            grow(&mut extents.entry(r).or_default().reference, c);
        }
    }
    let total = g.voxel_count() as u64;

    labels
        .par_iter()
        .map(|&id| {
            let mut c = ConfusionCounts::default();
            for (&(p, r), &n) in &pairs {
                match (p == id, r == id) {
                    (true, true) => c.tp += n,
                    (true, false) => c.fp += n,
                    (false, true) => c.fn_ += n,
                    (false, false) => {}
                }
            }
            c.tn = total - c.tp - c.fp - c.fn_;
            let o = overlap_scores(&c);
            let ext = extents.get(&id);
            let both_empty = c.tp + c.fp + c.fn_ == 0;
            let nsd_value = match ext.map(|e| (e.pred, e.reference)) {
                Some((Some(a), Some(b))) => {
                    let bbox = BBox {
                        lo: [0, 1, 2].map(|i| a.lo[i].min(b.lo[i])),
                        hi: [0, 1, 2].map(|i| a.hi[i].max(b.hi[i])),
                    };
                    let (p, _) = crop(pred, bbox)?;
                    let (r, _) = crop(reference, bbox)?;
                    nsd(&p.map(|&l| l == id), &r.map(|&l| l == id), tau_mm)?
                }
                Some(_) => 0.0,
                None => 1.0,
            };
            Ok(StructureScore {
                label_id: id,
                dice: o.dice,
                precision: o.precision,
                recall: o.recall,
                nsd: nsd_value,
                tau_mm,
                both_empty,
            })
        })
        .collect()
}
