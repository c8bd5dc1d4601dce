use crate::error::{Error, Result};
use crate::metrics::edt::squared_edt;
use crate::roi::{crop, foreground_extent, BBox};
use crate::volume::Mask;

/// Foreground voxels with at least one face neighbour that is background or
/// lies outside the grid.
pub fn surface(mask: &Mask) -> Mask {
    let g = mask.geometry().clone();
    let [nx, ny, nz] = g.dims;
    let data = mask.data();
    let mut out = mask.clone();
    let out_data = out.data_mut();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.index(i, j, k);
                if !data[idx] {
                    continue;
                }
                let interior = i > 0
                    && i + 1 < nx
                    && j > 0
                    && j + 1 < ny
                    && k > 0
                    && k + 1 < nz
                    && data[idx - 1]
                    && data[idx + 1]
                    && data[idx - nx]
                    && data[idx + nx]
                    && data[idx - nx * ny]
                    && data[idx + nx * ny];
                out_data[idx] = !interior;
            }
        }
    }
    out
}

fn union_box(a: Option<BBox>, b: Option<BBox>) -> Option<BBox> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(BBox {
            lo: [0, 1, 2].map(|i| a.lo[i].min(b.lo[i])),
            hi: [0, 1, 2].map(|i| a.hi[i].max(b.hi[i])),
        }),
    }
}

/// Normalized surface Dice at tolerance `tau_mm`: the fraction of both
/// surfaces lying within `tau_mm` of the other surface. Both masks empty
/// scores 1.0, exactly one empty scores 0.0.
pub fn nsd(pred: &Mask, reference: &Mask, tau_mm: f64) -> Result<f64> {
    pred.geometry().check_matches(reference.geometry())?;
    if !(tau_mm > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau_mm}")));
    }
    // Every surface point and every candidate nearest point lies inside the
    // joint foreground box, and cut faces coincide with background or the
    // grid border, so working on the crop is exact.
    let Some(bbox) = union_box(foreground_extent(pred), foreground_extent(reference)) else {
        return Ok(1.0);
    };
    let (p, _) = crop(pred, bbox)?;
    let (r, _) = crop(reference, bbox)?;
    Ok(nsd_within(&p, &r, tau_mm))
}

fn nsd_within(pred: &Mask, reference: &Mask, tau_mm: f64) -> f64 {
    let sp = surface(pred);
    let sr = surface(reference);
    let (np, nr) = (sp.count(), sr.count());
    if np == 0 && nr == 0 {
        return 1.0;
    }
    if np == 0 || nr == 0 {
        return 0.0;
    }
    let dr = squared_edt(&sr);
    let dp = squared_edt(&sp);
    let within = |s: &Mask, d: &[f64]| {
        s.data()
            .iter()
            .zip(d)
            .filter(|(&on, &dd)| on && dd.sqrt() <= tau_mm)
            .count()
    };
    let hits = within(&sp, dr.data()) + within(&sr, dp.data());
    hits as f64 / (np + nr) as f64
}
