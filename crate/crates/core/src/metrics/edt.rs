//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Separable lower-envelope-of-parabolas transform (one 1D pass per axis on
//! squared distances, each pass weighted by that axis' spacing).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, Mask, Volume};

/// Squared distance (mm²) from every voxel centre to the nearest foreground
/// voxel centre. Infinite everywhere when the mask is empty.
pub fn squared_edt(mask: &Mask) -> IntensityVolume {
    let g = mask.geometry().clone();
    let [nx, ny, nz] = g.dims;
    let [sx, sy, sz] = g.spacing;
    let mut d: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    // x then y within each axial slice
    d.par_chunks_mut(nx * ny).for_each(|slice| {
        let mut s = Scratch::new(nx.max(ny));
        for row in slice.chunks_mut(nx) {
            s.line[..nx].copy_from_slice(row);
            envelope(&mut s, nx, sx * sx, row);
        }
        let mut col = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                s.line[j] = slice[i + nx * j];
            }
            envelope(&mut s, ny, sy * sy, &mut col);
            for j in 0..ny {
                slice[i + nx * j] = col[j];
            }
        }
    });

    if nz > 1 {
        let plane = nx * ny;
        let columns: Vec<Vec<f64>> = (0..plane)
            .into_par_iter()
            .map_init(
                || Scratch::new(nz),
                |s, p| {
                    for k in 0..nz {
                        s.line[k] = d[p + plane * k];
                    }
                    let mut out = vec![0.0; nz];
                    envelope(s, nz, sz * sz, &mut out);
                    out
                },
            )
            .collect();
        for (p, col) in columns.into_iter().enumerate() {
            for (k, v) in col.into_iter().enumerate() {
                d[p + plane * k] = v;
            }
        }
    }
    Volume::from_vec(g, d).expect("same geometry")
}

/// Distance (mm) to the nearest foreground voxel centre; zero on foreground.
pub fn edt(mask: &Mask) -> Result<IntensityVolume> {
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let mut d = squared_edt(mask);
    d.data_mut().par_iter_mut().for_each(|x| *x = x.sqrt());
    Ok(d)
}

struct Scratch {
    line: Vec<f64>,
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            line: vec![0.0; n],
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }
}

/// `out[p] = min_q line[q] + w2 * (p - q)^2` over the first `n` samples.
fn envelope(s: &mut Scratch, n: usize, w2: f64, out: &mut [f64]) {
    let f = &s.line[..n];
    let v = &mut s.sites;
    let z = &mut s.bounds;
    let mut k: usize = 0;
    let mut found = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !found {
            found = true;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        let qf = q as f64;
        loop {
            let r = v[k];
            let rf = r as f64;
            let sect = ((f[q] + w2 * qf * qf) - (f[r] + w2 * rf * rf)) / (2.0 * w2 * (qf - rf));
            if sect <= z[k] {
                // z[0] is -inf, so k never underflows
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = sect;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !found {
        out[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out[..n].iter_mut().enumerate() {
        let pf = p as f64;
        while z[k + 1] < pf {
            k += 1;
        }
        let dq = pf - v[k] as f64;
        *o = w2 * dq * dq + f[v[k]];
    }
}
