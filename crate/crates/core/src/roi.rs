//! Body-mask based region-of-interest cropping and restoration.
//!
//! The body mask is thresholded from the CT, the largest connected component
//! is taken as the head-and-neck region, and an axis-aligned box around it is
//! widened in-plane by a margin and optionally extended over every axial slice.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, LabelVolume, Mask, Volume};

pub const DEFAULT_BODY_THRESHOLD_HU: f64 = -500.0;
pub const DEFAULT_MARGIN_PX: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    #[serde(rename = "6")]
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets already visited in an x-fastest raster scan.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=0 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if !before {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if self == Connectivity::TwentySix || manhattan == 1 {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::Parameter(format!("connectivity must be 6 or 26, got {other}"))),
        }
    }
}

/// Thresholds `ct >= threshold` and fills background cavities that are
/// enclosed within their axial slice.
pub fn body_mask_threshold(ct: &IntensityVolume, threshold: f64) -> Mask {
    let mut mask = ct.map(|&x| x >= threshold);
    let [nx, ny, nz] = mask.dims();
    let plane = nx * ny;
    use rayon::prelude::*;
    mask.data_mut()
        .par_chunks_mut(plane)
        .take(nz)
        .for_each(|slice| fill_slice_holes(slice, nx, ny));
    mask
}

/// Sets every background pixel not 4-connected to the slice border.
fn fill_slice_holes(slice: &mut [bool], nx: usize, ny: usize) {
    let mut outside = vec![false; slice.len()];
    let mut queue = VecDeque::new();
    let seed = |i: usize, j: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let idx = i + nx * j;
        if !slice[idx] && !outside[idx] {
            outside[idx] = true;
            queue.push_back(idx);
        }
    };
    for i in 0..nx {
        seed(i, 0, &mut outside, &mut queue);
        seed(i, ny - 1, &mut outside, &mut queue);
    }
    for j in 0..ny {
        seed(0, j, &mut outside, &mut queue);
        seed(nx - 1, j, &mut outside, &mut queue);
    }
    while let Some(idx) = queue.pop_front() {
        let (i, j) = (idx % nx, idx / nx);
        let mut visit = |n: usize| {
            if !slice[n] && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(idx - 1);
        }
        if i + 1 < nx {
            visit(idx + 1);
        }
        if j > 0 {
            visit(idx - nx);
        }
        if j + 1 < ny {
            visit(idx + nx);
        }
    }
    for (v, o) in slice.iter_mut().zip(outside) {
        if !o {
            *v = true;
        }
    }
}

/// Connected components of a mask. Ids run 1..=K by decreasing size; ties go
/// to the component whose first voxel comes earlier in scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub labels: LabelVolume,
    /// `sizes[id - 1]` is the voxel count of component `id`.
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop as usize] = keep;
        keep
    }
}

const UNLABELED: u32 = u32::MAX;

/// Two-pass union-find labeling.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> ComponentLabeling {
    let g = mask.geometry().clone();
    let [nx, ny, nz] = g.dims;
    let offsets = connectivity.backward_offsets();
    let data = mask.data();
    let mut provisional = vec![UNLABELED; data.len()];
    let mut sets = DisjointSet { parent: Vec::new() };

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.index(i, j, k);
                if !data[idx] {
                    continue;
                }
                let mut current = UNLABELED;
                for &[dx, dy, dz] in &offsets {
                    let (ni, nj, nk) = (i as isize + dx, j as isize + dy, k as isize + dz);
                    if ni < 0 || nj < 0 || nk < 0 || ni >= nx as isize || nj >= ny as isize {
                        continue;
                    }
                    let n = provisional[g.index(ni as usize, nj as usize, nk as usize)];
                    if n == UNLABELED {
                        continue;
                    }
                    current = if current == UNLABELED {
                        sets.find(n)
                    } else {
                        sets.union(current, n)
                    };
                }
                provisional[idx] = if current == UNLABELED {
                    sets.make()
                } else {
                    current
                };
            }
        }
    }

    // resolve roots, then rank by (size desc, first voxel asc)
    let n_prov = sets.parent.len();
    let mut root_of = vec![0u32; n_prov];
    for p in 0..n_prov as u32 {
        root_of[p as usize] = sets.find(p);
    }
    let mut size = vec![0usize; n_prov];
    let mut first = vec![usize::MAX; n_prov];
    for (idx, p) in provisional.iter().enumerate() {
        if *p != UNLABELED {
            let r = root_of[*p as usize] as usize;
            size[r] += 1;
            if first[r] == usize::MAX {
                first[r] = idx;
            }
        }
    }
    let mut roots: Vec<usize> = (0..n_prov).filter(|&r| size[r] > 0).collect();
    roots.sort_by(|&a, &b| size[b].cmp(&size[a]).then(first[a].cmp(&first[b])));
    let mut final_id = vec![0u32; n_prov];
    for (rank, &r) in roots.iter().enumerate() {
        final_id[r] = rank as u32 + 1;
    }
    let labels: Vec<u32> = provisional
        .iter()
        .map(|&p| {
            if p == UNLABELED {
                0
            } else {
                final_id[root_of[p as usize] as usize]
            }
        })
        .collect();
    ComponentLabeling {
        labels: Volume::from_vec(g, labels).expect("same geometry"),
        sizes: roots.iter().map(|&r| size[r]).collect(),
    }
}

/// Mask of component 1.
pub fn largest_component(c: &ComponentLabeling) -> Result<Mask> {
    if c.sizes.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(c.labels.map(|&l| l == 1))
}

/// Inclusive voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BBox {
    pub fn full(dims: [usize; 3]) -> Self {
        BBox {
            lo: [0; 3],
            hi: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
        }
    }

    pub fn extent(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= p[a] && p[a] <= self.hi[a])
    }

    pub fn check_within(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.lo[a] > self.hi[a] || self.hi[a] >= dims[a] {
                return Err(Error::Bounds(format!(
                    "axis {a}: [{}, {}] not within 0..{}",
                    self.lo[a], self.hi[a], dims[a]
                )));
            }
        }
        Ok(())
    }
}

/// Tight foreground extents, or `None` for an empty mask.
pub fn foreground_extent(mask: &Mask) -> Option<BBox> {
    let g = mask.geometry();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (idx, _) in mask.data().iter().enumerate().filter(|(_, &b)| b) {
        any = true;
        let c = g.coords(idx);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    any.then_some(BBox { lo, hi })
}

/// Foreground box widened by `margin` in x and y (clipped to the grid). With
/// `full_z` the box spans every axial slice, otherwise the tight z extent.
pub fn fit_bbox(mask: &Mask, margin: usize, full_z: bool) -> Result<BBox> {
    let tight = foreground_extent(mask).ok_or(Error::EmptyMask)?;
    let dims = mask.dims();
    let mut b = tight;
    for a in 0..2 {
        b.lo[a] = tight.lo[a].saturating_sub(margin);
        b.hi[a] = (tight.hi[a] + margin).min(dims[a] - 1);
    }
    if full_z {
        b.lo[2] = 0;
        b.hi[2] = dims[2] - 1;
    }
    Ok(b)
}

/// Everything needed to put a cropped label map back on the original grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub case_id: String,
    pub original_dims: [usize; 3],
    pub bbox_lo: [usize; 3],
    pub bbox_hi: [usize; 3],
    pub margin_used: usize,
}

impl CropRecord {
    pub fn bbox(&self) -> BBox {
        BBox {
            lo: self.bbox_lo,
            hi: self.bbox_hi,
        }
    }

    pub fn with_case(mut self, case_id: &str, margin: usize) -> Self {
        self.case_id = case_id.to_string();
        self.margin_used = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.original_dims.contains(&0) {
            return Err(Error::RecordMismatch("original_dims contains zero".into()));
        }
        self.bbox().check_within(self.original_dims)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: CropRecord = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        rec.validate()?;
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("plain struct");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Extracts the sub-volume inside `bbox`.
pub fn crop<T: Copy>(v: &Volume<T>, bbox: BBox) -> Result<(Volume<T>, CropRecord)> {
    let dims = v.dims();
    bbox.check_within(dims)?;
    let ext = bbox.extent();
    let mut out = Vec::with_capacity(ext.iter().product());
    let data = v.data();
    let g = v.geometry();
    for k in bbox.lo[2]..=bbox.hi[2] {
        for j in bbox.lo[1]..=bbox.hi[1] {
            let start = g.index(bbox.lo[0], j, k);
            out.extend_from_slice(&data[start..start + ext[0]]);
        }
    }
    let geometry = g.sub_grid(bbox.lo, ext);
    let record = CropRecord {
        case_id: String::new(),
        original_dims: dims,
        bbox_lo: bbox.lo,
        bbox_hi: bbox.hi,
        margin_used: 0,
    };
    Ok((Volume::from_vec(geometry, out)?, record))
}

/// Places `cropped` back at the recorded offset on a grid of the original
/// dims, filling the rest with `background`.
pub fn restore<T: Copy>(cropped: &Volume<T>, rec: &CropRecord, background: T) -> Result<Volume<T>> {
    rec.validate()?;
    let bbox = rec.bbox();
    let ext = bbox.extent();
    if cropped.dims() != ext {
        return Err(Error::RecordMismatch(format!(
            "cropped dims {:?} do not match record extent {:?} for case `{}`",
            cropped.dims(),
            ext,
            rec.case_id
        )));
    }
    let cg = cropped.geometry();
    let mut geometry = cg.clone();
    geometry.dims = rec.original_dims;
    for (r, o) in geometry.origin.iter_mut().enumerate() {
        for a in 0..3 {
            *o -= cg.orientation[r][a] * cg.spacing[a] * bbox.lo[a] as f64;
        }
    }
    let mut out = Volume::filled(geometry, background)?;
    let src = cropped.data();
    for k in 0..ext[2] {
        for j in 0..ext[1] {
            let s = cg.index(0, j, k);
            let d = out
                .geometry()
                .index(bbox.lo[0], bbox.lo[1] + j, bbox.lo[2] + k);
            out.data_mut()[d..d + ext[0]].copy_from_slice(&src[s..s + ext[0]]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridGeometry;

    fn mask_with(dims: [usize; 3], on: &[[usize; 3]]) -> Mask {
        let g = GridGeometry::new(dims, [1.0; 3]).unwrap();
        let mut m = Volume::filled(g, false).unwrap();
        for &[i, j, k] in on {
            m.set(i, j, k, true);
        }
        m
    }

    fn cube(at: [usize; 3], side: usize) -> Vec<[usize; 3]> {
        let mut v = Vec::new();
        for k in 0..side {
            for j in 0..side {
                for i in 0..side {
                    v.push([at[0] + i, at[1] + j, at[2] + k]);
                }
            }
        }
        v
    }

    #[test]
    fn air_gives_empty_body_mask() {
        let g = GridGeometry::new([8, 8, 4], [1.0; 3]).unwrap();
        let ct = Volume::filled(g, -1000.0).unwrap();
        assert!(!body_mask_threshold(&ct, DEFAULT_BODY_THRESHOLD_HU).any());
    }

    #[test]
    fn enclosed_cavity_is_filled() {
        let g = GridGeometry::new([9, 9, 3], [1.0; 3]).unwrap();
        let mut ct = Volume::filled(g, -1000.0).unwrap();
        for k in 0..3 {
            for j in 1..8 {
                for i in 1..8 {
                    let cavity = (3..6).contains(&i) && (3..6).contains(&j);
                    ct.set(i, j, k, if cavity { -1000.0 } else { -50.0 });
                }
            }
        }
        let m = body_mask_threshold(&ct, -500.0);
        assert_eq!(m.count(), 7 * 7 * 3);
        assert!(*m.get(4, 4, 1));
        assert!(!*m.get(0, 0, 0));
    }

    #[test]
    fn cavity_open_to_border_is_not_filled() {
        let g = GridGeometry::new([7, 7, 1], [1.0; 3]).unwrap();
        let mut ct = Volume::filled(g, 0.0).unwrap();
        for i in 0..4 {
            ct.set(i, 3, 0, -1000.0);
        }
        let m = body_mask_threshold(&ct, -500.0);
        assert_eq!(m.count(), 49 - 4);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let c = label_components(&mask_with([4, 4, 4], &[]), Connectivity::TwentySix);
        assert_eq!(c.count(), 0);
        assert!(matches!(largest_component(&c), Err(Error::EmptyMask)));
    }

    #[test]
    fn two_disjoint_cubes() {
        let mut on = cube([0, 0, 0], 3);
        on.extend(cube([5, 5, 5], 3));
        let c = label_components(&mask_with([8, 8, 8], &on), Connectivity::Six);
        assert_eq!(c.sizes, vec![27, 27]);
        // tie broken by scan order of the first voxel
        assert_eq!(*c.labels.get(0, 0, 0), 1);
        assert_eq!(*c.labels.get(5, 5, 5), 2);
    }

    #[test]
    fn corner_contact_depends_on_connectivity() {
        let m = mask_with([3, 3, 3], &[[0, 0, 0], [1, 1, 1]]);
        assert_eq!(label_components(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(label_components(&m, Connectivity::Six).count(), 2);
        let edge = mask_with([3, 3, 3], &[[0, 0, 0], [1, 1, 0]]);
        assert_eq!(label_components(&edge, Connectivity::TwentySix).count(), 1);
        assert_eq!(label_components(&edge, Connectivity::Six).count(), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // two arms joined only at the last row
        let mut on = Vec::new();
        for j in 0..5 {
            on.push([0, j, 0]);
            on.push([4, j, 0]);
        }
        for i in 1..4 {
            on.push([i, 4, 0]);
        }
        let c = label_components(&mask_with([5, 5, 1], &on), Connectivity::Six);
        assert_eq!(c.sizes, vec![13]);
    }

    #[test]
    fn largest_is_bigger_cube() {
        let mut on = cube([0, 0, 0], 2);
        on.extend(cube([4, 4, 4], 3));
        let c = label_components(&mask_with([8, 8, 8], &on), Connectivity::TwentySix);
        assert_eq!(c.sizes, vec![27, 8]);
        let big = largest_component(&c).unwrap();
        assert_eq!(big.count(), 27);
        assert!(*big.get(5, 5, 5));
    }

    #[test]
    fn bbox_with_margin_and_full_z() {
        let m = mask_with([128, 128, 128], &[[20, 30, 60], [40, 50, 70]]);
        let b = fit_bbox(&m, 15, true).unwrap();
        assert_eq!(b.lo, [5, 15, 0]);
        assert_eq!(b.hi, [55, 65, 127]);
    }

    #[test]
    fn bbox_clipped_at_border() {
        let m = mask_with([64, 64, 4], &[[5, 30, 1], [20, 30, 1]]);
        let b = fit_bbox(&m, 15, false).unwrap();
        assert_eq!(b.lo, [0, 15, 1]);
        assert_eq!(b.hi, [35, 45, 1]);
    }

    #[test]
    fn bbox_without_margin_is_tight() {
        let m = mask_with([16, 16, 16], &[[3, 4, 5], [7, 6, 9]]);
        assert_eq!(
            fit_bbox(&m, 0, false).unwrap(),
            BBox {
                lo: [3, 4, 5],
                hi: [7, 6, 9]
            }
        );
        assert!(matches!(
            fit_bbox(&mask_with([4, 4, 4], &[]), 0, false),
            Err(Error::EmptyMask)
        ));
    }

    fn ramp(dims: [usize; 3]) -> LabelVolume {
        let g = GridGeometry::new(dims, [0.5, 0.5, 3.0]).unwrap();
        let n = g.voxel_count() as u32;
        Volume::from_vec(g, (0..n).collect()).unwrap()
    }

    #[test]
    fn full_crop_is_identity() {
        let v = ramp([4, 5, 6]);
        let (c, rec) = crop(&v, BBox::full(v.dims())).unwrap();
        assert_eq!(c, v);
        assert_eq!(rec.bbox_lo, [0, 0, 0]);
    }

    #[test]
    fn sub_block_crop() {
        let v = ramp([10, 10, 10]);
        let b = BBox {
            lo: [2, 2, 2],
            hi: [4, 4, 4],
        };
        let (c, rec) = crop(&v, b).unwrap();
        assert_eq!(c.dims(), [3, 3, 3]);
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    assert_eq!(c.get(i, j, k), v.get(i + 2, j + 2, k + 2));
                }
            }
        }
        assert_eq!(rec.original_dims, [10, 10, 10]);
        assert!(crop(&v, BBox { lo: [0; 3], hi: [10, 1, 1] }).is_err());
    }

    #[test]
    fn restore_places_voxel_at_offset() {
        let g = GridGeometry::new([3, 3, 3], [1.0; 3]).unwrap();
        let mut c = Volume::filled(g, 0u32).unwrap();
        c.set(0, 0, 0, 9);
        let rec = CropRecord {
            case_id: "c".into(),
            original_dims: [10, 10, 10],
            bbox_lo: [2, 3, 4],
            bbox_hi: [4, 5, 6],
            margin_used: 0,
        };
        let full = restore(&c, &rec, 0).unwrap();
        assert_eq!(full.dims(), [10, 10, 10]);
        assert_eq!(*full.get(2, 3, 4), 9);
        assert_eq!(full.data().iter().filter(|&&x| x != 0).count(), 1);
    }

    #[test]
    fn restore_rejects_mismatched_dims() {
        let g = GridGeometry::new([2, 3, 3], [1.0; 3]).unwrap();
        let c = Volume::filled(g, 0u32).unwrap();
        let rec = CropRecord {
            case_id: "c".into(),
            original_dims: [10, 10, 10],
            bbox_lo: [2, 3, 4],
            bbox_hi: [4, 5, 6],
            margin_used: 0,
        };
        assert!(matches!(restore(&c, &rec, 0), Err(Error::RecordMismatch(_))));
    }

    #[test]
    fn crop_then_restore_recovers_geometry() {
        let mut g = GridGeometry::new([10, 8, 6], [0.5, 0.75, 3.0]).unwrap();
        g.origin = [-10.0, 20.0, 5.0];
        let v = Volume::filled(g.clone(), 1u32).unwrap();
        let (c, rec) = crop(&v, BBox { lo: [1, 2, 3], hi: [5, 6, 5] }).unwrap();
        assert_eq!(c.geometry().origin, [-9.5, 21.5, 14.0]);
        let back = restore(&c, &rec, 0).unwrap();
        assert_eq!(back.geometry(), &g);
    }

    #[test]
    fn record_json_field_names() {
        let rec = CropRecord {
            case_id: "case_01".into(),
            original_dims: [512, 512, 98],
            bbox_lo: [100, 90, 0],
            bbox_hi: [400, 380, 97],
            margin_used: 15,
        };
        let json: serde_json::Value = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["case_id"], "case_01");
        assert_eq!(json["original_dims"], serde_json::json!([512, 512, 98]));
        assert_eq!(json["bbox_lo"], serde_json::json!([100, 90, 0]));
        assert_eq!(json["bbox_hi"], serde_json::json!([400, 380, 97]));
        assert_eq!(json["margin_used"], 15);
    }
}
