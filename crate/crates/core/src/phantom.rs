//! Synthetic bi-modal CT phantoms with exact ground truth.
//!
//! Shapes are rasterized by testing voxel centres (in voxel units). Noise is
//! Gaussian, drawn from ChaCha8 streams keyed by `(seed, slice, channel)` so
//! every voxel's noise depends only on its index, not on thread scheduling.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridGeometry, IntensityVolume, LabelVolume, Mask, Volume};

pub const AIR_HU: f64 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    Ellipsoid { radii: [f64; 3] },
    /// Axis-aligned box given by half extents.
    Box { half: [f64; 3] },
    /// Elliptic cylinder along z covering `z_range` (inclusive).
    Tube { radii: [f64; 2], z_range: [f64; 2] },
}

impl Shape {
    #[inline]
    fn contains(&self, center: [f64; 3], p: [f64; 3]) -> bool {
        let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        match *self {
            Shape::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
            Shape::Ellipsoid { radii } => {
                (0..3).map(|a| (d[a] / radii[a]).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Box { half } => (0..3).all(|a| d[a].abs() <= half[a]),
            Shape::Tube { radii, z_range } => {
                p[2] >= z_range[0]
                    && p[2] <= z_range[1]
                    && (d[0] / radii[0]).powi(2) + (d[1] / radii[1]).powi(2) <= 1.0
            }
        }
    }

    /// Axis-aligned extent `(lo, hi)` in voxel coordinates.
    fn extent(&self, c: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let half = match *self {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Ellipsoid { radii } => radii,
            Shape::Box { half } => half,
            Shape::Tube { radii, z_range } => {
                return (
                    [c[0] - radii[0], c[1] - radii[1], z_range[0]],
                    [c[0] + radii[0], c[1] + radii[1], z_range[1]],
                )
            }
        };
        (
            [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
            [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
        )
    }

    fn sizes_positive(&self) -> bool {
        match *self {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Ellipsoid { radii } => radii.iter().all(|&r| r > 0.0),
            Shape::Box { half } => half.iter().all(|&h| h >= 0.0),
            Shape::Tube { radii, z_range } => {
                radii.iter().all(|&r| r > 0.0) && z_range[0] <= z_range[1]
            }
        }
    }
}

/// Unlabeled tissue: the body, or extra blobs such as limbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tissue {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: [f64; 3],
    pub hu_contrast: f64,
    pub hu_plain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: [f64; 3],
    pub hu_contrast: f64,
    pub hu_plain: f64,
    pub label_id: u32,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub body: Tissue,
    /// Drawn before the body and excluded from the body mask.
    #[serde(default)]
    pub extra_tissue: Vec<Tissue>,
    /// Labeled structures; later entries occlude earlier ones.
    pub primitives: Vec<Primitive>,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

impl PhantomSpec {
    /// Body cylinder spanning every slice, a separate limb, and five
    /// structures: three near the top slices, one mid-way and a
    /// trachea-like tube running through all slices.
    pub fn head_neck(dims: [usize; 3], spacing: [f64; 3], noise_sigma: f64, seed: u64) -> Self {
        let [nx, ny, nz] = dims.map(|d| d as f64);
        let full_z = [-0.5, nz - 0.5];
        let prim = |label_id: u32, name: &str, shape, center, hu_contrast, hu_plain| Primitive {
            shape,
            center,
            hu_contrast,
            hu_plain,
            label_id,
            name: name.to_string(),
        };
        PhantomSpec {
            dims,
            spacing,
            body: Tissue {
                shape: Shape::Tube {
                    radii: [0.30 * nx, 0.36 * ny],
                    z_range: full_z,
                },
                center: [0.5 * nx, 0.5 * ny, 0.5 * nz],
                hu_contrast: 0.0,
                hu_plain: 0.0,
            },
            extra_tissue: vec![Tissue {
                shape: Shape::Box {
                    half: [0.04 * nx, 0.10 * ny, 0.20 * nz],
                },
                center: [0.08 * nx, 0.5 * ny, 0.25 * nz],
                hu_contrast: 0.0,
                hu_plain: 0.0,
            }],
            primitives: vec![
                prim(
                    1,
                    "BrainStem",
                    Shape::Ellipsoid {
                        radii: [0.06 * nx, 0.06 * ny, 0.10 * nz],
                    },
                    [0.5 * nx, 0.45 * ny, 0.8 * nz],
                    250.0,
                    60.0,
                ),
                prim(
                    2,
                    "Eye_L",
                    Shape::Sphere { radius: 0.04 * nx },
                    [0.4 * nx, 0.3 * ny, 0.85 * nz],
                    450.0,
                    120.0,
                ),
                prim(
                    3,
                    "Eye_R",
                    Shape::Sphere { radius: 0.04 * nx },
                    [0.6 * nx, 0.3 * ny, 0.85 * nz],
                    650.0,
                    180.0,
                ),
                prim(
                    4,
                    "Mandible",
                    Shape::Box {
                        half: [0.12 * nx, 0.03 * ny, 0.04 * nz],
                    },
                    [0.5 * nx, 0.35 * ny, 0.6 * nz],
                    1050.0,
                    700.0,
                ),
                prim(
                    5,
                    "Trachea",
                    Shape::Tube {
                        radii: [0.03 * nx, 0.03 * ny],
                        z_range: full_z,
                    },
                    [0.5 * nx, 0.6 * ny, 0.5 * nz],
                    850.0,
                    240.0,
                ),
            ],
            noise_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(invalid("dims", "every dimension must be at least 1"));
        }
        if !self.spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(invalid("spacing", "every spacing must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma", "must be a finite value >= 0"));
        }
        let fits = |shape: &Shape, center: [f64; 3]| {
            let (lo, hi) = shape.extent(center);
            (0..3).all(|a| lo[a] >= -0.5 && hi[a] <= self.dims[a] as f64 - 0.5)
        };
        let check = |field: String, shape: &Shape, center: [f64; 3]| -> Result<()> {
            if !shape.sizes_positive() {
                return Err(invalid(field, "size parameters must be positive"));
            }
            if !fits(shape, center) {
                return Err(invalid(field, "shape extends outside the grid"));
            }
            Ok(())
        };
        check("body".into(), &self.body.shape, self.body.center)?;
        for (i, t) in self.extra_tissue.iter().enumerate() {
            check(format!("extra_tissue[{i}]"), &t.shape, t.center)?;
        }
        let mut ids = BTreeSet::new();
        for (i, p) in self.primitives.iter().enumerate() {
            if p.label_id == 0 {
                return Err(invalid(format!("primitives[{i}].label_id"), "must be positive"));
            }
            if !ids.insert(p.label_id) {
                return Err(invalid(
                    format!("primitives[{i}].label_id"),
                    format!("label {} is used twice", p.label_id),
                ));
            }
            check(format!("primitives[{i}]"), &p.shape, p.center)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Threshold rules that recover each structure from the contrast CT,
    /// `half_width` HU on either side of its intensity.
    pub fn oracle_rules(&self, half_width: f64) -> Vec<ThresholdRule> {
        self.primitives
            .iter()
            .map(|p| ThresholdRule {
                lo: p.hu_contrast - half_width,
                hi: p.hu_contrast + half_width,
                label_id: p.label_id,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub contrast_ct: IntensityVolume,
    pub plain_ct: IntensityVolume,
    pub labels: LabelVolume,
    pub body_mask: Mask,
}

/// Rasterizes `spec`. A pure function of the spec, seed included.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let geometry = GridGeometry::new(spec.dims, spec.spacing)?;
    let [nx, ny, _] = spec.dims;
    let plane = nx * ny;
    let n = geometry.voxel_count();
    let mut contrast = vec![AIR_HU; n];
    let mut plain = vec![AIR_HU; n];
    let mut labels = vec![0u32; n];
    let mut body = vec![false; n];

    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));

    contrast
        .par_chunks_mut(plane)
        .zip(plain.par_chunks_mut(plane))
        .zip(labels.par_chunks_mut(plane))
        .zip(body.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(k, (((c, p), l), b))| {
            let z = k as f64;
            let in_slice = |shape: &Shape, center: [f64; 3]| {
                let (lo, hi) = shape.extent(center);
                z >= lo[2] && z <= hi[2]
            };
            let extra: Vec<&Tissue> = spec
                .extra_tissue
                .iter()
                .filter(|t| in_slice(&t.shape, t.center))
                .collect();
            let prims: Vec<&Primitive> = spec
                .primitives
                .iter()
                .filter(|q| in_slice(&q.shape, q.center))
                .collect();
            let body_here = in_slice(&spec.body.shape, spec.body.center);
            for j in 0..ny {
                for i in 0..nx {
                    let pt = [i as f64, j as f64, z];
                    let idx = i + nx * j;
                    for t in &extra {
                        if t.shape.contains(t.center, pt) {
                            c[idx] = t.hu_contrast;
                            p[idx] = t.hu_plain;
                        }
                    }
                    if body_here && spec.body.shape.contains(spec.body.center, pt) {
                        c[idx] = spec.body.hu_contrast;
                        p[idx] = spec.body.hu_plain;
                        b[idx] = true;
                    }
                    for q in &prims {
                        if q.shape.contains(q.center, pt) {
                            c[idx] = q.hu_contrast;
                            p[idx] = q.hu_plain;
                            l[idx] = q.label_id;
                        }
                    }
                }
            }
            if let Some(dist) = noise {
                for (channel, values) in [(0u64, c), (1u64, p)] {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(2 * k as u64 + channel);
                    for v in values.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
            }
        });

    Ok(Phantom {
        contrast_ct: Volume::from_vec(geometry.clone(), contrast)?,
        plain_ct: Volume::from_vec(geometry.clone(), plain)?,
        labels: Volume::from_vec(geometry.clone(), labels)?,
        body_mask: Volume::from_vec(geometry, body)?,
    })
}

/// `[lo, hi]` HU (inclusive) mapped to `label_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub lo: f64,
    pub hi: f64,
    pub label_id: u32,
}

/// Labels each voxel by the unique rule whose interval contains it, else 0.
pub fn threshold_segment(ct: &IntensityVolume, rules: &[ThresholdRule]) -> Result<LabelVolume> {
    let mut sorted = rules.to_vec();
    for r in &sorted {
        if !(r.lo <= r.hi) {
            return Err(Error::Parameter(format!("rule [{}, {}] is empty", r.lo, r.hi)));
        }
    }
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    for w in sorted.windows(2) {
        if w[1].lo <= w[0].hi {
            return Err(Error::RuleConflict(w[0].lo, w[0].hi, w[1].lo, w[1].hi));
        }
    }
    Ok(ct.map(|&x| {
        // sorted and disjoint: the candidate is the last rule starting at or below x
        let pos = sorted.partition_point(|r| r.lo <= x);
        match pos.checked_sub(1).map(|i| &sorted[i]) {
            Some(r) if x <= r.hi => r.label_id,
            _ => 0,
        }
    }))
}
