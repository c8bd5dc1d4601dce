//! Dense voxel grids with physical geometry.
//!
//! Voxels are stored x-fastest: the linear index of `(i, j, k)` is
//! `i + nx * (j + ny * k)`. Orientation is kept as metadata only.

use crate::error::{Error, Result};

/// Tolerance (mm) used when checking that two grids are co-registered.
pub const REGISTRATION_TOLERANCE_MM: f64 = 1e-3;

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Grid shape and placement in patient space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    /// Voxel size in mm.
    pub spacing: [f64; 3],
    /// Position of voxel (0, 0, 0) in mm.
    pub origin: [f64; 3],
    /// Direction cosines, row-major; column `a` is the unit direction of voxel axis `a`.
    pub orientation: [[f64; 3]; 3],
}

pub const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl GridGeometry {
    /// Axis-aligned geometry at the origin.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let g = GridGeometry {
            dims,
            spacing,
            origin: [0.0; 3],
            orientation: IDENTITY,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.dims[a] == 0 {
                return Err(Error::InvalidGeometry(format!("dims.{} is zero", AXES[a])));
            }
            if !(self.spacing[a] > 0.0) || !self.spacing[a].is_finite() {
                return Err(Error::InvalidGeometry(format!(
                    "spacing.{} = {} is not positive",
                    AXES[a], self.spacing[a]
                )));
            }
            if !self.origin[a].is_finite() {
                return Err(Error::InvalidGeometry(format!("origin.{} is not finite", AXES[a])));
            }
        }
        let m = &self.orientation;
        for c in 0..3 {
            let norm = (m[0][c] * m[0][c] + m[1][c] * m[1][c] + m[2][c] * m[2][c]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidGeometry(format!(
                    "orientation column {c} has norm {norm}"
                )));
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return Err(Error::InvalidGeometry("orientation matrix is singular".into()));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Same geometry with different dims, keeping spacing and orientation and
    /// moving the origin to voxel `offset` of `self`.
    pub fn sub_grid(&self, offset: [usize; 3], dims: [usize; 3]) -> GridGeometry {
        let mut origin = self.origin;
        for (r, o) in origin.iter_mut().enumerate() {
            for a in 0..3 {
                *o += self.orientation[r][a] * self.spacing[a] * offset[a] as f64;
            }
        }
        GridGeometry {
            dims,
            spacing: self.spacing,
            origin,
            orientation: self.orientation,
        }
    }

    /// Checks dims equality and spacing/origin/orientation agreement within
    /// [`REGISTRATION_TOLERANCE_MM`].
    pub fn check_matches(&self, other: &GridGeometry) -> Result<()> {
        for a in 0..3 {
            if self.dims[a] != other.dims[a] {
                return Err(Error::GeometryMismatch {
                    axis: AXES[a],
                    a: self.dims[a],
                    b: other.dims[a],
                });
            }
        }
        let mut bad = Vec::new();
        for a in 0..3 {
            let ds = (self.spacing[a] - other.spacing[a]).abs();
            if ds > REGISTRATION_TOLERANCE_MM {
                bad.push(format!("spacing.{} differs by {ds:.6} mm", AXES[a]));
            }
        }
        for a in 0..3 {
            let d = (self.origin[a] - other.origin[a]).abs();
            if d > REGISTRATION_TOLERANCE_MM {
                bad.push(format!("origin.{} differs by {d:.6} mm", AXES[a]));
            }
        }
        for r in 0..3 {
            for c in 0..3 {
                let d = (self.orientation[r][c] - other.orientation[r][c]).abs();
                if d > REGISTRATION_TOLERANCE_MM {
                    bad.push(format!("orientation[{r}][{c}] differs by {d:.6}"));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Registration(bad.join("; ")))
        }
    }
}

/// A dense 3D grid of voxels of type `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geometry: GridGeometry,
    data: Vec<T>,
}

/// CT intensities (HU) or normalized reals.
pub type IntensityVolume = Volume<f64>;
/// Integer label map, 0 is background.
pub type LabelVolume = Volume<u32>;
/// Binary mask.
pub type Mask = Volume<bool>;

impl<T> Volume<T> {
    pub fn from_vec(geometry: GridGeometry, data: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidGeometry(format!(
                "{} voxels supplied for dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Volume { geometry, data })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> &T {
        &self.data[self.geometry.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: T) {
        let idx = self.geometry.index(i, j, k);
        self.data[idx] = value;
    }

    /// Element-wise map onto a new volume with the same geometry.
    pub fn map<U, F>(&self, f: F) -> Volume<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        use rayon::prelude::*;
        Volume {
            geometry: self.geometry.clone(),
            data: self.data.par_iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Volume<T> {
    pub fn filled(geometry: GridGeometry, value: T) -> Result<Self> {
        let n = geometry.voxel_count();
        Volume::from_vec(geometry, vec![value; n])
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }
}

/// Co-registered contrast-enhanced and non-contrast CT of one subject.
#[derive(Debug, Clone)]
pub struct PairedCase {
    pub case_id: String,
    pub contrast_ct: IntensityVolume,
    pub plain_ct: IntensityVolume,
}

/// Accepts the pair when both grids share dims and agree in spacing, origin
/// and orientation within 1e-3 mm.
pub fn validate_pair(
    contrast_ct: IntensityVolume,
    plain_ct: IntensityVolume,
    case_id: &str,
) -> Result<PairedCase> {
    contrast_ct.geometry().check_matches(plain_ct.geometry())?;
    Ok(PairedCase {
        case_id: case_id.to_string(),
        contrast_ct,
        plain_ct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(dims: [usize; 3], spacing: [f64; 3]) -> IntensityVolume {
        Volume::filled(GridGeometry::new(dims, spacing).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn identical_pair_accepted() {
        let a = vol([4, 5, 6], [0.5, 0.5, 3.0]);
        let case = validate_pair(a.clone(), a.clone(), "c1").unwrap();
        assert_eq!(case.case_id, "c1");
        assert_eq!(case.contrast_ct, a);
    }

    #[test]
    fn z_dims_mismatch_names_axis() {
        // (512,512,98) vs (512,512,99) without allocating full volumes
        let a = vol([4, 4, 98], [1.0; 3]);
        let b = vol([4, 4, 99], [1.0; 3]);
        match validate_pair(a, b, "c") {
            Err(Error::GeometryMismatch { axis: 'z', a: 98, b: 99 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spacing_deviation_beyond_tolerance_rejected() {
        let a = vol([2, 2, 2], [0.433, 0.433, 3.0]);
        let b = vol([2, 2, 2], [0.434, 0.434, 3.0]);
        let err = validate_pair(a.clone(), b.clone(), "c").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Registration(_)));
        assert!(msg.contains("spacing.x") && msg.contains("spacing.y"));
        assert!(!msg.contains("spacing.z"));
        // symmetric
        assert!(validate_pair(b, a, "c").is_err());
    }

    #[test]
    fn small_deviation_accepted() {
        let a = vol([2, 2, 2], [0.433, 0.433, 3.0]);
        let b = vol([2, 2, 2], [0.4335, 0.433, 3.0]);
        assert!(validate_pair(a, b, "c").is_ok());
    }

    #[test]
    fn geometry_invariants() {
        assert!(GridGeometry::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(GridGeometry::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        let mut g = GridGeometry::new([1, 1, 1], [1.0; 3]).unwrap();
        g.orientation[0][0] = 2.0;
        assert!(g.validate().is_err());
        g.orientation = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(g.validate().is_err());
    }

    #[test]
    fn voxel_count_must_match_dims() {
        let g = GridGeometry::new([2, 2, 2], [1.0; 3]).unwrap();
        assert!(Volume::from_vec(g, vec![0u32; 7]).is_err());
    }

    #[test]
    fn index_and_coords_agree() {
        let g = GridGeometry::new([3, 4, 5], [1.0; 3]).unwrap();
        for idx in 0..g.voxel_count() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn sub_grid_moves_origin() {
        let mut g = GridGeometry::new([10, 10, 10], [0.5, 0.5, 3.0]).unwrap();
        g.origin = [1.0, 2.0, 3.0];
        let s = g.sub_grid([2, 4, 1], [3, 3, 3]);
        assert_eq!(s.origin, [2.0, 4.0, 6.0]);
        assert_eq!(s.dims, [3, 3, 3]);
    }
}
