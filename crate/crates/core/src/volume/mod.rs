//! Dense 3D volumes and the normalization / correlation primitives built on them.
//!
//! Storage is `f32`, x fastest: element `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. Every reduction accumulates in `f64`.

mod fft;
mod filter;
mod mask;
mod norm;

pub use fft::{cross_correlate_fft, Correlator};
pub use filter::{apply_s, smooth, smooth_f64_in_place, SMOOTHING_A};
pub use mask::{default_mask_radii, make_soft_mask, mask_from_volume, SoftMask};
pub use norm::{
    flat_floor, local_norm_field, local_norm_field_from_smoothed, normalize_template,
    NormalizedTemplate, FLAT_VARIANCE_FACTOR,
};
pub(crate) use norm::norm_weights;

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    dims: Dims,
    voxel_size: f32,
    origin: [f32; 3],
}

impl Volume {
    /// Builds a volume from x-fastest data. Rejects zero extents, a length
    /// mismatch and non-finite samples.
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            data,
            dims,
            voxel_size: 1.0,
            origin: [0.0; 3],
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        Self {
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
            dims,
            voxel_size: 1.0,
            origin: [0.0; 3],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z) as f32);
                }
            }
        }
        Self::new(dims, data)
    }

    /// Converts `f64` samples produced by internal kernels. Panics on
    /// non-finite input, which would be a bug in the caller.
    pub(crate) fn from_f64(dims: Dims, data: &[f64]) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        let data: Vec<f32> = data.iter().map(|&v| v as f32).collect();
        assert!(
            data.iter().all(|v| v.is_finite()),
            "kernel produced a non-finite sample"
        );
        Self {
            data,
            dims,
            voxel_size: 1.0,
            origin: [0.0; 3],
        }
    }

    pub fn with_voxel_size(mut self, voxel_size: f32) -> Self {
        self.voxel_size = voxel_size;
        self
    }

    pub fn with_origin(mut self, origin: [f32; 3]) -> Self {
        self.origin = origin;
        self
    }

    /// Copies voxel size and origin from `other`.
    pub fn with_meta_of(self, other: &Volume) -> Self {
        self.with_voxel_size(other.voxel_size)
            .with_origin(other.origin)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn voxel_size(&self) -> f32 {
        self.voxel_size
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn at(&self, p: [usize; 3]) -> f32 {
        self.get(p[0], p[1], p[2])
    }

    /// Position of the element at linear index `i`.
    #[inline]
    pub fn position(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let yz = i / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    pub fn is_odd_cube(&self) -> bool {
        let [a, b, c] = self.dims;
        a == b && b == c && a % 2 == 1
    }

    /// Integer center voxel (exact for odd extents).
    pub fn center(&self) -> [usize; 3] {
        [self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()))
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Ok(Self::new(self.dims, data)?.with_meta_of(self))
    }

    /// Sub-box `[lo, lo + dims)`; must lie inside the volume.
    pub fn extract(&self, lo: [usize; 3], dims: Dims) -> Result<Self> {
        for a in 0..3 {
            if dims[a] == 0 || lo[a] + dims[a] > self.dims[a] {
                return Err(Error::Shape(format!(
                    "box at {lo:?} with dims {dims:?} exceeds volume {:?}",
                    self.dims
                )));
            }
        }
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let start = self.index(lo[0], lo[1] + y, lo[2] + z);
                data.extend_from_slice(&self.data[start..start + dims[0]]);
            }
        }
        Ok(Self {
            data,
            dims,
            voxel_size: self.voxel_size,
            origin: self.origin,
        })
    }

    /// Adds `other` into the box `[lo, lo + other.dims)`.
    pub fn add_at(&mut self, lo: [usize; 3], other: &Volume) -> Result<()> {
        let d = other.dims;
        for a in 0..3 {
            if lo[a] + d[a] > self.dims[a] {
                return Err(Error::Shape(format!(
                    "box at {lo:?} with dims {d:?} exceeds volume {:?}",
                    self.dims
                )));
            }
        }
        for z in 0..d[2] {
            for y in 0..d[1] {
                let dst = self.index(lo[0], lo[1] + y, lo[2] + z);
                let src = other.index(0, y, z);
                for x in 0..d[0] {
                    self.data[dst + x] += other.data[src + x];
                }
            }
        }
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &Volume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "dims {:?} differ from {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}
