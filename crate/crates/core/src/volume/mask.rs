use super::Volume;
use crate::error::{Error, Result};

/// Spherical weighting window: 1 up to `r_in`, linear ramp to 0 at `r_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    volume: Volume,
    r_in: f64,
    r_out: f64,
    sum: f64,
}

impl SoftMask {
    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    pub fn r_in(&self) -> f64 {
        self.r_in
    }

    pub fn r_out(&self) -> f64 {
        self.r_out
    }

    /// Sum of all mask voxels (`M`).
    pub fn sum(&self) -> f64 {
        self.sum
    }

    pub fn size(&self) -> usize {
        self.volume.dims()[0]
    }

    #[cfg(test)]
    pub(crate) fn all_ones(dims: [usize; 3]) -> Self {
        let volume = Volume::new(dims, vec![1.0; dims[0] * dims[1] * dims[2]]).unwrap();
        let sum = volume.sum();
        Self {
            volume,
            r_in: 0.0,
            r_out: 0.0,
            sum,
        }
    }
}

/// Default radii for a template of odd edge `size`: `r_out = (size-1)/2`,
/// `r_in = r_out - 2`.
pub fn default_mask_radii(size: usize) -> (f64, f64) {
    let r_out = (size.saturating_sub(1) / 2) as f64;
    ((r_out - 2.0).max(0.5), r_out)
}

pub fn make_soft_mask(dims: [usize; 3], r_in: f64, r_out: f64) -> Result<SoftMask> {
    let [n, ny, nz] = dims;
    if n != ny || n != nz || n % 2 == 0 {
        return Err(Error::Geometry(format!(
            "mask dims must be an odd cube, got {dims:?}"
        )));
    }
    let half = ((n - 1) / 2) as f64;
    if !(r_in > 0.0 && r_in < r_out) {
        return Err(Error::Geometry(format!(
            "mask radii must satisfy 0 < r_in < r_out, got {r_in}, {r_out}"
        )));
    }
    if r_out > half {
        return Err(Error::Geometry(format!(
            "outer radius {r_out} exceeds half-size {half}"
        )));
    }
    let c = half;
    let volume = Volume::from_fn(dims, |x, y, z| {
        let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
        if d <= r_in {
            1.0
        } else if d >= r_out {
            0.0
        } else {
            (r_out - d) / (r_out - r_in)
        }
    })?;
    let sum = volume.sum();
    Ok(SoftMask {
        volume,
        r_in,
        r_out,
        sum,
    })
}

/// Wraps a stored mask volume. Values must lie in `[0, 1]` with a positive
/// sum; `r_in` and `r_out` report the largest radius inside which every
/// voxel is 1 and the largest radius of a non-zero voxel.
pub fn mask_from_volume(v: Volume) -> Result<SoftMask> {
    if !v.is_odd_cube() {
        return Err(Error::Geometry(format!(
            "mask dims must be an odd cube, got {:?}",
            v.dims()
        )));
    }
    if let Some(i) = v.data().iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Geometry(format!(
            "mask value {} at element {i} is outside [0, 1]",
            v.data()[i]
        )));
    }
    let sum = v.sum();
    if !(sum > 0.0) {
        return Err(Error::Geometry("mask is empty".into()));
    }
    let c = v.center().map(|a| a as f64);
    let mut r_out = 0.0f64;
    let mut first_partial = f64::INFINITY;
    for (i, &x) in v.data().iter().enumerate() {
        let p = v.position(i);
        let d = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>().sqrt();
        if x > 0.0 {
            r_out = r_out.max(d);
        }
        if x < 1.0 {
            first_partial = first_partial.min(d);
        }
    }
    let r_in = if first_partial.is_finite() { first_partial } else { r_out };
    Ok(SoftMask {
        volume: v,
        r_in,
        r_out,
        sum,
    })
}
