use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::template::TensorialTemplate;
use crate::error::{Error, Result};
use crate::peaks::Peak;
use crate::so3::UnitQuaternion;
use crate::symtensor::{dominant_eigenpair_with, frobenius, EigenConfig, SymTensor4, N_COMPONENTS, TABLE};
use crate::volume::{flat_floor, norm_weights, smooth_f64_in_place, Correlator, Dims, SoftMask, Volume};

/// Per-voxel symmetric tensors from correlating an image with the 35
/// template components, pre-multiplied by the local normalization.
#[derive(Clone, Debug)]
pub struct TensorialField {
    comps: Vec<Volume>,
    w: Volume,
    correlations: usize,
}

impl TensorialField {
    pub fn comps(&self) -> &[Volume] {
        &self.comps
    }

    pub fn w(&self) -> &Volume {
        &self.w
    }

    pub fn dims(&self) -> Dims {
        self.w.dims()
    }

    /// Template-component correlations executed to build this field.
    pub fn correlations(&self) -> usize {
        self.correlations
    }
}

fn check_template_mask(t: &TensorialTemplate, m: &SoftMask) -> Result<()> {
    if m.size() != t.size() {
        return Err(Error::Shape(format!(
            "mask size {} differs from template size {}",
            m.size(),
            t.size()
        )));
    }
    Ok(())
}

pub fn tensorial_field(f: &Volume, t: &TensorialTemplate, m: &SoftMask) -> Result<TensorialField> {
    let mut sf = f.to_f64();
    smooth_f64_in_place(&mut sf, f.dims());
    let field = field_from_smoothed(&sf, f.dims(), t, m, flat_floor(f.max_abs()))?;
    Ok(TensorialField {
        comps: field.comps.into_iter().map(|c| c.with_meta_of(f)).collect(),
        w: field.w.with_meta_of(f),
        correlations: field.correlations,
    })
}

pub(crate) fn field_from_smoothed(
    sf: &[f64],
    dims: Dims,
    t: &TensorialTemplate,
    m: &SoftMask,
    floor: f64,
) -> Result<TensorialField> {
    check_template_mask(t, m)?;
    if (0..3).any(|a| dims[a] < t.size()) {
        return Err(Error::Shape(format!(
            "image {dims:?} smaller than template size {}",
            t.size()
        )));
    }
    let corr = Correlator::from_f64(dims, sf);
    let w = norm_weights(&corr, sf, m, floor)?;
    let count = AtomicUsize::new(0);
    let comps = t
        .comps()
        .par_iter()
        .map(|c| {
            let mut out = corr.correlate(c)?;
            count.fetch_add(1, Ordering::Relaxed);
            for (o, wv) in out.iter_mut().zip(&w) {
                *o *= wv;
            }
            Ok(Volume::from_f64(dims, &out))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TensorialField {
        comps,
        w: Volume::from_f64(dims, &w),
        correlations: count.into_inner(),
    })
}

/// Frobenius norm of the field tensor at every voxel.
pub fn scalar_map(c: &TensorialField) -> Volume {
    let dims = c.dims();
    let n = c.w.len();
    let mut acc = vec![0.0f64; n];
    for (comp, entry) in c.comps.iter().zip(TABLE.iter()) {
        let mult = entry.multiplicity as f64;
        for (a, &v) in acc.iter_mut().zip(comp.data()) {
            let v = v as f64;
            *a += mult * v * v;
        }
    }
    acc.iter_mut().for_each(|a| *a = a.sqrt());
    Volume::from_f64(dims, &acc).with_meta_of(&c.w)
}

/// Anything that can report the field tensor at a voxel.
pub trait TensorSource: Sync {
    fn dims(&self) -> Dims;
    /// `None` when the tensor is not available at `p`.
    fn tensor_at(&self, p: [usize; 3]) -> Option<SymTensor4>;
}

impl TensorSource for TensorialField {
    fn dims(&self) -> Dims {
        self.w.dims()
    }

    fn tensor_at(&self, p: [usize; 3]) -> Option<SymTensor4> {
        let d = self.dims();
        if (0..3).any(|a| p[a] >= d[a]) {
            return None;
        }
        let i = self.w.index(p[0], p[1], p[2]);
        Some(SymTensor4::from_comps(std::array::from_fn(|k| {
            self.comps[k].data()[i] as f64
        })))
    }
}

/// Smoothed image with direct (real-space) access to template-sized patches.
#[derive(Clone, Debug)]
pub struct LocalPatches {
    sf: Vec<f64>,
    dims: Dims,
    mask: Vec<f64>,
    mask_sum: f64,
    size: usize,
    floor: f64,
}

impl LocalPatches {
    /// Smooths `f` once; the flat floor follows `f`'s peak magnitude.
    pub fn new(f: &Volume, m: &SoftMask) -> Self {
        let mut sf = f.to_f64();
        smooth_f64_in_place(&mut sf, f.dims());
        Self {
            sf,
            dims: f.dims(),
            mask: m.volume().to_f64(),
            mask_sum: m.sum(),
            size: m.size(),
            floor: flat_floor(f.max_abs()),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn smoothed(&self) -> &[f64] {
        &self.sf
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Whether the template-sized patch centered at `p` lies in the image.
    pub fn contains(&self, p: [usize; 3]) -> bool {
        let h = self.size / 2;
        (0..3).all(|a| p[a] >= h && p[a] + h < self.dims[a])
    }

    fn for_each_in_patch(&self, p: [usize; 3], mut visit: impl FnMut(usize, f64)) {
        let h = self.size / 2;
        let n = self.size;
        let [nx, ny, _] = self.dims;
        let mut v = 0;
        for z in 0..n {
            for y in 0..n {
                let row = (p[0] - h) + nx * ((p[1] + y - h) + ny * (p[2] + z - h));
                for x in 0..n {
                    visit(v, self.sf[row + x]);
                    v += 1;
                }
            }
        }
    }

    /// `w(p)`; `None` when the patch leaves the image.
    pub fn weight(&self, p: [usize; 3]) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let (mut a, mut b) = (0.0, 0.0);
        self.for_each_in_patch(p, |v, s| {
            let m = self.mask[v];
            a += m * s * s;
            b += m * s;
        });
        let r = a - b * b / self.mask_sum;
        Some(if r > self.floor { 1.0 / r.sqrt() } else { 0.0 })
    }

    /// `sum_v sf(p + v - c) k(v)` for a template-sized kernel.
    pub fn dot(&self, p: [usize; 3], kernel: &[f64]) -> Option<f64> {
        if !self.contains(p) || kernel.len() != self.mask.len() {
            return None;
        }
        let mut s = 0.0;
        self.for_each_in_patch(p, |v, x| s += x * kernel[v]);
        Some(s)
    }

    /// Real-space LNCC of the patch at `p` against a normalized kernel.
    pub fn lncc(&self, p: [usize; 3], kernel: &[f64]) -> Option<f64> {
        Some(self.weight(p)? * self.dot(p, kernel)?)
    }
}

/// Field tensors evaluated directly from image patches, independent of any
/// block decomposition.
pub struct RealSpaceProbe<'a> {
    patches: &'a LocalPatches,
    // voxel-major, 35 per voxel
    comps: Vec<f64>,
}

impl<'a> RealSpaceProbe<'a> {
    pub fn new(patches: &'a LocalPatches, t: &TensorialTemplate) -> Result<Self> {
        if patches.size() != t.size() {
            return Err(Error::Shape(format!(
                "patch size {} differs from template size {}",
                patches.size(),
                t.size()
            )));
        }
        let vox = t.comps()[0].len();
        let mut comps = vec![0.0; vox * N_COMPONENTS];
        for (i, c) in t.comps().iter().enumerate() {
            for (v, &x) in c.data().iter().enumerate() {
                comps[v * N_COMPONENTS + i] = x as f64;
            }
        }
        Ok(Self { patches, comps })
    }

    pub fn patches(&self) -> &LocalPatches {
        self.patches
    }
}

impl TensorSource for RealSpaceProbe<'_> {
    fn dims(&self) -> Dims {
        self.patches.dims()
    }

    fn tensor_at(&self, p: [usize; 3]) -> Option<SymTensor4> {
        let w = self.patches.weight(p)?;
        let mut acc = [0.0f64; N_COMPONENTS];
        self.patches.for_each_in_patch(p, |v, s| {
            if s != 0.0 {
                let row = &self.comps[v * N_COMPONENTS..(v + 1) * N_COMPONENTS];
                for (a, c) in acc.iter_mut().zip(row) {
                    *a += s * c;
                }
            }
        });
        Some(SymTensor4::from_comps(acc.map(|a| a * w)))
    }
}

/// Pose of every peak from the dominant eigenvector of its field tensor.
/// Peaks without a tensor, or with a zero tensor, get the identity pose and
/// `converged = false`.
pub fn assign_rotations<S: TensorSource>(src: &S, peaks: &[Peak], cfg: &EigenConfig) -> Vec<Peak> {
    peaks
        .par_iter()
        .map(|pk| {
            let mut out = *pk;
            match src.tensor_at(pk.pos) {
                Some(t) if !t.is_zero() => {
                    let e = dominant_eigenpair_with(&t, cfg);
                    out.q = e.q;
                    out.converged = e.converged;
                }
                _ => {
                    out.q = UnitQuaternion::IDENTITY;
                    out.converged = false;
                }
            }
            out
        })
        .collect()
}

/// Frobenius norm of the tensor at `p`, if available.
pub fn frobenius_at<S: TensorSource>(src: &S, p: [usize; 3]) -> Option<f64> {
    src.tensor_at(p).map(|t| frobenius(&t))
}
