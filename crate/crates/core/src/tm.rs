//! Rotation-sampling template matching: one FFT correlation per sampled
//! rotation, keeping the best LNCC and its rotation index per voxel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::peaks::{find_peaks, Peak, ScoreKind};
use crate::so3::{rotate_into, RotationSet};
use crate::ttm::halo_width;
use crate::volume::{
    flat_floor, norm_weights, normalize_template, smooth_f64_in_place, Correlator, SoftMask, Volume,
};

#[derive(Clone, Debug)]
pub struct TmResult {
    c_map: Volume,
    r_map: Vec<usize>,
    template_size: usize,
    correlations: usize,
}

impl TmResult {
    /// Best LNCC per voxel.
    pub fn c_map(&self) -> &Volume {
        &self.c_map
    }

    /// Index into the rotation set of the best rotation per voxel.
    pub fn r_map(&self) -> &[usize] {
        &self.r_map
    }

    pub fn template_size(&self) -> usize {
        self.template_size
    }

    /// FFT correlations executed, including the two for the local
    /// normalization.
    pub fn correlations(&self) -> usize {
        self.correlations
    }
}

/// Running per-voxel maximum; ties keep the lower rotation index.
struct Best {
    score: Vec<f64>,
    index: Vec<usize>,
}

impl Best {
    fn new(n: usize) -> Self {
        Self {
            score: vec![f64::NEG_INFINITY; n],
            index: vec![usize::MAX; n],
        }
    }

    fn offer(&mut self, i: usize, s: f64, idx: usize) {
        if s > self.score[i] || (s == self.score[i] && idx < self.index[i]) {
            self.score[i] = s;
            self.index[i] = idx;
        }
    }

    fn merge(mut self, other: Best) -> Best {
        for (i, (&s, &idx)) in other.score.iter().zip(&other.index).enumerate() {
            self.offer(i, s, idx);
        }
        self
    }
}

pub fn tm_match(f: &Volume, t: &Volume, m: &SoftMask, rotations: &RotationSet) -> Result<TmResult> {
    if rotations.is_empty() {
        return Err(Error::EmptyRotationSet);
    }
    let size = m.size();
    if t.dims() != [size; 3] {
        return Err(Error::Shape(format!(
            "template dims {:?} differ from mask size {size}",
            t.dims()
        )));
    }
    let dims = f.dims();
    if dims.iter().any(|&d| d < size) {
        return Err(Error::Shape(format!(
            "image {dims:?} smaller than template size {size}"
        )));
    }
    let tn = normalize_template(t, m)?.volume;
    let mut sf = f.to_f64();
    smooth_f64_in_place(&mut sf, dims);
    let corr = Correlator::from_f64(dims, &sf);
    let w = norm_weights(&corr, &sf, m, flat_floor(f.max_abs()))?;
    let n = w.len();

    let best = rotations
        .as_slice()
        .par_iter()
        .enumerate()
        .try_fold(
            || (Best::new(n), vec![0.0; tn.len()]),
            |(mut best, mut rot), (idx, q)| {
                rotate_into(&tn, q, &mut rot);
                let c = corr.correlate_f64(tn.dims(), &rot)?;
                for (i, (cv, wv)) in c.iter().zip(&w).enumerate() {
                    best.offer(i, cv * wv, idx);
                }
                Ok::<_, Error>((best, rot))
            },
        )
        .map(|r| r.map(|(b, _)| b))
        .try_reduce(|| Best::new(n), |a, b| Ok(a.merge(b)))?;

    Ok(TmResult {
        c_map: Volume::from_f64(dims, &best.score).with_meta_of(f),
        r_map: best.index,
        template_size: size,
        correlations: rotations.len() + 2,
    })
}

/// Highest LNCC peaks of a TM result, with the same exclusion and border
/// policy as the tensorial pipeline; poses come from the rotation map.
pub fn tm_peaks(res: &TmResult, rotations: &RotationSet, p: usize, excl_radius: f64) -> Result<Vec<Peak>> {
    if let Some(&bad) = res.r_map.iter().find(|&&i| i >= rotations.len()) {
        return Err(Error::Shape(format!(
            "rotation index {bad} outside a set of {}",
            rotations.len()
        )));
    }
    let dims = res.c_map.dims();
    let halo = halo_width(res.template_size);
    let eligible = |q: [usize; 3]| (0..3).all(|a| q[a] >= halo && q[a] + halo < dims[a]);
    let mut peaks = find_peaks(&res.c_map, p, excl_radius, Some(&eligible), ScoreKind::Lncc);
    for pk in &mut peaks {
        let i = res.c_map.index(pk.pos[0], pk.pos[1], pk.pos[2]);
        pk.q = rotations[res.r_map[i]];
    }
    Ok(peaks)
}
