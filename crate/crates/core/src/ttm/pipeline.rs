use rayon::prelude::*;
use serde::Serialize;

use super::field::{field_from_smoothed, frobenius_at, scalar_map, assign_rotations, LocalPatches, RealSpaceProbe};
use super::refine::{refine_with, RefineConfig};
use super::template::TensorialTemplate;
use crate::error::{Error, Result};
use crate::peaks::{default_excl_radius, find_peaks, sort_peaks, Peak, ScoreKind};
use crate::symtensor::EigenConfig;
use crate::volume::{Dims, SoftMask, Volume};

/// Core region (inclusive bounds) of one block and the halo around it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockSpec {
    pub id: usize,
    pub core_lo: [usize; 3],
    pub core_hi: [usize; 3],
    pub halo: usize,
}

impl BlockSpec {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.core_lo[a] && p[a] <= self.core_hi[a])
    }

    /// Core grown by the halo and clipped to the image, as `(lo, dims)`.
    pub fn extended(&self, image: Dims) -> ([usize; 3], Dims) {
        let mut lo = [0; 3];
        let mut d = [0; 3];
        for a in 0..3 {
            lo[a] = self.core_lo[a].saturating_sub(self.halo);
            let hi = (self.core_hi[a] + self.halo).min(image[a] - 1);
            d[a] = hi - lo[a] + 1;
        }
        (lo, d)
    }
}

/// Halo that covers the template's half-diagonal.
pub fn halo_width(size: usize) -> usize {
    (size as f64 * 3f64.sqrt() / 2.0).ceil() as usize
}

/// Splits the image into near-equal cores of at most `core` voxels per
/// axis; `None` gives one block.
pub fn plan_blocks(dims: Dims, core: Option<usize>, template_size: usize) -> Result<Vec<BlockSpec>> {
    let halo = halo_width(template_size);
    let splits: Vec<Vec<(usize, usize)>> = (0..3)
        .map(|a| {
            let n = dims[a];
            let c = core.unwrap_or(n).min(n);
            let k = n.div_ceil(c);
            let (base, extra) = (n / k, n % k);
            let mut lo = 0;
            (0..k)
                .map(|i| {
                    let len = base + usize::from(i < extra);
                    let r = (lo, lo + len - 1);
                    lo += len;
                    r
                })
                .collect()
        })
        .collect();
    if let Some(c) = core {
        if c < template_size {
            return Err(Error::BlockGeometry(format!(
                "block core {c} is smaller than the template size {template_size}"
            )));
        }
    }
    let mut out = Vec::new();
    for z in &splits[2] {
        for y in &splits[1] {
            for x in &splits[0] {
                out.push(BlockSpec {
                    id: out.len(),
                    core_lo: [x.0, y.0, z.0],
                    core_hi: [x.1, y.1, z.1],
                    halo,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TtmConfig {
    pub n_peaks: usize,
    /// Defaults to twice the outer mask radius.
    pub excl_radius: Option<f64>,
    pub refine: bool,
    pub refine_cfg: RefineConfig,
    pub eigen: EigenConfig,
    /// Requested core edge per block; `None` processes the image whole.
    pub block_core: Option<usize>,
}

impl Default for TtmConfig {
    fn default() -> Self {
        Self {
            n_peaks: 100,
            excl_radius: None,
            refine: false,
            refine_cfg: RefineConfig::default(),
            eigen: EigenConfig::default(),
            block_core: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockStats {
    pub block: BlockSpec,
    /// Template-component correlations executed for this block.
    pub correlations: usize,
}

#[derive(Clone, Debug)]
pub struct TtmRun {
    pub peaks: Vec<Peak>,
    pub blocks: Vec<BlockStats>,
    /// Stitched Frobenius map over the whole image.
    pub scalar_map: Volume,
}

/// Full matching pass: per-block fields and Frobenius maps, global peak
/// selection on the stitched map, then poses (and optionally refinement)
/// from real-space tensors so results do not depend on the blocking.
pub fn run_ttm(f: &Volume, t: &TensorialTemplate, m: &SoftMask, cfg: &TtmConfig) -> Result<TtmRun> {
    let size = t.size();
    if m.size() != size {
        return Err(Error::Shape(format!(
            "mask size {} differs from template size {size}",
            m.size()
        )));
    }
    let dims = f.dims();
    if dims.iter().any(|&d| d < size) {
        return Err(Error::Shape(format!(
            "image {dims:?} smaller than template size {size}"
        )));
    }
    let blocks = plan_blocks(dims, cfg.block_core, size)?;
    let patches = LocalPatches::new(f, m);
    let sf = patches.smoothed();
    let per_block: Vec<(Volume, usize)> = blocks
        .par_iter()
        .map(|b| {
            let (lo, ed) = b.extended(dims);
            let sub = extract_f64(sf, dims, lo, ed);
            let field = field_from_smoothed(&sub, ed, t, m, patches.floor())?;
            Ok((scalar_map(&field), field.correlations()))
        })
        .collect::<Result<_>>()?;

    let mut chat = Volume::zeros(dims).with_meta_of(f);
    let mut stats = Vec::with_capacity(blocks.len());
    for (b, (s, count)) in blocks.iter().zip(&per_block) {
        let (lo, _) = b.extended(dims);
        for z in b.core_lo[2]..=b.core_hi[2] {
            for y in b.core_lo[1]..=b.core_hi[1] {
                for x in b.core_lo[0]..=b.core_hi[0] {
                    let v = s.get(x - lo[0], y - lo[1], z - lo[2]);
                    let i = chat.index(x, y, z);
                    chat.data_mut()[i] = v;
                }
            }
        }
        stats.push(BlockStats {
            block: *b,
            correlations: *count,
        });
    }

    let halo = halo_width(size);
    let eligible = |p: [usize; 3]| (0..3).all(|a| p[a] >= halo && p[a] + halo < dims[a]);
    let excl = cfg.excl_radius.unwrap_or_else(|| default_excl_radius(m.r_out()));
    let mut peaks = find_peaks(&chat, cfg.n_peaks, excl, Some(&eligible), ScoreKind::Frobenius);
    for p in &mut peaks {
        p.block_id = blocks.iter().find(|b| b.contains(p.pos)).map(|b| b.id);
    }

    let probe = RealSpaceProbe::new(&patches, t)?;
    let mut peaks = assign_rotations(&probe, &peaks, &cfg.eigen);
    for p in &mut peaks {
        p.score = frobenius_at(&probe, p.pos).unwrap_or(p.score);
    }
    if cfg.refine {
        peaks = refine_with(&patches, t.normalized(), &probe, &peaks, &cfg.refine_cfg)?;
        for p in &mut peaks {
            p.block_id = blocks.iter().find(|b| b.contains(p.pos)).map(|b| b.id);
        }
    }
    sort_peaks(&mut peaks);
    Ok(TtmRun {
        peaks,
        blocks: stats,
        scalar_map: chat,
    })
}

fn extract_f64(src: &[f64], dims: Dims, lo: [usize; 3], d: Dims) -> Vec<f64> {
    let mut out = Vec::with_capacity(d[0] * d[1] * d[2]);
    for z in 0..d[2] {
        for y in 0..d[1] {
            let row = lo[0] + dims[0] * ((lo[1] + y) + dims[1] * (lo[2] + z));
            out.extend_from_slice(&src[row..row + d[0]]);
        }
    }
    out
}
