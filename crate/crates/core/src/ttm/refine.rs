use rayon::prelude::*;

use super::field::{LocalPatches, TensorSource};
use crate::error::{Error, Result};
use crate::peaks::{Peak, ScoreKind};
use crate::so3::{rotate_into, UnitQuaternion};
use crate::symtensor::{dominant_eigenpair_with, EigenConfig};
use crate::volume::{SoftMask, Volume};

pub const DEFAULT_SEARCH_RADIUS: usize = 3;
/// Random eigen-solver starts per searched voxel.
pub const DEFAULT_REFINE_INITS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    /// Radius of the searched ball, in voxels.
    pub r_s: usize,
    pub eigen: EigenConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            r_s: DEFAULT_SEARCH_RADIUS,
            eigen: EigenConfig {
                n_random_inits: DEFAULT_REFINE_INITS,
                ..EigenConfig::default()
            },
        }
    }
}

/// Offsets of the closed ball of radius `r`, center excluded, in
/// lexicographic `(dx, dy, dz)` order.
pub fn ball_offsets(r: usize) -> Vec<[isize; 3]> {
    let r = r as isize;
    let mut out = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                if (dx, dy, dz) != (0, 0, 0) && dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Local search around each peak. The incoming pose is scored first at the
/// peak voxel; every other voxel in the ball is scored with the pose of its
/// own field tensor, and the best real-space LNCC wins, moving only on
/// strict improvement. Peaks should carry poses from
/// [`assign_rotations`](super::assign_rotations).
pub fn refine_positions<S: TensorSource>(
    f: &Volume,
    t_norm: &Volume,
    m: &SoftMask,
    src: &S,
    peaks: &[Peak],
    cfg: &RefineConfig,
) -> Result<Vec<Peak>> {
    refine_with(&LocalPatches::new(f, m), t_norm, src, peaks, cfg)
}

pub fn refine_with<S: TensorSource>(
    patches: &LocalPatches,
    t_norm: &Volume,
    src: &S,
    peaks: &[Peak],
    cfg: &RefineConfig,
) -> Result<Vec<Peak>> {
    if t_norm.dims() != [patches.size(); 3] {
        return Err(Error::Shape(format!(
            "template dims {:?} differ from mask size {}",
            t_norm.dims(),
            patches.size()
        )));
    }
    let offsets = ball_offsets(cfg.r_s);
    let dims = patches.dims();
    Ok(peaks
        .par_iter()
        .map(|pk| {
            let mut rot = vec![0.0; t_norm.len()];
            let mut score_at = |p: [usize; 3], q: &UnitQuaternion| {
                rotate_into(t_norm, q, &mut rot);
                patches.lncc(p, &rot)
            };
            let mut best = *pk;
            best.kind = ScoreKind::Lncc;
            let mut best_score = score_at(pk.pos, &pk.q);
            for off in &offsets {
                let mut p = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let c = pk.pos[a] as isize + off[a];
                    inside &= c >= 0 && (c as usize) < dims[a];
                    p[a] = c.max(0) as usize;
                }
                if !inside {
                    continue;
                }
                let Some(t) = src.tensor_at(p) else { continue };
                if t.is_zero() {
                    continue;
                }
                let e = dominant_eigenpair_with(&t, &cfg.eigen);
                let Some(s) = score_at(p, &e.q) else { continue };
                if best_score.is_none_or(|b| s > b) {
                    best_score = Some(s);
                    best.pos = p;
                    best.q = e.q;
                    best.converged = e.converged;
                }
            }
            match best_score {
                Some(s) => best.score = s,
                None => {
                    best.score = 0.0;
                    best.converged = false;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_sizes() {
        assert!(ball_offsets(0).is_empty());
        assert_eq!(ball_offsets(1).len(), 6);
        // 123 lattice points in the closed radius-3 ball, minus the center
        assert_eq!(ball_offsets(3).len(), 122);
        let b = ball_offsets(2);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }
}
