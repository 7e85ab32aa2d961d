//! Peak records and greedy non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::so3::UnitQuaternion;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Local normalized cross-correlation.
    Lncc,
    /// Frobenius norm of the tensorial field.
    Frobenius,
    /// Ground-truth entry; the score column carries no meaning.
    Truth,
}

impl ScoreKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreKind::Lncc => "lncc",
            ScoreKind::Frobenius => "frobenius",
            ScoreKind::Truth => "truth",
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lncc" => Ok(ScoreKind::Lncc),
            "frobenius" => Ok(ScoreKind::Frobenius),
            "truth" => Ok(ScoreKind::Truth),
            other => Err(format!("unknown score kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub pos: [usize; 3],
    pub q: UnitQuaternion,
    pub score: f64,
    pub kind: ScoreKind,
    /// Block whose core produced the peak, if blocked processing was used.
    pub block_id: Option<usize>,
    /// False when the eigen solver stopped without converging.
    pub converged: bool,
    pub instance_id: Option<usize>,
}

impl Peak {
    pub fn at(pos: [usize; 3], score: f64, kind: ScoreKind) -> Self {
        Self {
            pos,
            q: UnitQuaternion::IDENTITY,
            score,
            kind,
            block_id: None,
            converged: true,
            instance_id: None,
        }
    }
}

/// Descending score, then lexicographic `(x, y, z)`.
pub fn rank_order(a: &Peak, b: &Peak) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| lex(a.pos, b.pos))
}

fn lex(a: [usize; 3], b: [usize; 3]) -> Ordering {
    a.cmp(&b)
}

pub fn sort_peaks(peaks: &mut [Peak]) {
    peaks.sort_by(rank_order);
}

pub fn distance(a: [usize; 3], b: [usize; 3]) -> f64 {
    (0..3)
        .map(|i| (a[i] as f64 - b[i] as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Default exclusion distance, twice the outer mask radius.
pub fn default_excl_radius(r_out: f64) -> f64 {
    2.0 * r_out
}

/// Greedy selection of up to `p` maxima. Candidates are voxels with a
/// finite value above zero for which `eligible` holds, visited by
/// descending value with ties in lexicographic voxel order; a candidate is
/// kept when it is farther than `excl_radius` from every kept peak.
pub fn find_peaks(
    map: &Volume,
    p: usize,
    excl_radius: f64,
    eligible: Option<&dyn Fn([usize; 3]) -> bool>,
    kind: ScoreKind,
) -> Vec<Peak> {
    if p == 0 {
        return Vec::new();
    }
    let data = map.data();
    let mut cand: Vec<(f32, [usize; 3])> = data
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(i, v)| (*v, map.position(i)))
        .filter(|(_, pos)| eligible.is_none_or(|e| e(*pos)))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| lex(a.1, b.1)));
    let mut out: Vec<Peak> = Vec::new();
    for (v, pos) in cand {
        if out.iter().all(|k| distance(k.pos, pos) > excl_radius) {
            out.push(Peak::at(pos, v as f64, kind));
            if out.len() == p {
                break;
            }
        }
    }
    out
}
