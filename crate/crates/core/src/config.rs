//! Run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Symmetry, DEFAULT_MATCH_TOLERANCE};
use crate::io::read_volume;
use crate::symtensor::EigenConfig;
use crate::synth::{GridSpec, TemplateKind};
use crate::ttm::{
    RefineConfig, TtmConfig, DEFAULT_INTEGRATION_SAMPLES, DEFAULT_REFINE_INITS, DEFAULT_SEARCH_RADIUS,
    MIN_INTEGRATION_SAMPLES,
};
use crate::volume::{default_mask_radii, make_soft_mask, mask_from_volume, SoftMask};

pub const MAX_INTEGRATION_SAMPLES: usize = 10_000_000;
pub const MAX_SEARCH_RADIUS: usize = 16;
pub const MAX_ROTATIONS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Volume to search.
    pub image: Option<PathBuf>,
    /// Template volume (odd cube).
    pub template: Option<PathBuf>,
    /// Tensorial template directory.
    pub tensorial_template: Option<PathBuf>,
    /// Stored mask volume; excludes `r_in` and `r_out`.
    pub mask: Option<PathBuf>,
    /// Output directory or file, depending on the subcommand.
    pub output: Option<PathBuf>,
    pub r_in: Option<f64>,
    pub r_out: Option<f64>,
    /// Rotations integrated when building the tensorial template.
    pub n_integration: usize,
    /// Peaks reported per run.
    pub n_peaks: usize,
    /// Defaults to twice the outer mask radius.
    pub excl_radius: Option<f64>,
    /// Refinement search radius in voxels.
    pub r_s: usize,
    pub refine: bool,
    /// Random eigen-solver starts per voxel during refinement.
    pub refine_inits: usize,
    /// Block core edge in voxels; unset processes the image whole.
    pub block_size: Option<usize>,
    /// Worker threads; unset uses every core.
    pub threads: Option<usize>,
    /// Seed for synthetic poses.
    pub seed: u64,
    /// Seed for synthetic noise.
    pub noise_seed: u64,
    /// Signal-to-noise ratio of synthetic data; unset leaves it noise-free.
    pub snr: Option<f64>,
    /// Rotations sampled by the baseline matcher.
    pub n_rotations: usize,
    pub template_kind: TemplateKind,
    pub template_size: usize,
    pub grid: [usize; 3],
    pub spacing: usize,
    /// Largest distance, in voxels, between a detection and its match.
    pub match_tolerance: f64,
    pub symmetry: Option<Symmetry>,
    /// Multiples of the ground-truth count at which detection curves are
    /// sampled.
    pub picking_factors: Vec<f64>,
    /// Rotation-set sizes swept by the benchmark.
    pub bench_rotations: Vec<usize>,
    /// Timed repetitions per benchmark point; the fastest is kept.
    pub bench_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image: None,
            template: None,
            tensorial_template: None,
            mask: None,
            output: None,
            r_in: None,
            r_out: None,
            n_integration: DEFAULT_INTEGRATION_SAMPLES,
            n_peaks: 100,
            excl_radius: None,
            r_s: DEFAULT_SEARCH_RADIUS,
            refine: false,
            refine_inits: DEFAULT_REFINE_INITS,
            block_size: None,
            threads: None,
            seed: 42,
            noise_seed: 7,
            snr: None,
            n_rotations: 10_000,
            template_kind: TemplateKind::LShape,
            template_size: 17,
            grid: [3, 3, 3],
            spacing: 20,
            match_tolerance: DEFAULT_MATCH_TOLERANCE,
            symmetry: None,
            picking_factors: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            bench_rotations: vec![1000, 2000, 4000, 8000],
            bench_repeats: 3,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check(
            (MIN_INTEGRATION_SAMPLES..=MAX_INTEGRATION_SAMPLES).contains(&self.n_integration),
            || {
                format!(
                    "n_integration must lie in [{MIN_INTEGRATION_SAMPLES}, {MAX_INTEGRATION_SAMPLES}], got {}",
                    self.n_integration
                )
            },
        )?;
        check(self.n_peaks >= 1, || "n_peaks must be at least 1".into())?;
        if let Some(e) = self.excl_radius {
            check(positive(e), || format!("excl_radius must be positive, got {e}"))?;
        }
        check(self.r_s <= MAX_SEARCH_RADIUS, || {
            format!("r_s must be at most {MAX_SEARCH_RADIUS}, got {}", self.r_s)
        })?;
        check(self.refine_inits >= 1, || "refine_inits must be at least 1".into())?;
        if let Some(b) = self.block_size {
            check(b >= 1, || "block_size must be at least 1".into())?;
        }
        if let Some(t) = self.threads {
            check(t >= 1, || "threads must be at least 1".into())?;
        }
        if let Some(s) = self.snr {
            check(positive(s), || format!("snr must be positive and finite, got {s}"))?;
        }
        check((1..=MAX_ROTATIONS).contains(&self.n_rotations), || {
            format!("n_rotations must lie in [1, {MAX_ROTATIONS}], got {}", self.n_rotations)
        })?;
        check(self.mask.is_none() || (self.r_in.is_none() && self.r_out.is_none()), || {
            "give either a mask path or mask radii, not both".into()
        })?;
        match (self.r_in, self.r_out) {
            (Some(a), Some(b)) => check(a >= 0.0 && a.is_finite() && b > a && b.is_finite(), || {
                format!("mask radii need 0 <= r_in < r_out, got {a} and {b}")
            })?,
            (None, None) => {}
            _ => return Err(Error::Config("r_in and r_out must be given together".into())),
        }
        check(self.template_size % 2 == 1 && self.template_size >= 5, || {
            format!("template_size must be odd and at least 5, got {}", self.template_size)
        })?;
        if let TemplateKind::Cylinder { radius, height, edge } = self.template_kind {
            check(positive(radius) && positive(height) && edge >= 0.0 && edge.is_finite(), || {
                "cylinder radius and height must be positive and edge non-negative".into()
            })?;
        }
        check(self.grid.iter().all(|&g| g >= 1), || "grid counts must be at least 1".into())?;
        check(self.spacing >= 1, || "spacing must be at least 1".into())?;
        check(positive(self.match_tolerance), || {
            format!("match_tolerance must be positive, got {}", self.match_tolerance)
        })?;
        check(
            !self.picking_factors.is_empty() && self.picking_factors.iter().all(|&f| positive(f)),
            || "picking_factors must be a non-empty list of positive numbers".into(),
        )?;
        check(
            !self.bench_rotations.is_empty() && self.bench_rotations.iter().all(|n| (1..=MAX_ROTATIONS).contains(n)),
            || format!("bench_rotations must be a non-empty list in [1, {MAX_ROTATIONS}]"),
        )?;
        check(self.bench_repeats >= 1, || "bench_repeats must be at least 1".into())?;
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            grid: self.grid,
            spacing: self.spacing,
        }
    }

    /// Mask for a template of edge `size`: the stored volume if given,
    /// otherwise a ramp with the configured or default radii.
    pub fn soft_mask(&self, size: usize) -> Result<SoftMask> {
        if let Some(p) = &self.mask {
            let m = mask_from_volume(read_volume(p)?)?;
            if m.size() != size {
                return Err(Error::Shape(format!(
                    "mask edge {} differs from template edge {size}",
                    m.size()
                )));
            }
            return Ok(m);
        }
        let (r_in, r_out) = match (self.r_in, self.r_out) {
            (Some(a), Some(b)) => (a, b),
            _ => default_mask_radii(size),
        };
        make_soft_mask([size; 3], r_in, r_out)
    }

    pub fn ttm_config(&self) -> TtmConfig {
        TtmConfig {
            n_peaks: self.n_peaks,
            excl_radius: self.excl_radius,
            refine: self.refine,
            refine_cfg: RefineConfig {
                r_s: self.r_s,
                eigen: EigenConfig {
                    n_random_inits: self.refine_inits,
                    ..EigenConfig::default()
                },
            },
            eigen: EigenConfig::default(),
            block_core: self.block_size,
        }
    }
}
