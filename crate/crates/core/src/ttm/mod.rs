//! Tensorial template matching.
//!
//! The template is integrated once over SO(3) against the 35 components of
//! `q⊙q⊙q⊙q`. Matching an image then costs 35 correlations; the Frobenius
//! norm of the per-voxel tensor locates instances and its dominant
//! eigenvector gives their rotation.

mod field;
mod pipeline;
mod refine;
mod template;

pub use field::{
    assign_rotations, frobenius_at, scalar_map, tensorial_field, LocalPatches, RealSpaceProbe,
    TensorSource, TensorialField,
};
pub use pipeline::{halo_width, plan_blocks, run_ttm, BlockSpec, BlockStats, TtmConfig, TtmRun};
pub use refine::{
    ball_offsets, refine_positions, refine_with, RefineConfig, DEFAULT_REFINE_INITS,
    DEFAULT_SEARCH_RADIUS,
};
pub use template::{
    build_tensorial_template, build_tensorial_template_from_set, template_hash, TemplateMeta,
    TensorialTemplate, DEFAULT_INTEGRATION_SAMPLES, INDEX_TABLE_VERSION, MIN_INTEGRATION_SAMPLES,
};
