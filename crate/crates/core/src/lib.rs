//! Tensorial template matching (TTM) for rigid 3D templates in volumetric
//! images, together with a rotation-sampling template-matching baseline,
//! synthetic data generation and evaluation metrics.
//!
//! The tensorial template integrates a normalized template over SO(3),
//! weighted by the 35 independent components of the quaternion fourth
//! power. Correlating an image with those 35 volumes yields a per-voxel
//! symmetric tensor whose Frobenius norm localizes matches and whose
//! dominant eigenvector is the rotation of the match, so the number of
//! FFT correlations does not depend on the angular accuracy.

pub mod bench;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod peaks;
pub mod so3;
pub mod symtensor;
pub mod synth;
pub mod tm;
pub mod ttm;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{SoftMask, Volume};
