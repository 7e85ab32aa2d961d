//! Volumes (MRC2014 or raw with a JSON sidecar), peak lists, ground truth
//! and the tensorial template container.

mod container;
mod mrc;
mod peaks;
mod raw;

use std::path::Path;

pub use container::{
    component_file, load_tensorial_template, save_tensorial_template, META_FILE, NORMALIZED_FILE,
};
pub use mrc::{read_mrc, write_mrc};
pub use peaks::{
    read_ground_truth, read_peaks_file, truth_meta_path, write_ground_truth, write_peaks,
    write_peaks_file, QUATERNION_TOLERANCE,
};
pub use raw::{read_raw, sidecar_path, write_raw, RawSidecar, RAW_ORDER};

use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeFormat {
    Mrc,
    Raw,
}

impl VolumeFormat {
    /// `.raw` selects raw samples; anything else is read as MRC.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("raw") => VolumeFormat::Raw,
            _ => VolumeFormat::Mrc,
        }
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match VolumeFormat::from_path(path) {
        VolumeFormat::Mrc => read_mrc(path),
        VolumeFormat::Raw => read_raw(path),
    }
    .map_err(|e| with_path(e, path))
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    match VolumeFormat::from_path(path) {
        VolumeFormat::Mrc => write_mrc(v, path),
        VolumeFormat::Raw => write_raw(v, path),
    }
    .map_err(|e| with_path(e, path))
}

/// Prefixes bare I/O errors with the file they concern.
pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}
