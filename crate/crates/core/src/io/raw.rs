//! Raw little-endian float32 samples with a JSON sidecar.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume};

pub const RAW_ORDER: &str = "xyz-fastest-x";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub dims: Dims,
    pub voxel_size: f32,
    pub order: String,
    #[serde(default)]
    pub origin: [f32; 3],
}

/// `vol.raw` pairs with `vol.json`.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn read_raw(path: &Path) -> Result<Volume> {
    let side_path = sidecar_path(path);
    let side: RawSidecar = serde_json::from_reader(File::open(&side_path)?)?;
    if side.order != RAW_ORDER {
        return Err(Error::Format {
            path: side_path,
            offset: 0,
            msg: format!("sample order `{}` is not `{RAW_ORDER}`", side.order),
        });
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let n: usize = side.dims.iter().product();
    let expected = 4 * n as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut data = vec![0f32; n];
    LittleEndian::read_f32_into(&bytes, &mut data);
    Ok(Volume::new(side.dims, data)?
        .with_voxel_size(side.voxel_size)
        .with_origin(side.origin))
}

pub fn write_raw(v: &Volume, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &x in v.data() {
        w.write_f32::<LittleEndian>(x)?;
    }
    w.flush()?;
    let side = RawSidecar {
        dims: v.dims(),
        voxel_size: v.voxel_size(),
        order: RAW_ORDER.to_string(),
        origin: v.origin(),
    };
    let mut f = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(&mut f, &side)?;
    f.write_all(b"\n")?;
    Ok(())
}
