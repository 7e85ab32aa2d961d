//! MRC2014 reader and writer for 32-bit float volumes.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub const HEADER_LEN: usize = 1024;
const MODE_FLOAT32: i32 = 2;
const MAGIC_OFFSET: usize = 208;
const STAMP_OFFSET: usize = 212;

fn format_err(path: &Path, offset: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

pub fn read_mrc(path: &Path) -> Result<Volume> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let h = &bytes[..HEADER_LEN];
    if &h[MAGIC_OFFSET..MAGIC_OFFSET + 4] != b"MAP " {
        return Err(format_err(path, MAGIC_OFFSET as u64, "missing `MAP ` identifier"));
    }
    if h[STAMP_OFFSET] != 0x44 {
        return Err(format_err(
            path,
            STAMP_OFFSET as u64,
            format!("machine stamp {:#04x} is not little-endian", h[STAMP_OFFSET]),
        ));
    }
    let i32_at = |o: usize| Cursor::new(&h[o..o + 4]).read_i32::<LittleEndian>().unwrap();
    let f32_at = |o: usize| Cursor::new(&h[o..o + 4]).read_f32::<LittleEndian>().unwrap();

    let mode = i32_at(12);
    if mode != MODE_FLOAT32 {
        return Err(Error::UnsupportedMode {
            path: path.to_path_buf(),
            mode,
        });
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = i32_at(4 * a);
        if v <= 0 {
            return Err(format_err(path, 4 * a as u64, format!("non-positive dimension {v}")));
        }
        *d = v as usize;
    }
    let axes = [i32_at(64), i32_at(68), i32_at(72)];
    if axes != [1, 2, 3] {
        return Err(format_err(path, 64, format!("axis order {axes:?} is not supported")));
    }
    let ext = i32_at(92);
    if ext < 0 {
        return Err(format_err(path, 92, format!("negative extended header size {ext}")));
    }
    let start = HEADER_LEN + ext as usize;
    let n = dims[0] * dims[1] * dims[2];
    let expected = (start + 4 * n) as u64;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(format_err(
            path,
            expected,
            format!("{} trailing bytes after the data block", actual - expected),
        ));
    }
    let mut data = vec![0f32; n];
    Cursor::new(&bytes[start..]).read_f32_into::<LittleEndian>(&mut data)?;

    let mx = i32_at(28);
    let cell_x = f32_at(40);
    let voxel_size = if mx > 0 && cell_x > 0.0 {
        cell_x / mx as f32
    } else {
        1.0
    };
    let origin = [f32_at(196), f32_at(200), f32_at(204)];
    Volume::new(dims, data)
        .map_err(|e| format_err(path, start as u64, e.to_string()))
        .map(|v| v.with_voxel_size(voxel_size).with_origin(origin))
}

pub fn write_mrc(v: &Volume, path: &Path) -> Result<()> {
    let dims = v.dims();
    let data = v.data();
    let (mut min, mut max, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
    for &x in data {
        min = min.min(x);
        max = max.max(x);
        sum += x as f64;
    }
    let mean = sum / data.len() as f64;
    let rms = (data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / data.len() as f64).sqrt();

    let mut h = Vec::with_capacity(HEADER_LEN);
    for d in dims {
        h.write_i32::<LittleEndian>(d as i32)?;
    }
    h.write_i32::<LittleEndian>(MODE_FLOAT32)?;
    for _ in 0..3 {
        h.write_i32::<LittleEndian>(0)?; // nxstart, nystart, nzstart
    }
    for d in dims {
        h.write_i32::<LittleEndian>(d as i32)?; // mx, my, mz
    }
    for d in dims {
        h.write_f32::<LittleEndian>(d as f32 * v.voxel_size())?;
    }
    for _ in 0..3 {
        h.write_f32::<LittleEndian>(90.0)?;
    }
    for a in [1, 2, 3] {
        h.write_i32::<LittleEndian>(a)?;
    }
    h.write_f32::<LittleEndian>(min)?;
    h.write_f32::<LittleEndian>(max)?;
    h.write_f32::<LittleEndian>(mean as f32)?;
    h.write_i32::<LittleEndian>(1)?; // ispg: single volume
    h.write_i32::<LittleEndian>(0)?; // nsymbt
    h.resize(104, 0);
    h.extend_from_slice(b"    "); // exttyp
    h.write_i32::<LittleEndian>(20140)?; // nversion
    h.resize(196, 0);
    for o in v.origin() {
        h.write_f32::<LittleEndian>(o)?;
    }
    h.extend_from_slice(b"MAP ");
    h.extend_from_slice(&[0x44, 0x44, 0, 0]);
    h.write_f32::<LittleEndian>(rms as f32)?;
    h.write_i32::<LittleEndian>(0)?; // nlabl
    h.resize(HEADER_LEN, 0);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&h)?;
    for &x in data {
        w.write_f32::<LittleEndian>(x)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: [usize; 3]) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = (0..dims.iter().product()).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        Volume::new(dims, data).unwrap().with_voxel_size(10.0).with_origin([1.0, -2.0, 3.5])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mrc");
        let v = random_volume([7, 7, 7]);
        write_mrc(&v, &p).unwrap();
        let back = read_mrc(&p).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert!(back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.voxel_size(), 10.0);
        assert_eq!(back.origin(), [1.0, -2.0, 3.5]);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 1024 + 4 * 343);
    }

    #[test]
    fn other_modes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mrc");
        write_mrc(&random_volume([4, 5, 6]), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[12..16].copy_from_slice(&1i32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        let err = read_mrc(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedMode { mode: 1, .. }));
        assert!(err.to_string().contains("mode 1"));
    }

    #[test]
    fn size_mismatch_is_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mrc");
        write_mrc(&random_volume([4, 5, 6]), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&7i32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        match read_mrc(&p) {
            Err(Error::Truncated { expected, actual, .. }) => {
                assert_eq!(expected, 1024 + 4 * 4 * 5 * 7);
                assert_eq!(actual, 1024 + 4 * 4 * 5 * 6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mrc");
        write_mrc(&random_volume([3, 3, 3]), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[208] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_mrc(&p), Err(Error::Format { offset: 208, .. })));
        std::fs::write(&p, &bytes[..100]).unwrap();
        assert!(matches!(read_mrc(&p), Err(Error::Truncated { .. })));
    }
}
