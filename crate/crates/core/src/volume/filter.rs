use super::{Dims, SoftMask, Volume};
use crate::error::{Error, Result};

/// Off-center tap of the separable low-pass `[a, 1 - 2a, a]`.
pub const SMOOTHING_A: f64 = 0.2;

/// Applies the 3-tap filter along every axis with edge replication.
pub fn smooth_f64_in_place(data: &mut [f64], dims: Dims) {
    let [nx, ny, nz] = dims;
    assert_eq!(data.len(), nx * ny * nz);
    let mut line = Vec::new();
    for (axis, (n, stride)) in [(nx, 1), (ny, nx), (nz, nx * ny)].into_iter().enumerate() {
        if n < 2 {
            continue;
        }
        line.resize(n, 0.0);
        let outer = data.len() / n;
        for o in 0..outer {
            let base = match axis {
                0 => o * nx,
                1 => (o % nx) + (o / nx) * nx * ny,
                _ => o,
            };
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[base + i * stride];
            }
            filter_line(&line, |i, v| data[base + i * stride] = v);
        }
    }
}

#[inline]
fn filter_line(line: &[f64], mut out: impl FnMut(usize, f64)) {
    let a = SMOOTHING_A;
    let b = 1.0 - 2.0 * a;
    let n = line.len();
    for i in 0..n {
        let l = line[i.saturating_sub(1)];
        let r = line[(i + 1).min(n - 1)];
        out(i, a * l + b * line[i] + a * r);
    }
}

/// `h * f`. The mask is applied separately (see [`apply_s`]).
pub fn smooth(f: &Volume) -> Volume {
    let mut buf = f.to_f64();
    smooth_f64_in_place(&mut buf, f.dims());
    Volume::from_f64(f.dims(), &buf).with_meta_of(f)
}

/// `S(f) = m (h * f)`.
pub fn apply_s(f: &Volume, m: &SoftMask) -> Result<Volume> {
    if f.dims() != m.volume().dims() {
        return Err(Error::Shape(format!(
            "image dims {:?} differ from mask dims {:?}",
            f.dims(),
            m.volume().dims()
        )));
    }
    let mut buf = f.to_f64();
    smooth_f64_in_place(&mut buf, f.dims());
    for (v, &w) in buf.iter_mut().zip(m.volume().data()) {
        *v *= w as f64;
    }
    Ok(Volume::from_f64(f.dims(), &buf).with_meta_of(f))
}
