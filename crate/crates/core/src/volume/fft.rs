//! Circular 3D cross-correlation through real-to-complex FFTs.
//!
//! The image is transformed once by [`Correlator::new`]; every later call to
//! [`Correlator::correlate`] transforms a (small) kernel zero-padded to the
//! image extent with its center wrapped onto the origin, multiplies by the
//! conjugate spectrum and inverts. Output voxel `x` therefore holds
//! `sum_z f(x + z) g(c + z)` where `c` is the kernel center and indices wrap.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Dims, Volume};
use crate::error::{Error, Result};

type C64 = Complex<f64>;

struct Plan3 {
    dims: Dims,
    half_x: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    fwd_z: Arc<dyn Fft<f64>>,
    inv_z: Arc<dyn Fft<f64>>,
}

fn plan_for(dims: Dims) -> Arc<Plan3> {
    static CACHE: OnceLock<Mutex<HashMap<Dims, Arc<Plan3>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(dims)
        .or_insert_with(|| {
            let mut real = RealFftPlanner::<f64>::new();
            let mut cplx = FftPlanner::<f64>::new();
            Arc::new(Plan3 {
                dims,
                half_x: dims[0] / 2 + 1,
                r2c: real.plan_fft_forward(dims[0]),
                c2r: real.plan_fft_inverse(dims[0]),
                fwd_y: cplx.plan_fft_forward(dims[1]),
                inv_y: cplx.plan_fft_inverse(dims[1]),
                fwd_z: cplx.plan_fft_forward(dims[2]),
                inv_z: cplx.plan_fft_inverse(dims[2]),
            })
        })
        .clone()
}

impl Plan3 {
    fn spectrum_len(&self) -> usize {
        self.half_x * self.dims[1] * self.dims[2]
    }

    /// Forward transform of real data. Rows `(y, z)` for which `row_live`
    /// returns false are known to be zero and skipped, as are y-passes over
    /// z-planes for which `plane_live` is false.
    fn forward(
        &self,
        data: &[f64],
        row_live: impl Fn(usize, usize) -> bool,
        plane_live: impl Fn(usize) -> bool,
    ) -> Vec<C64> {
        let [nx, ny, nz] = self.dims;
        let hx = self.half_x;
        let mut spec = vec![C64::new(0.0, 0.0); self.spectrum_len()];
        let mut row = vec![0.0; nx];
        let mut scratch = self.r2c.make_scratch_vec();
        for z in 0..nz {
            for y in 0..ny {
                if !row_live(y, z) {
                    continue;
                }
                let src = nx * (y + ny * z);
                row.copy_from_slice(&data[src..src + nx]);
                let dst = hx * (y + ny * z);
                self.r2c
                    .process_with_scratch(&mut row, &mut spec[dst..dst + hx], &mut scratch)
                    .expect("r2c length mismatch");
            }
        }
        self.pass_y(&mut spec, &self.fwd_y, plane_live);
        self.pass_z(&mut spec, &self.fwd_z);
        spec
    }

    fn inverse(&self, mut spec: Vec<C64>) -> Vec<f64> {
        let [nx, ny, nz] = self.dims;
        let hx = self.half_x;
        self.pass_z(&mut spec, &self.inv_z);
        self.pass_y(&mut spec, &self.inv_y, |_| true);
        let mut out = vec![0.0; nx * ny * nz];
        let mut scratch = self.c2r.make_scratch_vec();
        let norm = 1.0 / (nx * ny * nz) as f64;
        for line in 0..ny * nz {
            let s = &mut spec[hx * line..hx * (line + 1)];
            // Real signals: DC (and Nyquist for even nx) bins are real.
            s[0].im = 0.0;
            if nx % 2 == 0 {
                s[hx - 1].im = 0.0;
            }
            let o = &mut out[nx * line..nx * (line + 1)];
            self.c2r
                .process_with_scratch(s, o, &mut scratch)
                .expect("c2r length mismatch");
            for v in o.iter_mut() {
                *v *= norm;
            }
        }
        out
    }

    fn pass_y(&self, spec: &mut [C64], fft: &Arc<dyn Fft<f64>>, plane_live: impl Fn(usize) -> bool) {
        let [_, ny, nz] = self.dims;
        let hx = self.half_x;
        if ny < 2 {
            return;
        }
        let mut buf = vec![C64::new(0.0, 0.0); hx * ny];
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for z in 0..nz {
            if !plane_live(z) {
                continue;
            }
            let plane = &mut spec[hx * ny * z..hx * ny * (z + 1)];
            transpose(plane, &mut buf, hx, ny);
            fft.process_with_scratch(&mut buf, &mut scratch);
            transpose(&buf, plane, ny, hx);
        }
    }

    fn pass_z(&self, spec: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        let [_, ny, nz] = self.dims;
        let plane = self.half_x * ny;
        if nz < 2 {
            return;
        }
        let mut buf = vec![C64::new(0.0, 0.0); spec.len()];
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        transpose(spec, &mut buf, plane, nz);
        fft.process_with_scratch(&mut buf, &mut scratch);
        transpose(&buf, spec, nz, plane);
    }
}

/// `src` is `rows x cols` with cols fastest; writes `cols x rows` into `dst`.
fn transpose(src: &[C64], dst: &mut [C64], cols: usize, rows: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Image spectrum cached for repeated correlations against kernels.
pub struct Correlator {
    plan: Arc<Plan3>,
    spectrum: Vec<C64>,
}

impl Correlator {
    pub fn new(f: &Volume) -> Self {
        Self::from_f64(f.dims(), &f.to_f64())
    }

    pub fn from_f64(dims: Dims, data: &[f64]) -> Self {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        let plan = plan_for(dims);
        let spectrum = plan.forward(data, |_, _| true, |_| true);
        Self { plan, spectrum }
    }

    pub fn dims(&self) -> Dims {
        self.plan.dims
    }

    /// Full-size correlation map against a kernel no larger than the image.
    pub fn correlate(&self, g: &Volume) -> Result<Vec<f64>> {
        let gd = g.dims();
        let data = g.data();
        self.correlate_with(gd, |i| data[i] as f64)
    }

    /// As [`Correlator::correlate`] for an `f64` kernel with x-fastest layout.
    pub fn correlate_f64(&self, kdims: Dims, k: &[f64]) -> Result<Vec<f64>> {
        if k.len() != kdims[0] * kdims[1] * kdims[2] {
            return Err(Error::Shape(format!(
                "kernel buffer of {} samples for dims {kdims:?}",
                k.len()
            )));
        }
        self.correlate_with(kdims, |i| k[i])
    }

    fn correlate_with(&self, gd: Dims, sample: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        let dims = self.plan.dims;
        if (0..3).any(|a| gd[a] > dims[a]) {
            return Err(Error::Shape(format!(
                "kernel {gd:?} larger than image {dims:?}"
            )));
        }
        let [nx, ny, nz] = dims;
        let c = [gd[0] / 2, gd[1] / 2, gd[2] / 2];
        let mut padded = vec![0.0; nx * ny * nz];
        // wrapped coordinate of kernel offset i along an axis of extent n
        let wrap = |i: usize, c: usize, n: usize| (i + n - c) % n;
        let mut live_rows = vec![false; ny * nz];
        let mut live_planes = vec![false; nz];
        for z in 0..gd[2] {
            let pz = wrap(z, c[2], nz);
            live_planes[pz] = true;
            for y in 0..gd[1] {
                let py = wrap(y, c[1], ny);
                live_rows[py + ny * pz] = true;
                let row = nx * (py + ny * pz);
                let src = gd[0] * (y + gd[1] * z);
                for x in 0..gd[0] {
                    padded[row + wrap(x, c[0], nx)] = sample(src + x);
                }
            }
        }
        let mut spec = self
            .plan
            .forward(&padded, |y, z| live_rows[y + ny * z], |z| live_planes[z]);
        for (s, f) in spec.iter_mut().zip(&self.spectrum) {
            *s = f * s.conj();
        }
        Ok(self.plan.inverse(spec))
    }
}

/// `(f ⋆ g)(x) = sum_z f(x + z) g(z)` with `g` centered and wrapped; see the
/// module docs. Values within one kernel radius of the border include
/// wrap-around terms and are only meaningful for periodic data.
pub fn cross_correlate_fft(f: &Volume, g: &Volume) -> Result<Volume> {
    let out = Correlator::new(f).correlate(g)?;
    Ok(Volume::from_f64(f.dims(), &out).with_meta_of(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct circular sum; the oracle for every FFT test.
    fn brute_force(f: &Volume, g: &Volume) -> Vec<f64> {
        let [nx, ny, nz] = f.dims();
        let gd = g.dims();
        let c = g.center();
        let mut out = vec![0.0; nx * ny * nz];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0f64;
                    for k in 0..gd[2] {
                        for j in 0..gd[1] {
                            for i in 0..gd[0] {
                                let fx = (x + i + nx - c[0]) % nx;
                                let fy = (y + j + ny - c[1]) % ny;
                                let fz = (z + k + nz - c[2]) % nz;
                                acc += f.get(fx, fy, fz) as f64 * g.get(i, j, k) as f64;
                            }
                        }
                    }
                    out[f.index(x, y, z)] = acc;
                }
            }
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn impulse_against_itself_peaks_at_aligned_center() {
        let mut f = Volume::zeros([7, 7, 7]);
        let p = f.index(2, 4, 5);
        f.data_mut()[p] = 1.0;
        let out = Correlator::new(&f).correlate(&f).unwrap();
        // frames coincide when the kernel center sits at the image center
        let at = f.index(3, 3, 3);
        for (i, v) in out.iter().enumerate() {
            let want = if i == at { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "{i}: {v}");
        }
    }

    #[test]
    fn matches_brute_force_8_by_5() {
        let f = Volume::from_fn([8, 8, 8], |x, y, z| ((x * 7 + y * 3 + z * 11) % 13) as f64 - 6.0)
            .unwrap();
        let g = Volume::from_fn([5, 5, 5], |x, y, z| ((x * 5 + y * y + z) % 7) as f64 * 0.5 - 1.0)
            .unwrap();
        let fast = Correlator::new(&f).correlate(&g).unwrap();
        assert!(rel_err(&fast, &brute_force(&f, &g)) < 1e-6);
    }

    #[test]
    fn planted_copy_gives_energy_at_shift() {
        let g = Volume::from_fn([5, 5, 5], |x, y, z| (x + 2 * y + 3 * z) as f64 * 0.1 + 0.3).unwrap();
        let mut f = Volume::zeros([12, 10, 11]);
        f.add_at([4, 3, 5], &g).unwrap();
        let out = Correlator::new(&f).correlate(&g).unwrap();
        let energy: f64 = g.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let (imax, vmax) = out
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(f.position(imax), [6, 5, 7]);
        assert!((vmax - energy).abs() < 1e-9 * energy);
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let f = Volume::zeros([4, 4, 4]);
        let g = Volume::zeros([5, 3, 3]);
        assert!(matches!(cross_correlate_fft(&f, &g), Err(Error::Shape(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn fft_equals_brute_force(
            nx in 1usize..=16, ny in 1usize..=16, nz in 1usize..=16,
            gx in 1usize..=7, gy in 1usize..=7, gz in 1usize..=7,
            seed in any::<u64>(),
        ) {
            let g_dims = [gx.min(nx), gy.min(ny), gz.min(nz)];
            let mut s = seed | 1;
            let mut next = move || {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let f = Volume::from_fn([nx, ny, nz], |_, _, _| next()).unwrap();
            let g = Volume::from_fn(g_dims, |_, _, _| next()).unwrap();
            let fast = Correlator::new(&f).correlate(&g).unwrap();
            prop_assert!(rel_err(&fast, &brute_force(&f, &g)) < 1e-5);
        }
    }
}
