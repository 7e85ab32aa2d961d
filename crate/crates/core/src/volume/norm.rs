use super::fft::Correlator;
use super::filter::smooth_f64_in_place;
use super::{Dims, SoftMask, Volume};
use crate::error::{Error, Result};

/// Local radicands at or below `FLAT_VARIANCE_FACTOR * max|f|^2` are flat.
pub const FLAT_VARIANCE_FACTOR: f64 = 1e-8;

/// Zero-mean, unit-scale template `t'` plus the scalars that produced it.
#[derive(Clone, Debug)]
pub struct NormalizedTemplate {
    pub volume: Volume,
    /// Mask-weighted mean of `S(t)`.
    pub mean: f64,
    /// Denominator `sqrt(<S(t)^2,1> - <S(t),1>^2 / M)`.
    pub scale: f64,
}

pub fn normalize_template(t: &Volume, m: &SoftMask) -> Result<NormalizedTemplate> {
    if !t.is_odd_cube() {
        return Err(Error::Geometry(format!(
            "template must be an odd cube, got {:?}",
            t.dims()
        )));
    }
    let mv = m.volume();
    if mv.dims() != t.dims() {
        return Err(Error::Shape(format!(
            "template dims {:?} differ from mask dims {:?}",
            t.dims(),
            mv.dims()
        )));
    }
    let mut s = t.to_f64();
    smooth_f64_in_place(&mut s, t.dims());
    let weights = mv.to_f64();
    for (v, w) in s.iter_mut().zip(&weights) {
        *v *= w;
    }
    let big_m = m.sum();
    let sum_s: f64 = s.iter().sum();
    let sum_s2: f64 = s.iter().map(|v| v * v).sum();
    let sum_sm: f64 = s.iter().zip(&weights).map(|(v, w)| v * w).sum();
    let mean = sum_sm / big_m;
    let radicand = sum_s2 - sum_s * sum_s / big_m;
    if !(radicand > 1e-12 * sum_s2) || radicand <= 0.0 {
        return Err(Error::DegenerateTemplate(format!(
            "masked variance term is {radicand:e}"
        )));
    }
    let scale = radicand.sqrt();
    let out: Vec<f64> = s
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * (v - mean) / scale)
        .collect();
    Ok(NormalizedTemplate {
        volume: Volume::from_f64(t.dims(), &out).with_meta_of(t),
        mean,
        scale,
    })
}

pub fn flat_floor(max_abs: f64) -> f64 {
    FLAT_VARIANCE_FACTOR * max_abs * max_abs
}

/// Local normalization `w` of an image.
pub fn local_norm_field(f: &Volume, m: &SoftMask) -> Result<Volume> {
    check_fits(f.dims(), m)?;
    let mut sf = f.to_f64();
    smooth_f64_in_place(&mut sf, f.dims());
    let corr = Correlator::from_f64(f.dims(), &sf);
    let w = norm_weights(&corr, &sf, m, flat_floor(f.max_abs()))?;
    Ok(Volume::from_f64(f.dims(), &w).with_meta_of(f))
}

/// Same as [`local_norm_field`] for an already smoothed image with an
/// explicit flat floor.
pub fn local_norm_field_from_smoothed(
    sf: &Volume,
    m: &SoftMask,
    floor: f64,
) -> Result<Volume> {
    check_fits(sf.dims(), m)?;
    let data = sf.to_f64();
    let corr = Correlator::from_f64(sf.dims(), &data);
    let w = norm_weights(&corr, &data, m, floor)?;
    Ok(Volume::from_f64(sf.dims(), &w).with_meta_of(sf))
}

fn check_fits(dims: Dims, m: &SoftMask) -> Result<()> {
    let md = m.volume().dims();
    if (0..3).any(|a| md[a] > dims[a]) {
        return Err(Error::Shape(format!(
            "mask {md:?} larger than image {dims:?}"
        )));
    }
    Ok(())
}

/// `w = 1/sqrt(A - B^2/M)` with `B = sf ⋆ m` and `A = sf^2 ⋆ m`; zero where
/// the radicand is at or below `floor`.
pub(crate) fn norm_weights(
    corr_sf: &Correlator,
    sf: &[f64],
    m: &SoftMask,
    floor: f64,
) -> Result<Vec<f64>> {
    let b = corr_sf.correlate(m.volume())?;
    let sq: Vec<f64> = sf.iter().map(|v| v * v).collect();
    let a = Correlator::from_f64(corr_sf.dims(), &sq).correlate(m.volume())?;
    let big_m = m.sum();
    Ok(a
        .iter()
        .zip(&b)
        .map(|(a, b)| {
            let r = a - b * b / big_m;
            if r > floor {
                1.0 / r.sqrt()
            } else {
                0.0
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::make_soft_mask;

    fn blob(size: usize) -> Volume {
        let c = (size / 2) as f64;
        Volume::from_fn([size; 3], |x, y, z| {
            let dx = x as f64 - c - 1.0;
            let dy = y as f64 - c + 0.5;
            let dz = z as f64 - c;
            (-(dx * dx + 2.0 * dy * dy + 0.5 * dz * dz) / 6.0).exp() + 0.1 * (x as f64 / 4.0).sin()
        })
        .unwrap()
    }

    fn pseudo_noise(dims: Dims, seed: u64) -> Volume {
        let mut s = seed | 1;
        Volume::from_fn(dims, |_, _, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .unwrap()
    }

    #[test]
    fn flat_template_is_degenerate() {
        let m = make_soft_mask([9; 3], 2.0, 4.0).unwrap();
        let t = Volume::new([9; 3], vec![2.0; 729]).unwrap();
        assert!(matches!(
            normalize_template(&t, &m),
            Err(Error::DegenerateTemplate(_))
        ));
    }

    #[test]
    fn scale_reproduces_from_ingredients() {
        let m = make_soft_mask([11; 3], 3.0, 5.0).unwrap();
        let t = blob(11);
        let n = normalize_template(&t, &m).unwrap();
        // recompute S(t) independently
        let mut s = t.to_f64();
        smooth_f64_in_place(&mut s, t.dims());
        let w = m.volume().to_f64();
        let s: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a * b).collect();
        let big_m: f64 = w.iter().sum();
        let s1: f64 = s.iter().sum();
        let s2: f64 = s.iter().map(|v| v * v).sum();
        let scale = (s2 - s1 * s1 / big_m).sqrt();
        assert!(((n.scale - scale) / scale).abs() < 1e-10);
        // masked mean vanishes
        let max = n.volume.max_abs();
        let mean = n.volume.sum() / big_m;
        assert!(mean.abs() < 1e-8 * max, "mean {mean}, max {max}");
    }

    #[test]
    fn gain_invariance() {
        let m = make_soft_mask([11; 3], 3.0, 5.0).unwrap();
        let t = blob(11);
        let a = normalize_template(&t, &m).unwrap();
        let b = normalize_template(&t.map(|v| 2.0 * v).unwrap(), &m).unwrap();
        for (x, y) in a.volume.data().iter().zip(b.volume.data()) {
            assert!((x - y).abs() as f64 <= 1e-10 * a.volume.max_abs());
        }
        let c = normalize_template(&t.map(|v| 3.7 * v).unwrap(), &m).unwrap();
        for (x, y) in a.volume.data().iter().zip(c.volume.data()) {
            assert!((x - y).abs() as f64 <= 1e-6 * a.volume.max_abs());
        }
    }

    #[test]
    fn shape_errors() {
        let m = make_soft_mask([9; 3], 2.0, 4.0).unwrap();
        assert!(matches!(
            normalize_template(&Volume::zeros([10; 3]), &m),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            normalize_template(&Volume::zeros([11; 3]), &m),
            Err(Error::Shape(_))
        ));
        assert!(local_norm_field(&Volume::zeros([8, 9, 9]), &m).is_err());
    }

    #[test]
    fn constant_image_is_flat() {
        let m = make_soft_mask([7; 3], 1.0, 3.0).unwrap();
        let f = Volume::new([16; 3], vec![4.0; 16 * 16 * 16]).unwrap();
        let w = local_norm_field(&f, &m).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_gives_positive_weights() {
        let m = make_soft_mask([7; 3], 1.0, 3.0).unwrap();
        let f = pseudo_noise([24; 3], 7);
        let w = local_norm_field(&f, &m).unwrap();
        let positive = w.data().iter().filter(|&&v| v > 0.0).count();
        assert_eq!(positive, w.len());
    }

    #[test]
    fn homogeneity_and_offset_invariance() {
        let m = make_soft_mask([7; 3], 1.0, 3.0).unwrap();
        let f = pseudo_noise([20; 3], 11);
        let w = local_norm_field(&f, &m).unwrap();
        let w2 = local_norm_field(&f.map(|v| 2.0 * v).unwrap(), &m).unwrap();
        for (a, b) in w.data().iter().zip(w2.data()) {
            assert!(((*a as f64) - 2.0 * *b as f64).abs() <= 1e-8 * *a as f64);
        }
        let shifted = local_norm_field(&f.map(|v| v + 0.75).unwrap(), &m).unwrap();
        for (a, b) in w.data().iter().zip(shifted.data()) {
            assert!(((a - b) as f64).abs() <= 1e-6 * *a as f64 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn weights_match_direct_window_sums() {
        let m = make_soft_mask([5; 3], 1.0, 2.0).unwrap();
        let f = pseudo_noise([9, 10, 11], 3);
        let w = local_norm_field(&f, &m).unwrap();
        let mut sf = f.to_f64();
        smooth_f64_in_place(&mut sf, f.dims());
        let p = [4usize, 5, 6];
        let (mut a, mut b) = (0.0, 0.0);
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    let q = f.index(p[0] + i - 2, p[1] + j - 2, p[2] + k - 2);
                    let mw = m.volume().get(i, j, k) as f64;
                    a += mw * sf[q] * sf[q];
                    b += mw * sf[q];
                }
            }
        }
        let want = 1.0 / (a - b * b / m.sum()).sqrt();
        let got = w.at(p) as f64;
        assert!((got - want).abs() < 1e-5 * want);
    }
}
