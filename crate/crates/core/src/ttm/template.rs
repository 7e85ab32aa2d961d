use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::so3::{rotate_into, sample_so3_uniform, Generator, RotationSet};
use crate::symtensor::{monomials, N_COMPONENTS};
use crate::volume::{normalize_template, SoftMask, Volume};

/// Version of the component ordering written to template metadata.
pub const INDEX_TABLE_VERSION: u32 = 1;
pub const MIN_INTEGRATION_SAMPLES: usize = 5000;
pub const DEFAULT_INTEGRATION_SAMPLES: usize = 50_000;

/// Rotations accumulated per work unit. Fixed so that the summation order,
/// and therefore the result, does not depend on the thread count.
const CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateMeta {
    /// SHA-256 of the source template (dims, then little-endian samples).
    pub template_sha256: String,
    pub size: usize,
    pub n_integration: usize,
    pub r_in: f64,
    pub r_out: f64,
    pub generator: Generator,
    pub voxel_size: f32,
    pub index_table_version: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorialTemplate {
    comps: Vec<Volume>,
    normalized: Volume,
    meta: TemplateMeta,
}

impl TensorialTemplate {
    /// Assembles a template from stored parts, checking counts and shapes.
    pub fn from_parts(comps: Vec<Volume>, normalized: Volume, meta: TemplateMeta) -> Result<Self> {
        if comps.len() != N_COMPONENTS {
            return Err(Error::Integrity(format!(
                "expected {N_COMPONENTS} components, found {}",
                comps.len()
            )));
        }
        let dims = [meta.size; 3];
        if let Some((i, c)) = comps.iter().enumerate().find(|(_, c)| c.dims() != dims) {
            return Err(Error::Integrity(format!(
                "component {i} has dims {:?}, expected {dims:?}",
                c.dims()
            )));
        }
        if normalized.dims() != dims {
            return Err(Error::Integrity(format!(
                "normalized template has dims {:?}, expected {dims:?}",
                normalized.dims()
            )));
        }
        Ok(Self {
            comps,
            normalized,
            meta,
        })
    }

    pub fn comps(&self) -> &[Volume] {
        &self.comps
    }

    /// The zero-mean, unit-scale template the components integrate.
    pub fn normalized(&self) -> &Volume {
        &self.normalized
    }

    pub fn meta(&self) -> &TemplateMeta {
        &self.meta
    }

    pub fn size(&self) -> usize {
        self.meta.size
    }
}

pub fn template_hash(t: &Volume) -> String {
    let mut h = Sha256::new();
    for d in t.dims() {
        h.update((d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Integrates the normalized template over `n` super-Fibonacci rotations.
pub fn build_tensorial_template(t: &Volume, m: &SoftMask, n: usize) -> Result<TensorialTemplate> {
    if n < MIN_INTEGRATION_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: n,
            min: MIN_INTEGRATION_SAMPLES,
        });
    }
    build_tensorial_template_from_set(t, m, &sample_so3_uniform(n)?)
}

/// As [`build_tensorial_template`] over an explicit rotation set, with no
/// lower bound on its size.
pub fn build_tensorial_template_from_set(
    t: &Volume,
    m: &SoftMask,
    rotations: &RotationSet,
) -> Result<TensorialTemplate> {
    let norm = normalize_template(t, m)?;
    let tn = norm.volume;
    let vox = tn.len();
    let quats = rotations.as_slice();
    let partials: Vec<Vec<f64>> = quats
        .par_chunks(CHUNK)
        .map(|chunk| {
            // voxel-major: acc[v * 35 + i]
            let mut acc = vec![0.0f64; vox * N_COMPONENTS];
            let mut rot = vec![0.0f64; vox];
            for q in chunk {
                rotate_into(&tn, q, &mut rot);
                let k = monomials(q.to_array());
                for (v, &r) in rot.iter().enumerate() {
                    if r == 0.0 {
                        continue;
                    }
                    let dst = &mut acc[v * N_COMPONENTS..(v + 1) * N_COMPONENTS];
                    for (d, ki) in dst.iter_mut().zip(&k) {
                        *d += ki * r;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0f64; vox * N_COMPONENTS];
    for p in &partials {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    let scale = 1.0 / quats.len() as f64;
    let comps = (0..N_COMPONENTS)
        .map(|i| {
            let data: Vec<f64> = (0..vox).map(|v| total[v * N_COMPONENTS + i] * scale).collect();
            Volume::from_f64(tn.dims(), &data).with_meta_of(t)
        })
        .collect();
    let meta = TemplateMeta {
        template_sha256: template_hash(t),
        size: t.dims()[0],
        n_integration: quats.len(),
        r_in: m.r_in(),
        r_out: m.r_out(),
        generator: rotations.generator(),
        voxel_size: t.voxel_size(),
        index_table_version: INDEX_TABLE_VERSION,
    };
    TensorialTemplate::from_parts(comps, tn, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::make_soft_mask;

    #[test]
    fn guard_on_sample_count() {
        let t = Volume::from_fn([9; 3], |x, _, _| x as f64).unwrap();
        let m = make_soft_mask([9; 3], 2.0, 4.0).unwrap();
        assert!(matches!(
            build_tensorial_template(&t, &m, 100),
            Err(Error::InsufficientSamples { got: 100, .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Volume::from_fn([5; 3], |x, y, z| (x + y * z) as f64).unwrap();
        let b = a.map(|v| v + 1.0).unwrap();
        assert_eq!(template_hash(&a), template_hash(&a.clone()));
        assert_ne!(template_hash(&a), template_hash(&b));
        assert_eq!(template_hash(&a).len(), 64);
    }

    #[test]
    fn chunked_sum_matches_serial_sum() {
        let t = Volume::from_fn([7; 3], |x, y, z| {
            let d2 = (x as f64 - 3.5).powi(2) + (y as f64 - 3.0).powi(2) * 2.0 + (z as f64 - 2.5).powi(2);
            (-d2 / 2.0).exp()
        })
        .unwrap();
        let m = make_soft_mask([7; 3], 1.0, 3.0).unwrap();
        let set = sample_so3_uniform(CHUNK + 37).unwrap();
        let tt = build_tensorial_template_from_set(&t, &m, &set).unwrap();
        let tn = normalize_template(&t, &m).unwrap().volume;
        let mut rot = vec![0.0; tn.len()];
        let mut want = vec![0.0f64; tn.len()];
        for q in set.iter() {
            rotate_into(&tn, q, &mut rot);
            let k = monomials(q.to_array())[7];
            for (w, r) in want.iter_mut().zip(&rot) {
                *w += k * r;
            }
        }
        for (g, w) in tt.comps()[7].data().iter().zip(&want) {
            assert!((*g as f64 - w / set.len() as f64).abs() < 1e-6);
        }
        assert_eq!(tt.meta().n_integration, CHUNK + 37);
        assert_eq!(tt.meta().generator, Generator::SuperFibonacci);
    }
}
