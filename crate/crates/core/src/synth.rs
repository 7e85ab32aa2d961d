//! Synthetic templates, grid tomograms with known poses, and noise.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{random_quaternion, rotate_volume, UnitQuaternion};
use crate::ttm::template_hash;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TemplateKind {
    Cylinder { radius: f64, height: f64, edge: f64 },
    LShape,
}

fn check_size(size: usize) -> Result<()> {
    if size % 2 == 0 || size < 5 {
        return Err(Error::Geometry(format!(
            "template size must be odd and at least 5, got {size}"
        )));
    }
    Ok(())
}

pub fn gen_template(kind: &TemplateKind, size: usize) -> Result<Volume> {
    match *kind {
        TemplateKind::Cylinder {
            radius,
            height,
            edge,
        } => gen_cylinder(size, radius, height, edge),
        TemplateKind::LShape => gen_l_shape(size),
    }
}

/// Cylinder along z through the center. Intensity falls from 1 to 0 over
/// `edge` voxels inside the side and end faces along a raised cosine, so
/// the support is exactly the cylinder.
pub fn gen_cylinder(size: usize, radius: f64, height: f64, edge: f64) -> Result<Volume> {
    check_size(size)?;
    let half = (size / 2) as f64;
    if !(radius > 0.0 && height > 0.0) || (radius * radius + height * height / 4.0).sqrt() > half {
        return Err(Error::Geometry(format!(
            "cylinder r={radius}, h={height} does not fit a sphere of radius {half}"
        )));
    }
    if !(edge > 0.0) {
        return Err(Error::Geometry(format!("edge width must be positive, got {edge}")));
    }
    let ramp = |d: f64| 0.5 - 0.5 * (std::f64::consts::PI * (d / edge).clamp(0.0, 1.0)).cos();
    let c = half;
    Volume::from_fn([size; 3], |x, y, z| {
        let (dx, dy, dz) = (x as f64 - c, y as f64 - c, z as f64 - c);
        let rho = (dx * dx + dy * dy).sqrt();
        ramp(radius - rho) * ramp(height / 2.0 - dz.abs())
    })
}

/// Two orthogonal boxes of unequal length and thickness sharing a corner.
/// Inclusive integer bounds are given relative to the center for size 17
/// and scaled for other sizes; faces sit at half intensity.
pub fn gen_l_shape(size: usize) -> Result<Volume> {
    check_size(size)?;
    let s = (size / 2) as f64 / 8.0;
    let arms: [([f64; 3], [f64; 3]); 2] = [
        ([-4.0, -4.0, -2.0], [6.0, -1.0, 2.0]),
        ([-4.0, -4.0, -2.0], [-1.0, 4.0, 1.0]),
    ];
    let arms = arms.map(|(lo, hi)| (lo.map(|v| (v * s).round()), hi.map(|v| (v * s).round())));
    let c = (size / 2) as f64;
    Volume::from_fn([size; 3], |x, y, z| {
        let p = [x as f64 - c, y as f64 - c, z as f64 - c];
        arms.iter()
            .map(|(lo, hi)| {
                (0..3)
                    .map(|a| ((p[a] - lo[a]).min(hi[a] - p[a]) + 0.5).clamp(0.0, 1.0))
                    .product::<f64>()
            })
            .fold(0.0, f64::max)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid: [usize; 3],
    pub spacing: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Instance {
    pub pos: [usize; 3],
    pub q: UnitQuaternion,
    pub instance_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub instances: Vec<Instance>,
    pub template_sha256: String,
    pub grid: GridSpec,
    pub seed: Option<u64>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Tomogram dims and instance centers for a grid layout; instance `i`
/// enumerates nodes with x fastest.
pub fn grid_layout(size: usize, spec: &GridSpec) -> Result<([usize; 3], Vec<[usize; 3]>)> {
    if spec.grid.contains(&0) {
        return Err(Error::Layout("grid dims must be at least 1".into()));
    }
    if spec.spacing < size {
        return Err(Error::Layout(format!(
            "spacing {} is smaller than the template size {size}; instances would overlap",
            spec.spacing
        )));
    }
    let r = size / 2;
    let dims = spec.grid.map(|g| (g - 1) * spec.spacing + size + 2 * r);
    let mut centers = Vec::new();
    for k in 0..spec.grid[2] {
        for j in 0..spec.grid[1] {
            for i in 0..spec.grid[0] {
                centers.push([2 * r + i * spec.spacing, 2 * r + j * spec.spacing, 2 * r + k * spec.spacing]);
            }
        }
    }
    Ok((dims, centers))
}

/// Grid of randomly rotated copies drawn from a seeded uniform generator.
pub fn gen_grid_tomogram(t: &Volume, spec: &GridSpec, seed: u64) -> Result<(Volume, GroundTruth)> {
    let n: usize = spec.grid.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poses: Vec<UnitQuaternion> = (0..n).map(|_| random_quaternion(&mut rng)).collect();
    let (v, mut gt) = gen_grid_tomogram_with_poses(t, spec, &poses)?;
    gt.seed = Some(seed);
    Ok((v, gt))
}

/// Grid with caller-chosen poses, one per node.
pub fn gen_grid_tomogram_with_poses(
    t: &Volume,
    spec: &GridSpec,
    poses: &[UnitQuaternion],
) -> Result<(Volume, GroundTruth)> {
    if !t.is_odd_cube() {
        return Err(Error::Geometry(format!(
            "template must be an odd cube, got {:?}",
            t.dims()
        )));
    }
    let size = t.dims()[0];
    let (dims, centers) = grid_layout(size, spec)?;
    if poses.len() != centers.len() {
        return Err(Error::Layout(format!(
            "{} poses for {} grid nodes",
            poses.len(),
            centers.len()
        )));
    }
    let mut vol = Volume::zeros(dims).with_voxel_size(t.voxel_size());
    let r = size / 2;
    let mut instances = Vec::with_capacity(centers.len());
    for (id, (c, q)) in centers.iter().zip(poses).enumerate() {
        let rotated = rotate_volume(t, q)?;
        vol.add_at(c.map(|v| v - r), &rotated)?;
        instances.push(Instance {
            pos: *c,
            q: *q,
            instance_id: id,
        });
    }
    Ok((
        vol,
        GroundTruth {
            instances,
            template_sha256: template_hash(t),
            grid: *spec,
            seed: None,
        },
    ))
}

/// Population variance over every voxel.
pub fn variance(f: &Volume) -> f64 {
    let n = f.len() as f64;
    let mean = f.sum() / n;
    f.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Adds white Gaussian noise of variance `var(f) / snr`.
pub fn add_noise(f: &Volume, snr: f64, seed: u64) -> Result<Volume> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::Config(format!("snr must be positive and finite, got {snr}")));
    }
    let var = variance(f);
    if var <= 0.0 {
        return Err(Error::DegenerateSignal("input has zero variance".into()));
    }
    let normal = Normal::new(0.0, (var / snr).sqrt()).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = f
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
        .collect();
    Ok(Volume::new(f.dims(), data)?.with_meta_of(f))
}
