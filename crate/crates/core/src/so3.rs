//! Rotations as unit quaternions.
//!
//! Convention used throughout the crate: Hamilton product, scalar first
//! `(w, x, y, z)`, active rotation `v' = q v q*`. A quaternion and its
//! negation are identified; constructors canonicalize to `w >= 0`.

use std::f64::consts::PI;
use std::ops::Mul;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes any finite non-zero 4-vector.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Quaternion(format!(
                "cannot normalize ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(Self::canonical(w / n, x / n, y / n, z / n))
    }

    /// Accepts only vectors whose norm is within `tol` of one.
    pub fn from_unit(w: f64, x: f64, y: f64, z: f64, tol: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > tol {
            return Err(Error::Quaternion(format!(
                "({w}, {x}, {y}, {z}) has norm {n}, not 1"
            )));
        }
        // already unit to rounding: keep the bits so stored values round-trip
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self::canonical(w, x, y, z));
        }
        Self::new(w, x, y, z)
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    /// Rotation by `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<Self> {
        let n = (axis[0].powi(2) + axis[1].powi(2) + axis[2].powi(2)).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Quaternion("zero rotation axis".into()));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let first = [w, x, y, z].into_iter().find(|v| *v != 0.0).unwrap_or(1.0);
        if first < 0.0 {
            Self {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// `[w, x, y, z]`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(&self) -> Self {
        Self::canonical(self.w, -self.x, -self.y, -self.z)
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        quat_to_matrix(self)
    }

    pub fn rotate_vector(&self, v: [f64; 3]) -> [f64; 3] {
        mat_vec(&self.to_matrix(), v)
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    /// Hamilton product; `(a * b)` applies `b` first.
    fn mul(self, b: Self) -> Self {
        let a = self;
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        // renormalize to stop drift in long products
        UnitQuaternion::new(w, x, y, z).expect("product of unit quaternions")
    }
}

pub fn quat_to_matrix(q: &UnitQuaternion) -> [[f64; 3]; 3] {
    let UnitQuaternion { w, x, y, z } = *q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Angle of the relative rotation, `2 acos |q1 . q2|`, in degrees.
///
/// Evaluated as `4 atan2(|a - b|, |a + b|)` after aligning signs, which
/// stays accurate near zero where `acos` does not.
pub fn rot_distance_deg(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let s = if q1.dot(q2) < 0.0 { -1.0 } else { 1.0 };
    let (a, b) = (q1.to_array(), q2.to_array());
    let (mut diff, mut sum) = (0.0, 0.0);
    for i in 0..4 {
        diff += (a[i] - s * b[i]).powi(2);
        sum += (a[i] + s * b[i]).powi(2);
    }
    (4.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees()
}

/// Uniform random rotation from three uniforms (Shoemake's subgroup method).
pub fn random_quaternion<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    UnitQuaternion::new(a * s2, a * c2, b * s3, b * c3).expect("unit by construction")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    SuperFibonacci,
    UniformRandom,
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Generator::SuperFibonacci => "super-fibonacci",
            Generator::UniformRandom => "uniform-random",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RotationSet {
    quats: Vec<UnitQuaternion>,
    generator: Generator,
    seed: Option<u64>,
}

impl RotationSet {
    pub fn from_quaternions(quats: Vec<UnitQuaternion>) -> Result<Self> {
        if quats.is_empty() {
            return Err(Error::EmptyRotationSet);
        }
        Ok(Self {
            quats,
            generator: Generator::UniformRandom,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.quats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quats.is_empty()
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn as_slice(&self) -> &[UnitQuaternion] {
        &self.quats
    }

    pub fn iter(&self) -> std::slice::Iter<'_, UnitQuaternion> {
        self.quats.iter()
    }

    /// `(1/N) sum q q^T`; equals `I/4` for the uniform measure.
    pub fn second_moment(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for q in &self.quats {
            let a = q.to_array();
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += a[i] * a[j];
                }
            }
        }
        let n = self.quats.len() as f64;
        m.iter_mut().flatten().for_each(|v| *v /= n);
        m
    }
}

impl std::ops::Index<usize> for RotationSet {
    type Output = UnitQuaternion;
    fn index(&self, i: usize) -> &UnitQuaternion {
        &self.quats[i]
    }
}

/// Deterministic low-discrepancy set on SO(3): the super-Fibonacci spiral.
pub fn sample_so3_uniform(n: usize) -> Result<RotationSet> {
    if n == 0 {
        return Err(Error::EmptyRotationSet);
    }
    const PHI: f64 = std::f64::consts::SQRT_2;
    // real root of x^4 = x + 4
    const PSI: f64 = 1.533_751_168_755_204_3;
    let quats = (0..n)
        .map(|i| {
            let s = i as f64 + 0.5;
            let t = s / n as f64;
            let (r, rr) = (t.sqrt(), (1.0 - t).sqrt());
            let (sa, ca) = (2.0 * PI * s / PHI).sin_cos();
            let (sb, cb) = (2.0 * PI * s / PSI).sin_cos();
            UnitQuaternion::new(r * sa, r * ca, rr * sb, rr * cb).expect("unit by construction")
        })
        .collect();
    Ok(RotationSet {
        quats,
        generator: Generator::SuperFibonacci,
        seed: None,
    })
}

/// Seeded i.i.d. uniform rotations.
pub fn sample_so3_random(n: usize, seed: u64) -> Result<RotationSet> {
    if n == 0 {
        return Err(Error::EmptyRotationSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quats = (0..n).map(|_| random_quaternion(&mut rng)).collect();
    Ok(RotationSet {
        quats,
        generator: Generator::UniformRandom,
        seed: Some(seed),
    })
}

/// The 24 proper rotations of the cube.
pub fn octahedral_group() -> Vec<UnitQuaternion> {
    let mut out = vec![UnitQuaternion::IDENTITY];
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for a in axes {
        for k in 1..4 {
            out.push(UnitQuaternion::from_axis_angle(a, k as f64 * PI / 2.0).unwrap());
        }
    }
    let face_diagonals = [
        [1.0, 1.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, -1.0],
    ];
    for a in face_diagonals {
        out.push(UnitQuaternion::from_axis_angle(a, PI).unwrap());
    }
    let body_diagonals = [
        [1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0],
        [1.0, -1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ];
    for a in body_diagonals {
        for k in 1..3 {
            out.push(UnitQuaternion::from_axis_angle(a, k as f64 * 2.0 * PI / 3.0).unwrap());
        }
    }
    out
}

/// Rotates an odd cubic volume about its center voxel. Output voxel `p`
/// samples the input at `R^T (p - c) + c` with trilinear interpolation;
/// samples outside the input read as zero.
pub fn rotate_volume(t: &Volume, q: &UnitQuaternion) -> Result<Volume> {
    if !t.is_odd_cube() {
        return Err(Error::Geometry(format!(
            "rotation needs an odd cube, got {:?}",
            t.dims()
        )));
    }
    let mut out = vec![0.0f64; t.len()];
    rotate_into(t, q, &mut out);
    Ok(Volume::from_f64(t.dims(), &out).with_meta_of(t))
}

/// Like [`rotate_volume`] but writes `f64` samples into `out`; no geometry
/// check.
pub(crate) fn rotate_into(t: &Volume, q: &UnitQuaternion, out: &mut [f64]) {
    let n = t.dims()[0];
    let c = (n / 2) as f64;
    let r = q.to_matrix();
    let data = t.data();
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let mut i = 0;
    for z in 0..n {
        let pz = z as f64 - c;
        for y in 0..n {
            let py = y as f64 - c;
            for x in 0..n {
                let px = x as f64 - c;
                // R^T p
                let sx = snap(r[0][0] * px + r[1][0] * py + r[2][0] * pz + c);
                let sy = snap(r[0][1] * px + r[1][1] * py + r[2][1] * pz + c);
                let sz = snap(r[0][2] * px + r[1][2] * py + r[2][2] * pz + c);
                out[i] = trilinear(data, n, sx, sy, sz);
                i += 1;
            }
        }
    }
}

#[inline]
fn trilinear(data: &[f32], n: usize, sx: f64, sy: f64, sz: f64) -> f64 {
    let lim = n as f64;
    if sx <= -1.0 || sy <= -1.0 || sz <= -1.0 || sx >= lim || sy >= lim || sz >= lim {
        return 0.0;
    }
    let (fx, fy, fz) = (sx.floor(), sy.floor(), sz.floor());
    let (dx, dy, dz) = (sx - fx, sy - fy, sz - fz);
    let (ix, iy, iz) = (fx as isize, fy as isize, fz as isize);
    let ni = n as isize;
    let at = |x: isize, y: isize, z: isize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= ni || y >= ni || z >= ni {
            0.0
        } else {
            data[(x + ni * (y + ni * z)) as usize] as f64
        }
    };
    let c00 = at(ix, iy, iz) * (1.0 - dx) + at(ix + 1, iy, iz) * dx;
    let c10 = at(ix, iy + 1, iz) * (1.0 - dx) + at(ix + 1, iy + 1, iz) * dx;
    let c01 = at(ix, iy, iz + 1) * (1.0 - dx) + at(ix + 1, iy, iz + 1) * dx;
    let c11 = at(ix, iy + 1, iz + 1) * (1.0 - dx) + at(ix + 1, iy + 1, iz + 1) * dx;
    let c0 = c00 * (1.0 - dy) + c10 * dy;
    let c1 = c01 * (1.0 - dy) + c11 * dy;
    c0 * (1.0 - dz) + c1 * dz
}
