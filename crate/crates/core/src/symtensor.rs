//! Degree-4 symmetric tensors over R^4 and their dominant eigenpair.
//!
//! A tensor is stored as its 35 independent components, one per sorted
//! multi-index `i <= j <= k <= l`, in lexicographic order. That ordering
//! ([`TABLE`]) is shared by every module that stores 35-component data.

use std::ops::{Add, Mul};

use nalgebra::{SMatrix, SymmetricEigen};

use crate::so3::{sample_so3_uniform, UnitQuaternion};

pub const N_COMPONENTS: usize = 35;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Component {
    pub index: [usize; 4],
    /// Number of distinct orderings of `index`, `4! / prod(count!)`.
    pub multiplicity: u32,
    /// How often each axis occurs in `index`.
    pub counts: [u32; 4],
}

const fn build_table() -> [Component; N_COMPONENTS] {
    let mut out = [Component {
        index: [0; 4],
        multiplicity: 0,
        counts: [0; 4],
    }; N_COMPONENTS];
    let fact = [1u32, 1, 2, 6, 24];
    let mut n = 0;
    let mut i = 0;
    while i < 4 {
        let mut j = i;
        while j < 4 {
            let mut k = j;
            while k < 4 {
                let mut l = k;
                while l < 4 {
                    let mut counts = [0u32; 4];
                    counts[i] += 1;
                    counts[j] += 1;
                    counts[k] += 1;
                    counts[l] += 1;
                    let denom = fact[counts[0] as usize]
                        * fact[counts[1] as usize]
                        * fact[counts[2] as usize]
                        * fact[counts[3] as usize];
                    out[n] = Component {
                        index: [i, j, k, l],
                        multiplicity: 24 / denom,
                        counts,
                    };
                    n += 1;
                    l += 1;
                }
                k += 1;
            }
            j += 1;
        }
        i += 1;
    }
    out
}

/// Canonical component table.
pub static TABLE: [Component; N_COMPONENTS] = build_table();

/// Position of an arbitrary (unsorted) multi-index in [`TABLE`].
pub fn component_position(mut idx: [usize; 4]) -> usize {
    idx.sort_unstable();
    TABLE
        .iter()
        .position(|c| c.index == idx)
        .expect("indices must lie in 0..4")
}

/// The 35 monomials `q_i q_j q_k q_l` in table order.
pub fn monomials(q: [f64; 4]) -> [f64; N_COMPONENTS] {
    std::array::from_fn(|n| {
        let [i, j, k, l] = TABLE[n].index;
        q[i] * q[j] * q[k] * q[l]
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor4 {
    comps: [f64; N_COMPONENTS],
}

impl SymTensor4 {
    pub const ZERO: Self = Self {
        comps: [0.0; N_COMPONENTS],
    };

    pub fn from_comps(comps: [f64; N_COMPONENTS]) -> Self {
        Self { comps }
    }

    pub fn comps(&self) -> &[f64; N_COMPONENTS] {
        &self.comps
    }

    /// Component for any ordering of the multi-index.
    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.comps[component_position(idx)]
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|&v| v == 0.0)
    }
}

impl Add for SymTensor4 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::from_comps(std::array::from_fn(|i| self.comps[i] + o.comps[i]))
    }
}

impl Mul<f64> for SymTensor4 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::from_comps(self.comps.map(|v| v * s))
    }
}

/// `q ⊙ q ⊙ q ⊙ q`.
pub fn sym_power4(q: &UnitQuaternion) -> SymTensor4 {
    SymTensor4::from_comps(monomials(q.to_array()))
}

/// Full contraction `T(q, q, q, q)`.
pub fn contract(t: &SymTensor4, q: &UnitQuaternion) -> f64 {
    contract_raw(t, q.to_array())
}

fn contract_raw(t: &SymTensor4, q: [f64; 4]) -> f64 {
    let m = monomials(q);
    TABLE
        .iter()
        .zip(&t.comps)
        .zip(&m)
        .map(|((c, v), p)| c.multiplicity as f64 * v * p)
        .sum()
}

pub fn frobenius(t: &SymTensor4) -> f64 {
    TABLE
        .iter()
        .zip(&t.comps)
        .map(|(c, v)| c.multiplicity as f64 * v * v)
        .sum::<f64>()
        .sqrt()
}

/// `(T q^3)_a = sum_{jkl} T[a,j,k,l] q_j q_k q_l`, a quarter of the gradient
/// of [`contract`].
pub fn gradient(t: &SymTensor4, q: [f64; 4]) -> [f64; 4] {
    let mut g = [0.0; 4];
    for (c, &v) in TABLE.iter().zip(&t.comps) {
        if v == 0.0 {
            continue;
        }
        let w = c.multiplicity as f64 * v;
        let [i, j, k, l] = c.index;
        let idx = [i, j, k, l];
        for a in 0..4 {
            if c.counts[a] == 0 {
                continue;
            }
            // product of the remaining three factors after removing one `a`
            let skip = idx.iter().position(|&x| x == a).unwrap();
            let rest: f64 = (0..4).filter(|&p| p != skip).map(|p| q[idx[p]]).product();
            g[a] += w * c.counts[a] as f64 * rest;
        }
    }
    g.map(|v| v / 4.0)
}

pub type Matrix16 = SMatrix<f64, 16, 16>;

/// Square unfolding `M[(i,j),(k,l)] = T[i,j,k,l]` with row `4i + j` and
/// column `4k + l`.
pub fn unfold_square(t: &SymTensor4) -> Matrix16 {
    Matrix16::from_fn(|r, c| t.get([r / 4, r % 4, c / 4, c % 4]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenConfig {
    pub n_random_inits: usize,
    /// Stop once `|λ_{k+1} - λ_k|` falls to this value.
    pub tol: f64,
    pub max_iters: usize,
    /// Added to the shift computed from the unfolding spectrum.
    pub shift_eps: f64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            n_random_inits: 1000,
            tol: 1e-10,
            max_iters: 500,
            shift_eps: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub q: UnitQuaternion,
    pub iterations: usize,
    pub converged: bool,
    /// Every iterate sequence that was run had non-decreasing `λ`.
    pub monotone: bool,
}

/// Shift that makes `x -> T(x,x,x,x) + α |x|^4` convex on R^4.
///
/// `T(u,u,x,x) = (u⊗x)^T M (u⊗x) >= λ_min(M) |u|^2 |x|^2`, so the Hessian
/// `12 T(·,·,x,x) + α(4|x|^2 I + 8 x x^T)` is PSD once `α >= -3 λ_min(M)`.
pub fn ss_hopm_shift(t: &SymTensor4, eps: f64) -> f64 {
    let eig = SymmetricEigen::new(unfold_square(t));
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    3.0 * (-lmin).max(0.0) + eps
}

/// Start from the unfolding: its top eigenvector reshaped to a symmetric 4×4
/// matrix, whose dominant eigenvector is the quaternion.
pub fn unfolding_start(t: &SymTensor4) -> Option<UnitQuaternion> {
    let eig = SymmetricEigen::new(unfold_square(t));
    let top = (0..16).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))?;
    let v = eig.eigenvectors.column(top);
    let m = SMatrix::<f64, 4, 4>::from_fn(|i, j| 0.5 * (v[4 * i + j] + v[4 * j + i]));
    let inner = SymmetricEigen::new(m);
    let dom = (0..4).max_by(|&a, &b| {
        inner.eigenvalues[a]
            .abs()
            .total_cmp(&inner.eigenvalues[b].abs())
    })?;
    let u = inner.eigenvectors.column(dom);
    UnitQuaternion::new(u[0], u[1], u[2], u[3]).ok()
}

pub fn dominant_eigenpair(t: &SymTensor4, n_random_inits: usize) -> EigenPair {
    dominant_eigenpair_with(
        t,
        &EigenConfig {
            n_random_inits,
            ..EigenConfig::default()
        },
    )
}

/// Shifted symmetric higher-order power method from the unfolding start
/// and `n_random_inits` evenly spread starts; the largest final `λ` wins,
/// earlier candidates winning ties.
pub fn dominant_eigenpair_with(t: &SymTensor4, cfg: &EigenConfig) -> EigenPair {
    if t.is_zero() {
        return EigenPair {
            lambda: 0.0,
            q: UnitQuaternion::IDENTITY,
            iterations: 1,
            converged: true,
            monotone: true,
        };
    }
    let alpha = ss_hopm_shift(t, cfg.shift_eps);
    let mut starts: Vec<UnitQuaternion> = unfolding_start(t).into_iter().collect();
    if cfg.n_random_inits > 0 {
        starts.extend(sample_so3_uniform(cfg.n_random_inits).unwrap().iter());
    }
    if starts.is_empty() {
        starts.push(UnitQuaternion::IDENTITY);
    }
    let mut best: Option<EigenPair> = None;
    let mut monotone = true;
    for s in starts {
        let run = ss_hopm(t, s, alpha, cfg);
        monotone &= run.monotone;
        if best.is_none_or(|b| run.lambda > b.lambda) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    best.monotone = monotone;
    best
}

/// Runs the shifted power iteration from one start.
pub fn ss_hopm(t: &SymTensor4, start: UnitQuaternion, alpha: f64, cfg: &EigenConfig) -> EigenPair {
    let mut q = start.to_array();
    let mut lambda = contract_raw(t, q);
    let mut monotone = true;
    let slack = 1e-12 * frobenius(t).max(1.0);
    for it in 1..=cfg.max_iters {
        let g = gradient(t, q);
        let mut next = [0.0; 4];
        for a in 0..4 {
            next[a] = g[a] + alpha * q[a];
        }
        let n = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= n);
        let l = contract_raw(t, next);
        if l < lambda - slack {
            monotone = false;
        }
        let done = (l - lambda).abs() <= cfg.tol;
        q = next;
        lambda = l;
        if done {
            return finish(lambda, q, it, true, monotone);
        }
    }
    finish(lambda, q, cfg.max_iters, false, monotone)
}

fn finish(lambda: f64, q: [f64; 4], iterations: usize, converged: bool, monotone: bool) -> EigenPair {
    EigenPair {
        lambda,
        q: UnitQuaternion::new(q[0], q[1], q[2], q[3]).expect("normalized iterate"),
        iterations,
        converged,
        monotone,
    }
}
