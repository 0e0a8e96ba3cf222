//! One-dimensional building blocks: nested Chebyshev-Gauss-Lobatto grids,
//! the hierarchical (transformed) Chebyshev basis and Gauss-Hermite rules.
//!
//! Hierarchical numbering: the level-1 points `{1, 0, -1}` carry indices
//! `{0, 1, 2}`; level `j >= 2` appends its `2^(j-1)` new points
//! `cos(m pi / 2^j)`, `m` odd, in order of increasing angle, as indices
//! `2^(j-1)+1 ..= 2^j`. Basis index `k` is tied to Chebyshev degree `k`:
//! `T̃_k = T_k` on level 1 and `T̃_k = T_k - T_{2^j - k}` for `k` new at level
//! `j`, which vanishes on every point of level `j - 1`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::index::{level_of, level_size, new_indices, MAX_LEVEL};

/// Canonical `cos(num * pi / 2^level)`.
///
/// The fraction is reduced first so a point shared by two levels is computed
/// from the same arguments and is bitwise identical. The midpoint is snapped
/// to zero and the lower half is mirrored from the upper half.
pub fn cgl_node(num: u64, level: u32) -> f64 {
    let den = 1u64 << level;
    debug_assert!(num <= den);
    let (mut num, mut level) = (num, level);
    while level > 0 && num % 2 == 0 {
        num /= 2;
        level -= 1;
    }
    let den = if level == 0 { 1 } else { 1u64 << level };
    // after reduction: 0/1 -> 1, 1/1 -> -1, 1/2 -> 0
    if level == 0 {
        return if num == 0 { 1.0 } else { -1.0 };
    }
    if 2 * num == den {
        return 0.0;
    }
    if 2 * num > den {
        return -((den - num) as f64 * PI / den as f64).cos();
    }
    (num as f64 * PI / den as f64).cos()
}

/// Reference coordinate in `[-1, 1]` of the 1D hierarchical index `k`.
pub fn hier_point(k: u32) -> f64 {
    match k {
        0 => 1.0,
        1 => 0.0,
        2 => -1.0,
        _ => {
            let j = level_of(k);
            let r = (k - (1 << (j - 1)) - 1) as u64;
            cgl_node(2 * r + 1, j)
        }
    }
}

/// Nodes `cos(j pi / 2^i)`, `j = 0..=2^i`, of one CGL level.
#[derive(Debug, Clone)]
pub struct CglLevel {
    pub level: u32,
    /// In natural (decreasing) order.
    pub nodes: Vec<f64>,
    /// Hierarchical index of each natural-order node.
    pub hier_index: Vec<u32>,
}

impl CglLevel {
    /// Natural-order positions of the points that are new at this level.
    pub fn new_positions(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&j| level_of(self.hier_index[j]) == self.level)
            .collect()
    }
}

pub fn cgl_nodes(level: u32) -> Result<CglLevel> {
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(invalid(format!("CGL level must be in 1..={MAX_LEVEL}, got {level}")));
    }
    let n = 1u64 << level;
    let nodes: Vec<f64> = (0..=n).map(|j| cgl_node(j, level)).collect();
    let mut hier_index = vec![0u32; nodes.len()];
    for k in 0..level_size(level) as u32 {
        // locate the natural position j with j / 2^level == angle of k
        let j = natural_position(k, level);
        hier_index[j] = k;
    }
    Ok(CglLevel { level, nodes, hier_index })
}

fn natural_position(k: u32, level: u32) -> usize {
    let (num, lev) = match k {
        0 => (0u64, 1u32),
        1 => (1, 1),
        2 => (2, 1),
        _ => {
            let j = level_of(k);
            (2 * (k - (1 << (j - 1)) - 1) as u64 + 1, j)
        }
    };
    (num << (level - lev)) as usize
}

/// `T_k(t)` by the three-term recurrence. Valid (as a polynomial) for any real `t`.
pub fn chebyshev_t(k: u32, t: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => t,
        _ => {
            let (mut a, mut b) = (1.0, t);
            for _ in 1..k {
                let c = 2.0 * t * b - a;
                a = b;
                b = c;
            }
            b
        }
    }
}

/// Clenshaw summation of `sum_k c_k T_k(t)`.
pub fn clenshaw(coeffs: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    coeffs.first().copied().unwrap_or(0.0) + t * b1 - b2
}

/// `T̃_k(t)` on the reference interval.
pub fn hier_cheb_ref(k: u32, t: f64) -> f64 {
    if k <= 2 {
        chebyshev_t(k, t)
    } else {
        let j = level_of(k);
        chebyshev_t(k, t) - chebyshev_t((1 << j) - k, t)
    }
}

/// Fill `out[k] = T̃_k(t)` for `k = 0..out.len()`.
pub fn hier_cheb_table(t: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = t;
    }
    for k in 2..n {
        out[k] = 2.0 * t * out[k - 1] - out[k - 2];
    }
    // convert in place from the top down; T_{2^j - k} has a smaller index than
    // k and is still untouched because 2^j - k < 2^(j-1) + 1 <= any new index.
    for k in (3..n).rev() {
        let j = level_of(k as u32);
        out[k] -= out[(1usize << j) - k];
    }
}

/// A closed interval `[a, b]`, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainInterval {
    pub a: f64,
    pub b: f64,
}

impl DomainInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(invalid(format!("invalid interval [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub const fn reference() -> Self {
        Self { a: -1.0, b: 1.0 }
    }

    /// Affine map into `[-1, 1]`.
    #[inline]
    pub fn to_reference(&self, x: f64) -> f64 {
        (2.0 * x - self.a - self.b) / (self.b - self.a)
    }

    #[inline]
    pub fn from_reference(&self, t: f64) -> f64 {
        0.5 * (self.a + self.b) + 0.5 * (self.b - self.a) * t
    }
}

/// Hierarchical Chebyshev basis function `k`, owned by level `j`, at `x` in `dom`.
pub fn hier_cheb_eval(k: u32, j: u32, x: f64, dom: &DomainInterval) -> Result<f64> {
    if !(dom.a < dom.b) {
        return Err(invalid(format!("invalid interval [{}, {}]", dom.a, dom.b)));
    }
    if level_of(k) != j {
        return Err(invalid(format!("index {k} is not owned by level {j}")));
    }
    Ok(hier_cheb_ref(k, dom.to_reference(x)))
}

/// Inverse of the 1D hierarchical collocation matrix of one level:
/// `coeffs[k] = sum_m inverse[k][m] * values[m]`, both in hierarchical order.
#[derive(Debug, Clone)]
pub struct TransformMatrix {
    pub level: u32,
    pub size: usize,
    /// Row-major `size x size`.
    pub inverse: Vec<f64>,
}

impl TransformMatrix {
    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.inverse[k * self.size..(k + 1) * self.size]
    }
}

/// Collocation matrix `A[m][k] = T̃_k(x_m)` on `[-1, 1]` for one level.
pub fn collocation_matrix(level: u32) -> DMatrix<f64> {
    let n = level_size(level);
    let mut table = vec![0.0; n];
    let mut a = DMatrix::zeros(n, n);
    for m in 0..n {
        hier_cheb_table(hier_point(m as u32), &mut table);
        for k in 0..n {
            a[(m, k)] = table[k];
        }
    }
    a
}

static TRANSFORMS: [OnceLock<std::result::Result<TransformMatrix, String>>; MAX_LEVEL as usize] =
    [const { OnceLock::new() }; MAX_LEVEL as usize];

/// Cached per-level transform matrix.
pub fn transform_matrix(level: u32) -> Result<&'static TransformMatrix> {
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(invalid(format!("transform level must be in 1..={MAX_LEVEL}, got {level}")));
    }
    let slot = TRANSFORMS[level as usize - 1].get_or_init(|| {
        let n = level_size(level);
        let inv = collocation_matrix(level)
            .try_inverse()
            .ok_or_else(|| format!("singular hierarchical collocation matrix at level {level}"))?;
        let mut inverse = Vec::with_capacity(n * n);
        for k in 0..n {
            for m in 0..n {
                inverse.push(inv[(k, m)]);
            }
        }
        Ok(TransformMatrix { level, size: n, inverse })
    });
    slot.as_ref().map_err(|e| Error::Numeric(e.clone()))
}

/// Gauss-Hermite rule for the weight `e^{-x^2}`.
#[derive(Debug, Clone)]
pub struct GhLevel {
    pub level: u32,
    /// Ascending.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// The `(2^i - 1)`-point Gauss-Hermite rule of level `i`.
pub fn gh_rule(level: u32) -> Result<GhLevel> {
    if !(1..=MAX_GH_LEVEL).contains(&level) {
        return Err(invalid(format!("Gauss-Hermite level must be in 1..={MAX_GH_LEVEL}, got {level}")));
    }
    let (nodes, weights) = gauss_hermite(((1usize) << level) - 1)?;
    Ok(GhLevel { level, nodes, weights })
}

/// Cached rule of one level.
pub fn gh_rule_cached(level: u32) -> Result<&'static GhLevel> {
    static RULES: [OnceLock<std::result::Result<GhLevel, String>>; MAX_GH_LEVEL as usize] =
        [const { OnceLock::new() }; MAX_GH_LEVEL as usize];
    if !(1..=MAX_GH_LEVEL).contains(&level) {
        return Err(invalid(format!("Gauss-Hermite level must be in 1..={MAX_GH_LEVEL}, got {level}")));
    }
    RULES[level as usize - 1]
        .get_or_init(|| gh_rule(level).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Numeric(e.clone()))
}

/// Largest supported Gauss-Hermite level (255 nodes).
pub const MAX_GH_LEVEL: u32 = 8;

/// `n`-point Gauss-Hermite nodes and weights: eigenvalues of the symmetric
/// Jacobi matrix seed a Newton iteration on the three-term recurrence of the
/// Hermite functions, which polishes each root to full precision.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("Gauss-Hermite rule needs at least one node"));
    }
    if n > (1 << MAX_GH_LEVEL) - 1 {
        return Err(invalid(format!("Gauss-Hermite rules are limited to {} nodes", (1 << MAX_GH_LEVEL) - 1)));
    }
    let guesses = jacobi_eigenvalues(n);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // largest roots first
        let mut z = guesses[n - 1 - i];
        let mut converged = false;
        for _ in 0..200 {
            let (p, dp) = hermite_function(n, z);
            let step = p / dp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged || !z.is_finite() {
            return Err(Error::Numeric(format!(
                "Gauss-Hermite Newton iteration failed for n = {n}, root {i}"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = hermite_weight(n, z);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        let mid = n / 2;
        x[mid] = 0.0;
        w[mid] = hermite_weight(n, 0.0);
    }
    // x was filled from the largest root down
    x.reverse();
    w.reverse();
    if x.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::Numeric(format!("Gauss-Hermite roots for n = {n} are not distinct")));
    }
    Ok((x, w))
}

/// Ascending eigenvalues of the Hermite Jacobi matrix (zero diagonal,
/// off-diagonal `sqrt(j/2)`).
fn jacobi_eigenvalues(n: usize) -> Vec<f64> {
    let mut jac = DMatrix::zeros(n, n);
    for j in 1..n {
        let off = (j as f64 / 2.0).sqrt();
        jac[(j - 1, j)] = off;
        jac[(j, j - 1)] = off;
    }
    let mut ev: Vec<f64> = jac.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Orthonormal Hermite function `h_n(z) = p_n(z) e^{-z^2/2}` and the matching
/// scaled derivative `sqrt(2n) h_{n-1}(z)`.
fn hermite_function(n: usize, z: f64) -> (f64, f64) {
    let (mut p1, mut p2) = (PI.powf(-0.25) * (-0.5 * z * z).exp(), 0.0);
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

fn hermite_weight(n: usize, z: f64) -> f64 {
    let (_, dp) = hermite_function(n, z);
    // 2 / (dp e^{z^2/2})^2
    2.0 * (-z * z - 2.0 * dp.abs().ln()).exp()
}

/// Every hierarchical index of a level in hierarchical order.
pub fn level_indices(level: u32) -> impl Iterator<Item = u32> {
    (1..=level).flat_map(new_indices)
}
