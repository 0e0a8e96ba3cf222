//! Multi-index bookkeeping shared by the sparse interpolation and quadrature
//! operators: admissible level sets, hierarchical basis index sets and the
//! signed Smolyak combination coefficients.
//!
//! Every set produced here is ordered deterministically. Level tuples are
//! sorted colexicographically (the last coordinate is the most significant
//! key, so tuples with the smallest last coordinate come first). Basis index
//! sets are grouped by level tuple in that same order, and each group is
//! enumerated with the first coordinate running fastest.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use crate::error::{invalid, Result};

/// Largest 1D level the crate supports (129 CGL points at level 7, up to 1025
/// at level 10).
pub const MAX_LEVEL: u32 = 10;

/// A level multi-index `(i_1, .., i_q)` with every component at least one.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelIndex(Vec<u32>);

impl LevelIndex {
    pub fn new(levels: Vec<u32>) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("level index must have at least one component"));
        }
        if levels.iter().any(|&l| l < 1) {
            return Err(invalid(format!("level components must be >= 1, got {levels:?}")));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|i|_1`
    pub fn sum(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl fmt::Debug for LevelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// A basis (or, equivalently, grid point) multi-index `(k_1, .., k_q)` in the
/// hierarchical 1D numbering.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisIndex(Vec<u32>);

impl BasisIndex {
    pub fn new(indices: Vec<u32>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    /// Level tuple owning this index.
    pub fn level(&self) -> LevelIndex {
        LevelIndex(self.0.iter().map(|&k| level_of(k)).collect())
    }
}

impl fmt::Debug for BasisIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Number of CGL points at 1D level `i`: `2^i + 1`.
pub fn level_size(i: u32) -> usize {
    (1usize << i) + 1
}

/// Level owning 1D hierarchical index `k`: indices 0, 1, 2 belong to level 1,
/// level `j >= 2` owns `2^(j-1)+1 ..= 2^j`.
pub fn level_of(k: u32) -> u32 {
    if k <= 2 {
        1
    } else {
        // smallest j with 2^j >= k
        32 - (k - 1).leading_zeros()
    }
}

/// The indices new at level `j` (the set `I^j \ I^(j-1)`).
pub fn new_indices(j: u32) -> std::ops::RangeInclusive<u32> {
    if j == 1 {
        0..=2
    } else {
        ((1u32 << (j - 1)) + 1)..=(1u32 << j)
    }
}

fn check_qp(q: usize, p: u32) -> Result<()> {
    if q < 1 {
        return Err(invalid("dimension q must be >= 1"));
    }
    if (p as usize) < q {
        return Err(invalid(format!("sparseness p = {p} must be >= q = {q}")));
    }
    if p as usize - q + 1 > MAX_LEVEL as usize {
        return Err(invalid(format!(
            "p - q + 1 = {} exceeds the supported 1D level {MAX_LEVEL}",
            p as usize - q + 1
        )));
    }
    Ok(())
}

fn colex_cmp(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

/// All level tuples `i` with `i_m >= 1` and `q <= |i|_1 <= p`, sorted
/// colexicographically.
pub fn level_set(q: usize, p: u32) -> Result<Vec<LevelIndex>> {
    check_qp(q, p)?;
    let mut out = Vec::new();
    let mut cur = vec![1u32; q];
    enumerate_levels(0, p - q as u32, &mut cur, &mut out);
    out.sort_by(|a, b| colex_cmp(&a.0, &b.0));
    Ok(out)
}

fn enumerate_levels(pos: usize, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<LevelIndex>) {
    if pos == cur.len() {
        out.push(LevelIndex(cur.clone()));
        return;
    }
    for extra in 0..=budget {
        cur[pos] = 1 + extra;
        enumerate_levels(pos + 1, budget - extra, cur, out);
    }
    cur[pos] = 1;
}

fn binomial(n: u64, k: u64) -> i64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc as i64
}

/// Smolyak combination coefficient `(-1)^(p-|i|) * C(q-1, p-|i|)`.
///
/// Only defined for `p - q < |i|_1 <= p`; outside that band the coefficient
/// vanishes and requesting it is an error.
pub fn combination_coefficient(q: usize, p: u32, level: &LevelIndex) -> Result<i64> {
    check_qp(q, p)?;
    if level.dim() != q {
        return Err(invalid(format!("level {level:?} has dimension {} != {q}", level.dim())));
    }
    let s = level.sum() as i64;
    let p = p as i64;
    if s > p || s <= p - q as i64 {
        return Err(invalid(format!(
            "|i|_1 = {s} outside the combination band ({}, {p}]",
            p - q as i64
        )));
    }
    let r = (p - s) as u64;
    let sign = if r.is_multiple_of(2) { 1 } else { -1 };
    Ok(sign * binomial(q as u64 - 1, r))
}

/// Level tuples carrying a nonzero combination coefficient, paired with it.
pub fn combination_terms(q: usize, p: u32) -> Result<Vec<(LevelIndex, i64)>> {
    let mut terms = Vec::new();
    for level in level_set(q, p)? {
        if level.sum() as i64 > p as i64 - q as i64 {
            let c = combination_coefficient(q, p, &level)?;
            terms.push((level, c));
        }
    }
    Ok(terms)
}

/// A 1D line through the index set along one dimension. `positions[k]` is the
/// flat position of the member whose coordinate along that dimension is `k`;
/// the line covers the full 1D set `I^level`.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub level: u32,
    pub positions: Vec<usize>,
}

/// The hierarchical basis index set `I_q^p`, the disjoint union of
/// `Ĩ^{i_1} x .. x Ĩ^{i_q}` over admissible level tuples.
pub struct BasisIndexSet {
    q: usize,
    p: u32,
    flat: Vec<u32>,
    partition: Vec<(LevelIndex, std::ops::Range<usize>)>,
    lookup: HashMap<Vec<u32>, usize>,
    pencils: OnceLock<Vec<Vec<Pencil>>>,
}

impl fmt::Debug for BasisIndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisIndexSet")
            .field("q", &self.q)
            .field("p", &self.p)
            .field("len", &self.len())
            .finish()
    }
}

impl BasisIndexSet {
    pub fn new(q: usize, p: u32) -> Result<Self> {
        let levels = level_set(q, p)?;
        let mut flat = Vec::new();
        let mut partition = Vec::with_capacity(levels.len());
        for level in levels {
            let start = flat.len() / q;
            let ranges: Vec<Vec<u32>> = level.levels().iter().map(|&j| new_indices(j).collect()).collect();
            let mut counter = vec![0usize; q];
            'outer: loop {
                for (m, &c) in counter.iter().enumerate() {
                    flat.push(ranges[m][c]);
                }
                // first coordinate runs fastest
                for m in 0..q {
                    counter[m] += 1;
                    if counter[m] < ranges[m].len() {
                        continue 'outer;
                    }
                    counter[m] = 0;
                }
                break;
            }
            let end = flat.len() / q;
            partition.push((level, start..end));
        }
        let lookup = flat
            .chunks_exact(q)
            .enumerate()
            .map(|(i, c)| (c.to_vec(), i))
            .collect();
        Ok(Self { q, p, flat, partition, lookup, pencils: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn sparseness(&self) -> u32 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Index tuple at flat position `pos`.
    pub fn get(&self, pos: usize) -> &[u32] {
        &self.flat[pos * self.q..(pos + 1) * self.q]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.flat.chunks_exact(self.q)
    }

    pub fn position(&self, index: &[u32]) -> Option<usize> {
        self.lookup.get(index).copied()
    }

    pub fn contains(&self, index: &[u32]) -> bool {
        self.lookup.contains_key(index)
    }

    /// Per-level partition: each admissible level tuple with the flat range
    /// of its `Ĩ`-product block.
    pub fn partition(&self) -> &[(LevelIndex, std::ops::Range<usize>)] {
        &self.partition
    }

    /// Largest 1D level appearing in any coordinate, `p - q + 1`.
    pub fn max_level(&self) -> u32 {
        self.p - self.q as u32 + 1
    }

    /// Largest 1D hierarchical index (equivalently Chebyshev degree).
    pub fn max_index(&self) -> u32 {
        1 << self.max_level()
    }

    /// Lines through the set along dimension `dim`.
    pub fn pencils(&self, dim: usize) -> &[Pencil] {
        &self.pencils.get_or_init(|| (0..self.q).map(|d| self.build_pencils(d)).collect())[dim]
    }

    fn build_pencils(&self, dim: usize) -> Vec<Pencil> {
        let mut by_key: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut pencils: Vec<Pencil> = Vec::new();
        for (pos, idx) in self.iter().enumerate() {
            let mut key = idx.to_vec();
            key[dim] = u32::MAX;
            let id = *by_key.entry(key).or_insert_with(|| {
                let other: u32 = idx
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != dim)
                    .map(|(_, &k)| level_of(k))
                    .sum();
                let level = self.p - other;
                pencils.push(Pencil { level, positions: vec![usize::MAX; level_size(level)] });
                pencils.len() - 1
            });
            pencils[id].positions[idx[dim] as usize] = pos;
        }
        debug_assert!(pencils.iter().all(|p| p.positions.iter().all(|&x| x != usize::MAX)));
        pencils
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn lv(v: &[u32]) -> LevelIndex {
        LevelIndex::new(v.to_vec()).unwrap()
    }

    #[test]
    fn level_set_small_cases() {
        let s = level_set(1, 3).unwrap();
        assert_eq!(s, vec![lv(&[1]), lv(&[2]), lv(&[3])]);

        let s: BTreeSet<_> = level_set(2, 3).unwrap().into_iter().collect();
        let want: BTreeSet<_> = [lv(&[1, 1]), lv(&[1, 2]), lv(&[2, 1])].into_iter().collect();
        assert_eq!(s, want);

        let s = level_set(3, 4).unwrap();
        assert_eq!(s, vec![lv(&[1, 1, 1]), lv(&[2, 1, 1]), lv(&[1, 2, 1]), lv(&[1, 1, 2])]);
    }

    #[test]
    fn level_set_matches_brute_force() {
        for q in 1..=4usize {
            for p in q as u32..=q as u32 + 4 {
                let got: BTreeSet<Vec<u32>> =
                    level_set(q, p).unwrap().into_iter().map(|l| l.0).collect();
                let mut want = BTreeSet::new();
                let n = (p as usize).pow(q as u32);
                for code in 0..n {
                    let mut c = code;
                    let t: Vec<u32> = (0..q)
                        .map(|_| {
                            let v = (c % p as usize) as u32 + 1;
                            c /= p as usize;
                            v
                        })
                        .collect();
                    if t.iter().sum::<u32>() <= p {
                        want.insert(t);
                    }
                }
                assert_eq!(got, want, "q={q} p={p}");
            }
        }
    }

    #[test]
    fn level_set_rejects_bad_parameters() {
        assert!(level_set(0, 3).is_err());
        assert!(level_set(3, 2).is_err());
    }

    #[test]
    fn combination_coefficient_examples() {
        assert_eq!(combination_coefficient(1, 4, &lv(&[4])).unwrap(), 1);
        assert_eq!(combination_coefficient(2, 3, &lv(&[1, 2])).unwrap(), 1);
        assert_eq!(combination_coefficient(2, 4, &lv(&[1, 2])).unwrap(), -1);
        assert_eq!(combination_coefficient(3, 5, &lv(&[1, 1, 2])).unwrap(), -2);
        assert!(combination_coefficient(2, 4, &lv(&[1, 1])).is_err());
        assert!(combination_coefficient(2, 4, &lv(&[3, 2])).is_err());
    }

    #[test]
    fn combination_coefficients_reproduce_constants() {
        for q in 1..=6usize {
            for p in q as u32..=q as u32 + 5 {
                let total: i64 = combination_terms(q, p).unwrap().iter().map(|(_, c)| c).sum();
                assert_eq!(total, 1, "q={q} p={p}");
            }
        }
    }

    #[test]
    fn hierarchical_1d_indexing() {
        assert_eq!(level_of(0), 1);
        assert_eq!(level_of(2), 1);
        assert_eq!(level_of(3), 2);
        assert_eq!(level_of(4), 2);
        assert_eq!(level_of(5), 3);
        assert_eq!(level_of(8), 3);
        assert_eq!(level_of(9), 4);
        for j in 1..=8 {
            let n: usize = (1..=j).map(|l| new_indices(l).count()).sum();
            assert_eq!(n, level_size(j));
            assert!(new_indices(j).all(|k| level_of(k) == j));
        }
    }

    #[test]
    fn basis_index_set_sizes() {
        assert_eq!(BasisIndexSet::new(1, 2).unwrap().len(), 5);
        assert_eq!(BasisIndexSet::new(2, 2).unwrap().len(), 9);
        assert_eq!(BasisIndexSet::new(2, 3).unwrap().len(), 21);
    }

    #[test]
    fn basis_index_set_partition_is_disjoint_union() {
        let set = BasisIndexSet::new(3, 6).unwrap();
        let mut seen = BTreeSet::new();
        for (level, range) in set.partition() {
            for pos in range.clone() {
                let idx = set.get(pos);
                assert_eq!(&BasisIndex::new(idx.to_vec()).level(), level);
                assert!(seen.insert(idx.to_vec()));
            }
        }
        assert_eq!(seen.len(), set.len());
        for (pos, idx) in set.iter().enumerate() {
            assert_eq!(set.position(idx), Some(pos));
        }
    }

    #[test]
    fn pencils_cover_every_member_once_per_dimension() {
        let set = BasisIndexSet::new(3, 6).unwrap();
        for d in 0..3 {
            let mut count = vec![0usize; set.len()];
            for pencil in set.pencils(d) {
                assert_eq!(pencil.positions.len(), level_size(pencil.level));
                for (k, &pos) in pencil.positions.iter().enumerate() {
                    assert_eq!(set.get(pos)[d] as usize, k);
                    count[pos] += 1;
                }
            }
            assert!(count.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn ordering_is_deterministic() {
        let a = BasisIndexSet::new(3, 5).unwrap();
        let b = BasisIndexSet::new(3, 5).unwrap();
        assert!(a.iter().eq(b.iter()));
    }
}
