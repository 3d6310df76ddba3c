//! Multi-indices in the positive cone of `Z^n`, the grids `F_m`, and the
//! two combinatorial sums the KMS formulas are built from.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default cap on the number of grid points, `13^6` (level 12 in dimension 6).
pub const DEFAULT_MAX_POINTS: usize = 4_826_809;

/// An element of `Z_+^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(coords: Vec<usize>) -> Self {
        MultiIndex(coords)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// The constant index `(k, ..., k)`.
    pub fn splat(n: usize, k: usize) -> Self {
        MultiIndex(vec![k; n])
    }

    /// The `i`-th unit vector (0-based).
    pub fn unit(n: usize, i: usize) -> Self {
        let mut c = vec![0; n];
        c[i] = 1;
        MultiIndex(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// `|x| = sum_i x_i`.
    pub fn degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn max_coord(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.0[i] != 0).collect()
    }

    fn zip_with(&self, other: &Self, f: impl Fn(usize, usize) -> usize) -> Self {
        assert_eq!(self.dim(), other.dim(), "multi-index dimension mismatch");
        MultiIndex(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn join(&self, other: &Self) -> Self {
        self.zip_with(other, usize::max)
    }

    pub fn meet(&self, other: &Self) -> Self {
        self.zip_with(other, usize::min)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    /// Coordinate-wise difference; `None` unless `other <= self`.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        assert_eq!(self.dim(), other.dim(), "multi-index dimension mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a.checked_sub(b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    /// Partial order of `Z_+^n`.
    pub fn leq(&self, other: &Self) -> bool {
        assert_eq!(self.dim(), other.dim(), "multi-index dimension mismatch");
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// `x` is in `y^perp` iff the supports are disjoint.
    pub fn is_perp(&self, other: &Self) -> bool {
        assert_eq!(self.dim(), other.dim(), "multi-index dimension mismatch");
        self.0.iter().zip(&other.0).all(|(&a, &b)| a == 0 || b == 0)
    }

    /// `x ∧ 1`.
    pub fn clamp_unit(&self) -> Self {
        MultiIndex(self.0.iter().map(|&c| c.min(1)).collect())
    }

    /// `<x, v>` against a real vector.
    pub fn pairing(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(&a, &b)| a as f64 * b).sum()
    }

    /// `<x - y, v>` without leaving the integers for the difference.
    pub fn diff_pairing(&self, other: &Self, v: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .zip(v)
            .map(|((&a, &b), &w)| (a as f64 - b as f64) * w)
            .sum()
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        MultiIndex(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeOps {
    pub join: MultiIndex,
    pub meet: MultiIndex,
    pub leq: bool,
    pub support: Vec<usize>,
    pub is_perp: bool,
    pub degree: usize,
}

/// Checked bundle of the lattice operations on a pair; `degree` refers to `x`.
pub fn lattice_ops(x: &MultiIndex, y: &MultiIndex) -> Result<LatticeOps> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(LatticeOps {
        join: x.join(y),
        meet: x.meet(y),
        leq: x.leq(y),
        support: x.support(),
        is_perp: x.is_perp(y),
        degree: x.degree(),
    })
}

/// The grid `F_m = { y in Z_+^n : y <= m·1 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub m: usize,
    pub n: usize,
}

impl Grid {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        Self::with_limit(m, n, DEFAULT_MAX_POINTS)
    }

    pub fn with_limit(m: usize, n: usize, max_points: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("grid dimension must be at least 1".into()));
        }
        let points = (m + 1)
            .checked_pow(n as u32)
            .ok_or_else(|| size_guard(m, n, usize::MAX, max_points))?;
        if points > max_points {
            return Err(size_guard(m, n, points, max_points));
        }
        Ok(Grid { m, n })
    }

    pub fn len(&self) -> usize {
        (self.m + 1).pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: &MultiIndex) -> bool {
        x.dim() == self.n && x.max_coord() <= self.m
    }

    /// Lexicographic iteration (last coordinate fastest).
    pub fn iter(&self) -> GridIter {
        GridIter {
            m: self.m,
            next: Some(vec![0; self.n]),
        }
    }
}

fn size_guard(m: usize, n: usize, requested: usize, limit: usize) -> Error {
    Error::SizeGuard {
        what: format!("grid F_{m} in dimension {n}"),
        requested,
        limit,
    }
}

pub struct GridIter {
    m: usize,
    next: Option<Vec<usize>>,
}

impl Iterator for GridIter {
    type Item = MultiIndex;

    fn next(&mut self) -> Option<MultiIndex> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut advanced = false;
        for c in succ.iter_mut().rev() {
            if *c < self.m {
                *c += 1;
                advanced = true;
                break;
            }
            *c = 0;
        }
        if advanced {
            self.next = Some(succ);
        }
        Some(MultiIndex(current))
    }
}

pub fn enumerate_grid(m: usize, n: usize) -> Result<Vec<MultiIndex>> {
    Ok(Grid::new(m, n)?.iter().collect())
}

/// Literal evaluation of `sum_{0<=x<=y} (-1)^{|x|} sum_{x<=w in F_m} k_w`.
///
/// For `y = 1` this is `k_0`. For general `y <= 1` it collapses to the sum of
/// `k_w` over the `w in F_m` vanishing on `supp y`.
pub fn inclusion_exclusion_sum(
    k: &BTreeMap<MultiIndex, Complex64>,
    m: usize,
    y: &MultiIndex,
) -> Result<Complex64> {
    if y.max_coord() > 1 {
        return Err(Error::InvalidInput(format!("y = {y} is not below 1")));
    }
    let grid = Grid::new(m, y.dim())?;
    let lookup = |w: &MultiIndex| {
        k.get(w)
            .copied()
            .ok_or_else(|| Error::MissingEntry(format!("k at {w}")))
    };
    let lower = Grid::new(1, y.dim())?;
    let mut total = Complex64::new(0.0, 0.0);
    for x in lower.iter().filter(|x| x.leq(y)) {
        let sign = if x.degree() % 2 == 0 { 1.0 } else { -1.0 };
        let mut inner = Complex64::new(0.0, 0.0);
        for w in grid.iter().filter(|w| x.leq(w)) {
            inner += lookup(&w)?;
        }
        total += sign * inner;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSums {
    pub partial_sum: f64,
    pub full_sum: f64,
    pub tail_bound: f64,
}

/// Closed forms of `sum_{w in F_m} e^{-<w, betabar>}` and of the full series.
pub fn geometric_grid_sum(betabar: &[f64], m: usize) -> Result<GridSums> {
    if betabar.is_empty() {
        return Err(Error::InvalidInput("empty betabar".into()));
    }
    if let Some((index, &value)) = betabar.iter().enumerate().find(|(_, &b)| !(b > 0.0)) {
        return Err(Error::DivergingSeries { index, value });
    }
    let levels = (m + 1) as f64;
    let mut full = 1.0;
    let mut partial = 1.0;
    // log of prod_i (1 - e^{-b_i (m+1)}), kept separate so the tail does not cancel
    let mut log_ratio = 0.0;
    for &b in betabar {
        let denom = -(-b).exp_m1();
        full /= denom;
        let num = -(-b * levels).exp_m1();
        partial *= num / denom;
        log_ratio += (-(-b * levels).exp()).ln_1p();
    }
    let tail = -full * log_ratio.exp_m1();
    Ok(GridSums {
        partial_sum: partial,
        full_sum: full,
        tail_bound: tail.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn join_meet_perp_degree() {
        let ops = lattice_ops(&mi(&[1, 0]), &mi(&[0, 2])).unwrap();
        assert_eq!(ops.join, mi(&[1, 2]));
        assert_eq!(ops.meet, mi(&[0, 0]));
        assert!(ops.is_perp);
        assert!(!ops.leq);
        assert_eq!(mi(&[2, 3, 1]).degree(), 6);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = lattice_ops(&mi(&[1, 0]), &mi(&[1])).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 1 });
    }

    #[test]
    fn grid_examples() {
        assert_eq!(
            enumerate_grid(1, 2).unwrap(),
            vec![mi(&[0, 0]), mi(&[0, 1]), mi(&[1, 0]), mi(&[1, 1])]
        );
        assert_eq!(enumerate_grid(0, 3).unwrap(), vec![mi(&[0, 0, 0])]);
        assert_eq!(enumerate_grid(2, 1).unwrap(), vec![mi(&[0]), mi(&[1]), mi(&[2])]);
        assert!(matches!(Grid::new(3, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn grid_size_guard() {
        assert!(Grid::new(12, 6).is_ok());
        assert!(matches!(Grid::new(13, 6), Err(Error::SizeGuard { .. })));
        assert!(matches!(Grid::new(1000, 40), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn one_variable_telescoping() {
        let mut k = BTreeMap::new();
        k.insert(mi(&[0]), Complex64::new(5.0, 0.0));
        k.insert(mi(&[1]), Complex64::new(7.0, 0.0));
        let s = inclusion_exclusion_sum(&k, 1, &mi(&[1])).unwrap();
        assert_eq!(s, Complex64::new(5.0, 0.0));
        // y = 0 keeps only the x = 0 term
        let s0 = inclusion_exclusion_sum(&k, 1, &mi(&[0])).unwrap();
        assert_eq!(s0, Complex64::new(12.0, 0.0));
    }

    #[test]
    fn missing_entry_rejected() {
        let mut k = BTreeMap::new();
        k.insert(mi(&[0]), Complex64::new(1.0, 0.0));
        assert!(matches!(
            inclusion_exclusion_sum(&k, 1, &mi(&[1])),
            Err(Error::MissingEntry(_))
        ));
        assert!(matches!(
            inclusion_exclusion_sum(&k, 1, &mi(&[2])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn geometric_examples() {
        let s = geometric_grid_sum(&[std::f64::consts::LN_2], 60).unwrap();
        assert!((s.full_sum - 2.0).abs() < 1e-15);
        assert!(s.tail_bound < 1e-17);

        let e = (-1.0f64).exp();
        let s = geometric_grid_sum(&[1.0, 1.0], 3).unwrap();
        let one = (1.0 - e.powi(4)) / (1.0 - e);
        assert!((s.partial_sum - one * one).abs() < 1e-14);
        assert!((s.full_sum - s.partial_sum - s.tail_bound).abs() < 1e-14);

        assert_eq!(
            geometric_grid_sum(&[1.0, 0.0], 2).unwrap_err(),
            Error::DivergingSeries { index: 1, value: 0.0 }
        );
        assert!(geometric_grid_sum(&[-1.0], 2).is_err());
    }
}
