//! The orbit representation on `H ⊗ ℓ²(F_m)`, truncated to a finite grid.
//!
//! `V_y` sends level `w` to `w + y` and kills levels that would leave `F_m`,
//! so relation checks are restricted to a safe subspace of low levels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::algebra::{AlgebraElement, State, STRUCTURAL_TOL};
use crate::dynamics::DynamicalSystem;
use crate::error::{Error, Result};
use crate::kms::{Evaluation, KmsFunctional, Provenance};
use crate::lattice::{Grid, MultiIndex, DEFAULT_MAX_POINTS};
use crate::linalg::{format_complex, least_squares, numerical_rank, CMatrix, CVector, ONE, ZERO};
use crate::monomial::{Monomial, MonomialSum};

/// Column count above which norms are bounded instead of computed by SVD.
pub const DENSE_LIMIT: usize = 1024;

/// Sparse complex square matrix stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    dim: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
    /// Largest shift degree used to build the operator.
    pub degree: usize,
}

impl FockOperator {
    pub fn zero(dim: usize) -> Self {
        FockOperator {
            dim,
            rows: vec![Vec::new(); dim],
            degree: 0,
        }
    }

    pub fn identity(dim: usize) -> Self {
        FockOperator {
            dim,
            rows: (0..dim).map(|i| vec![(i, ONE)]).collect(),
            degree: 0,
        }
    }

    /// Duplicate entries are summed; zeros are dropped.
    pub fn from_triplets(dim: usize, entries: impl IntoIterator<Item = (usize, usize, Complex64)>) -> Self {
        let mut acc: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); dim];
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r},{c}) outside dimension {dim}");
            *acc[r].entry(c).or_insert(ZERO) += v;
        }
        FockOperator {
            dim,
            rows: acc
                .into_iter()
                .map(|row| row.into_iter().filter(|(_, v)| *v != ZERO).collect())
                .collect(),
            degree: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.rows[r]
            .iter()
            .find(|(j, _)| *j == c)
            .map(|&(_, v)| v)
            .unwrap_or(ZERO)
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::from_triplets(self.dim, self.entries().map(|(r, c, v)| (c, r, v.conj())));
        out.degree = self.degree;
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::from_triplets(self.dim, self.entries().map(|(r, c, v)| (r, c, v * s)));
        out.degree = self.degree;
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let mut out = Self::from_triplets(self.dim, self.entries().chain(other.entries()));
        out.degree = self.degree.max(other.degree);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-ONE))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "operator dimensions differ");
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut acc: BTreeMap<usize, Complex64> = BTreeMap::new();
                for &(k, v) in row {
                    for &(j, w) in &other.rows[k] {
                        *acc.entry(j).or_insert(ZERO) += v * w;
                    }
                }
                acc.into_iter().filter(|(_, v)| *v != ZERO).collect()
            })
            .collect();
        FockOperator {
            dim: self.dim,
            rows,
            degree: self.degree + other.degree,
        }
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        assert_eq!(v.len(), self.dim, "vector dimension differs");
        CVector::from_iterator(
            self.dim,
            self.rows
                .iter()
                .map(|row| row.iter().fold(ZERO, |acc, &(c, w)| acc + w * v[c])),
        )
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    /// Operator norm of the restriction to the span of `columns`: exact (SVD)
    /// up to `DENSE_LIMIT` columns, otherwise the matrix-free upper bound
    /// `min(‖·‖_F, sqrt(‖·‖_1 ‖·‖_∞))`.
    pub fn restricted_norm(&self, columns: &[usize]) -> f64 {
        let keep: BTreeMap<usize, usize> = columns.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let restricted = self
            .entries()
            .filter_map(|(r, c, v)| keep.get(&c).map(|&k| (r, k, v)));
        if columns.len() <= DENSE_LIMIT {
            let mut m = CMatrix::zeros(self.dim, columns.len());
            for (r, k, v) in restricted {
                m[(r, k)] = v;
            }
            return crate::linalg::spectral_norm(&m);
        }
        let mut frob = 0.0;
        let mut row_sums = vec![0.0; self.dim];
        let mut col_sums = vec![0.0; columns.len()];
        for (r, k, v) in restricted {
            frob += v.norm_sqr();
            row_sums[r] += v.norm();
            col_sums[k] += v.norm();
        }
        let inf = row_sums.into_iter().fold(0.0, f64::max);
        let one = col_sums.into_iter().fold(0.0, f64::max);
        frob.sqrt().min((inf * one).sqrt())
    }

    /// One `row column value` line per stored entry, 17 significant digits.
    pub fn to_triples(&self) -> String {
        let mut out = String::new();
        for (r, c, v) in self.entries() {
            let _ = writeln!(out, "{r} {c} {}", format_complex(v));
        }
        out
    }
}

/// The truncated Fock representation `(π̃, V)` of a system.
#[derive(Debug, Clone)]
pub struct TruncatedFock {
    sys: DynamicalSystem,
    m: usize,
    points: Vec<MultiIndex>,
    index: BTreeMap<MultiIndex, usize>,
    /// Offsets of the blocks inside `H = ⊕_b C^{d_b}`.
    h_offsets: Vec<usize>,
    h_dim: usize,
}

pub fn build_representation(sys: &DynamicalSystem, m: usize) -> Result<TruncatedFock> {
    let grid = Grid::new(m, sys.rank())?;
    let h_dim = sys.algebra().rep_dim();
    let dim = grid.len().saturating_mul(h_dim);
    if dim > DEFAULT_MAX_POINTS {
        return Err(Error::SizeGuard {
            what: "Fock space dimension".into(),
            requested: dim,
            limit: DEFAULT_MAX_POINTS,
        });
    }
    let points: Vec<MultiIndex> = grid.iter().collect();
    let index = points.iter().cloned().enumerate().map(|(k, x)| (x, k)).collect();
    let mut h_offsets = Vec::new();
    let mut acc = 0;
    for &d in sys.algebra().block_dims() {
        h_offsets.push(acc);
        acc += d;
    }
    Ok(TruncatedFock {
        sys: sys.clone(),
        m,
        points,
        index,
        h_offsets,
        h_dim,
    })
}

impl TruncatedFock {
    pub fn system(&self) -> &DynamicalSystem {
        &self.sys
    }

    pub fn level(&self) -> usize {
        self.m
    }

    /// `(Σ_b d_b) (m+1)^n`.
    pub fn dim(&self) -> usize {
        self.h_dim * self.points.len()
    }

    pub fn points(&self) -> &[MultiIndex] {
        &self.points
    }

    /// Basis index of `e_h ⊗ e_w`.
    pub fn basis_index(&self, w: &MultiIndex, h: usize) -> Option<usize> {
        self.index.get(w).map(|&k| k * self.h_dim + h)
    }

    /// The standard representation `π(a) = ⊕_b a_b` on `H`.
    pub fn standard_rep(&self, a: &AlgebraElement) -> CMatrix {
        let mut m = CMatrix::zeros(self.h_dim, self.h_dim);
        for (b, block) in a.blocks.iter().enumerate() {
            let o = self.h_offsets[b];
            m.view_mut((o, o), block.shape()).copy_from(block);
        }
        m
    }

    /// Reads `a` back from a matrix on `H`, ignoring off-block entries.
    pub fn from_standard_rep(&self, m: &CMatrix) -> AlgebraElement {
        AlgebraElement {
            blocks: self
                .sys
                .algebra()
                .block_dims()
                .iter()
                .zip(&self.h_offsets)
                .map(|(&d, &o)| m.view((o, o), (d, d)).into_owned())
                .collect(),
        }
    }

    /// `π̃(a)(ξ ⊗ e_w) = π(α_w(a))ξ ⊗ e_w`.
    pub fn pi(&self, a: &AlgebraElement) -> FockOperator {
        let mut entries = Vec::new();
        for (k, w) in self.points.iter().enumerate() {
            let block = self.standard_rep(&self.sys.act(w, a));
            let o = k * self.h_dim;
            for r in 0..self.h_dim {
                for c in 0..self.h_dim {
                    if block[(r, c)] != ZERO {
                        entries.push((o + r, o + c, block[(r, c)]));
                    }
                }
            }
        }
        FockOperator::from_triplets(self.dim(), entries)
    }

    /// `V_y(ξ ⊗ e_w) = ξ ⊗ e_{w+y}`, zero when `w + y` leaves `F_m`.
    pub fn shift(&self, y: &MultiIndex) -> FockOperator {
        let mut entries = Vec::new();
        for (k, w) in self.points.iter().enumerate() {
            if let Some(&target) = self.index.get(&w.add(y)) {
                for h in 0..self.h_dim {
                    entries.push((target * self.h_dim + h, k * self.h_dim + h, ONE));
                }
            }
        }
        let mut op = FockOperator::from_triplets(self.dim(), entries);
        op.degree = y.degree();
        op
    }

    /// Levels `w` with `w + d·1 <= m·1`.
    pub fn safe_levels(&self, d: usize) -> Vec<MultiIndex> {
        self.points
            .iter()
            .filter(|w| w.max_coord() + d <= self.m)
            .cloned()
            .collect()
    }

    pub fn safe_columns(&self, d: usize) -> Vec<usize> {
        self.safe_levels(d)
            .iter()
            .flat_map(|w| {
                let k = self.index[w];
                k * self.h_dim..(k + 1) * self.h_dim
            })
            .collect()
    }

    fn require_safe(&self, d: usize) -> Result<Vec<usize>> {
        let cols = self.safe_columns(d);
        if cols.is_empty() {
            return Err(Error::IncreaseTruncation(format!(
                "no level w satisfies w + {d}·1 <= {}·1; increase m",
                self.m
            )));
        }
        Ok(cols)
    }

    /// `V_x π̃(a) V_y^*`.
    pub fn monomial_operator(&self, f: &Monomial) -> Result<FockOperator> {
        for z in [&f.x, &f.y] {
            if !self.index.contains_key(z) {
                return Err(Error::IncreaseTruncation(format!("index {z} outside F_{}", self.m)));
            }
        }
        let mut op = self
            .shift(&f.x)
            .mul(&self.pi(&f.a))
            .mul(&self.shift(&f.y).adjoint());
        op.degree = f.degree();
        Ok(op)
    }

    pub fn sum_operator(&self, s: &MonomialSum) -> Result<FockOperator> {
        let mut acc = FockOperator::zero(self.dim());
        for t in s.terms() {
            acc = acc.add(&self.monomial_operator(&t)?);
        }
        Ok(acc)
    }

    /// `‖(T_f T_g - T_{fg}) restricted‖` on levels `w` with
    /// `w + (deg f + deg g)·1 <= m·1`, where no factor reaches the boundary.
    pub fn product_residual(&self, f: &Monomial, g: &Monomial) -> Result<f64> {
        let cols = self.require_safe(f.degree() + g.degree())?;
        let symbolic = crate::monomial::multiply(&self.sys, f, g);
        let lhs = self.monomial_operator(f)?.mul(&self.monomial_operator(g)?);
        let rhs = self.monomial_operator(&symbolic)?;
        Ok(lhs.sub(&rhs).restricted_norm(&cols))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NicaReport {
    pub degree: usize,
    pub safe_levels: usize,
    /// `max_i ‖V_i^* V_i - I‖` on the safe subspace.
    pub isometry: f64,
    /// `max_{i≠j} ‖V_i V_j^* - V_j^* V_i‖` on the safe subspace.
    pub double_commutation: f64,
    /// `max_{i,a} ‖π̃(a) V_i - V_i π̃(α_i(a))‖` over matrix units `a`.
    pub covariance: f64,
    /// Isometry defect on the excluded levels; nonzero by truncation.
    pub excluded_isometry: f64,
}

impl NicaReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.isometry <= tol && self.double_commutation <= tol && self.covariance <= tol
    }
}

impl std::fmt::Display for NicaReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "safe subspace: levels w with w + {}·1 <= m·1 ({} levels)", self.degree, self.safe_levels)?;
        writeln!(f, "isometry residual: {:.3e}", self.isometry)?;
        writeln!(f, "double commutation residual: {:.3e}", self.double_commutation)?;
        writeln!(f, "covariance residual: {:.3e}", self.covariance)?;
        writeln!(f, "isometry off the safe subspace (excluded): {:.3e}", self.excluded_isometry)
    }
}

pub fn check_nica_pair(rep: &TruncatedFock, d: usize) -> Result<NicaReport> {
    let cols = rep.require_safe(d)?;
    let n = rep.sys.rank();
    let dim = rep.dim();
    let safe: std::collections::BTreeSet<usize> = cols.iter().copied().collect();
    let excluded: Vec<usize> = (0..dim).filter(|c| !safe.contains(c)).collect();
    let shifts: Vec<FockOperator> = (0..n).map(|i| rep.shift(&MultiIndex::unit(n, i))).collect();
    let adjoints: Vec<FockOperator> = shifts.iter().map(FockOperator::adjoint).collect();

    let mut isometry: f64 = 0.0;
    let mut excluded_isometry: f64 = 0.0;
    for i in 0..n {
        let defect = adjoints[i].mul(&shifts[i]).sub(&FockOperator::identity(dim));
        isometry = isometry.max(defect.restricted_norm(&cols));
        if !excluded.is_empty() {
            excluded_isometry = excluded_isometry.max(defect.restricted_norm(&excluded));
        }
    }
    let mut double_commutation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let defect = shifts[i].mul(&adjoints[j]).sub(&adjoints[j].mul(&shifts[i]));
                double_commutation = double_commutation.max(defect.restricted_norm(&cols));
            }
        }
    }
    let mut covariance: f64 = 0.0;
    for a in rep.sys.algebra().basis() {
        let pa = rep.pi(&a);
        for i in 0..n {
            let image = rep.pi(&rep.sys.generator(i).apply(&a));
            let defect = pa.mul(&shifts[i]).sub(&shifts[i].mul(&image));
            covariance = covariance.max(defect.restricted_norm(&cols));
        }
    }
    Ok(NicaReport {
        degree: d,
        safe_levels: rep.safe_levels(d).len(),
        isometry,
        double_commutation,
        covariance,
        excluded_isometry,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreIndependence {
    /// Coefficients recovered by peeling, in the order the levels were given.
    pub recovered: Vec<AlgebraElement>,
    /// Rank of the map `(a_w) -> X` equals the number of unknowns.
    pub injective: bool,
    /// Largest gap between peeling and the direct least-squares solve.
    pub method_gap: f64,
}

/// Recovers `a_w` from `X = Σ_w V_w π̃(a_w) V_w^*` level by level: the
/// diagonal block of `X` at level `z` is `Σ_{w <= z} π(α_{z-w}(a_w))`.
/// The result is cross-checked against a direct solve of the assembled system.
pub fn core_independence_check(
    rep: &TruncatedFock,
    levels: &[MultiIndex],
    coefficients: &[AlgebraElement],
) -> Result<CoreIndependence> {
    if levels.len() != coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: levels.len(),
            found: coefficients.len(),
        });
    }
    let distinct: std::collections::BTreeSet<&MultiIndex> = levels.iter().collect();
    if distinct.len() != levels.len() {
        return Err(Error::InvalidInput("levels must be distinct".into()));
    }
    let sys = &rep.sys;
    let alg = sys.algebra();
    let x = levels
        .iter()
        .zip(coefficients)
        .map(|(w, a)| rep.monomial_operator(&Monomial::new(w.clone(), a.clone(), w.clone())))
        .try_fold(FockOperator::zero(rep.dim()), |acc, op| op.map(|op| acc.add(&op)))?;
    let h = rep.h_dim;
    let block_at = |op: &FockOperator, z: &MultiIndex| -> CMatrix {
        let o = rep.index[z] * h;
        CMatrix::from_fn(h, h, |r, c| op.get(o + r, o + c))
    };

    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&i, &j| {
        (levels[i].degree(), &levels[i]).cmp(&(levels[j].degree(), &levels[j]))
    });
    let mut recovered: Vec<Option<AlgebraElement>> = vec![None; levels.len()];
    for &k in &order {
        let z = &levels[k];
        let mut block = block_at(&x, z);
        for &j in &order {
            if j == k {
                break;
            }
            if let (Some(rest), Some(a)) = (z.checked_sub(&levels[j]), &recovered[j]) {
                block -= rep.standard_rep(&sys.act(&rest, a));
            }
        }
        recovered[k] = Some(rep.from_standard_rep(&block));
    }
    let recovered: Vec<AlgebraElement> = recovered.into_iter().map(Option::unwrap).collect();

    // direct solve over the diagonal blocks of every level in F_m
    let unknowns = levels.len() * alg.dim();
    let rows = rep.points.len() * h * h;
    let mut system = CMatrix::zeros(rows, unknowns);
    for (k, w) in levels.iter().enumerate() {
        for (j, e) in alg.basis().iter().enumerate() {
            let op = rep.monomial_operator(&Monomial::new(w.clone(), e.clone(), w.clone()))?;
            for (p, z) in rep.points.iter().enumerate() {
                let b = block_at(&op, z);
                for (q, v) in b.iter().enumerate() {
                    system[(p * h * h + q, k * alg.dim() + j)] = *v;
                }
            }
        }
    }
    let mut rhs = CVector::zeros(rows);
    for (p, z) in rep.points.iter().enumerate() {
        for (q, v) in block_at(&x, z).iter().enumerate() {
            rhs[p * h * h + q] = *v;
        }
    }
    let injective = numerical_rank(&system, STRUCTURAL_TOL) == unknowns;
    let (solution, _) = least_squares(&system, &rhs, 1e-13);
    let mut method_gap: f64 = 0.0;
    for (k, a) in recovered.iter().enumerate() {
        let direct = alg.from_coords(&solution.rows(k * alg.dim(), alg.dim()).into_owned());
        method_gap = method_gap.max(direct.dist(a));
    }
    let scale = coefficients.iter().map(AlgebraElement::max_abs).fold(1.0, f64::max);
    if !injective || method_gap > 1e-8 * scale {
        return Err(Error::InvariantFault(format!(
            "peeling and direct solve disagree (injective = {injective}, gap {method_gap:.3e})"
        )));
    }
    Ok(CoreIndependence {
        recovered,
        injective,
        method_gap,
    })
}

/// Purification of `state` placed at level 0: `Σ λ ⟨F(v ⊗ e_0), v ⊗ e_0⟩`.
pub fn vacuum_functional(rep: &TruncatedFock, state: &State, f: &MonomialSum) -> Result<Complex64> {
    let in_range: MonomialSum = f
        .terms()
        .filter(|t| rep.index.contains_key(&t.x) && rep.index.contains_key(&t.y))
        .collect();
    // terms beyond F_m would shift the vacuum off level 0 and contribute nothing
    let op = rep.sum_operator(&in_range)?;
    let origin = rep.index[&MultiIndex::zero(rep.sys.rank())] * rep.h_dim;
    let mut total = ZERO;
    for (b, weight, v) in state.purification() {
        let mut xi = CVector::zeros(rep.dim());
        for (k, z) in v.iter().enumerate() {
            xi[origin + rep.h_offsets[b] + k] = *z;
        }
        total += xi.dotc(&op.apply(&xi)) * weight;
    }
    Ok(total)
}

/// The vacuum functional packaged for the KMS checkers.
#[derive(Debug, Clone)]
pub struct VacuumFunctional {
    rep: TruncatedFock,
    state: State,
}

impl VacuumFunctional {
    pub fn new(rep: &TruncatedFock, state: &State) -> Self {
        VacuumFunctional {
            rep: rep.clone(),
            state: state.clone(),
        }
    }
}

impl KmsFunctional for VacuumFunctional {
    fn system(&self) -> &DynamicalSystem {
        &self.rep.sys
    }

    fn provenance(&self) -> Provenance {
        Provenance::Vacuum
    }

    fn eval(&self, f: &Monomial) -> Result<Evaluation> {
        vacuum_functional(&self.rep, &self.state, &MonomialSum::from(f.clone())).map(Evaluation::exact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{validate_endomorphism, BlockAlgebra, TracialState};
    use crate::kms::{eval_kms_infinity, verify_kms, KmsParams, Scope};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn mi(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    fn doubling() -> DynamicalSystem {
        let alg = BlockAlgebra::commutative(2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(1.0), c(0.0)]);
        let phi = validate_endomorphism(&alg, m, STRUCTURAL_TOL).unwrap();
        DynamicalSystem::new(alg, vec![phi]).unwrap()
    }

    #[test]
    fn shift_on_trivial_system() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::commutative(1).unwrap(), 1).unwrap();
        let rep = build_representation(&sys, 2).unwrap();
        assert_eq!(rep.dim(), 3);
        let v = rep.shift(&mi(&[1])).to_dense();
        let expected = CMatrix::from_row_slice(3, 3, &[ZERO, ZERO, ZERO, ONE, ZERO, ZERO, ZERO, ONE, ZERO]);
        assert_eq!(v, expected);
        assert!((crate::linalg::spectral_norm(&v) - 1.0).abs() < 1e-14);
        assert_eq!(rep.shift(&mi(&[0])), FockOperator::identity(3));
    }

    #[test]
    fn pi_is_a_faithful_representation() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::new(vec![2, 1]).unwrap(), 2).unwrap();
        let rep = build_representation(&sys, 2).unwrap();
        assert_eq!(rep.dim(), 3 * 9);
        assert_eq!(rep.pi(&sys.algebra().unit()), FockOperator::identity(rep.dim()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sys.algebra().random_element(&mut rng);
        let b = sys.algebra().random_element(&mut rng);
        let lhs = rep.pi(&a).mul(&rep.pi(&b));
        assert!(lhs.sub(&rep.pi(&(&a * &b))).max_abs() < 1e-12);
        let all: Vec<usize> = (0..rep.dim()).collect();
        assert!((rep.pi(&a).restricted_norm(&all) - a.norm()).abs() < 1e-10);
    }

    #[test]
    fn nica_pair_on_trivial_rank_two() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::commutative(1).unwrap(), 2).unwrap();
        let rep = build_representation(&sys, 3).unwrap();
        let report = check_nica_pair(&rep, 1).unwrap();
        assert!(report.passes(0.0), "{report}");
        assert!(report.excluded_isometry > 0.5);
    }

    #[test]
    fn covariance_for_doubling() {
        let rep = build_representation(&doubling(), 4).unwrap();
        let report = check_nica_pair(&rep, 2).unwrap();
        assert!(report.passes(1e-12), "{report}");
    }

    #[test]
    fn empty_safe_subspace() {
        let rep = build_representation(&doubling(), 2).unwrap();
        assert!(matches!(check_nica_pair(&rep, 3), Err(Error::IncreaseTruncation(_))));
    }

    #[test]
    fn monomial_operators() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::new(vec![2]).unwrap(), 1).unwrap();
        let rep = build_representation(&sys, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = sys.algebra().random_element(&mut rng);
        assert_eq!(rep.monomial_operator(&Monomial::element(1, a.clone())).unwrap(), rep.pi(&a));
        let f = Monomial::new(mi(&[2]), a.clone(), mi(&[1]));
        let op = rep.monomial_operator(&f).unwrap();
        assert_eq!(op.degree, 2);
        let adj = rep.monomial_operator(&crate::monomial::adjoint(&f)).unwrap();
        assert!(op.adjoint().sub(&adj).max_abs() < 1e-14);
        // V_y^* kills the vacuum slice
        for h in 0..2 {
            let col = rep.basis_index(&mi(&[0]), h).unwrap();
            assert!((0..rep.dim()).all(|r| op.get(r, col) == ZERO));
        }
        assert!(rep.monomial_operator(&Monomial::new(mi(&[4]), a, mi(&[0]))).is_err());
    }

    #[test]
    fn symbolic_products_match_operators() {
        let alg = BlockAlgebra::commutative(2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(1.0), c(0.0)]);
        let sys = DynamicalSystem::from_matrices(alg.clone(), vec![m, CMatrix::identity(2, 2)]).unwrap();
        let rep = build_representation(&sys, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pick = |rng: &mut ChaCha8Rng| MultiIndex::new(vec![rng.gen_range(0..2), rng.gen_range(0..2)]);
        for _ in 0..20 {
            let f = Monomial::new(pick(&mut rng), alg.random_element(&mut rng), pick(&mut rng));
            let g = Monomial::new(pick(&mut rng), alg.random_element(&mut rng), pick(&mut rng));
            assert!(rep.product_residual(&f, &g).unwrap() < 1e-12);
        }
    }

    #[test]
    fn peeling_recovers_coefficients() {
        let rep = build_representation(&doubling(), 3).unwrap();
        let alg = rep.system().algebra().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let levels = vec![mi(&[2]), mi(&[0]), mi(&[1])];
        let coeffs: Vec<AlgebraElement> = levels.iter().map(|_| alg.random_element(&mut rng)).collect();
        let out = core_independence_check(&rep, &levels, &coeffs).unwrap();
        assert!(out.injective);
        for (a, b) in out.recovered.iter().zip(&coeffs) {
            assert!(a.dist(b) < 1e-12);
        }
    }

    #[test]
    fn vacuum_case_split_and_kms_infinity() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::new(vec![2, 1]).unwrap(), 1).unwrap();
        let rep = build_representation(&sys, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tau = TracialState::random(sys.algebra(), &mut rng);
        let state = tau.as_state(sys.algebra());
        for x in 0..3 {
            for y in 0..3 {
                let a = sys.algebra().random_element(&mut rng);
                let f = Monomial::new(mi(&[x]), a, mi(&[y]));
                let v = vacuum_functional(&rep, &state, &MonomialSum::from(f.clone())).unwrap();
                assert!((v - eval_kms_infinity(&tau, &f)).norm() < 1e-14);
            }
        }
        // beyond the grid the value is still the exact zero
        let far = Monomial::new(mi(&[7]), sys.algebra().unit(), mi(&[0]));
        assert_eq!(vacuum_functional(&rep, &state, &MonomialSum::from(far)).unwrap(), ZERO);
    }

    #[test]
    fn vacuum_is_not_finite_beta_kms() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::commutative(1).unwrap(), 1).unwrap();
        let rep = build_representation(&sys, 4).unwrap();
        let state = TracialState::new(sys.algebra(), vec![1.0]).unwrap().as_state(sys.algebra());
        let psi = VacuumFunctional::new(&rep, &state);
        let report = verify_kms(&psi, &KmsParams::uniform(1, 1.0, 1e-9).unwrap(), &Scope::new(1), 1e-9).unwrap();
        assert!(!report.passed());
        assert!(report
            .violations
            .iter()
            .any(|v| !v.f.x.is_zero() || !v.f.y.is_zero()));
    }

    #[test]
    fn triple_export() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::commutative(1).unwrap(), 1).unwrap();
        let rep = build_representation(&sys, 1).unwrap();
        let text = rep.shift(&mi(&[1])).to_triples();
        assert_eq!(text, "1 0 1.0000000000000000e0+0.0000000000000000e0i\n");
    }

    #[test]
    fn restricted_norm_bound_is_an_upper_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let entries: Vec<(usize, usize, Complex64)> = (0..60)
            .map(|_| {
                (
                    rng.gen_range(0..20),
                    rng.gen_range(0..20),
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
            })
            .collect();
        let op = FockOperator::from_triplets(20, entries);
        let cols: Vec<usize> = (0..20).collect();
        let exact = op.restricted_norm(&cols);
        let dense = op.to_dense();
        let frob = dense.norm();
        assert!(exact <= frob + 1e-12);
    }
}
