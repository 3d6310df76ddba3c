//! Finite-dimensional C*-algebras `M_{d_1} ⊕ ... ⊕ M_{d_B}`, their elements,
//! ideals, states and validated unital *-endomorphisms.
//!
//! Every closed two-sided ideal of such an algebra is a sum of full blocks,
//! so ideal calculus below is boolean algebra on block subsets. Kernels,
//! annihilators and preimages all rely on this.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, CMatrix, CVector, ONE, ZERO};

/// Tolerance for structural checks (multiplicativity, kernels, ideals).
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Tolerance for arithmetic identities.
pub const ARITHMETIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAlgebra {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockAlgebra {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidInput("algebra needs at least one block".into()));
        }
        if let Some(b) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidInput(format!("block {} has dimension 0", b + 1)));
        }
        Ok(Self::from_dims(dims))
    }

    /// `C^k`, the commutative algebra with `k` one-dimensional blocks.
    pub fn commutative(k: usize) -> Result<Self> {
        Self::new(vec![1; k])
    }

    fn from_dims(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in &dims {
            offsets.push(total);
            total += d * d;
        }
        BlockAlgebra {
            dims,
            offsets,
            total,
        }
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    /// Coordinate dimension `sum_b d_b^2`.
    pub fn dim(&self) -> usize {
        self.total
    }

    /// Dimension `sum_b d_b` of the standard representation.
    pub fn rep_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Only quotients by the full algebra are zero.
    pub fn is_zero(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn block_offset(&self, b: usize) -> usize {
        self.offsets[b]
    }

    pub fn zero(&self) -> AlgebraElement {
        AlgebraElement {
            blocks: self.dims.iter().map(|&d| CMatrix::zeros(d, d)).collect(),
        }
    }

    pub fn unit(&self) -> AlgebraElement {
        AlgebraElement {
            blocks: self.dims.iter().map(|&d| CMatrix::identity(d, d)).collect(),
        }
    }

    /// Central projection `1_b` onto block `b`.
    pub fn central_projection(&self, b: usize) -> AlgebraElement {
        let mut e = self.zero();
        e.blocks[b] = CMatrix::identity(self.dims[b], self.dims[b]);
        e
    }

    /// The projection `1_I = sum_{b in I} 1_b`.
    pub fn ideal_projection(&self, ideal: &Ideal) -> AlgebraElement {
        let mut e = self.zero();
        for b in ideal.blocks() {
            e.blocks[b] = CMatrix::identity(self.dims[b], self.dims[b]);
        }
        e
    }

    pub fn matrix_unit(&self, b: usize, i: usize, j: usize) -> AlgebraElement {
        let mut e = self.zero();
        e.blocks[b][(i, j)] = ONE;
        e
    }

    /// Matrix units in coordinate order (block, then row-major).
    pub fn basis(&self) -> Vec<AlgebraElement> {
        let mut out = Vec::with_capacity(self.total);
        for (b, &d) in self.dims.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    out.push(self.matrix_unit(b, i, j));
                }
            }
        }
        out
    }

    /// `(block, row, col)` of coordinate `k`.
    pub fn coordinate_label(&self, k: usize) -> (usize, usize, usize) {
        let b = self.offsets.partition_point(|&o| o <= k) - 1;
        let local = k - self.offsets[b];
        (b, local / self.dims[b], local % self.dims[b])
    }

    pub fn to_coords(&self, a: &AlgebraElement) -> CVector {
        assert!(self.owns(a), "element does not belong to this algebra");
        let mut v = CVector::zeros(self.total);
        for (b, m) in a.blocks.iter().enumerate() {
            let d = self.dims[b];
            for i in 0..d {
                for j in 0..d {
                    v[self.offsets[b] + i * d + j] = m[(i, j)];
                }
            }
        }
        v
    }

    pub fn from_coords(&self, v: &CVector) -> AlgebraElement {
        assert_eq!(v.len(), self.total, "coordinate vector has wrong length");
        let blocks = self
            .dims
            .iter()
            .zip(&self.offsets)
            .map(|(&d, &o)| CMatrix::from_fn(d, d, |i, j| v[o + i * d + j]))
            .collect();
        AlgebraElement { blocks }
    }

    pub fn owns(&self, a: &AlgebraElement) -> bool {
        a.blocks.len() == self.dims.len()
            && a.blocks
                .iter()
                .zip(&self.dims)
                .all(|(m, &d)| m.nrows() == d && m.ncols() == d)
    }

    pub fn check(&self, a: &AlgebraElement) -> Result<()> {
        if self.owns(a) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "element shape {:?} does not match block dims {:?}",
                a.shape(),
                self.dims
            )))
        }
    }

    /// Entries uniform in the unit square of the complex plane.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> AlgebraElement {
        let blocks = self
            .dims
            .iter()
            .map(|&d| {
                CMatrix::from_fn(d, d, |_, _| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        AlgebraElement { blocks }
    }
}

impl fmt::Display for BlockAlgebra {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dims.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .dims
            .iter()
            .map(|&d| if d == 1 { "C".to_string() } else { format!("M{d}") })
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    pub blocks: Vec<CMatrix>,
}

impl AlgebraElement {
    pub fn shape(&self) -> Vec<usize> {
        self.blocks.iter().map(|m| m.nrows()).collect()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.shape() == b.shape())
    }

    fn shape_error(&self, other: &Self) -> Error {
        Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape(), other.shape()))
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(self.shape_error(other));
        }
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn checked_mul(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(self.shape_error(other));
        }
        Ok(self.zip(other, |a, b| a * b))
    }

    fn zip(&self, other: &Self, f: impl Fn(&CMatrix, &CMatrix) -> CMatrix) -> Self {
        AlgebraElement {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        AlgebraElement {
            blocks: self.blocks.iter().map(|m| m.adjoint()).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        AlgebraElement {
            blocks: self.blocks.iter().map(|m| m * c).collect(),
        }
    }

    /// C*-norm: the largest block operator norm.
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(spectral_norm).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|m| m.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.max_abs() <= tol
    }

    pub fn dist(&self, other: &Self) -> f64 {
        (self - other).norm()
    }

    /// Keeps the listed blocks, zeroing the rest.
    pub fn restrict(&self, keep: &Ideal) -> Self {
        AlgebraElement {
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(b, m)| {
                    if keep.contains(b) {
                        m.clone()
                    } else {
                        CMatrix::zeros(m.nrows(), m.ncols())
                    }
                })
                .collect(),
        }
    }
}

impl<'a> Add<&'a AlgebraElement> for &'a AlgebraElement {
    type Output = AlgebraElement;
    fn add(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.checked_add(rhs).expect("algebra element shape mismatch")
    }
}

impl<'a> Sub<&'a AlgebraElement> for &'a AlgebraElement {
    type Output = AlgebraElement;
    fn sub(self, rhs: &AlgebraElement) -> AlgebraElement {
        assert!(self.same_shape(rhs), "algebra element shape mismatch");
        self.zip(rhs, |a, b| a - b)
    }
}

impl<'a> Mul<&'a AlgebraElement> for &'a AlgebraElement {
    type Output = AlgebraElement;
    fn mul(self, rhs: &AlgebraElement) -> AlgebraElement {
        self.checked_mul(rhs).expect("algebra element shape mismatch")
    }
}

/// A closed two-sided ideal, i.e. a subset of blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ideal {
    mask: Vec<bool>,
}

impl Ideal {
    pub fn empty(num_blocks: usize) -> Self {
        Ideal {
            mask: vec![false; num_blocks],
        }
    }

    pub fn full(num_blocks: usize) -> Self {
        Ideal {
            mask: vec![true; num_blocks],
        }
    }

    pub fn from_blocks(num_blocks: usize, blocks: &[usize]) -> Self {
        let mut mask = vec![false; num_blocks];
        for &b in blocks {
            mask[b] = true;
        }
        Ideal { mask }
    }

    pub fn num_blocks(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, b: usize) -> bool {
        self.mask[b]
    }

    pub fn blocks(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&b| self.mask[b]).collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        Ideal {
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Ideal {
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !*a || *b)
    }
}

/// Blocks are printed 1-based, e.g. `{1,3}`.
impl fmt::Display for Ideal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.blocks().iter().map(|b| (b + 1).to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// For block ideals `J^perp` is the complementary set of blocks.
pub fn annihilator(ideal: &Ideal) -> Ideal {
    Ideal {
        mask: ideal.mask.iter().map(|m| !m).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    Shape { rows: usize, cols: usize, expected: usize },
    NotUnital,
    NotMultiplicative { left: usize, right: usize },
    NotAdjointPreserving { basis: usize },
}

/// Why a linear map failed to be a unital *-endomorphism. Basis indices refer
/// to [`BlockAlgebra::basis`].
#[derive(Debug, Clone, PartialEq)]
pub struct EndomorphismViolation {
    pub kind: ViolationKind,
    pub defect: f64,
}

impl fmt::Display for EndomorphismViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::Shape {
                rows,
                cols,
                expected,
            } => write!(f, "matrix is {rows}x{cols}, expected {expected}x{expected}"),
            ViolationKind::NotUnital => write!(f, "not unital (defect {:.3e})", self.defect),
            ViolationKind::NotMultiplicative { left, right } => write!(
                f,
                "not multiplicative on basis pair ({left},{right}) (defect {:.3e})",
                self.defect
            ),
            ViolationKind::NotAdjointPreserving { basis } => write!(
                f,
                "does not preserve adjoints on basis element {basis} (defect {:.3e})",
                self.defect
            ),
        }
    }
}

/// A linear map on coordinates certified to be a unital *-endomorphism.
#[derive(Debug, Clone, PartialEq)]
pub struct StarEndomorphism {
    algebra: BlockAlgebra,
    matrix: CMatrix,
    /// Largest defect observed during validation.
    pub certified_defect: f64,
}

impl StarEndomorphism {
    pub fn identity(algebra: &BlockAlgebra) -> Self {
        StarEndomorphism {
            algebra: algebra.clone(),
            matrix: CMatrix::identity(algebra.dim(), algebra.dim()),
            certified_defect: 0.0,
        }
    }

    pub fn algebra(&self) -> &BlockAlgebra {
        &self.algebra
    }

    /// Column convention: `coords(phi(a)) = M * coords(a)`.
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, a: &AlgebraElement) -> AlgebraElement {
        self.algebra
            .from_coords(&(&self.matrix * self.algebra.to_coords(a)))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.algebra, other.algebra, "composing maps on different algebras");
        StarEndomorphism {
            algebra: self.algebra.clone(),
            matrix: &self.matrix * &other.matrix,
            certified_defect: self.certified_defect.max(other.certified_defect),
        }
    }

    pub fn is_injective(&self) -> bool {
        kernel_ideal(self).is_empty()
    }
}

/// Checks multiplicativity on all matrix-unit pairs, adjoint preservation and
/// unitality, in that order, to `tol`.
pub fn validate_endomorphism(
    algebra: &BlockAlgebra,
    matrix: CMatrix,
    tol: f64,
) -> std::result::Result<StarEndomorphism, EndomorphismViolation> {
    let dim = algebra.dim();
    if matrix.nrows() != dim || matrix.ncols() != dim {
        return Err(EndomorphismViolation {
            kind: ViolationKind::Shape {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
                expected: dim,
            },
            defect: f64::INFINITY,
        });
    }
    let candidate = StarEndomorphism {
        algebra: algebra.clone(),
        matrix,
        certified_defect: 0.0,
    };
    let mut worst: f64 = 0.0;

    let basis = algebra.basis();
    let images: Vec<AlgebraElement> = basis.iter().map(|e| candidate.apply(e)).collect();
    for (i, (e, ei)) in basis.iter().zip(&images).enumerate() {
        for (j, (f, fj)) in basis.iter().zip(&images).enumerate() {
            let defect = candidate.apply(&(e * f)).dist(&(ei * fj));
            if defect > tol {
                return Err(EndomorphismViolation {
                    kind: ViolationKind::NotMultiplicative { left: i, right: j },
                    defect,
                });
            }
            worst = worst.max(defect);
        }
    }
    for (k, (e, img)) in basis.iter().zip(&images).enumerate() {
        let defect = candidate.apply(&e.adjoint()).dist(&img.adjoint());
        if defect > tol {
            return Err(EndomorphismViolation {
                kind: ViolationKind::NotAdjointPreserving { basis: k },
                defect,
            });
        }
        worst = worst.max(defect);
    }
    let unit = algebra.unit();
    let defect = candidate.apply(&unit).dist(&unit);
    if defect > tol {
        return Err(EndomorphismViolation {
            kind: ViolationKind::NotUnital,
            defect,
        });
    }
    worst = worst.max(defect);

    Ok(StarEndomorphism {
        certified_defect: worst,
        ..candidate
    })
}

/// Block `b` is in the kernel iff `phi(1_b)` vanishes.
pub fn kernel_ideal(phi: &StarEndomorphism) -> Ideal {
    kernel_ideal_with_tol(phi, STRUCTURAL_TOL)
}

pub fn kernel_ideal_with_tol(phi: &StarEndomorphism, tol: f64) -> Ideal {
    let alg = phi.algebra();
    let blocks: Vec<usize> = (0..alg.num_blocks())
        .filter(|&b| phi.apply(&alg.central_projection(b)).norm() <= tol)
        .collect();
    Ideal::from_blocks(alg.num_blocks(), &blocks)
}

/// Blocks mapped by `phi` into `ideal`.
pub fn preimage_ideal(phi: &StarEndomorphism, ideal: &Ideal) -> Ideal {
    preimage_ideal_with_tol(phi, ideal, STRUCTURAL_TOL)
}

pub fn preimage_ideal_with_tol(phi: &StarEndomorphism, ideal: &Ideal, tol: f64) -> Ideal {
    let alg = phi.algebra();
    let outside = annihilator(ideal);
    let blocks: Vec<usize> = (0..alg.num_blocks())
        .filter(|&b| {
            phi.apply(&alg.central_projection(b))
                .restrict(&outside)
                .norm()
                <= tol
        })
        .collect();
    Ideal::from_blocks(alg.num_blocks(), &blocks)
}

/// `A/I` realised by dropping the blocks of `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quotient {
    pub algebra: BlockAlgebra,
    /// Blocks of the parent algebra that survive, in order.
    pub kept: Vec<usize>,
    parent: BlockAlgebra,
}

impl Quotient {
    /// The quotient by the whole algebra is the zero algebra.
    pub fn is_degenerate(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn project(&self, a: &AlgebraElement) -> AlgebraElement {
        assert!(self.parent.owns(a), "element does not belong to the parent algebra");
        AlgebraElement {
            blocks: self.kept.iter().map(|&b| a.blocks[b].clone()).collect(),
        }
    }

    /// Canonical section: pad the dropped blocks with zeros.
    pub fn lift(&self, q: &AlgebraElement) -> AlgebraElement {
        let mut a = self.parent.zero();
        for (k, &b) in self.kept.iter().enumerate() {
            a.blocks[b] = q.blocks[k].clone();
        }
        a
    }
}

pub fn quotient(algebra: &BlockAlgebra, ideal: &Ideal) -> Quotient {
    let kept: Vec<usize> = (0..algebra.num_blocks())
        .filter(|&b| !ideal.contains(b))
        .collect();
    let dims = kept.iter().map(|&b| algebra.block_dims()[b]).collect();
    Quotient {
        algebra: BlockAlgebra::from_dims(dims),
        kept,
        parent: algebra.clone(),
    }
}

/// A state `a -> sum_b tr(rho_b a_b)` given by block densities.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    rho: Vec<CMatrix>,
}

impl State {
    /// Densities must be Hermitian positive semidefinite with total trace 1
    /// up to `STRUCTURAL_TOL`; the mass is then normalised exactly.
    pub fn new(algebra: &BlockAlgebra, rho: Vec<CMatrix>) -> Result<Self> {
        let candidate = AlgebraElement { blocks: rho };
        algebra.check(&candidate)?;
        let mut mass = 0.0;
        for (b, m) in candidate.blocks.iter().enumerate() {
            if (m - m.adjoint()).iter().any(|z| z.norm() > STRUCTURAL_TOL) {
                return Err(Error::InvalidInput(format!("density of block {} is not Hermitian", b + 1)));
            }
            let eig = SymmetricEigen::new(m.clone());
            if eig.eigenvalues.iter().any(|&l| l < -STRUCTURAL_TOL) {
                return Err(Error::InvalidInput(format!(
                    "density of block {} is not positive",
                    b + 1
                )));
            }
            mass += m.trace().re;
        }
        if (mass - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::InvalidInput(format!("state has total mass {mass}")));
        }
        Ok(State {
            rho: candidate
                .blocks
                .into_iter()
                .map(|m| m.map(|z| z / mass))
                .collect(),
        })
    }

    pub fn densities(&self) -> &[CMatrix] {
        &self.rho
    }

    pub fn eval(&self, a: &AlgebraElement) -> Complex64 {
        self.rho
            .iter()
            .zip(&a.blocks)
            .map(|(r, m)| (r * m).trace())
            .fold(ZERO, |acc, z| acc + z)
    }

    /// Eigenpairs `(weight, vector)` of every block density with positive
    /// weight; `sum weight * <a v, v>` reproduces the state.
    pub fn purification(&self) -> Vec<(usize, f64, CVector)> {
        let mut out = Vec::new();
        for (b, m) in self.rho.iter().enumerate() {
            let eig = SymmetricEigen::new(m.clone());
            for k in 0..m.nrows() {
                let w = eig.eigenvalues[k];
                if w > 0.0 {
                    out.push((b, w, eig.eigenvectors.column(k).into_owned()));
                }
            }
        }
        out
    }
}

/// True iff every density is a multiple of the identity, i.e. `tau(ab) = tau(ba)`.
pub fn is_tracial(state: &State, tol: f64) -> bool {
    state.rho.iter().all(|m| {
        let d = m.nrows();
        let mean = m.trace() / d as f64;
        let scalar = DMatrix::from_diagonal_element(d, d, mean);
        (m - scalar).iter().all(|z| z.norm() <= tol)
    })
}

/// A tracial state `a -> sum_b w_b tr(a_b)/d_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TracialState {
    weights: Vec<f64>,
    dims: Vec<usize>,
}

impl TracialState {
    pub fn new(algebra: &BlockAlgebra, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != algebra.num_blocks() {
            return Err(Error::DimensionMismatch {
                expected: algebra.num_blocks(),
                found: weights.len(),
            });
        }
        if let Some(b) = weights.iter().position(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput(format!("weight of block {} is negative", b + 1)));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::InvalidInput(format!("trace weights sum to {mass}")));
        }
        Ok(TracialState {
            weights: weights.iter().map(|w| w / mass).collect(),
            dims: algebra.block_dims().to_vec(),
        })
    }

    /// Normalises arbitrary non-negative weights.
    pub fn from_unnormalized(algebra: &BlockAlgebra, weights: Vec<f64>) -> Result<Self> {
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("trace weights have no mass".into()));
        }
        Self::new(algebra, weights.iter().map(|w| w / mass).collect())
    }

    pub fn random<R: Rng + ?Sized>(algebra: &BlockAlgebra, rng: &mut R) -> Self {
        let raw: Vec<f64> = (0..algebra.num_blocks())
            .map(|_| rng.gen_range(0.0..1.0) + 1e-3)
            .collect();
        Self::from_unnormalized(algebra, raw).expect("positive weights")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, a: &AlgebraElement) -> Complex64 {
        self.weights
            .iter()
            .zip(&self.dims)
            .zip(&a.blocks)
            .map(|((&w, &d), m)| m.trace() * (w / d as f64))
            .fold(ZERO, |acc, z| acc + z)
    }

    /// Row vector `r` with `tau(a) = r · coords(a)`.
    pub fn functional(&self, algebra: &BlockAlgebra) -> CVector {
        let mut r = CVector::zeros(algebra.dim());
        for (b, (&w, &d)) in self.weights.iter().zip(&self.dims).enumerate() {
            for i in 0..d {
                r[algebra.block_offset(b) + i * d + i] = Complex64::new(w / d as f64, 0.0);
            }
        }
        r
    }

    pub fn as_state(&self, algebra: &BlockAlgebra) -> State {
        let rho = self
            .weights
            .iter()
            .zip(&self.dims)
            .map(|(&w, &d)| CMatrix::from_diagonal_element(d, d, Complex64::new(w / d as f64, 0.0)))
            .collect();
        State::new(algebra, rho).expect("tracial weights define a state")
    }

    /// Convex combination `s·self + (1-s)·other`.
    pub fn mix(&self, other: &Self, s: f64) -> Self {
        TracialState {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| s * a + (1.0 - s) * b)
                .collect(),
            dims: self.dims.clone(),
        }
    }

    pub fn vanishes_on(&self, ideal: &Ideal, tol: f64) -> bool {
        ideal.blocks().iter().all(|&b| self.weights[b] <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// On C^2 the map `(a,b) -> (a,a)`.
    fn diagonal_doubling() -> (BlockAlgebra, CMatrix) {
        let alg = BlockAlgebra::commutative(2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(1.0), c(0.0)]);
        (alg, m)
    }

    #[test]
    fn element_arithmetic() {
        let alg = BlockAlgebra::new(vec![2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = alg.random_element(&mut rng);
        assert_eq!(a.adjoint().adjoint(), a);
        assert!((&alg.unit() * &a).dist(&a) < ARITHMETIC_TOL);

        let alg2 = BlockAlgebra::new(vec![2]).unwrap();
        let flip = AlgebraElement {
            blocks: vec![CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])],
        };
        assert!((flip.norm() - 1.0).abs() < ARITHMETIC_TOL);
        assert!(alg2.check(&a).is_err());
        assert!(a.checked_mul(&flip).is_err());
    }

    #[test]
    fn coordinates_roundtrip_and_labels() {
        let alg = BlockAlgebra::new(vec![2, 1]).unwrap();
        assert_eq!(alg.dim(), 5);
        assert_eq!(alg.coordinate_label(0), (0, 0, 0));
        assert_eq!(alg.coordinate_label(2), (0, 1, 0));
        assert_eq!(alg.coordinate_label(4), (1, 0, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = alg.random_element(&mut rng);
        assert_eq!(alg.from_coords(&alg.to_coords(&a)), a);
    }

    #[test]
    fn validation_examples() {
        let alg = BlockAlgebra::new(vec![2, 1]).unwrap();
        let id = validate_endomorphism(&alg, CMatrix::identity(5, 5), STRUCTURAL_TOL).unwrap();
        assert!(id.is_injective());

        let (alg, m) = diagonal_doubling();
        let phi = validate_endomorphism(&alg, m, STRUCTURAL_TOL).unwrap();
        assert!(!phi.is_injective());

        // (a,b) -> (a+b, 0)
        let bad = CMatrix::from_row_slice(2, 2, &[c(1.0), c(1.0), c(0.0), c(0.0)]);
        let err = validate_endomorphism(&alg, bad, STRUCTURAL_TOL).unwrap_err();
        assert_eq!(err.kind, ViolationKind::NotMultiplicative { left: 0, right: 1 });
        assert!((err.defect - 1.0).abs() < ARITHMETIC_TOL);

        let err = validate_endomorphism(&alg, CMatrix::identity(3, 3), STRUCTURAL_TOL).unwrap_err();
        assert!(matches!(err.kind, ViolationKind::Shape { .. }));
    }

    #[test]
    fn non_unital_zero_extension_is_reported() {
        // the map (a, b) -> (a, 0) is multiplicative but not unital
        let alg = BlockAlgebra::commutative(2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
        let err = validate_endomorphism(&alg, m, STRUCTURAL_TOL).unwrap_err();
        assert_eq!(err.kind, ViolationKind::NotUnital);
    }

    #[test]
    fn kernels() {
        let (alg, m) = diagonal_doubling();
        let phi = validate_endomorphism(&alg, m, STRUCTURAL_TOL).unwrap();
        assert_eq!(kernel_ideal(&phi), Ideal::from_blocks(2, &[1]));
        assert!(kernel_ideal(&StarEndomorphism::identity(&alg)).is_empty());

        // C^3, (a,b,c) -> (a,b,a): block 3 is killed
        let alg3 = BlockAlgebra::commutative(3).unwrap();
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[c(1.0), c(0.0), c(0.0), c(0.0), c(1.0), c(0.0), c(1.0), c(0.0), c(0.0)],
        );
        let phi3 = validate_endomorphism(&alg3, m, STRUCTURAL_TOL).unwrap();
        assert_eq!(kernel_ideal(&phi3), Ideal::from_blocks(3, &[2]));
    }

    #[test]
    fn annihilator_examples() {
        assert!(annihilator(&Ideal::empty(3)).is_full());
        assert!(annihilator(&Ideal::full(3)).is_empty());
        assert_eq!(annihilator(&Ideal::from_blocks(2, &[1])), Ideal::from_blocks(2, &[0]));
    }

    #[test]
    fn preimages() {
        let (alg, m) = diagonal_doubling();
        let phi = validate_endomorphism(&alg, m, STRUCTURAL_TOL).unwrap();
        assert!(preimage_ideal(&phi, &Ideal::full(2)).is_full());
        // phi(1_2) = 0 lies in I = {1}; phi(1_1) = (1,1) does not
        assert_eq!(
            preimage_ideal(&phi, &Ideal::from_blocks(2, &[0])),
            Ideal::from_blocks(2, &[1])
        );
        let id = StarEndomorphism::identity(&alg);
        let i = Ideal::from_blocks(2, &[0]);
        assert_eq!(preimage_ideal(&id, &i), i);
    }

    #[test]
    fn quotients() {
        let alg = BlockAlgebra::new(vec![2, 1]).unwrap();
        let q = quotient(&alg, &Ideal::empty(2));
        assert_eq!(q.algebra, alg);

        let c2 = BlockAlgebra::commutative(2).unwrap();
        let q = quotient(&c2, &Ideal::from_blocks(2, &[0]));
        assert_eq!(q.algebra.block_dims(), &[1]);
        assert_eq!(q.project(&c2.unit()), q.algebra.unit());

        let q = quotient(&alg, &Ideal::full(2));
        assert!(q.is_degenerate());
        assert!(q.algebra.is_zero());

        let q = quotient(&alg, &Ideal::from_blocks(2, &[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = alg.random_element(&mut rng);
            let b = alg.random_element(&mut rng);
            let lhs = &q.project(&a) * &q.project(&b);
            assert!(lhs.dist(&q.project(&(&a * &b))) < ARITHMETIC_TOL);
            assert_eq!(q.project(&q.lift(&q.project(&a))), q.project(&a));
        }
    }

    #[test]
    fn traciality_of_states() {
        let alg = BlockAlgebra::new(vec![2, 1]).unwrap();
        let tau = TracialState::new(&alg, vec![0.25, 0.75]).unwrap();
        assert!(is_tracial(&tau.as_state(&alg), STRUCTURAL_TOL));

        let m2 = BlockAlgebra::new(vec![2]).unwrap();
        let rho = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
        let sigma = State::new(&m2, vec![rho]).unwrap();
        assert!(!is_tracial(&sigma, STRUCTURAL_TOL));
        let e12 = m2.matrix_unit(0, 0, 1);
        let e21 = m2.matrix_unit(0, 1, 0);
        assert!((sigma.eval(&(&e12 * &e21)) - sigma.eval(&(&e21 * &e12))).norm() > 0.5);

        let c3 = BlockAlgebra::commutative(3).unwrap();
        let rho = vec![
            CMatrix::from_element(1, 1, c(0.2)),
            CMatrix::from_element(1, 1, c(0.3)),
            CMatrix::from_element(1, 1, c(0.5)),
        ];
        assert!(is_tracial(&State::new(&c3, rho).unwrap(), STRUCTURAL_TOL));
    }

    #[test]
    fn state_validation() {
        let c2 = BlockAlgebra::commutative(2).unwrap();
        let bad_mass = vec![CMatrix::from_element(1, 1, c(0.5)), CMatrix::from_element(1, 1, c(0.6))];
        assert!(State::new(&c2, bad_mass).is_err());
        let negative = vec![CMatrix::from_element(1, 1, c(1.5)), CMatrix::from_element(1, 1, c(-0.5))];
        assert!(State::new(&c2, negative).is_err());
        assert!(TracialState::new(&c2, vec![0.5, 0.6]).is_err());
        assert!(TracialState::new(&c2, vec![1.0]).is_err());
        let tau = TracialState::new(&c2, vec![0.3, 0.7]).unwrap();
        assert!((tau.eval(&c2.unit()) - c(1.0)).norm() < ARITHMETIC_TOL);
    }

    #[test]
    fn functional_matches_eval() {
        let alg = BlockAlgebra::new(vec![2, 1, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tau = TracialState::random(&alg, &mut rng);
        let r = tau.functional(&alg);
        for _ in 0..5 {
            let a = alg.random_element(&mut rng);
            let via_row = r.transpose() * alg.to_coords(&a);
            assert!((via_row[(0, 0)] - tau.eval(&a)).norm() < ARITHMETIC_TOL);
        }
    }
}
