//! Actions of `Z_+^n` by commuting unital *-endomorphisms, the invariance
//! ideals `I_x`, and the truncated tail-adding dilation.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::algebra::{
    annihilator, kernel_ideal_with_tol, preimage_ideal_with_tol, quotient, validate_endomorphism,
    AlgebraElement, BlockAlgebra, Ideal, Quotient, StarEndomorphism, TracialState, STRUCTURAL_TOL,
};
use crate::error::{Error, Result};
use crate::lattice::{Grid, MultiIndex};
use crate::linalg::{max_abs_diff, numerical_rank, CMatrix, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalSystem {
    algebra: BlockAlgebra,
    generators: Vec<StarEndomorphism>,
    /// Largest `|α_i α_j - α_j α_i|` entry seen at construction.
    pub commutation_defect: f64,
    tol: f64,
}

impl DynamicalSystem {
    pub fn new(algebra: BlockAlgebra, generators: Vec<StarEndomorphism>) -> Result<Self> {
        Self::with_tol(algebra, generators, STRUCTURAL_TOL)
    }

    pub fn with_tol(
        algebra: BlockAlgebra,
        generators: Vec<StarEndomorphism>,
        tol: f64,
    ) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::InvalidInput("a system needs at least one generator".into()));
        }
        if let Some(i) = generators.iter().position(|g| g.algebra() != &algebra) {
            return Err(Error::InvalidInput(format!(
                "generator {} acts on a different algebra",
                i + 1
            )));
        }
        let mut worst: f64 = 0.0;
        for i in 0..generators.len() {
            for j in i + 1..generators.len() {
                let ij = generators[i].matrix() * generators[j].matrix();
                let ji = generators[j].matrix() * generators[i].matrix();
                let defect = max_abs_diff(&ij, &ji);
                if defect > tol {
                    return Err(Error::InvalidInput(format!(
                        "generators {} and {} do not commute (defect {defect:.3e})",
                        i + 1,
                        j + 1
                    )));
                }
                worst = worst.max(defect);
            }
        }
        Ok(DynamicalSystem {
            algebra,
            generators,
            commutation_defect: worst,
            tol,
        })
    }

    /// Validates each coordinate matrix, then commutation.
    pub fn from_matrices(algebra: BlockAlgebra, matrices: Vec<CMatrix>) -> Result<Self> {
        let generators = matrices
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                validate_endomorphism(&algebra, m, STRUCTURAL_TOL)
                    .map_err(|v| Error::InvalidInput(format!("generator {}: {v}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(algebra, generators)
    }

    /// The identity action of `Z_+^n` on `algebra`.
    pub fn trivial(algebra: BlockAlgebra, n: usize) -> Result<Self> {
        let id = StarEndomorphism::identity(&algebra);
        Self::new(algebra, vec![id; n])
    }

    pub fn algebra(&self) -> &BlockAlgebra {
        &self.algebra
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn generator(&self, i: usize) -> &StarEndomorphism {
        &self.generators[i]
    }

    pub fn generators(&self) -> &[StarEndomorphism] {
        &self.generators
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `α_x = α_1^{x_1} ∘ ... ∘ α_n^{x_n}`.
    pub fn compose_action(&self, x: &MultiIndex) -> StarEndomorphism {
        assert_eq!(x.dim(), self.rank(), "multi-index dimension mismatch");
        let mut acc = StarEndomorphism::identity(&self.algebra);
        for (i, &k) in x.coords().iter().enumerate() {
            for _ in 0..k {
                acc = acc.compose(&self.generators[i]);
            }
        }
        acc
    }

    /// `α_x(a)` by repeated application of the generators.
    pub fn act(&self, x: &MultiIndex, a: &AlgebraElement) -> AlgebraElement {
        assert_eq!(x.dim(), self.rank(), "multi-index dimension mismatch");
        let mut v = self.algebra.to_coords(a);
        for (i, &k) in x.coords().iter().enumerate() {
            for _ in 0..k {
                v = self.generators[i].matrix() * v;
            }
        }
        self.algebra.from_coords(&v)
    }

    /// Injective endomorphisms of a finite-dimensional algebra are automorphisms.
    pub fn is_automorphic(&self) -> bool {
        self.generators
            .iter()
            .all(|g| kernel_ideal_with_tol(g, self.tol).is_empty())
    }

    /// `α_x^{-1}(a)`; only for automorphic systems.
    pub fn act_inverse(&self, x: &MultiIndex, a: &AlgebraElement) -> Result<AlgebraElement> {
        if !self.is_automorphic() {
            return Err(Error::InvalidInput("system is not automorphic".into()));
        }
        let forward = self.compose_action(x);
        let inverse = forward
            .matrix()
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvariantFault("automorphism matrix is singular".into()))?;
        Ok(self
            .algebra
            .from_coords(&(inverse * self.algebra.to_coords(a))))
    }

    pub fn invariance_ideal(&self, x: &MultiIndex) -> IdealComputation {
        invariance_ideal(self, x)
    }
}

/// Result of the fixed-point computation of `I_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealComputation {
    pub ideal: Ideal,
    /// `(⋂_{i in supp x} ker α_i)^perp`.
    pub base: Ideal,
    /// Grid level of `x^perp` after which one further level changed nothing.
    pub stabilized_at: usize,
    /// Value after each grid level, starting at level 0.
    pub chain: Vec<Ideal>,
}

/// `I_x = ⋂_{y in x^perp} α_y^{-1}((⋂_{i in supp x} ker α_i)^perp)`, with
/// `I_0 = {0}`.
///
/// The intersection over the infinite set `x^perp` is taken over
/// `x^perp ∩ F_k` for `k = 0, 1, ...` and stopped once one full extra level
/// leaves the block subset unchanged.
pub fn invariance_ideal(sys: &DynamicalSystem, x: &MultiIndex) -> IdealComputation {
    let blocks = sys.algebra().num_blocks();
    if x.is_zero() {
        let zero = Ideal::empty(blocks);
        return IdealComputation {
            ideal: zero.clone(),
            base: zero.clone(),
            stabilized_at: 0,
            chain: vec![zero],
        };
    }
    let support = x.support();
    let mut common_kernel = Ideal::full(blocks);
    for &i in &support {
        common_kernel = common_kernel.intersect(&kernel_ideal_with_tol(sys.generator(i), sys.tol()));
    }
    let base = annihilator(&common_kernel);

    let n = sys.rank();
    let mut current = base.clone();
    let mut chain = vec![current.clone()];
    let mut level = 1;
    loop {
        let grid = Grid::new(level, n).expect("perp grid within size guard");
        let mut next = current.clone();
        for y in grid.iter().filter(|y| y.max_coord() == level && y.is_perp(x)) {
            next = next.intersect(&preimage_ideal_with_tol(
                &sys.compose_action(&y),
                &base,
                sys.tol(),
            ));
        }
        chain.push(next.clone());
        if next == current {
            return IdealComputation {
                ideal: next,
                base,
                stabilized_at: level - 1,
                chain,
            };
        }
        current = next;
        level += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    pub injective: bool,
    pub kernels: Vec<Ideal>,
    /// `(generator, block)` with `α_generator(1_block) = 0`, both 0-based.
    pub witness: Option<(usize, usize)>,
}

/// Injective iff every `ker α_i` is zero iff every `I_{e_i}` is the whole
/// algebra. Both are computed; disagreement is an implementation fault.
pub fn classify_injectivity(sys: &DynamicalSystem) -> Result<InjectivityReport> {
    let n = sys.rank();
    let kernels: Vec<Ideal> = sys
        .generators()
        .iter()
        .map(|g| kernel_ideal_with_tol(g, sys.tol()))
        .collect();
    let by_kernels = kernels.iter().all(Ideal::is_empty);
    let by_ideals = (0..n).all(|i| invariance_ideal(sys, &MultiIndex::unit(n, i)).ideal.is_full());
    if by_kernels != by_ideals {
        return Err(Error::InvariantFault(format!(
            "kernel test says injective={by_kernels}, ideal test says {by_ideals}"
        )));
    }
    let witness = kernels
        .iter()
        .enumerate()
        .find_map(|(i, k)| k.blocks().first().map(|&b| (i, b)));
    Ok(InjectivityReport {
        injective: by_kernels,
        kernels,
        witness,
    })
}

/// The tail-adding dilation truncated to `F_m`:
/// `B = ⊕_{x in F_m} A/I_x` with generators
/// `β_i(q_x(a) e_x) = q_x α_i(a) e_x + q_{x+e_i}(a) e_{x+e_i}` if `x_i = 0`,
/// and `q_{x+e_i}(a) e_{x+e_i}` otherwise. Summands pushed past level `m` are
/// dropped; their sources are boundary points.
#[derive(Debug, Clone)]
pub struct DilatedSystem {
    base: DynamicalSystem,
    m: usize,
    points: Vec<MultiIndex>,
    index: BTreeMap<MultiIndex, usize>,
    ideals: Vec<Ideal>,
    summands: Vec<Quotient>,
    offsets: Vec<usize>,
    algebra: BlockAlgebra,
    generators: Vec<CMatrix>,
}

impl DilatedSystem {
    pub fn level(&self) -> usize {
        self.m
    }

    pub fn base(&self) -> &DynamicalSystem {
        &self.base
    }

    /// `B` as a block algebra; blocks are listed point by point in grid order.
    pub fn algebra(&self) -> &BlockAlgebra {
        &self.algebra
    }

    pub fn points(&self) -> &[MultiIndex] {
        &self.points
    }

    pub fn ideal_at(&self, x: &MultiIndex) -> Option<&Ideal> {
        self.index.get(x).map(|&k| &self.ideals[k])
    }

    pub fn summand(&self, x: &MultiIndex) -> Option<&Quotient> {
        self.index.get(x).map(|&k| &self.summands[k])
    }

    /// Points with some coordinate equal to `m`.
    pub fn is_boundary(&self, x: &MultiIndex) -> bool {
        x.max_coord() >= self.m
    }

    pub fn interior_points(&self) -> Vec<MultiIndex> {
        self.points
            .iter()
            .filter(|x| !self.is_boundary(x))
            .cloned()
            .collect()
    }

    /// Block dimensions of each nonzero summand, keyed by point.
    pub fn summary(&self) -> Vec<(MultiIndex, Vec<usize>)> {
        self.points
            .iter()
            .zip(&self.summands)
            .filter(|(_, q)| !q.is_degenerate())
            .map(|(x, q)| (x.clone(), q.algebra.block_dims().to_vec()))
            .collect()
    }

    pub fn generator_matrix(&self, i: usize) -> &CMatrix {
        &self.generators[i]
    }

    /// Runs the full *-endomorphism validation on every `β_i`.
    pub fn validated_generators(&self) -> Result<Vec<StarEndomorphism>> {
        self.generators
            .iter()
            .enumerate()
            .map(|(i, m)| {
                validate_endomorphism(&self.algebra, m.clone(), STRUCTURAL_TOL).map_err(|v| {
                    Error::InvariantFault(format!("dilated generator {}: {v}", i + 1))
                })
            })
            .collect()
    }

    /// `q_x(a) ⊗ e_x` as an element of `B`.
    pub fn embed(&self, x: &MultiIndex, a: &AlgebraElement) -> Result<AlgebraElement> {
        let k = *self
            .index
            .get(x)
            .ok_or_else(|| Error::IncreaseTruncation(format!("point {x} outside F_{}", self.m)))?;
        let mut out = self.algebra.zero();
        let q = self.summands[k].project(a);
        let first_block = self.first_block(k);
        for (j, m) in q.blocks.into_iter().enumerate() {
            out.blocks[first_block + j] = m;
        }
        Ok(out)
    }

    /// Component of `b` at point `x`, lifted to `A` by zero padding.
    pub fn component(&self, b: &AlgebraElement, x: &MultiIndex) -> AlgebraElement {
        let k = self.index[x];
        let first_block = self.first_block(k);
        let q = &self.summands[k];
        let local = AlgebraElement {
            blocks: (0..q.kept.len())
                .map(|j| b.blocks[first_block + j].clone())
                .collect(),
        };
        q.lift(&local)
    }

    fn first_block(&self, k: usize) -> usize {
        self.summands[..k].iter().map(|q| q.kept.len()).sum()
    }

    /// `β_v(b)` by repeated application; exact whenever `v <= m·1` and `b`
    /// is supported at the origin.
    pub fn act(&self, v: &MultiIndex, b: &AlgebraElement) -> AlgebraElement {
        let mut c = self.algebra.to_coords(b);
        for (i, &k) in v.coords().iter().enumerate() {
            for _ in 0..k {
                c = &self.generators[i] * c;
            }
        }
        self.algebra.from_coords(&c)
    }

    /// Compression of `β_i` to the origin, as a matrix on the coordinates of `A`.
    pub fn compression(&self, i: usize) -> CMatrix {
        let a_dim = self.base.algebra().dim();
        let o = self.offsets[0];
        self.generators[i].view((o, o), (a_dim, a_dim)).into_owned()
    }
}

pub fn dilate(sys: &DynamicalSystem, m: usize) -> Result<DilatedSystem> {
    if m == 0 {
        return Err(Error::InvalidInput("dilation level must be at least 1".into()));
    }
    let n = sys.rank();
    let a = sys.algebra();
    let points: Vec<MultiIndex> = Grid::new(m, n)?.iter().collect();
    let index: BTreeMap<MultiIndex, usize> =
        points.iter().cloned().enumerate().map(|(k, x)| (x, k)).collect();
    let ideals: Vec<Ideal> = points
        .iter()
        .map(|x| invariance_ideal(sys, &x.clamp_unit()).ideal)
        .collect();
    let summands: Vec<Quotient> = ideals.iter().map(|i| quotient(a, i)).collect();

    let mut dims = Vec::new();
    let mut offsets = Vec::with_capacity(points.len());
    let mut total = 0;
    for q in &summands {
        offsets.push(total);
        total += q.algebra.dim();
        dims.extend_from_slice(q.algebra.block_dims());
    }
    if dims.is_empty() {
        return Err(Error::InvariantFault("dilation is the zero algebra".into()));
    }
    let algebra = BlockAlgebra::new(dims)?;

    // Well-definedness of the two-case formula on the truncated grid.
    for (k, x) in points.iter().enumerate() {
        for i in 0..n {
            let up = MultiIndex::new({
                let mut c = x.coords().to_vec();
                c[i] += 1;
                c
            });
            if x.coords()[i] == 0 {
                let invariant = preimage_ideal_with_tol(sys.generator(i), &ideals[k], sys.tol());
                if !ideals[k].is_subset(&invariant) {
                    return Err(Error::InvariantFault(format!(
                        "I_{x} is not invariant under generator {}",
                        i + 1
                    )));
                }
            }
            if let Some(&ku) = index.get(&up) {
                if !ideals[k].is_subset(&ideals[ku]) {
                    return Err(Error::InvariantFault(format!("I_{x} is not contained in I_{up}")));
                }
            }
        }
    }

    let mut generators = Vec::with_capacity(n);
    for i in 0..n {
        let mut mat = CMatrix::zeros(total, total);
        for (k, x) in points.iter().enumerate() {
            let q = &summands[k];
            let local_dim = q.algebra.dim();
            let up_index = if x.coords()[i] < m {
                let mut c = x.coords().to_vec();
                c[i] += 1;
                Some(index[&MultiIndex::new(c)])
            } else {
                None
            };
            for col in 0..local_dim {
                let mut unit = q.algebra.zero();
                let (b, r, c) = q.algebra.coordinate_label(col);
                unit.blocks[b][(r, c)] = Complex64::new(1.0, 0.0);
                let lifted = q.lift(&unit);
                let src = offsets[k] + col;
                if x.coords()[i] == 0 {
                    let img = q.project(&sys.generator(i).apply(&lifted));
                    let v = q.algebra.to_coords(&img);
                    for (row, z) in v.iter().enumerate() {
                        if *z != ZERO {
                            mat[(offsets[k] + row, src)] += *z;
                        }
                    }
                }
                if let Some(ku) = up_index {
                    let qu = &summands[ku];
                    let v = qu.algebra.to_coords(&qu.project(&lifted));
                    for (row, z) in v.iter().enumerate() {
                        if *z != ZERO {
                            mat[(offsets[ku] + row, src)] += *z;
                        }
                    }
                }
            }
        }
        generators.push(mat);
    }

    let dilated = DilatedSystem {
        base: sys.clone(),
        m,
        points,
        index,
        ideals,
        summands,
        offsets,
        algebra,
        generators,
    };

    for i in 0..n {
        let defect = max_abs_diff(&dilated.compression(i), sys.generator(i).matrix());
        if defect > sys.tol() {
            return Err(Error::InvariantFault(format!(
                "compression of dilated generator {} differs from α (defect {defect:.3e})",
                i + 1
            )));
        }
        let interior: Vec<usize> = dilated
            .points
            .iter()
            .enumerate()
            .filter(|(_, x)| !dilated.is_boundary(x))
            .flat_map(|(k, _)| {
                let start = dilated.offsets[k];
                start..start + dilated.summands[k].algebra.dim()
            })
            .collect();
        if interior.is_empty() {
            continue;
        }
        let sub = dilated.generators[i].select_columns(interior.iter());
        if numerical_rank(&sub, STRUCTURAL_TOL) < interior.len() {
            return Err(Error::InvariantFault(format!(
                "dilated generator {} is not injective on the interior",
                i + 1
            )));
        }
    }
    Ok(dilated)
}

/// A tracial state on the automorphic extension of the dilation, in one of
/// two finite presentations.
#[derive(Debug, Clone)]
pub enum ExtendedTrace {
    /// The system is automorphic and the trace lives on `A` itself.
    Automorphic(TracialState),
    /// The trace is given on the truncated dilation `B`, read as the
    /// restriction of the extended trace to stage `m·1`.
    Truncated {
        dilation: DilatedSystem,
        trace: TracialState,
    },
}

/// `ψ(V_x a V_y^*) = δ_{x,y} τ(β_{-x}(a))` for a trace `τ` on the automorphic
/// extension of the dilation.
#[derive(Debug, Clone)]
pub struct DilationTrace {
    sys: DynamicalSystem,
    source: ExtendedTrace,
    normalizer: f64,
}

impl DilationTrace {
    pub fn new(sys: &DynamicalSystem, source: ExtendedTrace) -> Result<Self> {
        let normalizer = match &source {
            ExtendedTrace::Automorphic(_) => {
                if !sys.is_automorphic() {
                    return Err(Error::InvalidInput(
                        "an automorphic trace needs an automorphic system".into(),
                    ));
                }
                1.0
            }
            ExtendedTrace::Truncated { dilation, trace } => {
                let b = dilation.algebra();
                if trace.weights().len() != b.num_blocks() {
                    return Err(Error::DimensionMismatch {
                        expected: b.num_blocks(),
                        found: trace.weights().len(),
                    });
                }
                // stage-0 unit pushed to stage m·1
                let top = MultiIndex::splat(sys.rank(), dilation.level());
                let p = dilation.embed(&MultiIndex::zero(sys.rank()), &sys.algebra().unit())?;
                let mass = trace.eval(&dilation.act(&top, &p)).re;
                if !(mass > STRUCTURAL_TOL) {
                    return Err(Error::InvalidInput(
                        "extended trace vanishes on the unit of A".into(),
                    ));
                }
                mass
            }
        };
        Ok(DilationTrace {
            sys: sys.clone(),
            source,
            normalizer,
        })
    }

    pub fn system(&self) -> &DynamicalSystem {
        &self.sys
    }

    pub fn eval(&self, x: &MultiIndex, a: &AlgebraElement, y: &MultiIndex) -> Result<Complex64> {
        if x != y {
            return Ok(ZERO);
        }
        match &self.source {
            ExtendedTrace::Automorphic(tau) => Ok(tau.eval(&self.sys.act_inverse(x, a)?)),
            ExtendedTrace::Truncated { dilation, trace } => {
                let top = MultiIndex::splat(self.sys.rank(), dilation.level());
                let steps = top.checked_sub(x).ok_or_else(|| {
                    Error::IncreaseTruncation(format!(
                        "β_-x for x = {x} needs stage beyond m = {}",
                        dilation.level()
                    ))
                })?;
                let b = dilation.embed(&MultiIndex::zero(self.sys.rank()), a)?;
                Ok(trace.eval(&dilation.act(&steps, &b)) / self.normalizer)
            }
        }
    }
}

/// Builds the functional and verifies it is tracial on monomial products of
/// degree at most `degree`.
pub fn trace_from_dilation(
    sys: &DynamicalSystem,
    source: ExtendedTrace,
    degree: usize,
    tol: f64,
) -> Result<DilationTrace> {
    let psi = DilationTrace::new(sys, source)?;
    let violations = crate::kms::verify_tracial(sys, &psi, degree, tol)?;
    if let Some(v) = violations.first() {
        return Err(Error::NotTracial(v.to_string()));
    }
    Ok(psi)
}
