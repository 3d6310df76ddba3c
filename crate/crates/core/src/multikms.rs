//! Multivariable KMS conditions: corner sets, prescribing sets, and the
//! classification of all prescribing sets by linear feasibility at scope.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::algebra::ARITHMETIC_TOL;
use crate::dynamics::DynamicalSystem;
use crate::error::{Error, Result};
use crate::kms::{scope_monomials, KmsFunctional, Scope};
use crate::lattice::MultiIndex;
use crate::linalg::{least_squares, CMatrix, CVector, ONE, ZERO};
use crate::monomial::{gauge_scale, imaginary_shift, multiply, Monomial};

/// Largest rank for which all `2^(2^n - 1)` prescribing sets are enumerated.
pub const MAX_CLASSIFY_RANK: usize = 4;

/// `C_β = { Σ ε_k β_k e_k }` in bit-pattern order: bit `k` of the position is `ε_k`.
pub fn enumerate_corners(betabar: &[f64]) -> Result<Vec<Vec<f64>>> {
    if betabar.is_empty() {
        return Err(Error::InvalidInput("β̲ must have at least one entry".into()));
    }
    if let Some((index, &value)) = betabar.iter().enumerate().find(|(_, &b)| !(b > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "corner sets need β̲_k > 0; entry {} is {value}",
            index + 1
        )));
    }
    let n = betabar.len();
    Ok((0..1usize << n)
        .map(|k| {
            (0..n)
                .map(|i| if k >> i & 1 == 1 { betabar[i] } else { 0.0 })
                .collect()
        })
        .collect())
}

/// `Λ ⊆ C_β \ {0}`, stored as corner positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PrescribingSet {
    betabar: Vec<f64>,
    corners: Vec<Vec<f64>>,
    members: Vec<usize>,
}

impl PrescribingSet {
    pub fn new(betabar: &[f64], mut members: Vec<usize>) -> Result<Self> {
        let corners = enumerate_corners(betabar)?;
        members.sort_unstable();
        members.dedup();
        if members.first() == Some(&0) {
            return Err(Error::InvalidInput("0 cannot belong to a prescribing set".into()));
        }
        if let Some(&k) = members.iter().find(|&&k| k >= corners.len()) {
            return Err(Error::InvalidInput(format!("no corner at position {k}")));
        }
        Ok(PrescribingSet {
            betabar: betabar.to_vec(),
            corners,
            members,
        })
    }

    /// Bit `k-1` of `mask` selects corner `k`.
    pub fn from_mask(betabar: &[f64], mask: usize) -> Result<Self> {
        let count = (1usize << betabar.len()) - 1;
        if mask >> count != 0 {
            return Err(Error::InvalidInput(format!("mask {mask:#b} has more than {count} bits")));
        }
        Self::new(betabar, (1..=count).filter(|k| mask >> (k - 1) & 1 == 1).collect())
    }

    pub fn betabar(&self) -> &[f64] {
        &self.betabar
    }

    pub fn corners(&self) -> &[Vec<f64>] {
        &self.corners
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, k: usize) -> bool {
        self.members.binary_search(&k).is_ok()
    }

    pub fn mask(&self) -> usize {
        self.members.iter().map(|k| 1 << (k - 1)).sum()
    }

    /// Mask rendered with one digit per nonzero corner, highest corner first.
    pub fn label(&self) -> String {
        let width = self.corners.len() - 1;
        format!("{:0width$b}", self.mask(), width = width)
    }

    /// `Some(S)` when `Λ = { γ : γ_k ≠ 0 for some k in S }` for a proper
    /// nonempty `S`, or `n = 1` and `Λ = {β}`.
    pub fn one_variable_support(&self) -> Option<Vec<usize>> {
        let n = self.betabar.len();
        if n == 1 {
            return (self.members == [1]).then(|| vec![0]);
        }
        (1..(1usize << n) - 1)
            .find(|s| {
                let pattern: Vec<usize> = (1..1usize << n).filter(|k| k & s != 0).collect();
                pattern == self.members
            })
            .map(|s| (0..n).filter(|i| s >> i & 1 == 1).collect())
    }
}

impl fmt::Display for PrescribingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (j, &k) in self.members.iter().enumerate() {
            if j > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", corner_string(&self.corners[k]))?;
        }
        write!(f, "}}")
    }
}

fn corner_string(c: &[f64]) -> String {
    let parts: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(","))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiKmsViolation {
    pub f: Monomial,
    pub g: Monomial,
    pub corner: Vec<f64>,
    pub in_set: bool,
    /// `ψ(f σ_{iγ}(g))`
    pub lhs: Complex64,
    /// `ψ(gf)` if `γ in Λ`, else `ψ(fg)`
    pub rhs: Complex64,
}

impl fmt::Display for MultiKmsViolation {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.in_set { "ψ(gf)" } else { "ψ(fg)" };
        write!(
            out,
            "f = {}, g = {}, γ = {}: ψ(f σ_iγ(g)) = {:.6e}, {side} = {:.6e}",
            self.f,
            self.g,
            corner_string(&self.corner),
            self.lhs,
            self.rhs
        )
    }
}

/// Checks `ψ(f σ_{iγ}(g)) = ψ(gf)` for `γ in Λ` and `= ψ(fg)` for other
/// nonzero corners, over all pairs of scope monomials.
pub fn check_multikms(
    psi: &dyn KmsFunctional,
    lambda: &PrescribingSet,
    scope: &Scope,
    tol: f64,
) -> Result<Vec<MultiKmsViolation>> {
    let sys = psi.system();
    if lambda.betabar().len() != sys.rank() {
        return Err(Error::DimensionMismatch {
            expected: sys.rank(),
            found: lambda.betabar().len(),
        });
    }
    let monomials = scope_monomials(sys, scope)?;
    let mut out = Vec::new();
    for f in &monomials {
        for g in &monomials {
            let fg = psi.eval(&multiply(sys, f, g))?;
            let gf = psi.eval(&multiply(sys, g, f))?;
            for (k, gamma) in lambda.corners().iter().enumerate().skip(1) {
                let factor = imaginary_shift(g, gamma);
                let lhs = fg.value * factor;
                let in_set = lambda.contains(k);
                let (rhs, radius) = if in_set {
                    (gf.value, gf.radius)
                } else {
                    (fg.value, fg.radius)
                };
                if (lhs - rhs).norm() > tol + factor * fg.radius + radius {
                    out.push(MultiKmsViolation {
                        f: f.clone(),
                        g: g.clone(),
                        corner: gamma.clone(),
                        in_set,
                        lhs,
                        rhs,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    NoStatesWitnessed,
    ReducesToOneVariable,
    PassesAtScope,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NoStatesWitnessed => "no-states-witnessed",
            Verdict::ReducesToOneVariable => "reduces-to-one-variable",
            Verdict::PassesAtScope => "passes-at-scope",
        })
    }
}

/// A pair `(f, g)` whose conditions alone, with `ψ(1) = 1`, have no solution;
/// or, failing that, the equations carrying most of the least-squares residual.
#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    Pair { f: Monomial, g: Monomial, residual: f64 },
    Residual { equations: Vec<(Monomial, Monomial, Vec<f64>, f64)> },
}

impl fmt::Display for Witness {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Pair { f, g, residual } => {
                write!(out, "pair f = {f}, g = {g} is inconsistent with ψ(1) = 1 (residual {residual:.3e})")
            }
            Witness::Residual { equations } => {
                write!(out, "largest residual weights:")?;
                for (f, g, c, w) in equations {
                    write!(out, " [f = {f}, g = {g}, γ = {}: {w:.3e}]", corner_string(c))?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationRow {
    pub set: PrescribingSet,
    pub verdict: Verdict,
    /// Least-squares residual of the condition system with `ψ(1) = 1`.
    pub residual: f64,
    pub feasible: bool,
    /// Directions `S` with `Λ = Λ_S`, 0-based.
    pub reduced_support: Option<Vec<usize>>,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTable {
    pub betabar: Vec<f64>,
    pub scope: Scope,
    pub equations_per_set: usize,
    pub unknowns: usize,
    pub rows: Vec<ClassificationRow>,
}

impl fmt::Display for ClassificationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "betabar: {}", corner_string(&self.betabar))?;
        writeln!(f, "scope: {}", self.scope)?;
        writeln!(f, "equations per set: {}, unknowns: {}", self.equations_per_set, self.unknowns)?;
        for row in &self.rows {
            write!(
                f,
                "mask {} {}: {} (residual {:.3e}, feasible {})",
                row.set.label(),
                row.set,
                row.verdict,
                row.residual,
                row.feasible
            )?;
            if let Some(s) = &row.reduced_support {
                let dirs: Vec<String> = s.iter().map(|i| (i + 1).to_string()).collect();
                write!(f, "; one-variable in directions {{{}}}", dirs.join(","))?;
            }
            writeln!(f)?;
            if let Some(w) = &row.witness {
                writeln!(f, "  witness: {w}")?;
            }
        }
        Ok(())
    }
}

type Row = Vec<(usize, Complex64)>;

/// Unknowns `ψ(V_x e_j V_y^*)` indexed by `(x, y, j)`.
struct Unknowns<'a> {
    sys: &'a DynamicalSystem,
    columns: BTreeMap<(MultiIndex, MultiIndex, usize), usize>,
}

impl Unknowns<'_> {
    fn row(&mut self, h: &Monomial) -> Row {
        let coords = self.sys.algebra().to_coords(&h.a);
        let mut out = Vec::new();
        for (j, c) in coords.iter().enumerate() {
            if c.norm() > ARITHMETIC_TOL {
                let next = self.columns.len();
                let col = *self
                    .columns
                    .entry((h.x.clone(), h.y.clone(), j))
                    .or_insert(next);
                out.push((col, *c));
            }
        }
        out
    }
}

fn combine(a: &[(usize, Complex64)], s: Complex64, b: &[(usize, Complex64)], t: Complex64) -> Row {
    let mut acc: BTreeMap<usize, Complex64> = BTreeMap::new();
    for &(c, v) in a {
        *acc.entry(c).or_insert(ZERO) += v * s;
    }
    for &(c, v) in b {
        *acc.entry(c).or_insert(ZERO) += v * t;
    }
    acc.into_iter().filter(|(_, v)| v.norm() > ARITHMETIC_TOL).collect()
}

/// Least-squares solve of a sparse system through its normal equations,
/// one connected block of unknowns at a time; the residual is recomputed
/// from the rows.
fn sparse_least_squares(rows: &[(Row, Complex64)], cols: usize) -> (CVector, f64, Vec<f64>) {
    let mut parent: Vec<usize> = (0..cols).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (row, _) in rows {
        if let Some(&(first, _)) = row.first() {
            for &(c, _) in &row[1..] {
                let (ra, rb) = (find(&mut parent, first), find(&mut parent, c));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    // local index of every column inside its block
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in 0..cols {
        let r = find(&mut parent, c);
        blocks.entry(r).or_default().push(c);
    }
    let mut local = vec![0; cols];
    for members in blocks.values() {
        for (k, &c) in members.iter().enumerate() {
            local[c] = k;
        }
    }
    let mut normals: BTreeMap<usize, (CMatrix, CVector)> = blocks
        .iter()
        .map(|(&r, m)| (r, (CMatrix::zeros(m.len(), m.len()), CVector::zeros(m.len()))))
        .collect();
    for (row, b) in rows {
        let Some(&(first, _)) = row.first() else { continue };
        let (normal, rhs) = normals.get_mut(&find(&mut parent, first)).expect("block");
        for &(i, v) in row {
            rhs[local[i]] += v.conj() * b;
            for &(j, w) in row {
                normal[(local[i], local[j])] += v.conj() * w;
            }
        }
    }
    let mut x = CVector::zeros(cols);
    for (r, (normal, rhs)) in normals {
        // pseudo-inverse through the Hermitian eigendecomposition
        let eig = normal.symmetric_eigen();
        let top = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let cutoff = 1e-12 * top.max(1.0);
        let proj = eig.eigenvectors.adjoint() * &rhs;
        let scaled = CVector::from_iterator(
            proj.len(),
            proj.iter()
                .zip(eig.eigenvalues.iter())
                .map(|(p, &l)| if l > cutoff { p / l } else { ZERO }),
        );
        let sol = &eig.eigenvectors * scaled;
        for (k, &c) in blocks[&r].iter().enumerate() {
            x[c] = sol[k];
        }
    }
    let residuals: Vec<f64> = rows
        .iter()
        .map(|(row, b)| (row.iter().fold(ZERO, |acc, &(c, v)| acc + v * x[c]) - b).norm())
        .collect();
    let total = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
    (x, total, residuals)
}

struct PairRows {
    f: usize,
    g: usize,
    fg: Row,
    gf: Row,
    /// `e^{-<z-w, γ>}` per corner, `g = V_z b V_w^*`
    factors: Vec<f64>,
}

/// Classifies every prescribing set for `β̲` by whether the linear
/// conditions on `ψ` at scope, together with `ψ(1) = 1`, admit a solution.
pub fn classify_prescribing_sets(
    sys: &DynamicalSystem,
    betabar: &[f64],
    scope: &Scope,
    tol: f64,
) -> Result<ClassificationTable> {
    let n = sys.rank();
    if betabar.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: betabar.len(),
        });
    }
    if n > MAX_CLASSIFY_RANK {
        return Err(Error::SizeGuard {
            what: "rank for prescribing-set classification".into(),
            requested: n,
            limit: MAX_CLASSIFY_RANK,
        });
    }
    let corners = enumerate_corners(betabar)?;
    let basis_scope = Scope {
        random_elements: 0,
        ..*scope
    };
    let monomials = scope_monomials(sys, &basis_scope)?;
    let mut unknowns = Unknowns {
        sys,
        columns: BTreeMap::new(),
    };
    let unit_row = unknowns.row(&Monomial::unit(sys));
    let mut pairs = Vec::with_capacity(monomials.len() * monomials.len());
    for (fi, f) in monomials.iter().enumerate() {
        for (gi, g) in monomials.iter().enumerate() {
            let fg = unknowns.row(&multiply(sys, f, g));
            let gf = unknowns.row(&multiply(sys, g, f));
            let factors = corners.iter().map(|c| imaginary_shift(g, c)).collect();
            pairs.push(PairRows {
                f: fi,
                g: gi,
                fg,
                gf,
                factors,
            });
        }
    }
    let cols = unknowns.columns.len();

    let equations = |set: &PrescribingSet, p: &PairRows| -> Vec<(Row, Complex64, usize)> {
        (1..corners.len())
            .map(|k| {
                let factor = Complex64::new(p.factors[k], 0.0);
                let row = if set.contains(k) {
                    combine(&p.fg, factor, &p.gf, -ONE)
                } else {
                    combine(&p.fg, factor - ONE, &[], ZERO)
                };
                (row, ZERO, k)
            })
            .filter(|(row, _, _)| !row.is_empty())
            .collect()
    };

    let count = corners.len() - 1;
    let mut rows_out = Vec::with_capacity(1 << count);
    let mut equations_per_set = 0;
    for mask in 0..1usize << count {
        let set = PrescribingSet::from_mask(betabar, mask)?;
        let mut system: Vec<(Row, Complex64)> = vec![(unit_row.clone(), ONE)];
        let mut origin: Vec<Option<(usize, usize)>> = vec![None];
        for (pi, p) in pairs.iter().enumerate() {
            for (row, b, k) in equations(&set, p) {
                system.push((row, b));
                origin.push(Some((pi, k)));
            }
        }
        equations_per_set = equations_per_set.max(system.len());
        let (_, residual, weights) = sparse_least_squares(&system, cols);
        let feasible = residual <= tol;

        let witness = if feasible {
            None
        } else {
            let single = pairs.iter().find_map(|p| {
                let mut sub: Vec<(Row, Complex64)> = vec![(unit_row.clone(), ONE)];
                sub.extend(equations(&set, p).into_iter().map(|(r, b, _)| (r, b)));
                let local: BTreeMap<usize, usize> = sub
                    .iter()
                    .flat_map(|(r, _)| r.iter().map(|&(c, _)| c))
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .enumerate()
                    .map(|(k, c)| (c, k))
                    .collect();
                let mut a = CMatrix::zeros(sub.len(), local.len());
                let mut b = CVector::zeros(sub.len());
                for (i, (r, rb)) in sub.iter().enumerate() {
                    for &(c, v) in r {
                        a[(i, local[&c])] = v;
                    }
                    b[i] = *rb;
                }
                let (_, res) = least_squares(&a, &b, 1e-12);
                (res > tol).then(|| Witness::Pair {
                    f: monomials[p.f].clone(),
                    g: monomials[p.g].clone(),
                    residual: res,
                })
            });
            Some(single.unwrap_or_else(|| {
                let mut ranked: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                Witness::Residual {
                    equations: ranked
                        .into_iter()
                        .take(3)
                        .filter_map(|(i, w)| {
                            origin[i].map(|(pi, k)| {
                                let p = &pairs[pi];
                                (monomials[p.f].clone(), monomials[p.g].clone(), corners[k].clone(), w)
                            })
                        })
                        .collect(),
                }
            }))
        };

        let reduced_support = set.one_variable_support();
        let verdict = if reduced_support.is_some() {
            Verdict::ReducesToOneVariable
        } else if feasible {
            Verdict::PassesAtScope
        } else {
            Verdict::NoStatesWitnessed
        };
        rows_out.push(ClassificationRow {
            set,
            verdict,
            residual,
            feasible,
            reduced_support,
            witness,
        });
    }
    Ok(ClassificationTable {
        betabar: betabar.to_vec(),
        scope: basis_scope,
        equations_per_set,
        unknowns: cols,
        rows: rows_out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaInvariance {
    pub invariant: bool,
    pub worst: f64,
    /// First monomial with `ψ(σ_t f) ≠ ψ(f)`, and the offending `t`.
    pub witness: Option<(Monomial, f64)>,
}

/// `ψ(σ_t(f)) = ψ(f)` for the one-parameter action with the given
/// frequencies, sampled at `times`.
pub fn sigma_invariance_check(
    psi: &dyn KmsFunctional,
    frequencies: &[f64],
    times: &[f64],
    scope: &Scope,
    tol: f64,
) -> Result<SigmaInvariance> {
    let sys = psi.system();
    if frequencies.len() != sys.rank() {
        return Err(Error::DimensionMismatch {
            expected: sys.rank(),
            found: frequencies.len(),
        });
    }
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for f in scope_monomials(sys, scope)? {
        let value = psi.eval(&f)?;
        for &t in times {
            let z: Vec<Complex64> = frequencies.iter().map(|l| Complex64::new(l * t, 0.0)).collect();
            let (coef, _) = gauge_scale(&f, &z);
            let gap = (value.value * coef - value.value).norm();
            worst = worst.max(gap);
            if gap > tol + 2.0 * value.radius && witness.is_none() {
                witness = Some((f.clone(), t));
            }
        }
    }
    Ok(SigmaInvariance {
        invariant: witness.is_none(),
        worst,
        witness,
    })
}
