//! KMS, ground, KMS-infinity and tracial functionals on the monomial algebra,
//! their verification at a declared scope, and descent to the Cuntz-Nica-Pimsner
//! quotient.

use std::fmt;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{AlgebraElement, Ideal, TracialState};
use crate::dynamics::{classify_injectivity, invariance_ideal, DilationTrace, DynamicalSystem};
use crate::error::{Error, Result};
use crate::lattice::{geometric_grid_sum, Grid, MultiIndex};
use crate::linalg::{CMatrix, CVector, ZERO};
use crate::monomial::{defect_projection, element_times_defect, imaginary_shift, multiply, Monomial, MonomialSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// every `λ_i β > 0`
    Positive,
    /// some `λ_i β < 0`
    Empty,
    /// some `λ_i = 0`
    Reduced,
    /// `β = 0`
    Tracial,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Positive => "positive",
            Regime::Empty => "empty",
            Regime::Reduced => "reduced",
            Regime::Tracial => "tracial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmsParams {
    pub lambda: Vec<f64>,
    pub beta: f64,
    /// Target bound on series truncation error.
    pub epsilon: f64,
}

impl KmsParams {
    pub fn new(lambda: Vec<f64>, beta: f64, epsilon: f64) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::InvalidInput("λ must have at least one entry".into()));
        }
        if lambda.iter().any(|l| !l.is_finite()) || !beta.is_finite() {
            return Err(Error::InvalidInput("λ and β must be finite".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput("series tolerance must be positive".into()));
        }
        Ok(KmsParams { lambda, beta, epsilon })
    }

    /// `λ = (1,...,1)`.
    pub fn uniform(n: usize, beta: f64, epsilon: f64) -> Result<Self> {
        Self::new(vec![1.0; n], beta, epsilon)
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn betabar(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l * self.beta).collect()
    }

    pub fn regime(&self) -> Regime {
        if self.beta == 0.0 {
            Regime::Tracial
        } else if self.betabar().iter().any(|&b| b < 0.0) {
            Regime::Empty
        } else if self.lambda.contains(&0.0) {
            Regime::Reduced
        } else {
            Regime::Positive
        }
    }

    /// `Π_i (1 - e^{-β̲_i})`.
    pub fn defect_constant(&self) -> f64 {
        self.betabar().iter().map(|&b| -(-b).exp_m1()).product()
    }

    /// The factor `e^{-<x-y, β̲>}` in `ψ(fg) = e^{-<x-y,β̲>} ψ(gf)` for `f = V_x a V_y^*`.
    pub fn kms_factor(&self, f: &Monomial) -> f64 {
        imaginary_shift(f, &self.betabar())
    }

    fn require_positive(&self) -> Result<()> {
        match self.regime() {
            Regime::Positive => Ok(()),
            r => Err(Error::Regime(format!(
                "needs all λ_i β > 0, got {r} regime (β̲ = {:?})",
                self.betabar()
            ))),
        }
    }
}

/// A value with a rigorous bound on its truncation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: Complex64,
    pub radius: f64,
}

impl Evaluation {
    pub fn exact(value: Complex64) -> Self {
        Evaluation { value, radius: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FromTrace,
    Vacuum,
    DilationTrace,
    External,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::FromTrace => "from-trace",
            Provenance::Vacuum => "vacuum",
            Provenance::DilationTrace => "dilation-trace",
            Provenance::External => "external",
        })
    }
}

/// A linear functional on the span of monomials.
pub trait KmsFunctional {
    fn system(&self) -> &DynamicalSystem;

    fn provenance(&self) -> Provenance;

    fn eval(&self, f: &Monomial) -> Result<Evaluation>;

    fn eval_sum(&self, s: &MonomialSum) -> Result<Evaluation> {
        let mut acc = Evaluation::exact(ZERO);
        for t in s.terms() {
            let e = self.eval(&t)?;
            acc.value += e.value;
            acc.radius += e.radius;
        }
        Ok(acc)
    }
}

/// Upper bound for the operator norm: the largest blockwise Frobenius norm.
fn norm_bound(a: &AlgebraElement) -> f64 {
    a.blocks.iter().map(|m| m.norm()).fold(0.0, f64::max)
}

/// `ψ_τ(V_x a V_y^*) = δ_{x,y} e^{-<x,β̲>} Π(1-e^{-β̲_i}) Σ_w e^{-<w,β̲>} τ α_w(a)`.
#[derive(Debug, Clone)]
pub struct PsiTau {
    sys: DynamicalSystem,
    tau: TracialState,
    params: KmsParams,
    level: usize,
    /// `ψ_τ(a) ≈ row · coords(a)`.
    row: CVector,
    /// Truncation error per unit of `‖a‖`.
    tail: f64,
}

impl PsiTau {
    pub fn new(sys: &DynamicalSystem, tau: &TracialState, params: &KmsParams) -> Result<Self> {
        params.require_positive()?;
        if params.rank() != sys.rank() {
            return Err(Error::DimensionMismatch {
                expected: sys.rank(),
                found: params.rank(),
            });
        }
        let betabar = params.betabar();
        let n = sys.rank();
        let c = params.defect_constant();
        let mut m = 0;
        let tail = loop {
            let sums = geometric_grid_sum(&betabar, m)?;
            let tail = c * sums.tail_bound;
            if tail <= params.epsilon {
                break tail;
            }
            m += 1;
            Grid::new(m, n).map_err(|e| {
                Error::Budget(format!(
                    "increase budget: series tolerance {:e} not reached before the grid size guard ({e})",
                    params.epsilon
                ))
            })?;
        };
        let alg = sys.algebra();
        let dim = alg.dim();
        let mut series = CMatrix::identity(dim, dim);
        for (i, &b) in betabar.iter().enumerate() {
            let q = Complex64::new((-b).exp(), 0.0);
            let gen = sys.generator(i).matrix();
            let mut g = CMatrix::identity(dim, dim);
            for _ in 0..m {
                g = CMatrix::identity(dim, dim) + (gen * g) * q;
            }
            series = g * series;
        }
        let r = tau.functional(alg);
        let row = series.transpose() * r * Complex64::new(c, 0.0);
        Ok(PsiTau {
            sys: sys.clone(),
            tau: tau.clone(),
            params: params.clone(),
            level: m,
            row,
            tail,
        })
    }

    /// Grid level at which the series is truncated.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn trace(&self) -> &TracialState {
        &self.tau
    }

    pub fn params(&self) -> &KmsParams {
        &self.params
    }
}

impl KmsFunctional for PsiTau {
    fn system(&self) -> &DynamicalSystem {
        &self.sys
    }

    fn provenance(&self) -> Provenance {
        Provenance::FromTrace
    }

    fn eval(&self, f: &Monomial) -> Result<Evaluation> {
        if f.x != f.y {
            return Ok(Evaluation::exact(ZERO));
        }
        let weight = (-f.x.pairing(&self.params.betabar())).exp();
        let coords = self.sys.algebra().to_coords(&f.a);
        Ok(Evaluation {
            value: self.row.dot(&coords) * weight,
            radius: weight * self.tail * norm_bound(&f.a),
        })
    }
}

pub fn eval_psi_tau(
    sys: &DynamicalSystem,
    tau: &TracialState,
    params: &KmsParams,
    f: &Monomial,
) -> Result<Evaluation> {
    PsiTau::new(sys, tau, params)?.eval(f)
}

/// The limit functional `τ(a)` on `x = y = 0`, zero elsewhere.
#[derive(Debug, Clone)]
pub struct KmsInfinity {
    sys: DynamicalSystem,
    tau: TracialState,
}

impl KmsInfinity {
    pub fn new(sys: &DynamicalSystem, tau: &TracialState) -> Self {
        KmsInfinity {
            sys: sys.clone(),
            tau: tau.clone(),
        }
    }
}

pub fn eval_kms_infinity(tau: &TracialState, f: &Monomial) -> Complex64 {
    if f.x.is_zero() && f.y.is_zero() {
        tau.eval(&f.a)
    } else {
        ZERO
    }
}

impl KmsFunctional for KmsInfinity {
    fn system(&self) -> &DynamicalSystem {
        &self.sys
    }

    fn provenance(&self) -> Provenance {
        Provenance::FromTrace
    }

    fn eval(&self, f: &Monomial) -> Result<Evaluation> {
        Ok(Evaluation::exact(eval_kms_infinity(&self.tau, f)))
    }
}

impl KmsFunctional for DilationTrace {
    fn system(&self) -> &DynamicalSystem {
        DilationTrace::system(self)
    }

    fn provenance(&self) -> Provenance {
        Provenance::DilationTrace
    }

    fn eval(&self, f: &Monomial) -> Result<Evaluation> {
        DilationTrace::eval(self, &f.x, &f.a, &f.y).map(Evaluation::exact)
    }
}

/// Any evaluator supplied from outside, e.g. for testing the checkers.
pub struct ExternalFunctional<F> {
    sys: DynamicalSystem,
    eval: F,
}

impl<F: Fn(&Monomial) -> Complex64> ExternalFunctional<F> {
    pub fn new(sys: &DynamicalSystem, eval: F) -> Self {
        ExternalFunctional {
            sys: sys.clone(),
            eval,
        }
    }
}

impl<F: Fn(&Monomial) -> Complex64> KmsFunctional for ExternalFunctional<F> {
    fn system(&self) -> &DynamicalSystem {
        &self.sys
    }

    fn provenance(&self) -> Provenance {
        Provenance::External
    }

    fn eval(&self, f: &Monomial) -> Result<Evaluation> {
        Ok(Evaluation::exact((self.eval)(f)))
    }
}

/// Which monomials a verification ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    /// Multi-indices range over `F_degree`.
    pub degree: usize,
    /// Random elements drawn in addition to the matrix-unit basis.
    pub random_elements: usize,
    pub seed: u64,
}

impl Scope {
    pub fn new(degree: usize) -> Self {
        Scope {
            degree,
            random_elements: 1,
            seed: 0,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "indices in F_{}, matrix units + {} random element(s), seed {}",
            self.degree, self.random_elements, self.seed
        )
    }
}

pub fn scope_elements(sys: &DynamicalSystem, scope: &Scope) -> Vec<AlgebraElement> {
    let alg = sys.algebra();
    let mut rng = ChaCha8Rng::seed_from_u64(scope.seed);
    let mut out = alg.basis();
    out.extend((0..scope.random_elements).map(|_| alg.random_element(&mut rng)));
    out
}

pub fn scope_monomials(sys: &DynamicalSystem, scope: &Scope) -> Result<Vec<Monomial>> {
    let points: Vec<MultiIndex> = Grid::new(scope.degree, sys.rank())?.iter().collect();
    let elements = scope_elements(sys, scope);
    let mut out = Vec::with_capacity(points.len() * points.len() * elements.len());
    for x in &points {
        for y in &points {
            for a in &elements {
                out.push(Monomial::new(x.clone(), a.clone(), y.clone()));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmsViolation {
    pub f: Monomial,
    pub g: Monomial,
    /// `ψ(fg)`
    pub lhs: Complex64,
    /// `e^{-<x-y,β̲>} ψ(gf)`
    pub rhs: Complex64,
    pub residual: f64,
    pub allowance: f64,
}

impl fmt::Display for KmsViolation {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            out,
            "f = {}, g = {}: ψ(fg) = {:.6e}, shifted ψ(gf) = {:.6e}, residual {:.3e} > {:.3e}",
            self.f, self.g, self.lhs, self.rhs, self.residual, self.allowance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmsReport {
    pub scope: Scope,
    pub regime: Regime,
    pub provenance: Provenance,
    pub pairs_checked: usize,
    pub max_residual: f64,
    pub violations: Vec<KmsViolation>,
}

impl KmsReport {
    /// Verified at this scope.
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for KmsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scope: {}", self.scope)?;
        writeln!(f, "regime: {}", self.regime)?;
        writeln!(f, "functional: {}", self.provenance)?;
        writeln!(f, "pairs checked: {}", self.pairs_checked)?;
        writeln!(f, "max residual: {:.3e}", self.max_residual)?;
        writeln!(f, "violations: {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Checks `ψ(fg) = e^{-<x-y,β̲>} ψ(gf)` for all pairs of scope monomials,
/// `f = V_x a V_y^*`. Tolerances are inflated by the error radii involved.
pub fn verify_kms(
    psi: &dyn KmsFunctional,
    params: &KmsParams,
    scope: &Scope,
    tol: f64,
) -> Result<KmsReport> {
    let sys = psi.system();
    if params.rank() != sys.rank() {
        return Err(Error::DimensionMismatch {
            expected: sys.rank(),
            found: params.rank(),
        });
    }
    let monomials = scope_monomials(sys, scope)?;
    let mut violations = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut pairs = 0;
    for f in &monomials {
        let factor = params.kms_factor(f);
        for g in &monomials {
            pairs += 1;
            let fg = psi.eval(&multiply(sys, f, g))?;
            let gf = psi.eval(&multiply(sys, g, f))?;
            let rhs = gf.value * factor;
            let residual = (fg.value - rhs).norm();
            let allowance = tol + fg.radius + factor * gf.radius;
            max_residual = max_residual.max(residual);
            if residual > allowance {
                violations.push(KmsViolation {
                    f: f.clone(),
                    g: g.clone(),
                    lhs: fg.value,
                    rhs,
                    residual,
                    allowance,
                });
            }
        }
    }
    Ok(KmsReport {
        scope: *scope,
        regime: params.regime(),
        provenance: psi.provenance(),
        pairs_checked: pairs,
        max_residual,
        violations,
    })
}

/// The `β = 0` condition `ψ(fg) = ψ(gf)` on monomials with indices in `F_degree`.
pub fn verify_tracial(
    sys: &DynamicalSystem,
    psi: &dyn KmsFunctional,
    degree: usize,
    tol: f64,
) -> Result<Vec<KmsViolation>> {
    let params = KmsParams::uniform(sys.rank(), 0.0, 1.0)?;
    Ok(verify_kms(psi, &params, &Scope::new(degree), tol)?.violations)
}

/// Reasons no KMS state can exist.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// `1 = ψ(1) >= ψ(V_k V_k^*) = e^{-β̲_k} > 1`.
    NegativeDirection { direction: usize, betabar: f64 },
    /// `1 = ψ(U_k^* U_k) = ψ(U_k U_k^*) = e^{-β̲_k}` for unitaries `U_k`,
    /// impossible unless `β̲_k = 0`.
    Unitarity { directions: Vec<usize>, betabar: Vec<f64> },
}

impl Certificate {
    /// Re-checks the numeric inequality the certificate rests on.
    pub fn check(&self) -> bool {
        match self {
            Certificate::NegativeDirection { betabar, .. } => (-betabar).exp() > 1.0,
            Certificate::Unitarity { directions, betabar } => {
                !directions.is_empty() && directions.iter().all(|&k| (-betabar[k]).exp() != 1.0)
            }
        }
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Certificate::NegativeDirection { direction, betabar } => write!(
                f,
                "direction {}: 1 = ψ(1) >= ψ(V_{} V_{}^*) = e^{{{}}} = {:.6e} > 1",
                direction + 1,
                direction + 1,
                direction + 1,
                -betabar,
                (-betabar).exp()
            ),
            Certificate::Unitarity { directions, betabar } => {
                write!(f, "unitarity in the quotient:")?;
                for &k in directions {
                    write!(
                        f,
                        " 1 = ψ(U_{0}^* U_{0}) = ψ(U_{0} U_{0}^*) = e^{{{1}}} = {2:.6e};",
                        k + 1,
                        -betabar[k],
                        (-betabar[k]).exp()
                    )?;
                }
                Ok(())
            }
        }
    }
}

/// A certificate of non-existence of `(σ,β)`-KMS states on the Toeplitz
/// algebra, or with `cnp` on the Cuntz-Nica-Pimsner quotient.
pub fn no_kms_certificate(
    params: &KmsParams,
    cnp: bool,
    sys: &DynamicalSystem,
) -> Result<Option<Certificate>> {
    let betabar = params.betabar();
    if let Some(k) = betabar.iter().position(|&b| b < 0.0) {
        return Ok(Some(Certificate::NegativeDirection {
            direction: k,
            betabar: betabar[k],
        }));
    }
    if cnp && params.beta != 0.0 && params.lambda.iter().any(|&l| l != 0.0)
        && classify_injectivity(sys)?.injective {
            let directions = (0..betabar.len()).filter(|&k| betabar[k] != 0.0).collect();
            return Ok(Some(Certificate::Unitarity { directions, betabar }));
        }
    Ok(None)
}

/// `ψ_τ(p_m) = Π(1-e^{-β̲_i}) Σ_{w in F_m} e^{-<w,β̲>}`.
pub fn pm_mass(params: &KmsParams, m: usize) -> Result<f64> {
    params.require_positive()?;
    let sums = geometric_grid_sum(&params.betabar(), m)?;
    Ok(sums.partial_sum / sums.full_sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredTrace {
    pub trace: TracialState,
    /// Measured `ψ(P)`.
    pub psi_p: Evaluation,
    /// `Π(1-e^{-β̲_i})`.
    pub expected: f64,
    /// Largest deviation of `φ_P` from a trace on the matrix units.
    pub trace_defect: f64,
}

/// `φ_P(a) = ψ(PaP)/ψ(P)` with `P = Π_i (I - V_i V_i^*)`.
pub fn recover_trace(psi: &dyn KmsFunctional, params: &KmsParams, tol: f64) -> Result<RecoveredTrace> {
    params.require_positive()?;
    let sys = psi.system();
    let alg = sys.algebra();
    let all: Vec<usize> = (0..sys.rank()).collect();
    let p = defect_projection(sys, &all);
    let psi_p = psi.eval_sum(&p)?;
    let expected = params.defect_constant();
    if (psi_p.value - Complex64::new(expected, 0.0)).norm() > tol + psi_p.radius {
        return Err(Error::ScopeEscalation(format!(
            "ψ(P) = {:.12e} differs from Π(1-e^(-β̲_i)) = {expected:.12e}; the functional is not KMS",
            psi_p.value
        )));
    }
    let mut weights = Vec::with_capacity(alg.num_blocks());
    let mut trace_defect: f64 = 0.0;
    for (b, &d) in alg.block_dims().iter().enumerate() {
        let mut mass = ZERO;
        let mut diag = Vec::with_capacity(d);
        for i in 0..d {
            for j in 0..d {
                let a = MonomialSum::from(Monomial::element(sys.rank(), alg.matrix_unit(b, i, j)));
                let pap = p.multiply(sys, &a).multiply(sys, &p);
                let v = psi.eval_sum(&pap)?.value / psi_p.value;
                if i == j {
                    mass += v;
                    diag.push(v);
                } else {
                    trace_defect = trace_defect.max(v.norm());
                }
            }
        }
        for v in &diag {
            trace_defect = trace_defect.max((v - mass / d as f64).norm());
        }
        trace_defect = trace_defect.max(mass.im.abs());
        weights.push(mass.re.max(0.0));
    }
    if trace_defect > tol {
        return Err(Error::ScopeEscalation(format!(
            "compressed functional is not tracial (defect {trace_defect:.3e})"
        )));
    }
    Ok(RecoveredTrace {
        trace: TracialState::from_unnormalized(alg, weights)?,
        psi_p,
        expected,
        trace_defect,
    })
}

/// `ψ(a Π_{i in supp y}(I - V_i V_i^*))` for a matrix unit `a` of `I_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectValue {
    pub y: MultiIndex,
    /// `(block, row, column)` of the matrix unit, 0-based.
    pub unit: (usize, usize, usize),
    pub value: Evaluation,
}

impl fmt::Display for DefectValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (b, i, j) = self.unit;
        write!(
            f,
            "y = {}, a = E[{},{},{}]: {:.6e} (radius {:.1e})",
            self.y,
            b + 1,
            i + 1,
            j + 1,
            self.value.value,
            self.value.radius
        )
    }
}

fn defect_values(psi: &dyn KmsFunctional) -> Result<Vec<DefectValue>> {
    let sys = psi.system();
    let alg = sys.algebra();
    let mut out = Vec::new();
    for y in Grid::new(1, sys.rank())?.iter().filter(|y| !y.is_zero()) {
        let ideal = invariance_ideal(sys, &y).ideal;
        let support = y.support();
        for b in ideal.blocks() {
            let d = alg.block_dims()[b];
            for i in 0..d {
                for j in 0..d {
                    let s = element_times_defect(sys, &alg.matrix_unit(b, i, j), &support);
                    out.push(DefectValue {
                        y: y.clone(),
                        unit: (b, i, j),
                        value: psi.eval_sum(&s)?,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    pub ideal: Ideal,
    /// `τ` vanishes on `I_1`.
    pub vanishes: bool,
    /// Measured `ψ_τ(P)`, the constant linking `ψ_τ(aP)` to `τ(a)`.
    pub constant: f64,
    pub defects: Vec<DefectValue>,
    /// Every defect value is within `tol`.
    pub descends: bool,
}

impl fmt::Display for DescentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "I_1: {}", self.ideal)?;
        writeln!(f, "trace vanishes on I_1: {}", self.vanishes)?;
        writeln!(f, "measured constant ψ(P): {:.12e}", self.constant)?;
        writeln!(f, "defect values: {}", self.defects.len())?;
        for d in &self.defects {
            writeln!(f, "  {d}")?;
        }
        writeln!(f, "descends: {}", self.descends)
    }
}

/// Whether `ψ_τ` factors through the Cuntz-Nica-Pimsner quotient.
pub fn cnp_descent(
    sys: &DynamicalSystem,
    tau: &TracialState,
    params: &KmsParams,
    tol: f64,
) -> Result<DescentReport> {
    let psi = PsiTau::new(sys, tau, params)?;
    let n = sys.rank();
    let ideal = invariance_ideal(sys, &MultiIndex::splat(n, 1)).ideal;
    let all: Vec<usize> = (0..n).collect();
    let constant = psi.eval_sum(&defect_projection(sys, &all))?.value.re;
    let defects = defect_values(&psi)?;
    let descends = defects
        .iter()
        .all(|d| d.value.value.norm() <= tol + d.value.radius);
    Ok(DescentReport {
        vanishes: tau.vanishes_on(&ideal, 1e-12),
        ideal,
        constant,
        defects,
        descends,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationReport {
    pub factors: bool,
    pub defects: Vec<DefectValue>,
}

/// For a tracial `ψ`, checks that it annihilates `a Π_{i in supp x}(I - V_i V_i^*)`
/// for `a` in `I_x`, `x <= 1`. A non-tracial `ψ` is rejected with a witness.
pub fn tracial_factorization_check(
    psi: &dyn KmsFunctional,
    degree: usize,
    tol: f64,
) -> Result<FactorizationReport> {
    let sys = psi.system();
    if let Some(v) = verify_tracial(sys, psi, degree, tol)?.first() {
        return Err(Error::NotTracial(v.to_string()));
    }
    let defects = defect_values(psi)?;
    let factors = defects
        .iter()
        .all(|d| d.value.value.norm() <= tol + d.value.radius);
    Ok(FactorizationReport { factors, defects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{validate_endomorphism, BlockAlgebra, StarEndomorphism, STRUCTURAL_TOL};
    use crate::dynamics::{dilate, trace_from_dilation, ExtendedTrace};
    use rand::Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn mi(v: &[usize]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    fn doubling_alpha() -> StarEndomorphism {
        let alg = BlockAlgebra::commutative(2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(1.0), c(0.0)]);
        validate_endomorphism(&alg, m, STRUCTURAL_TOL).unwrap()
    }

    fn doubling() -> DynamicalSystem {
        DynamicalSystem::new(BlockAlgebra::commutative(2).unwrap(), vec![doubling_alpha()]).unwrap()
    }

    fn trivial(n: usize) -> DynamicalSystem {
        DynamicalSystem::trivial(BlockAlgebra::commutative(1).unwrap(), n).unwrap()
    }

    fn swap() -> DynamicalSystem {
        let alg = BlockAlgebra::commutative(2).unwrap();
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        DynamicalSystem::from_matrices(alg, vec![m]).unwrap()
    }

    #[test]
    fn regimes() {
        assert_eq!(KmsParams::new(vec![1.0, 2.0], 1.0, 1e-9).unwrap().regime(), Regime::Positive);
        assert_eq!(KmsParams::new(vec![1.0, -1.0], 1.0, 1e-9).unwrap().regime(), Regime::Empty);
        assert_eq!(KmsParams::new(vec![1.0, 0.0], 1.0, 1e-9).unwrap().regime(), Regime::Reduced);
        assert_eq!(KmsParams::new(vec![1.0, -1.0], 0.0, 1e-9).unwrap().regime(), Regime::Tracial);
        assert!(KmsParams::new(vec![1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn psi_tau_on_trivial_system() {
        let sys = trivial(2);
        let tau = TracialState::new(sys.algebra(), vec![1.0]).unwrap();
        let params = KmsParams::new(vec![1.0, 0.5], 1.3, 1e-12).unwrap();
        let psi = PsiTau::new(&sys, &tau, &params).unwrap();
        let one = psi.eval(&Monomial::unit(&sys)).unwrap();
        assert!((one.value - c(1.0)).norm() <= 1e-12 + one.radius);
        for x in Grid::new(3, 2).unwrap().iter() {
            let f = Monomial::new(x.clone(), sys.algebra().unit(), x.clone());
            let e = psi.eval(&f).unwrap();
            let exact = (-x.pairing(&params.betabar())).exp();
            assert!((e.value - c(exact)).norm() <= 1e-12 + e.radius, "{x}");
        }
        let off = Monomial::new(mi(&[1, 0]), sys.algebra().unit(), mi(&[0, 1]));
        assert_eq!(psi.eval(&off).unwrap().value, ZERO);
    }

    #[test]
    fn psi_tau_matches_resolvent() {
        // Σ_w e^{-<w,β̲>} α_w = Π_i (I - e^{-β̲_i} M_i)^{-1}
        let sys = doubling();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau = TracialState::random(sys.algebra(), &mut rng);
        let params = KmsParams::uniform(1, 0.7, 1e-13).unwrap();
        let psi = PsiTau::new(&sys, &tau, &params).unwrap();
        let q = c((-0.7f64).exp());
        let m = sys.generator(0).matrix();
        let resolvent = (CMatrix::identity(2, 2) - m * q).try_inverse().unwrap();
        let k = params.defect_constant();
        for _ in 0..5 {
            let a = sys.algebra().random_element(&mut rng);
            let exact = tau.functional(sys.algebra()).dot(&(&resolvent * sys.algebra().to_coords(&a))) * k;
            let e = psi.eval(&Monomial::element(1, a)).unwrap();
            assert!((e.value - exact).norm() <= 1e-12 + e.radius);
        }
    }

    #[test]
    fn non_positive_regime_rejected() {
        let sys = trivial(1);
        let tau = TracialState::new(sys.algebra(), vec![1.0]).unwrap();
        for params in [
            KmsParams::uniform(1, -1.0, 1e-9).unwrap(),
            KmsParams::uniform(1, 0.0, 1e-9).unwrap(),
        ] {
            assert!(matches!(PsiTau::new(&sys, &tau, &params), Err(Error::Regime(_))));
        }
    }

    #[test]
    fn budget_error_for_tiny_beta() {
        let sys = trivial(3);
        let tau = TracialState::new(sys.algebra(), vec![1.0]).unwrap();
        let params = KmsParams::uniform(3, 1e-3, 1e-12).unwrap();
        assert!(matches!(PsiTau::new(&sys, &tau, &params), Err(Error::Budget(_))));
    }

    #[test]
    fn psi_tau_is_kms() {
        let sys = doubling();
        let tau = TracialState::new(sys.algebra(), vec![0.3, 0.7]).unwrap();
        let params = KmsParams::uniform(1, 1.0, 1e-12).unwrap();
        let psi = PsiTau::new(&sys, &tau, &params).unwrap();
        let report = verify_kms(&psi, &params, &Scope::new(3), 1e-9).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.pairs_checked > 0);
    }

    #[test]
    fn wrong_beta_is_caught() {
        let sys = trivial(1);
        let tau = TracialState::new(sys.algebra(), vec![1.0]).unwrap();
        let psi = PsiTau::new(&sys, &tau, &KmsParams::uniform(1, 1.0, 1e-12).unwrap()).unwrap();
        let other = KmsParams::uniform(1, 2.0, 1e-12).unwrap();
        assert!(!verify_kms(&psi, &other, &Scope::new(1), 1e-9).unwrap().passed());
    }

    #[test]
    fn zero_frequency_uses_remaining_directions() {
        // ψ(V_x a V_y^*) = δ_{x_1,y_1} e^{-x_1} (1-e^{-1}) / ... built on the first
        // coordinate only, with a constant along the second direction
        let sys = trivial(2);
        let psi = ExternalFunctional::new(&sys, |f: &Monomial| {
            if f.x == f.y && f.x.coords()[1] == 0 {
                f.a.blocks[0][(0, 0)] * (-(f.x.coords()[0] as f64)).exp()
            } else {
                ZERO
            }
        });
        let reduced = KmsParams::new(vec![1.0, 0.0], 1.0, 1e-9).unwrap();
        let report = verify_kms(&psi, &reduced, &Scope::new(1), 1e-9).unwrap();
        // the second direction has λ = 0, so ψ(V_2 V_2^*) = ψ(V_2^* V_2) = 1 is required
        assert!(!report.passed());
        assert!(report
            .violations
            .iter()
            .all(|v| v.f.x.coords()[1] + v.f.y.coords()[1] + v.g.x.coords()[1] + v.g.y.coords()[1] > 0));
    }

    #[test]
    fn certificates() {
        let sys2 = trivial(2);
        let neg = no_kms_certificate(&KmsParams::new(vec![1.0, -1.0], 1.0, 1e-9).unwrap(), false, &sys2)
            .unwrap()
            .unwrap();
        assert_eq!(
            neg,
            Certificate::NegativeDirection {
                direction: 1,
                betabar: -1.0
            }
        );
        assert!(neg.check());

        let uni = no_kms_certificate(&KmsParams::uniform(2, 2.0, 1e-9).unwrap(), true, &sys2)
            .unwrap()
            .unwrap();
        assert!(matches!(&uni, Certificate::Unitarity { directions, .. } if directions == &vec![0, 1]));
        assert!(uni.check());

        assert!(no_kms_certificate(&KmsParams::uniform(2, 1.0, 1e-9).unwrap(), false, &sys2)
            .unwrap()
            .is_none());
        // non-injective systems get no unitarity certificate
        assert!(no_kms_certificate(&KmsParams::uniform(1, 1.0, 1e-9).unwrap(), true, &doubling())
            .unwrap()
            .is_none());
    }

    #[test]
    fn pm_mass_values() {
        let p = KmsParams::uniform(1, 2f64.ln(), 1e-9).unwrap();
        assert!((pm_mass(&p, 1).unwrap() - 0.75).abs() < 1e-15);
        let q = KmsParams::new(vec![1.0, 2.0], 0.8, 1e-9).unwrap();
        assert!((pm_mass(&q, 0).unwrap() - q.defect_constant()).abs() < 1e-15);
        let mut last = 0.0;
        for m in 0..40 {
            let v = pm_mass(&q, m).unwrap();
            assert!(v >= last && v <= 1.0);
            last = v;
        }
        assert!(1.0 - last < 1e-10);
    }

    #[test]
    fn recover_round_trip() {
        let alg = BlockAlgebra::new(vec![2, 1]).unwrap();
        let sys = DynamicalSystem::trivial(alg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tau = TracialState::random(sys.algebra(), &mut rng);
        let params = KmsParams::uniform(2, 1.0, 1e-12).unwrap();
        let psi = PsiTau::new(&sys, &tau, &params).unwrap();
        let rec = recover_trace(&psi, &params, 1e-9).unwrap();
        for (a, b) in rec.trace.weights().iter().zip(tau.weights()) {
            assert!((a - b).abs() < 1e-9);
        }
        let expected = (1.0 - (-1.0f64).exp()).powi(2);
        assert!((rec.psi_p.value.re - expected).abs() < 1e-9);
    }

    #[test]
    fn recover_rejects_non_kms() {
        let sys = trivial(1);
        let params = KmsParams::uniform(1, 1.0, 1e-12).unwrap();
        let inf = KmsInfinity::new(&sys, &TracialState::new(sys.algebra(), vec![1.0]).unwrap());
        // ψ(P) = 1 for the limit functional
        assert!(matches!(recover_trace(&inf, &params, 1e-9), Err(Error::ScopeEscalation(_))));
    }

    #[test]
    fn parametrisation_is_affine_and_injective() {
        let sys = doubling();
        let params = KmsParams::uniform(1, 0.9, 1e-12).unwrap();
        let t1 = TracialState::new(sys.algebra(), vec![0.2, 0.8]).unwrap();
        let t2 = TracialState::new(sys.algebra(), vec![0.9, 0.1]).unwrap();
        let s = 0.35;
        let mix = t1.mix(&t2, s);
        let (p1, p2, pm) = (
            PsiTau::new(&sys, &t1, &params).unwrap(),
            PsiTau::new(&sys, &t2, &params).unwrap(),
            PsiTau::new(&sys, &mix, &params).unwrap(),
        );
        for f in scope_monomials(&sys, &Scope::new(2)).unwrap() {
            let lhs = pm.eval(&f).unwrap();
            let rhs = p1.eval(&f).unwrap().value * s + p2.eval(&f).unwrap().value * (1.0 - s);
            assert!((lhs.value - rhs).norm() < 1e-12);
        }
        let r1 = recover_trace(&p1, &params, 1e-9).unwrap().trace;
        let r2 = recover_trace(&p2, &params, 1e-9).unwrap().trace;
        assert!((r1.weights()[0] - r2.weights()[0]).abs() > 1e-6);
    }

    #[test]
    fn positivity_of_psi_tau() {
        let sys = DynamicalSystem::trivial(BlockAlgebra::new(vec![2, 1]).unwrap(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tau = TracialState::random(sys.algebra(), &mut rng);
        let params = KmsParams::uniform(1, 0.6, 1e-10).unwrap();
        let psi = PsiTau::new(&sys, &tau, &params).unwrap();
        let inf = KmsInfinity::new(&sys, &tau);
        for _ in 0..20 {
            let f: MonomialSum = (0..3)
                .map(|_| {
                    let x = MultiIndex::new(vec![rng.gen_range(0..3)]);
                    let y = MultiIndex::new(vec![rng.gen_range(0..3)]);
                    Monomial::new(x, sys.algebra().random_element(&mut rng), y)
                })
                .collect();
            let ff = f.adjoint().multiply(&sys, &f);
            let e = psi.eval_sum(&ff).unwrap();
            assert!(e.value.re >= -e.radius);
            assert!(inf.eval_sum(&ff).unwrap().value.re >= -1e-14);
        }
    }

    #[test]
    fn kms_infinity_case_split() {
        let sys = trivial(1);
        let tau = TracialState::new(sys.algebra(), vec![1.0]).unwrap();
        let a = sys.algebra().unit().scale(c(2.5));
        assert_eq!(eval_kms_infinity(&tau, &Monomial::element(1, a.clone())), c(2.5));
        let f = Monomial::new(mi(&[1]), a, mi(&[1]));
        assert_eq!(eval_kms_infinity(&tau, &f), ZERO);
        let params = KmsParams::uniform(1, 16.0, 1e-12).unwrap();
        let e = eval_psi_tau(&sys, &tau, &params, &f).unwrap();
        assert!(e.value.norm() <= 2.5 * (-16.0f64).exp() + 1e-12 + e.radius);
    }

    #[test]
    fn descent_on_doubling() {
        let sys = doubling();
        let params = KmsParams::uniform(1, 1.0, 1e-12).unwrap();
        let inside = TracialState::new(sys.algebra(), vec![1.0, 0.0]).unwrap();
        let report = cnp_descent(&sys, &inside, &params, 1e-9).unwrap();
        assert_eq!(report.ideal, Ideal::from_blocks(2, &[0]));
        assert!(!report.vanishes && !report.descends);
        let worst = report.defects.iter().map(|d| d.value.value.norm()).fold(0.0, f64::max);
        assert!((worst - (1.0 - (-1.0f64).exp())).abs() < 1e-9);

        let outside = TracialState::new(sys.algebra(), vec![0.0, 1.0]).unwrap();
        let report = cnp_descent(&sys, &outside, &params, 1e-9).unwrap();
        assert!(report.vanishes && report.descends);
        assert!((report.constant - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn injective_system_only_zero_trace_descends() {
        let sys = swap();
        let params = KmsParams::uniform(1, 1.0, 1e-12).unwrap();
        let tau = TracialState::new(sys.algebra(), vec![0.5, 0.5]).unwrap();
        let report = cnp_descent(&sys, &tau, &params, 1e-9).unwrap();
        assert!(report.ideal.is_full());
        assert!(!report.descends);
    }

    #[test]
    fn tracial_functionals_from_dilations() {
        let sys = swap();
        let tau = TracialState::new(sys.algebra(), vec![0.5, 0.5]).unwrap();
        let psi = trace_from_dilation(&sys, ExtendedTrace::Automorphic(tau), 2, 1e-10).unwrap();
        let report = tracial_factorization_check(&psi, 2, 1e-10).unwrap();
        assert!(report.factors);
        // a non-invariant trace is rejected with a witness
        let skew = TracialState::new(sys.algebra(), vec![0.2, 0.8]).unwrap();
        assert!(matches!(
            trace_from_dilation(&sys, ExtendedTrace::Automorphic(skew), 1, 1e-10),
            Err(Error::NotTracial(_))
        ));

        let dsys = doubling();
        let dilation = dilate(&dsys, 4).unwrap();
        let nb = dilation.algebra().num_blocks();
        let mut w = vec![0.0; nb];
        w[1] = 1.0;
        let trace = TracialState::new(dilation.algebra(), w).unwrap();
        let psi = trace_from_dilation(
            &dsys,
            ExtendedTrace::Truncated {
                dilation: dilation.clone(),
                trace,
            },
            1,
            1e-10,
        )
        .unwrap();
        assert!(tracial_factorization_check(&psi, 1, 1e-10).unwrap().factors);
        let spread = TracialState::new(dilation.algebra(), vec![1.0 / nb as f64; nb]).unwrap();
        assert!(matches!(
            trace_from_dilation(&dsys, ExtendedTrace::Truncated { dilation, trace: spread }, 1, 1e-10),
            Err(Error::NotTracial(_))
        ));
    }

    #[test]
    fn trivial_system_defect_vanishes_for_traces() {
        let sys = trivial(1);
        let psi = ExternalFunctional::new(&sys, |f: &Monomial| {
            if f.x == f.y {
                f.a.blocks[0][(0, 0)]
            } else {
                ZERO
            }
        });
        let report = tracial_factorization_check(&psi, 2, 1e-12).unwrap();
        assert!(report.factors);
    }
}
