//! Symbolic monomials `V_x a V_y^*` of the Toeplitz-Nica-Pimsner algebra
//! and their finite sums.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::algebra::AlgebraElement;
use crate::dynamics::DynamicalSystem;
use crate::lattice::{Grid, MultiIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub x: MultiIndex,
    pub a: AlgebraElement,
    pub y: MultiIndex,
}

impl Monomial {
    pub fn new(x: MultiIndex, a: AlgebraElement, y: MultiIndex) -> Self {
        assert_eq!(x.dim(), y.dim(), "monomial indices of different dimension");
        Monomial { x, a, y }
    }

    /// `a` alone, i.e. `V_0 a V_0^*`.
    pub fn element(n: usize, a: AlgebraElement) -> Self {
        Monomial::new(MultiIndex::zero(n), a, MultiIndex::zero(n))
    }

    pub fn unit(sys: &DynamicalSystem) -> Self {
        Monomial::element(sys.rank(), sys.algebra().unit())
    }

    /// `V_x` itself.
    pub fn isometry(sys: &DynamicalSystem, x: MultiIndex) -> Self {
        let zero = MultiIndex::zero(sys.rank());
        Monomial::new(x, sys.algebra().unit(), zero)
    }

    pub fn degree(&self) -> usize {
        self.x.degree().max(self.y.degree())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Monomial::new(self.x.clone(), self.a.scale(c), self.y.clone())
    }
}

/// `(V_x a V_y^*)(V_z b V_w^*) = V_{x+z-y∧z} α_{z-y∧z}(a) α_{y-y∧z}(b) V_{y+w-y∧z}^*`.
pub fn multiply(sys: &DynamicalSystem, f: &Monomial, g: &Monomial) -> Monomial {
    let common = f.y.meet(&g.x);
    let z_rest = g.x.checked_sub(&common).expect("meet is below both");
    let y_rest = f.y.checked_sub(&common).expect("meet is below both");
    let left = sys.act(&z_rest, &f.a);
    let right = sys.act(&y_rest, &g.a);
    Monomial::new(f.x.add(&z_rest), &left * &right, g.y.add(&y_rest))
}

/// `(V_x a V_y^*)^* = V_y a^* V_x^*`.
pub fn adjoint(f: &Monomial) -> Monomial {
    Monomial::new(f.y.clone(), f.a.adjoint(), f.x.clone())
}

/// Gauge coefficient `e^{i<x-y, z>}` for `z in C^n`.
pub fn gauge_scale(f: &Monomial, z: &[Complex64]) -> (Complex64, Monomial) {
    assert_eq!(z.len(), f.x.dim(), "gauge parameter has wrong length");
    let phase: Complex64 = f
        .x
        .coords()
        .iter()
        .zip(f.y.coords())
        .zip(z)
        .map(|((&a, &b), &w)| w * (a as f64 - b as f64))
        .sum();
    ((Complex64::i() * phase).exp(), f.clone())
}

/// Coefficient of `σ_{iγ}` on `f`: `e^{-<x-y, γ>}`.
pub fn imaginary_shift(f: &Monomial, gamma: &[f64]) -> f64 {
    (-f.x.diff_pairing(&f.y, gamma)).exp()
}

/// A finite sum of monomials, merged on identical `(x, y)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonomialSum {
    terms: BTreeMap<(MultiIndex, MultiIndex), AlgebraElement>,
}

impl MonomialSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, f: Monomial) {
        use std::collections::btree_map::Entry;
        match self.terms.entry((f.x, f.y)) {
            Entry::Vacant(e) => {
                e.insert(f.a);
            }
            Entry::Occupied(mut e) => {
                let sum = e.get() + &f.a;
                e.insert(sum);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = Monomial> + '_ {
        self.terms
            .iter()
            .map(|((x, y), a)| Monomial::new(x.clone(), a.clone(), y.clone()))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Drops terms whose algebra part is below `tol` entrywise.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, a| !a.is_zero(tol));
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for t in other.terms() {
            out.push(t);
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.terms().map(|t| t.scale(c)).collect()
    }

    pub fn adjoint(&self) -> Self {
        self.terms().map(|t| adjoint(&t)).collect()
    }

    pub fn multiply(&self, sys: &DynamicalSystem, other: &Self) -> Self {
        let mut out = MonomialSum::new();
        for f in self.terms() {
            for g in other.terms() {
                out.push(multiply(sys, &f, &g));
            }
        }
        out
    }

    pub fn max_degree(&self) -> usize {
        self.terms().map(|t| t.degree()).max().unwrap_or(0)
    }
}

impl From<Monomial> for MonomialSum {
    fn from(f: Monomial) -> Self {
        let mut s = MonomialSum::new();
        s.push(f);
        s
    }
}

impl FromIterator<Monomial> for MonomialSum {
    fn from_iter<I: IntoIterator<Item = Monomial>>(iter: I) -> Self {
        let mut s = MonomialSum::new();
        for f in iter {
            s.push(f);
        }
        s
    }
}

/// `Π_{i in S} (I - V_i V_i^*) = Σ_{u <= 1_S} (-1)^{|u|} V_u V_u^*`.
pub fn defect_projection(sys: &DynamicalSystem, directions: &[usize]) -> MonomialSum {
    let n = sys.rank();
    let unit = sys.algebra().unit();
    Grid::new(1, n)
        .expect("F_1 within size guard")
        .iter()
        .filter(|u| u.support().iter().all(|i| directions.contains(i)))
        .map(|u| {
            let sign = if u.degree() % 2 == 0 { 1.0 } else { -1.0 };
            Monomial::new(u.clone(), unit.scale(Complex64::new(sign, 0.0)), u)
        })
        .collect()
}

/// `a · Π_{i in S}(I - V_i V_i^*)` expanded.
pub fn element_times_defect(sys: &DynamicalSystem, a: &AlgebraElement, directions: &[usize]) -> MonomialSum {
    MonomialSum::from(Monomial::element(sys.rank(), a.clone()))
        .multiply(sys, &defect_projection(sys, directions))
}

fn write_element(f: &mut fmt::Formatter<'_>, a: &AlgebraElement) -> fmt::Result {
    for (k, m) in a.blocks.iter().enumerate() {
        if k > 0 {
            write!(f, "⊕")?;
        }
        write!(f, "[")?;
        for i in 0..m.nrows() {
            if i > 0 {
                write!(f, ";")?;
            }
            for j in 0..m.ncols() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", m[(i, j)])?;
            }
        }
        write!(f, "]")?;
    }
    Ok(())
}

/// Renders as `V[x] a V*[y]`.
impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V[{}] ", self.x)?;
        write_element(f, &self.a)?;
        write!(f, " V*[{}]", self.y)
    }
}

impl fmt::Display for MonomialSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}
