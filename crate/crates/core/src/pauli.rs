//! Pauli strings `σ_X^μ` and assembly of the disordered Hamiltonian
//! `H = -J Σ_X Σ_μ g_X^μ σ_X^μ + H_non`.
//!
//! Tensor factors follow lexicographic site order: site 0 is the leftmost
//! factor, i.e. the most significant bit of the basis index. Bit value 0 is
//! spin up (`σ^z = +1`).

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::lattice::{Lattice, RangeFamily};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Default cap on the Hilbert-space dimension for dense work.
pub const DEFAULT_DIM_CAP: usize = 1 << 10;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn from_char(c: char) -> Option<Axis> {
        match c {
            'x' => Some(Axis::X),
            'y' => Some(Axis::Y),
            'z' => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// `σ_X^μ` on an `n_sites`-spin Hilbert space. Stored as a signed
/// permutation: every row and column holds exactly one unit-modulus entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinOperator {
    pub axis: Axis,
    pub support: Vec<usize>,
    n_sites: usize,
    mask: usize,
}

impl SpinOperator {
    pub fn new(axis: Axis, support: &[usize], n_sites: usize) -> Result<Self> {
        if support.is_empty() {
            return arg_err("σ_X needs a nonempty support");
        }
        if n_sites >= usize::BITS as usize {
            return Err(Error::Size { what: "sites", value: n_sites, cap: 63 });
        }
        let mut sup = support.to_vec();
        sup.sort_unstable();
        sup.dedup();
        let mut mask = 0usize;
        for &s in &sup {
            if s >= n_sites {
                return arg_err(format!("site {s} outside lattice of {n_sites} sites"));
            }
            mask |= 1 << (n_sites - 1 - s);
        }
        Ok(Self { axis, support: sup, n_sites, mask })
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Image of basis state `col`: returns `(row, value)` with
    /// `O |col> = value |row>`.
    #[inline]
    pub fn column(&self, col: usize) -> (usize, C64) {
        let parity = if (col & self.mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        match self.axis {
            Axis::Z => (col, C64::new(parity, 0.0)),
            Axis::X => (col ^ self.mask, C64::new(1.0, 0.0)),
            Axis::Y => {
                let phase = I.powu(self.support.len() as u32);
                (col ^ self.mask, phase * parity)
            }
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        self.apply_add(C64::new(1.0, 0.0), v, &mut out);
        out
    }

    /// `out += coeff * O v`
    pub fn apply_add(&self, coeff: C64, v: &[C64], out: &mut [C64]) {
        for (c, &x) in v.iter().enumerate() {
            let (r, val) = self.column(c);
            out[r] += coeff * val * x;
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for c in 0..n {
            let (r, val) = self.column(c);
            m[(r, c)] = val;
        }
        m
    }

    /// Whether this operator commutes with `other` (Pauli strings either
    /// commute or anticommute).
    pub fn commutes_with(&self, other: &SpinOperator) -> bool {
        if self.axis == other.axis {
            return true;
        }
        let overlap = (self.mask & other.mask).count_ones();
        overlap % 2 == 0
    }
}

/// `σ_i^μ`: Pauli matrix on site `i`, identity elsewhere.
pub fn pauli_site(mu: Axis, i: usize, lat: &Lattice) -> Result<SpinOperator> {
    if i >= lat.num_sites() {
        return arg_err(format!("site {i} outside lattice of {} sites", lat.num_sites()));
    }
    SpinOperator::new(mu, &[i], lat.num_sites())
}

/// `σ_X^μ = Π_{i ∈ X} σ_i^μ`.
pub fn sigma_x(mu: Axis, x: &[usize], lat: &Lattice) -> Result<SpinOperator> {
    SpinOperator::new(mu, x, lat.num_sites())
}

/// A deterministic term of `H_non`: `coeff · σ_X^axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonRandomTerm {
    pub sites: Vec<usize>,
    pub axis: Axis,
    pub coeff: f64,
}

/// Recipe for the random Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec {
    pub j: f64,
    /// `C_L`: ranges carrying Gaussian couplings.
    pub random: RangeFamily,
    /// Axes on which the random couplings act.
    pub axes: Vec<Axis>,
    /// `H_non` over the family `C'_L`.
    pub nonrandom: Vec<NonRandomTerm>,
}

impl HamiltonianSpec {
    /// Number of Gaussian couplings `|C_L| * |axes|`.
    pub fn num_couplings(&self) -> usize {
        self.random.len() * self.axes.len()
    }

    pub fn axis_position(&self, mu: Axis) -> Option<usize> {
        self.axes.iter().position(|&a| a == mu)
    }

    /// Canonical flat coupling index of `(range, axis position)`.
    pub fn coupling_index(&self, range: usize, axis_pos: usize) -> usize {
        range * self.axes.len() + axis_pos
    }

    pub fn validate(&self, lat: &Lattice) -> Result<()> {
        let n = lat.num_sites();
        if !self.j.is_finite() {
            return arg_err("J must be finite");
        }
        let mut seen = self.axes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.axes.len() {
            return arg_err("duplicate random axis");
        }
        for r in &self.random.ranges {
            if r.is_empty() || r.iter().any(|&s| s >= n) {
                return arg_err("random range outside the lattice");
            }
        }
        for t in &self.nonrandom {
            if !t.coeff.is_finite() {
                return arg_err("non-random coefficient must be finite");
            }
            if t.sites.is_empty() || t.sites.iter().any(|&s| s >= n) {
                return arg_err("non-random range outside the lattice");
            }
        }
        Ok(())
    }
}

/// One realization of the couplings `g_X^μ`, flat in the order
/// `(range ordinal, axis position)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderSample {
    pub values: Vec<f64>,
    pub seed: u64,
    pub sample_index: u64,
}

impl DisorderSample {
    pub fn zeros(spec: &HamiltonianSpec) -> Self {
        Self { values: vec![0.0; spec.num_couplings()], seed: 0, sample_index: 0 }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values, seed: 0, sample_index: 0 }
    }

    pub fn get(&self, spec: &HamiltonianSpec, range: usize, mu: Axis) -> Option<f64> {
        let p = spec.axis_position(mu)?;
        self.values.get(spec.coupling_index(range, p)).copied()
    }

    /// The couplings `g^μ` of one axis, indexed by range ordinal.
    pub fn axis_values(&self, spec: &HamiltonianSpec, mu: Axis) -> Option<Vec<f64>> {
        let p = spec.axis_position(mu)?;
        Some((0..spec.random.len()).map(|r| self.values[spec.coupling_index(r, p)]).collect())
    }
}

/// A Hamiltonian as a list of weighted Pauli strings.
#[derive(Debug, Clone)]
pub struct TermList {
    pub n_sites: usize,
    pub terms: Vec<(f64, SpinOperator)>,
}

impl TermList {
    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        for (c, op) in &self.terms {
            op.apply_add(C64::new(*c, 0.0), v, &mut out);
        }
        out
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for (coeff, op) in &self.terms {
            for col in 0..n {
                let (r, val) = op.column(col);
                m[(r, col)] += val * *coeff;
            }
        }
        m
    }
}

/// The Hamiltonian in term-list form.
pub fn hamiltonian_terms(
    spec: &HamiltonianSpec,
    g: &DisorderSample,
    lat: &Lattice,
) -> Result<TermList> {
    spec.validate(lat)?;
    if g.values.len() != spec.num_couplings() {
        return Err(Error::Dimension { expected: spec.num_couplings(), got: g.values.len() });
    }
    let n = lat.num_sites();
    let mut terms = Vec::with_capacity(spec.num_couplings() + spec.nonrandom.len());
    for (r, range) in spec.random.ranges.iter().enumerate() {
        for (p, &mu) in spec.axes.iter().enumerate() {
            let c = -spec.j * g.values[spec.coupling_index(r, p)];
            terms.push((c, SpinOperator::new(mu, range, n)?));
        }
    }
    for t in &spec.nonrandom {
        terms.push((t.coeff, SpinOperator::new(t.axis, &t.sites, n)?));
    }
    Ok(TermList { n_sites: n, terms })
}

/// Dense Hermitian matrix of `H_L(σ, g)`.
pub fn assemble_hamiltonian(
    spec: &HamiltonianSpec,
    g: &DisorderSample,
    lat: &Lattice,
) -> Result<CMatrix> {
    assemble_hamiltonian_capped(spec, g, lat, DEFAULT_DIM_CAP)
}

pub fn assemble_hamiltonian_capped(
    spec: &HamiltonianSpec,
    g: &DisorderSample,
    lat: &Lattice,
    dim_cap: usize,
) -> Result<CMatrix> {
    let n = lat.num_sites();
    if n >= usize::BITS as usize || (1usize << n) > dim_cap {
        return Err(Error::Size { what: "Hilbert dimension", value: 1usize << n.min(62), cap: dim_cap });
    }
    Ok(hamiltonian_terms(spec, g, lat)?.to_dense())
}

/// `max |M - M†|` entrywise.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}
