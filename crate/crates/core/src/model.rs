//! Ready-made systems: a lattice, a Hamiltonian recipe and `β`.

use crate::error::{arg_err, Result};
use crate::lattice::{build_lattice, build_ranges_with, nearest_neighbor_bonds, BaseSet, Boundary, Lattice, RangeOptions};
use crate::pauli::{assemble_hamiltonian, Axis, CMatrix, DisorderSample, HamiltonianSpec, NonRandomTerm, DEFAULT_DIM_CAP};
use crate::replica::ReplicaContext;
use crate::spectral::{eigendecompose, log_pressure, SpectralData};

/// Largest number of sites a [`System`] accepts.
pub const MAX_SITES: usize = 10;

/// A disordered spin system at inverse temperature `beta`.
#[derive(Debug, Clone)]
pub struct System {
    pub lattice: Lattice,
    pub spec: HamiltonianSpec,
    pub beta: f64,
    /// Short description used in reports.
    pub model: String,
}

fn check_size(lat: &Lattice) -> Result<()> {
    if lat.num_sites() > MAX_SITES {
        return Err(crate::Error::Size { what: "sites", value: lat.num_sites(), cap: MAX_SITES });
    }
    Ok(())
}

fn heisenberg_terms(lat: &Lattice, strength: f64) -> Vec<NonRandomTerm> {
    if strength == 0.0 {
        return vec![];
    }
    let mut out = Vec::new();
    for b in nearest_neighbor_bonds(lat).ranges {
        for nu in Axis::ALL {
            out.push(NonRandomTerm { sites: b.clone(), axis: nu, coeff: -strength });
        }
    }
    out
}

impl System {
    /// Random fields `-J Σ_i g_i^μ σ_i^μ` on the given axes plus Heisenberg
    /// bonds of strength `heisenberg` (open boundary).
    pub fn random_field(d: usize, side: usize, axes: &[Axis], j: f64, heisenberg: f64, beta: f64) -> Result<System> {
        let lat = build_lattice(d, side)?;
        check_size(&lat)?;
        let random = build_ranges_with(&lat, &[BaseSet::single_site(d)], RangeOptions::default(), "Lambda")?;
        let spec = HamiltonianSpec { j, random, axes: axes.to_vec(), nonrandom: heisenberg_terms(&lat, heisenberg) };
        let model = format!("random_field[{}]", axes_label(axes));
        System::new(lat, spec, beta, model)
    }

    /// Random nearest-neighbor bonds on the given axes with mean `g0`.
    /// The mean is carried by `H_non = -J g0 Σ_B Σ_μ σ_X^μ`.
    pub fn random_bond(d: usize, side: usize, axes: &[Axis], j: f64, g0: f64, beta: f64) -> Result<System> {
        let lat = build_lattice(d, side)?;
        check_size(&lat)?;
        let random = nearest_neighbor_bonds(&lat);
        if random.is_empty() {
            return arg_err("random-bond model needs at least one bond");
        }
        let mut nonrandom = Vec::new();
        if g0 != 0.0 {
            for b in &random.ranges {
                for &mu in axes {
                    nonrandom.push(NonRandomTerm { sites: b.clone(), axis: mu, coeff: -j * g0 });
                }
            }
        }
        let spec = HamiltonianSpec { j, random, axes: axes.to_vec(), nonrandom };
        let model = format!("random_bond[{}]", axes_label(axes));
        System::new(lat, spec, beta, model)
    }

    pub fn new(lattice: Lattice, spec: HamiltonianSpec, beta: f64, model: String) -> Result<System> {
        check_size(&lattice)?;
        spec.validate(&lattice)?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return arg_err(format!("β must be finite and ≥ 0, got {beta}"));
        }
        Ok(System { lattice, spec, beta, model })
    }

    pub fn with_beta(&self, beta: f64) -> System {
        System { beta, ..self.clone() }
    }

    /// Same system with coupling `J` replaced; non-random terms that were
    /// built from `J` (the random-bond mean) are left unchanged so that
    /// `∂/∂J` acts on the random part only.
    pub fn with_j(&self, j: f64) -> System {
        let mut s = self.clone();
        s.spec.j = j;
        s
    }

    pub fn d(&self) -> usize {
        self.lattice.dim()
    }

    pub fn side(&self) -> usize {
        self.lattice.side()
    }

    pub fn volume(&self) -> usize {
        self.lattice.num_sites()
    }

    pub fn dim(&self) -> usize {
        1 << self.volume()
    }

    pub fn hamiltonian(&self, g: &DisorderSample) -> Result<CMatrix> {
        assemble_hamiltonian(&self.spec, g, &self.lattice)
    }

    pub fn spectral(&self, g: &DisorderSample) -> Result<SpectralData> {
        eigendecompose(&self.hamiltonian(g)?, self.beta)
    }

    /// `ψ_L = log Z / (|Λ| β)` for one realization.
    pub fn psi(&self, g: &DisorderSample) -> Result<f64> {
        log_pressure(&self.spectral(g)?, self.volume())
    }

    /// Context in which `R`, `h` and `S` refer to axis `mu` of this system.
    pub fn replica_context(&self, mu: Axis, g: &DisorderSample) -> Result<ReplicaContext> {
        let field = g
            .axis_values(&self.spec, mu)
            .ok_or_else(|| crate::Error::Context(format!("axis {mu} carries no random couplings")))?;
        Ok(ReplicaContext { family: self.spec.random.clone(), axis: mu, field, n_sites: self.volume() })
    }

    /// True when every random and non-random term acts along `z`.
    pub fn is_z_only(&self) -> bool {
        self.spec.axes.iter().all(|&a| a == Axis::Z) && self.spec.nonrandom.iter().all(|t| t.axis == Axis::Z)
    }
}

fn axes_label(axes: &[Axis]) -> String {
    axes.iter().map(|a| a.as_char()).collect()
}

/// Family of ranges from explicit base sets, used by config-driven runs.
pub fn custom_system(
    d: usize,
    side: usize,
    base_sets: &[BaseSet],
    axes: &[Axis],
    j: f64,
    nonrandom: Vec<NonRandomTerm>,
    beta: f64,
    boundary: Boundary,
) -> Result<System> {
    let lat = build_lattice(d, side)?;
    check_size(&lat)?;
    let random = build_ranges_with(&lat, base_sets, RangeOptions { boundary, ..RangeOptions::default() }, "C")?;
    let spec = HamiltonianSpec { j, random, axes: axes.to_vec(), nonrandom };
    System::new(lat, spec, beta, format!("custom[{}]", axes_label(axes)))
}

const _: () = assert!(1 << MAX_SITES <= DEFAULT_DIM_CAP);
