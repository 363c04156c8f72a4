//! Build a 2x2 lattice, its range families and a dense Hamiltonian.
//!
//!     cargo run --example lattice_hamiltonian

use qoverlap::lattice::{build_lattice, build_ranges, nearest_neighbor_bonds, BaseSet};
use qoverlap::pauli::{assemble_hamiltonian, hermitian_deviation, Axis, DisorderSample, HamiltonianSpec};

fn main() -> qoverlap::Result<()> {
    let lat = build_lattice(2, 2)?;
    println!("sites: {:?}", lat.sites());

    let fields = build_ranges(&lat, &[BaseSet::single_site(2)])?;
    let bonds = nearest_neighbor_bonds(&lat);
    println!("single-site ranges: {:?}", fields.ranges);
    println!("nearest-neighbor bonds: {:?}", bonds.ranges);

    let spec = HamiltonianSpec { j: 1.0, random: bonds, axes: vec![Axis::Z, Axis::X], nonrandom: vec![] };
    let g = DisorderSample::from_values((0..spec.num_couplings()).map(|i| 0.1 * i as f64 - 0.3).collect());
    let h = assemble_hamiltonian(&spec, &g, &lat)?;
    println!("dim {} x {}, hermiticity defect {:e}", h.nrows(), h.ncols(), hermitian_deviation(&h));
    Ok(())
}
