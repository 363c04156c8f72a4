//! Overlap and field observables of one realization, replica by replica.
//!
//!     cargo run --release --example replica_overlaps

use qoverlap::disorder::sample_disorder;
use qoverlap::model::System;
use qoverlap::pauli::Axis;
use qoverlap::replica::{Atom, AtomTerm, Evaluator};

fn main() -> qoverlap::Result<()> {
    let sys = System::random_field(1, 4, &[Axis::Z, Axis::X], 1.0, 1.0, 1.0)?;
    let g = sample_disorder(&sys.spec, 7, 0);
    let sd = sys.spectral(&g)?;
    let ctx = sys.replica_context(Axis::Z, &g)?;
    let mut ev = Evaluator::new(&sd, &ctx)?;

    let r = |a, b| Atom::Overlap { a, b };
    let terms = [
        ("(R11)_D", vec![r(1, 1)]),
        ("(R12)_D", vec![r(1, 2)]),
        ("(h)_D", vec![Atom::Field { a: 1 }]),
        ("(R12 R12)_D", vec![r(1, 2), r(1, 2)]),
        ("(R12 R11)_D", vec![r(1, 2), r(1, 1)]),
        ("(R11 R11)_D", vec![r(1, 1), r(1, 1)]),
    ];
    for (label, atoms) in terms {
        println!("{label:<14} {:>14.10}", ev.eval_term(&AtomTerm::new(1.0, atoms))?);
    }
    println!("<sigma^z_i>: {:?}", ev.expectations(Axis::Z)?);
    Ok(())
}
