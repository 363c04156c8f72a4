//! Commuting couplings: Duhamel blocks reduce to Gibbs blocks.
//!
//!     cargo run --release --example classical_limit

use qoverlap::disorder::Averaging;
use qoverlap::model::System;
use qoverlap::pauli::Axis;
use qoverlap::verifier::classical_limit_suite;

fn main() -> qoverlap::Result<()> {
    let sys = System::random_field(1, 2, &[Axis::Z], 1.0, 0.0, 1.0)?;
    for r in classical_limit_suite(&sys, Axis::Z, &Averaging::trapezoid(0.25, 9.0))? {
        println!("{:<20} {:<10} lhs {:>12.9} rhs {:>12.9} {}", r.identity, r.kind.to_string(), r.lhs, r.rhs, r.pass);
    }
    let quantum = System::random_field(1, 2, &[Axis::Z, Axis::X], 1.0, 0.0, 1.0)?;
    println!("x+z fields: {}", classical_limit_suite(&quantum, Axis::Z, &Averaging::gh(5)).unwrap_err());
    Ok(())
}
