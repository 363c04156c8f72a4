//! Variance of the pressure against its bound, and the interpolation γ(u).
//!
//!     cargo run --release --example variance_interpolation

use qoverlap::disorder::Averaging;
use qoverlap::model::System;
use qoverlap::pauli::Axis;
use qoverlap::verifier::{check_gamma, check_variance};

fn main() -> qoverlap::Result<()> {
    let systems: Vec<System> = (2..=4)
        .map(|l| System::random_field(1, l, &[Axis::Z, Axis::X], 1.0, 1.0, 1.0))
        .collect::<Result<_, _>>()?;
    for r in check_variance(&systems, &Averaging::mc(400, 11))? {
        println!("{:<16} L={} |Λ|Var ψ {:.4e}  bound {:.4e}  {}", r.identity, r.l, r.lhs, r.rhs, r.pass);
    }

    let two = System::random_field(1, 2, &[Axis::Z], 1.0, 1.0, 1.0)?;
    for r in check_gamma(&two, Axis::Z, 2, &Averaging::gh(9))? {
        println!("{:<16} lhs {:.6e} rhs {:.6e} {} {}", r.identity, r.lhs, r.rhs, r.pass, r.note.unwrap_or_default());
    }
    Ok(())
}
