//! Interpolation between a chain cut into blocks and the full chain.
//!
//!     cargo run --release --example block_interpolation

use qoverlap::disorder::Averaging;
use qoverlap::model::System;
use qoverlap::pauli::Axis;
use qoverlap::verifier::block_interpolation_check;

fn main() -> qoverlap::Result<()> {
    let sys = System::random_bond(1, 6, &[Axis::Z, Axis::X], 1.0, 0.0, 1.0)?;
    for r in block_interpolation_check(&sys, 3, &Averaging::mc(100, 5))? {
        println!(
            "{:<24} lhs {:>10.6} rhs {:>10.6} residual {:>10.2e} ± {:.1e} {} {}",
            r.identity,
            r.lhs,
            r.rhs,
            r.residual,
            r.std_error,
            if r.pass { "pass" } else { "fail" },
            r.note.unwrap_or_default()
        );
    }
    Ok(())
}
