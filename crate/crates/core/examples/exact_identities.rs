//! Integration-by-parts identities, exact at every size.
//!
//!     cargo run --release --example exact_identities

use qoverlap::disorder::Averaging;
use qoverlap::model::System;
use qoverlap::pauli::Axis;
use qoverlap::verifier::{check_h_expectation, check_ibp};

fn main() -> qoverlap::Result<()> {
    let avg = Averaging::trapezoid(0.25, 9.0);
    for side in [2, 3] {
        for beta in [0.5, 1.0] {
            let sys = System::random_field(1, side, &[Axis::Z], 1.0, 0.0, beta)?;
            let mut reports = check_h_expectation(&sys, Axis::Z, &avg)?;
            for (n, f) in [(1, "R(1,1)"), (2, "R(1,2)")] {
                reports.push(check_ibp(n, f, &sys, Axis::Z, &avg)?);
            }
            for r in reports {
                println!(
                    "L={side} beta={beta} {:<28} residual {:>10.2e} tol {:.0e} {}",
                    r.identity,
                    r.residual,
                    r.tolerance,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
        }
    }
    Ok(())
}
