//! Finite-size residuals of the two overlap identities and the
//! fluctuation of the field, on small chains.
//!
//!     cargo run --release --example overlap_trends [samples]

use qoverlap::disorder::Averaging;
use qoverlap::model::System;
use qoverlap::pauli::Axis;
use qoverlap::verifier::{check_gg1, check_gg2};

fn main() -> qoverlap::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let systems: Vec<System> =
        [2, 3, 4].iter().map(|&l| System::random_field(1, l, &[Axis::Z, Axis::X], 1.0, 1.0, 1.0)).collect::<Result<_, _>>()?;
    let avg = Averaging::mc(n, 2024);
    let mut reports = check_gg1(1, "R(1,1)", &systems, Axis::Z, &avg)?;
    reports.extend(check_gg2(1, "R(1,1)", &systems, Axis::Z, &avg)?);
    for r in reports {
        println!(
            "{:<20} L={} lhs {:>11.3e} rhs {:>11.3e} residual {:>11.3e} ± {:.1e} {}",
            r.identity,
            r.l,
            r.lhs,
            r.rhs,
            r.residual,
            r.std_error,
            if r.pass { "pass" } else { "fail" }
        );
    }
    Ok(())
}
