//! Three ways to average over the Gaussian couplings, on E tanh²(βg).
//! Gauss–Hermite converges slowly here because tanh has poles near the
//! real axis; the trapezoid rule converges geometrically.
//!
//!     cargo run --release --example disorder_averaging

use qoverlap::disorder::{average_with, Averaging};
use qoverlap::model::System;
use qoverlap::pauli::Axis;

fn main() -> qoverlap::Result<()> {
    let sys = System::random_field(1, 1, &[Axis::Z], 1.0, 0.0, 1.0)?;
    let f = |g: &qoverlap::pauli::DisorderSample| Ok(g.values[0].tanh().powi(2));
    let reference = average_with(f, &sys.spec, &Averaging::trapezoid(0.1, 12.0))?.mean;
    println!("reference {reference:.15}");
    for avg in [Averaging::gh(5), Averaging::gh(11), Averaging::gh(15), Averaging::trapezoid(0.5, 9.0), Averaging::trapezoid(0.25, 9.0)] {
        let r = average_with(f, &sys.spec, &avg)?;
        println!("{:<10} {:>3} nodes: error {:.2e}", format!("{:?}", avg.mode), avg.rule()?.len(), r.mean - reference);
    }
    let r = average_with(f, &sys.spec, &Averaging::mc(20_000, 3))?;
    println!("mc 20000: {:.6} ± {:.6}", r.mean, r.std_error);
    Ok(())
}
