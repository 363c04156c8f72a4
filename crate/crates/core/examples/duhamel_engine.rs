//! Duhamel expectations from the spectral formula against the closed form
//! for one spin and against finite differences of log Z.
//!
//!     cargo run --release --example duhamel_engine

use qoverlap::pauli::{Axis, SpinOperator};
use qoverlap::spectral::{duhamel, duhamel_fd_oracle, eigendecompose, gibbs_expect};

fn main() -> qoverlap::Result<()> {
    let sx = SpinOperator::new(Axis::X, &[0], 1)?.to_dense();
    let sz = SpinOperator::new(Axis::Z, &[0], 1)?.to_dense();
    println!("{:>6} {:>20} {:>20}", "beta*h", "(sx, sx)_D", "tanh(bh)/(bh)");
    for bh in [0.1, 1.0, 10.0] {
        // H = -h σ^z with h = 1
        let h = -&sz;
        let sd = eigendecompose(&h, bh)?;
        let d = duhamel(&sd, &[&sx, &sx])?.value;
        println!("{bh:>6} {d:>20.15} {:>20.15}", f64::tanh(bh) / bh);
    }

    // two spins, transverse field: order 1 equals the Gibbs value, order 3 vs oracle
    let n = 2;
    let zz = SpinOperator::new(Axis::Z, &[0, 1], n)?.to_dense();
    let x0 = SpinOperator::new(Axis::X, &[0], n)?.to_dense();
    let x1 = SpinOperator::new(Axis::X, &[1], n)?.to_dense();
    let h = -&zz - &x0 * qoverlap::pauli::C64::new(0.7, 0.0) - &x1 * qoverlap::pauli::C64::new(0.4, 0.0);
    let sd = eigendecompose(&h, 1.3)?;
    println!("order 1: {:.12} vs Gibbs {:.12}", duhamel(&sd, &[&x0])?.value, gibbs_expect(&sd, &x0)?);
    let spectral = duhamel(&sd, &[&x0, &zz, &x1])?.value;
    let fd = duhamel_fd_oracle(&h, 1.3, &[&x0, &zz, &x1], 1e-2)?.value;
    println!("order 3: spectral {spectral:.10}, finite differences {fd:.10}");
    Ok(())
}
