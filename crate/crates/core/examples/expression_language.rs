//! Parse, print and evaluate identities written in the expression language.
//!
//!     cargo run --release --example expression_language

use qoverlap::disorder::Averaging;
use qoverlap::dsl::{evaluate_many, parse, parse_identity_file, EvalContext};
use qoverlap::model::System;
use qoverlap::pauli::Axis;

const IDENTITIES: &str = "
# name ; kind ; lhs ; rhs
ibp_f1 ; exact ; E[D[h(1)]] ; beta*J*E[D[R(1,1) - R(1,2)]]
gibbs_r12 ; exact ; E[D[R(1,2)]] ; E[G[R(1,2)]]
";

fn main() -> qoverlap::Result<()> {
    let e = parse("E[D[R(1,2)*R(1,1)] - D[R(1,2)]*D[R(1,1)]]")?;
    println!("canonical: {e}");
    for bad in ["E[D[R(1,2)]", "E[R(1,2)]", "E[D[R(0,1)]]"] {
        println!("{bad:<16} -> {}", parse(bad).unwrap_err());
    }

    let sys = System::random_field(1, 2, &[Axis::Z], 1.0, 0.0, 1.0)?;
    let ctx = EvalContext { system: &sys, axis: Axis::Z, avg: Averaging::trapezoid(0.25, 9.0) };
    for id in parse_identity_file(IDENTITIES)? {
        let v = evaluate_many(&[&id.lhs, &id.rhs], &ctx)?;
        println!("{:<10} lhs {:.12}  rhs {:.12}  diff {:.1e}", id.name, v[0].mean, v[1].mean, v[0].mean - v[1].mean);
    }
    Ok(())
}
