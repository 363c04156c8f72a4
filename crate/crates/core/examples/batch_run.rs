//! Run the bundled config programmatically and show the summary table.
//!
//!     cargo run --release --example batch_run

use qoverlap::runner::{run, Overrides};

fn main() -> qoverlap::Result<()> {
    let out = std::env::temp_dir().join("qoverlap-batch-run");
    let outcome = run("single_site_exact", &Overrides { out: Some(out.clone()), ..Default::default() })?;
    println!("{} reports, exit code {}", outcome.reports, outcome.exit_code());
    print!("{}", std::fs::read_to_string(out.join("summary.csv"))?);
    Ok(())
}
