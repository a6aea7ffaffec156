//! Runs the full gradient-check suite and prints one line per op.
//!
//! ```text
//! cargo run --example gradcheck
//! ```

use acfpn::checks::gradcheck_suite;

fn main() -> acfpn::Result<()> {
    let entries = gradcheck_suite(0, None)?;
    for e in &entries {
        println!("{e}");
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    println!("{} ops, {failed} failed", entries.len());
    Ok(())
}
