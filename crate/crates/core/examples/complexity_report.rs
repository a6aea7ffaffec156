//! Parameter and MAC totals for the context and attention modules, with the
//! receptive-field growth the context module adds on top of F5.
//!
//! ```text
//! cargo run --example complexity_report
//! ```

use acfpn::cli::{cmd_report, RunConfig};

fn main() -> acfpn::Result<()> {
    let dir = std::env::temp_dir().join("acfpn-report");
    let cfg = RunConfig { output_dir: dir, ..RunConfig::default() };
    let summary = cmd_report(&cfg, &mut std::io::stdout())?;
    println!("\n{} parameters added, {:+.2}% from the reference", summary.added_params(), summary.deviation_pct());
    Ok(())
}
