//! Parses a run configuration, prints the resolved network widths and writes
//! the canonical text back out.
//!
//! ```text
//! cargo run --example config_file
//! ```

use acfpn::cli::RunConfig;

const TEXT: &str = "\
# three-path ablation without deformable sampling
seed = 7
precision = f64
cem.rates = 3,12,24
cem.use_deformable = false
input.shape = 1,3,256,192
output.dump = true
";

fn main() -> acfpn::Result<()> {
    let cfg = RunConfig::parse(TEXT)?;
    println!("{:#?}\n", cfg.network.cem);
    println!("attention sees {} channels, context {}", cfg.network.am.channels, cfg.network.am.context_channels);
    println!("\n{}", cfg.to_text());

    match RunConfig::parse("cem.rate = 3") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
