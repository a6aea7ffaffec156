//! Builds the context extraction module and prints every node with its output
//! shape for a 16×16 F5 map.
//!
//! ```text
//! cargo run --example cem_table -- 3 12 24
//! ```

use acfpn::analysis::complexity_report;
use acfpn::cem::{cem_build, channel_plan, CemConfig, CEM_INPUT};
use acfpn::Shape;

fn main() -> acfpn::Result<()> {
    let rates: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = CemConfig::default();
    if !rates.is_empty() {
        cfg = cfg.with_rates(&rates);
    }
    let graph = cem_build(&cfg)?;
    println!("rates {:?}, 1x1 input widths {:?}\n", cfg.rates, channel_plan(&cfg));
    println!("{}", complexity_report(&graph, &[(CEM_INPUT, Shape::new(1, 2048, 16, 16))])?);
    Ok(())
}
