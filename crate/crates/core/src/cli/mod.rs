//! Library side of the `acfpn` command-line tool.

mod commands;
mod config;

pub use commands::{
    backbone_f5_rf, cmd_dump_attention, cmd_forward, cmd_gradcheck, cmd_report, load_input, GradcheckOutcome,
    ReportSummary, REFERENCE_ADDED_PARAMS,
};
pub use config::{Distribution, InputSource, RunConfig, KEYS};
