//! File formats and the command implementations behind the CLI.

pub mod ad_json;
pub mod commands;
pub mod config;
pub mod csv_data;
pub mod report;

pub use ad_json::{emit_ad, parse_ad_file, parse_ad_str};
pub use config::{DesignConfig, FitConfig, OutputFormat, Standardization};
pub use csv_data::Table;
pub use report::FitDocument;
