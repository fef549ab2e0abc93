//! Command implementations behind the CLI surface.

pub mod ablate;
pub mod attnmaps;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod params;
pub mod sample;
pub mod train;

use std::path::Path;

use crate::config::RunConfig;
use crate::error::Result;

/// Echoes the resolved config and its content hash into a run directory.
pub fn echo_config(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.resolved"), cfg.resolved_text())?;
    std::fs::write(out_dir.join("config.hash"), format!("{}\n", cfg.content_hash()))?;
    Ok(())
}

/// Progress chatter goes to stderr and is gated by PAN_VERBOSE.
pub fn verbose() -> bool {
    std::env::var("PAN_VERBOSE").map_or(false, |v| v != "0" && !v.is_empty())
}

#[macro_export]
macro_rules! chatter {
    ($($arg:tt)*) => {
        if $crate::commands::verbose() {
            eprintln!($($arg)*);
        }
    };
}
