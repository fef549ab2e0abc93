//! `pan generate`: synthesize the dataset to disk.

use std::path::Path;

use crate::chatter;
use crate::commands::echo_config;
use crate::config::RunConfig;
use crate::dataset::generate_to_disk;
use crate::error::Result;

pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let spec = cfg.synth_spec()?;
    echo_config(cfg, out_dir)?;
    let records = generate_to_disk(&spec, out_dir)?;
    let train = records
        .iter()
        .filter(|r| r.split == pan_core::synth::Split::Train)
        .count();
    chatter!("wrote {} samples under {}", records.len(), out_dir.display());
    println!(
        "generated {} samples ({} train / {} val) in {}",
        records.len(),
        train,
        records.len() - train,
        out_dir.display()
    );
    Ok(())
}
