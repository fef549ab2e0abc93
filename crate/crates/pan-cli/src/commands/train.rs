//! `pan train`: optimize a model on a generated dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use pan_core::synth::Split;
use pan_core::trainer::{fit, SampleSource};

use crate::commands::echo_config;
use crate::config::RunConfig;
use crate::dataset::DiskDataset;
use crate::error::{CliError, Result};
use crate::{chatter, checkpoint};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LOG_FILE: &str = "run.log";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub fn run(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<()> {
    cfg.check_model_matches_data()?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    echo_config(cfg, out_dir)?;

    let train_data = DiskDataset::open(data_dir, Split::Train)?;
    let val_data = DiskDataset::open(data_dir, Split::Val)?;
    if train_data.len() == 0 {
        return Err(CliError::config("dataset has no training split"));
    }
    chatter!(
        "training on {} samples, validating on {}",
        train_data.len(),
        val_data.len()
    );

    // deterministic metrics; wall-clock timings are confined to the log
    let mut metrics = String::from("epoch,split,loss,top1,mca\n");
    let mut log = String::new();
    let started = Instant::now();
    let mut last_mark = Instant::now();
    let result = fit(
        &model_cfg,
        &train_cfg,
        &train_data,
        &val_data,
        |row| {
            let _ = writeln!(
                metrics,
                "{},{},{:.6},{:.6},{:.6}",
                row.epoch,
                row.split.tag(),
                row.loss,
                row.top1,
                row.mca
            );
            let _ = writeln!(
                log,
                "epoch {:>3} {:<5} loss {:.6} top1 {:.4} mca {:.4} wall {:.2}s",
                row.epoch,
                row.split.tag(),
                row.loss,
                row.top1,
                row.mca,
                last_mark.elapsed().as_secs_f64()
            );
            last_mark = Instant::now();
            if super::verbose() {
                eprintln!(
                    "epoch {} {} loss {:.4} top1 {:.3}",
                    row.epoch,
                    row.split.tag(),
                    row.loss,
                    row.top1
                );
            }
        },
    )?;
    let _ = writeln!(log, "total wall {:.2}s", started.elapsed().as_secs_f64());

    fs::write(out_dir.join(METRICS_FILE), &metrics)?;
    fs::write(out_dir.join(LOG_FILE), &log)?;
    checkpoint::save(&result.best, cfg, &out_dir.join(CHECKPOINT_DIR))?;
    println!(
        "best val top1 {:.4} at epoch {} -> {}",
        result.best_val_top1,
        result.best_epoch,
        out_dir.join(CHECKPOINT_DIR).display()
    );
    Ok(())
}
