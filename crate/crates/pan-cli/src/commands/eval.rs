//! `pan eval`: metrics and per-class confusion counts for a checkpoint.

use std::fmt::Write as _;
use std::path::Path;

use pan_core::model::build;
use pan_core::synth::Split;
use pan_core::trainer::{evaluate, SampleSource};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::DiskDataset;
use crate::error::{CliError, Result};

/// Rebuilds the checkpointed model and checks it against the dataset geometry.
pub fn load_model(
    ckpt_dir: &Path,
    data_dir: &Path,
) -> Result<(pan_core::model::BuiltModel<f32>, RunConfig)> {
    let (store, ckpt_cfg) = checkpoint::load(ckpt_dir)?;
    // the dataset's geometry must match what the checkpoint was trained on
    let data_cfg_text = std::fs::read_to_string(data_dir.join("config.resolved"))
        .map_err(|e| CliError::io(format!("dataset config: {e}")))?;
    let data_cfg = RunConfig::parse(&data_cfg_text, &[])?;
    let mut merged_overrides = Vec::new();
    for line in data_cfg.resolved_text().lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.starts_with("data.") {
                merged_overrides.push((k.to_string(), v.to_string()));
            }
        }
    }
    let merged = RunConfig::parse(&ckpt_cfg.resolved_text(), &merged_overrides)?;
    merged
        .check_model_matches_data()
        .map_err(|e| CliError::config(format!("checkpoint/dataset mismatch: {e}")))?;

    let model_cfg = ckpt_cfg.model_config()?;
    let mut model = build::<f32>(&model_cfg)?;
    model.store.load_values_from(&store)?;
    Ok((model, ckpt_cfg))
}

pub fn run(ckpt_dir: &Path, data_dir: &Path, split: Split, out: Option<&Path>) -> Result<()> {
    let (model, _) = load_model(ckpt_dir, data_dir)?;
    let data = DiskDataset::open(data_dir, split)?;
    if data.len() == 0 {
        return Err(CliError::config(format!("split {:?} is empty", split.tag())));
    }
    let outcome = evaluate(&model, &data, 16)?;
    println!(
        "split={} loss={:.6} top1={:.6} mca={:.6} samples={}",
        split.tag(),
        outcome.loss,
        outcome.confusion.top1(),
        outcome.confusion.mean_class_accuracy(),
        outcome.confusion.total()
    );
    if let (Some(rgb), Some(skel)) = (&outcome.rgb_confusion, &outcome.skel_confusion) {
        println!(
            "pathways: rgb top1={:.6} skeleton top1={:.6}",
            rgb.top1(),
            skel.top1()
        );
    }
    let mut csv = String::from("true_class");
    let k = outcome.confusion.classes;
    for p in 0..k {
        let _ = write!(csv, ",pred_{p}");
    }
    csv.push('\n');
    for t in 0..k {
        let _ = write!(csv, "{t}");
        for p in 0..k {
            let _ = write!(csv, ",{}", outcome.confusion.counts[t * k + p]);
        }
        csv.push('\n');
    }
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, csv)?;
            println!("confusion -> {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
