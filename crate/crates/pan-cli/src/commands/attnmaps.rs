//! `pan attnmaps`: dump the post-softmax calibration maps for one sample.

use std::path::Path;

use pan_core::trainer::SampleSource;
use pan_core::sampling::{even_sample, extend_persons, guided_sample, SamplingStrategy};

use crate::commands::eval::load_model;
use crate::container::write_tensor;
use crate::dataset::{read_manifest, DiskDataset};
use crate::error::{CliError, Result};

pub fn run(ckpt_dir: &Path, data_dir: &Path, sample_id: &str, out: &Path) -> Result<()> {
    let (model, _) = load_model(ckpt_dir, data_dir)?;
    let record = read_manifest(data_dir)?
        .into_iter()
        .find(|r| r.id == sample_id)
        .ok_or_else(|| CliError::config(format!("sample id {sample_id:?} not in manifest")))?;
    let split = record.split;
    let data = DiskDataset::open(data_dir, split)?;
    let sample = data
        .records()
        .iter()
        .position(|r| r.id == sample_id)
        .map(|i| data.load(i))
        .ok_or_else(|| CliError::config(format!("sample id {sample_id:?} not found")))?;

    let cfg = &model.cfg;
    let tokens = match cfg.sampling {
        SamplingStrategy::Guided => guided_sample(&sample.grid, &sample.skel2d)?,
        SamplingStrategy::Even => even_sample(
            &sample.grid,
            sample.skel2d.persons(),
            cfg.joints(),
            cfg.even_interp,
        )?,
    };
    let tokens = extend_persons(&tokens, cfg.persons, cfg.extend_mode)?;
    let maps = model.attention_maps(&sample.grid, &tokens)?;
    write_tensor(out, &maps)?;
    println!(
        "attention maps {:?} for {} -> {}",
        maps.dims(),
        sample_id,
        out.display()
    );
    Ok(())
}
