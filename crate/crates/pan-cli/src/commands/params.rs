//! `pan params`: exact learnable-parameter counts with a per-module breakdown.

use pan_core::model::count_parameters;

use crate::config::RunConfig;
use crate::error::Result;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let (total, breakdown) = count_parameters(&model_cfg)?;
    println!("total {total}");
    for (module, count) in breakdown {
        println!("{module} {count}");
    }
    Ok(())
}
