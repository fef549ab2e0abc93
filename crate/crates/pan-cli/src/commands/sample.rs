//! `pan sample`: run one sampling pass over a token-grid file.

use std::path::{Path, PathBuf};

use pan_core::sampling::{even_sample, guided_sample, EvenInterp, SampledTokens};
use pan_core::Tensor;

use crate::container::write_tensor;
use crate::dataset::{ingest_grid, ingest_skeleton};
use crate::error::{CliError, Result};

pub struct SampleArgs {
    pub grid: PathBuf,
    pub skeleton: Option<PathBuf>,
    pub strategy: String,
    pub out: PathBuf,
    pub patch: usize,
    pub img_h: Option<usize>,
    pub img_w: Option<usize>,
    pub persons: usize,
    pub joints: Option<usize>,
    pub interp: String,
}

fn indices_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sampled".into());
    name.push_str(".idx.pant");
    out.with_file_name(name)
}

pub fn run(args: &SampleArgs) -> Result<()> {
    let grid = ingest_grid::<f32>(&args.grid, args.patch, args.img_h, args.img_w)?;
    let tokens: SampledTokens<f32> = match args.strategy.as_str() {
        "guided" => {
            let skel_path = args.skeleton.as_ref().ok_or_else(|| {
                CliError::config("strategy=guided requires --skeleton with 2D joints")
            })?;
            let skel = ingest_skeleton::<f32>(skel_path)?;
            guided_sample(&grid, &skel)?
        }
        "even" => {
            let joints = args.joints.ok_or_else(|| {
                CliError::config("strategy=even requires --joints (tokens per person)")
            })?;
            let interp = match args.interp.as_str() {
                "linear" => EvenInterp::Linear,
                "nearest" => EvenInterp::Nearest,
                other => return Err(CliError::config(format!("bad --interp {other:?}"))),
            };
            even_sample(&grid, args.persons, joints, interp)?
        }
        other => {
            return Err(CliError::config(format!(
                "--strategy must be guided or even, got {other:?}"
            )))
        }
    };
    write_tensor(&args.out, &tokens.data)?;
    let idx_path = indices_path(&args.out);
    let idx_tensor = Tensor::from_vec(
        &[tokens.frames(), tokens.persons(), tokens.joints()],
        tokens.indices.iter().map(|&i| i as f32).collect(),
    )
    .expect("index tensor dims");
    write_tensor(&idx_path, &idx_tensor)?;
    println!(
        "sampled [{}, {}, {}, {}] tokens ({}) -> {} (+ {})",
        tokens.frames(),
        tokens.persons(),
        tokens.joints(),
        tokens.channels(),
        args.strategy,
        args.out.display(),
        idx_path.display()
    );
    Ok(())
}
