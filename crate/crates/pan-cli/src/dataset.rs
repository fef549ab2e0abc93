//! Dataset files: per-sample tensor containers, the tab-separated manifest,
//! and a disk-backed sample source for training.

use std::fs;
use std::path::{Path, PathBuf};

use pan_core::sampling::{SkeletonSequence, TokenGrid};
use pan_core::scalar::Scalar;
use pan_core::synth::{synthesize, Sample, Split, SynthSpec};
use pan_core::trainer::SampleSource;

use crate::config::RunConfig;
use crate::container::{read_tensor, write_tensor};
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone)]
pub struct Record {
    pub id: String,
    /// Path prefix relative to the dataset root; the grid lives at
    /// `<prefix>.grid.pant`, skeletons at `.skel2d.pant` / `.skel3d.pant`.
    pub prefix: String,
    pub label: usize,
    pub split: Split,
}

/// Generates every sample to disk and writes the manifest. Deterministic in
/// the spec seed; same seed twice produces byte-identical files.
pub fn generate_to_disk(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<Record>> {
    spec.validate()?;
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir)?;
    let mut records = Vec::with_capacity(spec.samples_total());
    let mut manifest = String::new();
    for class in 0..spec.classes {
        for index in 0..spec.samples_per_class {
            let n = class * spec.samples_per_class + index;
            let sample: Sample<f32> = synthesize(spec, class, index);
            let id = format!("s{n:05}");
            let prefix = format!("samples/{id}");
            write_tensor(
                &out_dir.join(format!("{prefix}.grid.pant")),
                &sample.grid.data,
            )?;
            write_tensor(
                &out_dir.join(format!("{prefix}.skel2d.pant")),
                &sample.skel2d.data,
            )?;
            write_tensor(
                &out_dir.join(format!("{prefix}.skel3d.pant")),
                &sample.skel3d.data,
            )?;
            manifest.push_str(&format!(
                "{id}\t{prefix}\t{}\t{}\n",
                sample.label,
                sample.split.tag()
            ));
            records.push(Record {
                id,
                prefix,
                label: sample.label,
                split: sample.split,
            });
        }
    }
    fs::write(out_dir.join(MANIFEST), manifest)?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<Record>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CliError::io(format!(
                "manifest line {}: expected 4 tab-separated fields",
                lineno + 1
            )));
        }
        let label: usize = fields[2]
            .parse()
            .map_err(|_| CliError::io(format!("manifest line {}: bad label", lineno + 1)))?;
        let split = match fields[3] {
            "train" => Split::Train,
            "val" => Split::Val,
            other => {
                return Err(CliError::io(format!(
                    "manifest line {}: unknown split {other:?}",
                    lineno + 1
                )))
            }
        };
        records.push(Record {
            id: fields[0].to_string(),
            prefix: fields[1].to_string(),
            label,
            split,
        });
    }
    Ok(records)
}

/// Loads a token grid container and attaches pixel geometry.
pub fn ingest_grid<T: Scalar>(
    path: &Path,
    patch: usize,
    img_h: Option<usize>,
    img_w: Option<usize>,
) -> Result<TokenGrid<T>> {
    let any = read_tensor(path)?;
    let dims = any.dims().to_vec();
    if dims.len() != 4 {
        return Err(CliError::config(format!(
            "grid {} must be 4-D [T,Gh,Gw,C], got {dims:?}",
            path.display()
        )));
    }
    let img_h = img_h.unwrap_or(dims[1] * patch);
    let img_w = img_w.unwrap_or(dims[2] * patch);
    Ok(TokenGrid::new(any.cast(), patch, img_h, img_w)?)
}

/// Loads a skeleton container ([T,M,J,2] or [T,M,J,3]); all persons valid.
pub fn ingest_skeleton<T: Scalar>(path: &Path) -> Result<SkeletonSequence<T>> {
    let any = read_tensor(path)?;
    Ok(SkeletonSequence::new(any.cast(), None)?)
}

/// Disk-backed dataset restricted to one split.
pub struct DiskDataset {
    root: PathBuf,
    records: Vec<Record>,
    patch: usize,
    img_h: usize,
    img_w: usize,
}

impl DiskDataset {
    /// Opens a generated dataset directory; geometry comes from the echoed
    /// config next to the manifest.
    pub fn open(dir: &Path, split: Split) -> Result<Self> {
        let cfg_path = dir.join("config.resolved");
        let cfg_text = fs::read_to_string(&cfg_path)
            .map_err(|e| CliError::io(format!("reading {}: {e}", cfg_path.display())))?;
        let cfg = RunConfig::parse(&cfg_text, &[])?;
        let records = read_manifest(dir)?
            .into_iter()
            .filter(|r| r.split == split)
            .collect::<Vec<_>>();
        Ok(DiskDataset {
            root: dir.to_path_buf(),
            records,
            patch: cfg.get_usize("data.patch")?,
            img_h: cfg.get_usize("data.img_h")?,
            img_w: cfg.get_usize("data.img_w")?,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn load_record(&self, rec: &Record) -> Result<Sample<f32>> {
        let grid = ingest_grid::<f32>(
            &self.root.join(format!("{}.grid.pant", rec.prefix)),
            self.patch,
            Some(self.img_h),
            Some(self.img_w),
        )?;
        let skel2d = ingest_skeleton::<f32>(&self.root.join(format!("{}.skel2d.pant", rec.prefix)))?;
        let skel3d = ingest_skeleton::<f32>(&self.root.join(format!("{}.skel3d.pant", rec.prefix)))?;
        Ok(Sample {
            grid,
            skel2d,
            skel3d,
            label: rec.label,
            split: rec.split,
        })
    }
}

impl SampleSource<f32> for DiskDataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn load(&self, index: usize) -> Sample<f32> {
        let rec = &self.records[index];
        self.load_record(rec)
            .unwrap_or_else(|e| panic!("loading sample {}: {e}", rec.id))
    }
}
