//! Model checkpoints: one flat tensor container plus a manifest listing
//! parameter names, kinds, dims, and the originating config hash.

use std::fs;
use std::path::Path;

use pan_core::params::{ParamKind, ParamStore};
use pan_core::Tensor;

use crate::config::{fnv1a64, RunConfig};
use crate::container::{read_tensor, write_tensor, AnyTensor};
use crate::error::{CliError, Result};

pub const PARAMS_FILE: &str = "params.pant";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CONFIG_FILE: &str = "config.resolved";

fn kind_tag(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Weight { decay: true } => "weight",
        ParamKind::Weight { decay: false } => "weight-nodecay",
        ParamKind::Buffer => "buffer",
    }
}

/// Writes `dir/params.pant`, `dir/manifest.tsv`, and `dir/config.resolved`.
pub fn save(store: &ParamStore<f32>, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let total: usize = store.iter().map(|(_, e)| e.value.numel()).sum();
    let mut flat = Vec::with_capacity(total);
    let mut manifest = format!("# config_hash {}\n", cfg.content_hash());
    let mut offset = 0usize;
    for (_, entry) in store.iter() {
        let dims: Vec<String> = entry.value.dims().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            entry.name,
            kind_tag(entry.kind),
            dims.join(","),
            offset
        ));
        flat.extend_from_slice(entry.value.data());
        offset += entry.value.numel();
    }
    let flat_tensor = Tensor::from_vec(&[flat.len()], flat).expect("flat checkpoint tensor");
    write_tensor(&dir.join(PARAMS_FILE), &flat_tensor)?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(CONFIG_FILE), cfg.resolved_text())?;
    Ok(())
}

/// Reads a checkpoint back into a parameter store plus its config.
pub fn load(dir: &Path) -> Result<(ParamStore<f32>, RunConfig)> {
    let cfg_text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| CliError::io(format!("checkpoint config: {e}")))?;
    let cfg = RunConfig::parse(&cfg_text, &[])?;
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| CliError::io(format!("checkpoint manifest: {e}")))?;
    let flat = match read_tensor(&dir.join(PARAMS_FILE))? {
        AnyTensor::F32(t) => t,
        AnyTensor::F64(_) => {
            return Err(CliError::io("checkpoint params must be f32"));
        }
    };
    let mut store = ParamStore::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            if let Some(rest) = line.strip_prefix("# config_hash ") {
                let actual = format!("{:016x}", fnv1a64(cfg_text.as_bytes()));
                if rest.trim() != actual {
                    return Err(CliError::io(format!(
                        "checkpoint config hash mismatch: manifest says {}, file hashes to {actual}",
                        rest.trim()
                    )));
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CliError::io(format!(
                "checkpoint manifest line {}: expected 4 fields",
                lineno + 1
            )));
        }
        let kind = match fields[1] {
            "weight" => ParamKind::Weight { decay: true },
            "weight-nodecay" => ParamKind::Weight { decay: false },
            "buffer" => ParamKind::Buffer,
            other => {
                return Err(CliError::io(format!(
                    "checkpoint manifest line {}: unknown kind {other:?}",
                    lineno + 1
                )))
            }
        };
        let dims: Vec<usize> = fields[2]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| {
                    CliError::io(format!("checkpoint manifest line {}: bad dims", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        let offset: usize = fields[3]
            .parse()
            .map_err(|_| CliError::io(format!("checkpoint manifest line {}: bad offset", lineno + 1)))?;
        let numel: usize = dims.iter().product();
        if offset + numel > flat.numel() {
            return Err(CliError::io(format!(
                "checkpoint manifest line {}: slice [{offset}, {}) exceeds payload {}",
                lineno + 1,
                offset + numel,
                flat.numel()
            )));
        }
        let value = Tensor::from_vec(&dims, flat.data()[offset..offset + numel].to_vec())
            .map_err(|e| CliError::io(format!("checkpoint tensor {}: {e}", fields[0])))?;
        store.add(fields[0], value, kind);
    }
    Ok((store, cfg))
}

/// The config hash of the resolved text stored inside a checkpoint.
pub fn stored_hash(dir: &Path) -> Result<String> {
    let cfg_text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| CliError::io(format!("checkpoint config: {e}")))?;
    Ok(format!("{:016x}", fnv1a64(cfg_text.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pan_core::model::{build, ModelConfig};

    #[test]
    fn save_load_round_trip_preserves_values_and_kinds() {
        let dir = std::env::temp_dir().join(format!("pan-ckpt-test-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let cfg = RunConfig::defaults();
        let model = build::<f32>(&ModelConfig::micro(3)).unwrap();
        save(&model.store, &cfg, &dir).unwrap();
        let (loaded, loaded_cfg) = load(&dir).unwrap();
        assert_eq!(loaded.len(), model.store.len());
        for (id, entry) in model.store.iter() {
            let got = loaded.lookup(&entry.name).unwrap();
            assert_eq!(loaded.entry(got).kind, entry.kind);
            assert_eq!(loaded.value(got).data(), model.store.value(id).data());
        }
        assert_eq!(loaded_cfg.resolved_text(), cfg.resolved_text());
        let _ = fs::remove_dir_all(&dir);
    }
}
