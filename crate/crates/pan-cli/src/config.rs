//! Flat key=value run configuration.
//!
//! One table defines every accepted key with its default and help line; the
//! parser rejects anything else, and `--help` renders the same table, so the
//! two can never drift apart.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pan_core::model::{
    AblationFlags, Alignment, FusionKind, ModelConfig, ScoreFusion, Variant,
};
use pan_core::sampling::{EvenInterp, ExtendMode, SamplingStrategy};
use pan_core::synth::SynthSpec;
use pan_core::topology::AdjacencyTopology;
use pan_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($(($name:literal, $default:literal, $help:literal)),+ $(,)?) => {
        &[ $(KeySpec { name: $name, default: $default, help: $help }),+ ]
    };
}

/// Every key the config parser accepts.
pub const CONFIG_KEYS: &[KeySpec] = keys![
    ("data.classes", "8", "number of action classes in the synthetic set"),
    ("data.samples_per_class", "50", "samples generated per class"),
    ("data.frames", "32", "token-grid frames per sample (3D skeleton carries 2x)"),
    ("data.joints", "17", "joints per person"),
    ("data.persons", "1", "persons per sample"),
    ("data.grid_h", "16", "token grid height"),
    ("data.grid_w", "16", "token grid width"),
    ("data.channels", "64", "token embedding channels"),
    ("data.patch", "14", "patch size in pixels"),
    ("data.img_h", "224", "image height in pixels"),
    ("data.img_w", "224", "image width in pixels"),
    ("data.gain", "2.0", "class signal amplitude"),
    ("data.noise", "0.5", "background noise standard deviation"),
    ("data.seed", "42", "generator seed"),
    ("model.variant", "pan", "pan | ensemble | unified"),
    ("model.sampling", "guided", "guided | even"),
    ("model.classes", "8", "classifier output classes"),
    ("model.persons", "1", "person slots the model processes"),
    ("model.channels", "64", "expected token embedding channels (C)"),
    ("model.cr", "32", "calibration output channels (C_R)"),
    ("model.heads", "4", "attention heads (must divide model.cr)"),
    ("model.rgb_channels", "32,32,64", "declared input widths of the RGB-path blocks"),
    ("model.skel_channels", "16,16,32", "declared input widths of the skeleton blocks"),
    ("model.skel_post_channels", "32,32", "declared input widths of the ensemble skeleton tail"),
    ("model.t_rgb", "32", "RGB-path frames"),
    ("model.t_skel", "64", "skeleton frames before halving"),
    ("model.topology", "coco17", "coco17 | ntu25 | line:N | file:PATH"),
    ("model.fusion", "sum", "unified fusion: sum | concat | attention"),
    ("model.alignment", "none", "auxiliary MSE alignment: none | pre | post"),
    ("model.score_fusion", "logits", "ensemble score combination: logits | softmax"),
    ("model.no_calibration", "false", "replace calibration with a plain projection"),
    ("model.no_gc", "false", "replace graph mixing with per-node projections"),
    ("model.no_tc", "false", "replace temporal convs with temporal pooling"),
    ("model.no_pan", "false", "classification head directly on pooled raw tokens"),
    ("model.even_interp", "linear", "even-sampling interpolation: linear | nearest"),
    ("model.extend_mode", "zero-pad", "person extension: zero-pad | replicate"),
    ("model.seed", "1", "parameter initialization seed"),
    ("train.lr", "0.1", "initial learning rate"),
    ("train.momentum", "0.9", "SGD momentum"),
    ("train.weight_decay", "0.0004", "L2-in-gradient weight decay"),
    ("train.epochs", "15", "total training epochs"),
    ("train.milestones", "auto", "auto (scaled 35/55-of-65) or comma list of epochs"),
    ("train.batch", "16", "mini-batch size"),
    ("train.seed", "9", "shuffling seed"),
    ("train.w_classification", "1.0", "cross-entropy loss weight"),
    ("train.w_alignment", "1.0", "alignment loss weight"),
    ("ablate.seeds", "9,10,11", "training seeds for the ablation grid"),
    ("ablate.workers", "2", "worker threads for the ablation grid"),
    ("ablate.epochs", "8", "training epochs per ablation run"),
];

/// Help block listing every key; rendered under `--help`.
pub fn config_keys_help() -> String {
    let mut out = String::from("Config keys (key=value lines, '#' comments):\n");
    for k in CONFIG_KEYS {
        let _ = writeln!(out, "  {} (default {}): {}", k.name, k.default, k.help);
    }
    out
}

/// A fully resolved configuration: defaults, then file, then overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        RunConfig {
            values: CONFIG_KEYS
                .iter()
                .map(|k| (k.name.to_string(), k.default.to_string()))
                .collect(),
        }
    }

    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::defaults();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        for (key, value) in overrides {
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !CONFIG_KEYS.iter().any(|k| k.name == key) {
            return Err(CliError::config(format!("unknown config key {key:?}")));
        }
        if value.is_empty() {
            return Err(CliError::config(format!("empty value for key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Sorted key=value lines; echoed verbatim into run output directories.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn content_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.resolved_text().as_bytes()))
    }

    // ── typed getters ────────────────────────────────────────────────────

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from table"))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::config(format!("{key} must be an unsigned integer")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::config(format!("{key} must be a number")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::config(format!("{key} must be an unsigned integer")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::config(format!(
                "{key} must be true/false, got {other:?}"
            ))),
        }
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::config(format!("{key}: bad list entry {s:?}")))
            })
            .collect()
    }

    // ── section builders ─────────────────────────────────────────────────

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        let spec = SynthSpec {
            classes: self.get_usize("data.classes")?,
            samples_per_class: self.get_usize("data.samples_per_class")?,
            frames: self.get_usize("data.frames")?,
            joints: self.get_usize("data.joints")?,
            persons: self.get_usize("data.persons")?,
            grid_h: self.get_usize("data.grid_h")?,
            grid_w: self.get_usize("data.grid_w")?,
            channels: self.get_usize("data.channels")?,
            patch: self.get_usize("data.patch")?,
            img_h: self.get_usize("data.img_h")?,
            img_w: self.get_usize("data.img_w")?,
            gain: self.get_f64("data.gain")?,
            noise: self.get_f64("data.noise")?,
            seed: self.get_u64("data.seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn topology(&self) -> Result<AdjacencyTopology> {
        let raw = self.get("model.topology");
        match raw {
            "coco17" => Ok(AdjacencyTopology::coco17()),
            "ntu25" => Ok(AdjacencyTopology::ntu25()),
            other => {
                if let Some(n) = other.strip_prefix("line:") {
                    let joints: usize = n
                        .parse()
                        .map_err(|_| CliError::config(format!("bad topology {other:?}")))?;
                    if joints == 0 {
                        return Err(CliError::config("line topology needs >= 1 joint"));
                    }
                    Ok(AdjacencyTopology::line(joints))
                } else if let Some(path) = other.strip_prefix("file:") {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::io(format!("topology file {path}: {e}")))?;
                    Ok(AdjacencyTopology::parse(&text)?)
                } else {
                    Err(CliError::config(format!(
                        "model.topology must be coco17 | ntu25 | line:N | file:PATH, got {other:?}"
                    )))
                }
            }
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let variant = match self.get("model.variant") {
            "pan" => Variant::Pan,
            "ensemble" => Variant::Ensemble,
            "unified" => Variant::Unified,
            other => return Err(CliError::config(format!("bad model.variant {other:?}"))),
        };
        let sampling = match self.get("model.sampling") {
            "guided" => SamplingStrategy::Guided,
            "even" => SamplingStrategy::Even,
            other => return Err(CliError::config(format!("bad model.sampling {other:?}"))),
        };
        let fusion = match self.get("model.fusion") {
            "sum" => FusionKind::SumProject,
            "concat" => FusionKind::ConcatProject,
            "attention" => FusionKind::AttentionGate,
            other => return Err(CliError::config(format!("bad model.fusion {other:?}"))),
        };
        let alignment = match self.get("model.alignment") {
            "none" => Alignment::None,
            "pre" => Alignment::PreGcn,
            "post" => Alignment::PostGcn,
            other => return Err(CliError::config(format!("bad model.alignment {other:?}"))),
        };
        let score_fusion = match self.get("model.score_fusion") {
            "logits" => ScoreFusion::Logits,
            "softmax" => ScoreFusion::Softmax,
            other => {
                return Err(CliError::config(format!("bad model.score_fusion {other:?}")))
            }
        };
        let even_interp = match self.get("model.even_interp") {
            "linear" => EvenInterp::Linear,
            "nearest" => EvenInterp::Nearest,
            other => return Err(CliError::config(format!("bad model.even_interp {other:?}"))),
        };
        let extend_mode = match self.get("model.extend_mode") {
            "zero-pad" => ExtendMode::ZeroPad,
            "replicate" => ExtendMode::Replicate,
            other => return Err(CliError::config(format!("bad model.extend_mode {other:?}"))),
        };
        let cfg = ModelConfig {
            variant,
            sampling,
            num_classes: self.get_usize("model.classes")?,
            persons: self.get_usize("model.persons")?,
            grid_channels: self.get_usize("model.channels")?,
            c_r: self.get_usize("model.cr")?,
            heads: self.get_usize("model.heads")?,
            rgb_channels: self.get_usize_list("model.rgb_channels")?,
            skel_channels: self.get_usize_list("model.skel_channels")?,
            skel_post_channels: self.get_usize_list("model.skel_post_channels")?,
            t_rgb: self.get_usize("model.t_rgb")?,
            t_skel: self.get_usize("model.t_skel")?,
            topology: self.topology()?,
            fusion,
            alignment,
            score_fusion,
            ablation: AblationFlags {
                no_calibration: self.get_bool("model.no_calibration")?,
                no_gc: self.get_bool("model.no_gc")?,
                no_tc: self.get_bool("model.no_tc")?,
                no_pan: self.get_bool("model.no_pan")?,
            },
            even_interp,
            extend_mode,
            seed: self.get_u64("model.seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let milestones = match self.get("train.milestones") {
            "auto" => None,
            list => Some(
                list.split(',')
                    .map(|s| {
                        s.trim().parse().map_err(|_| {
                            CliError::config(format!("train.milestones: bad entry {s:?}"))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()?,
            ),
        };
        let tc = TrainConfig {
            lr: self.get_f64("train.lr")?,
            momentum: self.get_f64("train.momentum")?,
            weight_decay: self.get_f64("train.weight_decay")?,
            epochs: self.get_usize("train.epochs")?,
            milestones,
            batch_size: self.get_usize("train.batch")?,
            seed: self.get_u64("train.seed")?,
            w_classification: self.get_f64("train.w_classification")?,
            w_alignment: self.get_f64("train.w_alignment")?,
        };
        tc.resolved_milestones()?;
        if tc.batch_size == 0 {
            return Err(CliError::config("train.batch must be >= 1"));
        }
        Ok(tc)
    }

    /// Model geometry must agree with the dataset it is trained on.
    pub fn check_model_matches_data(&self) -> Result<()> {
        let checks = [
            ("model.classes", "data.classes"),
            ("model.channels", "data.channels"),
            ("model.t_rgb", "data.frames"),
        ];
        for (m, d) in checks {
            if self.get_usize(m)? != self.get_usize(d)? {
                return Err(CliError::config(format!("{m} must equal {d}")));
            }
        }
        let (mj, dj) = (self.get_usize("model.persons")?, self.get_usize("data.persons")?);
        if mj < dj {
            return Err(CliError::config(
                "model.persons must be >= data.persons (persons are extended, never dropped)",
            ));
        }
        if self.get_usize("model.t_skel")? != 2 * self.get_usize("data.frames")? {
            return Err(CliError::config(
                "model.t_skel must equal 2 * data.frames for this generator",
            ));
        }
        let topo = self.topology()?;
        if topo.joints != self.get_usize("data.joints")? {
            return Err(CliError::config(format!(
                "topology has {} joints but data.joints is {}",
                topo.joints,
                self.get_usize("data.joints")?
            )));
        }
        Ok(())
    }

    pub fn ablate_seeds(&self) -> Result<Vec<u64>> {
        self.get("ablate.seeds")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::config(format!("ablate.seeds: bad entry {s:?}")))
            })
            .collect()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let cfg = RunConfig::defaults();
        assert_eq!(cfg.values.len(), CONFIG_KEYS.len());
        cfg.synth_spec().unwrap();
        cfg.model_config().unwrap();
        cfg.train_config().unwrap();
        cfg.check_model_matches_data().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("useless.key=1", &[]).unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_win_over_file_values() {
        let cfg = RunConfig::parse(
            "train.epochs=10\n# comment\ntrain.lr = 0.2\n",
            &[("train.epochs".into(), "5".into())],
        )
        .unwrap();
        assert_eq!(cfg.get("train.epochs"), "5");
        assert_eq!(cfg.get("train.lr"), "0.2");
    }

    #[test]
    fn resolved_text_is_sorted_and_hashable() {
        let cfg = RunConfig::defaults();
        let text = cfg.resolved_text();
        let mut lines: Vec<&str> = text.lines().collect();
        let sorted = {
            let mut s = lines.clone();
            s.sort();
            s
        };
        assert_eq!(lines, sorted);
        assert_eq!(cfg.content_hash().len(), 16);
        lines.clear();
    }

    #[test]
    fn topology_variants_parse() {
        let mut cfg = RunConfig::defaults();
        cfg.set("model.topology", "line:5").unwrap();
        assert_eq!(cfg.topology().unwrap().joints, 5);
        cfg.set("model.topology", "ntu25").unwrap();
        assert_eq!(cfg.topology().unwrap().joints, 25);
        cfg.set("model.topology", "nonsense").unwrap();
        assert!(cfg.topology().is_err());
    }
}
