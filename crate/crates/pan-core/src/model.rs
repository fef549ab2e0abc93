//! Model zoo: the single-stream token-graph classifier (guided or even
//! sampling), the dual-path ensemble, the unified fusion variants, ablation
//! switches, batch assembly, and exact parameter counting.

use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::{
    basic_block, linear, BasicBlockParams, BlockConfig, BlockVariant, CHANNEL_AXIS,
};
use crate::calibration::{calibrate, CalibrationParams};
use crate::error::CoreError;
use crate::graph::{Graph, NodeId, PadMode};
use crate::params::{BnParams, LinearParams, ParamStore};
use crate::rng::Rng;
use crate::sampling::{
    even_sample, extend_persons, guided_sample, EvenInterp, ExtendMode, SampledTokens,
    SamplingStrategy,
};
use crate::scalar::Scalar;
use crate::synth::Sample;
use crate::tensor::Tensor;
use crate::topology::AdjacencyTopology;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Pan,
    Ensemble,
    Unified,
}

/// Unified-modeling fusion choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// 1×1 projection then elementwise summation.
    SumProject,
    /// Channel concatenation followed by a 1×1 projection.
    ConcatProject,
    /// Sigmoid gate computed from the concatenated features.
    AttentionGate,
}

/// Auxiliary MSE alignment between visual and skeletal embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    None,
    PreGcn,
    PostGcn,
}

/// How ensemble pathway scores are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFusion {
    Logits,
    Softmax,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub no_calibration: bool,
    pub no_gc: bool,
    pub no_tc: bool,
    pub no_pan: bool,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub variant: Variant,
    pub sampling: SamplingStrategy,
    pub num_classes: usize,
    pub persons: usize,
    pub grid_channels: usize,
    pub c_r: usize,
    pub heads: usize,
    /// Declared input channels of the RGB-path blocks (first equals C_R).
    pub rgb_channels: Vec<usize>,
    /// Declared input channels of the skeleton L2 blocks (first block reads 3).
    pub skel_channels: Vec<usize>,
    /// Declared input channels of the ensemble skeleton L3 blocks.
    pub skel_post_channels: Vec<usize>,
    pub t_rgb: usize,
    pub t_skel: usize,
    pub topology: AdjacencyTopology,
    pub fusion: FusionKind,
    pub alignment: Alignment,
    pub score_fusion: ScoreFusion,
    pub ablation: AblationFlags,
    pub even_interp: EvenInterp,
    pub extend_mode: ExtendMode,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-scale configuration mirroring the published architecture.
    pub fn full_scale(num_classes: usize, grid_channels: usize) -> Self {
        ModelConfig {
            variant: Variant::Pan,
            sampling: SamplingStrategy::Guided,
            num_classes,
            persons: 2,
            grid_channels,
            c_r: 256,
            heads: 4,
            rgb_channels: alloc::vec![256, 256, 256, 512, 512],
            skel_channels: alloc::vec![64, 64, 64, 128, 128],
            skel_post_channels: alloc::vec![128, 128, 128, 256, 256],
            t_rgb: 32,
            t_skel: 64,
            topology: AdjacencyTopology::ntu25(),
            fusion: FusionKind::SumProject,
            alignment: Alignment::None,
            score_fusion: ScoreFusion::Logits,
            ablation: AblationFlags::default(),
            even_interp: EvenInterp::Linear,
            extend_mode: ExtendMode::ZeroPad,
            seed: 1,
        }
    }

    /// Tiny configuration for gradient checks: T=4, J=5, M=2, C=8, C_R=8.
    pub fn micro(num_classes: usize) -> Self {
        ModelConfig {
            variant: Variant::Pan,
            sampling: SamplingStrategy::Guided,
            num_classes,
            persons: 2,
            grid_channels: 8,
            c_r: 8,
            heads: 2,
            rgb_channels: alloc::vec![8, 8],
            skel_channels: alloc::vec![4, 8],
            skel_post_channels: alloc::vec![8, 8],
            t_rgb: 4,
            t_skel: 8,
            topology: AdjacencyTopology::line(5),
            fusion: FusionKind::SumProject,
            alignment: Alignment::None,
            score_fusion: ScoreFusion::Logits,
            ablation: AblationFlags::default(),
            even_interp: EvenInterp::Linear,
            extend_mode: ExtendMode::ZeroPad,
            seed: 1,
        }
    }

    pub fn joints(&self) -> usize {
        self.topology.joints
    }

    /// Skeleton-path temporal extent after the stride-2 block.
    pub fn t_skel_out(&self) -> usize {
        (self.t_skel - 1) / 2 + 1
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.num_classes < 2 {
            return Err(CoreError::invalid("need at least two classes"));
        }
        if self.persons == 0 {
            return Err(CoreError::invalid("persons must be >= 1"));
        }
        if self.heads == 0 || self.c_r % self.heads != 0 {
            return Err(CoreError::invalid(format_args!(
                "heads {} must divide C_R {}",
                self.heads, self.c_r
            )));
        }
        if self.rgb_channels.is_empty()
            || self.skel_channels.is_empty()
            || self.skel_post_channels.is_empty()
        {
            return Err(CoreError::invalid("channel schedules must be non-empty"));
        }
        if self.rgb_channels[0] != self.c_r {
            return Err(CoreError::invalid(format_args!(
                "first RGB block width {} must equal C_R {}",
                self.rgb_channels[0], self.c_r
            )));
        }
        for (label, input, declared) in [
            ("rgb", self.c_r, &self.rgb_channels),
            ("skeleton", 3, &self.skel_channels),
            (
                "skeleton-post",
                *self.skel_channels.last().unwrap(),
                &self.skel_post_channels,
            ),
        ] {
            for (c_in, c_out) in block_schedule(input, declared) {
                let _ = c_in;
                if c_out % 4 != 0 {
                    return Err(CoreError::invalid(format_args!(
                        "{label} block output {c_out} not divisible by 4"
                    )));
                }
            }
        }
        if self.ablation.no_gc && self.ablation.no_tc {
            return Err(CoreError::invalid("no-gc and no-tc are mutually exclusive"));
        }
        if self.ablation.no_pan && self.variant != Variant::Pan {
            return Err(CoreError::invalid("no-pan applies to the single-stream model"));
        }
        if self.alignment != Alignment::None && self.variant != Variant::Pan {
            return Err(CoreError::invalid(
                "alignment loss attaches to the single-stream model",
            ));
        }
        if matches!(self.variant, Variant::Unified) && self.t_skel_out() != self.t_rgb {
            return Err(CoreError::invalid(format_args!(
                "skeleton frames {} halve to {}, which must match T_rgb {}",
                self.t_skel,
                self.t_skel_out(),
                self.t_rgb
            )));
        }
        Ok(())
    }

    fn needs_skeleton3d(&self) -> bool {
        !matches!(self.variant, Variant::Pan) || self.alignment != Alignment::None
    }
}

/// Per-block (c_in, c_out) derived from a declared input-channel schedule:
/// block i reads `declared[i]` (the first reads the actual input width) and
/// feeds block i+1; the last block keeps its width.
pub fn block_schedule(input_width: usize, declared: &[usize]) -> Vec<(usize, usize)> {
    let l = declared.len();
    (0..l)
        .map(|i| {
            let c_in = if i == 0 { input_width } else { declared[i] };
            let c_out = if i + 1 < l { declared[i + 1] } else { declared[l - 1] };
            (c_in, c_out)
        })
        .collect()
}

// ── built model ──────────────────────────────────────────────────────────

struct RgbFront {
    calibration: Option<CalibrationParams>,
    projection: Option<LinearParams>,
}

struct Stream {
    input_bn: BnParams,
    blocks: Vec<BasicBlockParams>,
}

struct AlignArch {
    skel: Stream,
    pre_proj: Option<LinearParams>,
    post: Option<(Vec<BasicBlockParams>, LinearParams)>,
}

enum FusionArch {
    Sum { proj: LinearParams },
    Concat { proj: LinearParams },
    Gate { align: LinearParams, gate: LinearParams },
}

enum Arch {
    NoPan {
        head: LinearParams,
    },
    Pan {
        rgb: RgbFront,
        trunk: Stream,
        head: LinearParams,
        align: Option<AlignArch>,
    },
    Ensemble {
        rgb: RgbFront,
        trunk: Stream,
        head: LinearParams,
        skel: Stream,
        skel_post: Vec<BasicBlockParams>,
        skel_head: LinearParams,
    },
    Unified {
        rgb: RgbFront,
        skel: Stream,
        fusion: FusionArch,
        trunk: Stream,
        head: LinearParams,
    },
}

pub struct BuiltModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    arch: Arch,
}

fn ablation_variant(flags: &AblationFlags) -> BlockVariant {
    if flags.no_gc {
        BlockVariant::NoGc
    } else if flags.no_tc {
        BlockVariant::NoTc
    } else {
        BlockVariant::Full
    }
}

fn build_blocks<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input_width: usize,
    declared: &[usize],
    stride_last: bool,
    variant: BlockVariant,
    topology: &AdjacencyTopology,
    rng: &mut Rng,
) -> Result<Vec<BasicBlockParams>, CoreError> {
    let schedule = block_schedule(input_width, declared);
    let last = schedule.len() - 1;
    schedule
        .into_iter()
        .enumerate()
        .map(|(i, (c_in, c_out))| {
            BasicBlockParams::new(
                store,
                &alloc::format!("{prefix}.block{i}"),
                BlockConfig {
                    c_in,
                    c_out,
                    stride: if stride_last && i == last { 2 } else { 1 },
                    variant,
                },
                topology,
                rng,
            )
        })
        .collect()
}

fn build_rgb_front<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut Rng,
) -> Result<RgbFront, CoreError> {
    if cfg.ablation.no_calibration {
        Ok(RgbFront {
            calibration: None,
            projection: Some(LinearParams::new(
                store,
                "rgb.projection",
                cfg.grid_channels,
                cfg.c_r,
                true,
                rng,
            )),
        })
    } else {
        Ok(RgbFront {
            calibration: Some(CalibrationParams::new(
                store,
                "rgb.calibration",
                cfg.grid_channels,
                cfg.c_r,
                cfg.heads,
                rng,
            )?),
            projection: None,
        })
    }
}

fn build_stream<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input_width: usize,
    declared: &[usize],
    stride_last: bool,
    cfg: &ModelConfig,
    rng: &mut Rng,
) -> Result<Stream, CoreError> {
    let input_bn = BnParams::new(
        store,
        &alloc::format!("{prefix}.input_bn"),
        cfg.persons * cfg.joints() * input_width,
    );
    let blocks = build_blocks(
        store,
        prefix,
        input_width,
        declared,
        stride_last,
        ablation_variant(&cfg.ablation),
        &cfg.topology,
        rng,
    )?;
    Ok(Stream { input_bn, blocks })
}

/// Constructs a model (parameters initialized from `cfg.seed`).
pub fn build<T: Scalar>(cfg: &ModelConfig) -> Result<BuiltModel<T>, CoreError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = Rng::new(cfg.seed).fork(0x9A11);
    let rgb_out = *cfg.rgb_channels.last().unwrap();
    let skel_out = *cfg.skel_channels.last().unwrap();
    let arch = if cfg.ablation.no_pan {
        Arch::NoPan {
            head: LinearParams::new(
                &mut store,
                "head",
                cfg.grid_channels,
                cfg.num_classes,
                true,
                &mut rng,
            ),
        }
    } else {
        match cfg.variant {
            Variant::Pan => {
                let rgb = build_rgb_front(&mut store, cfg, &mut rng)?;
                let trunk =
                    build_stream(&mut store, "trunk", cfg.c_r, &cfg.rgb_channels, false, cfg, &mut rng)?;
                let head =
                    LinearParams::new(&mut store, "head", rgb_out, cfg.num_classes, true, &mut rng);
                let align = match cfg.alignment {
                    Alignment::None => None,
                    Alignment::PreGcn => Some(AlignArch {
                        skel: build_stream(
                            &mut store,
                            "skel",
                            3,
                            &cfg.skel_channels,
                            true,
                            cfg,
                            &mut rng,
                        )?,
                        pre_proj: Some(LinearParams::new(
                            &mut store, "align.proj", skel_out, cfg.c_r, true, &mut rng,
                        )),
                        post: None,
                    }),
                    Alignment::PostGcn => {
                        let skel = build_stream(
                            &mut store,
                            "skel",
                            3,
                            &cfg.skel_channels,
                            true,
                            cfg,
                            &mut rng,
                        )?;
                        let post_blocks = build_blocks(
                            &mut store,
                            "align.post",
                            skel_out,
                            &cfg.skel_post_channels,
                            false,
                            ablation_variant(&cfg.ablation),
                            &cfg.topology,
                            &mut rng,
                        )?;
                        let post_out = *cfg.skel_post_channels.last().unwrap();
                        let proj = LinearParams::new(
                            &mut store, "align.proj", post_out, rgb_out, true, &mut rng,
                        );
                        Some(AlignArch {
                            skel,
                            pre_proj: None,
                            post: Some((post_blocks, proj)),
                        })
                    }
                };
                Arch::Pan {
                    rgb,
                    trunk,
                    head,
                    align,
                }
            }
            Variant::Ensemble => {
                let rgb = build_rgb_front(&mut store, cfg, &mut rng)?;
                let trunk =
                    build_stream(&mut store, "trunk", cfg.c_r, &cfg.rgb_channels, false, cfg, &mut rng)?;
                let head =
                    LinearParams::new(&mut store, "head", rgb_out, cfg.num_classes, true, &mut rng);
                let skel =
                    build_stream(&mut store, "skel", 3, &cfg.skel_channels, true, cfg, &mut rng)?;
                let skel_post = build_blocks(
                    &mut store,
                    "skel_post",
                    skel_out,
                    &cfg.skel_post_channels,
                    false,
                    ablation_variant(&cfg.ablation),
                    &cfg.topology,
                    &mut rng,
                )?;
                let post_out = *cfg.skel_post_channels.last().unwrap();
                let skel_head = LinearParams::new(
                    &mut store, "skel_head", post_out, cfg.num_classes, true, &mut rng,
                );
                Arch::Ensemble {
                    rgb,
                    trunk,
                    head,
                    skel,
                    skel_post,
                    skel_head,
                }
            }
            Variant::Unified => {
                let rgb = build_rgb_front(&mut store, cfg, &mut rng)?;
                let skel =
                    build_stream(&mut store, "skel", 3, &cfg.skel_channels, true, cfg, &mut rng)?;
                let fusion = match cfg.fusion {
                    FusionKind::SumProject => FusionArch::Sum {
                        proj: LinearParams::new(
                            &mut store, "fusion.proj", skel_out, cfg.c_r, true, &mut rng,
                        ),
                    },
                    FusionKind::ConcatProject => FusionArch::Concat {
                        proj: LinearParams::new(
                            &mut store,
                            "fusion.proj",
                            cfg.c_r + skel_out,
                            cfg.c_r,
                            true,
                            &mut rng,
                        ),
                    },
                    FusionKind::AttentionGate => FusionArch::Gate {
                        align: LinearParams::new(
                            &mut store, "fusion.align", skel_out, cfg.c_r, true, &mut rng,
                        ),
                        gate: LinearParams::new(
                            &mut store,
                            "fusion.gate",
                            2 * cfg.c_r,
                            cfg.c_r,
                            true,
                            &mut rng,
                        ),
                    },
                };
                let trunk =
                    build_stream(&mut store, "trunk", cfg.c_r, &cfg.rgb_channels, false, cfg, &mut rng)?;
                let head =
                    LinearParams::new(&mut store, "head", rgb_out, cfg.num_classes, true, &mut rng);
                Arch::Unified {
                    rgb,
                    skel,
                    fusion,
                    trunk,
                    head,
                }
            }
        }
    };
    Ok(BuiltModel {
        cfg: cfg.clone(),
        store,
        arch,
    })
}

/// Total learnable scalars plus a per-module breakdown (top-level name part).
pub fn count_parameters(cfg: &ModelConfig) -> Result<(usize, Vec<(String, usize)>), CoreError> {
    let model = build::<f32>(cfg)?;
    Ok((model.store.trainable_count(), model.store.count_by_prefix(1)))
}

// ── batches ──────────────────────────────────────────────────────────────

/// Assembled mini-batch: everything the forward pass consumes.
pub struct Batch<T> {
    /// Flattened grid tokens, [B, T, Gh·Gw, C].
    pub grid: Tensor<T>,
    /// Sampled (and person-extended) tokens, [B, T, M, J, C].
    pub sampled: Tensor<T>,
    /// 3D joints, [B, T_skel, M, J, 3]; present when the config needs them.
    pub skel3d: Option<Tensor<T>>,
    /// Person validity, [B, M].
    pub person_mask: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Builds a batch from samples according to the model config: sampling
/// strategy, person extension, and skeleton frame duplication to `t_skel`.
pub fn assemble_batch<T: Scalar>(
    samples: &[&Sample<T>],
    cfg: &ModelConfig,
) -> Result<Batch<T>, CoreError> {
    if samples.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let b = samples.len();
    let first = &samples[0];
    let (t, n, c) = (
        first.grid.frames(),
        first.grid.n_tokens(),
        first.grid.channels(),
    );
    if t != cfg.t_rgb {
        return Err(CoreError::invalid(format_args!(
            "sample has {t} grid frames, config expects {}",
            cfg.t_rgb
        )));
    }
    let (m, j) = (cfg.persons, cfg.joints());
    let mut grid = Tensor::zeros(&[b, t, n, c]);
    let mut sampled = Tensor::zeros(&[b, t, m, j, c]);
    let mut mask = Tensor::zeros(&[b, m]);
    let mut skel3d = cfg
        .needs_skeleton3d()
        .then(|| Tensor::zeros(&[b, cfg.t_skel, m, j, 3]));
    let mut labels = Vec::with_capacity(b);

    for (bi, s) in samples.iter().enumerate() {
        if s.grid.frames() != t || s.grid.n_tokens() != n || s.grid.channels() != c {
            return Err(CoreError::invalid("inconsistent grid shapes in batch"));
        }
        if s.skel2d.joints() != j {
            return Err(CoreError::invalid(format_args!(
                "sample joints {} vs config {}",
                s.skel2d.joints(),
                j
            )));
        }
        let toks: SampledTokens<T> = match cfg.sampling {
            SamplingStrategy::Guided => guided_sample(&s.grid, &s.skel2d)?,
            SamplingStrategy::Even => even_sample(&s.grid, s.skel2d.persons(), j, cfg.even_interp)?,
        };
        let src_m = toks.persons();
        if src_m > m {
            return Err(CoreError::invalid(format_args!(
                "sample persons {src_m} exceed config persons {m}"
            )));
        }
        let toks = extend_persons(&toks, m, cfg.extend_mode)?;

        // person validity: padded slots are invalid, replicated slots inherit
        for mi in 0..m {
            let valid = match cfg.extend_mode {
                ExtendMode::ZeroPad => {
                    mi < src_m
                        && (cfg.sampling == SamplingStrategy::Even || s.skel2d.person_valid(mi))
                }
                ExtendMode::Replicate => {
                    cfg.sampling == SamplingStrategy::Even || s.skel2d.person_valid(mi % src_m)
                }
            };
            if valid {
                mask.set(&[bi, mi], T::one());
            }
        }

        let grid_row = t * n * c;
        grid.data_mut()[bi * grid_row..(bi + 1) * grid_row]
            .copy_from_slice(s.grid.tokens_flat().data());
        let samp_row = t * m * j * c;
        sampled.data_mut()[bi * samp_row..(bi + 1) * samp_row].copy_from_slice(toks.data.data());

        if let Some(skel) = skel3d.as_mut() {
            let sk = &s.skel3d;
            if sk.coord_dim() != 3 {
                return Err(CoreError::invalid("3D skeleton stream required"));
            }
            if sk.joints() != j {
                return Err(CoreError::invalid("3D skeleton joint mismatch"));
            }
            let src_t = sk.frames();
            let src_persons = sk.persons();
            for ti in 0..cfg.t_skel {
                // duplicate frames cyclically when shorter, subsample evenly when longer
                let ts = if src_t >= cfg.t_skel {
                    ti * src_t / cfg.t_skel
                } else {
                    ti % src_t
                };
                for mi in 0..m {
                    let ms = match cfg.extend_mode {
                        ExtendMode::ZeroPad => {
                            if mi >= src_persons {
                                continue;
                            }
                            mi
                        }
                        ExtendMode::Replicate => mi % src_persons,
                    };
                    if !sk.valid(ts, ms) {
                        continue;
                    }
                    for ji in 0..j {
                        for d in 0..3 {
                            let v = sk.data.at(&[ts, ms, ji, d]);
                            skel.set(&[bi, ti, mi, ji, d], v);
                        }
                    }
                }
            }
        }
        labels.push(s.label);
    }

    // every sample needs at least one valid person
    for bi in 0..b {
        let any = (0..m).any(|mi| mask.at(&[bi, mi]) > T::zero());
        if !any {
            return Err(CoreError::invalid(format_args!(
                "batch element {bi} has no valid person"
            )));
        }
    }

    Ok(Batch {
        grid,
        sampled,
        skel3d,
        person_mask: mask,
        labels,
    })
}

// ── forward ──────────────────────────────────────────────────────────────

pub struct ForwardOut {
    /// Aggregated class logits, [B, K] (mean over valid persons).
    pub logits: NodeId,
    /// Per-person logits before aggregation, [B, M, K] ([B, 1, K] for no-pan).
    pub per_person: NodeId,
    /// MSE alignment penalty (scalar) when configured.
    pub align_penalty: Option<NodeId>,
    /// Ensemble pathway logits, [B, K] each.
    pub rgb_logits: Option<NodeId>,
    pub skel_logits: Option<NodeId>,
    /// Post-softmax attention maps, [B, T, H, M·J, N].
    pub attention: Option<NodeId>,
    /// Calibrated visual embeddings, [B, T, M, J, C_R].
    pub feat_r: Option<NodeId>,
    /// Skeleton embeddings after the L2 stack, [B, T, M, J, C_S].
    pub feat_s: Option<NodeId>,
    /// Fused features entering the unified trunk.
    pub fused: Option<NodeId>,
}

impl<T: Scalar> BuiltModel<T> {
    /// Post-softmax calibration maps for a single sample, [T, H, M·J, N].
    pub fn attention_maps(
        &self,
        grid: &crate::sampling::TokenGrid<T>,
        sampled: &SampledTokens<T>,
    ) -> Result<Tensor<T>, CoreError> {
        let cal = match &self.arch {
            Arch::Pan { rgb, .. } | Arch::Ensemble { rgb, .. } | Arch::Unified { rgb, .. } => {
                rgb.calibration.as_ref()
            }
            Arch::NoPan { .. } => None,
        }
        .ok_or_else(|| CoreError::invalid("model carries no calibration module"))?;
        crate::calibration::attention_maps(grid, sampled, &self.store, cal)
    }

    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch<T>) -> Result<ForwardOut, CoreError> {
        let cfg = &self.cfg;
        let b = batch.labels.len();
        let (m, j) = (cfg.persons, cfg.joints());
        if batch.sampled.dims() != [b, cfg.t_rgb, m, j, cfg.grid_channels] {
            return Err(CoreError::ShapeMismatch {
                op: "forward.sampled",
                left: batch.sampled.dims().to_vec(),
                right: alloc::vec![b, cfg.t_rgb, m, j, cfg.grid_channels],
            });
        }

        match &self.arch {
            Arch::NoPan { head } => {
                let grid = g.constant(batch.grid.clone());
                let pooled = g.reduce_mean(grid, &[1, 2]); // [B, C]
                let logits = linear(g, &self.store, pooled, head);
                let per_person = g.reshape(logits, &[b, 1, cfg.num_classes]);
                Ok(ForwardOut {
                    logits,
                    per_person,
                    align_penalty: None,
                    rgb_logits: None,
                    skel_logits: None,
                    attention: None,
                    feat_r: None,
                    feat_s: None,
                    fused: None,
                })
            }
            Arch::Pan {
                rgb,
                trunk,
                head,
                align,
            } => {
                let (feat_r, attention) = self.rgb_features(g, batch, rgb)?;
                let trunk_out = self.run_stream(g, trunk, feat_r, batch, cfg.c_r, false)?;
                let per_person = self.head_logits(g, trunk_out, head);
                let logits = self.aggregate_persons(g, per_person, batch)?;
                let align_penalty = match align {
                    None => None,
                    Some(a) => Some(self.alignment_penalty(g, batch, a, feat_r, trunk_out)?),
                };
                Ok(ForwardOut {
                    logits,
                    per_person,
                    align_penalty,
                    rgb_logits: None,
                    skel_logits: None,
                    attention,
                    feat_r: Some(feat_r),
                    feat_s: None,
                    fused: None,
                })
            }
            Arch::Ensemble {
                rgb,
                trunk,
                head,
                skel,
                skel_post,
                skel_head,
            } => {
                let (feat_r, attention) = self.rgb_features(g, batch, rgb)?;
                let trunk_out = self.run_stream(g, trunk, feat_r, batch, cfg.c_r, false)?;
                let rgb_pp = self.head_logits(g, trunk_out, head);
                let rgb_logits = self.aggregate_persons(g, rgb_pp, batch)?;

                let feat_s = self.skeleton_features(g, batch, skel)?;
                let mut s = feat_s;
                for blk in skel_post {
                    s = basic_block(g, &self.store, blk, s, PadMode::Zeros);
                }
                let skel_pp = self.head_logits(g, s, skel_head);
                let skel_logits = self.aggregate_persons(g, skel_pp, batch)?;

                let logits = match cfg.score_fusion {
                    ScoreFusion::Logits => g.add(rgb_logits, skel_logits),
                    ScoreFusion::Softmax => {
                        let a = g.softmax(rgb_logits, 1);
                        let bsm = g.softmax(skel_logits, 1);
                        g.add(a, bsm)
                    }
                };
                let per_person = g.add(rgb_pp, skel_pp);
                Ok(ForwardOut {
                    logits,
                    per_person,
                    align_penalty: None,
                    rgb_logits: Some(rgb_logits),
                    skel_logits: Some(skel_logits),
                    attention,
                    feat_r: Some(feat_r),
                    feat_s: Some(feat_s),
                    fused: None,
                })
            }
            Arch::Unified {
                rgb,
                skel,
                fusion,
                trunk,
                head,
            } => {
                let (feat_r, attention) = self.rgb_features(g, batch, rgb)?;
                let feat_s = self.skeleton_features(g, batch, skel)?;
                if g.dims(feat_s)[1] != cfg.t_rgb {
                    return Err(CoreError::ShapeMismatch {
                        op: "unified.fuse",
                        left: g.dims(feat_s).to_vec(),
                        right: g.dims(feat_r).to_vec(),
                    });
                }
                let fused = match fusion {
                    FusionArch::Sum { proj } => {
                        let fs = linear(g, &self.store, feat_s, proj);
                        g.add(feat_r, fs)
                    }
                    FusionArch::Concat { proj } => {
                        let cat = g.concat(&[feat_r, feat_s], CHANNEL_AXIS);
                        linear(g, &self.store, cat, proj)
                    }
                    FusionArch::Gate { align, gate } => {
                        let fs = linear(g, &self.store, feat_s, align);
                        let cat = g.concat(&[feat_r, fs], CHANNEL_AXIS);
                        let gv = linear(g, &self.store, cat, gate);
                        let gv = g.sigmoid(gv);
                        let rgb_part = g.mul(gv, feat_r);
                        let ones = g.constant(Tensor::filled(g.dims(gv), T::one()));
                        let inv = g.sub(ones, gv);
                        let skel_part = g.mul(inv, fs);
                        g.add(rgb_part, skel_part)
                    }
                };
                let trunk_out = self.run_stream(g, trunk, fused, batch, cfg.c_r, false)?;
                let per_person = self.head_logits(g, trunk_out, head);
                let logits = self.aggregate_persons(g, per_person, batch)?;
                Ok(ForwardOut {
                    logits,
                    per_person,
                    align_penalty: None,
                    rgb_logits: None,
                    skel_logits: None,
                    attention,
                    feat_r: Some(feat_r),
                    feat_s: Some(feat_s),
                    fused: Some(fused),
                })
            }
        }
    }

    /// Sampling-side features: calibration (or the plain projection) plus the
    /// person mask, [B, T, M, J, C_R].
    fn rgb_features(
        &self,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        rgb: &RgbFront,
    ) -> Result<(NodeId, Option<NodeId>), CoreError> {
        let sampled = g.constant(batch.sampled.clone());
        let (feat, attn) = match (&rgb.calibration, &rgb.projection) {
            (Some(cal), None) => {
                let grid = g.constant(batch.grid.clone());
                let out = calibrate(g, &self.store, cal, sampled, grid)?;
                (out.features, Some(out.attention))
            }
            (None, Some(proj)) => (linear(g, &self.store, sampled, proj), None),
            _ => unreachable!(),
        };
        Ok((self.apply_person_mask(g, feat, batch), attn))
    }

    /// Skeleton stream: data BN, L2 blocks with the stride-2 tail, masked so
    /// invalid person slots hold exactly zero features.
    fn skeleton_features(
        &self,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        skel: &Stream,
    ) -> Result<NodeId, CoreError> {
        let cfg = &self.cfg;
        let data = batch
            .skel3d
            .as_ref()
            .ok_or_else(|| CoreError::invalid("model requires a 3D skeleton stream"))?;
        let expect = [
            batch.labels.len(),
            cfg.t_skel,
            cfg.persons,
            cfg.joints(),
            3,
        ];
        if data.dims() != expect {
            return Err(CoreError::ShapeMismatch {
                op: "skeleton_features",
                left: data.dims().to_vec(),
                right: expect.to_vec(),
            });
        }
        let x = g.constant(data.clone());
        let x = self.apply_person_mask(g, x, batch);
        let out = self.run_stream(g, skel, x, batch, 3, true)?;
        Ok(self.apply_person_mask(g, out, batch))
    }

    /// Input BN (over flattened person/joint/channel features) followed by the
    /// block stack.
    fn run_stream(
        &self,
        g: &mut Graph<T>,
        stream: &Stream,
        x: NodeId,
        batch: &Batch<T>,
        width: usize,
        remask: bool,
    ) -> Result<NodeId, CoreError> {
        let d = g.dims(x).to_vec();
        let (b, t) = (d[0], d[1]);
        let flat = g.reshape(x, &[b, t, d[2] * d[3] * width]);
        let normed = g.batch_norm(&self.store, flat, &stream.input_bn, 2);
        let mut h = g.reshape(normed, &d);
        h = self.apply_person_mask(g, h, batch);
        for blk in &stream.blocks {
            h = basic_block(g, &self.store, blk, h, PadMode::Zeros);
        }
        if remask {
            h = self.apply_person_mask(g, h, batch);
        }
        Ok(h)
    }

    fn apply_person_mask(&self, g: &mut Graph<T>, x: NodeId, batch: &Batch<T>) -> NodeId {
        let d = g.dims(x).to_vec();
        let (b, m) = (d[0], d[2]);
        let mask = g.constant(
            batch
                .person_mask
                .reshaped(&[b, 1, m, 1, 1])
                .expect("mask reshape"),
        );
        let mask = g.broadcast_to(mask, &d);
        g.mul(x, mask)
    }

    /// Global average pool over frames and joints, then the FC head: [B, M, K].
    fn head_logits(&self, g: &mut Graph<T>, feat: NodeId, head: &LinearParams) -> NodeId {
        let pooled = g.reduce_mean(feat, &[1, 3]); // [B, M, C]
        linear(g, &self.store, pooled, head)
    }

    /// Arithmetic mean of per-person logits over valid persons.
    fn aggregate_persons(
        &self,
        g: &mut Graph<T>,
        per_person: NodeId,
        batch: &Batch<T>,
    ) -> Result<NodeId, CoreError> {
        let d = g.dims(per_person).to_vec();
        let (b, m) = (d[0], d[1]);
        let mut weights = Tensor::zeros(&[b, m, 1]);
        for bi in 0..b {
            let valid: f64 = (0..m)
                .map(|mi| batch.person_mask.at(&[bi, mi]).to_f64())
                .sum();
            for mi in 0..m {
                let w = batch.person_mask.at(&[bi, mi]).to_f64() / valid;
                weights.set(&[bi, mi, 0], T::from_f64(w));
            }
        }
        let wn = g.constant(weights);
        let wb = g.broadcast_to(wn, &d);
        let weighted = g.mul(per_person, wb);
        Ok(g.reduce_sum(weighted, &[1]))
    }

    fn alignment_penalty(
        &self,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        align: &AlignArch,
        feat_r: NodeId,
        trunk_out: NodeId,
    ) -> Result<NodeId, CoreError> {
        let feat_s = self.skeleton_features(g, batch, &align.skel)?;
        match (&align.pre_proj, &align.post) {
            (Some(proj), None) => {
                let projected = linear(g, &self.store, feat_s, proj);
                Ok(g.mse_mean(feat_r, projected))
            }
            (None, Some((post_blocks, proj))) => {
                let mut s = feat_s;
                for blk in post_blocks {
                    s = basic_block(g, &self.store, blk, s, PadMode::Zeros);
                }
                let projected = linear(g, &self.store, s, proj);
                Ok(g.mse_mean(trunk_out, projected))
            }
            _ => unreachable!(),
        }
    }
}
