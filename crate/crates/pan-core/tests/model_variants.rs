//! Model-level contracts: exact parameter-count identities, reduction
//! identities across variants, mask propagation, permutation behavior, and a
//! micro-scale finite-difference check.

use pan_core::gradcheck::{assert_pass, GradCheckConfig};
use pan_core::graph::Graph;
use pan_core::model::{
    assemble_batch, block_schedule, build, count_parameters, AblationFlags, Alignment, Batch,
    FusionKind, ModelConfig, Variant,
};
use pan_core::sampling::{ExtendMode, SamplingStrategy};
use pan_core::synth::{synthesize, Sample, SynthSpec};
use pan_core::tensor::Tensor;

fn micro_samples(n: usize) -> Vec<Sample<f64>> {
    let spec = SynthSpec::micro();
    (0..n)
        .map(|i| synthesize(&spec, i % spec.classes, i / spec.classes))
        .collect()
}

fn micro_batch(cfg: &ModelConfig, n: usize) -> Batch<f64> {
    let samples = micro_samples(n);
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    assemble_batch(&refs, cfg).unwrap()
}

// ── parameter-count identities ───────────────────────────────────────────

#[test]
fn no_pan_head_is_exactly_46200_parameters() {
    let mut cfg = ModelConfig::full_scale(120, 384);
    cfg.ablation.no_pan = true;
    let (total, _) = count_parameters(&cfg).unwrap();
    assert_eq!(total, 384 * 120 + 120);
    assert_eq!(total, 46_200);
}

#[test]
fn hidden_dim_delta_is_exactly_the_four_calibration_projections() {
    let narrow = count_parameters(&ModelConfig::full_scale(120, 384)).unwrap().0;
    let wide = count_parameters(&ModelConfig::full_scale(120, 768)).unwrap().0;
    assert_eq!(wide - narrow, 4 * 384 * 256);
    assert_eq!(wide - narrow, 393_216);
}

#[test]
fn full_scale_guided_lands_near_five_and_a_half_million() {
    let (total, breakdown) = count_parameters(&ModelConfig::full_scale(120, 384)).unwrap();
    let target = 5_540_000.0;
    let rel = (total as f64 - target).abs() / target;
    assert!(
        rel <= 0.15,
        "full-scale count {total} deviates {:.1}% from {target}",
        rel * 100.0
    );
    // calibration contributes exactly its four projections
    let calib: usize = breakdown
        .iter()
        .filter(|(name, _)| name == "rgb")
        .map(|(_, n)| *n)
        .sum();
    assert_eq!(calib, 4 * 384 * 256);
}

#[test]
fn fusion_variants_order_by_parameter_count() {
    let mut cfg = ModelConfig::full_scale(120, 384);
    cfg.variant = Variant::Unified;
    let mut counts = Vec::new();
    for fusion in [
        FusionKind::SumProject,
        FusionKind::ConcatProject,
        FusionKind::AttentionGate,
    ] {
        cfg.fusion = fusion;
        counts.push(count_parameters(&cfg).unwrap().0);
    }
    // summation < concatenation < attention gate
    assert!(counts[0] < counts[1], "{counts:?}");
    assert!(counts[1] < counts[2], "{counts:?}");
}

#[test]
fn no_calibration_mode_has_zero_attention_parameters() {
    let mut cfg = ModelConfig::full_scale(120, 384);
    cfg.ablation.no_calibration = true;
    let model = build::<f32>(&cfg).unwrap();
    let attention_params: usize = model
        .store
        .iter()
        .filter(|(_, e)| e.name.starts_with("rgb.calibration"))
        .map(|(_, e)| e.value.numel())
        .sum();
    assert_eq!(attention_params, 0);
}

#[test]
fn block_schedule_reading_of_declared_input_channels() {
    assert_eq!(
        block_schedule(256, &[256, 256, 256, 512, 512]),
        vec![(256, 256), (256, 256), (256, 512), (512, 512), (512, 512)]
    );
    assert_eq!(
        block_schedule(3, &[64, 64, 64, 128, 128]),
        vec![(3, 64), (64, 64), (64, 128), (128, 128), (128, 128)]
    );
}

// ── forward contracts ────────────────────────────────────────────────────

#[test]
fn pan_logits_have_class_extent_and_are_finite() {
    let cfg = ModelConfig::micro(3);
    let model = build::<f64>(&cfg).unwrap();
    let batch = micro_batch(&cfg, 3);
    let mut g = Graph::eval();
    let out = model.forward(&mut g, &batch).unwrap();
    assert_eq!(g.dims(out.logits), &[3, 3]);
    assert_eq!(g.dims(out.per_person), &[3, 2, 3]);
    g.value(out.logits).check_finite("logits").unwrap();
}

#[test]
fn skeleton_path_halves_the_temporal_extent() {
    let mut cfg = ModelConfig::micro(3);
    cfg.variant = Variant::Ensemble;
    let model = build::<f64>(&cfg).unwrap();
    let batch = micro_batch(&cfg, 2);
    let mut g = Graph::eval();
    let out = model.forward(&mut g, &batch).unwrap();
    let fs = out.feat_s.unwrap();
    assert_eq!(g.dims(fs)[1], cfg.t_rgb); // 8 skeleton frames → 4
    assert_eq!(g.dims(fs), &[2, 4, 2, 5, 8]);
}

#[test]
fn masked_person_slot_produces_zero_skeleton_features() {
    let mut cfg = ModelConfig::micro(3);
    cfg.variant = Variant::Ensemble;
    let model = build::<f64>(&cfg).unwrap();
    let mut batch = micro_batch(&cfg, 2);
    // invalidate person 1 of element 0 and zero its inputs
    batch.person_mask.set(&[0, 1], 0.0);
    let mut g = Graph::eval();
    let out = model.forward(&mut g, &batch).unwrap();
    let fs = g.value(out.feat_s.unwrap()).clone();
    let d = fs.dims().to_vec(); // [B, T, M, J, C]
    for t in 0..d[1] {
        for j in 0..d[3] {
            for c in 0..d[4] {
                assert_eq!(fs.at(&[0, t, 1, j, c]), 0.0, "masked slot leaked");
            }
        }
    }
}

#[test]
fn replicated_persons_produce_identical_per_person_logits() {
    let mut cfg = ModelConfig::micro(3);
    cfg.extend_mode = ExtendMode::Replicate;
    let model = build::<f64>(&cfg).unwrap();
    // craft single-person samples so replication fills person 2
    let spec = SynthSpec {
        persons: 1,
        ..SynthSpec::micro()
    };
    let samples: Vec<Sample<f64>> = (0..2).map(|i| synthesize(&spec, i, 0)).collect();
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    let batch = assemble_batch(&refs, &cfg).unwrap();
    let mut g = Graph::eval();
    let out = model.forward(&mut g, &batch).unwrap();
    let pp = g.value(out.per_person).clone();
    let agg = g.value(out.logits).clone();
    for b in 0..2 {
        for k in 0..3 {
            let a = pp.at(&[b, 0, k]);
            let c = pp.at(&[b, 1, k]);
            assert!((a - c).abs() < 1e-10, "person logits differ: {a} vs {c}");
            // aggregation over identical persons is a no-op
            assert!((agg.at(&[b, k]) - a).abs() < 1e-10);
        }
    }
}

#[test]
fn guided_mode_requires_a_2d_skeleton_and_even_mode_does_not() {
    let cfg = ModelConfig::micro(3);
    // even sampling never touches skel2d coordinates: zeroing them changes nothing
    let mut even_cfg = cfg.clone();
    even_cfg.sampling = SamplingStrategy::Even;
    let model = build::<f64>(&even_cfg).unwrap();
    let spec = SynthSpec::micro();
    let a = synthesize::<f64>(&spec, 0, 0);
    let mut b = a.clone();
    for v in b.skel2d.data.data_mut() {
        *v = 0.0;
    }
    let ba = assemble_batch(&[&a], &even_cfg).unwrap();
    let bb = assemble_batch(&[&b], &even_cfg).unwrap();
    let mut g1 = Graph::eval();
    let o1 = model.forward(&mut g1, &ba).unwrap();
    let mut g2 = Graph::eval();
    let o2 = model.forward(&mut g2, &bb).unwrap();
    assert_eq!(g1.value(o1.logits).data(), g2.value(o2.logits).data());
}

// ── reduction identities across variants ────────────────────────────────

#[test]
fn zero_skeleton_with_zero_fusion_makes_unified_equal_pan() {
    let mut ucfg = ModelConfig::micro(3);
    ucfg.variant = Variant::Unified;
    ucfg.fusion = FusionKind::SumProject;
    let mut unified = build::<f64>(&ucfg).unwrap();
    // zero-init the fusion projection
    for name in ["fusion.proj.weight", "fusion.proj.bias"] {
        let pid = unified.store.lookup(name).unwrap();
        let dims = unified.store.value(pid).dims().to_vec();
        *unified.store.value_mut(pid) = Tensor::zeros(&dims);
    }

    // a matching single-stream model sharing every RGB-side weight by name
    let pcfg = ModelConfig::micro(3);
    let mut pan = build::<f64>(&pcfg).unwrap();
    pan.store.load_values_from(&unified.store).unwrap();

    // zero 3D skeleton input
    let spec = SynthSpec::micro();
    let mut samples: Vec<Sample<f64>> = (0..2).map(|i| synthesize(&spec, i, 0)).collect();
    for s in &mut samples {
        for v in s.skel3d.data.data_mut() {
            *v = 0.0;
        }
    }
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    let ub = assemble_batch(&refs, &ucfg).unwrap();
    let pb = assemble_batch(&refs, &pcfg).unwrap();

    for train in [false, true] {
        let mut g1 = if train { Graph::train() } else { Graph::eval() };
        let uo = unified.forward(&mut g1, &ub).unwrap();
        let mut g2 = if train { Graph::train() } else { Graph::eval() };
        let po = pan.forward(&mut g2, &pb).unwrap();
        let diff = g1.value(uo.logits).max_abs_diff(g2.value(po.logits));
        assert!(diff <= 1e-12, "unified vs pan logits differ by {diff} (train={train})");
    }
}

#[test]
fn concat_fusion_with_identity_weights_reproduces_the_rgb_term() {
    let mut cfg = ModelConfig::micro(3);
    cfg.variant = Variant::Unified;
    cfg.fusion = FusionKind::ConcatProject;
    let mut model = build::<f64>(&cfg).unwrap();
    // block weights [I; 0]: the projection passes Feat_R through untouched
    let c_r = cfg.c_r;
    let c_s = *cfg.skel_channels.last().unwrap();
    let mut w = Tensor::<f64>::zeros(&[c_r + c_s, c_r]);
    for i in 0..c_r {
        w.set(&[i, i], 1.0);
    }
    let wid = model.store.lookup("fusion.proj.weight").unwrap();
    *model.store.value_mut(wid) = w;
    let bid = model.store.lookup("fusion.proj.bias").unwrap();
    *model.store.value_mut(bid) = Tensor::zeros(&[c_r]);

    let batch = micro_batch(&cfg, 2);
    let mut g = Graph::eval();
    let out = model.forward(&mut g, &batch).unwrap();
    let feat_r = g.value(out.feat_r.unwrap()).clone();
    let fused = g.value(out.fused.unwrap()).clone();
    assert!(feat_r.max_abs_diff(&fused) <= 1e-12);
}

#[test]
fn ensemble_paths_degenerate_and_scale_as_expected() {
    let mut cfg = ModelConfig::micro(3);
    cfg.variant = Variant::Ensemble;
    let mut model = build::<f64>(&cfg).unwrap();
    let batch = micro_batch(&cfg, 2);

    // zero the skeleton head: ensemble argmax equals the rgb path argmax
    for name in ["skel_head.weight", "skel_head.bias"] {
        let pid = model.store.lookup(name).unwrap();
        let dims = model.store.value(pid).dims().to_vec();
        *model.store.value_mut(pid) = Tensor::zeros(&dims);
    }
    let mut g = Graph::eval();
    let out = model.forward(&mut g, &batch).unwrap();
    let total = g.value(out.logits).clone();
    let rgb = g.value(out.rgb_logits.unwrap()).clone();
    let skel = g.value(out.skel_logits.unwrap()).clone();
    assert!(skel.data().iter().all(|&v| v == 0.0));
    assert!(total.max_abs_diff(&rgb) <= 1e-12);
    for b in 0..2 {
        let row_t = &total.data()[b * 3..(b + 1) * 3];
        let row_r = &rgb.data()[b * 3..(b + 1) * 3];
        assert_eq!(
            pan_core::metrics::argmax(row_t),
            pan_core::metrics::argmax(row_r)
        );
    }

    // identical paths: summed logits are twice one path, argmax unchanged
    let doubled: Vec<f64> = rgb.data().iter().map(|&v| 2.0 * v).collect();
    for b in 0..2 {
        let row = &doubled[b * 3..(b + 1) * 3];
        assert_eq!(
            pan_core::metrics::argmax(row),
            pan_core::metrics::argmax(&rgb.data()[b * 3..(b + 1) * 3])
        );
    }
}

#[test]
fn joint_permutation_leaves_pooled_logits_unchanged() {
    let cfg = ModelConfig::micro(3);
    let mut model = build::<f64>(&cfg).unwrap();
    let spec = SynthSpec::micro();
    let sample = synthesize::<f64>(&spec, 1, 0);
    let batch = assemble_batch(&[&sample], &cfg).unwrap();
    let mut g = Graph::eval();
    let base = model.forward(&mut g, &batch).unwrap();
    let base_logits = g.value(base.logits).clone();

    // permute joints in the 2D skeleton and every learnable adjacency
    let perm = [3usize, 0, 4, 1, 2];
    let mut permuted = sample.clone();
    let j = spec.joints;
    for t in 0..spec.frames {
        for m in 0..spec.persons {
            for (jp, &js) in perm.iter().enumerate() {
                for d in 0..2 {
                    let v = sample.skel2d.data.at(&[t, m, js, d]);
                    permuted.skel2d.data.set(&[t, m, jp, d], v);
                }
            }
        }
    }
    let adjacency_ids: Vec<_> = model
        .store
        .iter()
        .filter(|(_, e)| e.name.ends_with(".a_tilde"))
        .map(|(id, _)| id)
        .collect();
    for pid in adjacency_ids {
        let a = model.store.value(pid).clone();
        let mut ap = Tensor::<f64>::zeros(&[j, j]);
        for (up, &us) in perm.iter().enumerate() {
            for (vp, &vs) in perm.iter().enumerate() {
                ap.set(&[up, vp], a.at(&[us, vs]));
            }
        }
        *model.store.value_mut(pid) = ap;
    }
    let pbatch = assemble_batch(&[&permuted], &cfg).unwrap();
    let mut g2 = Graph::eval();
    let out = model.forward(&mut g2, &pbatch).unwrap();
    let diff = base_logits.max_abs_diff(g2.value(out.logits));
    assert!(diff < 1e-10, "pooled logits moved by {diff} under permutation");
}

// ── gradient check on the micro single-stream model ─────────────────────

#[test]
fn micro_pan_guided_passes_finite_difference_check() {
    let cfg = ModelConfig::micro(3);
    let batch = micro_batch(&cfg, 2);
    let mut model = build::<f64>(&cfg).unwrap();

    let mut g = Graph::train();
    let out = model.forward(&mut g, &batch).unwrap();
    let loss = g.cross_entropy_mean(out.logits, &batch.labels);
    let grads = g.backward(loss, &model.store).unwrap();

    // probe model whose store is refreshed from the perturbed values
    let mut probe = build::<f64>(&cfg).unwrap();
    let mut loss_fn = |store: &pan_core::ParamStore<f64>| {
        probe.store.load_values_from(store).unwrap();
        let mut g = Graph::train();
        let out = probe.forward(&mut g, &batch).unwrap();
        let l = g.cross_entropy_mean(out.logits, &batch.labels);
        g.value(l).item()
    };
    let checker = GradCheckConfig {
        max_elements_per_param: 6,
        ..GradCheckConfig::default()
    };
    let rows = checker.check(&mut model.store, &grads, &mut loss_fn);
    assert_pass(&rows, 1e-4);
}
