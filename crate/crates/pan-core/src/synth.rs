//! Synthetic benchmark generator: correlated (token grid, 2D skeleton,
//! 3D skeleton, label) samples at desk scale.
//!
//! Classes come in two families. Spatial classes plant a class-specific
//! signature vector in the grid patches under a class-specific joint subset,
//! constant in time. Temporal classes share one joint subset and one
//! signature and differ only in motif frequency (odd cycle counts, random
//! per-sample phase), so no frame-order-insensitive model can separate them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::rng::Rng;
use crate::sampling::{joint_to_patch_index, SkeletonSequence, TokenGrid};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    /// Grid frames; the 3D skeleton stream carries twice as many.
    pub frames: usize,
    pub joints: usize,
    pub persons: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    pub patch: usize,
    pub img_h: usize,
    pub img_w: usize,
    /// Signal amplitude injected under active joints.
    pub gain: f64,
    /// Background noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::benchmark()
    }
}

/// Motif family of one class.
#[derive(Debug, Clone, PartialEq)]
pub enum Motif {
    /// Constant-in-time signature on a class-specific joint subset.
    Spatial,
    /// Sinusoidal envelope with this many cycles over the clip.
    Temporal { frequency: usize },
}

#[derive(Debug, Clone)]
pub struct ClassMotif {
    pub motif: Motif,
    pub active_joints: Vec<usize>,
    /// Unit signature direction in channel space.
    pub signature: Vec<f64>,
    /// Unit 3D displacement direction per active joint.
    pub directions: Vec<[f64; 3]>,
}

impl SynthSpec {
    /// The default desk-scale benchmark.
    pub fn benchmark() -> Self {
        SynthSpec {
            classes: 8,
            samples_per_class: 50,
            frames: 32,
            joints: 17,
            persons: 1,
            grid_h: 16,
            grid_w: 16,
            channels: 64,
            patch: 14,
            img_h: 224,
            img_w: 224,
            gain: 2.0,
            noise: 0.5,
            seed: 42,
        }
    }

    /// Tiny spec for unit tests and gradient checks.
    pub fn micro() -> Self {
        SynthSpec {
            classes: 3,
            samples_per_class: 4,
            frames: 4,
            joints: 5,
            persons: 2,
            grid_h: 4,
            grid_w: 4,
            channels: 8,
            patch: 8,
            img_h: 32,
            img_w: 32,
            gain: 2.0,
            noise: 0.3,
            seed: 7,
        }
    }

    pub fn n_spatial(&self) -> usize {
        self.classes.div_ceil(2)
    }

    pub fn active_joint_count(&self) -> usize {
        (self.joints / 2).clamp(1, 4)
    }

    pub fn t_skel(&self) -> usize {
        2 * self.frames
    }

    pub fn samples_total(&self) -> usize {
        self.classes * self.samples_per_class
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.classes < 2 {
            return Err(CoreError::invalid("need at least two classes"));
        }
        if self.samples_per_class == 0 || self.frames < 4 || self.joints < 2 || self.persons == 0 {
            return Err(CoreError::invalid("degenerate synthetic spec extents"));
        }
        if self.grid_h * self.grid_w < 2 || self.channels < 2 {
            return Err(CoreError::invalid("grid too small"));
        }
        if self.grid_h != self.img_h.div_ceil(self.patch)
            || self.grid_w != self.img_w.div_ceil(self.patch)
        {
            return Err(CoreError::invalid(format_args!(
                "grid {}x{} inconsistent with image {}x{} at patch {}",
                self.grid_h, self.grid_w, self.img_h, self.img_w, self.patch
            )));
        }
        let n_temporal = self.classes - self.n_spatial();
        let max_freq = 2 * n_temporal.max(1) - 1;
        if max_freq * 4 > self.frames {
            return Err(CoreError::invalid(format_args!(
                "temporal motif frequency {max_freq} needs at least {} frames",
                max_freq * 4
            )));
        }
        // distinct (joint subset, frequency) pairs across classes
        let mut seen: Vec<(Vec<usize>, usize)> = Vec::new();
        for k in 0..self.classes {
            let motif = self.class_motif(k);
            let freq = match motif.motif {
                Motif::Spatial => 0,
                Motif::Temporal { frequency } => frequency,
            };
            let key = (motif.active_joints.clone(), freq);
            if seen.contains(&key) {
                return Err(CoreError::invalid(format_args!(
                    "classes collide on (joint subset, frequency) = {key:?}"
                )));
            }
            seen.push(key);
        }
        Ok(())
    }

    /// Deterministic motif of class `k`.
    pub fn class_motif(&self, k: usize) -> ClassMotif {
        assert!(k < self.classes);
        let a = self.active_joint_count();
        let n_spatial = self.n_spatial();
        let spatial = k < n_spatial;
        let active_joints: Vec<usize> = if spatial {
            (0..a).map(|i| (k * a + i) % self.joints).collect()
        } else {
            // all temporal classes share one subset
            (0..a).map(|i| (n_spatial * a + i) % self.joints).collect()
        };
        let motif = if spatial {
            Motif::Spatial
        } else {
            // odd cycle counts: identical per-frame value distributions
            Motif::Temporal {
                frequency: 2 * (k - n_spatial) + 1,
            }
        };
        // temporal classes share signature and directions; spatial ones differ
        let stream = if spatial { 100 + k as u64 } else { 200 };
        let mut rng = Rng::new(self.seed).fork(stream);
        let mut signature: Vec<f64> = (0..self.channels).map(|_| rng.normal()).collect();
        let norm = num_traits::Float::sqrt(signature.iter().map(|v| v * v).sum::<f64>());
        for v in signature.iter_mut() {
            *v /= norm;
        }
        let directions: Vec<[f64; 3]> = (0..a)
            .map(|_| {
                let d = [rng.normal(), rng.normal(), rng.normal()];
                let n = num_traits::Float::sqrt(d.iter().map(|v| v * v).sum::<f64>());
                [d[0] / n, d[1] / n, d[2] / n]
            })
            .collect();
        ClassMotif {
            motif,
            active_joints,
            signature,
            directions,
        }
    }

    /// Deterministic split: the first 80% of each class trains.
    pub fn split_of(&self, index_in_class: usize) -> Split {
        if index_in_class < self.samples_per_class * 4 / 5 {
            Split::Train
        } else {
            Split::Val
        }
    }
}

/// One generated specimen.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub grid: TokenGrid<T>,
    pub skel2d: SkeletonSequence<T>,
    pub skel3d: SkeletonSequence<T>,
    pub label: usize,
    pub split: Split,
}

fn envelope(motif: &Motif, pos: f64, phase: f64, joint_idx: usize) -> f64 {
    match motif {
        Motif::Spatial => 1.0,
        Motif::Temporal { frequency } => num_traits::Float::sin(
            2.0 * core::f64::consts::PI * (*frequency as f64) * pos
                + phase
                + joint_idx as f64 * core::f64::consts::FRAC_PI_2,
        ),
    }
}

/// Deterministic joint layout: a loose spiral inside the unit square.
fn base_pose(joints: usize, j: usize) -> (f64, f64) {
    let theta = j as f64 * 2.399_963;
    let radius = 0.12 + 0.33 * (j as f64 + 1.0) / joints as f64;
    (
        0.5 + radius * num_traits::Float::cos(theta),
        0.5 + radius * num_traits::Float::sin(theta),
    )
}

/// Synthesizes sample `index` of class `class`; pure function of the spec.
pub fn synthesize<T: Scalar>(spec: &SynthSpec, class: usize, index: usize) -> Sample<T> {
    let id = (class * spec.samples_per_class + index) as u64;
    let root = Rng::new(spec.seed).fork(0xDA7A).fork(id);
    let mut phase_rng = root.fork(1);
    let mut pose_rng = root.fork(2);
    let mut walk_rng = root.fork(3);
    let mut noise_rng = root.fork(4);
    let motif = spec.class_motif(class);
    let phase = phase_rng.uniform() * 2.0 * core::f64::consts::PI;

    let (t_grid, t_skel) = (spec.frames, spec.t_skel());
    let (m_n, j_n) = (spec.persons, spec.joints);

    // static per-joint jitter and person offsets
    let jitter: Vec<[f64; 3]> = (0..m_n * j_n)
        .map(|_| {
            [
                pose_rng.normal() * 0.02,
                pose_rng.normal() * 0.02,
                pose_rng.normal() * 0.05,
            ]
        })
        .collect();

    // AR(1) random walk per person/joint/coordinate
    let mut walk = vec![[0.0f64; 3]; m_n * j_n];
    let mut skel3d = Tensor::<T>::zeros(&[t_skel, m_n, j_n, 3]);
    for t in 0..t_skel {
        let pos_t = t as f64 / t_skel as f64;
        for mi in 0..m_n {
            let person_shift = (mi as f64 - (m_n as f64 - 1.0) / 2.0) * 0.3;
            for ji in 0..j_n {
                let w = &mut walk[mi * j_n + ji];
                for d in 0..3 {
                    w[d] = 0.9 * w[d] + 0.03 * walk_rng.normal();
                }
                let (bx, by) = base_pose(j_n, ji);
                let jit = jitter[mi * j_n + ji];
                let mut p = [
                    bx + person_shift + jit[0] + w[0],
                    by + jit[1] + w[1],
                    jit[2] + w[2],
                ];
                if let Some(ai) = motif.active_joints.iter().position(|&a| a == ji) {
                    let e = envelope(&motif.motif, pos_t, phase, ai) * 0.12;
                    for d in 0..3 {
                        p[d] += motif.directions[ai][d] * e;
                    }
                }
                for d in 0..3 {
                    skel3d.set(&[t, mi, ji, d], T::from_f64(p[d]));
                }
            }
        }
    }

    // 2D projection: even skeleton frames, pixel units, intentionally unclamped
    let mut skel2d = Tensor::<T>::zeros(&[t_grid, m_n, j_n, 2]);
    for t in 0..t_grid {
        for mi in 0..m_n {
            for ji in 0..j_n {
                let x = skel3d.at(&[2 * t, mi, ji, 0]).to_f64() * spec.img_w as f64;
                let y = skel3d.at(&[2 * t, mi, ji, 1]).to_f64() * spec.img_h as f64;
                skel2d.set(&[t, mi, ji, 0], T::from_f64(x));
                skel2d.set(&[t, mi, ji, 1], T::from_f64(y));
            }
        }
    }

    // token grid: background noise plus class signal under active joints
    let n_tokens = spec.grid_h * spec.grid_w;
    let mut grid = Tensor::<T>::zeros(&[t_grid, spec.grid_h, spec.grid_w, spec.channels]);
    for v in grid.data_mut() {
        *v = T::from_f64(noise_rng.normal() * spec.noise);
    }
    for t in 0..t_grid {
        let pos_t = (2 * t) as f64 / t_skel as f64;
        for mi in 0..m_n {
            for (ai, &ji) in motif.active_joints.iter().enumerate() {
                let x = skel2d.at(&[t, mi, ji, 0]).to_f64().clamp(0.0, (spec.img_w - 1) as f64);
                let y = skel2d.at(&[t, mi, ji, 1]).to_f64().clamp(0.0, (spec.img_h - 1) as f64);
                let flat = joint_to_patch_index(x, y, spec.patch, spec.grid_w, spec.grid_h);
                debug_assert!(flat < n_tokens);
                let e = envelope(&motif.motif, pos_t, phase, ai) * spec.gain;
                let (gr, gc) = (flat / spec.grid_w, flat % spec.grid_w);
                for c in 0..spec.channels {
                    let cur = grid.at(&[t, gr, gc, c]);
                    grid.set(&[t, gr, gc, c], cur + T::from_f64(e * motif.signature[c]));
                }
            }
        }
    }

    Sample {
        grid: TokenGrid::new(grid, spec.patch, spec.img_h, spec.img_w)
            .expect("spec validated grid geometry"),
        skel2d: SkeletonSequence::new(skel2d, None).expect("2d skeleton dims"),
        skel3d: SkeletonSequence::new(skel3d, None).expect("3d skeleton dims"),
        label: class,
        split: spec.split_of(index),
    }
}

/// All samples, class-major, deterministic in `spec.seed`.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<Vec<Sample<T>>, CoreError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.samples_total());
    for class in 0..spec.classes {
        for index in 0..spec.samples_per_class {
            out.push(synthesize(spec, class, index));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::guided_sample;

    #[test]
    fn motifs_have_distinct_subset_frequency_pairs() {
        SynthSpec::benchmark().validate().unwrap();
        SynthSpec::micro().validate().unwrap();
    }

    #[test]
    fn temporal_classes_share_subset_and_signature() {
        let spec = SynthSpec::benchmark();
        let a = spec.class_motif(spec.n_spatial());
        let b = spec.class_motif(spec.n_spatial() + 1);
        assert_eq!(a.active_joints, b.active_joints);
        assert_eq!(a.signature, b.signature);
        assert_ne!(a.motif, b.motif);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = SynthSpec::micro();
        spec.noise = 0.7;
        let a: Sample<f32> = synthesize(&spec, 1, 2);
        let b: Sample<f32> = synthesize(&spec, 1, 2);
        assert_eq!(a.grid.data.data(), b.grid.data.data());
        assert_eq!(a.skel3d.data.data(), b.skel3d.data.data());
    }

    #[test]
    fn noiseless_guided_tokens_carry_the_class_signature() {
        let mut spec = SynthSpec::benchmark();
        spec.noise = 0.0;
        spec.samples_per_class = 1;
        for class in 0..spec.classes {
            let s: Sample<f64> = synthesize(&spec, class, 0);
            let motif = spec.class_motif(class);
            let toks = guided_sample(&s.grid, &s.skel2d).unwrap();
            // average projection onto each class signature over active joints
            let mut best = (0, f64::MIN);
            for other in 0..spec.classes {
                let sig = spec.class_motif(other).signature;
                let mut score = 0.0;
                for t in 0..spec.frames {
                    for &ji in &motif.active_joints {
                        let base = ((t * spec.persons) * spec.joints + ji) * spec.channels;
                        let row = &toks.data.data()[base..base + spec.channels];
                        let dot: f64 = row.iter().zip(&sig).map(|(&a, &b)| a * b).sum();
                        score += dot.abs();
                    }
                }
                if score > best.1 {
                    best = (other, score);
                }
            }
            // signatures are shared within the temporal family
            let family_match = if class < spec.n_spatial() {
                best.0 == class
            } else {
                best.0 >= spec.n_spatial()
            };
            assert!(family_match, "class {class} recovered {}", best.0);
        }
    }

    #[test]
    fn locality_zeroing_non_signal_patches_preserves_guided_features() {
        let mut spec = SynthSpec::benchmark();
        spec.noise = 0.0;
        let s: Sample<f64> = synthesize(&spec, 2, 0);
        let before = guided_sample(&s.grid, &s.skel2d).unwrap();
        // zero every patch that carries no signal (noise already zero)
        let mut stripped = s.grid.clone();
        let motif = spec.class_motif(2);
        for t in 0..spec.frames {
            let mut keep = alloc::vec![false; spec.grid_h * spec.grid_w];
            for mi in 0..spec.persons {
                for &ji in &motif.active_joints {
                    let x = s.skel2d.data.at(&[t, mi, ji, 0]).clamp(0.0, (spec.img_w - 1) as f64);
                    let y = s.skel2d.data.at(&[t, mi, ji, 1]).clamp(0.0, (spec.img_h - 1) as f64);
                    keep[joint_to_patch_index(x, y, spec.patch, spec.grid_w, spec.grid_h)] = true;
                }
            }
            for flat in 0..keep.len() {
                if !keep[flat] {
                    let (gr, gc) = (flat / spec.grid_w, flat % spec.grid_w);
                    for c in 0..spec.channels {
                        stripped.data.set(&[t, gr, gc, c], 0.0);
                    }
                }
            }
        }
        let after = guided_sample(&stripped, &s.skel2d).unwrap();
        assert_eq!(before.data.data(), after.data.data());
    }

    #[test]
    fn frame_shuffling_destroys_temporal_class_statistic() {
        let mut spec = SynthSpec::benchmark();
        spec.noise = 0.0;
        // lag-1 autocorrelation of the signature projection at an active joint
        // separates motif frequencies; shuffling frames collapses it
        let statistic = |sample: &Sample<f64>, order: &[usize]| -> f64 {
            let motif = spec.class_motif(sample.label);
            let toks = guided_sample(&sample.grid, &sample.skel2d).unwrap();
            let ji = motif.active_joints[0];
            let series: alloc::vec::Vec<f64> = order
                .iter()
                .map(|&t| {
                    let base = ((t * spec.persons) * spec.joints + ji) * spec.channels;
                    let row = &toks.data.data()[base..base + spec.channels];
                    row.iter().zip(&motif.signature).map(|(&a, &b)| a * b).sum()
                })
                .collect();
            let n = series.len();
            let mean = series.iter().sum::<f64>() / n as f64;
            let var: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
            let cov: f64 = (1..n)
                .map(|i| (series[i] - mean) * (series[i - 1] - mean))
                .sum();
            cov / var.max(1e-12)
        };
        let ordered: alloc::vec::Vec<usize> = (0..spec.frames).collect();
        let slow: Sample<f64> = synthesize(&spec, spec.n_spatial(), 0); // frequency 1
        let fast: Sample<f64> = synthesize(&spec, spec.classes - 1, 0); // highest frequency
        let stat_slow = statistic(&slow, &ordered);
        let stat_fast = statistic(&fast, &ordered);
        // clean data: low frequency has visibly higher lag-1 autocorrelation
        assert!(
            stat_slow > stat_fast + 0.2,
            "expected separation, got {stat_slow} vs {stat_fast}"
        );
        // shuffled frames: the statistic no longer separates the classes
        let mut rng = Rng::new(99);
        let mut shuffled = ordered.clone();
        rng.shuffle(&mut shuffled);
        let sh_slow = statistic(&slow, &shuffled);
        let sh_fast = statistic(&fast, &shuffled);
        assert!(
            (sh_slow - sh_fast).abs() < (stat_slow - stat_fast).abs() / 2.0,
            "shuffling kept the gap: {sh_slow} vs {sh_fast}"
        );
    }

    #[test]
    fn split_assignment_is_class_balanced() {
        let spec = SynthSpec::benchmark();
        let train = (0..spec.samples_per_class)
            .filter(|&i| spec.split_of(i) == Split::Train)
            .count();
        assert_eq!(train, 40);
    }
}
