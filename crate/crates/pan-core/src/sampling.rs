//! Visual token sampling: joint-guided gather via the joint-to-patch index
//! mapping, skeleton-free even sampling over the flattened grid, and the
//! person-extension rules (zero padding / replication).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-frame grid of patch token embeddings, [T, Gh, Gw, C]. The cls token is
/// never stored; grid extents follow ceiling semantics ⌈H/P⌉ × ⌈W/P⌉.
#[derive(Debug, Clone)]
pub struct TokenGrid<T> {
    pub data: Tensor<T>,
    pub patch: usize,
    pub img_h: usize,
    pub img_w: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl<T: Scalar> TokenGrid<T> {
    pub fn new(data: Tensor<T>, patch: usize, img_h: usize, img_w: usize) -> Result<Self, CoreError> {
        if data.rank() != 4 {
            return Err(CoreError::invalid(format_args!(
                "token grid must be [T, Gh, Gw, C], got {:?}",
                data.dims()
            )));
        }
        if patch == 0 {
            return Err(CoreError::invalid("patch size must be >= 1"));
        }
        let (gh, gw) = (data.dims()[1], data.dims()[2]);
        if gh != ceil_div(img_h, patch) || gw != ceil_div(img_w, patch) {
            return Err(CoreError::invalid(format_args!(
                "grid {gh}x{gw} disagrees with image {img_h}x{img_w} at patch {patch}"
            )));
        }
        Ok(TokenGrid {
            data,
            patch,
            img_h,
            img_w,
        })
    }

    /// Grid whose image extents are exactly patch-aligned.
    pub fn with_patch(data: Tensor<T>, patch: usize) -> Result<Self, CoreError> {
        if data.rank() != 4 {
            return Err(CoreError::invalid(format_args!(
                "token grid must be [T, Gh, Gw, C], got {:?}",
                data.dims()
            )));
        }
        let (img_h, img_w) = (data.dims()[1] * patch, data.dims()[2] * patch);
        TokenGrid::new(data, patch, img_h, img_w)
    }

    pub fn frames(&self) -> usize {
        self.data.dims()[0]
    }
    pub fn grid_h(&self) -> usize {
        self.data.dims()[1]
    }
    pub fn grid_w(&self) -> usize {
        self.data.dims()[2]
    }
    pub fn channels(&self) -> usize {
        self.data.dims()[3]
    }
    pub fn n_tokens(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    /// Token vector at (frame, flat patch index).
    pub fn token(&self, t: usize, flat: usize) -> &[T] {
        let c = self.channels();
        let base = (t * self.n_tokens() + flat) * c;
        &self.data.data()[base..base + c]
    }

    /// Tokens flattened to [T, Gh·Gw, C].
    pub fn tokens_flat(&self) -> Tensor<T> {
        self.data
            .reshaped(&[self.frames(), self.n_tokens(), self.channels()])
            .expect("flatten grid")
    }
}

/// Joint coordinate stream, [T, M, J, D] with D = 2 (pixels) or 3, plus a
/// per-(frame, person) validity mask.
#[derive(Debug, Clone)]
pub struct SkeletonSequence<T> {
    pub data: Tensor<T>,
    /// true = valid, indexed [t * persons + m].
    pub mask: Vec<bool>,
}

impl<T: Scalar> SkeletonSequence<T> {
    pub fn new(data: Tensor<T>, mask: Option<Vec<bool>>) -> Result<Self, CoreError> {
        if data.rank() != 4 || !matches!(data.dims()[3], 2 | 3) {
            return Err(CoreError::invalid(format_args!(
                "skeleton must be [T, M, J, 2|3], got {:?}",
                data.dims()
            )));
        }
        let want = data.dims()[0] * data.dims()[1];
        let mask = mask.unwrap_or_else(|| vec![true; want]);
        if mask.len() != want {
            return Err(CoreError::invalid(format_args!(
                "mask length {} != T*M = {}",
                mask.len(),
                want
            )));
        }
        Ok(SkeletonSequence { data, mask })
    }

    pub fn frames(&self) -> usize {
        self.data.dims()[0]
    }
    pub fn persons(&self) -> usize {
        self.data.dims()[1]
    }
    pub fn joints(&self) -> usize {
        self.data.dims()[2]
    }
    pub fn coord_dim(&self) -> usize {
        self.data.dims()[3]
    }

    pub fn valid(&self, t: usize, m: usize) -> bool {
        self.mask[t * self.persons() + m]
    }

    /// A person counts as valid when it is valid in at least one frame.
    pub fn person_valid(&self, m: usize) -> bool {
        (0..self.frames()).any(|t| self.valid(t, m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    Guided,
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvenInterp {
    Linear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtendMode {
    ZeroPad,
    Replicate,
}

/// Joint-aligned token embeddings [T, M, J, C] plus the flat patch indices
/// that produced them.
#[derive(Debug, Clone)]
pub struct SampledTokens<T> {
    pub data: Tensor<T>,
    pub indices: Vec<u32>,
    pub strategy: SamplingStrategy,
}

impl<T: Scalar> SampledTokens<T> {
    pub fn frames(&self) -> usize {
        self.data.dims()[0]
    }
    pub fn persons(&self) -> usize {
        self.data.dims()[1]
    }
    pub fn joints(&self) -> usize {
        self.data.dims()[2]
    }
    pub fn channels(&self) -> usize {
        self.data.dims()[3]
    }
}

/// Flat patch index of a pixel coordinate: ⌊y/P⌋·Gw + ⌊x/P⌋, clamped into
/// [0, Gh·Gw−1]. Callers clamp x into [0, W−1] and y into [0, H−1] first.
pub fn joint_to_patch_index(x: f64, y: f64, patch: usize, gw: usize, gh: usize) -> usize {
    let col = num_traits::Float::floor(x / patch as f64) as i64;
    let row = num_traits::Float::floor(y / patch as f64) as i64;
    let flat = row * gw as i64 + col;
    flat.clamp(0, (gh * gw) as i64 - 1) as usize
}

/// Guided sampling: gathers, per (frame, person, joint), the grid token whose
/// patch contains the 2D joint. Invalid (t, m) entries yield zero rows.
pub fn guided_sample<T: Scalar>(
    grid: &TokenGrid<T>,
    skeleton2d: &SkeletonSequence<T>,
) -> Result<SampledTokens<T>, CoreError> {
    if skeleton2d.coord_dim() != 2 {
        return Err(CoreError::invalid("guided sampling requires a 2D skeleton"));
    }
    if grid.frames() != skeleton2d.frames() {
        return Err(CoreError::ShapeMismatch {
            op: "guided_sample",
            left: grid.data.dims().to_vec(),
            right: skeleton2d.data.dims().to_vec(),
        });
    }
    let (t_n, m_n, j_n) = (
        skeleton2d.frames(),
        skeleton2d.persons(),
        skeleton2d.joints(),
    );
    let c = grid.channels();
    let (gw, gh) = (grid.grid_w(), grid.grid_h());
    let mut data = Tensor::zeros(&[t_n, m_n, j_n, c]);
    let mut indices = vec![0u32; t_n * m_n * j_n];
    let sd = skeleton2d.data.data();
    for t in 0..t_n {
        for m in 0..m_n {
            let valid = skeleton2d.valid(t, m);
            for j in 0..j_n {
                let base = ((t * m_n + m) * j_n + j) * 2;
                let x = sd[base].to_f64().clamp(0.0, (grid.img_w - 1) as f64);
                let y = sd[base + 1].to_f64().clamp(0.0, (grid.img_h - 1) as f64);
                let flat = joint_to_patch_index(x, y, grid.patch, gw, gh);
                indices[(t * m_n + m) * j_n + j] = flat as u32;
                if valid {
                    let dst = ((t * m_n + m) * j_n + j) * c;
                    data.data_mut()[dst..dst + c].copy_from_slice(grid.token(t, flat));
                }
            }
        }
    }
    Ok(SampledTokens {
        data,
        indices,
        strategy: SamplingStrategy::Guided,
    })
}

/// Even sampling: J tokens at linearly spaced positions over the flattened
/// token sequence, blended between neighbours, replicated for each person.
/// Entirely independent of any skeleton input.
pub fn even_sample<T: Scalar>(
    grid: &TokenGrid<T>,
    persons: usize,
    joints: usize,
    interp: EvenInterp,
) -> Result<SampledTokens<T>, CoreError> {
    if joints < 1 {
        return Err(CoreError::invalid("even sampling requires J >= 1"));
    }
    let n = grid.n_tokens();
    if joints >= 2 && n < 2 {
        return Err(CoreError::invalid(
            "even sampling with J >= 2 requires at least 2 grid tokens",
        ));
    }
    let (t_n, c) = (grid.frames(), grid.channels());
    let mut data = Tensor::zeros(&[t_n, persons, joints, c]);
    let mut indices = vec![0u32; t_n * persons * joints];
    for t in 0..t_n {
        for j in 0..joints {
            let pos = if joints == 1 {
                (n - 1) as f64 / 2.0
            } else {
                j as f64 * (n - 1) as f64 / (joints - 1) as f64
            };
            let lo = num_traits::Float::floor(pos) as usize;
            let hi = num_traits::Float::ceil(pos).min((n - 1) as f64) as usize;
            let frac = T::from_f64(pos - lo as f64);
            let mut row = vec![T::zero(); c];
            match interp {
                EvenInterp::Linear => {
                    let (a, b) = (grid.token(t, lo), grid.token(t, hi));
                    for (o, (&x, &y)) in row.iter_mut().zip(a.iter().zip(b)) {
                        *o = x * (T::one() - frac) + y * frac;
                    }
                }
                EvenInterp::Nearest => {
                    let nearest = if pos - lo as f64 <= 0.5 { lo } else { hi };
                    row.copy_from_slice(grid.token(t, nearest));
                }
            }
            for m in 0..persons {
                let dst = ((t * persons + m) * joints + j) * c;
                data.data_mut()[dst..dst + c].copy_from_slice(&row);
                indices[(t * persons + m) * joints + j] = lo as u32;
            }
        }
    }
    Ok(SampledTokens {
        data,
        indices,
        strategy: SamplingStrategy::Even,
    })
}

/// Grows the person dimension to `target` by zero padding or cyclic copying.
pub fn extend_persons<T: Scalar>(
    tokens: &SampledTokens<T>,
    target: usize,
    mode: ExtendMode,
) -> Result<SampledTokens<T>, CoreError> {
    let (t_n, m_n, j_n, c) = (
        tokens.frames(),
        tokens.persons(),
        tokens.joints(),
        tokens.channels(),
    );
    if target < m_n {
        return Err(CoreError::invalid(format_args!(
            "cannot extend persons from {m_n} down to {target}"
        )));
    }
    if target == m_n {
        return Ok(tokens.clone());
    }
    let mut data = Tensor::zeros(&[t_n, target, j_n, c]);
    let mut indices = vec![0u32; t_n * target * j_n];
    let row = j_n * c;
    for t in 0..t_n {
        for m in 0..target {
            let src_m = match mode {
                ExtendMode::ZeroPad => {
                    if m >= m_n {
                        continue;
                    }
                    m
                }
                ExtendMode::Replicate => m % m_n,
            };
            let src = (t * m_n + src_m) * row;
            let dst = (t * target + m) * row;
            data.data_mut()[dst..dst + row].copy_from_slice(&tokens.data.data()[src..src + row]);
            for j in 0..j_n {
                indices[(t * target + m) * j_n + j] = tokens.indices[(t * m_n + src_m) * j_n + j];
            }
        }
    }
    Ok(SampledTokens {
        data,
        indices,
        strategy: tokens.strategy,
    })
}
