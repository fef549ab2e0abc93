//! Named parameter storage shared by models, the optimizer, and checkpoints.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable weight; `decay` controls whether weight decay applies.
    Weight { decay: bool },
    /// Non-trainable state (batch-norm running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Flat store of uniquely named tensors. Models hold `ParamId`s into it.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            kind,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Total learnable scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, ParamKind::Weight { .. }))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Learnable scalars grouped by the first `depth` dot-separated name parts.
    pub fn count_by_prefix(&self, depth: usize) -> Vec<(String, usize)> {
        let mut groups: BTreeMap<String, usize> = BTreeMap::new();
        for e in &self.entries {
            if !matches!(e.kind, ParamKind::Weight { .. }) {
                continue;
            }
            let prefix: Vec<&str> = e.name.split('.').take(depth).collect();
            *groups.entry(prefix.join(".")).or_insert(0) += e.value.numel();
        }
        groups.into_iter().collect()
    }

    /// Copies values from another store by name; errors on missing names or
    /// shape mismatches.
    pub fn load_values_from<U: Scalar>(&mut self, other: &ParamStore<U>) -> Result<(), CoreError> {
        for entry in &mut self.entries {
            let src = other
                .by_name
                .get(&entry.name)
                .map(|id| &other.entries[id.0].value)
                .ok_or_else(|| {
                    CoreError::invalid(format_args!("missing parameter {}", entry.name))
                })?;
            if src.dims() != entry.value.dims() {
                return Err(CoreError::ShapeMismatch {
                    op: "load_values_from",
                    left: entry.value.dims().to_vec(),
                    right: src.dims().to_vec(),
                });
            }
            entry.value = src.cast();
        }
        Ok(())
    }
}

// ── common parameter bundles ─────────────────────────────────────────────

/// Dense projection over the trailing channel axis.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
}

impl LinearParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let limit = libm_sqrt(6.0 / (c_in + c_out) as f64);
        let weight = store.add(
            &alloc::format!("{name}.weight"),
            Tensor::rand_uniform(&[c_in, c_out], limit, rng),
            ParamKind::Weight { decay: true },
        );
        let bias = bias.then(|| {
            store.add(
                &alloc::format!("{name}.bias"),
                Tensor::zeros(&[c_out]),
                ParamKind::Weight { decay: true },
            )
        });
        LinearParams {
            weight,
            bias,
            c_in,
            c_out,
        }
    }
}

/// Temporal convolution weights, stored [kernel, c_in, c_out].
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        c_in: usize,
        c_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (kernel * c_in) as f64;
        let fan_out = (kernel * c_out) as f64;
        let limit = libm_sqrt(6.0 / (fan_in + fan_out));
        let weight = store.add(
            &alloc::format!("{name}.weight"),
            Tensor::rand_uniform(&[kernel, c_in, c_out], limit, rng),
            ParamKind::Weight { decay: true },
        );
        let bias = bias.then(|| {
            store.add(
                &alloc::format!("{name}.bias"),
                Tensor::zeros(&[c_out]),
                ParamKind::Weight { decay: true },
            )
        });
        ConvParams {
            weight,
            bias,
            kernel,
            c_in,
            c_out,
        }
    }
}

/// Batch-norm scale/shift plus running statistics buffers.
#[derive(Debug, Clone)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BnParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BnParams {
            gamma: store.add(
                &alloc::format!("{name}.gamma"),
                Tensor::filled(&[channels], T::one()),
                ParamKind::Weight { decay: false },
            ),
            beta: store.add(
                &alloc::format!("{name}.beta"),
                Tensor::zeros(&[channels]),
                ParamKind::Weight { decay: false },
            ),
            running_mean: store.add(
                &alloc::format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            ),
            running_var: store.add(
                &alloc::format!("{name}.running_var"),
                Tensor::filled(&[channels], T::one()),
                ParamKind::Buffer,
            ),
            channels,
        }
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(&[2]), ParamKind::Weight { decay: true });
        store.add("w", Tensor::zeros(&[2]), ParamKind::Weight { decay: true });
    }

    #[test]
    fn trainable_count_skips_buffers() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(0);
        LinearParams::new(&mut store, "fc", 3, 4, true, &mut rng);
        BnParams::new(&mut store, "bn", 4);
        // 3*4 + 4 (fc) + 4 + 4 (bn affine); running stats excluded
        assert_eq!(store.trainable_count(), 12 + 4 + 8);
    }
}
