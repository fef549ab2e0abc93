//! SGD with momentum, classical L2-in-gradient weight decay, and the
//! step learning-rate schedule.

use alloc::vec::Vec;

use crate::graph::{BnUpdate, Grads, BN_MOMENTUM};
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// v ← μ·v + g + wd·θ;  θ ← θ − lr·v.
/// Weight decay skips parameters registered with `decay: false`
/// (batch-norm affine terms, λ, and the learnable adjacency).
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        if self.velocity.len() < store.len() {
            self.velocity.resize_with(store.len(), || None);
        }
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(lr);
        let ids: Vec<_> = store
            .iter()
            .map(|(id, e)| (id, e.kind))
            .collect();
        for (id, kind) in ids {
            let ParamKind::Weight { decay } = kind else { continue };
            let Some(grad) = grads.get(id) else { continue };
            let wd = if decay {
                T::from_f64(self.weight_decay)
            } else {
                T::zero()
            };
            let theta = store.value_mut(id);
            let v = self.velocity[id.0]
                .get_or_insert_with(|| Tensor::zeros(theta.dims()));
            for ((vv, &g), th) in v
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(theta.data_mut())
            {
                *vv = mu * *vv + g + wd * *th;
                *th = *th - lr * *vv;
            }
        }
    }
}

/// Blends batch statistics into the running buffers: r ← 0.9·r + 0.1·batch.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let keep = T::from_f64(BN_MOMENTUM);
    let take = T::one() - keep;
    for u in updates {
        for (pid, batch) in [
            (u.running_mean, &u.batch_mean),
            (u.running_var, &u.batch_var),
        ] {
            let r = store.value_mut(pid);
            for (rv, &bv) in r.data_mut().iter_mut().zip(batch.data()) {
                *rv = keep * *rv + take * bv;
            }
        }
    }
}

/// Decay epochs scaled proportionally from the 35/55-of-65 reference recipe.
pub fn scaled_milestones(total_epochs: usize) -> Vec<usize> {
    [35usize, 55]
        .iter()
        .map(|&m| (m * total_epochs).div_ceil(65))
        .collect()
}

/// Step schedule: lr is divided by 10 at each milestone.
pub fn lr_at(base: f64, milestones: &[usize], epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch >= m).count();
    base * num_traits::Float::powi(0.1f64, passed as i32)
}
