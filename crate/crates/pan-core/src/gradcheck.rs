//! Central finite-difference verification of tape gradients (f64 only).

use alloc::string::String;
use alloc::vec::Vec;

use crate::graph::{Grads, Graph, NodeId};
use crate::params::{ParamKind, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error with an absolute floor so finite-difference noise on
/// near-zero gradients does not dominate.
pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    let denom = analytic.abs().max(fd.abs()).max(1e-3);
    (analytic - fd).abs() / denom
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_fd: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Elements checked per parameter; larger tensors are stride-sampled.
    pub max_elements_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            max_elements_per_param: 24,
        }
    }
}

impl GradCheckConfig {
    /// Compares analytic grads against central differences of `loss_fn`.
    /// Every trainable parameter is visited; returns one row per parameter.
    pub fn check(
        &self,
        store: &mut ParamStore<f64>,
        grads: &Grads<f64>,
        loss_fn: &mut dyn FnMut(&ParamStore<f64>) -> f64,
    ) -> Vec<ParamCheck> {
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, e)| matches!(e.kind, ParamKind::Weight { .. }))
            .map(|(id, e)| (id, e.name.clone(), e.value.numel()))
            .collect();
        let mut out = Vec::with_capacity(ids.len());
        for (pid, name, numel) in ids {
            let n_check = numel.min(self.max_elements_per_param);
            let mut row = ParamCheck {
                name,
                checked: n_check,
                max_rel_err: 0.0,
                worst_analytic: 0.0,
                worst_fd: 0.0,
            };
            for e in 0..n_check {
                let idx = if numel <= self.max_elements_per_param {
                    e
                } else {
                    e * numel / n_check
                };
                let orig = store.value(pid).data()[idx];
                store.value_mut(pid).data_mut()[idx] = orig + self.eps;
                let plus = loss_fn(store);
                store.value_mut(pid).data_mut()[idx] = orig - self.eps;
                let minus = loss_fn(store);
                store.value_mut(pid).data_mut()[idx] = orig;
                let fd = (plus - minus) / (2.0 * self.eps);
                let analytic = grads.get(pid).map_or(0.0, |g| g.data()[idx]);
                let rel = rel_err(analytic, fd);
                if rel > row.max_rel_err {
                    row.max_rel_err = rel;
                    row.worst_analytic = analytic;
                    row.worst_fd = fd;
                }
            }
            out.push(row);
        }
        out
    }
}

/// Checks one op in isolation: every input element of every input tensor.
/// The op output is contracted to a scalar with a fixed random projection so
/// all output components contribute to the loss.
pub fn check_op(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
) -> Vec<ParamCheck> {
    let mut store = ParamStore::<f64>::new();
    for (i, t) in inputs.iter().enumerate() {
        store.add(
            &alloc::format!("in{i}"),
            t.clone(),
            ParamKind::Weight { decay: true },
        );
    }
    let mut weights: Option<Tensor<f64>> = None;
    let mut run = |store: &ParamStore<f64>, want_grads: bool| {
        let mut g = Graph::<f64>::train();
        let nodes: Vec<NodeId> = (0..inputs.len())
            .map(|i| g.param(store, crate::params::ParamId(i)))
            .collect();
        let y = build(&mut g, &nodes);
        let w = weights.get_or_insert_with(|| {
            let mut rng = Rng::new(0x5EED);
            Tensor::randn(g.value(y).dims(), 1.0, &mut rng)
        });
        let wn = g.constant(w.clone());
        let prod = g.mul(y, wn);
        let axes: Vec<usize> = (0..g.dims(prod).len()).collect();
        let loss = g.reduce_sum(prod, &axes);
        let grads = want_grads.then(|| g.backward(loss, store).unwrap());
        (g.value(loss).item(), grads)
    };
    let (_, grads) = run(&store, true);
    let grads = grads.unwrap();
    let cfg = GradCheckConfig {
        max_elements_per_param: usize::MAX,
        ..GradCheckConfig::default()
    };
    cfg.check(&mut store, &grads, &mut |s| run(s, false).0)
}

/// Asserts all rows of a check pass the tolerance; panics with the worst row.
pub fn assert_pass(rows: &[ParamCheck], tolerance: f64) {
    let worst = rows
        .iter()
        .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap());
    if let Some(w) = worst {
        assert!(
            w.max_rel_err <= tolerance,
            "gradient check failed for {}: rel err {:.3e} (analytic {:.6e}, fd {:.6e})",
            w.name,
            w.max_rel_err,
            w.worst_analytic,
            w.worst_fd
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        let mut rng = Rng::new(2);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let rows = check_op(&[x], |g, ins| g.mul(ins[0], ins[0]));
        assert_pass(&rows, 1e-4);
    }

    #[test]
    fn rel_err_floor_absorbs_fd_noise() {
        assert!(rel_err(0.0, 1e-9) < 1e-4);
        assert!(rel_err(1.0, 1.0001) < 2e-4);
        assert!(rel_err(1.0, 2.0) > 0.4);
    }
}
