//! Reverse-mode gradient tape.
//!
//! Values are computed eagerly; each op records its inputs so `backward`
//! can replay the tape in reverse and accumulate exact partials into every
//! reachable parameter. Node ids are creation-ordered, which makes the
//! reverse id sweep a valid topological order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::kernels::{self, ConvSpec};
use crate::params::{BnParams, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use crate::kernels::PadMode;

/// Batch-norm epsilon used everywhere in this crate.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics retention factor: r ← 0.9·r + 0.1·batch.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Pending running-statistics update recorded by a train-mode BN op.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Tensor<T>,
    pub batch_var: Tensor<T>,
}

enum Op<T: Scalar> {
    Leaf {
        param: Option<ParamId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    MulScalarNode {
        x: NodeId,
        s: NodeId,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Permute {
        x: NodeId,
        perm: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    Broadcast {
        x: NodeId,
    },
    ReduceSum {
        x: NodeId,
        axes: Vec<usize>,
    },
    ReduceMean {
        x: NodeId,
        axes: Vec<usize>,
    },
    ReduceMax {
        x: NodeId,
        arg: Vec<u32>,
    },
    ConvT {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
        c_out: usize,
    },
    MaxPoolT {
        x: NodeId,
        arg: Vec<u32>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        axis: usize,
        mean: Vec<T>,
        var: Vec<T>,
        train: bool,
    },
    ChannelMix {
        topo: NodeId,
        val: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// The tape. One instance per forward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    train: bool,
    consumed: bool,
    bn_updates: Vec<BnUpdate<T>>,
}

/// Gradients keyed by `ParamId`, produced by [`Graph::backward`].
pub struct Grads<T> {
    by_param: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn train() -> Self {
        Self::with_mode(true)
    }

    pub fn eval() -> Self {
        Self::with_mode(false)
    }

    fn with_mode(train: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            train,
            consumed: false,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        core::mem::take(&mut self.bn_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    // ── leaves ───────────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Leases a parameter onto the tape; backward accumulates into its slot.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    // ── elementwise ──────────────────────────────────────────────────────

    fn check_same_dims(&self, op: &'static str, a: NodeId, b: NodeId) {
        let (da, db) = (self.dims(a), self.dims(b));
        assert!(
            da == db,
            "{}",
            CoreError::ShapeMismatch {
                op,
                left: da.to_vec(),
                right: db.to_vec()
            }
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_dims("add", a, b);
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_dims("sub", a, b);
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= v;
        }
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_dims("mul", a, b);
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= v;
        }
        self.push(out, Op::Mul(a, b))
    }

    /// y[..., c] = x[..., c] + bias[c]
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let c = *self.dims(x).last().expect("add_bias on scalar");
        assert_eq!(
            self.dims(bias),
            &[c],
            "add_bias: bias dims {:?} vs channels {}",
            self.dims(bias),
            c
        );
        let mut out = self.value(x).clone();
        let bd = self.nodes[bias.0].value.data().to_vec();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(&bd) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let c = T::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale { x, c })
    }

    /// Multiplies by a one-element tensor node (a learnable scalar gate).
    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.value(s).numel(), 1, "scalar node must have one element");
        let sv = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * sv);
        self.push(out, Op::MulScalarNode { x, s })
    }

    // ── matmul ───────────────────────────────────────────────────────────

    /// Batched matmul: [batch.., m, k] × [batch.., k, n] → [batch.., m, n].
    /// Either operand may omit the batch dims and is then shared across them.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul_value(self.value(a), self.value(b)).unwrap_or_else(|e| panic!("{e}"));
        self.push(value, Op::Matmul { a, b })
    }

    // ── activations ──────────────────────────────────────────────────────

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let one = T::one();
        let out = self.value(x).map(|v| one / (one + (-v).exp()));
        self.push(out, Op::Sigmoid { x })
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        assert!(axis < self.dims(x).len(), "softmax axis out of range");
        let out = kernels::softmax_forward(self.value(x), axis);
        self.push(out, Op::Softmax { x, axis })
    }

    // ── shape ops ────────────────────────────────────────────────────────

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let dims = self.dims(x);
        assert!(
            axis < dims.len() && start + len <= dims[axis],
            "slice [{start}, {start}+{len}) on axis {axis} of {dims:?}"
        );
        let out = kernels::slice_axis(self.value(x), axis, start, len);
        self.push(out, Op::Slice { x, axis, start })
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(!parts.is_empty());
        let first = self.dims(parts[0]).to_vec();
        let mut total = 0;
        for &p in parts {
            let d = self.dims(p);
            assert_eq!(d.len(), first.len(), "concat rank mismatch");
            for (i, (&a, &b)) in d.iter().zip(&first).enumerate() {
                assert!(i == axis || a == b, "concat dims differ off-axis: {d:?} vs {first:?}");
            }
            total += d[axis];
        }
        let mut out_dims = first.clone();
        out_dims[axis] = total;
        let mut out = Tensor::zeros(&out_dims);
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let out_block = total * inner;
        let mut offset = 0;
        for &p in parts {
            let pd = self.value(p);
            let len = pd.dims()[axis];
            let in_block = len * inner;
            for o in 0..outer {
                let dst = o * out_block + offset * inner;
                out.data_mut()[dst..dst + in_block]
                    .copy_from_slice(&pd.data()[o * in_block..(o + 1) * in_block]);
            }
            offset += len;
        }
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> NodeId {
        let out = self
            .value(x)
            .permuted(perm)
            .unwrap_or_else(|e| panic!("{e}"));
        self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        let out = self
            .value(x)
            .reshaped(dims)
            .unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::Reshape { x })
    }

    /// Numpy-style right-aligned broadcast to `dims`.
    pub fn broadcast_to(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        let src = self.value(x);
        let map = kernels::broadcast_map(src.dims(), dims).unwrap_or_else(|| {
            panic!(
                "{}",
                CoreError::ShapeMismatch {
                    op: "broadcast_to",
                    left: src.dims().to_vec(),
                    right: dims.to_vec(),
                }
            )
        });
        let mut out = Tensor::zeros(dims);
        {
            let sd = src.data();
            let od = out.data_mut();
            kernels::for_each_reduce(dims, &map, |src_flat, dst_flat| {
                od[dst_flat] = sd[src_flat];
            });
        }
        self.push(out, Op::Broadcast { x })
    }

    // ── reductions ───────────────────────────────────────────────────────

    fn check_axes(&self, x: NodeId, axes: &[usize]) {
        let rank = self.dims(x).len();
        for (i, &a) in axes.iter().enumerate() {
            assert!(a < rank, "reduce axis {a} out of range for rank {rank}");
            assert!(!axes[..i].contains(&a), "duplicate reduce axis {a}");
        }
    }

    pub fn reduce_sum(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        self.check_axes(x, axes);
        let src = self.value(x);
        let (out_dims, map) = kernels::reduce_plan(src.dims(), axes);
        let mut out = Tensor::zeros(&out_dims);
        {
            let sd = src.data();
            let od = out.data_mut();
            kernels::for_each_reduce(src.dims(), &map, |out_flat, in_flat| {
                od[out_flat] += sd[in_flat];
            });
        }
        self.push(
            out,
            Op::ReduceSum {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        self.check_axes(x, axes);
        let src = self.value(x);
        let count: usize = axes.iter().map(|&a| src.dims()[a]).product();
        let inv = T::from_f64(1.0 / count as f64);
        let (out_dims, map) = kernels::reduce_plan(src.dims(), axes);
        let mut out = Tensor::zeros(&out_dims);
        {
            let sd = src.data();
            let od = out.data_mut();
            kernels::for_each_reduce(src.dims(), &map, |out_flat, in_flat| {
                od[out_flat] += sd[in_flat];
            });
        }
        for v in out.data_mut() {
            *v *= inv;
        }
        self.push(
            out,
            Op::ReduceMean {
                x,
                axes: axes.to_vec(),
            },
        )
    }

    pub fn reduce_max(&mut self, x: NodeId, axes: &[usize]) -> NodeId {
        self.check_axes(x, axes);
        let src = self.value(x);
        let (out_dims, map) = kernels::reduce_plan(src.dims(), axes);
        let out_numel: usize = out_dims.iter().product();
        let mut out = Tensor::filled(&out_dims, T::neg_infinity());
        let mut arg = vec![0u32; out_numel];
        {
            let sd = src.data();
            let od = out.data_mut();
            kernels::for_each_reduce(src.dims(), &map, |out_flat, in_flat| {
                if sd[in_flat] > od[out_flat] {
                    od[out_flat] = sd[in_flat];
                    arg[out_flat] = in_flat as u32;
                }
            });
        }
        self.push(out, Op::ReduceMax { x, arg })
    }

    // ── structured ops ───────────────────────────────────────────────────

    /// 1-D convolution along axis 1 of [B, T, ..., C_in]; w: [K, C_in, C_out].
    pub fn conv_temporal(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        dilation: usize,
        pad: usize,
        mode: PadMode,
    ) -> NodeId {
        let xd = self.value(x).dims().to_vec();
        let wd = self.value(w).dims().to_vec();
        assert!(xd.len() >= 3, "conv_temporal input must be [B, T, ..., C]");
        assert_eq!(wd.len(), 3, "conv weight must be [K, C_in, C_out]");
        let c_in = *xd.last().unwrap();
        assert_eq!(
            wd[1], c_in,
            "conv weight C_in {} vs input channels {}",
            wd[1], c_in
        );
        let spec = ConvSpec {
            kernel: wd[0],
            stride,
            dilation,
            pad,
            mode,
        };
        let (b_n, t_in) = (xd[0], xd[1]);
        let s_n: usize = xd[2..xd.len() - 1].iter().product();
        let c_out = wd[2];
        let bias_slice = bias.map(|b| {
            assert_eq!(self.dims(b), &[c_out], "conv bias dims");
            self.value(b).data().to_vec()
        });
        let (data, t_out) = kernels::conv_t_forward(
            self.value(x).data(),
            (b_n, t_in, s_n, c_in),
            self.value(w).data(),
            bias_slice.as_deref(),
            c_out,
            &spec,
        );
        let mut out_dims = xd.clone();
        out_dims[1] = t_out;
        *out_dims.last_mut().unwrap() = c_out;
        let value = Tensor::from_vec(&out_dims, data).expect("conv output shape");
        self.push(
            value,
            Op::ConvT {
                x,
                w,
                bias,
                spec,
                c_out,
            },
        )
    }

    /// Max pooling along axis 1 of [B, T, ..., C].
    pub fn maxpool_temporal(
        &mut self,
        x: NodeId,
        kernel: usize,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> NodeId {
        let xd = self.value(x).dims().to_vec();
        assert!(xd.len() >= 3, "maxpool input must be [B, T, ..., C]");
        let spec = ConvSpec {
            kernel,
            stride,
            dilation: 1,
            pad,
            mode,
        };
        let (b_n, t_in) = (xd[0], xd[1]);
        let c_n = *xd.last().unwrap();
        let s_n: usize = xd[2..xd.len() - 1].iter().product();
        let (data, arg, t_out) =
            kernels::maxpool_t_forward(self.value(x).data(), (b_n, t_in, s_n, c_n), &spec);
        let mut out_dims = xd.clone();
        out_dims[1] = t_out;
        let value = Tensor::from_vec(&out_dims, data).expect("maxpool output shape");
        self.push(value, Op::MaxPoolT { x, arg })
    }

    /// Batch normalization over all axes except `axis`. Train mode uses batch
    /// statistics and records a running-statistics update; eval mode reads the
    /// running buffers from the store.
    pub fn batch_norm(
        &mut self,
        store: &ParamStore<T>,
        x: NodeId,
        bn: &BnParams,
        axis: usize,
    ) -> NodeId {
        let dims = self.dims(x).to_vec();
        assert_eq!(
            dims[axis], bn.channels,
            "batch_norm channels {} vs axis extent {}",
            bn.channels, dims[axis]
        );
        let ax = kernels::bn_axes(&dims, axis);
        let gamma = self.param(store, bn.gamma);
        let beta = self.param(store, bn.beta);
        let eps = T::from_f64(BN_EPS);
        let (mean, var) = if self.train {
            let (m, v) = kernels::bn_stats(self.value(x).data(), &ax);
            self.bn_updates.push(BnUpdate {
                running_mean: bn.running_mean,
                running_var: bn.running_var,
                batch_mean: Tensor::from_vec(&[bn.channels], m.clone()).unwrap(),
                batch_var: Tensor::from_vec(&[bn.channels], v.clone()).unwrap(),
            });
            (m, v)
        } else {
            (
                store.value(bn.running_mean).data().to_vec(),
                store.value(bn.running_var).data().to_vec(),
            )
        };
        let y = kernels::bn_normalize(
            self.value(x).data(),
            &ax,
            &mean,
            &var,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let value = Tensor::from_vec(&dims, y).expect("bn output shape");
        let train = self.train;
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                axis,
                mean,
                var,
                train,
            },
        )
    }

    /// Channel-wise graph mixing: out[b,t,m,u,c] = Σ_v topo[b,m,u,v,c]·val[b,t,m,v,c].
    pub fn channel_mix(&mut self, topo: NodeId, val: NodeId) -> NodeId {
        let td = self.dims(topo).to_vec();
        let vd = self.dims(val).to_vec();
        assert_eq!(td.len(), 5, "topology must be [B,M,J,J,C], got {td:?}");
        assert_eq!(vd.len(), 5, "values must be [B,T,M,J,C], got {vd:?}");
        assert!(
            td[0] == vd[0] && td[1] == vd[2] && td[2] == td[3] && td[2] == vd[3] && td[4] == vd[4],
            "channel_mix shapes disagree: topo {td:?} vs values {vd:?}"
        );
        let dims = (vd[0], vd[1], vd[2], vd[3], vd[4]);
        let data =
            kernels::channel_mix_forward(self.value(topo).data(), self.value(val).data(), dims);
        let value = Tensor::from_vec(&vd, data).unwrap();
        self.push(value, Op::ChannelMix { topo, val })
    }

    /// Mean cross-entropy over the batch; logits [B, K].
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let (loss, probs) = kernels::cross_entropy_forward(self.value(logits), targets);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean squared error across all elements (scalar output).
    pub fn mse_mean(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.check_same_dims("mse", a, b);
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        let axes: Vec<usize> = (0..self.dims(sq).len()).collect();
        self.reduce_mean(sq, &axes)
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// True for nodes whose value depends on at least one parameter leaf.
    fn needs_grad_mask(&self) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            needs[id] = match &node.op {
                Op::Leaf { param } => param.is_some(),
                Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b)
                | Op::AddBias { x: a, bias: b }
                | Op::MulScalarNode { x: a, s: b }
                | Op::Matmul { a, b }
                | Op::ChannelMix { topo: a, val: b } => needs[a.0] || needs[b.0],
                Op::Scale { x, .. }
                | Op::Relu { x }
                | Op::Tanh { x }
                | Op::Sigmoid { x }
                | Op::Softmax { x, .. }
                | Op::Slice { x, .. }
                | Op::Permute { x, .. }
                | Op::Reshape { x }
                | Op::Broadcast { x }
                | Op::ReduceSum { x, .. }
                | Op::ReduceMean { x, .. }
                | Op::ReduceMax { x, .. }
                | Op::MaxPoolT { x, .. } => needs[x.0],
                Op::Concat { parts, .. } => parts.iter().any(|p| needs[p.0]),
                Op::ConvT { x, w, bias, .. } => {
                    needs[x.0] || needs[w.0] || bias.map_or(false, |b| needs[b.0])
                }
                Op::BatchNorm { x, gamma, beta, .. } => {
                    needs[x.0] || needs[gamma.0] || needs[beta.0]
                }
                Op::CrossEntropy { logits, .. } => needs[logits.0],
            };
        }
        needs
    }

    /// Reverse sweep from a scalar loss. Each tape may be differentiated once.
    pub fn backward(&mut self, loss: NodeId, store: &ParamStore<T>) -> Result<Grads<T>, CoreError> {
        if self.value(loss).numel() != 1 {
            return Err(CoreError::invalid(format_args!(
                "backward requires a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        if self.consumed {
            return Err(CoreError::invalid("tape already consumed by backward"));
        }
        self.consumed = true;

        // dead-gradient pruning: only nodes that transitively reach a
        // parameter leaf receive gradients
        let needs = self.needs_grad_mask();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).dims(), T::one()));
        let mut by_param: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        accumulate(&mut by_param[pid.0], dy);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if needs[a.0] && needs[b.0] {
                        accumulate(&mut grads[a.0], dy.clone());
                        accumulate(&mut grads[b.0], dy);
                    } else if needs[a.0] {
                        accumulate(&mut grads[a.0], dy);
                    } else if needs[b.0] {
                        accumulate(&mut grads[b.0], dy);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if needs[a.0] {
                        accumulate(&mut grads[a.0], dy.clone());
                    }
                    if needs[b.0] {
                        accumulate(&mut grads[b.0], dy.map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if needs[a.0] {
                        let da = hadamard(&dy, &self.nodes[b.0].value);
                        accumulate(&mut grads[a.0], da);
                    }
                    if needs[b.0] {
                        let db = hadamard(&dy, &self.nodes[a.0].value);
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::AddBias { x, bias } => {
                    let (x, bias) = (*x, *bias);
                    if needs[bias.0] {
                        let c = self.nodes[bias.0].value.numel();
                        let mut db = Tensor::zeros(&[c]);
                        for row in dy.data().chunks(c) {
                            for (d, &g) in db.data_mut().iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        accumulate(&mut grads[bias.0], db);
                    }
                    if needs[x.0] {
                        accumulate(&mut grads[x.0], dy);
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    if needs[x.0] {
                        accumulate(&mut grads[x.0], dy.map(|v| v * c));
                    }
                }
                Op::MulScalarNode { x, s } => {
                    let (x, s) = (*x, *s);
                    if needs[s.0] {
                        let mut ds = T::zero();
                        for (&g, &xv) in dy.data().iter().zip(self.nodes[x.0].value.data()) {
                            ds += g * xv;
                        }
                        accumulate(
                            &mut grads[s.0],
                            Tensor::from_vec(self.nodes[s.0].value.dims(), vec![ds]).unwrap(),
                        );
                    }
                    if needs[x.0] {
                        let sv = self.nodes[s.0].value.data()[0];
                        accumulate(&mut grads[x.0], dy.map(|v| v * sv));
                    }
                }
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (da, db) = matmul_backward(
                        &self.nodes[a.0].value,
                        &self.nodes[b.0].value,
                        &dy,
                        needs[a.0],
                        needs[b.0],
                    );
                    if let Some(da) = da {
                        accumulate(&mut grads[a.0], da);
                    }
                    if let Some(db) = db {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    if !needs[x.0] {
                        continue;
                    }
                    let mut dx = dy;
                    for (g, &v) in dx.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                        if v <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Tanh { x } => {
                    let x = *x;
                    if !needs[x.0] {
                        continue;
                    }
                    let mut dx = dy;
                    for (g, &y) in dx.data_mut().iter_mut().zip(self.nodes[id].value.data()) {
                        *g = *g * (T::one() - y * y);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    if !needs[x.0] {
                        continue;
                    }
                    let mut dx = dy;
                    for (g, &y) in dx.data_mut().iter_mut().zip(self.nodes[id].value.data()) {
                        *g = *g * y * (T::one() - y);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Softmax { x, axis } => {
                    let (x, axis) = (*x, *axis);
                    if needs[x.0] {
                        let dx = kernels::softmax_backward(&self.nodes[id].value, &dy, axis);
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let (x, axis, start) = (*x, *axis, *start);
                    if !needs[x.0] {
                        continue;
                    }
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.dims());
                    kernels::slice_axis_add(&mut dx, &dy, axis, start);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Concat { parts, axis } => {
                    let (parts, axis) = (parts.clone(), *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.dims()[axis];
                        if needs[p.0] {
                            let dp = kernels::slice_axis(&dy, axis, offset, len);
                            accumulate(&mut grads[p.0], dp);
                        }
                        offset += len;
                    }
                }
                Op::Permute { x, perm } => {
                    let (x, perm) = (*x, perm.clone());
                    if !needs[x.0] {
                        continue;
                    }
                    let mut inv = vec![0usize; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    accumulate(&mut grads[x.0], dy.permuted(&inv).unwrap());
                }
                Op::Reshape { x } => {
                    let x = *x;
                    if !needs[x.0] {
                        continue;
                    }
                    let dx = dy.reshaped(self.nodes[x.0].value.dims()).unwrap();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Broadcast { x } => {
                    let x = *x;
                    if !needs[x.0] {
                        continue;
                    }
                    let src_dims = self.nodes[x.0].value.dims().to_vec();
                    let map = kernels::broadcast_map(&src_dims, dy.dims()).unwrap();
                    let mut dx = Tensor::zeros(&src_dims);
                    {
                        let dd = dx.data_mut();
                        let gd = dy.data();
                        kernels::for_each_reduce(dy.dims(), &map, |src_flat, dst_flat| {
                            dd[src_flat] += gd[dst_flat];
                        });
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ReduceSum { x, axes } => {
                    let (x, axes) = (*x, axes.clone());
                    if !needs[x.0] {
                        continue;
                    }
                    let dx = spread_reduce(&self.nodes[x.0].value, &axes, &dy, T::one());
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ReduceMean { x, axes } => {
                    let (x, axes) = (*x, axes.clone());
                    if !needs[x.0] {
                        continue;
                    }
                    let count: usize = axes
                        .iter()
                        .map(|&a| self.nodes[x.0].value.dims()[a])
                        .product();
                    let inv = T::from_f64(1.0 / count as f64);
                    let dx = spread_reduce(&self.nodes[x.0].value, &axes, &dy, inv);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ReduceMax { x, arg } => {
                    let (x, arg) = (*x, arg.clone());
                    if !needs[x.0] {
                        continue;
                    }
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.dims());
                    for (out_flat, &a) in arg.iter().enumerate() {
                        dx.data_mut()[a as usize] += dy.data()[out_flat];
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ConvT {
                    x,
                    w,
                    bias,
                    spec,
                    c_out,
                } => {
                    let (x, w, bias, c_out) = (*x, *w, *bias, *c_out);
                    let spec = *spec;
                    let xd = self.nodes[x.0].value.dims().to_vec();
                    let c_in = *xd.last().unwrap();
                    let s_n: usize = xd[2..xd.len() - 1].iter().product();
                    let (dx, dw, db) = kernels::conv_t_backward(
                        self.nodes[x.0].value.data(),
                        (xd[0], xd[1], s_n, c_in),
                        self.nodes[w.0].value.data(),
                        bias.is_some(),
                        c_out,
                        &spec,
                        dy.data(),
                    );
                    if needs[x.0] {
                        accumulate(&mut grads[x.0], Tensor::from_vec(&xd, dx).unwrap());
                    }
                    if needs[w.0] {
                        accumulate(
                            &mut grads[w.0],
                            Tensor::from_vec(self.nodes[w.0].value.dims(), dw).unwrap(),
                        );
                    }
                    if let (Some(bias), Some(db)) = (bias, db) {
                        if needs[bias.0] {
                            accumulate(&mut grads[bias.0], Tensor::from_vec(&[c_out], db).unwrap());
                        }
                    }
                }
                Op::MaxPoolT { x, arg } => {
                    let (x, arg) = (*x, arg.clone());
                    if !needs[x.0] {
                        continue;
                    }
                    let dims = self.nodes[x.0].value.dims().to_vec();
                    let dx = kernels::maxpool_t_backward(
                        dy.data(),
                        &arg,
                        self.nodes[x.0].value.numel(),
                    );
                    accumulate(&mut grads[x.0], Tensor::from_vec(&dims, dx).unwrap());
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    axis,
                    mean,
                    var,
                    train,
                } => {
                    let (x, gamma, beta, axis, train) = (*x, *gamma, *beta, *axis, *train);
                    let (mean, var) = (mean.clone(), var.clone());
                    let dims = self.nodes[x.0].value.dims().to_vec();
                    let ax = kernels::bn_axes(&dims, axis);
                    let eps = T::from_f64(BN_EPS);
                    let f = if train {
                        kernels::bn_backward_train
                    } else {
                        kernels::bn_backward_eval
                    };
                    let (dx, dgamma, dbeta) = f(
                        self.nodes[x.0].value.data(),
                        &ax,
                        &mean,
                        &var,
                        self.nodes[gamma.0].value.data(),
                        eps,
                        dy.data(),
                    );
                    let c = mean.len();
                    if needs[x.0] {
                        accumulate(&mut grads[x.0], Tensor::from_vec(&dims, dx).unwrap());
                    }
                    accumulate(&mut grads[gamma.0], Tensor::from_vec(&[c], dgamma).unwrap());
                    accumulate(&mut grads[beta.0], Tensor::from_vec(&[c], dbeta).unwrap());
                }
                Op::ChannelMix { topo, val } => {
                    let (topo, val) = (*topo, *val);
                    let vd = self.nodes[val.0].value.dims().to_vec();
                    let dims = (vd[0], vd[1], vd[2], vd[3], vd[4]);
                    let (dtopo, dval) = kernels::channel_mix_backward(
                        self.nodes[topo.0].value.data(),
                        self.nodes[val.0].value.data(),
                        dims,
                        dy.data(),
                    );
                    if needs[topo.0] {
                        accumulate(
                            &mut grads[topo.0],
                            Tensor::from_vec(self.nodes[topo.0].value.dims(), dtopo).unwrap(),
                        );
                    }
                    if needs[val.0] {
                        accumulate(&mut grads[val.0], Tensor::from_vec(&vd, dval).unwrap());
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let logits = *logits;
                    if needs[logits.0] {
                        let dx = kernels::cross_entropy_backward(probs, targets, dy.item());
                        accumulate(&mut grads[logits.0], dx);
                    }
                }
            }
        }

        Ok(Grads { by_param })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        Some(g) => {
            debug_assert_eq!(g.dims(), delta.dims());
            for (a, &b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn hadamard<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= v;
    }
    out
}

/// Broadcast a reduced gradient back over the reduced axes, scaled.
fn spread_reduce<T: Scalar>(
    x: &Tensor<T>,
    axes: &[usize],
    dy: &Tensor<T>,
    scale: T,
) -> Tensor<T> {
    let (_, map) = kernels::reduce_plan(x.dims(), axes);
    let mut dx = Tensor::zeros(x.dims());
    {
        let dd = dx.data_mut();
        let gd = dy.data();
        kernels::for_each_reduce(x.dims(), &map, |out_flat, in_flat| {
            dd[in_flat] = gd[out_flat] * scale;
        });
    }
    dx
}

/// Shape-checked batched matmul used by both the tape and oracles.
pub fn matmul_value<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
    let mismatch = || CoreError::ShapeMismatch {
        op: "matmul",
        left: a.dims().to_vec(),
        right: b.dims().to_vec(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let (ab, m, ka) = kernels::mm_operand(a.dims());
    let (bb, kb, n) = kernels::mm_operand(b.dims());
    if ka != kb {
        return Err(mismatch());
    }
    if !(ab == bb || ab.is_empty() || bb.is_empty()) {
        return Err(mismatch());
    }
    let batch_dims: &[usize] = if ab.is_empty() { bb } else { ab };
    let batch: usize = batch_dims.iter().product();
    let mut out_dims = batch_dims.to_vec();
    out_dims.extend_from_slice(&[m, n]);
    let mut out = Tensor::zeros(&out_dims);
    let (a_step, b_step) = (
        if ab.is_empty() { 0 } else { m * ka },
        if bb.is_empty() { 0 } else { kb * n },
    );
    for bi in 0..batch {
        kernels::mm_accum(
            &a.data()[bi * a_step..bi * a_step + m * ka],
            &b.data()[bi * b_step..bi * b_step + kb * n],
            &mut out.data_mut()[bi * m * n..(bi + 1) * m * n],
            m,
            ka,
            n,
            false,
            false,
        );
    }
    Ok(out)
}

fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (ab, m, k) = kernels::mm_operand(a.dims());
    let (bb, _, n) = kernels::mm_operand(b.dims());
    let batch: usize = if ab.is_empty() {
        bb.iter().product()
    } else {
        ab.iter().product()
    };
    let (a_step, b_step) = (
        if ab.is_empty() { 0 } else { m * k },
        if bb.is_empty() { 0 } else { k * n },
    );
    let mut da = need_a.then(|| Tensor::zeros(a.dims()));
    let mut db = need_b.then(|| Tensor::zeros(b.dims()));
    for bi in 0..batch {
        let dy_s = &dy.data()[bi * m * n..(bi + 1) * m * n];
        if let Some(da) = da.as_mut() {
            // da += dy · bᵀ
            kernels::mm_accum(
                dy_s,
                &b.data()[bi * b_step..bi * b_step + k * n],
                &mut da.data_mut()[bi * a_step..bi * a_step + m * k],
                m,
                n,
                k,
                false,
                true,
            );
        }
        if let Some(db) = db.as_mut() {
            // db += aᵀ · dy
            kernels::mm_accum(
                &a.data()[bi * a_step..bi * a_step + m * k],
                dy_s,
                &mut db.data_mut()[bi * b_step..bi * b_step + k * n],
                k,
                m,
                n,
                true,
                false,
            );
        }
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::rng::Rng;

    fn store_with<T: Scalar>(values: &[(&str, Tensor<T>)]) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for (name, t) in values {
            s.add(name, t.clone(), ParamKind::Weight { decay: true });
        }
        s
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f64>::eval();
        let i = g.constant(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.constant(Tensor::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.matmul(i, x);
        assert_eq!(g.value(y).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_row_times_column() {
        let mut g = Graph::<f64>::eval();
        let a = g.constant(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap());
        let y = g.matmul(a, b);
        assert_eq!(g.value(y).dims(), &[1, 1]);
        assert_eq!(g.value(y).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_dim_lists() {
        let a = Tensor::<f64>::zeros(&[4, 5]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        let err = matmul_value(&a, &b).unwrap_err();
        match err {
            CoreError::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, vec![4, 5]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(99);
        let a = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        let c = matmul_value(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                assert!((c.at(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut g = Graph::<f64>::eval();
        let x = g.constant(Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap());
        let y = g.softmax(x, 0);
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = g.constant(Tensor::from_vec(&[2], vec![1000.0, 1000.0]).unwrap());
        let yb = g.softmax(big, 0);
        for &v in g.value(yb).data() {
            assert!(v.is_finite());
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let mut g = Graph::<f64>::eval();
        let x = g.constant(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.softmax(x, 0);
        let exps: alloc::vec::Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (a, e) in g.value(y).data().iter().zip(&exps) {
            assert!((a - e / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let theta = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let store = store_with(&[("theta", theta)]);
        let pid = store.lookup("theta").unwrap();
        let mut g = Graph::<f64>::train();
        let t = g.param(&store, pid);
        let loss = g.reduce_sum(t, &[0]);
        let grads = g.backward(loss, &store).unwrap();
        assert_eq!(grads.get(pid).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let theta = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let store = store_with(&[("theta", theta)]);
        let pid = store.lookup("theta").unwrap();
        let mut g = Graph::<f64>::train();
        let t = g.param(&store, pid);
        let sq = g.mul(t, t);
        let loss = g.reduce_sum(sq, &[0]);
        let grads = g.backward(loss, &store).unwrap();
        assert_eq!(grads.get(pid).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::<f64>::train();
        let x = g.constant(Tensor::zeros(&[3]));
        assert!(g.backward(x, &store).is_err());
    }

    #[test]
    fn backward_rejects_consumed_tape() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::<f64>::train();
        let x = g.constant(Tensor::scalar(1.0));
        g.backward(x, &store).unwrap();
        assert!(g.backward(x, &store).is_err());
    }

    #[test]
    fn reshape_permute_round_trip_is_identity() {
        let mut rng = Rng::new(4);
        let t = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut rng);
        let mut g = Graph::<f64>::eval();
        let x = g.constant(t.clone());
        let r = g.reshape(x, &[4, 3, 2]);
        let back = g.reshape(r, &[2, 3, 4]);
        assert_eq!(g.value(back), &t);
        let p = g.permute(x, &[2, 0, 1]);
        let q = g.permute(p, &[1, 2, 0]);
        assert_eq!(g.value(q), &t);
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut rng = Rng::new(8);
        let t = Tensor::<f64>::randn(&[2, 5, 3], 1.0, &mut rng);
        let mut g = Graph::<f64>::eval();
        let x = g.constant(t.clone());
        let a = g.slice(x, 1, 0, 2);
        let b = g.slice(x, 1, 2, 3);
        let joined = g.concat(&[a, b], 1);
        assert_eq!(g.value(joined), &t);
    }
}
