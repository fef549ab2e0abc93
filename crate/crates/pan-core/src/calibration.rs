//! Attention-based post calibration: refines sampled tokens by multi-head
//! cross-attention against the full token grid, with a residual projection.
//! Queries come from the sampled tokens; keys and values from the grid.

use crate::error::CoreError;
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::rng::Rng;
use crate::sampling::{SampledTokens, TokenGrid};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Exactly four C×C_R projections and nothing else; the module's parameter
/// count is 4·C·C_R by construction.
#[derive(Debug, Clone)]
pub struct CalibrationParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_res: ParamId,
    pub heads: usize,
    pub c_in: usize,
    pub c_r: usize,
}

impl CalibrationParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_r: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self, CoreError> {
        if heads == 0 || c_r % heads != 0 {
            return Err(CoreError::invalid(format_args!(
                "heads {heads} must divide output channels {c_r}"
            )));
        }
        let limit = num_traits::Float::sqrt(6.0 / (c_in + c_r) as f64);
        let mut proj = |suffix: &str, rng: &mut Rng| {
            store.add(
                &alloc::format!("{name}.{suffix}"),
                Tensor::rand_uniform(&[c_in, c_r], limit, rng),
                ParamKind::Weight { decay: true },
            )
        };
        Ok(CalibrationParams {
            w_q: proj("wq", rng),
            w_k: proj("wk", rng),
            w_v: proj("wv", rng),
            w_res: proj("wres", rng),
            heads,
            c_in,
            c_r,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.c_r / self.heads
    }
}

pub struct CalibrationOut {
    /// Refined embeddings, [B, T, M, J, C_R].
    pub features: NodeId,
    /// Post-softmax maps, [B, T, H, M·J, Gh·Gw]; rows sum to 1.
    pub attention: NodeId,
}

/// Per-frame cross-attention: frame t's queries only see frame t's grid
/// tokens. `sampled` is [B, T, M, J, C]; `grid` is [B, T, N, C].
pub fn calibrate<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    params: &CalibrationParams,
    sampled: NodeId,
    grid: NodeId,
) -> Result<CalibrationOut, CoreError> {
    let sd = g.dims(sampled).to_vec();
    let gd = g.dims(grid).to_vec();
    if sd.len() != 5 || gd.len() != 4 {
        return Err(CoreError::ShapeMismatch {
            op: "calibrate",
            left: sd,
            right: gd,
        });
    }
    let (b, t, m, j, c) = (sd[0], sd[1], sd[2], sd[3], sd[4]);
    let n = gd[2];
    if gd[0] != b || gd[1] != t || gd[3] != c || c != params.c_in {
        return Err(CoreError::ShapeMismatch {
            op: "calibrate",
            left: sd,
            right: gd,
        });
    }
    let (h, dh, cr) = (params.heads, params.head_dim(), params.c_r);
    let mj = m * j;

    let wq = g.param(store, params.w_q);
    let wk = g.param(store, params.w_k);
    let wv = g.param(store, params.w_v);
    let wres = g.param(store, params.w_res);

    let q_in = g.reshape(sampled, &[b, t, mj, c]);
    let q = g.matmul(q_in, wq);
    let k = g.matmul(grid, wk);
    let v = g.matmul(grid, wv);

    let qh = g.reshape(q, &[b, t, mj, h, dh]);
    let qh = g.permute(qh, &[0, 1, 3, 2, 4]); // [B,T,H,MJ,dh]
    let kh = g.reshape(k, &[b, t, n, h, dh]);
    let kh = g.permute(kh, &[0, 1, 3, 4, 2]); // [B,T,H,dh,N]
    let vh = g.reshape(v, &[b, t, n, h, dh]);
    let vh = g.permute(vh, &[0, 1, 3, 2, 4]); // [B,T,H,N,dh]

    let scores = g.matmul(qh, kh);
    let scaled = g.scale(scores, 1.0 / num_traits::Float::sqrt(dh as f64));
    let attention = g.softmax(scaled, 4);

    let ctx = g.matmul(attention, vh); // [B,T,H,MJ,dh]
    let ctx = g.permute(ctx, &[0, 1, 3, 2, 4]); // [B,T,MJ,H,dh]
    let ctx = g.reshape(ctx, &[b, t, mj, cr]); // heads concatenated

    let res = g.matmul(q_in, wres);
    let summed = g.add(ctx, res);
    let features = g.reshape(summed, &[b, t, m, j, cr]);
    Ok(CalibrationOut {
        features,
        attention,
    })
}

/// Convenience single-sample forward returning the post-softmax maps,
/// [T, H, M·J, Gh·Gw].
pub fn attention_maps<T: Scalar>(
    grid: &TokenGrid<T>,
    sampled: &SampledTokens<T>,
    store: &ParamStore<T>,
    params: &CalibrationParams,
) -> Result<Tensor<T>, CoreError> {
    let (t, m, j, c) = (
        sampled.frames(),
        sampled.persons(),
        sampled.joints(),
        sampled.channels(),
    );
    let n = grid.n_tokens();
    let mut g = Graph::eval();
    let grid_node = {
        let flat = grid.tokens_flat().reshaped(&[1, grid.frames(), n, c])?;
        g.constant(flat)
    };
    let sampled_node = {
        let s = sampled.data.reshaped(&[1, t, m, j, c])?;
        g.constant(s)
    };
    let out = calibrate(&mut g, store, params, sampled_node, grid_node)?;
    g.value(out.attention)
        .reshaped(&[t, params.heads, m * j, n])
}
