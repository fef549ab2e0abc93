//! Raw array kernels behind the gradient tape: matmul, temporal convolution,
//! pooling, batch normalization, softmax, reductions, and the channel-wise
//! topology mixing contraction.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;
use crate::tensor::{strides_of, Tensor};

// ── matrix multiply ──────────────────────────────────────────────────────

/// out[m,n] += A'[m,k] * B'[k,n] where A' = A or Aᵀ, B' = B or Bᵀ.
/// `a` is stored [m,k] (or [k,m] when `ta`), `b` stored [k,n] (or [n,k] when `tb`).
pub(crate) fn mm_accum<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let o_row = &mut out[i * n..(i + 1) * n];
                // two-wide unroll over the contraction keeps the axpy loops
                // independent enough to vectorize well
                let mut p = 0;
                while p + 1 < k {
                    let (a0, a1) = (a_row[p], a_row[p + 1]);
                    let b0 = &b[p * n..(p + 1) * n];
                    let b1 = &b[(p + 1) * n..(p + 2) * n];
                    for ((o, &x0), &x1) in o_row.iter_mut().zip(b0).zip(b1) {
                        *o += a0 * x0 + a1 * x1;
                    }
                    p += 2;
                }
                if p < k {
                    let ap = a_row[p];
                    let b_row = &b[p * n..(p + 1) * n];
                    for (o, &bv) in o_row.iter_mut().zip(b_row) {
                        *o += ap * bv;
                    }
                }
            }
        }
        (true, false) => {
            // a stored [k, m]; iterate output rows so each is sliced once,
            // reading a column-strided (a fits a cache level at our sizes)
            for i in 0..m {
                let o_row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let ap = a[p * m + i];
                    let b_row = &b[p * n..(p + 1) * n];
                    for (o, &bv) in o_row.iter_mut().zip(b_row) {
                        *o += ap * bv;
                    }
                }
            }
        }
        (false, true) => {
            // b stored [n, k]; dot products over contiguous rows
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                let o_row = &mut out[i * n..(i + 1) * n];
                for (j, o) in o_row.iter_mut().enumerate() {
                    let b_row = &b[j * k..(j + 1) * k];
                    let mut acc = T::zero();
                    for (&av, &bv) in a_row.iter().zip(b_row) {
                        acc += av * bv;
                    }
                    *o += acc;
                }
            }
        }
        (true, true) => unreachable!("double-transposed matmul is never emitted"),
    }
}

/// Splits `dims` into (batch extents, m, k) for a matmul operand.
pub(crate) fn mm_operand(dims: &[usize]) -> (&[usize], usize, usize) {
    assert!(dims.len() >= 2, "matmul operand must have rank >= 2, got {dims:?}");
    let n = dims.len();
    (&dims[..n - 2], dims[n - 2], dims[n - 1])
}

// ── temporal 1-D convolution (layout [B, T, S…, C]) ──────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zeros,
    Circular,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl ConvSpec {
    pub fn t_out(&self, t_in: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (t_in + 2 * self.pad).saturating_sub(span) / self.stride + 1
    }

    /// Input frame feeding output frame `t` at tap `kk`, or None when the
    /// zero-padded region is hit.
    #[inline]
    pub fn tap(&self, t: usize, kk: usize, t_in: usize) -> Option<usize> {
        let pos = (t * self.stride + kk * self.dilation) as isize - self.pad as isize;
        match self.mode {
            PadMode::Zeros => {
                if pos < 0 || pos >= t_in as isize {
                    None
                } else {
                    Some(pos as usize)
                }
            }
            PadMode::Circular => Some(pos.rem_euclid(t_in as isize) as usize),
        }
    }
}

/// x: [B, T, S, Cin] (S = flattened middle axes), w: [K, Cin, Cout].
pub(crate) fn conv_t_forward<T: Scalar>(
    x: &[T],
    (b_n, t_in, s_n, c_in): (usize, usize, usize, usize),
    w: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    spec: &ConvSpec,
) -> (Vec<T>, usize) {
    let t_out = spec.t_out(t_in);
    let mut out = vec![T::zero(); b_n * t_out * s_n * c_out];
    let in_frame = s_n * c_in;
    let out_frame = s_n * c_out;
    for b in 0..b_n {
        for t in 0..t_out {
            let o = &mut out[(b * t_out + t) * out_frame..(b * t_out + t + 1) * out_frame];
            for kk in 0..spec.kernel {
                if let Some(ti) = spec.tap(t, kk, t_in) {
                    let xf = &x[(b * t_in + ti) * in_frame..(b * t_in + ti + 1) * in_frame];
                    let wk = &w[kk * c_in * c_out..(kk + 1) * c_in * c_out];
                    mm_accum(xf, wk, o, s_n, c_in, c_out, false, false);
                }
            }
            if let Some(bias) = bias {
                for s in 0..s_n {
                    for (o, &bv) in o[s * c_out..(s + 1) * c_out].iter_mut().zip(bias) {
                        *o += bv;
                    }
                }
            }
        }
    }
    (out, t_out)
}

pub(crate) fn conv_t_backward<T: Scalar>(
    x: &[T],
    (b_n, t_in, s_n, c_in): (usize, usize, usize, usize),
    w: &[T],
    has_bias: bool,
    c_out: usize,
    spec: &ConvSpec,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let t_out = spec.t_out(t_in);
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); w.len()];
    let mut db = if has_bias {
        Some(vec![T::zero(); c_out])
    } else {
        None
    };
    let in_frame = s_n * c_in;
    let out_frame = s_n * c_out;
    for b in 0..b_n {
        for t in 0..t_out {
            let dyf = &dy[(b * t_out + t) * out_frame..(b * t_out + t + 1) * out_frame];
            for kk in 0..spec.kernel {
                if let Some(ti) = spec.tap(t, kk, t_in) {
                    let xf = &x[(b * t_in + ti) * in_frame..(b * t_in + ti + 1) * in_frame];
                    let wk = &w[kk * c_in * c_out..(kk + 1) * c_in * c_out];
                    // dx += dy · wᵀ
                    let dxf = &mut dx[(b * t_in + ti) * in_frame..(b * t_in + ti + 1) * in_frame];
                    mm_accum(dyf, wk, dxf, s_n, c_out, c_in, false, true);
                    // dw += xᵀ · dy
                    let dwk = &mut dw[kk * c_in * c_out..(kk + 1) * c_in * c_out];
                    mm_accum(xf, dyf, dwk, c_in, s_n, c_out, true, false);
                }
            }
            if let Some(db) = db.as_mut() {
                for s in 0..s_n {
                    for (d, &g) in db.iter_mut().zip(&dyf[s * c_out..(s + 1) * c_out]) {
                        *d += g;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ── temporal max pooling ─────────────────────────────────────────────────

/// Out-of-range taps are skipped (−∞ padding) in `Zeros` mode.
pub(crate) fn maxpool_t_forward<T: Scalar>(
    x: &[T],
    (b_n, t_in, s_n, c_n): (usize, usize, usize, usize),
    spec: &ConvSpec,
) -> (Vec<T>, Vec<u32>, usize) {
    let t_out = spec.t_out(t_in);
    let frame = s_n * c_n;
    let mut out = vec![T::neg_infinity(); b_n * t_out * frame];
    let mut arg = vec![0u32; b_n * t_out * frame];
    for b in 0..b_n {
        for t in 0..t_out {
            let base_out = (b * t_out + t) * frame;
            for kk in 0..spec.kernel {
                if let Some(ti) = spec.tap(t, kk, t_in) {
                    let base_in = (b * t_in + ti) * frame;
                    for e in 0..frame {
                        let v = x[base_in + e];
                        if v > out[base_out + e] {
                            out[base_out + e] = v;
                            arg[base_out + e] = (base_in + e) as u32;
                        }
                    }
                }
            }
        }
    }
    (out, arg, t_out)
}

pub(crate) fn maxpool_t_backward<T: Scalar>(dy: &[T], arg: &[u32], x_numel: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); x_numel];
    for (g, &a) in dy.iter().zip(arg) {
        dx[a as usize] += *g;
    }
    dx
}

// ── batch normalization ──────────────────────────────────────────────────

pub(crate) struct BnAxes {
    pub outer: usize,
    pub c: usize,
    pub inner: usize,
}

pub(crate) fn bn_axes(dims: &[usize], axis: usize) -> BnAxes {
    BnAxes {
        outer: dims[..axis].iter().product(),
        c: dims[axis],
        inner: dims[axis + 1..].iter().product(),
    }
}

/// Per-channel biased batch statistics.
pub(crate) fn bn_stats<T: Scalar>(x: &[T], ax: &BnAxes) -> (Vec<T>, Vec<T>) {
    let n = T::from_f64((ax.outer * ax.inner) as f64);
    let mut mean = vec![T::zero(); ax.c];
    let mut var = vec![T::zero(); ax.c];
    for o in 0..ax.outer {
        for c in 0..ax.c {
            let base = (o * ax.c + c) * ax.inner;
            let mut s = T::zero();
            for &v in &x[base..base + ax.inner] {
                s += v;
            }
            mean[c] += s;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for o in 0..ax.outer {
        for c in 0..ax.c {
            let base = (o * ax.c + c) * ax.inner;
            let mu = mean[c];
            let mut s = T::zero();
            for &v in &x[base..base + ax.inner] {
                let d = v - mu;
                s += d * d;
            }
            var[c] += s;
        }
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    (mean, var)
}

pub(crate) fn bn_normalize<T: Scalar>(
    x: &[T],
    ax: &BnAxes,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..ax.outer {
        for c in 0..ax.c {
            let base = (o * ax.c + c) * ax.inner;
            let ivar = (var[c] + eps).sqrt().recip();
            let (mu, g, b) = (mean[c], gamma[c], beta[c]);
            for e in 0..ax.inner {
                y[base + e] = (x[base + e] - mu) * ivar * g + b;
            }
        }
    }
    y
}

/// Backward through train-mode BN (batch statistics participate).
pub(crate) fn bn_backward_train<T: Scalar>(
    x: &[T],
    ax: &BnAxes,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    eps: T,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::from_f64((ax.outer * ax.inner) as f64);
    let mut dgamma = vec![T::zero(); ax.c];
    let mut dbeta = vec![T::zero(); ax.c];
    let mut sum_dxhat = vec![T::zero(); ax.c];
    let mut sum_dxhat_xhat = vec![T::zero(); ax.c];
    for o in 0..ax.outer {
        for c in 0..ax.c {
            let base = (o * ax.c + c) * ax.inner;
            let ivar = (var[c] + eps).sqrt().recip();
            let mu = mean[c];
            let g = gamma[c];
            for e in 0..ax.inner {
                let xhat = (x[base + e] - mu) * ivar;
                let gy = dy[base + e];
                dgamma[c] += gy * xhat;
                dbeta[c] += gy;
                sum_dxhat[c] += gy * g;
                sum_dxhat_xhat[c] += gy * g * xhat;
            }
        }
    }
    let mut dx = vec![T::zero(); x.len()];
    for o in 0..ax.outer {
        for c in 0..ax.c {
            let base = (o * ax.c + c) * ax.inner;
            let ivar = (var[c] + eps).sqrt().recip();
            let mu = mean[c];
            let g = gamma[c];
            for e in 0..ax.inner {
                let xhat = (x[base + e] - mu) * ivar;
                let dxhat = dy[base + e] * g;
                dx[base + e] =
                    (dxhat - sum_dxhat[c] / n - xhat * sum_dxhat_xhat[c] / n) * ivar;
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward through eval-mode BN (running statistics are constants).
pub(crate) fn bn_backward_eval<T: Scalar>(
    x: &[T],
    ax: &BnAxes,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    eps: T,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); ax.c];
    let mut dbeta = vec![T::zero(); ax.c];
    for o in 0..ax.outer {
        for c in 0..ax.c {
            let base = (o * ax.c + c) * ax.inner;
            let ivar = (var[c] + eps).sqrt().recip();
            let mu = mean[c];
            let g = gamma[c];
            for e in 0..ax.inner {
                let xhat = (x[base + e] - mu) * ivar;
                let gy = dy[base + e];
                dgamma[c] += gy * xhat;
                dbeta[c] += gy;
                dx[base + e] = gy * g * ivar;
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ── softmax ──────────────────────────────────────────────────────────────

pub(crate) fn softmax_forward<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let dims = x.dims();
    let lane = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut y = Tensor::zeros(dims);
    let xd = x.data();
    let yd = y.data_mut();
    if inner == 1 {
        // trailing-axis fast path: contiguous lanes
        for o in 0..outer {
            let src = &xd[o * lane..(o + 1) * lane];
            let dst = &mut yd[o * lane..(o + 1) * lane];
            let mx = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for (d, &s) in dst.iter_mut().zip(src) {
                let e = (s - mx).exp();
                *d = e;
                sum += e;
            }
            let inv = sum.recip();
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        return y;
    }
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            let mut mx = T::neg_infinity();
            for a in 0..lane {
                mx = mx.max(xd[base + a * inner]);
            }
            let mut sum = T::zero();
            for a in 0..lane {
                let e = (xd[base + a * inner] - mx).exp();
                yd[base + a * inner] = e;
                sum += e;
            }
            let inv = sum.recip();
            for a in 0..lane {
                yd[base + a * inner] *= inv;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>, axis: usize) -> Tensor<T> {
    let dims = y.dims();
    let lane = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut dx = Tensor::zeros(dims);
    let (yd, gd) = (y.data(), dy.data());
    let xd = dx.data_mut();
    if inner == 1 {
        for o in 0..outer {
            let ys = &yd[o * lane..(o + 1) * lane];
            let gs = &gd[o * lane..(o + 1) * lane];
            let out = &mut xd[o * lane..(o + 1) * lane];
            let mut dot = T::zero();
            for (&yv, &gv) in ys.iter().zip(gs) {
                dot += yv * gv;
            }
            for ((x, &yv), &gv) in out.iter_mut().zip(ys).zip(gs) {
                *x = yv * (gv - dot);
            }
        }
        return dx;
    }
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            let mut dot = T::zero();
            for a in 0..lane {
                dot += yd[base + a * inner] * gd[base + a * inner];
            }
            for a in 0..lane {
                let p = base + a * inner;
                xd[p] = yd[p] * (gd[p] - dot);
            }
        }
    }
    dx
}

// ── reductions over axis sets ────────────────────────────────────────────

/// For each input dim: output stride (0 when the dim is reduced away).
pub(crate) fn reduce_plan(dims: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let keep: Vec<usize> = (0..dims.len()).filter(|d| !axes.contains(d)).collect();
    let out_dims: Vec<usize> = keep.iter().map(|&d| dims[d]).collect();
    let out_strides = strides_of(&out_dims);
    let mut map = vec![0usize; dims.len()];
    for (pos, &d) in keep.iter().enumerate() {
        map[d] = out_strides[pos];
    }
    (out_dims, map)
}

/// Applies `f(out_flat, in_flat)` over every input element.
pub(crate) fn for_each_reduce(dims: &[usize], map: &[usize], mut f: impl FnMut(usize, usize)) {
    let numel: usize = dims.iter().product();
    if numel == 0 {
        return;
    }
    let n = dims.len();
    let mut idx = vec![0usize; n];
    let mut out_flat = 0usize;
    for in_flat in 0..numel {
        f(out_flat, in_flat);
        // odometer increment
        for d in (0..n).rev() {
            idx[d] += 1;
            out_flat += map[d];
            if idx[d] < dims[d] {
                break;
            }
            out_flat -= idx[d] * map[d];
            idx[d] = 0;
        }
    }
}

// ── broadcasting ─────────────────────────────────────────────────────────

/// Right-aligned numpy-style broadcast map: for each target dim, the source
/// stride (0 where the source extent is 1 or missing).
pub(crate) fn broadcast_map(src: &[usize], dst: &[usize]) -> Option<Vec<usize>> {
    if src.len() > dst.len() {
        return None;
    }
    let offset = dst.len() - src.len();
    let src_strides = strides_of(src);
    let mut map = vec![0usize; dst.len()];
    for d in 0..dst.len() {
        if d < offset {
            map[d] = 0;
        } else {
            let s = src[d - offset];
            if s == dst[d] {
                map[d] = src_strides[d - offset];
            } else if s == 1 {
                map[d] = 0;
            } else {
                return None;
            }
        }
    }
    Some(map)
}

// ── channel-wise topology mixing ─────────────────────────────────────────

/// out[b,t,m,u,c] = Σ_v topo[b,m,u,v,c] · val[b,t,m,v,c]
pub(crate) fn channel_mix_forward<T: Scalar>(
    topo: &[T],
    val: &[T],
    (b_n, t_n, m_n, j_n, c_n): (usize, usize, usize, usize, usize),
) -> Vec<T> {
    let mut out = vec![T::zero(); b_n * t_n * m_n * j_n * c_n];
    for b in 0..b_n {
        for m in 0..m_n {
            for u in 0..j_n {
                for v in 0..j_n {
                    let tr = (((b * m_n + m) * j_n + u) * j_n + v) * c_n;
                    let topo_row = &topo[tr..tr + c_n];
                    for t in 0..t_n {
                        let vr = (((b * t_n + t) * m_n + m) * j_n + v) * c_n;
                        let or = (((b * t_n + t) * m_n + m) * j_n + u) * c_n;
                        let val_row = &val[vr..vr + c_n];
                        let out_row = &mut out[or..or + c_n];
                        for c in 0..c_n {
                            out_row[c] += topo_row[c] * val_row[c];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn channel_mix_backward<T: Scalar>(
    topo: &[T],
    val: &[T],
    (b_n, t_n, m_n, j_n, c_n): (usize, usize, usize, usize, usize),
    dy: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut dtopo = vec![T::zero(); topo.len()];
    let mut dval = vec![T::zero(); val.len()];
    for b in 0..b_n {
        for m in 0..m_n {
            for u in 0..j_n {
                for v in 0..j_n {
                    let tr = (((b * m_n + m) * j_n + u) * j_n + v) * c_n;
                    let topo_row = &topo[tr..tr + c_n];
                    let dtopo_row = &mut dtopo[tr..tr + c_n];
                    for t in 0..t_n {
                        let vr = (((b * t_n + t) * m_n + m) * j_n + v) * c_n;
                        let or = (((b * t_n + t) * m_n + m) * j_n + u) * c_n;
                        let val_row = &val[vr..vr + c_n];
                        let dy_row = &dy[or..or + c_n];
                        for c in 0..c_n {
                            dtopo_row[c] += dy_row[c] * val_row[c];
                        }
                        let dval_row = &mut dval[vr..vr + c_n];
                        for c in 0..c_n {
                            dval_row[c] += topo_row[c] * dy_row[c];
                        }
                    }
                }
            }
        }
    }
    (dtopo, dval)
}

// ── cross-entropy on logits ──────────────────────────────────────────────

/// Mean cross-entropy over the batch; returns (loss, softmax probabilities).
pub(crate) fn cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> (T, Tensor<T>) {
    let dims = logits.dims();
    assert_eq!(dims.len(), 2, "cross-entropy expects [batch, classes]");
    let (b_n, k_n) = (dims[0], dims[1]);
    assert_eq!(targets.len(), b_n);
    let mut probs = Tensor::zeros(dims);
    let ld = logits.data();
    let pd = probs.data_mut();
    let mut loss = T::zero();
    for b in 0..b_n {
        let row = &ld[b * k_n..(b + 1) * k_n];
        let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for (k, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            pd[b * k_n + k] = e;
            sum += e;
        }
        let inv = sum.recip();
        for k in 0..k_n {
            pd[b * k_n + k] *= inv;
        }
        debug_assert!(targets[b] < k_n);
        loss += sum.ln() + mx - row[targets[b]];
    }
    (loss / T::from_f64(b_n as f64), probs)
}

pub(crate) fn cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[usize],
    upstream: T,
) -> Tensor<T> {
    let (b_n, k_n) = (probs.dims()[0], probs.dims()[1]);
    let scale = upstream / T::from_f64(b_n as f64);
    let mut dx = probs.clone();
    for b in 0..b_n {
        let row = &mut dx.data_mut()[b * k_n..(b + 1) * k_n];
        row[targets[b]] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    dx
}

// ── slicing along an axis ────────────────────────────────────────────────

pub(crate) fn slice_axis<T: Scalar>(
    x: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Tensor<T> {
    let dims = x.dims();
    debug_assert!(start + len <= dims[axis]);
    let mut out_dims = dims.to_vec();
    out_dims[axis] = len;
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = Tensor::zeros(&out_dims);
    let xd = x.data();
    let od = out.data_mut();
    let in_block = dims[axis] * inner;
    let out_block = len * inner;
    for o in 0..outer {
        let src = o * in_block + start * inner;
        od[o * out_block..(o + 1) * out_block].copy_from_slice(&xd[src..src + out_block]);
    }
    out
}

/// Scatter-add of a slice gradient back into the full-tensor gradient.
pub(crate) fn slice_axis_add<T: Scalar>(
    dst: &mut Tensor<T>,
    src: &Tensor<T>,
    axis: usize,
    start: usize,
) {
    let dims = dst.dims().to_vec();
    let len = src.dims()[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let in_block = dims[axis] * inner;
    let out_block = len * inner;
    let sd = src.data();
    let dd = dst.data_mut();
    for o in 0..outer {
        let base = o * in_block + start * inner;
        for e in 0..out_block {
            dd[base + e] += sd[o * out_block + e];
        }
    }
}
