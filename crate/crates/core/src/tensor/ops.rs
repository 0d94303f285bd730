use super::kernels::gemm;
use super::{numel, Result, Tensor, TensorError};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Right-aligned numpy-style broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `shape` viewed inside `out`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[pad + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output offset with the matching offsets of both operands.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut o = 0;
    loop {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        // odometer over the outer axes
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            base_a += sa[d];
            base_b += sb[d];
            if idx[d] < out[d] {
                break;
            }
            base_a -= sa[d] * out[d];
            base_b -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidArgument {
            op,
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

pub(crate) fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zeros = vec![0usize; rank];
    let mut out = vec![0.0; data.len()];
    if data.is_empty() {
        return out;
    }
    for_each_broadcast(&out_shape, &src_strides, &zeros, |o, i, _| out[o] = data[i]);
    out
}

fn unary(
    x: &Tensor,
    op: &'static str,
    f: impl Fn(f64) -> f64,
    // derivative given (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(op, x.shape().to_vec(), data, &[x], move |a| {
        let xin = a.parents[0].data();
        vec![Some(
            a.grad
                .iter()
                .zip(xin.iter().zip(a.out))
                .map(|(g, (&xv, &yv))| g * df(xv, yv))
                .collect(),
        )]
    })
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary(a: &Tensor, b: &Tensor, kind: BinOp) -> Result<Tensor> {
    let name = match kind {
        BinOp::Add => "add",
        BinOp::Sub => "sub",
        BinOp::Mul => "mul",
        BinOp::Div => "div",
    };
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
        op: name,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let n = numel(&out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![0.0; n];
    let same = a.shape() == b.shape();
    let apply = |x: f64, y: f64| match kind {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    };
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    if same {
        for i in 0..n {
            data[i] = apply(ad[i], bd[i]);
        }
    } else {
        for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| data[o] = apply(ad[i], bd[j]));
    }
    let shape_c = out_shape.clone();
    Ok(Tensor::from_op(name, out_shape, data, &[a, b], move |args| {
        let (x, y) = (&args.parents[0], &args.parents[1]);
        let (xd, yd) = (x.data(), y.data());
        let g = args.grad;
        let mut gx = if args.needs[0] { Some(vec![0.0; x.numel()]) } else { None };
        let mut gy = if args.needs[1] { Some(vec![0.0; y.numel()]) } else { None };
        for_each_broadcast(&shape_c, &sa, &sb, |o, i, j| {
            let (dx, dy) = match kind {
                BinOp::Add => (g[o], g[o]),
                BinOp::Sub => (g[o], -g[o]),
                BinOp::Mul => (g[o] * yd[j], g[o] * xd[i]),
                BinOp::Div => (g[o] / yd[j], -g[o] * xd[i] / (yd[j] * yd[j])),
            };
            if let Some(gx) = gx.as_mut() {
                gx[i] += dx;
            }
            if let Some(gy) = gy.as_mut() {
                gy[j] += dy;
            }
        });
        vec![gx, gy]
    }))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Div)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        unary(self, "scale", |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        unary(self, "add_scalar", |v| v + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary(self, "log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, "sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn square(&self) -> Tensor {
        unary(self, "square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, "sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn abs(&self) -> Tensor {
        unary(self, "abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `max(x, floor)` elementwise; gradient flows only where `x > floor`.
    pub fn clamp_min(&self, floor: f64) -> Tensor {
        unary(self, "clamp_min", move |v| v.max(floor), move |x, _| if x > floor { 1.0 } else { 0.0 })
    }

    pub fn relu(&self) -> Tensor {
        self.clamp_min(0.0)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self) -> Tensor {
        unary(
            self,
            "gelu",
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            |x, _| {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            },
        )
    }

    /// Sets entries where `mask` is true to `value`; no gradient flows through them.
    pub fn masked_fill(&self, mask: &[bool], value: f64) -> Result<Tensor> {
        if mask.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_fill",
                lhs: self.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = self
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let mask = mask.to_vec();
        Ok(Tensor::from_op("masked_fill", self.shape().to_vec(), data, &[self], move |a| {
            vec![Some(
                a.grad
                    .iter()
                    .zip(&mask)
                    .map(|(&g, &m)| if m { 0.0 } else { g })
                    .collect(),
            )]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), &[self], |a| {
            vec![Some(a.grad.to_vec())]
        }))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of the axes of {:?}", self.shape()),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let data = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_c = out_shape.clone();
        Ok(Tensor::from_op("permute", out_shape, data, &[self], move |a| {
            vec![Some(permute_data(a.grad, &out_c, &inverse))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::InvalidArgument { op: "transpose_last", msg: "rank < 2".into() });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let a3 = self.reshape(&[1, sa[0], sa[1]])?;
        let b3 = other.reshape(&[1, sb[0], sb[1]])?;
        a3.bmm(&b3, false, false)?.reshape(&[sa[0], sb[1]])
    }

    /// Batched matmul over a leading batch axis, optionally transposing either operand.
    pub fn bmm(&self, other: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || TensorError::ShapeMismatch { op: "bmm", lhs: sa.to_vec(), rhs: sb.to_vec() };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let batch = sa[0];
        let (m, k) = if trans_a { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(mismatch());
        }
        let mut data = vec![0.0; batch * m * n];
        let (ad, bd) = (self.data(), other.data());
        for t in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[t * m * k..(t + 1) * m * k],
                trans_a,
                &bd[t * k * n..(t + 1) * k * n],
                trans_b,
                &mut data[t * m * n..(t + 1) * m * n],
                false,
            );
        }
        Ok(Tensor::from_op("bmm", vec![batch, m, n], data, &[self, other], move |args| {
            let (a, b) = (&args.parents[0], &args.parents[1]);
            let g = args.grad;
            let (ad, bd) = (a.data(), b.data());
            let ga = args.needs[0].then(|| {
                let mut ga = vec![0.0; a.numel()];
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let bt = &bd[t * k * n..(t + 1) * k * n];
                    let out = &mut ga[t * m * k..(t + 1) * m * k];
                    if trans_a {
                        // A stored k x m: dA = op(B) * G^T
                        gemm(k, n, m, bt, trans_b, gt, true, out, false);
                    } else {
                        // dA = G * op(B)^T
                        gemm(m, n, k, gt, false, bt, !trans_b, out, false);
                    }
                }
                ga
            });
            let gb = args.needs[1].then(|| {
                let mut gb = vec![0.0; b.numel()];
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let at = &ad[t * m * k..(t + 1) * m * k];
                    let out = &mut gb[t * k * n..(t + 1) * k * n];
                    if trans_b {
                        // B stored n x k: dB = G^T * op(A)
                        gemm(n, m, k, gt, true, at, trans_a, out, false);
                    } else {
                        // dB = op(A)^T * G
                        gemm(k, m, n, at, !trans_a, gt, false, out, false);
                    }
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Tensor contraction over one axis of each operand.
    ///
    /// The result carries the remaining axes of `self` followed by the
    /// remaining axes of `other`.
    pub fn contract(&self, axis_a: usize, other: &Tensor, axis_b: usize) -> Result<Tensor> {
        check_axis("contract", self.shape(), axis_a)?;
        check_axis("contract", other.shape(), axis_b)?;
        if self.shape()[axis_a] != other.shape()[axis_b] {
            return Err(TensorError::ShapeMismatch {
                op: "contract",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let k = self.shape()[axis_a];
        let mut perm_a: Vec<usize> = (0..self.rank()).filter(|&i| i != axis_a).collect();
        let keep_a: Vec<usize> = perm_a.iter().map(|&i| self.shape()[i]).collect();
        perm_a.push(axis_a);
        let mut perm_b = vec![axis_b];
        perm_b.extend((0..other.rank()).filter(|&i| i != axis_b));
        let keep_b: Vec<usize> = perm_b[1..].iter().map(|&i| other.shape()[i]).collect();
        let (m, n) = (numel(&keep_a), numel(&keep_b));
        let a2 = self.permute(&perm_a)?.reshape(&[m, k])?;
        let b2 = other.permute(&perm_b)?.reshape(&[k, n])?;
        let mut out_shape = keep_a;
        out_shape.extend(keep_b);
        a2.matmul(&b2)?.reshape(&out_shape)
    }

    /// Softmax along `axis`. Entries at `-inf` get zero weight.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for t in 0..len {
                    mx = mx.max(x[base + t * inner]);
                }
                let mut z = 0.0;
                for t in 0..len {
                    let e = (x[base + t * inner] - mx).exp();
                    y[base + t * inner] = e;
                    z += e;
                }
                for t in 0..len {
                    y[base + t * inner] /= z;
                }
            }
        }
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), y, &[self], move |a| {
            let (y, g) = (a.out, a.grad);
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = 0.0;
                    for t in 0..len {
                        dot += g[base + t * inner] * y[base + t * inner];
                    }
                    for t in 0..len {
                        let p = base + t * inner;
                        gx[p] = y[p] * (g[p] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta` (both `[d]`).
    ///
    /// A constant row normalizes to zeros: `eps` sits inside the square root.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or(TensorError::InvalidArgument {
            op: "layer_norm",
            msg: "scalar input".into(),
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = if d == 0 { 0 } else { self.numel() / d };
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                y[r * d + c] = xh * gm[c] + bt[c];
            }
        }
        Ok(Tensor::from_op("layer_norm", self.shape().to_vec(), y, &[self, gamma, beta], move |a| {
            let g = a.grad;
            let gm = a.parents[1].data();
            let mut gx = vec![0.0; g.len()];
            let mut ggamma = vec![0.0; d];
            let mut gbeta = vec![0.0; d];
            for r in 0..rows {
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for c in 0..d {
                    let i = r * d + c;
                    let dxh = g[i] * gm[c];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xhat[i];
                    ggamma[c] += g[i] * xhat[i];
                    gbeta[c] += g[i];
                }
                mean_dxh /= d as f64;
                mean_dxh_xh /= d as f64;
                for c in 0..d {
                    let i = r * d + c;
                    gx[i] = rstd[r] * (g[i] * gm[c] - mean_dxh - xhat[i] * mean_dxh_xh);
                }
            }
            vec![Some(gx), Some(ggamma), Some(gbeta)]
        }))
    }

    /// Gathers rows of a `[vocab, dim]` table; output shape is `[indices.len(), dim]`.
    pub fn embedding(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "embedding",
                msg: format!("table must be rank 2, got {s:?}"),
            });
        }
        let (vocab, dim) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::InvalidArgument {
                op: "embedding",
                msg: format!("index {bad} out of range for table of {vocab} rows"),
            });
        }
        let td = table.data();
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&td[i * dim..(i + 1) * dim]);
        }
        let idx = indices.to_vec();
        Ok(Tensor::from_op("embedding", vec![indices.len(), dim], data, &[table], move |a| {
            let mut gt = vec![0.0; vocab * dim];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..dim {
                    gt[i * dim + c] += a.grad[r * dim + c];
                }
            }
            vec![Some(gt)]
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        check_axis("concat", first.shape(), axis)?;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for (p, &len) in parts.iter().zip(&lens) {
            let pd = p.data();
            for o in 0..outer {
                let src = &pd[o * len * inner..(o + 1) * len * inner];
                let dst = o * total * inner + offset * inner;
                data[dst..dst + len * inner].copy_from_slice(src);
            }
            offset += len;
        }
        Ok(Tensor::from_op("concat", out_shape, data, parts, move |a| {
            let mut grads = Vec::with_capacity(lens.len());
            let mut offset = 0;
            for (pi, &len) in lens.iter().enumerate() {
                if !a.needs[pi] {
                    grads.push(None);
                    offset += len;
                    continue;
                }
                let mut gp = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = o * total * inner + offset * inner;
                    gp[o * len * inner..(o + 1) * len * inner].copy_from_slice(&a.grad[src..src + len * inner]);
                }
                grads.push(Some(gp));
                offset += len;
            }
            grads
        }))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![], vec![total], &[self], move |a| vec![Some(vec![a.grad[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums over `axis`; with `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let src = &x[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor::from_op("sum_axis", shape, data, &[self], move |a| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for t in 0..len {
                    gx[(o * len + t) * inner..(o * len + t + 1) * inner]
                        .copy_from_slice(&a.grad[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("mean_axis", self.shape(), axis)?;
        let len = self.shape()[axis].max(1);
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / len as f64))
    }

    /// Mean cross-entropy of `[rows, classes]` logits against integer targets.
    ///
    /// Rows with `include[r] == false` are skipped. Errors if no row is included.
    pub fn cross_entropy(&self, targets: &[usize], include: Option<&[bool]>) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || targets.len() != s[0] || include.is_some_and(|m| m.len() != s[0]) {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (rows, classes) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                msg: format!("target {bad} out of range for {classes} classes"),
            });
        }
        let keep: Vec<bool> = match include {
            Some(m) => m.to_vec(),
            None => vec![true; rows],
        };
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(TensorError::InvalidArgument { op: "cross_entropy", msg: "no rows selected".into() });
        }
        let x = self.data();
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for r in 0..rows {
            if !keep[r] {
                continue;
            }
            let row = &x[r * classes..(r + 1) * classes];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[targets[r]];
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
        }
        let inv = 1.0 / count as f64;
        let targets = targets.to_vec();
        Ok(Tensor::from_op("cross_entropy", vec![], vec![total * inv], &[self], move |a| {
            let g0 = a.grad[0] * inv;
            let mut gx = vec![0.0; rows * classes];
            for r in 0..rows {
                if !keep[r] {
                    continue;
                }
                for c in 0..classes {
                    gx[r * classes + c] = g0 * probs[r * classes + c];
                }
                gx[r * classes + targets[r]] -= g0;
            }
            vec![Some(gx)]
        }))
    }

    /// Mean binary cross-entropy of logits against `{0, 1}` targets over included entries.
    pub fn bce_with_logits(&self, targets: &[f64], include: Option<&[bool]>) -> Result<Tensor> {
        let n = self.numel();
        if targets.len() != n || include.is_some_and(|m| m.len() != n) {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let keep: Vec<bool> = include.map(|m| m.to_vec()).unwrap_or_else(|| vec![true; n]);
        let count = keep.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(TensorError::InvalidArgument { op: "bce_with_logits", msg: "no entries selected".into() });
        }
        let x = self.data();
        let mut total = 0.0;
        for i in 0..n {
            if keep[i] {
                // softplus(x) - y x, stable form
                total += x[i].max(0.0) + (-x[i].abs()).exp().ln_1p() - targets[i] * x[i];
            }
        }
        let inv = 1.0 / count as f64;
        let targets = targets.to_vec();
        Ok(Tensor::from_op("bce_with_logits", vec![], vec![total * inv], &[self], move |a| {
            let x = a.parents[0].data();
            let g0 = a.grad[0] * inv;
            let gx = (0..n)
                .map(|i| if keep[i] { g0 * (sigmoid(x[i]) - targets[i]) } else { 0.0 })
                .collect();
            vec![Some(gx)]
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = t(&[0.0, 0.0, 0.0], &[3]).softmax(0).unwrap();
        close(y.data(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn softmax_along_middle_axis_sums_to_one() {
        let x = t(&(0..24).map(|v| (v as f64 * 0.7).sin() * 3.0).collect::<Vec<_>>(), &[2, 3, 4]);
        let y = x.softmax(1).unwrap();
        for o in 0..2 {
            for i in 0..4 {
                let s: f64 = (0..3).map(|k| y.data()[o * 12 + k * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let x = t(&[2.5; 4], &[1, 4]);
        let y = x.layer_norm(&Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        close(y.data(), &[0.0; 4], 0.0);
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[0.3, -1.2, 2.0, 0.5, 0.1, -0.7, 1.1, 4.0, -2.2], &[3, 3]);
        let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        assert_eq!(eye.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn shape_mismatch_names_operands() {
        let err = t(&[1.0; 6], &[2, 3]).matmul(&t(&[1.0; 6], &[2, 3])).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] }
        );
        let err = t(&[1.0; 6], &[2, 3]).add(&t(&[1.0; 2], &[2])).unwrap_err();
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2]"));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let g = x.square().sum().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let g = x.add(&x).unwrap().sum().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.square().backward(), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn masked_entries_get_zero_gradient() {
        let x = Tensor::param(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let y = x.masked_fill(&[false, true, false], f64::NEG_INFINITY).unwrap().softmax(0).unwrap();
        assert_eq!(y.data()[1], 0.0);
        let w = t(&[1.0, 5.0, -3.0], &[3]);
        let g = y.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(g.get(&x).unwrap()[1], 0.0);
        assert!(g.get(&x).unwrap()[0] != 0.0);
    }

    #[test]
    fn gelu_at_zero() {
        assert_eq!(t(&[0.0], &[1]).gelu().item(), 0.0);
    }

    #[test]
    fn broadcast_add_matches_manual() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = t(&[10.0, 20.0], &[2, 1]);
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[11.0, 12.0, 13.0, 24.0, 25.0, 26.0]);
        let d = a.mul(&t(&[1.0, 0.0, -1.0], &[3])).unwrap();
        assert_eq!(d.data(), &[1.0, 0.0, -3.0, 4.0, 0.0, -6.0]);
    }

    #[test]
    fn contract_matches_loops() {
        let a = t(&(0..24).map(|v| v as f64 * 0.1).collect::<Vec<_>>(), &[2, 3, 4]);
        let b = t(&(0..15).map(|v| 1.0 - v as f64 * 0.2).collect::<Vec<_>>(), &[5, 3]);
        let c = a.contract(1, &b, 1).unwrap();
        assert_eq!(c.shape(), &[2, 4, 5]);
        for i in 0..2 {
            for l in 0..4 {
                for m in 0..5 {
                    let want: f64 = (0..3).map(|k| a.data()[i * 12 + k * 4 + l] * b.data()[m * 3 + k]).sum();
                    assert!((c.data()[i * 20 + l * 5 + m] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn composite_of_all_primitives_matches_finite_differences() {
        let x0: Vec<f64> = (0..12).map(|v| (v * 7 % 11) as f64 * 0.31 - 1.4).collect();
        let table: Vec<f64> = (0..15).map(|v| (v as f64 * 0.9).cos()).collect();
        let f = |x: &Tensor| -> crate::tensor::Result<Tensor> {
            let tbl = Tensor::new(table.clone(), &[5, 3])?;
            let emb = Tensor::embedding(&tbl, &[1, 4, 0, 2])?; // [4, 3]
            let m = x.reshape(&[4, 3])?;
            let gamma = Tensor::new(vec![1.1, 0.9, 1.3], &[3])?;
            let beta = Tensor::new(vec![0.1, -0.2, 0.0], &[3])?;
            let ln = m.layer_norm(&gamma, &beta, 1e-5)?;
            let h = ln.add(&emb)?.mul(&m)?.gelu();
            let w = m.transpose_last()?.matmul(&h)?; // [3, 3]
            let bm = Tensor::concat(&[&w, &w.sigmoid()], 0)?.reshape(&[2, 3, 3])?;
            let prod = bm.bmm(&bm, false, true)?;
            let s = prod.softmax(2)?.exp().add_scalar(1.0).log();
            let c = s.contract(1, &m.reshape(&[3, 4])?, 0)?; // [2, 3, 4]
            let masked = c.masked_fill(&(0..24).map(|i| i % 7 == 3).collect::<Vec<_>>(), 0.0)?;
            let ce = masked.reshape(&[6, 4])?.cross_entropy(&[0, 1, 2, 3, 0, 1], None)?;
            let extra = masked.mean_axis(2, false)?.sum_axis(0, true)?.div(&m.square().add_scalar(1.0).sum())?;
            ce.add(&extra.sum().scale(0.3))
        };
        let err = grad_check(&f, &x0, &[12], 1e-6).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}
