use super::graph::Op;
use super::{Float, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Additive value used for disallowed attention positions.
pub const MASKED: f64 = -1e9;
/// Any additive mask entry at or below this is treated as fully masked: the
/// position gets exactly zero weight.
pub const MASK_THRESHOLD: f64 = -1e8;

const LN_EPS: f64 = 1e-6;

/// Additive attention mask, either shared by every batch item (`[n, n]`) or
/// one per item (`[batch, n, n]`). Row = query, column = key.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMask {
    batch: Option<usize>,
    n: usize,
    values: Vec<f64>,
}

impl AttnMask {
    pub fn from_additive<T: Float>(mask: &Tensor<T>) -> Result<Self> {
        let s = mask.shape();
        let (batch, n) = match s {
            [a, b] if a == b => (None, *a),
            [bt, a, b] if a == b => (Some(*bt), *a),
            _ => return Err(Error::dim("attention mask", s, &[])),
        };
        Ok(Self {
            batch,
            n,
            values: mask.to_f64_vec(),
        })
    }

    /// Lower-triangular mask: query i sees keys j <= i.
    pub fn causal(n: usize) -> Self {
        let values = (0..n * n)
            .map(|idx| if idx % n <= idx / n { 0.0 } else { MASKED })
            .collect();
        Self {
            batch: None,
            n,
            values,
        }
    }

    /// Causal mask combined with per-item key validity (`keys[b * n + j]`).
    pub fn causal_with_keys(n: usize, keys: &[bool]) -> Self {
        assert_eq!(keys.len() % n, 0);
        let batch = keys.len() / n;
        let mut values = Vec::with_capacity(batch * n * n);
        for b in 0..batch {
            for i in 0..n {
                for j in 0..n {
                    let ok = j <= i && keys[b * n + j];
                    values.push(if ok { 0.0 } else { MASKED });
                }
            }
        }
        Self {
            batch: Some(batch),
            n,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, b: usize, i: usize) -> &[f64] {
        let base = match self.batch {
            None => 0,
            Some(_) => b * self.n * self.n,
        };
        &self.values[base + i * self.n..base + (i + 1) * self.n]
    }
}

/// Additive causal mask as a tensor.
pub fn causal_mask<T: Float>(n: usize) -> Tensor<T> {
    Tensor::from_f64(&[n, n], &AttnMask::causal(n).values).expect("square")
}

pub(crate) mod kernels {
    use super::super::Float;
    use crate::error::{Error, Result};

    /// `a[m,k] @ b[k,n]`
    pub fn matmul<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        out
    }

    /// `g[m,n] @ b[k,n]^T` -> `[m,k]`
    pub fn matmul_nt<T: Float>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
        let mut out = vec![T::zero(); m * k];
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let mut acc = T::zero();
                for (&x, &y) in grow.iter().zip(brow) {
                    acc += x * y;
                }
                out[i * k + p] = acc;
            }
        }
        out
    }

    /// `a[m,k]^T @ g[m,n]` -> `[k,n]`
    pub fn matmul_tn<T: Float>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); k * n];
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o += aip * gv;
                }
            }
        }
        out
    }

    pub fn transpose_last2<T: Float>(x: &[T], r: usize, c: usize) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        for (src, dst) in x.chunks(r * c).zip(out.chunks_mut(r * c)) {
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        out
    }

    /// Geometry of a valid cross-correlation, batch dimension optional.
    pub struct ConvGeom {
        pub batch: usize,
        pub cin: usize,
        pub h: usize,
        pub w: usize,
        pub cout: usize,
        pub kh: usize,
        pub kw: usize,
        pub sh: usize,
        pub sw: usize,
        pub oh: usize,
        pub ow: usize,
        pub batched: bool,
    }

    impl ConvGeom {
        pub fn new(x: &[usize], k: &[usize], stride: (usize, usize)) -> Result<Self> {
            let (batched, batch, cin, h, w) = match *x {
                [c, h, w] => (false, 1, c, h, w),
                [b, c, h, w] => (true, b, c, h, w),
                _ => return Err(Error::dim("conv2d", x, k)),
            };
            let [cout, kcin, kh, kw] = *k else {
                return Err(Error::dim("conv2d", x, k));
            };
            if kcin != cin || kh > h || kw > w {
                return Err(Error::dim("conv2d", x, k));
            }
            if stride.0 == 0 || stride.1 == 0 {
                return Err(Error::Parameter("conv2d stride must be >= 1".into()));
            }
            Ok(Self {
                batch,
                cin,
                h,
                w,
                cout,
                kh,
                kw,
                sh: stride.0,
                sw: stride.1,
                oh: (h - kh) / stride.0 + 1,
                ow: (w - kw) / stride.1 + 1,
                batched,
            })
        }

        pub fn out_shape(&self) -> Vec<usize> {
            if self.batched {
                vec![self.batch, self.cout, self.oh, self.ow]
            } else {
                vec![self.cout, self.oh, self.ow]
            }
        }

        fn x_at(&self, b: usize, ci: usize, row: usize) -> usize {
            ((b * self.cin + ci) * self.h + row) * self.w
        }

        fn k_at(&self, co: usize, ci: usize, u: usize, v: usize) -> usize {
            ((co * self.cin + ci) * self.kh + u) * self.kw + v
        }

        fn o_at(&self, b: usize, co: usize, i: usize) -> usize {
            ((b * self.cout + co) * self.oh + i) * self.ow
        }

        pub fn forward<T: Float>(&self, x: &[T], k: &[T], bias: Option<&[T]>) -> Vec<T> {
            let mut out = vec![T::zero(); self.batch * self.cout * self.oh * self.ow];
            for b in 0..self.batch {
                for co in 0..self.cout {
                    if let Some(bias) = bias {
                        let o = self.o_at(b, co, 0);
                        out[o..o + self.oh * self.ow].fill(bias[co]);
                    }
                    for ci in 0..self.cin {
                        for u in 0..self.kh {
                            for v in 0..self.kw {
                                let wgt = k[self.k_at(co, ci, u, v)];
                                for i in 0..self.oh {
                                    let xr = self.x_at(b, ci, i * self.sh + u);
                                    let or = self.o_at(b, co, i);
                                    let orow = &mut out[or..or + self.ow];
                                    if self.sw == 1 {
                                        let xrow = &x[xr + v..xr + v + self.ow];
                                        for (o, &xv) in orow.iter_mut().zip(xrow) {
                                            *o += wgt * xv;
                                        }
                                    } else {
                                        for (j, o) in orow.iter_mut().enumerate() {
                                            *o += wgt * x[xr + j * self.sw + v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        }

        pub fn backward_input<T: Float>(&self, g: &[T], k: &[T]) -> Vec<T> {
            let mut dx = vec![T::zero(); self.batch * self.cin * self.h * self.w];
            for b in 0..self.batch {
                for co in 0..self.cout {
                    for ci in 0..self.cin {
                        for u in 0..self.kh {
                            for v in 0..self.kw {
                                let wgt = k[self.k_at(co, ci, u, v)];
                                for i in 0..self.oh {
                                    let xr = self.x_at(b, ci, i * self.sh + u);
                                    let gr = self.o_at(b, co, i);
                                    for j in 0..self.ow {
                                        dx[xr + j * self.sw + v] += wgt * g[gr + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dx
        }

        pub fn backward_kernel<T: Float>(&self, g: &[T], x: &[T]) -> Vec<T> {
            let mut dk = vec![T::zero(); self.cout * self.cin * self.kh * self.kw];
            for b in 0..self.batch {
                for co in 0..self.cout {
                    for ci in 0..self.cin {
                        for u in 0..self.kh {
                            for v in 0..self.kw {
                                let mut acc = T::zero();
                                for i in 0..self.oh {
                                    let xr = self.x_at(b, ci, i * self.sh + u);
                                    let gr = self.o_at(b, co, i);
                                    let grow = &g[gr..gr + self.ow];
                                    if self.sw == 1 {
                                        for (&gv, &xv) in grow.iter().zip(&x[xr + v..xr + v + self.ow]) {
                                            acc += gv * xv;
                                        }
                                    } else {
                                        for (j, &gv) in grow.iter().enumerate() {
                                            acc += gv * x[xr + j * self.sw + v];
                                        }
                                    }
                                }
                                dk[self.k_at(co, ci, u, v)] += acc;
                            }
                        }
                    }
                }
            }
            dk
        }

        pub fn backward_bias<T: Float>(&self, g: &[T]) -> Vec<T> {
            let plane = self.oh * self.ow;
            let mut db = vec![T::zero(); self.cout];
            for b in 0..self.batch {
                for (co, d) in db.iter_mut().enumerate() {
                    let o = self.o_at(b, co, 0);
                    for &gv in &g[o..o + plane] {
                        *d += gv;
                    }
                }
            }
            db
        }
    }

    pub fn avg_pool<T: Float>(x: &[T], w: usize, len: usize, stride: usize) -> Vec<T> {
        let p = (w - len) / stride + 1;
        let inv = T::one() / T::of(len as f64);
        let mut out = Vec::with_capacity(x.len() / w * p);
        for row in x.chunks(w) {
            for s in 0..p {
                let mut acc = T::zero();
                for &v in &row[s * stride..s * stride + len] {
                    acc += v;
                }
                out.push(acc * inv);
            }
        }
        out
    }

    pub fn avg_pool_backward<T: Float>(g: &[T], numel: usize, w: usize, len: usize, stride: usize) -> Vec<T> {
        let p = (w - len) / stride + 1;
        let inv = T::one() / T::of(len as f64);
        let mut dx = vec![T::zero(); numel];
        for (drow, grow) in dx.chunks_mut(w).zip(g.chunks(p)) {
            for (s, &gv) in grow.iter().enumerate() {
                for d in &mut drow[s * stride..s * stride + len] {
                    *d += gv * inv;
                }
            }
        }
        dx
    }

    pub fn layer_norm<T: Float>(
        x: &[T],
        d: usize,
        gamma: &[T],
        beta: &[T],
        eps: f64,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut out = Vec::with_capacity(x.len());
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.len() / d);
        let n = T::of(d as f64);
        for row in x.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * gamma[j] + beta[j]);
            }
        }
        (out, xhat, inv_std)
    }

    pub fn layer_norm_backward<T: Float>(
        g: &[T],
        xhat: &[T],
        inv_std: &[T],
        gamma: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let d = gamma.len();
        let n = T::of(d as f64);
        let mut dx = vec![T::zero(); g.len()];
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        for (r, &is) in inv_std.iter().enumerate() {
            let gr = &g[r * d..(r + 1) * d];
            let hr = &xhat[r * d..(r + 1) * d];
            let mut sum_dh = T::zero();
            let mut sum_dh_h = T::zero();
            for j in 0..d {
                let dh = gr[j] * gamma[j];
                sum_dh += dh;
                sum_dh_h += dh * hr[j];
                dgamma[j] += gr[j] * hr[j];
                dbeta[j] += gr[j];
            }
            let mean_dh = sum_dh / n;
            let mean_dh_h = sum_dh_h / n;
            for j in 0..d {
                let dh = gr[j] * gamma[j];
                dx[r * d + j] = is * (dh - mean_dh - hr[j] * mean_dh_h);
            }
        }
        (dx, dgamma, dbeta)
    }

    const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const GELU_A: f64 = 0.044715;

    /// tanh approximation of GELU.
    pub fn gelu<T: Float>(x: T) -> T {
        let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
        T::of(0.5) * x * (T::one() + u.tanh())
    }

    pub fn gelu_grad<T: Float>(x: T) -> T {
        let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
        let t = u.tanh();
        let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
        T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
    }

    pub fn elu<T: Float>(x: T) -> T {
        if x > T::zero() {
            x
        } else {
            x.exp() - T::one()
        }
    }

    /// Multi-head scaled dot-product attention over `[batch, n, d]` buffers.
    /// Returns the output and the per-head probability tables.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<T: Float>(
        q: &[T],
        k: &[T],
        v: &[T],
        batch: usize,
        n: usize,
        d: usize,
        heads: usize,
        mask: Option<&super::AttnMask>,
    ) -> (Vec<T>, Vec<T>) {
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut out = vec![T::zero(); batch * n * d];
        let mut probs = vec![T::zero(); batch * heads * n * n];
        let mut scores = vec![T::zero(); n];
        let mut allowed = vec![false; n];
        for b in 0..batch {
            let base = b * n * d;
            for h in 0..heads {
                let off = h * dh;
                for i in 0..n {
                    let qi = &q[base + i * d + off..base + i * d + off + dh];
                    let mrow = mask.map(|m| m.row(b, i));
                    let mut max = T::neg_infinity();
                    let mut any = false;
                    for j in 0..n {
                        let add = mrow.map_or(0.0, |r| r[j]);
                        allowed[j] = add > super::MASK_THRESHOLD;
                        if !allowed[j] {
                            continue;
                        }
                        any = true;
                        let kj = &k[base + j * d + off..base + j * d + off + dh];
                        let mut s = T::zero();
                        for (&a, &c) in qi.iter().zip(kj) {
                            s += a * c;
                        }
                        let s = s * scale + T::of(add);
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    if !any {
                        continue;
                    }
                    let prow = &mut probs[((b * heads + h) * n + i) * n..((b * heads + h) * n + i + 1) * n];
                    let mut total = T::zero();
                    for j in 0..n {
                        if allowed[j] {
                            let e = (scores[j] - max).exp();
                            prow[j] = e;
                            total += e;
                        }
                    }
                    let orow = &mut out[base + i * d + off..base + i * d + off + dh];
                    for j in 0..n {
                        if !allowed[j] {
                            continue;
                        }
                        prow[j] /= total;
                        let p = prow[j];
                        let vj = &v[base + j * d + off..base + j * d + off + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        (out, probs)
    }

    pub fn attention_backward<T: Float>(
        g: &[T],
        q: &[T],
        k: &[T],
        v: &[T],
        shape: &[usize],
        heads: usize,
        probs: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let d = shape[shape.len() - 1];
        let n = shape[shape.len() - 2];
        let batch = q.len() / (n * d);
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); k.len()];
        let mut dv = vec![T::zero(); v.len()];
        let mut dp = vec![T::zero(); n];
        for b in 0..batch {
            let base = b * n * d;
            for h in 0..heads {
                let off = h * dh;
                for i in 0..n {
                    let prow = &probs[((b * heads + h) * n + i) * n..((b * heads + h) * n + i + 1) * n];
                    let gi = &g[base + i * d + off..base + i * d + off + dh];
                    let mut rowdot = T::zero();
                    for j in 0..n {
                        let p = prow[j];
                        if p == T::zero() {
                            dp[j] = T::zero();
                            continue;
                        }
                        let vj = base + j * d + off;
                        let mut s = T::zero();
                        for (t, &gv) in gi.iter().enumerate() {
                            s += gv * v[vj + t];
                            dv[vj + t] += p * gv;
                        }
                        dp[j] = s;
                        rowdot += p * s;
                    }
                    let qi = base + i * d + off;
                    for j in 0..n {
                        let p = prow[j];
                        if p == T::zero() {
                            continue;
                        }
                        let ds = p * (dp[j] - rowdot) * scale;
                        let kj = base + j * d + off;
                        for t in 0..dh {
                            dq[qi + t] += ds * k[kj + t];
                            dk[kj + t] += ds * q[qi + t];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

fn any_grad<T: Float>(g: &Graph<T>, vars: &[Var]) -> bool {
    vars.iter().any(|&v| g.needs(v))
}

impl<T: Float> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = any_grad(self, &[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = any_grad(self, &[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = any_grad(self, &[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let value = self.value(a).map(|x| x * s);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `x + y` where `y`'s shape is a suffix of `x`'s shape.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (xs, ys) = (self.shape(x), self.shape(y));
        if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(Error::dim("add_broadcast", xs, ys));
        }
        let yv = self.value(y).data();
        let n = yv.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + yv[i % n])
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        let rg = any_grad(self, &[x, y]);
        Ok(self.push(value, Op::AddBroadcast(x, y), rg))
    }

    /// `a[m,k] @ b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::dim("matmul", as_, bs));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        let rg = any_grad(self, &[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Affine map over the last axis: `x[..., in] @ w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || *xs.last().unwrap() != ws[0] {
            return Err(Error::dim("linear", &xs, &ws));
        }
        let rows = xs.iter().product::<usize>() / ws[0];
        let flat = self.reshape(x, &[rows, ws[0]])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add_broadcast(y, b)?;
        }
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[1];
        self.reshape(y, &out_shape)
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::dim("transpose", &s, &[]));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = kernels::transpose_last2(self.value(x).data(), r, c);
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::TransposeLast2(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let value = self.value(x).reshape(shape)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Valid (unpadded) 2-D cross-correlation.
    ///
    /// `x` is `[cin, h, w]` or `[batch, cin, h, w]`; `kernel` is
    /// `[cout, cin, kh, kw]`; optional `bias` is `[cout]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        let geom = kernels::ConvGeom::new(self.shape(x), self.shape(kernel), stride)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::dim("conv2d bias", self.shape(b), &[geom.cout]));
            }
        }
        let data = geom.forward(
            self.value(x).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&geom.out_shape(), data)?;
        let mut deps = vec![x, kernel];
        deps.extend(bias);
        let rg = any_grad(self, &deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
            },
            rg,
        ))
    }

    /// Average pooling along the last axis.
    pub fn avg_pool(&mut self, x: Var, len: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = *s.last().ok_or_else(|| Error::dim("avg_pool", &s, &[]))?;
        if len == 0 || stride == 0 || len > w {
            return Err(Error::Parameter(format!(
                "avg_pool window {len} stride {stride} on width {w}"
            )));
        }
        let data = kernels::avg_pool(self.value(x).data(), w, len, stride);
        let mut shape = s;
        *shape.last_mut().unwrap() = (w - len) / stride + 1;
        let value = Tensor::new(&shape, data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::AvgPool { x, len, stride }, rg))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(x);
        let d = *s.last().ok_or_else(|| Error::dim("layer_norm", s, &[]))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("layer_norm", s, self.shape(gamma)));
        }
        let (out, xhat, inv_std) = kernels::layer_norm(
            self.value(x).data(),
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            LN_EPS,
        );
        let value = Tensor::new(s, out)?;
        let rg = any_grad(self, &[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        let rg = self.needs(x);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::elu);
        let rg = self.needs(x);
        self.push(value, Op::Elu(x), rg)
    }

    /// Multi-head `softmax(q k^T / sqrt(d_head) + mask) v`.
    ///
    /// `q`, `k`, `v` are `[n, d]` or `[batch, n, d]`. Masked keys get exactly
    /// zero weight; a query row with every key masked yields a zero vector.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&AttnMask>, heads: usize) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if self.shape(k) != s.as_slice() || self.shape(v) != s.as_slice() {
            return Err(Error::dim("attention", &s, self.shape(k)));
        }
        let (batch, n, d) = match s[..] {
            [n, d] => (1, n, d),
            [b, n, d] => (b, n, d),
            _ => return Err(Error::dim("attention", &s, &[])),
        };
        if heads == 0 || d % heads != 0 {
            return Err(Error::Parameter(format!("{heads} heads do not divide width {d}")));
        }
        if let Some(m) = mask {
            let ok = m.n == n && m.batch.is_none_or(|mb| mb == batch);
            if !ok {
                return Err(Error::dim("attention mask", &[m.batch.unwrap_or(1), m.n, m.n], &s));
            }
        }
        let (out, probs) = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            batch,
            n,
            d,
            heads,
            mask,
        );
        let value = Tensor::new(&s, out)?;
        let rg = any_grad(self, &[q, k, v]);
        Ok(self.push(value, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// `sum_r weights[r] * ||pred[r] - target[r]||^2` with rows taken along
    /// the leading axis.
    pub fn weighted_sq_error(&mut self, pred: Var, target: Var, weights: &[f64]) -> Result<Var> {
        self.same_shape("weighted_sq_error", pred, target)?;
        let rows = self.shape(pred)[0];
        if weights.len() != rows {
            return Err(Error::dim("weighted_sq_error", self.shape(pred), &[weights.len()]));
        }
        let width = self.value(pred).numel() / rows;
        let weights: Vec<T> = weights.iter().map(|&w| T::of(w)).collect();
        let mut total = T::zero();
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        for (r, &w) in weights.iter().enumerate() {
            let mut row = T::zero();
            for (&a, &b) in p[r * width..(r + 1) * width].iter().zip(&t[r * width..(r + 1) * width]) {
                row += (a - b) * (a - b);
            }
            total += w * row;
        }
        let rg = any_grad(self, &[pred, target]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSqError {
                pred,
                target,
                weights,
            },
            rg,
        ))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = T::of(self.value(a).numel() as f64);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let rg = any_grad(self, &[a, b]);
        Ok(self.push(Tensor::scalar(total / n), Op::Mse(a, b), rg))
    }

    /// Mean cross-entropy of `logits[batch, classes]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let [rows, classes] = *s else {
            return Err(Error::dim("cross_entropy", s, &[labels.len()]));
        };
        if rows != labels.len() {
            return Err(Error::dim("cross_entropy", s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Parameter(format!("label {bad} out of range for {classes} classes")));
        }
        let x = self.value(logits).data();
        let mut probs = Vec::with_capacity(x.len());
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let value = Tensor::scalar(total / T::of(rows as f64));
        let rg = self.needs(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Stacks two `[r, d]` matrices.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(Error::dim("concat_rows", as_, bs));
        }
        let shape = [as_[0] + bs[0], as_[1]];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&shape, data)?;
        let rg = any_grad(self, &[a, b]);
        Ok(self.push(value, Op::ConcatRows(a, b), rg))
    }

    /// Builds `[index.len(), d]` from rows of `x[r, d]`; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", s, &[]));
        }
        let (rows, width) = (s[0], s[1]);
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= rows) {
            return Err(Error::Parameter(format!("row {bad} out of range for {rows} rows")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * width);
        for i in &index {
            match i {
                Some(i) => data.extend_from_slice(&src[i * width..(i + 1) * width]),
                None => data.extend(std::iter::repeat_n(T::zero(), width)),
            }
        }
        let value = Tensor::new(&[index.len(), width], data)?;
        let rg = self.needs(x);
        Ok(self.push(value, Op::GatherRows { x, index }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).numel() as f64);
        let total: T = self.value(x).data().iter().copied().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total / n), Op::Mean(x), rg)
    }
}
