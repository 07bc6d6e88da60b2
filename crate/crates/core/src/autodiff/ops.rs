use super::gemm::gemm;
use super::params::ParamId;
use super::tape::{Tape, Var};
use super::{COSINE_EPS, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(super) enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    MaskFill {
        x: Var,
        mask: Vec<bool>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad_id: usize,
        probs: Vec<f64>,
        count: usize,
    },
    Cosine {
        a: Var,
        b: Var,
        dot: f64,
        norm_a: f64,
        norm_b: f64,
    },
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::invalid(
                op,
                format!("expected a matrix, got shape {s:?}"),
            ));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new([m, n], out)?,
            Op::MatMul {
                a,
                b,
                trans_b: false,
            },
            rg,
        ))
    }

    /// Matrix product `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul_nt", a)?;
        let (n, k2) = self.matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
            0.0,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::new([m, n], out)?,
            Op::MatMul {
                a,
                b,
                trans_b: true,
            },
            rg,
        ))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).as_matrix_dims();
        if self.value(bias).numel() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        if n > 0 {
            for row in out.data_mut().chunks_mut(n) {
                add_into(row, b);
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRow { x, bias }, rg))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, shift: f64) -> Var {
        self.affine(x, 1.0, shift)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `max(0, x)`; the hinge used by margin losses.
    pub fn hinge(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, stable_sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + eˣ)`, computed without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// Row-wise softmax over the last axis, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.value(x).as_matrix_dims();
        if n == 0 {
            return Err(Error::invalid("softmax_rows", "rows must be non-empty"));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            softmax_row(row);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Replaces entries where `mask` is true with −∞.
    pub fn mask_fill(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape("mask_fill", self.shape(x), &[mask.len()]));
        }
        let mut out = self.value(x).clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            if m {
                *v = f64::NEG_INFINITY;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaskFill { x, mask }, rg))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, d) = self.value(x).as_matrix_dims();
        if d == 0 {
            return Err(Error::invalid("layer_norm", "last dimension is zero"));
        }
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * d];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping rows whose target is `pad_id`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        let (t, v) = self.matrix("cross_entropy", logits)?;
        if targets.len() != t {
            return Err(Error::shape(
                "cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        if v == 0 {
            return Err(Error::invalid("cross_entropy", "empty vocabulary"));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (r, &y) in targets.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            softmax_row(row);
            if y == pad_id {
                continue;
            }
            if y >= v {
                return Err(Error::TokenOutOfRange { id: y, size: v });
            }
            // log p_y computed from logits directly for accuracy at extreme values
            let lrow = &self.value(logits).data()[r * v..(r + 1) * v];
            let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lrow.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - lrow[y];
            count += 1;
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad_id,
                probs,
                count,
            },
            rg,
        ))
    }

    /// `a·b / max(‖a‖‖b‖, ε)` over all elements.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(
                "cosine_similarity",
                self.shape(a),
                self.shape(b),
            ));
        }
        if self.value(a).numel() == 0 {
            return Err(Error::invalid("cosine_similarity", "empty vectors"));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let dot: f64 = xa.iter().zip(xb).map(|(x, y)| x * y).sum();
        let norm_a = xa.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_b = xb.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = dot / (norm_a * norm_b).max(COSINE_EPS);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::scalar(c),
            Op::Cosine {
                a,
                b,
                dot,
                norm_a,
                norm_b,
            },
            rg,
        ))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "nothing to concatenate"))?;
        let rows = self.value(first).rows();
        let mut cols = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).as_matrix_dims();
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            cols.push(c);
        }
        let total: usize = cols.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &c) in parts.iter().zip(&cols) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new([rows, total], out)?,
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix("slice_cols", x)?;
        if start + len > cols {
            return Err(Error::invalid(
                "slice_cols",
                format!("columns {start}..{} out of range for {cols}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new([rows, len], out)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Gathers rows of `table` (`V×d`) by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix("embedding", table)?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, size: v });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new([ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s = self.value(x).sum() / n as f64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Column means of an `m×n` matrix, shape `1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix("mean_rows", x)?;
        if m == 0 {
            return Err(Error::invalid("mean_rows", "no rows"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            add_into(&mut out, &src[r * n..(r + 1) * n]);
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new([1, n], out)?, Op::MeanRows(x), rg))
    }

    /// Reverse rule of node `i`, given its output adjoint `g`.
    pub(super) fn backprop(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(a).as_matrix_dims();
                let n = self.value(Var(i)).cols();
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                // dA = dC · op(B)ᵀ
                self.acc(adj, a, |da| gemm(m, n, k, g, false, bv, !trans_b, da, 1.0));
                if trans_b {
                    // B is n×k: dB = dCᵀ · A
                    self.acc(adj, b, |db| gemm(n, m, k, g, true, av, false, db, 1.0));
                } else {
                    // dB = Aᵀ · dC
                    self.acc(adj, b, |db| gemm(k, m, n, av, true, g, false, db, 1.0));
                }
            }
            &Op::Add(a, b) => {
                self.acc(adj, a, |d| add_into(d, g));
                self.acc(adj, b, |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                self.acc(adj, a, |d| add_into(d, g));
                self.acc(adj, b, |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.acc(adj, a, |d| {
                    for ((x, gy), bb) in d.iter_mut().zip(g).zip(bv) {
                        *x += gy * bb;
                    }
                });
                self.acc(adj, b, |d| {
                    for ((x, gy), aa) in d.iter_mut().zip(g).zip(av) {
                        *x += gy * aa;
                    }
                });
            }
            &Op::AddRow { x, bias } => {
                self.acc(adj, x, |d| add_into(d, g));
                let n = self.value(bias).numel();
                self.acc(adj, bias, |d| {
                    if n > 0 {
                        for row in g.chunks(n) {
                            add_into(d, row);
                        }
                    }
                });
            }
            &Op::Affine { x, scale } => {
                self.acc(adj, x, |d| {
                    d.iter_mut().zip(g).for_each(|(v, gy)| *v += scale * gy)
                });
            }
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                self.acc(adj, x, |d| {
                    for ((v, gy), xx) in d.iter_mut().zip(g).zip(xv) {
                        if *xx > 0.0 {
                            *v += gy;
                        }
                    }
                });
            }
            &Op::Sigmoid(x) => {
                self.acc(adj, x, |d| {
                    for ((v, gy), y) in d.iter_mut().zip(g).zip(out) {
                        *v += gy * y * (1.0 - y);
                    }
                });
            }
            &Op::Softplus(x) => {
                let xv = self.value(x).data();
                self.acc(adj, x, |d| {
                    for ((v, gy), xx) in d.iter_mut().zip(g).zip(xv) {
                        *v += gy * stable_sigmoid(*xx);
                    }
                });
            }
            &Op::SoftmaxRows(x) => {
                let n = self.value(x).cols();
                self.acc(adj, x, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::MaskFill { x, mask } => {
                self.acc(adj, *x, |d| {
                    for ((v, gy), m) in d.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *v += gy;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                self.acc(adj, *gain, |dg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                self.acc(adj, *bias, |db| {
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                });
                self.acc(adj, *x, |dx| {
                    let mut dh = vec![0.0; d];
                    for (r, ((dxrow, grow), hrow)) in dx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dh[j] = grow[j] * gv[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dxrow[j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad_id,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = self.value(*logits).cols();
                let scale = g[0] / *count as f64;
                self.acc(adj, *logits, |d| {
                    for (r, &y) in targets.iter().enumerate() {
                        if y == *pad_id {
                            continue;
                        }
                        let drow = &mut d[r * v..(r + 1) * v];
                        for (j, dv) in drow.iter_mut().enumerate() {
                            let p = probs[r * v + j];
                            *dv += scale * (p - if j == y { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            &Op::Cosine {
                a,
                b,
                dot,
                norm_a,
                norm_b,
            } => {
                let denom = (norm_a * norm_b).max(COSINE_EPS);
                let floored = norm_a * norm_b < COSINE_EPS;
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let grad_side = |this: &[f64], other: &[f64], n_this: f64, d: &mut [f64]| {
                    // ∂/∂this of dot / (‖this‖‖other‖); the floored denominator is constant
                    let coef = if floored || n_this == 0.0 {
                        0.0
                    } else {
                        dot / (denom * n_this * n_this)
                    };
                    for ((v, o), t) in d.iter_mut().zip(other).zip(this) {
                        *v += g[0] * (o / denom - coef * t);
                    }
                };
                self.acc(adj, a, |d| grad_side(av, bv, norm_a, d));
                self.acc(adj, b, |d| grad_side(bv, av, norm_b, d));
            }
            Op::Concat(parts) => {
                let (rows, total) = self.value(Var(i)).as_matrix_dims();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.acc(adj, p, |d| {
                        for r in 0..rows {
                            add_into(
                                &mut d[r * c..(r + 1) * c],
                                &g[r * total + offset..r * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            &Op::SliceCols { x, start } => {
                let cols = self.value(x).cols();
                let len = self.value(Var(i)).cols();
                self.acc(adj, x, |d| {
                    if len == 0 {
                        return;
                    }
                    for (r, grow) in g.chunks(len).enumerate() {
                        add_into(&mut d[r * cols + start..r * cols + start + len], grow);
                    }
                });
            }
            &Op::Reshape(x) => self.acc(adj, x, |d| add_into(d, g)),
            &Op::Transpose(x) => {
                let (m, n) = self.value(x).as_matrix_dims();
                self.acc(adj, x, |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                self.acc(adj, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            &Op::Sum(x) => self.acc(adj, x, |d| d.iter_mut().for_each(|v| *v += g[0])),
            &Op::Mean(x) => {
                let n = self.value(x).numel() as f64;
                self.acc(adj, x, |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
            &Op::MeanRows(x) => {
                let (m, n) = self.value(x).as_matrix_dims();
                self.acc(adj, x, |d| {
                    for row in d.chunks_mut(n) {
                        for (v, gy) in row.iter_mut().zip(g) {
                            *v += gy / m as f64;
                        }
                    }
                });
            }
        }
    }
}
