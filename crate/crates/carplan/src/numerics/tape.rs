//! Wengert tape: forward ops record their inputs, backward replays them in
//! reverse topological order (which is creation order reversed).
//!
//! All node payloads are 2-D row-major matrices; vectors are 1×n and scalars
//! 1×1. Masked softmax gives masked keys exactly zero weight, and masked
//! max-pooling only looks at valid rows, so padding can never leak into valid
//! outputs.

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    AddRowBroadcast(ValueId, ValueId),
    MulScalarNode(ValueId, ValueId),
    MatMul(ValueId, ValueId),
    Transpose(ValueId),
    Relu(ValueId),
    SoftmaxRows(ValueId),
    LayerNorm { x: ValueId, gain: ValueId, bias: ValueId, eps: f64 },
    ConcatRows(Vec<ValueId>),
    SliceRows { x: ValueId, start: usize },
    ConcatCols(Vec<ValueId>),
    SliceCols { x: ValueId, start: usize },
    MaxPoolRows { x: ValueId, argmax: Vec<usize> },
    MeanRows(ValueId),
    SumAll(ValueId),
    MeanAll(ValueId),
    DotConst(ValueId, Vec<f64>),
    SmoothL1 { pred: ValueId, target: Vec<f64>, mask: Vec<f64>, beta: f64 },
    CrossEntropy { logits: ValueId, target: usize },
    GetElem { x: ValueId, r: usize, c: usize },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn of(&self, id: ValueId) -> &[f64] {
        &self.grads[id.0]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op) -> ValueId {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node { rows, cols, data, op });
        ValueId(self.nodes.len() - 1)
    }

    fn node(&self, id: ValueId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: ValueId) -> &[f64] {
        &self.node(id).data
    }

    pub fn shape(&self, id: ValueId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.node(id).data.len(), 1);
        self.node(id).data[0]
    }

    // ── Construction ────────────────────────────────────────────────

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> ValueId {
        assert_eq!(rows * cols, data.len(), "leaf data length mismatch");
        self.push(rows, cols, data, Op::Leaf)
    }

    pub fn leaf_row(&mut self, data: Vec<f64>) -> ValueId {
        let n = data.len();
        self.leaf(1, n, data)
    }

    pub fn leaf_scalar(&mut self, v: f64) -> ValueId {
        self.leaf(1, 1, vec![v])
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> ValueId {
        self.leaf(rows, cols, vec![0.0; rows * cols])
    }

    // ── Elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (r, c), "add: shape mismatch");
        let data: Vec<f64> =
            self.node(a).data.iter().zip(&self.node(b).data).map(|(x, y)| x + y).collect();
        self.push(r, c, data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (r, c), "sub: shape mismatch");
        let data: Vec<f64> =
            self.node(a).data.iter().zip(&self.node(b).data).map(|(x, y)| x - y).collect();
        self.push(r, c, data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (r, c), "mul: shape mismatch");
        let data: Vec<f64> =
            self.node(a).data.iter().zip(&self.node(b).data).map(|(x, y)| x * y).collect();
        self.push(r, c, data, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: ValueId, s: f64) -> ValueId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.node(a).data.iter().map(|x| x * s).collect();
        self.push(r, c, data, Op::Scale(a, s))
    }

    /// `a` (m×n) plus a 1×n bias row broadcast over every row.
    pub fn add_row_broadcast(&mut self, a: ValueId, bias: ValueId) -> ValueId {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(bias);
        assert_eq!((br, bc), (1, c), "add_row_broadcast: bias must be 1×cols");
        let bdat = self.node(bias).data.clone();
        let data: Vec<f64> = self
            .node(a)
            .data
            .chunks(c)
            .flat_map(|row| row.iter().zip(&bdat).map(|(x, y)| x + y).collect::<Vec<_>>())
            .collect();
        self.push(r, c, data, Op::AddRowBroadcast(a, bias))
    }

    /// Multiply every element of `a` by a 1×1 scalar node.
    pub fn mul_scalar_node(&mut self, a: ValueId, s: ValueId) -> ValueId {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar_node: s must be 1×1");
        let (r, c) = self.shape(a);
        let sv = self.node(s).data[0];
        let data: Vec<f64> = self.node(a).data.iter().map(|x| x * sv).collect();
        self.push(r, c, data, Op::MulScalarNode(a, s))
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: inner extents must match ({k} vs {k2})");
        let data = matmul_raw(&self.node(a).data, &self.node(b).data, m, k, n);
        self.push(m, n, data, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let (r, c) = self.shape(a);
        let src = &self.node(a).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(c, r, data, Op::Transpose(a))
    }

    // ── Nonlinearities ──────────────────────────────────────────────

    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.node(a).data.iter().map(|x| x.max(0.0)).collect();
        self.push(r, c, data, Op::Relu(a))
    }

    /// Row-wise softmax with max-subtraction stabilization.
    pub fn softmax_rows(&mut self, a: ValueId) -> ValueId {
        self.softmax_rows_masked(a, None)
    }

    /// Row-wise softmax where columns with `key_mask[j] == false` receive
    /// exactly zero weight. At least one column must be valid.
    pub fn softmax_rows_masked(&mut self, a: ValueId, key_mask: Option<&[bool]>) -> ValueId {
        let (r, c) = self.shape(a);
        if let Some(m) = key_mask {
            assert_eq!(m.len(), c, "softmax mask length must equal cols");
            assert!(m.iter().any(|&v| v), "softmax mask must keep at least one column");
        }
        let src = &self.node(a).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if key_mask.map_or(true, |m| m[j]) && v > mx {
                    mx = v;
                }
            }
            let out = &mut data[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if key_mask.map_or(true, |m| m[j]) {
                    let e = (v - mx).exp();
                    out[j] = e;
                    sum += e;
                }
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        self.push(r, c, data, Op::SoftmaxRows(a))
    }

    /// Per-row normalization over the column axis, then affine by 1×n gain/bias.
    pub fn layer_norm(&mut self, x: ValueId, gain: ValueId, bias: ValueId, eps: f64) -> ValueId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c), "layer_norm: gain must be 1×cols");
        assert_eq!(self.shape(bias), (1, c), "layer_norm: bias must be 1×cols");
        let src = &self.node(x).data;
        let g = &self.node(gain).data;
        let b = &self.node(bias).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        self.push(r, c, data, Op::LayerNorm { x, gain, bias, eps })
    }

    // ── Shape surgery ───────────────────────────────────────────────

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty(), "concat_rows: empty part list");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            assert_eq!(c, cols, "concat_rows: column mismatch");
            rows += r;
            data.extend_from_slice(&self.node(p).data);
        }
        self.push(rows, cols, data, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> ValueId {
        let (r, c) = self.shape(x);
        assert!(start + len <= r, "slice_rows out of range");
        let data = self.node(x).data[start * c..(start + len) * c].to_vec();
        self.push(len, c, data, Op::SliceRows { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty(), "concat_cols: empty part list");
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        for &p in parts {
            assert_eq!(self.shape(p).0, rows, "concat_cols: row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let w = widths[pi];
            let src = &self.nodes[p.0].data;
            for i in 0..rows {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(rows, total, data, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> ValueId {
        let (r, c) = self.shape(x);
        assert!(start + len <= c, "slice_cols out of range");
        let src = &self.node(x).data;
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push(r, len, data, Op::SliceCols { x, start })
    }

    pub fn get_elem(&mut self, x: ValueId, r: usize, c: usize) -> ValueId {
        let (rows, cols) = self.shape(x);
        assert!(r < rows && c < cols, "get_elem out of range");
        let v = self.node(x).data[r * cols + c];
        self.push(1, 1, vec![v], Op::GetElem { x, r, c })
    }

    // ── Reductions ──────────────────────────────────────────────────

    /// Column-wise max over rows (optionally restricted to `row_mask`-valid
    /// rows), producing 1×n. Ties route the gradient to the first max row.
    pub fn max_pool_rows(&mut self, x: ValueId, row_mask: Option<&[bool]>) -> ValueId {
        let (r, c) = self.shape(x);
        if let Some(m) = row_mask {
            assert_eq!(m.len(), r, "max_pool_rows mask length must equal rows");
            assert!(m.iter().any(|&v| v), "max_pool_rows needs at least one valid row");
        }
        let src = &self.node(x).data;
        let mut data = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for i in 0..r {
            if row_mask.map_or(false, |m| !m[i]) {
                continue;
            }
            for j in 0..c {
                let v = src[i * c + j];
                if v > data[j] {
                    data[j] = v;
                    argmax[j] = i;
                }
            }
        }
        self.push(1, c, data, Op::MaxPoolRows { x, argmax })
    }

    /// Column means over rows: m×n → 1×n.
    pub fn mean_rows(&mut self, x: ValueId) -> ValueId {
        let (r, c) = self.shape(x);
        let src = &self.node(x).data;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += src[i * c + j];
            }
        }
        for d in data.iter_mut() {
            *d /= r as f64;
        }
        self.push(1, c, data, Op::MeanRows(x))
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let s: f64 = self.node(x).data.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: ValueId) -> ValueId {
        let n = self.node(x).data.len();
        let s: f64 = self.node(x).data.iter().sum();
        self.push(1, 1, vec![s / n as f64], Op::MeanAll(x))
    }

    /// Dot product with a constant vector over the flattened node.
    pub fn dot_const(&mut self, x: ValueId, w: &[f64]) -> ValueId {
        assert_eq!(self.node(x).data.len(), w.len(), "dot_const length mismatch");
        let s: f64 = self.node(x).data.iter().zip(w).map(|(a, b)| a * b).sum();
        self.push(1, 1, vec![s], Op::DotConst(x, w.to_vec()))
    }

    // ── Losses ──────────────────────────────────────────────────────

    /// Masked-mean smooth L1 against a constant target. `mask` entries weight
    /// each element (typically 0/1); the result divides by the mask sum.
    pub fn smooth_l1_masked(
        &mut self,
        pred: ValueId,
        target: &[f64],
        mask: &[f64],
        beta: f64,
    ) -> ValueId {
        let n = self.node(pred).data.len();
        assert_eq!(target.len(), n, "smooth_l1: target length mismatch");
        assert_eq!(mask.len(), n, "smooth_l1: mask length mismatch");
        assert!(beta > 0.0, "smooth_l1: beta must be positive");
        let denom: f64 = mask.iter().sum();
        let mut acc = 0.0;
        if denom > 0.0 {
            for i in 0..n {
                if mask[i] == 0.0 {
                    continue;
                }
                let d = self.node(pred).data[i] - target[i];
                let h = if d.abs() < beta { 0.5 * d * d / beta } else { d.abs() - 0.5 * beta };
                acc += mask[i] * h;
            }
            acc /= denom;
        }
        self.push(
            1,
            1,
            vec![acc],
            Op::SmoothL1 { pred, target: target.to_vec(), mask: mask.to_vec(), beta },
        )
    }

    /// Mean smooth L1 over all elements.
    pub fn smooth_l1(&mut self, pred: ValueId, target: &[f64], beta: f64) -> ValueId {
        let mask = vec![1.0; target.len()];
        self.smooth_l1_masked(pred, target, &mask, beta)
    }

    /// −log softmax(logits)[target] for a 1×M logits row.
    pub fn cross_entropy(&mut self, logits: ValueId, target: usize) -> ValueId {
        let (r, c) = self.shape(logits);
        assert_eq!(r, 1, "cross_entropy expects a 1×M logits row");
        assert!(target < c, "cross_entropy: target index out of range");
        let row = &self.node(logits).data;
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
        let loss = lse - row[target];
        self.push(1, 1, vec![loss], Op::CrossEntropy { logits, target })
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar node. Creation order is a topological order,
    /// so walking ids in reverse fully accumulates every node's gradient
    /// before that node propagates to its inputs.
    pub fn backward(&self, loss: ValueId) -> Gradients {
        assert_eq!(self.node(loss).data.len(), 1, "backward expects a scalar loss");
        let mut grads: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    for (dst, src) in grads[b.0].iter_mut().zip(&g) {
                        *dst -= src;
                    }
                }
                Op::Mul(a, b) => {
                    let (ai, bi) = (a.0, b.0);
                    for k in 0..g.len() {
                        grads[ai][k] += g[k] * self.nodes[bi].data[k];
                    }
                    for k in 0..g.len() {
                        grads[bi][k] += g[k] * self.nodes[ai].data[k];
                    }
                }
                Op::Scale(a, s) => {
                    for (dst, src) in grads[a.0].iter_mut().zip(&g) {
                        *dst += src * s;
                    }
                }
                Op::AddRowBroadcast(a, bias) => {
                    accumulate(&mut grads[a.0], &g);
                    let c = node.cols;
                    for (k, gv) in g.iter().enumerate() {
                        grads[bias.0][k % c] += gv;
                    }
                }
                Op::MulScalarNode(a, s) => {
                    let sv = self.nodes[s.0].data[0];
                    for (dst, src) in grads[a.0].iter_mut().zip(&g) {
                        *dst += src * sv;
                    }
                    let dot: f64 = g.iter().zip(&self.nodes[a.0].data).map(|(x, y)| x * y).sum();
                    grads[s.0][0] += dot;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                    let n = self.nodes[b.0].cols;
                    // dA = dC · Bᵀ
                    let bt = transpose_raw(&self.nodes[b.0].data, k, n);
                    let da = matmul_raw(&g, &bt, m, n, k);
                    accumulate(&mut grads[a.0], &da);
                    // dB = Aᵀ · dC
                    let at = transpose_raw(&self.nodes[a.0].data, m, k);
                    let db = matmul_raw(&at, &g, k, m, n);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.rows, node.cols);
                    let gt = transpose_raw(&g, r, c);
                    accumulate(&mut grads[a.0], &gt);
                }
                Op::Relu(a) => {
                    for (k, gv) in g.iter().enumerate() {
                        if self.nodes[a.0].data[k] > 0.0 {
                            grads[a.0][k] += gv;
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    // dx_j = s_j (g_j − Σ_k g_k s_k); masked entries have s=0.
                    let (r, c) = (node.rows, node.cols);
                    let s = &node.data;
                    for i in 0..r {
                        let dot: f64 =
                            (0..c).map(|j| g[i * c + j] * s[i * c + j]).sum();
                        for j in 0..c {
                            grads[x.0][i * c + j] += s[i * c + j] * (g[i * c + j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (r, c) = (node.rows, node.cols);
                    let src = &self.nodes[x.0].data;
                    let gd = &self.nodes[gain.0].data;
                    let cf = c as f64;
                    for i in 0..r {
                        let row = &src[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let mean = row.iter().sum::<f64>() / cf;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cf;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> =
                            row.iter().map(|v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            (0..c).map(|j| grow[j] * gd[j]).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            grads[x.0][i * c + j] += inv_std / cf
                                * (cf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                            grads[gain.0][j] += grow[j] * xhat[j];
                            grads[bias.0][j] += grow[j];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let pr = self.nodes[p.0].rows;
                        accumulate(&mut grads[p.0], &g[off * c..(off + pr) * c]);
                        off += pr;
                    }
                }
                Op::SliceRows { x, start } => {
                    let c = node.cols;
                    let dst = &mut grads[x.0];
                    for (k, gv) in g.iter().enumerate() {
                        dst[(start * c) + k] += gv;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = node.rows;
                    let total = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].cols;
                        for i in 0..rows {
                            for j in 0..w {
                                grads[p.0][i * w + j] += g[i * total + off + j];
                            }
                        }
                        off += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (r, len) = (node.rows, node.cols);
                    let xc = self.nodes[x.0].cols;
                    for i in 0..r {
                        for j in 0..len {
                            grads[x.0][i * xc + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::MaxPoolRows { x, argmax } => {
                    let c = node.cols;
                    for j in 0..c {
                        grads[x.0][argmax[j] * c + j] += g[j];
                    }
                }
                Op::MeanRows(x) => {
                    let r = self.nodes[x.0].rows;
                    let c = node.cols;
                    let rf = r as f64;
                    for i in 0..r {
                        for j in 0..c {
                            grads[x.0][i * c + j] += g[j] / rf;
                        }
                    }
                }
                Op::SumAll(x) => {
                    for dst in grads[x.0].iter_mut() {
                        *dst += g[0];
                    }
                }
                Op::MeanAll(x) => {
                    let n = self.nodes[x.0].data.len() as f64;
                    for dst in grads[x.0].iter_mut() {
                        *dst += g[0] / n;
                    }
                }
                Op::DotConst(x, w) => {
                    for (k, wv) in w.iter().enumerate() {
                        grads[x.0][k] += g[0] * wv;
                    }
                }
                Op::SmoothL1 { pred, target, mask, beta } => {
                    let denom: f64 = mask.iter().sum();
                    if denom > 0.0 {
                        let p = &self.nodes[pred.0].data;
                        for k in 0..p.len() {
                            if mask[k] == 0.0 {
                                continue;
                            }
                            let d = p[k] - target[k];
                            let dh = if d.abs() < *beta { d / beta } else { d.signum() };
                            grads[pred.0][k] += g[0] * mask[k] * dh / denom;
                        }
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let row = &self.nodes[logits.0].data;
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for (k, e) in exps.iter().enumerate() {
                        let softmax = e / sum;
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        grads[logits.0][k] += g[0] * (softmax - onehot);
                    }
                }
                Op::GetElem { x, r, c } => {
                    let cols = self.nodes[x.0].cols;
                    grads[x.0][r * cols + c] += g[0];
                }
            }
            grads[i] = g;
        }
        Gradients { grads }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
