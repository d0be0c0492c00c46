//! Reverse-mode automatic differentiation over small dense f64 tensors.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] walks it in reverse
//! and returns the gradient of a scalar node with respect to every node that
//! requires one. Ops are coarse-grained (a whole GRU step, attention pooling,
//! a weighted BCE sum) so that one clip's forward pass stays at a few hundred
//! nodes.

use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Constant sparse linear map: `out[r] = Σ w · x[c]` over the entries of row `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    pub out_shape: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMap {
    pub fn from_rows(out_shape: Vec<usize>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(out_shape.iter().product::<usize>(), rows.len());
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, w) in row {
                cols.push(c);
                weights.push(w);
            }
            row_ptr.push(cols.len());
        }
        SparseMap {
            out_shape,
            row_ptr,
            cols,
            weights,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.row_ptr.len() - 1)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.weights[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    fn apply_transpose(&self, dout: &[f64], dx: &mut [f64]) {
        for r in 0..self.row_ptr.len() - 1 {
            let g = dout[r];
            if g == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                dx[self.cols[k]] += self.weights[k] * g;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Sparse(usize, Arc<SparseMap>),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Glu(usize),
    ConcatCols(usize, usize),
    /// `aux` holds z, r, n and the recurrent n pre-activation, each of width H.
    GruStep {
        xp: usize,
        row: usize,
        h: usize,
        u: usize,
        bh: usize,
    },
    StackRows(Vec<usize>),
    /// `aux` holds the softmax weights.
    AttnPool {
        att: usize,
        s: usize,
    },
    Bce {
        p: usize,
        targets: Arc<Vec<f64>>,
        weights: Arc<Vec<f64>>,
    },
    SqErr {
        x: usize,
        targets: Arc<Vec<f64>>,
        weights: Arc<Vec<f64>>,
    },
    LinComb(Vec<(usize, f64)>),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Sparse(a, _) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Glu(a) => vec![*a],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::ConcatCols(a, b) => {
                vec![*a, *b]
            }
            Op::GruStep { xp, h, u, bh, .. } => vec![*xp, *h, *u, *bh],
            Op::StackRows(rows) => rows.clone(),
            Op::AttnPool { att, s } => vec![*att, *s],
            Op::Bce { p, .. } => vec![*p],
            Op::SqErr { x, .. } => vec![*x],
            Op::LinComb(terms) => terms.iter().map(|(i, _)| *i).collect(),
        }
    }
}

#[derive(Clone)]
struct Node {
    value: Tensor,
    aux: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Clamp applied to probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &w) in orow.iter_mut().zip(brow) {
                *o += x * w;
            }
        }
    }
    out
}

/// Forward value of `op` (and its backward cache) from the current node values.
fn compute(op: &Op, nodes: &[Node]) -> (Tensor, Vec<f64>) {
    let val = |i: usize| &nodes[i].value;
    let plain = |t: Tensor| (t, Vec::new());
    match op {
        Op::Leaf => unreachable!("leaves are not computed"),
        Op::Sparse(x, map) => plain(Tensor::new(map.out_shape.clone(), map.apply(&val(*x).data))),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            assert_eq!(k, bv.rows(), "matmul inner dimensions differ");
            plain(Tensor::matrix(
                m,
                n,
                matmul_into(&av.data, &bv.data, m, k, n),
            ))
        }
        Op::AddBias(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.cols();
            assert_eq!(bv.len(), n, "bias width differs");
            let data = av
                .data
                .iter()
                .enumerate()
                .map(|(i, v)| v + bv.data[i % n])
                .collect();
            plain(Tensor::new(av.shape.clone(), data))
        }
        Op::Add(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            assert_eq!(av.shape, bv.shape);
            let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
            plain(Tensor::new(av.shape.clone(), data))
        }
        Op::Sigmoid(a) => {
            let av = val(*a);
            plain(Tensor::new(
                av.shape.clone(),
                av.data.iter().map(|&x| sigmoid(x)).collect(),
            ))
        }
        Op::Tanh(a) => {
            let av = val(*a);
            plain(Tensor::new(
                av.shape.clone(),
                av.data.iter().map(|x| x.tanh()).collect(),
            ))
        }
        Op::Glu(x) => {
            let xv = val(*x);
            let (m, w) = (xv.rows(), xv.cols());
            assert!(w % 2 == 0, "GLU needs an even width");
            let n = w / 2;
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    out.push(xv.data[i * w + j] * sigmoid(xv.data[i * w + n + j]));
                }
            }
            plain(Tensor::matrix(m, n, out))
        }
        Op::ConcatCols(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, n1, n2) = (av.rows(), av.cols(), bv.cols());
            assert_eq!(m, bv.rows());
            let mut out = Vec::with_capacity(m * (n1 + n2));
            for i in 0..m {
                out.extend_from_slice(&av.data[i * n1..(i + 1) * n1]);
                out.extend_from_slice(&bv.data[i * n2..(i + 1) * n2]);
            }
            plain(Tensor::matrix(m, n1 + n2, out))
        }
        Op::GruStep { xp, row, h, u, bh } => {
            let (xpv, hv, uv, bhv) = (val(*xp), val(*h), val(*u), val(*bh));
            let hid = hv.len();
            let w = 3 * hid;
            assert_eq!(xpv.cols(), w);
            assert_eq!(uv.shape, vec![hid, w]);
            let x = &xpv.data[row * w..(row + 1) * w];
            let mut hp = bhv.data.clone();
            for (p, &hp_in) in hv.data.iter().enumerate() {
                if hp_in == 0.0 {
                    continue;
                }
                for (o, &uw) in hp.iter_mut().zip(&uv.data[p * w..(p + 1) * w]) {
                    *o += hp_in * uw;
                }
            }
            let mut cache = vec![0.0; 4 * hid];
            let mut out = vec![0.0; hid];
            for j in 0..hid {
                let z = sigmoid(x[j] + hp[j]);
                let r = sigmoid(x[hid + j] + hp[hid + j]);
                let n = (x[2 * hid + j] + r * hp[2 * hid + j]).tanh();
                out[j] = (1.0 - z) * n + z * hv.data[j];
                cache[j] = z;
                cache[hid + j] = r;
                cache[2 * hid + j] = n;
                cache[3 * hid + j] = hp[2 * hid + j];
            }
            (Tensor::matrix(1, hid, out), cache)
        }
        Op::StackRows(rows) => {
            let n = val(rows[0]).len();
            let mut out = Vec::with_capacity(rows.len() * n);
            for &r in rows {
                let v = val(r);
                assert_eq!(v.len(), n);
                out.extend_from_slice(&v.data);
            }
            plain(Tensor::matrix(rows.len(), n, out))
        }
        Op::AttnPool { att, s } => {
            let (av, sv) = (val(*att), val(*s));
            assert_eq!(av.shape, sv.shape);
            let (t_len, c_len) = (av.rows(), av.cols());
            let mut weights = vec![0.0; t_len * c_len];
            let mut out = vec![0.0; c_len];
            for c in 0..c_len {
                let max = (0..t_len)
                    .map(|t| av.data[t * c_len + c])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for t in 0..t_len {
                    let e = (av.data[t * c_len + c] - max).exp();
                    weights[t * c_len + c] = e;
                    z += e;
                }
                for t in 0..t_len {
                    let w = weights[t * c_len + c] / z;
                    weights[t * c_len + c] = w;
                    out[c] += w * sv.data[t * c_len + c];
                }
            }
            (Tensor::matrix(1, c_len, out), weights)
        }
        Op::Bce {
            p,
            targets,
            weights,
        } => {
            let pv = val(*p);
            assert_eq!(pv.len(), targets.len());
            assert_eq!(pv.len(), weights.len());
            let total = pv
                .data
                .iter()
                .zip(targets.iter().zip(weights.iter()))
                .filter(|(_, (_, &w))| w != 0.0)
                .map(|(&p, (&t, &w))| w * bce(p, t))
                .sum();
            plain(Tensor::scalar(total))
        }
        Op::SqErr {
            x,
            targets,
            weights,
        } => {
            let xv = val(*x);
            assert_eq!(xv.len(), targets.len());
            assert_eq!(xv.len(), weights.len());
            let total = xv
                .data
                .iter()
                .zip(targets.iter().zip(weights.iter()))
                .map(|(&x, (&t, &w))| w * (x - t) * (x - t))
                .sum();
            plain(Tensor::scalar(total))
        }
        Op::LinComb(terms) => plain(Tensor::scalar(
            terms.iter().map(|(v, c)| c * val(*v).data[0]).sum(),
        )),
    }
}

#[derive(Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn record(&mut self, op: Op) -> Var {
        let (value, aux) = compute(&op, &self.nodes);
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            aux,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            aux: Vec::new(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn sparse(&mut self, x: Var, map: Arc<SparseMap>) -> Var {
        self.record(Op::Sparse(x.0, map))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::MatMul(a.0, b.0))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        self.record(Op::AddBias(a.0, bias.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Add(a.0, b.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.record(Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.record(Op::Tanh(a.0))
    }

    /// Gated linear unit over column halves: `[a | b] -> a ⊙ σ(b)`.
    pub fn glu(&mut self, x: Var) -> Var {
        self.record(Op::Glu(x.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::ConcatCols(a.0, b.0))
    }

    /// One GRU update. `xp` holds the input projections of all frames
    /// (`[T, 3H]`, gate order z | r | n); `row` selects the frame.
    pub fn gru_step(&mut self, xp: Var, row: usize, h: Var, u: Var, bh: Var) -> Var {
        self.record(Op::GruStep {
            xp: xp.0,
            row,
            h: h.0,
            u: u.0,
            bh: bh.0,
        })
    }

    /// Stacks `[1, n]` rows into `[len, n]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        self.record(Op::StackRows(rows.iter().map(|r| r.0).collect()))
    }

    /// Class-wise softmax attention over frames: `y_c = Σ_t softmax_t(att)_tc · s_tc`.
    pub fn attn_pool(&mut self, att: Var, s: Var) -> Var {
        self.record(Op::AttnPool { att: att.0, s: s.0 })
    }

    /// `Σ_i w_i · BCE(p_i, t_i)` with `p` clamped to `[ε, 1−ε]`.
    pub fn bce_sum(&mut self, p: Var, targets: Arc<Vec<f64>>, weights: Arc<Vec<f64>>) -> Var {
        self.record(Op::Bce {
            p: p.0,
            targets,
            weights,
        })
    }

    /// `Σ_i w_i · (x_i − t_i)²`.
    pub fn sq_err_sum(&mut self, x: Var, targets: Arc<Vec<f64>>, weights: Arc<Vec<f64>>) -> Var {
        self.record(Op::SqErr {
            x: x.0,
            targets,
            weights,
        })
    }

    /// Weighted sum of scalar nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Var {
        self.record(Op::LinComb(terms.iter().map(|(v, c)| (v.0, *c)).collect()))
    }

    /// Nodes whose value depends on `leaf`, in tape order.
    pub fn dependents(&self, leaf: Var) -> Vec<usize> {
        let mut hit = vec![false; self.nodes.len()];
        hit[leaf.0] = true;
        let mut out = Vec::new();
        for i in leaf.0 + 1..self.nodes.len() {
            if self.nodes[i].op.inputs().iter().any(|&j| hit[j]) {
                hit[i] = true;
                out.push(i);
            }
        }
        out
    }

    /// Value of `target` after adding `delta` to element `index` of `leaf`,
    /// recomputing only `deps` (from [`Tape::dependents`]). The tape is left
    /// unchanged.
    pub fn perturbed_value(
        &mut self,
        leaf: Var,
        index: usize,
        delta: f64,
        deps: &[usize],
        target: Var,
    ) -> f64 {
        let original = self.nodes[leaf.0].value.data[index];
        self.nodes[leaf.0].value.data[index] = original + delta;
        let mut saved = Vec::with_capacity(deps.len());
        for &i in deps {
            let (value, aux) = compute(&self.nodes[i].op, &self.nodes);
            let node = &mut self.nodes[i];
            saved.push((
                std::mem::replace(&mut node.value, value),
                std::mem::replace(&mut node.aux, aux),
            ));
        }
        let result = self.nodes[target.0].value.data[0];
        for (&i, (value, aux)) in deps.iter().zip(saved) {
            self.nodes[i].value = value;
            self.nodes[i].aux = aux;
        }
        self.nodes[leaf.0].value.data[index] = original;
        result
    }

    /// Gradients of scalar `loss` with respect to every node requiring one.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[i].requires_grad {
                return;
            }
            let buf = grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Sparse(x, map) => acc(*x, &mut |dx| map.apply_transpose(g, dx)),
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    acc(*a, &mut |da| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv.data[p * n..(p + 1) * n];
                                da[i * k + p] +=
                                    grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, &mut |db| {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av.data[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += x * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |da| {
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v)
                });
                let n = nodes[*b].value.len();
                acc(*b, &mut |db| {
                    for (i, v) in g.iter().enumerate() {
                        db[i % n] += v;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| {
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v)
                });
                acc(*b, &mut |db| {
                    db.iter_mut().zip(g).for_each(|(d, v)| *d += v)
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Glu(x) => {
                let xv = &nodes[*x].value;
                let (m, w) = (xv.rows(), xv.cols());
                let n = w / 2;
                acc(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            let a = xv.data[i * w + j];
                            let s = sigmoid(xv.data[i * w + n + j]);
                            let gv = g[i * n + j];
                            dx[i * w + j] += gv * s;
                            dx[i * w + n + j] += gv * a * s * (1.0 - s);
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (n1, n2) = (nodes[*a].value.cols(), nodes[*b].value.cols());
                let m = nodes[*a].value.rows();
                acc(*a, &mut |da| {
                    for i in 0..m {
                        for j in 0..n1 {
                            da[i * n1 + j] += g[i * (n1 + n2) + j];
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..m {
                        for j in 0..n2 {
                            db[i * n2 + j] += g[i * (n1 + n2) + n1 + j];
                        }
                    }
                });
            }
            Op::GruStep { xp, row, h, u, bh } => {
                let cache = &node.aux;
                let hv = &nodes[*h].value.data;
                let uv = &nodes[*u].value.data;
                let hid = hv.len();
                let w = 3 * hid;
                // gradient w.r.t. the gate pre-activations, shared by xp and hp
                let mut dpre = vec![0.0; w];
                let mut dh_direct = vec![0.0; hid];
                for j in 0..hid {
                    let (z, r, n, hpn) = (
                        cache[j],
                        cache[hid + j],
                        cache[2 * hid + j],
                        cache[3 * hid + j],
                    );
                    let dz = g[j] * (hv[j] - n);
                    let dn = g[j] * (1.0 - z);
                    dh_direct[j] = g[j] * z;
                    let dan = dn * (1.0 - n * n);
                    let dr = dan * hpn;
                    dpre[j] = dz * z * (1.0 - z);
                    dpre[hid + j] = dr * r * (1.0 - r);
                    dpre[2 * hid + j] = dan;
                }
                // the recurrent n path is gated by r
                let mut dhp = dpre.clone();
                for j in 0..hid {
                    dhp[2 * hid + j] *= cache[hid + j];
                }
                acc(*xp, &mut |dx| {
                    for (d, v) in dx[row * w..(row + 1) * w].iter_mut().zip(&dpre) {
                        *d += v;
                    }
                });
                acc(*bh, &mut |db| {
                    db.iter_mut().zip(&dhp).for_each(|(d, v)| *d += v)
                });
                acc(*u, &mut |du| {
                    for p in 0..hid {
                        let hp_in = hv[p];
                        if hp_in == 0.0 {
                            continue;
                        }
                        for (d, v) in du[p * w..(p + 1) * w].iter_mut().zip(&dhp) {
                            *d += hp_in * v;
                        }
                    }
                });
                acc(*h, &mut |dh| {
                    for p in 0..hid {
                        let urow = &uv[p * w..(p + 1) * w];
                        dh[p] +=
                            dh_direct[p] + urow.iter().zip(&dhp).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::StackRows(rows) => {
                let n = node.value.cols();
                for (i, r) in rows.iter().enumerate() {
                    acc(*r, &mut |dr| {
                        for j in 0..n {
                            dr[j] += g[i * n + j];
                        }
                    });
                }
            }
            Op::AttnPool { att, s } => {
                let weights = &node.aux;
                let sv = &nodes[*s].value.data;
                let c_len = node.value.len();
                let t_len = sv.len() / c_len;
                let y = &node.value.data;
                acc(*s, &mut |ds| {
                    for t in 0..t_len {
                        for c in 0..c_len {
                            ds[t * c_len + c] += g[c] * weights[t * c_len + c];
                        }
                    }
                });
                acc(*att, &mut |da| {
                    for t in 0..t_len {
                        for c in 0..c_len {
                            let i = t * c_len + c;
                            da[i] += g[c] * weights[i] * (sv[i] - y[c]);
                        }
                    }
                });
            }
            Op::Bce {
                p,
                targets,
                weights,
            } => {
                let pv = &nodes[*p].value.data;
                acc(*p, &mut |dp| {
                    for i in 0..dp.len() {
                        let (x, t, w) = (pv[i], targets[i], weights[i]);
                        if w == 0.0 || x < BCE_EPS || x > 1.0 - BCE_EPS {
                            continue;
                        }
                        dp[i] += g[0] * w * ((1.0 - t) / (1.0 - x) - t / x);
                    }
                });
            }
            Op::SqErr {
                x,
                targets,
                weights,
            } => {
                let xv = &nodes[*x].value.data;
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[0] * 2.0 * weights[i] * (xv[i] - targets[i]);
                    }
                });
            }
            Op::LinComb(terms) => {
                for (v, c) in terms {
                    acc(*v, &mut |dv| dv[0] += g[0] * c);
                }
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}
