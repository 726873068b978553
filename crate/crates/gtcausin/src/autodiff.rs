//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value; node ids are
//! topologically ordered by construction, so the backward sweep is a single
//! reverse pass. Gradients are exact analytic rules, accumulated in a fixed
//! order so results are bit-identical across runs and thread counts.

use crate::error::{input_err, Error, Result};
use crate::graph::RandomWalks;
use crate::params::ParamStore;
use crate::tensor::{self, Tensor};
use std::sync::Arc;

/// Handle to one tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    /// `a · bᵀ`.
    MatmulTB(usize, usize),
    Add(usize, usize),
    /// Adds a 1×n row vector to every row of an m×n tensor.
    AddRow(usize, usize),
    /// Repeats a 1×n row m times.
    BroadcastRows(usize),
    Scale(usize, f64),
    Shift(usize),
    Relu(usize),
    SoftmaxRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        src: usize,
        start: usize,
    },
    Reshape(usize),
    /// Per-timestep channel mix: out[n,q,t] = Σ_p w[q,p] · x[n,p,t].
    ChannelDense {
        x: usize,
        w: usize,
    },
    /// out[n,q,t] = x[n,q,t] + b[q].
    AddChannelBias {
        x: usize,
        b: usize,
    },
    /// Dilated causal convolution over the trailing time axis.
    DilatedConv {
        x: usize,
        theta: usize,
        dilation: usize,
    },
    /// Bidirectional random-walk diffusion, applied per timestep.
    /// `fwd_powers[k]` holds (forward walk)^k applied to x, flattened to
    /// N×(P·T); likewise `rev_powers` for the reverse walk.
    Diffusion {
        x: usize,
        theta: usize,
        walks: Arc<RandomWalks>,
        fwd_powers: Vec<Tensor>,
        rev_powers: Vec<Tensor>,
    },
    /// Σ mask · |pred − truth| against constant truth/mask tensors.
    MaskedAbsSum {
        pred: usize,
        truth: Tensor,
        mask: Tensor,
    },
    /// Σ x ⊙ w for a constant weight tensor; scalar output.
    DotConst {
        x: usize,
        weights: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<String>,
}

/// Gradients from one backward sweep, indexed by node id.
pub struct Gradients {
    by_id: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_id[var.id].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.id].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.id].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param,
        });
        Var {
            id: self.nodes.len() - 1,
        }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Leaf that gradients flow into (an optimization target).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// Leaf treated as fixed data; backward never visits it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// Leaf bound to a named parameter; its gradient is routed back to the
    /// store by [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        Ok(self.push(value, Op::Leaf, true, Some(name.to_string())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(value, Op::Matmul(a.id, b.id), needs, None))
    }

    pub fn matmul_transpose_b(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul_transpose_b(self.value(a), self.value(b))?;
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(value, Op::MatmulTB(a.id, b.id), needs, None))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return input_err(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(value, Op::Add(a.id, b.id), needs, None))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a).to_vec(), self.shape(row).to_vec());
        if sa.len() != 2 || sr != [1, sa[1]] {
            return input_err(format!("add_row shape mismatch: {sa:?} + {sr:?}"));
        }
        let mut value = self.value(a).clone();
        let n = sa[1];
        for i in 0..sa[0] {
            for j in 0..n {
                let v = value.at2(i, j) + self.nodes[row.id].value.at2(0, j);
                value.set2(i, j, v);
            }
        }
        let needs = self.needs(a.id) || self.needs(row.id);
        Ok(self.push(value, Op::AddRow(a.id, row.id), needs, None))
    }

    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != 1 {
            return input_err(format!("broadcast_rows wants a 1×n tensor, got {s:?}"));
        }
        let n = s[1];
        let row = self.value(a).data().to_vec();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&row);
        }
        let needs = self.needs(a.id);
        Ok(self.push(
            Tensor::new(&[m, n], data)?,
            Op::BroadcastRows(a.id),
            needs,
            None,
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Numeric(format!("non-finite scale factor {c}")));
        }
        let mut value = self.value(a).clone();
        value.scale_assign(c);
        let needs = self.needs(a.id);
        Ok(self.push(value, Op::Scale(a.id, c), needs, None))
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Numeric(format!("non-finite shift {c}")));
        }
        let mut value = self.value(a).clone();
        for v in value.data_mut() {
            *v += c;
        }
        let needs = self.needs(a.id);
        Ok(self.push(value, Op::Shift(a.id), needs, None))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for v in value.data_mut() {
            *v = v.max(0.0);
        }
        let needs = self.needs(a.id);
        Ok(self.push(value, Op::Relu(a.id), needs, None))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = tensor::softmax_rows(self.value(a))?;
        let needs = self.needs(a.id);
        Ok(self.push(value, Op::SoftmaxRows(a.id), needs, None))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let value = tensor::concat_rows(&tensors)?;
        let needs = parts.iter().any(|v| self.needs(v.id));
        let ids = parts.iter().map(|v| v.id).collect();
        Ok(self.push(value, Op::ConcatRows(ids), needs, None))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let value = tensor::concat_cols(&tensors)?;
        let needs = parts.iter().any(|v| self.needs(v.id));
        let ids = parts.iter().map(|v| v.id).collect();
        Ok(self.push(value, Op::ConcatCols(ids), needs, None))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start + len > s[0] {
            return input_err(format!(
                "slice_rows [{start}, {start}+{len}) out of range for {s:?}"
            ));
        }
        let n = s[1];
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let needs = self.needs(a.id);
        Ok(self.push(
            Tensor::new(&[len, n], data)?,
            Op::SliceRows { src: a.id, start },
            needs,
            None,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let needs = self.needs(a.id);
        Ok(self.push(value, Op::Reshape(a.id), needs, None))
    }

    pub fn channel_dense(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 2 || sw[1] != sx[1] {
            return input_err(format!("channel_dense shape mismatch: x {sx:?}, w {sw:?}"));
        }
        let (n, p, t) = (sx[0], sx[1], sx[2]);
        let q = sw[0];
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; n * q * t];
        crate::par::for_each_chunk_mut(&mut out, q * t, |ni, chunk| {
            let xn = &xd[ni * p * t..(ni + 1) * p * t];
            for qi in 0..q {
                for pi in 0..p {
                    let wv = wd[qi * p + pi];
                    if wv == 0.0 {
                        continue;
                    }
                    let xrow = &xn[pi * t..(pi + 1) * t];
                    let orow = &mut chunk[qi * t..(qi + 1) * t];
                    for (o, &xv) in orow.iter_mut().zip(xrow.iter()) {
                        *o += wv * xv;
                    }
                }
            }
        });
        let needs = self.needs(x.id) || self.needs(w.id);
        Ok(self.push(
            Tensor::new(&[n, q, t], out)?,
            Op::ChannelDense { x: x.id, w: w.id },
            needs,
            None,
        ))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 3 || sb != [sx[1]] {
            return input_err(format!(
                "add_channel_bias shape mismatch: x {sx:?}, b {sb:?}"
            ));
        }
        let (n, q, t) = (sx[0], sx[1], sx[2]);
        let mut value = self.value(x).clone();
        let bd = self.nodes[b.id].value.data().to_vec();
        for ni in 0..n {
            for qi in 0..q {
                let base = (ni * q + qi) * t;
                for ti in 0..t {
                    value.data_mut()[base + ti] += bd[qi];
                }
            }
        }
        let needs = self.needs(x.id) || self.needs(b.id);
        Ok(self.push(value, Op::AddChannelBias { x: x.id, b: b.id }, needs, None))
    }

    /// Causal convolution: out[n,q,t] = Σ_{p,k} θ[q,p,k] · x[n,p,t−d·k],
    /// with negative times reading as zero.
    pub fn dilated_conv(&mut self, x: Var, theta: Var, dilation: usize) -> Result<Var> {
        let (sx, st) = (self.shape(x).to_vec(), self.shape(theta).to_vec());
        if sx.len() != 3 || st.len() != 3 || st[1] != sx[1] {
            return input_err(format!("dilated_conv shape mismatch: x {sx:?}, θ {st:?}"));
        }
        if dilation == 0 {
            return input_err("dilation must be at least 1");
        }
        let (n, p, t) = (sx[0], sx[1], sx[2]);
        let (q, k) = (st[0], st[2]);
        let xd = self.value(x).data();
        let td = self.value(theta).data();
        let mut out = vec![0.0; n * q * t];
        crate::par::for_each_chunk_mut(&mut out, q * t, |ni, chunk| {
            let xn = &xd[ni * p * t..(ni + 1) * p * t];
            for qi in 0..q {
                let orow = &mut chunk[qi * t..(qi + 1) * t];
                for pi in 0..p {
                    let xrow = &xn[pi * t..(pi + 1) * t];
                    for ki in 0..k {
                        let w = td[(qi * p + pi) * k + ki];
                        if w == 0.0 {
                            continue;
                        }
                        let lag = dilation * ki;
                        for ti in lag..t {
                            orow[ti] += w * xrow[ti - lag];
                        }
                    }
                }
            }
        });
        let needs = self.needs(x.id) || self.needs(theta.id);
        Ok(self.push(
            Tensor::new(&[n, q, t], out)?,
            Op::DilatedConv {
                x: x.id,
                theta: theta.id,
                dilation,
            },
            needs,
            None,
        ))
    }

    /// Spatial diffusion per timestep: for every (p, t) column,
    /// out[:,q,t] = Σ_k θ[q,p,k,0]·F^k x[:,p,t] + θ[q,p,k,1]·R^k x[:,p,t]
    /// where F and R are the forward and reverse walk matrices.
    pub fn diffusion(&mut self, x: Var, theta: Var, walks: &Arc<RandomWalks>) -> Result<Var> {
        let (sx, st) = (self.shape(x).to_vec(), self.shape(theta).to_vec());
        if sx.len() != 3 || st.len() != 4 || st[1] != sx[1] || st[3] != 2 {
            return input_err(format!("diffusion shape mismatch: x {sx:?}, θ {st:?}"));
        }
        let (n, p, t) = (sx[0], sx[1], sx[2]);
        if walks.node_count() != n {
            return input_err(format!(
                "diffusion walks cover {} nodes, input has {n}",
                walks.node_count()
            ));
        }
        let (q, k_max) = (st[0], st[2]);
        // Powers of each walk applied to x, as N×(P·T) matrices.
        let x2d = self.value(x).reshaped(&[n, p * t])?;
        let mut fwd_powers = Vec::with_capacity(k_max);
        let mut rev_powers = Vec::with_capacity(k_max);
        fwd_powers.push(x2d.clone());
        rev_powers.push(x2d);
        for _ in 1..k_max {
            let next_f = tensor::matmul(&walks.forward, fwd_powers.last().unwrap())?;
            let next_r = tensor::matmul(&walks.reverse, rev_powers.last().unwrap())?;
            fwd_powers.push(next_f);
            rev_powers.push(next_r);
        }
        let td = self.value(theta).data().to_vec();
        let mut out = vec![0.0; n * q * t];
        {
            let fp: Vec<&[f64]> = fwd_powers.iter().map(|m| m.data()).collect();
            let rp: Vec<&[f64]> = rev_powers.iter().map(|m| m.data()).collect();
            crate::par::for_each_chunk_mut(&mut out, q * t, |ni, chunk| {
                for qi in 0..q {
                    let orow = &mut chunk[qi * t..(qi + 1) * t];
                    for pi in 0..p {
                        for ki in 0..k_max {
                            let base = ((qi * p + pi) * k_max + ki) * 2;
                            let (tf, tr) = (td[base], td[base + 1]);
                            let col = ni * p * t + pi * t;
                            if tf != 0.0 {
                                let src = &fp[ki][col..col + t];
                                for (o, &v) in orow.iter_mut().zip(src.iter()) {
                                    *o += tf * v;
                                }
                            }
                            if tr != 0.0 {
                                let src = &rp[ki][col..col + t];
                                for (o, &v) in orow.iter_mut().zip(src.iter()) {
                                    *o += tr * v;
                                }
                            }
                        }
                    }
                }
            });
        }
        let needs = self.needs(x.id) || self.needs(theta.id);
        Ok(self.push(
            Tensor::new(&[n, q, t], out)?,
            Op::Diffusion {
                x: x.id,
                theta: theta.id,
                walks: Arc::clone(walks),
                fwd_powers,
                rev_powers,
            },
            needs,
            None,
        ))
    }

    /// Σ mask · |pred − truth|; the reduction behind the masked training
    /// loss. `truth` and `mask` are fixed data.
    pub fn masked_abs_sum(&mut self, pred: Var, truth: &Tensor, mask: &Tensor) -> Result<Var> {
        if self.shape(pred) != truth.shape() || self.shape(pred) != mask.shape() {
            return input_err(format!(
                "masked_abs_sum shapes differ: pred {:?}, truth {:?}, mask {:?}",
                self.shape(pred),
                truth.shape(),
                mask.shape()
            ));
        }
        let mut sum = 0.0;
        for ((&p, &y), &m) in self
            .value(pred)
            .data()
            .iter()
            .zip(truth.data())
            .zip(mask.data())
        {
            sum += m * (p - y).abs();
        }
        let needs = self.needs(pred.id);
        Ok(self.push(
            Tensor::scalar(sum),
            Op::MaskedAbsSum {
                pred: pred.id,
                truth: truth.clone(),
                mask: mask.clone(),
            },
            needs,
            None,
        ))
    }

    /// Σ x ⊙ w against a fixed weight tensor; projects any tensor to a
    /// scalar so gradient checks can target one number.
    pub fn dot_const(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        if self.shape(x) != weights.shape() {
            return input_err(format!(
                "dot_const shapes differ: {:?} vs {:?}",
                self.shape(x),
                weights.shape()
            ));
        }
        let sum: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let needs = self.needs(x.id);
        Ok(self.push(
            Tensor::scalar(sum),
            Op::DotConst {
                x: x.id,
                weights: weights.clone(),
            },
            needs,
            None,
        ))
    }

    /// Reverse sweep from a scalar target; returns per-node gradients.
    pub fn backward(&self, target: Var) -> Result<Gradients> {
        if self.value(target).len() != 1 {
            return input_err(format!(
                "backward target must be scalar, got shape {:?}",
                self.shape(target)
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[target.id] = Some(Tensor::scalar(1.0));
        for id in (0..=target.id).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let grad = grads[id].take().unwrap();
            self.backprop_node(id, &grad, &mut grads)?;
            grads[id] = Some(grad);
        }
        Ok(Gradients { by_id: grads })
    }

    /// Backward sweep that also adds parameter-leaf gradients into `store`,
    /// scaled by `scale`.
    pub fn backward_into(&self, target: Var, store: &mut ParamStore, scale: f64) -> Result<()> {
        let grads = self.backward(target)?;
        self.accumulate_params(&grads, store, scale)
    }

    /// Adds parameter-leaf gradients from `grads` into `store`.
    pub fn accumulate_params(
        &self,
        grads: &Gradients,
        store: &mut ParamStore,
        scale: f64,
    ) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            if let (Some(name), Some(g)) = (&node.param, &grads.by_id[id]) {
                if scale == 1.0 {
                    store.accumulate_grad(name, g)?;
                } else {
                    let mut scaled = g.clone();
                    scaled.scale_assign(scale);
                    store.accumulate_grad(name, &scaled)?;
                }
            }
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        id: usize,
        grad: &Tensor,
        grads: &mut Vec<Option<Tensor>>,
    ) -> Result<()> {
        let add_to =
            |grads: &mut Vec<Option<Tensor>>, pid: usize, delta: Tensor| match &mut grads[pid] {
                Some(g) => g.add_assign(&delta),
                slot => *slot = Some(delta),
            };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    let d = tensor::matmul_transpose_b(grad, &self.nodes[*b].value)?;
                    add_to(grads, *a, d);
                }
                if self.needs(*b) {
                    let at = self.nodes[*a].value.transposed()?;
                    let d = tensor::matmul(&at, grad)?;
                    add_to(grads, *b, d);
                }
            }
            Op::MatmulTB(a, b) => {
                if self.needs(*a) {
                    let d = tensor::matmul(grad, &self.nodes[*b].value)?;
                    add_to(grads, *a, d);
                }
                if self.needs(*b) {
                    let gt = grad.transposed()?;
                    let d = tensor::matmul(&gt, &self.nodes[*a].value)?;
                    add_to(grads, *b, d);
                }
            }
            Op::Add(a, b) => {
                for pid in [*a, *b] {
                    if self.needs(pid) {
                        add_to(grads, pid, grad.clone());
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*a) {
                    add_to(grads, *a, grad.clone());
                }
                if self.needs(*row) {
                    let (m, n) = (grad.rows(), grad.cols());
                    let mut d = vec![0.0; n];
                    for i in 0..m {
                        for (j, dj) in d.iter_mut().enumerate() {
                            *dj += grad.at2(i, j);
                        }
                    }
                    add_to(grads, *row, Tensor::from_parts(vec![1, n], d));
                }
            }
            Op::BroadcastRows(a) => {
                if self.needs(*a) {
                    let (m, n) = (grad.rows(), grad.cols());
                    let mut d = vec![0.0; n];
                    for i in 0..m {
                        for (j, dj) in d.iter_mut().enumerate() {
                            *dj += grad.at2(i, j);
                        }
                    }
                    add_to(grads, *a, Tensor::from_parts(vec![1, n], d));
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let mut d = grad.clone();
                    d.scale_assign(*c);
                    add_to(grads, *a, d);
                }
            }
            Op::Shift(a) => {
                if self.needs(*a) {
                    add_to(grads, *a, grad.clone());
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let mut d = grad.clone();
                    for (dv, &xv) in d.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    add_to(grads, *a, d);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    let s = &self.nodes[id].value;
                    let (m, n) = (s.rows(), s.cols());
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let srow = &s.data()[i * n..(i + 1) * n];
                        let grow = &grad.data()[i * n..(i + 1) * n];
                        let dot: f64 = srow.iter().zip(grow.iter()).map(|(&a, &b)| a * b).sum();
                        let drow = &mut d[i * n..(i + 1) * n];
                        for j in 0..n {
                            drow[j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    add_to(grads, *a, Tensor::from_parts(vec![m, n], d));
                }
            }
            Op::ConcatRows(parts) => {
                let n = grad.cols();
                let mut start = 0;
                for pid in parts {
                    let rows = self.nodes[*pid].value.rows();
                    if self.needs(*pid) {
                        let data = grad.data()[start * n..(start + rows) * n].to_vec();
                        add_to(grads, *pid, Tensor::from_parts(vec![rows, n], data));
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let m = grad.rows();
                let total = grad.cols();
                let mut start = 0;
                for pid in parts {
                    let cols = self.nodes[*pid].value.cols();
                    if self.needs(*pid) {
                        let mut data = Vec::with_capacity(m * cols);
                        for i in 0..m {
                            data.extend_from_slice(
                                &grad.data()[i * total + start..i * total + start + cols],
                            );
                        }
                        add_to(grads, *pid, Tensor::from_parts(vec![m, cols], data));
                    }
                    start += cols;
                }
            }
            Op::SliceRows { src, start } => {
                if self.needs(*src) {
                    let (rows, n) = (grad.rows(), grad.cols());
                    let full = self.nodes[*src].value.rows();
                    let mut d = Tensor::zeros(&[full, n]);
                    d.data_mut()[start * n..(start + rows) * n].copy_from_slice(grad.data());
                    add_to(grads, *src, d);
                }
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    let d = grad.reshaped(self.nodes[*a].value.shape())?;
                    add_to(grads, *a, d);
                }
            }
            Op::ChannelDense { x, w } => {
                let sx = self.nodes[*x].value.shape();
                let (n, p, t) = (sx[0], sx[1], sx[2]);
                let q = self.nodes[*w].value.shape()[0];
                let gd = grad.data();
                if self.needs(*x) {
                    let wd = self.nodes[*w].value.data();
                    let mut dx = vec![0.0; n * p * t];
                    crate::par::for_each_chunk_mut(&mut dx, p * t, |ni, chunk| {
                        let gn = &gd[ni * q * t..(ni + 1) * q * t];
                        for pi in 0..p {
                            let drow = &mut chunk[pi * t..(pi + 1) * t];
                            for qi in 0..q {
                                let wv = wd[qi * p + pi];
                                if wv == 0.0 {
                                    continue;
                                }
                                let grow = &gn[qi * t..(qi + 1) * t];
                                for (o, &gv) in drow.iter_mut().zip(grow.iter()) {
                                    *o += wv * gv;
                                }
                            }
                        }
                    });
                    add_to(grads, *x, Tensor::from_parts(vec![n, p, t], dx));
                }
                if self.needs(*w) {
                    let xd = self.nodes[*x].value.data();
                    let mut dw = vec![0.0; q * p];
                    for ni in 0..n {
                        for qi in 0..q {
                            let grow = &gd[(ni * q + qi) * t..(ni * q + qi + 1) * t];
                            for pi in 0..p {
                                let xrow = &xd[(ni * p + pi) * t..(ni * p + pi + 1) * t];
                                let mut acc = 0.0;
                                for (gv, xv) in grow.iter().zip(xrow.iter()) {
                                    acc += gv * xv;
                                }
                                dw[qi * p + pi] += acc;
                            }
                        }
                    }
                    add_to(grads, *w, Tensor::from_parts(vec![q, p], dw));
                }
            }
            Op::AddChannelBias { x, b } => {
                if self.needs(*x) {
                    add_to(grads, *x, grad.clone());
                }
                if self.needs(*b) {
                    let sx = self.nodes[*x].value.shape();
                    let (n, q, t) = (sx[0], sx[1], sx[2]);
                    let mut db = vec![0.0; q];
                    for ni in 0..n {
                        for (qi, dq) in db.iter_mut().enumerate() {
                            let base = (ni * q + qi) * t;
                            for ti in 0..t {
                                *dq += grad.data()[base + ti];
                            }
                        }
                    }
                    add_to(grads, *b, Tensor::from_parts(vec![q], db));
                }
            }
            Op::DilatedConv { x, theta, dilation } => {
                let sx = self.nodes[*x].value.shape();
                let (n, p, t) = (sx[0], sx[1], sx[2]);
                let st = self.nodes[*theta].value.shape();
                let (q, k) = (st[0], st[2]);
                let gd = grad.data();
                if self.needs(*x) {
                    let td = self.nodes[*theta].value.data();
                    let mut dx = vec![0.0; n * p * t];
                    crate::par::for_each_chunk_mut(&mut dx, p * t, |ni, chunk| {
                        let gn = &gd[ni * q * t..(ni + 1) * q * t];
                        for pi in 0..p {
                            let drow = &mut chunk[pi * t..(pi + 1) * t];
                            for qi in 0..q {
                                let grow = &gn[qi * t..(qi + 1) * t];
                                for ki in 0..k {
                                    let w = td[(qi * p + pi) * k + ki];
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let lag = dilation * ki;
                                    for ti in lag..t {
                                        drow[ti - lag] += w * grow[ti];
                                    }
                                }
                            }
                        }
                    });
                    add_to(grads, *x, Tensor::from_parts(vec![n, p, t], dx));
                }
                if self.needs(*theta) {
                    let xd = self.nodes[*x].value.data();
                    let mut dt = vec![0.0; q * p * k];
                    for ni in 0..n {
                        for qi in 0..q {
                            let grow = &gd[(ni * q + qi) * t..(ni * q + qi + 1) * t];
                            for pi in 0..p {
                                let xrow = &xd[(ni * p + pi) * t..(ni * p + pi + 1) * t];
                                for ki in 0..k {
                                    let lag = dilation * ki;
                                    let mut acc = 0.0;
                                    for ti in lag..t {
                                        acc += grow[ti] * xrow[ti - lag];
                                    }
                                    dt[(qi * p + pi) * k + ki] += acc;
                                }
                            }
                        }
                    }
                    add_to(grads, *theta, Tensor::from_parts(vec![q, p, k], dt));
                }
            }
            Op::Diffusion {
                x,
                theta,
                walks,
                fwd_powers,
                rev_powers,
            } => {
                let sx = self.nodes[*x].value.shape();
                let (n, p, t) = (sx[0], sx[1], sx[2]);
                let st = self.nodes[*theta].value.shape();
                let (q, k_max) = (st[0], st[2]);
                let gd = grad.data();
                if self.needs(*theta) {
                    let mut dt = vec![0.0; q * p * k_max * 2];
                    for ni in 0..n {
                        for qi in 0..q {
                            let grow = &gd[(ni * q + qi) * t..(ni * q + qi + 1) * t];
                            for pi in 0..p {
                                let col = ni * p * t + pi * t;
                                for ki in 0..k_max {
                                    let f = &fwd_powers[ki].data()[col..col + t];
                                    let r = &rev_powers[ki].data()[col..col + t];
                                    let mut af = 0.0;
                                    let mut ar = 0.0;
                                    for ((gv, fv), rv) in grow.iter().zip(f).zip(r) {
                                        af += gv * fv;
                                        ar += gv * rv;
                                    }
                                    let base = ((qi * p + pi) * k_max + ki) * 2;
                                    dt[base] += af;
                                    dt[base + 1] += ar;
                                }
                            }
                        }
                    }
                    add_to(grads, *theta, Tensor::from_parts(vec![q, p, k_max, 2], dt));
                }
                if self.needs(*x) {
                    let td = self.nodes[*theta].value.data();
                    // Per-step channel mixes of the output gradient:
                    // E_k[n,p,t] = Σ_q θ[q,p,k,dir] · grad[n,q,t].
                    let mix = |dir: usize, ki: usize| -> Tensor {
                        let mut e = vec![0.0; n * p * t];
                        for ni in 0..n {
                            for pi in 0..p {
                                let erow = &mut e[(ni * p + pi) * t..(ni * p + pi + 1) * t];
                                for qi in 0..q {
                                    let w = td[((qi * p + pi) * k_max + ki) * 2 + dir];
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let grow = &gd[(ni * q + qi) * t..(ni * q + qi + 1) * t];
                                    for (o, &gv) in erow.iter_mut().zip(grow.iter()) {
                                        *o += w * gv;
                                    }
                                }
                            }
                        }
                        Tensor::from_parts(vec![n, p * t], e)
                    };
                    // Σ_k (Mᵀ)^k E_k by Horner evaluation from the top step.
                    let mut dx = Tensor::zeros(&[n, p * t]);
                    for (dir, walk) in [(0, &walks.forward), (1, &walks.reverse)] {
                        let wt = walk.transposed()?;
                        let mut acc = mix(dir, k_max - 1);
                        for ki in (0..k_max - 1).rev() {
                            acc = tensor::matmul(&wt, &acc)?;
                            acc.add_assign(&mix(dir, ki));
                        }
                        dx.add_assign(&acc);
                    }
                    add_to(grads, *x, dx.reshaped(&[n, p, t])?);
                }
            }
            Op::MaskedAbsSum { pred, truth, mask } => {
                if self.needs(*pred) {
                    let seed = grad.data()[0];
                    let pv = self.nodes[*pred].value.data();
                    let mut d = vec![0.0; pv.len()];
                    for (i, dv) in d.iter_mut().enumerate() {
                        let diff = pv[i] - truth.data()[i];
                        // Subgradient 0 at the kink.
                        let sign = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *dv = seed * mask.data()[i] * sign;
                    }
                    add_to(grads, *pred, Tensor::from_parts(truth.shape().to_vec(), d));
                }
            }
            Op::DotConst { x, weights } => {
                if self.needs(*x) {
                    let seed = grad.data()[0];
                    let mut d = weights.clone();
                    d.scale_assign(seed);
                    add_to(grads, *x, d);
                }
            }
        }
        Ok(())
    }
}
