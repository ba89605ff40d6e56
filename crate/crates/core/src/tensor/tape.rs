use super::{check_shape, DiffTensor};
use crate::error::{CdnetError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so the output keeps the input length.
    Same,
    /// No padding; output length is `length - k + 1`.
    Valid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1d {
        input: usize,
        kernel: usize,
        bias: usize,
        pad_left: usize,
        pad_right: usize,
    },
    Dense {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Relu(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    Exp(usize),
    Ln(usize),
    ClampMin(usize, f64),
    Softmax(usize),
    Select(usize, usize),
    Stack(Vec<usize>),
    ChannelMean(usize),
    L2Normalize(usize, f64),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations for one forward pass.
///
/// A tape supports exactly one [`backward`](Tape::backward); build a new tape
/// for every forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    consumed: bool,
    trace: Vec<usize>,
}

fn shape_err(op: &'static str, detail: String) -> CdnetError {
    CdnetError::Shape { op, detail }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        check_shape("constant", shape, values.len())?;
        Ok(self.push(shape.to_vec(), values, Op::Leaf, false))
    }

    /// Records a copy of `tensor`; its gradient is tracked when the tensor
    /// requires one.
    pub fn leaf(&mut self, tensor: &DiffTensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    pub fn bind(&mut self, params: &[DiffTensor]) -> Vec<Var> {
        params.iter().map(|p| self.leaf(p)).collect()
    }

    /// Adds the tape gradient of each bound var into its tensor. Tensors that
    /// do not require a gradient are left untouched.
    pub fn write_grads(&self, vars: &[Var], params: &mut [DiffTensor]) {
        for (v, p) in vars.iter().zip(params.iter_mut()) {
            if !p.requires_grad() {
                continue;
            }
            if let Some(g) = self.grad(*v) {
                for (dst, src) in p.grad_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element of `v`; intended for scalar results.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Gradient of the backward root with respect to `v`, if one reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads
            .get(v.0)
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
    }

    /// Node indices whose adjoints were replayed, in replay order.
    pub fn backward_trace(&self) -> &[usize] {
        &self.trace
    }

    // ---------------------------------------------------------------- ops

    /// Cross-correlation of `input` [c_in, len] with `kernel`
    /// [c_out, c_in, k] plus a per-channel `bias` [c_out].
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
            return Err(shape_err(
                "conv1d",
                format!("expected input [c_in, len], kernel [c_out, c_in, k], bias [c_out]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        let (c_in, len) = (xs[0], xs[1]);
        let (c_out, kc_in, k) = (ws[0], ws[1], ws[2]);
        if kc_in != c_in || bs[0] != c_out {
            return Err(shape_err(
                "conv1d",
                format!("input {xs:?}, kernel {ws:?} and bias {bs:?} disagree on channels"),
            ));
        }
        if k > len {
            return Err(shape_err(
                "conv1d",
                format!("kernel size {k} exceeds input length {len}"),
            ));
        }
        let (pad_left, pad_right) = match padding {
            Padding::Same => ((k - 1) / 2, k - 1 - (k - 1) / 2),
            Padding::Valid => (0, 0),
        };
        let padded = pad_rows(self.value(input), c_in, len, pad_left, pad_right);
        let lp = len + pad_left + pad_right;
        let lo = lp - k + 1;
        let w = self.value(kernel);
        let b = self.value(bias);
        let mut out = vec![0.0; c_out * lo];
        for (o, row) in out.chunks_exact_mut(lo).enumerate() {
            row.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..c_in {
                let src = &padded[c * lp..(c + 1) * lp];
                let taps = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                for (j, &wk) in taps.iter().enumerate() {
                    axpy(row, wk, &src[j..j + lo]);
                }
            }
        }
        let rg = self.rg(&[input.0, kernel.0, bias.0]);
        Ok(self.push(
            vec![c_out, lo],
            out,
            Op::Conv1d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                pad_left,
                pad_right,
            },
            rg,
        ))
    }

    /// Affine map `weight · input + bias` with `weight` [m, n].
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = self.value(input).len();
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if ws.len() != 2 || ws[1] != n || bs.len() != 1 || bs[0] != ws[0] {
            return Err(shape_err(
                "dense",
                format!("input of {n} values, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let m = ws[0];
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let out: Vec<f64> = (0..m)
            .map(|i| b[i] + dot(&w[i * n..(i + 1) * n], x))
            .collect();
        let rg = self.rg(&[input.0, weight.0, bias.0]);
        Ok(self.push(
            vec![m],
            out,
            Op::Dense {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x.0), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x.0), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.map(x, Op::Ln(x.0), f64::ln)
    }

    /// `max(x, floor)` elementwise; no gradient flows where the floor binds.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.map(x, Op::ClampMin(x.0, floor), |v| v.max(floor))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map(x, Op::Scale(x.0, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        self.map(x, Op::Shift(x.0), |v| v + offset)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let node = &self.nodes[x.0];
        let value = node.value.iter().map(|&v| f(v)).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, Op::Div(a.0, b.0), |x, y| x / y)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(shape, value, op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x.0]);
        self.push(vec![1], vec![s], Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x.0]);
        self.push(vec![1], vec![m], Op::Mean(x.0), rg)
    }

    /// Inner product of two equally sized tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err(
                "dot",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let d = dot(self.value(a), self.value(b));
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(vec![1], vec![d], Op::Dot(a.0, b.0), rg))
    }

    /// Softmax over all elements of `x`.
    pub fn softmax(&mut self, x: Var) -> Var {
        let node = &self.nodes[x.0];
        let max = node.value.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = node.value.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, out, Op::Softmax(x.0), rg)
    }

    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let v = self.value(x);
        let Some(&e) = v.get(index) else {
            return Err(shape_err(
                "select",
                format!("index {index} out of {} values", v.len()),
            ));
        };
        let rg = self.rg(&[x.0]);
        Ok(self.push(vec![1], vec![e], Op::Select(x.0, index), rg))
    }

    /// Stacks scalar vars into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(shape_err("stack", "nothing to stack".into()));
        }
        let mut out = Vec::with_capacity(scalars.len());
        for s in scalars {
            let v = self.value(*s);
            if v.len() != 1 {
                return Err(shape_err(
                    "stack",
                    format!("element of shape {:?} is not scalar", self.shape(*s)),
                ));
            }
            out.push(v[0]);
        }
        let ids: Vec<usize> = scalars.iter().map(|s| s.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(vec![scalars.len()], out, Op::Stack(ids), rg))
    }

    /// Mean over the length axis of a [channels, len] tensor.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err(
                "channel_mean",
                format!("expected [channels, len], got {shape:?}"),
            ));
        }
        let (c, l) = (shape[0], shape[1]);
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(l)
            .map(|row| row.iter().sum::<f64>() / l as f64)
            .collect();
        let rg = self.rg(&[x.0]);
        Ok(self.push(vec![c], out, Op::ChannelMean(x.0), rg))
    }

    /// `x / sqrt(|x|^2 + eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let node = &self.nodes[x.0];
        let n = (dot(&node.value, &node.value) + eps).sqrt();
        let out = node.value.iter().map(|v| v / n).collect();
        let (shape, rg) = (node.shape.clone(), node.requires_grad);
        self.push(shape, out, Op::L2Normalize(x.0, eps), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape("reshape", shape, self.value(x).len())?;
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x.0]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x.0), rg))
    }

    // ----------------------------------------------------------- backward

    /// Propagates d(root)/d(node) to every differentiable node.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(CdnetError::TapeConsumed);
        }
        let root_shape = &self.nodes[root.0].shape;
        if self.nodes[root.0].value.len() != 1 {
            return Err(CdnetError::NonScalarRoot(root_shape.clone()));
        }
        self.consumed = true;
        self.grads = vec![Vec::new(); self.nodes.len()];
        self.grads[root.0] = vec![1.0];
        self.trace.clear();

        for id in (0..=root.0).rev() {
            if self.grads[id].is_empty() || !self.nodes[id].requires_grad {
                continue;
            }
            self.trace.push(id);
            let g = std::mem::take(&mut self.grads[id]);
            self.adjoint(id, &g);
            self.grads[id] = g;
        }
        Ok(())
    }

    fn adjoint(&mut self, id: usize, g: &[f64]) {
        let nodes = std::mem::take(&mut self.nodes);
        let val = |i: usize| nodes[i].value.as_slice();
        let out = nodes[id].value.as_slice();
        match &nodes[id].op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                kernel,
                bias,
                pad_left,
                pad_right,
            } => {
                let (c_in, len) = (nodes[input].shape[0], nodes[input].shape[1]);
                let k = nodes[kernel].shape[2];
                let lp = len + pad_left + pad_right;
                let lo = lp - k + 1;
                let w = val(kernel);
                if let Some(gb) = self.acc_with(&nodes, bias) {
                    for (o, row) in g.chunks_exact(lo).enumerate() {
                        gb[o] += row.iter().sum::<f64>();
                    }
                }
                if nodes[kernel].requires_grad {
                    let padded = pad_rows(val(input), c_in, len, pad_left, pad_right);
                    let gw = self.acc_with(&nodes, kernel).expect("kernel requires grad");
                    for (o, grow) in g.chunks_exact(lo).enumerate() {
                        for c in 0..c_in {
                            let src = &padded[c * lp..(c + 1) * lp];
                            let base = (o * c_in + c) * k;
                            for j in 0..k {
                                gw[base + j] += dot(grow, &src[j..j + lo]);
                            }
                        }
                    }
                }
                if nodes[input].requires_grad {
                    let mut gp = vec![0.0; c_in * lp];
                    for (o, grow) in g.chunks_exact(lo).enumerate() {
                        for c in 0..c_in {
                            let dst = &mut gp[c * lp..(c + 1) * lp];
                            let taps = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                            for (j, &wk) in taps.iter().enumerate() {
                                axpy(&mut dst[j..j + lo], wk, grow);
                            }
                        }
                    }
                    let gx = self.acc_with(&nodes, input).expect("input requires grad");
                    for c in 0..c_in {
                        let src = &gp[c * lp + pad_left..c * lp + pad_left + len];
                        for (d, s) in gx[c * len..(c + 1) * len].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            &Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = val(input);
                let w = val(weight);
                let n = x.len();
                if let Some(gb) = self.acc_with(&nodes, bias) {
                    add_into(gb, g);
                }
                if let Some(gw) = self.acc_with(&nodes, weight) {
                    for (i, &gi) in g.iter().enumerate() {
                        axpy(&mut gw[i * n..(i + 1) * n], gi, x);
                    }
                }
                if let Some(gx) = self.acc_with(&nodes, input) {
                    for (i, &gi) in g.iter().enumerate() {
                        axpy(gx, gi, &w[i * n..(i + 1) * n]);
                    }
                }
            }
            &Op::Relu(x) => {
                let xv = val(x);
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = self.acc_with(&nodes, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc_with(&nodes, b) {
                    add_into(gb, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.acc_with(&nodes, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc_with(&nodes, b) {
                    axpy(gb, -1.0, g);
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if let Some(ga) = self.acc_with(&nodes, a) {
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if let Some(gb) = self.acc_with(&nodes, b) {
                    for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                }
            }
            &Op::Div(a, b) => {
                let bv = val(b);
                if let Some(ga) = self.acc_with(&nodes, a) {
                    for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi / y;
                    }
                }
                if let Some(gb) = self.acc_with(&nodes, b) {
                    for (((d, &gi), &y), &q) in gb.iter_mut().zip(g).zip(bv).zip(out) {
                        *d -= gi * q / y;
                    }
                }
            }
            &Op::Scale(x, f) => {
                if let Some(gx) = self.acc_with(&nodes, x) {
                    axpy(gx, f, g);
                }
            }
            &Op::Shift(x) | &Op::Reshape(x) => {
                if let Some(gx) = self.acc_with(&nodes, x) {
                    add_into(gx, g);
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = self.acc_with(&nodes, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(gx) = self.acc_with(&nodes, x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            &Op::Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                if let Some(ga) = self.acc_with(&nodes, a) {
                    axpy(ga, g[0], bv);
                }
                if let Some(gb) = self.acc_with(&nodes, b) {
                    axpy(gb, g[0], av);
                }
            }
            &Op::Exp(x) => {
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *d += gi * y;
                    }
                }
            }
            &Op::Ln(x) => {
                let xv = val(x);
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        *d += gi / xi;
                    }
                }
            }
            &Op::ClampMin(x, floor) => {
                let xv = val(x);
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > floor {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let gy = dot(g, out);
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *d += y * (gi - gy);
                    }
                }
            }
            &Op::Select(x, index) => {
                if let Some(gx) = self.acc_with(&nodes, x) {
                    gx[index] += g[0];
                }
            }
            Op::Stack(ids) => {
                for (i, &s) in ids.iter().enumerate() {
                    if let Some(gs) = self.acc_with(&nodes, s) {
                        gs[0] += g[i];
                    }
                }
            }
            &Op::ChannelMean(x) => {
                let l = nodes[x].shape[1];
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for (row, &gi) in gx.chunks_exact_mut(l).zip(g) {
                        let s = gi / l as f64;
                        row.iter_mut().for_each(|d| *d += s);
                    }
                }
            }
            &Op::L2Normalize(x, eps) => {
                let xv = val(x);
                let n = (dot(xv, xv) + eps).sqrt();
                let gy = dot(g, out);
                if let Some(gx) = self.acc_with(&nodes, x) {
                    for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *d += (gi - y * gy) / n;
                    }
                }
            }
        }
        self.nodes = nodes;
    }

    // `adjoint` temporarily moves `nodes` out of `self`, so grad buffers are
    // sized from the borrowed copy.
    fn acc_with<'a>(&'a mut self, nodes: &[Node], id: usize) -> Option<&'a mut [f64]> {
        if !nodes[id].requires_grad {
            return None;
        }
        if self.grads[id].is_empty() {
            self.grads[id] = vec![0.0; nodes[id].value.len()];
        }
        Some(&mut self.grads[id])
    }
}

fn pad_rows(x: &[f64], rows: usize, len: usize, left: usize, right: usize) -> Vec<f64> {
    if left == 0 && right == 0 {
        return x.to_vec();
    }
    let lp = len + left + right;
    let mut out = vec![0.0; rows * lp];
    for r in 0..rows {
        out[r * lp + left..r * lp + left + len].copy_from_slice(&x[r * len..(r + 1) * len]);
    }
    out
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
