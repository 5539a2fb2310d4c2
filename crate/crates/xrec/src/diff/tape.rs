use crate::diff::params::ParamStore;
use crate::error::{Result, XrecError};

pub type NodeId = usize;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-ln(sigmoid(x))`, i.e. `ln(1 + exp(-x))`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    ParamVec { param: usize },
    ParamRow { param: usize, row: usize },
    MatVec { param: usize, x: NodeId, transpose: bool },
    Affine { w: usize, b: usize, x: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale { x: NodeId, c: f64 },
    AddScaled { a: NodeId, b: NodeId, c: f64 },
    Concat(Vec<NodeId>),
    Gather { x: NodeId, index: usize },
    ScalarMul { s: NodeId, x: NodeId },
    SumN(Vec<NodeId>),
    MeanN(Vec<NodeId>),
    Softmax(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Dot(NodeId, NodeId),
    NegLogSigmoid(NodeId),
}

struct Node {
    op: Op,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Gradients with respect to every parameter a backward pass touched,
/// indexed like the store. Untouched parameters read as `None`.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn empty(store: &ParamStore) -> Self {
        ParamGrads { grads: vec![None; store.len()] }
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn by_name(&self, store: &ParamStore, name: &str) -> Option<&[f64]> {
        self.get(store.id(name).ok()?)
    }

    fn slot(&mut self, id: usize, len: usize) -> &mut [f64] {
        self.grads[id].get_or_insert_with(|| vec![0.0; len])
    }
}

/// Reverse-mode differentiation tape over vector-valued nodes.
///
/// Node values are computed eagerly as the graph is built, so shape errors
/// surface at construction with the offending node named. `backward` then
/// accumulates gradients of a scalar node with respect to every parameter
/// (unless the tape was created `frozen`) and every input created with
/// `grad_wanted`.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    node_grads: Vec<Option<Vec<f64>>>,
    track_params: bool,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape { store, nodes: Vec::new(), node_grads: Vec::new(), track_params: true }
    }

    /// A tape that treats parameters as constants: backward only reaches
    /// flagged inputs. Used when searching over inputs with the model fixed.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Tape { store, nodes: Vec::new(), node_grads: Vec::new(), track_params: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    /// Gradient of the last `backward` target with respect to node `id`.
    /// `None` before any backward pass, for nodes without `grad_wanted`
    /// lineage, and for nodes the target does not depend on.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.node_grads.get(id).and_then(|g| g.as_deref())
    }

    fn err(&self, op: &'static str, msg: String) -> XrecError {
        XrecError::Shape { node: self.nodes.len(), op, msg }
    }

    fn push(&mut self, op: Op, value: Vec<f64>, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, value, needs_grad });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn check_same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.nodes[a].value.len(), self.nodes[b].value.len());
        if la != lb {
            return Err(self.err(op, format!("operand lengths differ: {la} vs {lb}")));
        }
        Ok(la)
    }

    pub fn input(&mut self, values: Vec<f64>, grad_wanted: bool) -> Result<NodeId> {
        if values.is_empty() {
            return Err(self.err("input", "empty value".into()));
        }
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(self.err("input", format!("non-finite value {x}")));
        }
        Ok(self.push(Op::Input, values, grad_wanted))
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Result<NodeId> {
        self.input(values, false)
    }

    pub fn param_vec(&mut self, name: &str) -> Result<NodeId> {
        let param = self.store.id(name)?;
        let value = self.store.param(param).values.clone();
        let needs = self.track_params;
        Ok(self.push(Op::ParamVec { param }, value, needs))
    }

    /// One row of a matrix parameter (an embedding lookup).
    pub fn param_row(&mut self, name: &str, row: usize) -> Result<NodeId> {
        let param = self.store.id(name)?;
        let p = self.store.param(param);
        if row >= p.shape.rows() {
            return Err(self.err(
                "param_row",
                format!("row {row} out of range for `{name}` with {} rows", p.shape.rows()),
            ));
        }
        let value = self.store.row(param, row).to_vec();
        let needs = self.track_params;
        Ok(self.push(Op::ParamRow { param, row }, value, needs))
    }

    /// `W x` (or `W^T x` when `transpose`) for a matrix parameter `W`.
    pub fn matvec(&mut self, name: &str, x: NodeId, transpose: bool) -> Result<NodeId> {
        let param = self.store.id(name)?;
        let p = self.store.param(param);
        let (rows, cols) = (p.shape.rows(), p.shape.cols());
        let xv = &self.nodes[x].value;
        let expect = if transpose { rows } else { cols };
        if xv.len() != expect {
            return Err(self.err(
                "matvec",
                format!("`{name}` is {rows}x{cols} but operand has length {}", xv.len()),
            ));
        }
        let w = &p.values;
        let value = if transpose {
            let mut y = vec![0.0; cols];
            for i in 0..rows {
                let xi = xv[i];
                let row = &w[i * cols..(i + 1) * cols];
                for (yj, wij) in y.iter_mut().zip(row) {
                    *yj += wij * xi;
                }
            }
            y
        } else {
            (0..rows)
                .map(|i| {
                    let row = &w[i * cols..(i + 1) * cols];
                    row.iter().zip(xv).map(|(w, x)| w * x).sum()
                })
                .collect()
        };
        let needs = self.track_params || self.needs(x);
        Ok(self.push(Op::MatVec { param, x, transpose }, value, needs))
    }

    /// Fully connected layer `W x + b`.
    pub fn affine(&mut self, w_name: &str, b_name: &str, x: NodeId) -> Result<NodeId> {
        let w = self.store.id(w_name)?;
        let b = self.store.id(b_name)?;
        let wp = self.store.param(w);
        let bp = self.store.param(b);
        let (rows, cols) = (wp.shape.rows(), wp.shape.cols());
        let xv = &self.nodes[x].value;
        if xv.len() != cols {
            return Err(self.err(
                "affine",
                format!("`{w_name}` is {rows}x{cols} but operand has length {}", xv.len()),
            ));
        }
        if bp.values.len() != rows {
            return Err(self.err(
                "affine",
                format!("bias `{b_name}` has length {} but `{w_name}` has {rows} rows", bp.values.len()),
            ));
        }
        let value: Vec<f64> = (0..rows)
            .map(|i| {
                let row = &wp.values[i * cols..(i + 1) * cols];
                let dot: f64 = row.iter().zip(xv).map(|(w, x)| w * x).sum();
                dot + bp.values[i]
            })
            .collect();
        let needs = self.track_params || self.needs(x);
        Ok(self.push(Op::Affine { w, b, x }, value, needs))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        self.check_same_len(op_name, a, b)?;
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, value, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let value = self.nodes[x].value.iter().map(|&v| c * v).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::Scale { x, c }, value, needs))
    }

    /// `a + c * b`.
    pub fn add_scaled(&mut self, a: NodeId, b: NodeId, c: f64) -> Result<NodeId> {
        self.binary_elementwise("add_scaled", a, b, |x, y| x + c * y, Op::AddScaled { a, b, c })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(self.err("concat", "no operands".into()));
        }
        let mut value = Vec::new();
        let mut needs = false;
        for &p in parts {
            value.extend_from_slice(&self.nodes[p].value);
            needs |= self.needs(p);
        }
        Ok(self.push(Op::Concat(parts.to_vec()), value, needs))
    }

    /// Single element `x[index]` as a length-1 node.
    pub fn gather(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if index >= xv.len() {
            return Err(self.err("gather", format!("index {index} out of range for length {}", xv.len())));
        }
        let value = vec![xv[index]];
        let needs = self.needs(x);
        Ok(self.push(Op::Gather { x, index }, value, needs))
    }

    /// `s[0] * x` for a length-1 node `s`.
    pub fn scalar_mul(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        if self.nodes[s].value.len() != 1 {
            return Err(self.err("scalar_mul", format!("scalar operand has length {}", self.nodes[s].value.len())));
        }
        let sv = self.nodes[s].value[0];
        let value = self.nodes[x].value.iter().map(|&v| sv * v).collect();
        let needs = self.needs(s) || self.needs(x);
        Ok(self.push(Op::ScalarMul { s, x }, value, needs))
    }

    fn nary(&mut self, op_name: &'static str, parts: &[NodeId], mean: bool) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(self.err(op_name, "no operands".into()));
        }
        let len = self.nodes[parts[0]].value.len();
        let mut value = vec![0.0; len];
        let mut needs = false;
        for &p in parts {
            if self.nodes[p].value.len() != len {
                return Err(self.err(op_name, format!("operand lengths differ: {len} vs {}", self.nodes[p].value.len())));
            }
            for (v, x) in value.iter_mut().zip(&self.nodes[p].value) {
                *v += x;
            }
            needs |= self.needs(p);
        }
        if mean {
            let n = parts.len() as f64;
            for v in &mut value {
                *v /= n;
            }
        }
        let op = if mean { Op::MeanN(parts.to_vec()) } else { Op::SumN(parts.to_vec()) };
        Ok(self.push(op, value, needs))
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.nary("sum_n", parts, false)
    }

    /// Elementwise mean of equally sized nodes.
    pub fn mean_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.nary("mean_n", parts, true)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let value = exps.iter().map(|&e| e / sum).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::Softmax(x), value, needs))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.nodes[x].value.iter().map(|&v| sigmoid(v)).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::Sigmoid(x), value, needs))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.nodes[x].value.iter().map(|&v| v.max(0.0)).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::Relu(x), value, needs))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_len("dot", a, b)?;
        let value: f64 = self.nodes[a].value.iter().zip(&self.nodes[b].value).map(|(x, y)| x * y).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Dot(a, b), vec![value], needs))
    }

    /// Elementwise `-ln(sigmoid(x))`, the pairwise ranking loss kernel.
    pub fn neg_log_sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.nodes[x].value.iter().map(|&v| neg_log_sigmoid(v)).collect();
        let needs = self.needs(x);
        Ok(self.push(Op::NegLogSigmoid(x), value, needs))
    }

    /// Accumulate gradients of scalar node `target` into every tracked
    /// parameter and every `grad_wanted` input. Node gradients become
    /// readable through [`grad`](Self::grad).
    pub fn backward(&mut self, target: NodeId) -> Result<ParamGrads> {
        if self.nodes[target].value.len() != 1 {
            return Err(XrecError::Shape {
                node: target,
                op: "backward",
                msg: format!("target has length {}, expected a scalar", self.nodes[target].value.len()),
            });
        }
        if !self.nodes[target].value[0].is_finite() {
            return Err(XrecError::Invalid(format!(
                "backward target is non-finite ({})",
                self.nodes[target].value[0]
            )));
        }
        let mut pg = ParamGrads::empty(self.store);
        self.node_grads = self.nodes.iter().map(|_| None).collect();
        self.node_grads[target] = Some(vec![1.0]);

        for i in (0..=target).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(go) = self.node_grads[i].take() else { continue };
            {
                let nodes = &self.nodes;
                let grads = &mut self.node_grads;
                let store = self.store;
                let mut into = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
                    if nodes[id].needs_grad {
                        let g = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
                        f(g);
                    }
                };
                match &nodes[i].op {
                    Op::Input => {}
                    Op::ParamVec { param } => {
                        let g = pg.slot(*param, store.param(*param).values.len());
                        for (g, go) in g.iter_mut().zip(&go) {
                            *g += go;
                        }
                    }
                    Op::ParamRow { param, row } => {
                        let cols = store.param(*param).shape.cols();
                        let g = pg.slot(*param, store.param(*param).values.len());
                        for (g, go) in g[row * cols..(row + 1) * cols].iter_mut().zip(&go) {
                            *g += go;
                        }
                    }
                    Op::MatVec { param, x, transpose } => {
                        let p = store.param(*param);
                        let (rows, cols) = (p.shape.rows(), p.shape.cols());
                        let xv = &nodes[*x].value;
                        if self.track_params {
                            let g = pg.slot(*param, p.values.len());
                            if *transpose {
                                for r in 0..rows {
                                    for c in 0..cols {
                                        g[r * cols + c] += xv[r] * go[c];
                                    }
                                }
                            } else {
                                for r in 0..rows {
                                    for c in 0..cols {
                                        g[r * cols + c] += go[r] * xv[c];
                                    }
                                }
                            }
                        }
                        into(*x, &mut |dx| {
                            if *transpose {
                                for r in 0..rows {
                                    let row = &p.values[r * cols..(r + 1) * cols];
                                    dx[r] += row.iter().zip(&go).map(|(w, g)| w * g).sum::<f64>();
                                }
                            } else {
                                for (r, gr) in go.iter().enumerate() {
                                    let row = &p.values[r * cols..(r + 1) * cols];
                                    for (dxc, wrc) in dx.iter_mut().zip(row) {
                                        *dxc += wrc * gr;
                                    }
                                }
                            }
                        });
                    }
                    Op::Affine { w, b, x } => {
                        let wp = store.param(*w);
                        let cols = wp.shape.cols();
                        let xv = &nodes[*x].value;
                        if self.track_params {
                            {
                                let gw = pg.slot(*w, wp.values.len());
                                for (r, gr) in go.iter().enumerate() {
                                    for (c, xc) in xv.iter().enumerate() {
                                        gw[r * cols + c] += gr * xc;
                                    }
                                }
                            }
                            let gb = pg.slot(*b, store.param(*b).values.len());
                            for (gb, go) in gb.iter_mut().zip(&go) {
                                *gb += go;
                            }
                        }
                        into(*x, &mut |dx| {
                            for (r, gr) in go.iter().enumerate() {
                                let row = &wp.values[r * cols..(r + 1) * cols];
                                for (dxc, wrc) in dx.iter_mut().zip(row) {
                                    *dxc += wrc * gr;
                                }
                            }
                        });
                    }
                    Op::Add(a, b) => {
                        into(*a, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += go;
                            }
                        });
                        into(*b, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += go;
                            }
                        });
                    }
                    Op::Sub(a, b) => {
                        into(*a, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += go;
                            }
                        });
                        into(*b, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g -= go;
                            }
                        });
                    }
                    Op::Mul(a, b) => {
                        let (a, b) = (*a, *b);
                        into(a, &mut |g| {
                            for ((g, go), bv) in g.iter_mut().zip(&go).zip(&nodes[b].value) {
                                *g += go * bv;
                            }
                        });
                        into(b, &mut |g| {
                            for ((g, go), av) in g.iter_mut().zip(&go).zip(&nodes[a].value) {
                                *g += go * av;
                            }
                        });
                    }
                    Op::Scale { x, c } => {
                        let c = *c;
                        into(*x, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += c * go;
                            }
                        });
                    }
                    Op::AddScaled { a, b, c } => {
                        let c = *c;
                        into(*a, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += go;
                            }
                        });
                        into(*b, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += c * go;
                            }
                        });
                    }
                    Op::Concat(parts) => {
                        let mut off = 0;
                        for &p in parts {
                            let len = nodes[p].value.len();
                            let chunk = &go[off..off + len];
                            into(p, &mut |g| {
                                for (g, go) in g.iter_mut().zip(chunk) {
                                    *g += go;
                                }
                            });
                            off += len;
                        }
                    }
                    Op::Gather { x, index } => {
                        let (index, g0) = (*index, go[0]);
                        into(*x, &mut |g| g[index] += g0);
                    }
                    Op::ScalarMul { s, x } => {
                        let (s, x) = (*s, *x);
                        let sv = nodes[s].value[0];
                        into(s, &mut |g| {
                            g[0] += go.iter().zip(&nodes[x].value).map(|(go, xv)| go * xv).sum::<f64>();
                        });
                        into(x, &mut |g| {
                            for (g, go) in g.iter_mut().zip(&go) {
                                *g += sv * go;
                            }
                        });
                    }
                    Op::SumN(parts) => {
                        for &p in parts {
                            into(p, &mut |g| {
                                for (g, go) in g.iter_mut().zip(&go) {
                                    *g += go;
                                }
                            });
                        }
                    }
                    Op::MeanN(parts) => {
                        let n = parts.len() as f64;
                        for &p in parts {
                            into(p, &mut |g| {
                                for (g, go) in g.iter_mut().zip(&go) {
                                    *g += go / n;
                                }
                            });
                        }
                    }
                    Op::Softmax(x) => {
                        let y = &nodes[i].value;
                        let dot: f64 = go.iter().zip(y).map(|(g, y)| g * y).sum();
                        into(*x, &mut |g| {
                            for ((g, go), y) in g.iter_mut().zip(&go).zip(y) {
                                *g += y * (go - dot);
                            }
                        });
                    }
                    Op::Sigmoid(x) => {
                        let y = &nodes[i].value;
                        into(*x, &mut |g| {
                            for ((g, go), y) in g.iter_mut().zip(&go).zip(y) {
                                *g += go * y * (1.0 - y);
                            }
                        });
                    }
                    Op::Relu(x) => {
                        let xv = &nodes[*x].value;
                        into(*x, &mut |g| {
                            for ((g, go), x) in g.iter_mut().zip(&go).zip(xv) {
                                if *x > 0.0 {
                                    *g += go;
                                }
                            }
                        });
                    }
                    Op::Dot(a, b) => {
                        let (a, b) = (*a, *b);
                        let g0 = go[0];
                        into(a, &mut |g| {
                            for (g, bv) in g.iter_mut().zip(&nodes[b].value) {
                                *g += g0 * bv;
                            }
                        });
                        into(b, &mut |g| {
                            for (g, av) in g.iter_mut().zip(&nodes[a].value) {
                                *g += g0 * av;
                            }
                        });
                    }
                    Op::NegLogSigmoid(x) => {
                        let xv = &nodes[*x].value;
                        into(*x, &mut |g| {
                            for ((g, go), x) in g.iter_mut().zip(&go).zip(xv) {
                                *g += go * (sigmoid(*x) - 1.0);
                            }
                        });
                    }
                }
            }
            self.node_grads[i] = Some(go);
        }
        Ok(pg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empty_store() -> ParamStore {
        ParamStore::new(0)
    }

    #[test]
    fn sigmoid_kernel_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // -ln(sigmoid(0)) = ln 2
        let ln2 = 0.6931471805599453;
        assert!((neg_log_sigmoid(0.0) - ln2).abs() < 1e-15);
        // -ln(sigmoid(-2)); reference value from a high-precision evaluation.
        assert!((neg_log_sigmoid(-2.0) - 2.1269280110429725).abs() < 1e-12);
        // Large magnitudes stay finite.
        assert!(neg_log_sigmoid(-745.0).is_finite());
        assert_eq!(neg_log_sigmoid(1000.0), 0.0);
        assert!((neg_log_sigmoid(-1000.0) - 1000.0).abs() < 1e-12);
        assert!(sigmoid(-745.0) > 0.0);
    }

    #[test]
    fn softmax_forward_values() {
        let store = empty_store();
        let mut t = Tape::new(&store);
        let x = t.input(vec![3.0, 3.0, 3.0], false).unwrap();
        let y = t.softmax(x).unwrap();
        for &v in t.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, 0.0], false).unwrap();
        let y = t.softmax(x).unwrap();
        // Reference values from a high-precision evaluation.
        assert!((t.value(y)[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((t.value(y)[1] - 0.2689414213699951).abs() < 1e-15);
        assert!((t.value(y).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Shifted logits give identical probabilities.
        let mut t = Tape::new(&store);
        let x = t.input(vec![101.0, 100.0], false).unwrap();
        let y = t.softmax(x).unwrap();
        assert!((t.value(y)[0] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let store = empty_store();
        let mut t = Tape::new(&store);
        let x = t.input(vec![0.0], true).unwrap();
        let y = t.sigmoid(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25]);
    }

    #[test]
    fn linear_gradient_is_coefficient() {
        let store = empty_store();
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.7], true).unwrap();
        let y = t.scale(x, -3.5).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[-3.5]);
    }

    #[test]
    fn mul_by_ones_passes_gradient() {
        let store = empty_store();
        let mut t = Tape::new(&store);
        let x = t.input(vec![2.0, -1.0, 0.5], true).unwrap();
        let ones = t.constant(vec![1.0, 1.0, 1.0]).unwrap();
        let y = t.mul(x, ones).unwrap();
        let s = t.dot(y, ones).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_node_and_op() {
        let store = empty_store();
        let mut t = Tape::new(&store);
        let a = t.input(vec![1.0, 2.0], false).unwrap();
        let b = t.input(vec![1.0], false).unwrap();
        let err = t.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("2 vs 1"), "{msg}");
    }

    #[test]
    fn backward_requires_scalar_target() {
        let store = empty_store();
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.0, 2.0], true).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn frozen_tape_skips_parameters() {
        let mut store = ParamStore::new(3);
        store.add_matrix("w", 3, 2).unwrap();
        let mut t = Tape::frozen(&store);
        let x = t.input(vec![1.0, 2.0], true).unwrap();
        let y = t.matvec("w", x, false).unwrap();
        let ones = t.constant(vec![1.0; 3]).unwrap();
        let s = t.dot(y, ones).unwrap();
        let pg = t.backward(s).unwrap();
        assert!(pg.by_name(&store, "w").is_none());
        // Input gradient is the column sums of w.
        let w = &store.by_name("w").unwrap().values;
        let dx = t.grad(x).unwrap();
        for c in 0..2 {
            let want: f64 = (0..3).map(|r| w[r * 2 + c]).sum();
            assert!((dx[c] - want).abs() < 1e-14);
        }
    }

    // Central finite difference on a random three-layer network: every
    // analytic gradient must match to a relative error of 1e-4.
    #[test]
    fn random_network_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let mut store = ParamStore::new(100 + trial);
            store.add_matrix("w0", 6, 4).unwrap();
            store.add_vector("b0", 6).unwrap();
            store.add_matrix("w1", 5, 6).unwrap();
            store.add_vector("b1", 5).unwrap();
            store.add_matrix("w2", 1, 5).unwrap();
            store.add_vector("b2", 1).unwrap();
            let x0: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();

            let eval = |store: &ParamStore, x: &[f64]| -> (f64, Option<(Vec<f64>, ParamGrads)>) {
                let mut t = Tape::new(store);
                let x = t.input(x.to_vec(), true).unwrap();
                let h0 = t.affine("w0", "b0", x).unwrap();
                let h0 = t.relu(h0).unwrap();
                let h1 = t.affine("w1", "b1", h0).unwrap();
                let h1 = t.sigmoid(h1).unwrap();
                let out = t.affine("w2", "b2", h1).unwrap();
                let loss = t.neg_log_sigmoid(out).unwrap();
                let v = t.scalar(loss);
                let pg = t.backward(loss).unwrap();
                (v, Some((t.grad(x).unwrap().to_vec(), pg)))
            };
            let (_, grads) = eval(&store, &x0);
            let (dx, pg) = grads.unwrap();

            let h = 1e-5;
            let rel = |ad: f64, fd: f64| (ad - fd).abs() / f64::max(1.0, f64::max(ad.abs(), fd.abs()));
            // Input coordinates.
            for c in 0..x0.len() {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (eval(&store, &xp).0 - eval(&store, &xm).0) / (2.0 * h);
                assert!(rel(dx[c], fd) < 1e-4, "input {c}: ad={} fd={fd}", dx[c]);
            }
            // A sample of parameter coordinates from every array.
            for pid in 0..store.len() {
                let len = store.param(pid).values.len();
                for _ in 0..4.min(len) {
                    let c = rng.random_range(0..len);
                    let orig = store.param(pid).values[c];
                    store.param_mut(pid).values[c] = orig + h;
                    let fp = eval(&store, &x0).0;
                    store.param_mut(pid).values[c] = orig - h;
                    let fm = eval(&store, &x0).0;
                    store.param_mut(pid).values[c] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    let ad = pg.get(pid).map_or(0.0, |g| g[c]);
                    assert!(rel(ad, fd) < 1e-4, "param {} coord {c}: ad={ad} fd={fd}", store.param(pid).name);
                }
            }
        }
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        // Softmax + gather + scalar_mul + concat + dot, all in one graph.
        let store = empty_store();
        let build = |store: &ParamStore, x: &[f64]| {
            let mut t = Tape::new(store);
            let x = t.input(x.to_vec(), true).unwrap();
            let sm = t.softmax(x).unwrap();
            let g0 = t.gather(sm, 0).unwrap();
            let scaled = t.scalar_mul(g0, x).unwrap();
            let both = t.concat(&[scaled, sm]).unwrap();
            let ones = t.constant(vec![0.3, -0.7, 1.1, 0.2, 0.9, -0.4]).unwrap();
            let s = t.dot(both, ones).unwrap();
            (t.scalar(s), { let _ = t.backward(s); t.grad(x).unwrap().to_vec() })
        };
        let x0 = [0.4, -1.2, 0.7];
        let (_, dx) = build(&store, &x0);
        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x0;
            let mut xm = x0;
            xp[c] += h;
            xm[c] -= h;
            let fd = (build(&store, &xp).0 - build(&store, &xm).0) / (2.0 * h);
            assert!((dx[c] - fd).abs() / f64::max(1.0, fd.abs()) < 1e-4, "coord {c}: ad={} fd={fd}", dx[c]);
        }
    }

    #[test]
    fn gradients_accumulate_across_reuse() {
        // y = x . x => dy/dx = 2x.
        let store = empty_store();
        let mut t = Tape::new(&store);
        let x = t.input(vec![1.5, -2.0], true).unwrap();
        let y = t.dot(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0, -4.0]);
    }

    #[test]
    fn param_row_gradients_land_in_rows() {
        let mut store = ParamStore::new(5);
        store.add_matrix("emb", 4, 3).unwrap();
        let mut t = Tape::new(&store);
        let r2 = t.param_row("emb", 2).unwrap();
        let ones = t.constant(vec![1.0, 2.0, 3.0]).unwrap();
        let s = t.dot(r2, ones).unwrap();
        let pg = t.backward(s).unwrap();
        let g = pg.by_name(&store, "emb").unwrap();
        assert_eq!(&g[6..9], &[1.0, 2.0, 3.0]);
        for (i, &v) in g.iter().enumerate() {
            if !(6..9).contains(&i) {
                assert_eq!(v, 0.0);
            }
        }
    }
}
