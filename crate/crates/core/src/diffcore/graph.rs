//! Tape-based reverse-mode differentiation.
//!
//! Every vector-Jacobian product is itself recorded as ordinary graph nodes,
//! so gradients (and input Jacobians built from them) can be differentiated
//! again. Node ids are assigned in creation order, which is a topological
//! order of the graph.

use crate::error::{dim_err, Error, Result};

use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        Var(i)
    }
}

/// Elementwise operation tags accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Tanh,
    Exp,
    Log,
    Square,
    Relu,
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Relu(Var),
    ClampMin(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var, Vec<usize>),
    SumAll(Var),
    SumAxis(Var, usize),
    BroadcastTo(Var, Vec<usize>),
    SumTo(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Relu(..) => "relu",
            Op::ClampMin(..) => "clamp_min",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::SumAll(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::SumTo(..) => "sum_to",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Relu(a)
            | Op::ClampMin(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a, _)
            | Op::SumAll(a)
            | Op::SumAxis(a, _)
            | Op::BroadcastTo(a, _)
            | Op::SumTo(a, _)
            | Op::Slice(a, ..) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Computation graph. Values are computed eagerly when a node is created.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn eval<'a>(op: &Op, val: &dyn Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    let t = match op {
        Op::Input => unreachable!("inputs are never re-evaluated"),
        Op::Add(a, b) => val(*a).zip_with(val(*b), |x, y| x + y)?,
        Op::Sub(a, b) => val(*a).zip_with(val(*b), |x, y| x - y)?,
        Op::Mul(a, b) => val(*a).zip_with(val(*b), |x, y| x * y)?,
        Op::Div(a, b) => {
            let d = val(*b);
            if d.data().contains(&0.0) {
                return Err(Error::Domain("division by zero".into()));
            }
            val(*a).zip_with(d, |x, y| x / y)?
        }
        Op::Neg(a) => val(*a).map(|x| -x),
        Op::Scale(a, c) => val(*a).map(|x| x * c),
        Op::Shift(a, c) => val(*a).map(|x| x + c),
        Op::Tanh(a) => val(*a).map(f64::tanh),
        Op::Exp(a) => val(*a).map(f64::exp),
        Op::Log(a) => {
            let t = val(*a);
            if let Some(bad) = t.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            t.map(f64::ln)
        }
        Op::Square(a) => val(*a).map(|x| x * x),
        Op::Sqrt(a) => {
            let t = val(*a);
            if let Some(bad) = t.data().iter().find(|&&v| v < 0.0) {
                return Err(Error::Domain(format!("sqrt of negative value {bad}")));
            }
            t.map(f64::sqrt)
        }
        Op::Relu(a) => val(*a).map(|x| x.max(0.0)),
        Op::ClampMin(a, c) => val(*a).map(|x| x.max(*c)),
        Op::MatMul(a, b) => val(*a).matmul(val(*b))?,
        Op::Transpose(a) => val(*a).transpose()?,
        Op::Reshape(a, s) => val(*a).reshaped(s)?,
        Op::SumAll(a) => Tensor::scalar(val(*a).sum()),
        Op::SumAxis(a, ax) => val(*a).sum_axis(*ax)?,
        Op::BroadcastTo(a, s) => val(*a).broadcast_to(s)?,
        Op::SumTo(a, s) => val(*a).sum_to_shape(s)?,
        Op::Concat(parts, ax) => {
            let refs: Vec<&Tensor> = parts.iter().map(|p| val(*p)).collect();
            Tensor::concat(&refs, *ax)?
        }
        Op::Slice(a, ax, s, l) => val(*a).slice_axis(*ax, *s, *l)?,
    };
    if !t.is_finite() {
        return Err(Error::NonFinite(op.name()));
    }
    Ok(t)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    /// Leaf node (parameter or constant).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: t,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = {
            let nodes = &self.nodes;
            eval(&op, &|v: Var| &nodes[v.0].value)?
        };
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Shift(a, c))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Square(a))
    }
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::ClampMin(a, c))
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::Reshape(a, shape.to_vec()))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumAll(a))
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.push(Op::SumAxis(a, axis))
    }
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::BroadcastTo(a, shape.to_vec()))
    }
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::SumTo(a, shape.to_vec()))
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::Concat(parts.to_vec(), axis))
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice(a, axis, start, len))
    }

    /// Mean over all entries.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Dispatches one of the tagged elementwise operations.
    pub fn elementwise(&mut self, op: ElemOp, args: &[Var]) -> Result<Var> {
        let arity = match op {
            ElemOp::Add | ElemOp::Sub | ElemOp::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return dim_err(format!(
                "{:?} takes {} arguments, got {}",
                op,
                arity,
                args.len()
            ));
        }
        match op {
            ElemOp::Add => self.add(args[0], args[1]),
            ElemOp::Sub => self.sub(args[0], args[1]),
            ElemOp::Mul => self.mul(args[0], args[1]),
            ElemOp::Tanh => self.tanh(args[0]),
            ElemOp::Exp => self.exp(args[0]),
            ElemOp::Log => self.log(args[0]),
            ElemOp::Square => self.square(args[0]),
            ElemOp::Relu => self.relu(args[0]),
        }
    }

    /// Recomputes every node from the stored inputs, optionally replacing some
    /// input values. Returns the values of all nodes in id order.
    pub fn replay(&self, overrides: &[(Var, Tensor)]) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Input => overrides
                    .iter()
                    .find(|(var, _)| var.0 == i)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| node.value.clone()),
                _ => eval(&node.op, &|v: Var| &vals[v.0])?,
            };
            vals.push(v);
        }
        Ok(vals)
    }

    fn depends_on(&self, root: Var, wrt: &[Var]) -> Vec<bool> {
        let mut dep = vec![false; root.0 + 1];
        for w in wrt {
            if w.0 <= root.0 {
                dep[w.0] = true;
            }
        }
        for i in 0..=root.0 {
            if !dep[i] {
                dep[i] = self.nodes[i].op.inputs().iter().any(|v| dep[v.0]);
            }
        }
        dep
    }

    /// Differentiable vector-Jacobian product: returns nodes holding
    /// `seed . d root / d w` for each `w` in `wrt` (zeros where independent).
    pub fn vjp(&mut self, root: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(seed) != self.shape(root) {
            return dim_err(format!(
                "seed shape {:?} does not match root {:?}",
                self.shape(seed),
                self.shape(root)
            ));
        }
        let dep = self.depends_on(root, wrt);
        let mut adj: Vec<Option<Var>> = vec![None; root.0 + 1];
        adj[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i] else { continue };
            if !dep[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.op_vjp(Var(i), &op, g, &dep)? {
                adj[input.0] = Some(match adj[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }
        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let z = Tensor::zeros(self.shape(*w));
                    Ok(self.input(z))
                }
            })
            .collect()
    }

    /// Differentiable gradient of a scalar root.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let seed = self.input(Tensor::full(self.shape(root), 1.0));
        self.vjp(root, seed, wrt)
    }

    /// Gradient values of a scalar root. The graph is left as it was.
    pub fn backward(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mark = self.nodes.len();
        let res = self
            .grad(root, wrt)
            .map(|gs| gs.iter().map(|g| self.value(*g).clone()).collect());
        self.truncate(mark);
        res
    }

    /// Jacobian of a vector output `y: [p]` w.r.t. `x: [m]` as a `[p, m]`
    /// node that stays differentiable.
    pub fn input_jacobian(&mut self, y: Var, x: Var) -> Result<Var> {
        let (ys, xs) = (self.shape(y).to_vec(), self.shape(x).to_vec());
        if ys.len() != 1 || xs.len() != 1 {
            return dim_err("input_jacobian expects rank-1 output and input");
        }
        let (p, m) = (ys[0], xs[0]);
        let mut rows = Vec::with_capacity(p);
        for r in 0..p {
            let mut e = Tensor::zeros(&[p]);
            e.data_mut()[r] = 1.0;
            let seed = self.input(e);
            let g = self.vjp(y, seed, &[x])?[0];
            rows.push(self.reshape(g, &[1, m])?);
        }
        self.concat(&rows, 0)
    }

    /// Per-row Jacobians for a batch map whose rows are independent:
    /// `y: [n, p]`, `x: [n, m]` gives `[n, p, m]`.
    pub fn batch_jacobian(&mut self, y: Var, x: Var) -> Result<Var> {
        let (ys, xs) = (self.shape(y).to_vec(), self.shape(x).to_vec());
        if ys.len() != 2 || xs.len() != 2 || ys[0] != xs[0] {
            return dim_err("batch_jacobian expects [n,p] output and [n,m] input");
        }
        let (n, p, m) = (ys[0], ys[1], xs[1]);
        let mut slabs = Vec::with_capacity(p);
        for r in 0..p {
            let mut e = Tensor::zeros(&[n, p]);
            for i in 0..n {
                e.data_mut()[i * p + r] = 1.0;
            }
            let seed = self.input(e);
            let g = self.vjp(y, seed, &[x])?[0];
            slabs.push(self.reshape(g, &[n, 1, m])?);
        }
        self.concat(&slabs, 1)
    }

    fn unbroadcast(&mut self, g: Var, target: Var) -> Result<Var> {
        let shape = self.shape(target).to_vec();
        self.sum_to(g, &shape)
    }

    fn op_vjp(&mut self, y: Var, op: &Op, g: Var, dep: &[bool]) -> Result<Vec<(Var, Var)>> {
        let needs = |v: &Var| dep[v.0];
        let mut out = Vec::new();
        match op {
            Op::Input => {}
            Op::Add(a, b) => {
                if needs(a) {
                    out.push((*a, self.unbroadcast(g, *a)?));
                }
                if needs(b) {
                    out.push((*b, self.unbroadcast(g, *b)?));
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    out.push((*a, self.unbroadcast(g, *a)?));
                }
                if needs(b) {
                    let ng = self.neg(g)?;
                    out.push((*b, self.unbroadcast(ng, *b)?));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let t = self.mul(g, *b)?;
                    out.push((*a, self.unbroadcast(t, *a)?));
                }
                if needs(b) {
                    let t = self.mul(g, *a)?;
                    out.push((*b, self.unbroadcast(t, *b)?));
                }
            }
            Op::Div(a, b) => {
                if needs(a) {
                    let t = self.div(g, *b)?;
                    out.push((*a, self.unbroadcast(t, *a)?));
                }
                if needs(b) {
                    let gy = self.mul(g, y)?;
                    let t = self.div(gy, *b)?;
                    let t = self.neg(t)?;
                    out.push((*b, self.unbroadcast(t, *b)?));
                }
            }
            Op::Neg(a) => out.push((*a, self.neg(g)?)),
            Op::Scale(a, c) => out.push((*a, self.scale(g, *c)?)),
            Op::Shift(a, _) => out.push((*a, g)),
            Op::Tanh(a) => {
                let y2 = self.square(y)?;
                let d = self.neg(y2)?;
                let d = self.shift(d, 1.0)?;
                out.push((*a, self.mul(g, d)?));
            }
            Op::Exp(a) => out.push((*a, self.mul(g, y)?)),
            Op::Log(a) => out.push((*a, self.div(g, *a)?)),
            Op::Square(a) => {
                let two_a = self.scale(*a, 2.0)?;
                out.push((*a, self.mul(g, two_a)?));
            }
            Op::Sqrt(a) => {
                let two_y = self.scale(y, 2.0)?;
                out.push((*a, self.div(g, two_y)?));
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let mask = self.input(mask);
                out.push((*a, self.mul(g, mask)?));
            }
            Op::ClampMin(a, c) => {
                let c = *c;
                let mask = self.value(*a).map(|v| if v > c { 1.0 } else { 0.0 });
                let mask = self.input(mask);
                out.push((*a, self.mul(g, mask)?));
            }
            Op::MatMul(a, b) => {
                if needs(a) {
                    let bt = self.transpose(*b)?;
                    out.push((*a, self.matmul(g, bt)?));
                }
                if needs(b) {
                    let at = self.transpose(*a)?;
                    out.push((*b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((*a, self.transpose(g)?)),
            Op::Reshape(a, _) => {
                let s = self.shape(*a).to_vec();
                out.push((*a, self.reshape(g, &s)?));
            }
            Op::SumAll(a) | Op::SumAxis(a, _) | Op::SumTo(a, _) => {
                let s = self.shape(*a).to_vec();
                out.push((*a, self.broadcast_to(g, &s)?));
            }
            Op::BroadcastTo(a, _) => out.push((*a, self.unbroadcast(g, *a)?)),
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if needs(p) {
                        let s = self.slice(g, *axis, start, len)?;
                        out.push((*p, s));
                    }
                    start += len;
                }
            }
            Op::Slice(a, axis, start, len) => {
                let full = self.shape(*a).to_vec();
                let mut pieces = Vec::with_capacity(3);
                if *start > 0 {
                    let mut s = full.clone();
                    s[*axis] = *start;
                    pieces.push(self.input(Tensor::zeros(&s)));
                }
                pieces.push(g);
                let after = full[*axis] - start - len;
                if after > 0 {
                    let mut s = full.clone();
                    s[*axis] = after;
                    pieces.push(self.input(Tensor::zeros(&s)));
                }
                out.push((*a, self.concat(&pieces, *axis)?));
            }
        }
        Ok(out)
    }
}
