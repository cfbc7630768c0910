use std::collections::HashMap;

use super::{ParamId, ParamStore, Real, Tensor, TensorError};

/// Probability floor applied by [`Graph::nll`].
pub const NLL_FLOOR: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    Affine(Var, T),
    Unary(Unary, Var),
    Softmax(Var),
    Concat(Vec<Var>, usize),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Dot(Var, Var),
    Pick(Var, usize),
    ScatterAdd(Var, Vec<usize>),
    Pad(Var),
    Nll(Var, usize, bool),
    Reshape(Var),
    AddN(Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    // Empty for parameter nodes; their values live in the store.
    value: Vec<T>,
    requires_grad: bool,
}

/// Dynamic computation graph recorded during one forward evaluation.
///
/// Parameters are read by reference from a [`ParamStore`]; the graph never
/// copies or mutates them. One graph per example.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
    nll_clamped: usize,
}

/// Dense per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
}

impl<T: Real> ParamGrads<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        ParamGrads {
            grads: vec![None; store.len()],
            sizes: store.ids().map(|id| store.get(id).len()).collect(),
        }
    }

    /// Gradient of one parameter; `None` when nothing reached it.
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient of one parameter, zeros when unreached.
    pub fn dense(&self, id: ParamId) -> Vec<T> {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| vec![T::zero(); self.sizes[id.0]])
    }

    fn slot(&mut self, id: ParamId) -> &mut Vec<T> {
        let n = self.sizes[id.0];
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn add_assign(&mut self, other: &ParamGrads<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let dst = self.slot(ParamId(i));
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += *s;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Result of one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: ParamGrads<T>,
    leaves: HashMap<Var, Vec<T>>,
    leaf_sizes: HashMap<Var, usize>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Vec<T> {
        self.params.dense(id)
    }

    /// Gradient of a differentiable leaf created with [`Graph::leaf`];
    /// zeros when the loss does not depend on it.
    pub fn leaf(&self, var: Var) -> Option<Vec<T>> {
        match self.leaves.get(&var) {
            Some(g) => Some(g.clone()),
            None => self.leaf_sizes.get(&var).map(|&n| vec![T::zero(); n]),
        }
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; params.len()],
            nll_clamped: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of NLL evaluations whose target probability hit the floor.
    pub fn nll_clamped(&self) -> usize {
        self.nll_clamped
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameter node; each parameter gets one node per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape().to_vec();
        self.nodes.push(Node {
            op: Op::Param(id),
            shape,
            value: Vec::new(),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(Op::Leaf, shape, t.into_data(), true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(Op::Constant, shape, t.into_data(), false)
    }

    pub fn constant_vec(&mut self, data: Vec<T>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn constant_scalar(&mut self, x: T) -> Var {
        self.constant(Tensor::scalar(x))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant_vec(vec![T::zero(); n])
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape(v) {
            [m, k] => Ok((*m, *k)),
            s => Err(shape_err(op, s, &[0, 0])),
        }
    }

    fn dims1(&self, v: Var, op: &'static str) -> Result<usize, TensorError> {
        match self.shape(v) {
            [n] => Ok(*n),
            s => Err(shape_err(op, s, &[0])),
        }
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &w) in row.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), vec![m, n], out, rg))
    }

    /// `[m,k] · [k] → [m]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matvec")?;
        let k2 = self.dims1(x, "matvec")?;
        if k != k2 {
            return Err(shape_err("matvec", self.shape(a), self.shape(x)));
        }
        let (av, xv) = (self.value(a), self.value(x));
        let out: Vec<T> = (0..m)
            .map(|i| {
                av[i * k..(i + 1) * k]
                    .iter()
                    .zip(xv)
                    .fold(T::zero(), |s, (&w, &x)| s + w * x)
            })
            .collect();
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(Op::MatVec(a, x), vec![m], out, rg))
    }

    /// `[m] · [m,k] → [k]`; the layout used for every linear layer.
    pub fn vecmat(&mut self, x: Var, a: Var) -> Result<Var, TensorError> {
        let m = self.dims1(x, "vecmat")?;
        let (m2, k) = self.dims2(a, "vecmat")?;
        if m != m2 {
            return Err(shape_err("vecmat", self.shape(x), self.shape(a)));
        }
        let (xv, av) = (self.value(x), self.value(a));
        let mut out = vec![T::zero(); k];
        for (i, &xi) in xv.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(&av[i * k..(i + 1) * k]) {
                *o += xi * w;
            }
        }
        let rg = self.rg(x) || self.rg(a);
        Ok(self.push(Op::VecMat(x, a), vec![k], out, rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, TensorError> {
        self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, shape, out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds vector `v` of width `d` to every row of `m: [n,d]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var, TensorError> {
        let (n, d) = self.dims2(m, "add_row")?;
        if self.dims1(v, "add_row")? != d {
            return Err(shape_err("add_row", self.shape(m), self.shape(v)));
        }
        let vv = self.value(v);
        let mut out = self.value(m).to_vec();
        for r in 0..n {
            for (o, &x) in out[r * d..(r + 1) * d].iter_mut().zip(vv) {
                *o += x;
            }
        }
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(Op::AddRow(m, v), vec![n, d], out, rg))
    }

    /// Multiplies every entry of `v` by the single-element node `s`.
    pub fn scale(&mut self, v: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale", self.shape(v), self.shape(s)));
        }
        let k = self.scalar(s);
        let out = self.value(v).iter().map(|&x| x * k).collect();
        let shape = self.shape(v).to_vec();
        let rg = self.rg(v) || self.rg(s);
        Ok(self.push(Op::Scale(v, s), shape, out, rg))
    }

    /// `mul * x + add` with constant coefficients.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Var {
        let out = self.value(x).iter().map(|&v| mul * v + add).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Op::Affine(x, mul), shape, out, rg)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let out: Vec<T> = match op {
            Unary::Tanh => xv.iter().map(|v| v.tanh()).collect(),
            Unary::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Exp => xv.iter().map(|v| v.exp()).collect(),
            Unary::Log => {
                if let Some(bad) = xv.iter().find(|&&v| !(v > T::zero())) {
                    return Err(TensorError::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                xv.iter().map(|v| v.ln()).collect()
            }
        };
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::Unary(op, x), shape, out, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(Unary::Sigmoid, x)
    }

    /// Max-subtracted softmax over a vector. Masked (`false`) positions are
    /// exactly zero.
    pub fn softmax(&mut self, v: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let n = self.dims1(v, "softmax")?;
        if let Some(m) = mask {
            if m.len() != n {
                return Err(shape_err("softmax", &[n], &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(TensorError::InvalidMask);
            }
        }
        if n == 0 {
            return Err(TensorError::InvalidMask);
        }
        let out = softmax_values(self.value(v), mask);
        let rg = self.rg(v);
        Ok(self.push(Op::Softmax(v), vec![n], out, rg))
    }

    /// Concatenation along `axis` (0 for any rank, or 1 for matrices).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero parts".into()))?;
        let base = self.shape(first).to_vec();
        if base.is_empty() || axis >= base.len() || (axis == 1 && base.len() != 2) || axis > 1 {
            return Err(shape_err("concat", &base, &[axis]));
        }
        for &p in &parts[1..] {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(shape_err("concat", &base, s));
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p));
            }
        } else {
            let rows = base[0];
            for r in 0..rows {
                for &p in parts {
                    let c = self.shape(p)[1];
                    out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat(parts.to_vec(), axis), shape, out, rg))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("stack of zero parts".into()))?;
        let d = self.dims1(first, "stack")?;
        let mut out = Vec::with_capacity(d * parts.len());
        for &p in parts {
            if self.shape(p) != [d] {
                return Err(shape_err("stack", &[d], self.shape(p)));
            }
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Stack(parts.to_vec()), vec![parts.len(), d], out, rg))
    }

    /// Contiguous sub-range of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let n = self.dims1(x, "slice")?;
        if start + len > n {
            return Err(TensorError::Index {
                op: "slice",
                index: start + len,
                bound: n,
            });
        }
        let out = self.value(x)[start..start + len].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::Slice(x, start), vec![len], out, rg))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var, TensorError> {
        let (n, d) = self.dims2(m, "row")?;
        if i >= n {
            return Err(TensorError::Index {
                op: "row",
                index: i,
                bound: n,
            });
        }
        let out = self.value(m)[i * d..(i + 1) * d].to_vec();
        let rg = self.rg(m);
        Ok(self.push(Op::Row(m, i), vec![d], out, rg))
    }

    /// Embedding lookup: `E: [V,d]`, ids → `[|ids|, d]`.
    pub fn gather_rows(&mut self, e: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = self.dims2(e, "gather_rows")?;
        let ev = self.value(e);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&ev[id * d..(id + 1) * d]);
        }
        let rg = self.rg(e);
        Ok(self.push(Op::GatherRows(e, ids.to_vec()), vec![ids.len(), d], out, rg))
    }

    /// Single embedding row as a vector.
    pub fn embed(&mut self, e: Var, id: usize) -> Result<Var, TensorError> {
        let rows = self.gather_rows(e, &[id])?;
        let d = self.shape(rows)[1];
        self.reshape(rows, vec![d])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        if numel(&shape) != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), shape, out, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), vec![], vec![s], rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "dot")?;
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .fold(T::zero(), |s, (&x, &y)| s + x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Dot(a, b), vec![], vec![s], rg))
    }

    /// Single entry of a vector as a scalar node.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if i >= n {
            return Err(TensorError::Index {
                op: "pick",
                index: i,
                bound: n,
            });
        }
        let s = self.value(x)[i];
        let rg = self.rg(x);
        Ok(self.push(Op::Pick(x, i), vec![], vec![s], rg))
    }

    /// `out[idx[i]] += x[i]` into a zero vector of length `len`.
    pub fn scatter_add(&mut self, x: Var, idx: &[usize], len: usize) -> Result<Var, TensorError> {
        let n = self.dims1(x, "scatter_add")?;
        if idx.len() != n {
            return Err(shape_err("scatter_add", &[n], &[idx.len()]));
        }
        let mut out = vec![T::zero(); len];
        for (&i, &v) in idx.iter().zip(self.value(x)) {
            if i >= len {
                return Err(TensorError::Index {
                    op: "scatter_add",
                    index: i,
                    bound: len,
                });
            }
            out[i] += v;
        }
        let rg = self.rg(x);
        Ok(self.push(Op::ScatterAdd(x, idx.to_vec()), vec![len], out, rg))
    }

    /// Zero-extends a vector to `len`.
    pub fn pad(&mut self, x: Var, len: usize) -> Result<Var, TensorError> {
        let n = self.dims1(x, "pad")?;
        if len < n {
            return Err(shape_err("pad", &[n], &[len]));
        }
        let mut out = self.value(x).to_vec();
        out.resize(len, T::zero());
        let rg = self.rg(x);
        Ok(self.push(Op::Pad(x), vec![len], out, rg))
    }

    /// `-log probs[target]`, with the probability floored at [`NLL_FLOOR`].
    pub fn nll(&mut self, probs: Var, target: usize) -> Result<Var, TensorError> {
        let n = self.dims1(probs, "nll")?;
        if target >= n {
            return Err(TensorError::Index {
                op: "nll",
                index: target,
                bound: n,
            });
        }
        let p = self.value(probs)[target];
        let floor = T::from_f64(NLL_FLOOR);
        let clamped = !(p > floor);
        if clamped {
            self.nll_clamped += 1;
        }
        let loss = -(if clamped { floor } else { p }).ln();
        let rg = self.rg(probs);
        Ok(self.push(Op::Nll(probs, target, clamped), vec![], vec![loss], rg))
    }

    /// Sum of equally shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("add_n of zero parts".into()))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![T::zero(); numel(&shape)];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(shape_err("add_n", &shape, self.shape(p)));
            }
            for (o, &x) in out.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::AddN(parts.to_vec()), shape, out, rg))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Each call recomputes from scratch, so calling twice on the same graph
    /// yields identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let mut params = ParamGrads::new(self.params);
        let leaves = self.backward_impl(loss, &mut params, T::one())?;
        let leaf_sizes = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf))
            .map(|(i, n)| (Var(i), n.value.len()))
            .collect();
        Ok(Gradients {
            params,
            leaves,
            leaf_sizes,
        })
    }

    /// Reverse pass accumulating `scale · dLoss/dParam` into `acc`.
    pub fn backward_into(
        &self,
        loss: Var,
        acc: &mut ParamGrads<T>,
        scale: T,
    ) -> Result<(), TensorError> {
        self.backward_impl(loss, acc, scale).map(|_| ())
    }

    fn backward_impl(
        &self,
        loss: Var,
        acc: &mut ParamGrads<T>,
        seed: T,
    ) -> Result<HashMap<Var, Vec<T>>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if acc.len() != self.params.len() {
            return Err(TensorError::Contract(
                "gradient buffer does not match parameter store".into(),
            ));
        }
        let mut leaves = HashMap::new();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Leaf => {
                    leaves.insert(Var(i), g);
                }
                Op::Param(id) => {
                    let dst = acc.slot(*id);
                    for (d, s) in dst.iter_mut().zip(&g) {
                        *d += *s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let da = slot(&mut grads, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] += dotp(grow, &bv[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let db = slot(&mut grads, *b, k * n);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                axpy(&mut db[p * n..(p + 1) * n], av[i * k + p], grow);
                            }
                        }
                    }
                }
                Op::MatVec(a, x) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    if self.rg(*a) {
                        let xv = self.value(*x);
                        let da = slot(&mut grads, *a, m * k);
                        for (i, &gi) in g.iter().enumerate() {
                            axpy(&mut da[i * k..(i + 1) * k], gi, xv);
                        }
                    }
                    if self.rg(*x) {
                        let av = self.value(*a);
                        let dx = slot(&mut grads, *x, k);
                        for (i, &gi) in g.iter().enumerate() {
                            axpy(dx, gi, &av[i * k..(i + 1) * k]);
                        }
                    }
                }
                Op::VecMat(x, a) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    if self.rg(*x) {
                        let av = self.value(*a);
                        let dx = slot(&mut grads, *x, m);
                        for (i, d) in dx.iter_mut().enumerate() {
                            *d += dotp(&av[i * k..(i + 1) * k], &g);
                        }
                    }
                    if self.rg(*a) {
                        let xv = self.value(*x);
                        let da = slot(&mut grads, *a, m * k);
                        for (i, &xi) in xv.iter().enumerate() {
                            if xi != T::zero() {
                                axpy(&mut da[i * k..(i + 1) * k], xi, &g);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc_scaled(&mut grads, *a, &g, T::one());
                    self.acc_scaled(&mut grads, *b, &g, T::one());
                }
                Op::Sub(a, b) => {
                    self.acc_scaled(&mut grads, *a, &g, T::one());
                    self.acc_scaled(&mut grads, *b, &g, -T::one());
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let bv = self.value(*b);
                        let da = slot(&mut grads, *a, g.len());
                        for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * y;
                        }
                    }
                    if self.rg(*b) {
                        let av = self.value(*a);
                        let db = slot(&mut grads, *b, g.len());
                        for ((d, &gi), &x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * x;
                        }
                    }
                }
                Op::AddRow(m, v) => {
                    self.acc_scaled(&mut grads, *m, &g, T::one());
                    if self.rg(*v) {
                        let d = self.shape(*v)[0];
                        let dv = slot(&mut grads, *v, d);
                        for r in g.chunks(d) {
                            axpy(dv, T::one(), r);
                        }
                    }
                }
                Op::Scale(v, s) => {
                    let k = self.scalar(*s);
                    self.acc_scaled(&mut grads, *v, &g, k);
                    if self.rg(*s) {
                        let ds = dotp(&g, self.value(*v));
                        slot(&mut grads, *s, 1)[0] += ds;
                    }
                }
                Op::Affine(x, mul) => self.acc_scaled(&mut grads, *x, &g, *mul),
                Op::Unary(kind, x) => {
                    let y = &node.value;
                    let xv = self.value(*x);
                    let dx = slot(&mut grads, *x, g.len());
                    for j in 0..g.len() {
                        let local = match kind {
                            Unary::Tanh => T::one() - y[j] * y[j],
                            Unary::Sigmoid => y[j] * (T::one() - y[j]),
                            Unary::Exp => y[j],
                            Unary::Log => T::one() / xv[j],
                        };
                        dx[j] += g[j] * local;
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner = dotp(y, &g);
                    let dx = slot(&mut grads, *x, g.len());
                    for j in 0..g.len() {
                        dx[j] += y[j] * (g[j] - inner);
                    }
                }
                Op::Concat(parts, axis) => {
                    if *axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let n = self.value(*p).len();
                            self.acc_scaled(&mut grads, *p, &g[off..off + n], T::one());
                            off += n;
                        }
                    } else {
                        let rows = node.shape[0];
                        let total = node.shape[1];
                        let mut col = 0;
                        for p in parts {
                            let c = self.shape(*p)[1];
                            if self.rg(*p) {
                                let dp = slot(&mut grads, *p, rows * c);
                                for r in 0..rows {
                                    axpy(
                                        &mut dp[r * c..(r + 1) * c],
                                        T::one(),
                                        &g[r * total + col..r * total + col + c],
                                    );
                                }
                            }
                            col += c;
                        }
                    }
                }
                Op::Stack(parts) => {
                    let d = node.shape[1];
                    for (r, p) in parts.iter().enumerate() {
                        self.acc_scaled(&mut grads, *p, &g[r * d..(r + 1) * d], T::one());
                    }
                }
                Op::Slice(x, start) => {
                    let n = self.value(*x).len();
                    let dx = slot(&mut grads, *x, n);
                    axpy(&mut dx[*start..*start + g.len()], T::one(), &g);
                }
                Op::Row(m, r) => {
                    let n = self.value(*m).len();
                    let d = g.len();
                    let dm = slot(&mut grads, *m, n);
                    axpy(&mut dm[r * d..(r + 1) * d], T::one(), &g);
                }
                Op::GatherRows(e, ids) => {
                    let n = self.value(*e).len();
                    let d = self.shape(*e)[1];
                    let de = slot(&mut grads, *e, n);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut de[id * d..(id + 1) * d], T::one(), &g[r * d..(r + 1) * d]);
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    let dx = slot(&mut grads, *x, n);
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Dot(a, b) => {
                    let bv = self.value(*b).to_vec();
                    self.acc_scaled(&mut grads, *a, &bv, g[0]);
                    let av = self.value(*a).to_vec();
                    self.acc_scaled(&mut grads, *b, &av, g[0]);
                }
                Op::Pick(x, j) => {
                    let n = self.value(*x).len();
                    slot(&mut grads, *x, n)[*j] += g[0];
                }
                Op::ScatterAdd(x, idx) => {
                    let dx = slot(&mut grads, *x, idx.len());
                    for (d, &i) in dx.iter_mut().zip(idx) {
                        *d += g[i];
                    }
                }
                Op::Pad(x) => {
                    let n = self.value(*x).len();
                    self.acc_scaled(&mut grads, *x, &g[..n], T::one());
                }
                Op::Nll(p, target, clamped) => {
                    if !clamped {
                        let n = self.value(*p).len();
                        let pt = self.value(*p)[*target];
                        slot(&mut grads, *p, n)[*target] -= g[0] / pt;
                    }
                }
                Op::Reshape(x) => self.acc_scaled(&mut grads, *x, &g, T::one()),
                Op::AddN(parts) => {
                    for p in parts {
                        self.acc_scaled(&mut grads, *p, &g, T::one());
                    }
                }
            }
        }
        Ok(leaves)
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], k: T) {
        if !self.rg(v) {
            return;
        }
        let dst = slot(grads, v, g.len());
        axpy(dst, k, g);
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], a: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

#[inline]
fn dotp<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_values<T: Real>(v: &[T], mask: Option<&[bool]>) -> Vec<T> {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let max = v
        .iter()
        .enumerate()
        .filter(|(i, _)| live(*i))
        .map(|(_, &x)| x)
        .fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| if live(i) { (x - max).exp() } else { T::zero() })
        .collect();
    let z: T = out.iter().copied().sum();
    for o in out.iter_mut() {
        *o /= z;
    }
    out
}
