//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] then walks the record in reverse and
//! returns the gradient of a scalar loss with respect to every leaf that
//! was created with gradients enabled. A tape is meant to be rebuilt for
//! each training step and can only be differentiated once.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::element::{gemm_into, Element, MatRef};
use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    broadcast_shape, inverse_perm, permute_data, sum_to_shape, zip_broadcast, Tensor,
};

#[derive(Debug, Clone)]
enum Op<E> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, E),
    Exp(usize),
    Log(usize),
    Powf(usize, E),
    Sin(usize),
    Cos(usize),
    Sigmoid(usize),
    Matmul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Narrow { input: usize, axis: usize, start: usize },
    Sum { input: usize, axis: usize },
    Mean { input: usize, axis: usize },
    SumAll(usize),
    Softmax(usize),
    RmsNorm { input: usize, eps: E },
    Gather { table: usize, ids: Vec<usize> },
}

struct Node<E> {
    value: Rc<Tensor<E>>,
    op: Op<E>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Operation record for one forward pass.
pub struct Tape<E: Element = f32> {
    nodes: RefCell<Vec<Node<E>>>,
    consumed: Cell<bool>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, E: Element = f32> {
    tape: &'t Tape<E>,
    id: usize,
}

impl<E: Element> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients<E: Element = f32> {
    by_node: BTreeMap<usize, Tensor<E>>,
    by_param: BTreeMap<ParamId, usize>,
}

impl<E: Element> Gradients<E> {
    pub fn wrt(&self, var: Var<'_, E>) -> Option<&Tensor<E>> {
        self.by_node.get(&var.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<E>> {
        self.by_param.get(&id).and_then(|n| self.by_node.get(n))
    }

    /// Gradients in parameter order, zeros for parameters that were not
    /// placed on the tape.
    pub fn for_store(&self, store: &ParamStore<E>) -> Vec<Tensor<E>> {
        store
            .iter()
            .map(|(id, _, t)| {
                self.param(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<E>, op: Op<E>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push(value, Op::Leaf, false, None)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push(value, Op::Leaf, true, None)
    }

    /// A differentiable input bound to a stored parameter.
    pub fn param(&self, store: &ParamStore<E>, id: ParamId) -> Var<'_, E> {
        self.push(store.get(id).clone(), Op::Leaf, true, Some(id))
    }

    fn value(&self, id: usize) -> Rc<Tensor<E>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::ForeignVar);
        }
        if self.consumed.replace(true) {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), E::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, gin) in backward_rule(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gin)?,
                    slot @ None => *slot = Some(gin),
                }
            }
        }

        let mut by_node = BTreeMap::new();
        let mut by_param = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                by_node.insert(id, g);
                if let Some(p) = node.param {
                    by_param.insert(p, id);
                }
            }
        }
        Ok(Gradients { by_node, by_param })
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn unary_grad<E: Element>(g: &Tensor<E>, x: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    let data = g.data().iter().zip(x.data()).map(|(&g, &x)| f(g, x)).collect();
    Tensor::new(g.shape(), data).expect("unary grad shape")
}

fn backward_rule<E: Element>(nodes: &[Node<E>], node: &Node<E>, g: &Tensor<E>) -> Vec<(usize, Tensor<E>)> {
    let val = |i: usize| -> &Tensor<E> { &nodes[i].value };
    let out = &node.value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, sum_to_shape(g, val(*a).shape())),
            (*b, sum_to_shape(g, val(*b).shape())),
        ],
        Op::Sub(a, b) => {
            let neg = g.map(|v| -v);
            vec![
                (*a, sum_to_shape(g, val(*a).shape())),
                (*b, sum_to_shape(&neg, val(*b).shape())),
            ]
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = Tensor::new(g.shape(), zip_broadcast(g, vb, g.shape(), |g, y| g * y)).expect("mul grad");
            let gb = Tensor::new(g.shape(), zip_broadcast(g, va, g.shape(), |g, x| g * x)).expect("mul grad");
            vec![
                (*a, sum_to_shape(&ga, va.shape())),
                (*b, sum_to_shape(&gb, vb.shape())),
            ]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = Tensor::new(g.shape(), zip_broadcast(g, vb, g.shape(), |g, y| g / y)).expect("div grad");
            // d(a/b)/db = -out / b
            let q = Tensor::new(out.shape(), zip_broadcast(out, vb, out.shape(), |o, y| -o / y)).expect("div grad");
            let gb = Tensor::new(g.shape(), zip_broadcast(g, &q, g.shape(), |g, q| g * q)).expect("div grad");
            vec![
                (*a, sum_to_shape(&ga, va.shape())),
                (*b, sum_to_shape(&gb, vb.shape())),
            ]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar(a, s) => vec![(*a, g.map(|v| v * *s))],
        Op::Exp(a) => vec![(*a, unary_grad(g, out, |g, y| g * y))],
        Op::Log(a) => vec![(*a, unary_grad(g, val(*a), |g, x| g / x))],
        Op::Powf(a, p) => {
            let p = *p;
            vec![(*a, unary_grad(g, val(*a), |g, x| g * p * x.powf(p - E::one())))]
        }
        Op::Sin(a) => vec![(*a, unary_grad(g, val(*a), |g, x| g * x.cos()))],
        Op::Cos(a) => vec![(*a, unary_grad(g, val(*a), |g, x| -g * x.sin()))],
        Op::Sigmoid(a) => vec![(*a, unary_grad(g, out, |g, y| g * y * (E::one() - y)))],
        Op::Matmul(a, b) => matmul_backward(val(*a), val(*b), g, *a, *b),
        Op::Permute(a, perm) => vec![(*a, permute_data(g, &inverse_perm(perm)))],
        Op::Reshape(a) => vec![(*a, g.clone().reshaped(val(*a).shape()).expect("reshape grad"))],
        Op::Concat(inputs, axis) => {
            let (outer, total, inner) = split_axis(g.shape(), *axis);
            let mut offset = 0;
            inputs
                .iter()
                .map(|&i| {
                    let shape = val(i).shape();
                    let len = shape[*axis];
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    offset += len;
                    (i, Tensor::new(shape, data).expect("concat grad"))
                })
                .collect()
        }
        Op::Narrow { input, axis, start } => {
            let shape = val(*input).shape();
            let (outer, total, inner) = split_axis(shape, *axis);
            let len = g.shape()[*axis];
            let mut data = vec![E::zero(); outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![(*input, Tensor::new(shape, data).expect("narrow grad"))]
        }
        Op::Sum { input, axis } | Op::Mean { input, axis } => {
            let shape = val(*input).shape();
            let (outer, len, inner) = split_axis(shape, *axis);
            let scale = if matches!(node.op, Op::Mean { .. }) {
                E::one() / E::from_usize(len).expect("len")
            } else {
                E::one()
            };
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let row = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..len {
                    data.extend(row.iter().map(|&v| v * scale));
                }
            }
            vec![(*input, Tensor::new(shape, data).expect("sum grad"))]
        }
        Op::SumAll(a) => {
            let gv = g.data()[0];
            vec![(*a, Tensor::full(val(*a).shape(), gv))]
        }
        Op::Softmax(a) => {
            let last = *out.shape().last().expect("softmax rank");
            let mut data = Vec::with_capacity(out.numel());
            for (y, gr) in out.data().chunks(last).zip(g.data().chunks(last)) {
                let dot: E = y.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                data.extend(y.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
            }
            vec![(*a, Tensor::new(out.shape(), data).expect("softmax grad"))]
        }
        Op::RmsNorm { input, eps } => {
            let x = val(*input);
            let last = *x.shape().last().expect("rms rank");
            let n = E::from_usize(last).expect("len");
            let mut data = Vec::with_capacity(x.numel());
            for ((xr, yr), gr) in x.data().chunks(last).zip(out.data().chunks(last)).zip(g.data().chunks(last)) {
                let ms: E = xr.iter().map(|&v| v * v).sum::<E>() / n;
                let rms = (ms + *eps).sqrt();
                let dot: E = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum::<E>() / n;
                data.extend(yr.iter().zip(gr).map(|(&y, &g)| (g - y * dot) / rms));
            }
            vec![(*input, Tensor::new(x.shape(), data).expect("rms grad"))]
        }
        Op::Gather { table, ids } => {
            let t = val(*table);
            let d = t.shape()[1];
            let mut data = vec![E::zero(); t.numel()];
            for (row, &id) in ids.iter().enumerate() {
                let src = &g.data()[row * d..(row + 1) * d];
                for (dst, &s) in data[id * d..(id + 1) * d].iter_mut().zip(src) {
                    *dst += s;
                }
            }
            vec![(*table, Tensor::new(t.shape(), data).expect("gather grad"))]
        }
    }
}

/// Batch layout of a matmul: how many products and whether an operand is shared.
struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_shared: bool,
    b_shared: bool,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(TensorError::shape("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(TensorError::shape("matmul", a, b));
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let (batch_shape, a_shared, b_shared) = if ba == bb {
        (ba.to_vec(), false, false)
    } else if bb.is_empty() {
        (ba.to_vec(), false, true)
    } else if ba.is_empty() {
        (bb.to_vec(), true, false)
    } else {
        return Err(TensorError::shape("matmul", a, b));
    };
    let batch = batch_shape.iter().product();
    let mut out_shape = batch_shape;
    out_shape.extend([m, n]);
    Ok(MatmulDims {
        batch,
        m,
        k,
        n,
        a_shared,
        b_shared,
        out_shape,
    })
}

fn matmul_forward<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let d = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![E::zero(); d.batch * d.m * d.n];
    if d.b_shared {
        let am = MatRef::row_major(a.data(), d.batch * d.m, d.k);
        gemm_into(am, MatRef::row_major(b.data(), d.k, d.n), &mut out, false);
    } else {
        for i in 0..d.batch {
            let aoff = if d.a_shared { 0 } else { i * d.m * d.k };
            let am = MatRef::row_major(&a.data()[aoff..aoff + d.m * d.k], d.m, d.k);
            let bm = MatRef::row_major(&b.data()[i * d.k * d.n..(i + 1) * d.k * d.n], d.k, d.n);
            gemm_into(am, bm, &mut out[i * d.m * d.n..(i + 1) * d.m * d.n], false);
        }
    }
    Tensor::new(&d.out_shape, out)
}

fn matmul_backward<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    g: &Tensor<E>,
    ia: usize,
    ib: usize,
) -> Vec<(usize, Tensor<E>)> {
    let d = matmul_dims(a.shape(), b.shape()).expect("matmul dims");
    let mut ga = vec![E::zero(); a.numel()];
    let mut gb = vec![E::zero(); b.numel()];
    if d.b_shared {
        let rows = d.batch * d.m;
        let gm = MatRef::row_major(g.data(), rows, d.n);
        gemm_into(gm, MatRef::row_major(b.data(), d.k, d.n).t(), &mut ga, false);
        gemm_into(MatRef::row_major(a.data(), rows, d.k).t(), gm, &mut gb, false);
    } else {
        for i in 0..d.batch {
            let aoff = if d.a_shared { 0 } else { i * d.m * d.k };
            let boff = i * d.k * d.n;
            let gm = MatRef::row_major(&g.data()[i * d.m * d.n..(i + 1) * d.m * d.n], d.m, d.n);
            let am = MatRef::row_major(&a.data()[aoff..aoff + d.m * d.k], d.m, d.k);
            let bm = MatRef::row_major(&b.data()[boff..boff + d.k * d.n], d.k, d.n);
            gemm_into(gm, bm.t(), &mut ga[aoff..aoff + d.m * d.k], d.a_shared);
            gemm_into(am.t(), gm, &mut gb[boff..boff + d.k * d.n], false);
        }
    }
    vec![
        (ia, Tensor::new(a.shape(), ga).expect("matmul grad")),
        (ib, Tensor::new(b.shape(), gb).expect("matmul grad")),
    ]
}

impl<'t, E: Element> Var<'t, E> {
    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<E>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn check_same_tape(&self, other: &Var<'t, E>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    fn unary(self, value: Tensor<E>, op: Op<E>) -> Var<'t, E> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg, None)
    }

    fn binary(
        self,
        rhs: Var<'t, E>,
        name: &'static str,
        f: impl Fn(E, E) -> E,
        op: Op<E>,
    ) -> Result<Var<'t, E>> {
        self.check_same_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::shape(name, a.shape(), b.shape()))?;
        let data = zip_broadcast(&a, &b, &shape, f);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(Tensor::new(&shape, data)?, op, rg, None))
    }

    pub fn add(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.binary(rhs, "add", |x, y| x + y, Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.binary(rhs, "sub", |x, y| x - y, Op::Sub(self.id, rhs.id))
    }

    pub fn mul(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.binary(rhs, "mul", |x, y| x * y, Op::Mul(self.id, rhs.id))
    }

    /// Elementwise division; every divisor element must be nonzero.
    pub fn div(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        if rhs.value().data().iter().any(|v| v.is_zero()) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "divisor contains zero".into(),
            });
        }
        self.binary(rhs, "div", |x, y| x / y, Op::Div(self.id, rhs.id))
    }

    pub fn add_scalar(self, s: E) -> Var<'t, E> {
        let v = self.value().map(|x| x + s);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(self, s: E) -> Var<'t, E> {
        let v = self.value().map(|x| x * s);
        self.unary(v, Op::MulScalar(self.id, s))
    }

    pub fn neg(self) -> Var<'t, E> {
        self.mul_scalar(-E::one())
    }

    pub fn exp(self) -> Var<'t, E> {
        let v = self.value().map(E::exp);
        self.unary(v, Op::Exp(self.id))
    }

    /// Natural log; inputs must be strictly positive.
    pub fn log(self) -> Result<Var<'t, E>> {
        let x = self.value();
        if x.data().iter().any(|&v| v <= E::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: "input must be strictly positive".into(),
            });
        }
        Ok(self.unary(x.map(E::ln), Op::Log(self.id)))
    }

    /// `x^p`; non-integer or negative `p` require strictly positive inputs.
    pub fn powf(self, p: E) -> Result<Var<'t, E>> {
        let x = self.value();
        let integral = p.fract().is_zero() && p >= E::zero();
        if !integral && x.data().iter().any(|&v| v <= E::zero()) {
            return Err(TensorError::Domain {
                op: "powf",
                detail: "non-integer or negative exponent needs positive inputs".into(),
            });
        }
        Ok(self.unary(x.map(|v| v.powf(p)), Op::Powf(self.id, p)))
    }

    pub fn sqr(self) -> Var<'t, E> {
        self.mul(self).expect("same shape")
    }

    pub fn sin(self) -> Var<'t, E> {
        let v = self.value().map(E::sin);
        self.unary(v, Op::Sin(self.id))
    }

    pub fn cos(self) -> Var<'t, E> {
        let v = self.value().map(E::cos);
        self.unary(v, Op::Cos(self.id))
    }

    /// Logistic function, evaluated without overflow for large `|x|`.
    pub fn sigmoid(self) -> Var<'t, E> {
        let v = self.value().map(|x| {
            if x >= E::zero() {
                E::one() / (E::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (E::one() + e)
            }
        });
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'t, E> {
        self.mul(self.sigmoid()).expect("same shape")
    }

    /// Batched matrix product over the last two axes. Batch axes must match,
    /// or one operand must be a plain matrix shared across the batch.
    pub fn matmul(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.check_same_tape(&rhs)?;
        let out = matmul_forward(&self.value(), &rhs.value())?;
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(out, Op::Matmul(self.id, rhs.id), rg, None))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, E>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::InvalidArgument(format!(
                "permute: {perm:?} is not a permutation of rank {rank}"
            )));
        }
        Ok(self.unary(permute_data(&x, perm), Op::Permute(self.id, perm.to_vec())))
    }

    pub fn transpose(self, d0: usize, d1: usize) -> Result<Var<'t, E>> {
        let rank = self.value().rank();
        for d in [d0, d1] {
            if d >= rank {
                return Err(TensorError::InvalidAxis {
                    op: "transpose",
                    axis: d,
                    rank,
                });
            }
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(d0, d1);
        self.permute(&perm)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, E>> {
        let v = (*self.value()).clone().reshaped(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Slice of `len` entries along `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        let rank = x.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: "narrow", axis, rank });
        }
        if start + len > x.shape()[axis] {
            return Err(TensorError::IndexOutOfRange {
                op: "narrow",
                index: start + len,
                bound: x.shape()[axis],
            });
        }
        let (outer, total, inner) = split_axis(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        Ok(self.unary(Tensor::new(&shape, data)?, Op::Narrow { input: self.id, axis, start }))
    }

    pub fn split(self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t, E>>> {
        let total: usize = sizes.iter().sum();
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "split",
                axis,
                rank: shape.len(),
            });
        }
        if total != shape[axis] {
            return Err(TensorError::shape("split", &shape, sizes));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.narrow(axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t, E>> {
        self.reduce_axis(axis, keepdim, false)
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'t, E>> {
        self.reduce_axis(axis, keepdim, true)
    }

    fn reduce_axis(self, axis: usize, keepdim: bool, mean: bool) -> Result<Var<'t, E>> {
        let x = self.value();
        let rank = x.rank();
        let name = if mean { "mean" } else { "sum" };
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: name, axis, rank });
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut acc = vec![0f64; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &x.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (s, &v) in acc[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *s += v.as_f64();
                }
            }
        }
        let denom = if mean { len as f64 } else { 1.0 };
        let data = acc.into_iter().map(|s| E::from_f64_lossy(s / denom)).collect();
        let mut shape = x.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let op = if mean {
            Op::Mean { input: self.id, axis }
        } else {
            Op::Sum { input: self.id, axis }
        };
        Ok(self.unary(Tensor::new(&shape, data)?, op))
    }

    /// Sum of every element, accumulated in f64, as a scalar.
    pub fn sum_all(self) -> Var<'t, E> {
        let s: f64 = self.value().data().iter().map(|v| v.as_f64()).sum();
        self.unary(Tensor::scalar(E::from_f64_lossy(s)), Op::SumAll(self.id))
    }

    pub fn mean_all(self) -> Var<'t, E> {
        let n = self.value().numel().max(1);
        self.sum_all().mul_scalar(E::one() / E::from_usize(n).expect("len"))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, E>> {
        let x = self.value();
        let last = *x.shape().last().ok_or(TensorError::InvalidAxis { op: "softmax", axis: 0, rank: 0 })?;
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(last.max(1)) {
            let max = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
            let start = data.len();
            let mut sum = 0f64;
            for &v in row {
                let e = (v - max).exp();
                sum += e.as_f64();
                data.push(e);
            }
            let inv = E::from_f64_lossy(1.0 / sum);
            data[start..].iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.unary(Tensor::new(x.shape(), data)?, Op::Softmax(self.id)))
    }

    /// `x / sqrt(mean(x^2) + eps)` over the last axis (no mean subtraction).
    pub fn rms_norm(self, eps: E) -> Result<Var<'t, E>> {
        let x = self.value();
        let last = *x.shape().last().ok_or(TensorError::InvalidAxis { op: "rms_norm", axis: 0, rank: 0 })?;
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(last.max(1)) {
            let ms: f64 = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / last as f64;
            let inv = E::from_f64_lossy(1.0 / (ms + eps.as_f64()).sqrt());
            data.extend(row.iter().map(|&v| v * inv));
        }
        Ok(self.unary(Tensor::new(x.shape(), data)?, Op::RmsNorm { input: self.id, eps }))
    }

    /// Rows `ids` of a `[vocab, dim]` table, giving `[ids.len(), dim]`.
    pub fn gather(self, ids: &[usize]) -> Result<Var<'t, E>> {
        let t = self.value();
        if t.rank() != 2 {
            return Err(TensorError::InvalidAxis {
                op: "gather",
                axis: 0,
                rank: t.rank(),
            });
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        Ok(self.unary(
            Tensor::new(&[ids.len(), d], data)?,
            Op::Gather {
                table: self.id,
                ids: ids.to_vec(),
            },
        ))
    }
}

/// Concatenates along `axis`; all other axes must agree.
pub fn concat<'t, E: Element>(vars: &[Var<'t, E>], axis: usize) -> Result<Var<'t, E>> {
    let first = vars.first().ok_or_else(|| TensorError::InvalidArgument("concat of nothing".into()))?;
    let tape = first.tape;
    let values: Vec<Rc<Tensor<E>>> = vars.iter().map(|v| v.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(TensorError::InvalidAxis {
            op: "concat",
            axis,
            rank: base.len(),
        });
    }
    let mut total = 0;
    for (v, var) in values.iter().zip(vars) {
        first.check_same_tape(var)?;
        let s = v.shape();
        let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::shape("concat", &base, s));
        }
        total += s[axis];
    }
    let (outer, _, inner) = split_axis(&base, axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for v in &values {
            let len = v.shape()[axis];
            data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let rg = vars.iter().any(|v| v.requires_grad());
    let ids = vars.iter().map(|v| v.id).collect();
    Ok(tape.push(Tensor::new(&shape, data)?, Op::Concat(ids, axis), rg, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(Tensor::eye(2));
        let out = a.matmul(i).unwrap().value();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        assert_eq!(x.softmax().unwrap().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn mean_over_rows() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let m = x.mean_axis(0, false).unwrap().value();
        // (1+5)/2, (3+7)/2
        assert_eq!(m.data(), &[3.0, 5.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let loss = x.sqr().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn disconnected_input_gets_zero_gradient() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.leaf(Tensor::scalar(4.0));
        let loss = y.mul_scalar(2.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(g.wrt(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[3]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[3]));
        let l = x.sum_all();
        tape.backward(l).unwrap();
        assert_eq!(tape.backward(l).unwrap_err(), TensorError::TapeConsumed);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[4, 2]));
        match a.matmul(b).unwrap_err() {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(a.add(b), Err(TensorError::ShapeMismatch { op: "add", .. })));
        let table = tape.constant(Tensor::ones(&[3, 2]));
        assert_eq!(
            table.gather(&[0, 3]).unwrap_err(),
            TensorError::IndexOutOfRange {
                op: "gather",
                index: 3,
                bound: 3
            }
        );
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::ones(&[2]));
        let z = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(a.div(z), Err(TensorError::Domain { op: "div", .. })));
        assert!(matches!(z.log(), Err(TensorError::Domain { op: "log", .. })));
    }

    #[test]
    fn split_then_concat_is_identity() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 5, 3], |i| i as f32));
        let parts = x.split(1, &[2, 1, 2]).unwrap();
        let back = concat(&parts, 1).unwrap();
        assert_eq!(*back.value(), *x.value());
    }

    #[test]
    fn shared_weight_matmul_matches_loop() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin()));
        let w = tape.constant(Tensor::from_fn(&[4, 5], |i| (i as f64).cos()));
        let out = a.matmul(w).unwrap().value();
        let (av, wv) = (a.value(), w.value());
        for b in 0..2 {
            for i in 0..3 {
                for j in 0..5 {
                    let want: f64 = (0..4).map(|k| av.data()[(b * 3 + i) * 4 + k] * wv.data()[k * 5 + j]).sum();
                    assert!((out.data()[(b * 3 + i) * 5 + j] - want).abs() < 1e-12);
                }
            }
        }
    }
}
