use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{affine_value, clamp_value, sum_value, Real};
use super::Activation;
use super::DiffError;
use crate::math;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

enum PartialSource<'a> {
    /// Partials are the values of these variables.
    Values(&'a [Var<'a>]),
    Plain(&'a [f64]),
}

/// How a node's adjoint propagates to its parents.
#[derive(Clone, Copy)]
enum Op {
    Leaf,
    /// Explicit edges `parents[start..start+count]` with matching partials.
    Edges { start: u32, count: u32 },
    /// `act(Σ values[w+i]·values[x+i] + values[bias])` over contiguous id
    /// ranges; the partials are read from the node values during the sweep.
    Dense { w: u32, x: u32, n: u32, bias: u32, deriv: f64 },
    /// `act(Σ cᵢ·values[x+i] + b)` with the constants `cᵢ` in
    /// `consts[start..start+n]`.
    DenseFrozen { start: u32, x: u32, n: u32, deriv: f64 },
}

#[derive(Default)]
struct Nodes {
    values: Vec<f64>,
    ops: Vec<Op>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    consts: Vec<f64>,
}

/// Append-only record of scalar operations.
///
/// Nodes are numbered in creation order, so the numbering is already a
/// topological order and the backward pass is a single reverse sweep. A tape is
/// meant to live for one minibatch: record, call [`Tape::backward`], read the
/// gradients, then [`Tape::clear`] and reuse the allocation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Nodes>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.id, self.value)
    }
}

/// Whether the ids of `vars` are consecutive.
fn contiguous(vars: &[Var<'_>]) -> bool {
    vars.windows(2).all(|w| w[1].id == w[0].id + 1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Self {
            nodes: RefCell::new(Nodes {
                values: Vec::with_capacity(nodes),
                ops: Vec::with_capacity(nodes),
                parents: Vec::with_capacity(edges),
                partials: Vec::with_capacity(edges),
                consts: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node but keeps the allocation.
    pub fn clear(&mut self) {
        let nodes = self.nodes.get_mut();
        nodes.values.clear();
        nodes.ops.clear();
        nodes.parents.clear();
        nodes.partials.clear();
        nodes.consts.clear();
    }

    /// A new leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push_op(value, Op::Leaf)
    }

    /// One leaf per value, with consecutive ids.
    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        let mut nodes = self.nodes.borrow_mut();
        let first = nodes.values.len() as u32;
        nodes.values.extend_from_slice(values);
        nodes.ops.extend(core::iter::repeat_n(Op::Leaf, values.len()));
        values.iter().enumerate().map(|(i, &value)| Var { tape: self, id: first + i as u32, value }).collect()
    }

    /// A leaf whose gradient is never read. Identical to [`Tape::var`]; the name
    /// documents intent at call sites.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    fn push_op(&self, value: f64, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.values.len() as u32;
        nodes.values.push(value);
        nodes.ops.push(op);
        Var { tape: self, id, value }
    }

    fn push(&self, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let mut guard = self.nodes.borrow_mut();
        let nodes = &mut *guard;
        let start = nodes.parents.len() as u32;
        for (parent, partial) in edges {
            nodes.parents.push(parent);
            nodes.partials.push(partial);
        }
        let count = nodes.parents.len() as u32 - start;
        let id = nodes.values.len() as u32;
        nodes.values.push(value);
        nodes.ops.push(Op::Edges { start, count });
        Var { tape: self, id, value }
    }

    /// Pushes a node whose edges are given as parallel id/partial lists,
    /// appended in bulk. Edge order inside a node does not affect the sweep.
    fn push_bulk(&self, value: f64, groups: &[(&[Var<'_>], PartialSource<'_>)], extra: Option<(u32, f64)>) -> Var<'_> {
        let mut guard = self.nodes.borrow_mut();
        let nodes = &mut *guard;
        let start = nodes.parents.len() as u32;
        let total: usize = groups.iter().map(|(v, _)| v.len()).sum::<usize>() + extra.is_some() as usize;
        nodes.parents.reserve(total);
        nodes.partials.reserve(total);
        for (vars, partials) in groups {
            nodes.parents.extend(vars.iter().map(|v| v.id));
            match partials {
                PartialSource::Values(of) => nodes.partials.extend(of.iter().map(|v| v.value)),
                PartialSource::Plain(of) => nodes.partials.extend_from_slice(of),
            }
        }
        if let Some((id, p)) = extra {
            nodes.parents.push(id);
            nodes.partials.push(p);
        }
        let count = nodes.parents.len() as u32 - start;
        let id = nodes.values.len() as u32;
        nodes.values.push(value);
        nodes.ops.push(Op::Edges { start, count });
        Var { tape: self, id, value }
    }

    /// Copies of `inputs` with consecutive ids (identity nodes), unless they
    /// already are consecutive.
    fn contiguous_inputs<'a>(&'a self, inputs: &[Var<'a>]) -> Vec<Var<'a>> {
        if contiguous(inputs) {
            inputs.to_vec()
        } else {
            inputs.iter().map(|x| x.unary(x.value, 1.0)).collect()
        }
    }

    /// Reverse sweep from `output`, returning the adjoint of every node recorded
    /// up to and including it.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, DiffError> {
        assert!(core::ptr::eq(self, output.tape), "output belongs to another tape");
        let nodes = self.nodes.borrow();
        let values = &nodes.values;
        let last = output.id as usize;
        let mut adjoints: Vec<f64> = alloc::vec![0.0; last + 1];
        adjoints[last] = 1.0;
        for i in (0..=last).rev() {
            let value = values[i];
            if !value.is_finite() {
                return Err(DiffError::NonFinite { node: NodeId(i as u32), value });
            }
            let adjoint = adjoints[i];
            if adjoint == 0.0 {
                continue;
            }
            if !adjoint.is_finite() {
                return Err(DiffError::NonFinite { node: NodeId(i as u32), value: adjoint });
            }
            match nodes.ops[i] {
                Op::Leaf => {}
                Op::Edges { start, count } => {
                    let range = start as usize..(start + count) as usize;
                    for (&parent, &partial) in nodes.parents[range.clone()].iter().zip(&nodes.partials[range]) {
                        adjoints[parent as usize] += adjoint * partial;
                    }
                }
                Op::Dense { w, x, n, bias, deriv } => {
                    let g = adjoint * deriv;
                    if g != 0.0 {
                        let (w, x, n) = (w as usize, x as usize, n as usize);
                        for k in 0..n {
                            adjoints[w + k] += g * values[x + k];
                        }
                        for k in 0..n {
                            adjoints[x + k] += g * values[w + k];
                        }
                        adjoints[bias as usize] += g;
                    }
                }
                Op::DenseFrozen { start, x, n, deriv } => {
                    let g = adjoint * deriv;
                    if g != 0.0 {
                        let (x, n) = (x as usize, n as usize);
                        let consts = &nodes.consts[start as usize..start as usize + n];
                        for (a, c) in adjoints[x..x + n].iter_mut().zip(consts) {
                            *a += g * c;
                        }
                    }
                }
            }
        }
        Ok(Gradients { adjoints })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// `∂output/∂var`; zero for nodes recorded after the output.
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoints.get(var.id as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }

    pub fn by_id(&self, id: NodeId) -> f64 {
        self.adjoints.get(id.index()).copied().unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> NodeId {
        NodeId(self.id)
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: f64, partial: f64) -> Self {
        self.tape.push(value, [(self.id, partial)])
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(core::ptr::eq(self.tape, other.tape), "mixing tapes");
        self.tape.push(value, [(self.id, da), (other.id, db)])
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.value
    }

    fn constant_like(self, c: f64) -> Self {
        self.tape.constant(c)
    }

    fn exp(self) -> Self {
        let e = math::exp(self.value);
        self.unary(e, e)
    }

    fn ln(self) -> Self {
        self.unary(math::ln(self.value), 1.0 / self.value)
    }

    fn tanh(self) -> Self {
        let t = math::tanh(self.value);
        self.unary(t, 1.0 - t * t)
    }

    fn softplus(self) -> Self {
        self.unary(math::softplus(self.value), math::sigmoid(self.value))
    }

    fn relu(self) -> Self {
        if self.value > 0.0 {
            self.unary(self.value, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }

    fn abs(self) -> Self {
        let sign = if self.value < 0.0 { -1.0 } else { 1.0 };
        self.unary(f64::abs(self.value), sign)
    }

    fn clamp(self, lo: f64, hi: f64) -> Self {
        let v = clamp_value(self.value, lo, hi);
        let inside = self.value >= lo && self.value <= hi;
        self.unary(v, if inside { 1.0 } else { 0.0 })
    }

    fn norm(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let r = math::sqrt(sum_value(xs.len(), |i| xs[i].value * xs[i].value));
        let scale = if r > 0.0 { 1.0 / r } else { 0.0 };
        tape.push(r, xs.iter().map(|x| (x.id, x.value * scale)))
    }

    fn sum(xs: &[Self]) -> Self {
        assert!(!xs.is_empty(), "sum of an empty slice");
        let tape = xs[0].tape;
        tape.push(sum_value(xs.len(), |i| xs[i].value), xs.iter().map(|x| (x.id, 1.0)))
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len());
        let tape = a[0].tape;
        let value = affine_value(a.len(), |i| a[i].value, |i| b[i].value, 0.0);
        tape.push_bulk(value, &[(a, PartialSource::Values(b)), (b, PartialSource::Values(a))], None)
    }

    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let value = affine_value(inputs.len(), |i| weights[i].value, |i| inputs[i].value, bias.value);
        bias.tape.push_bulk(
            value,
            &[(weights, PartialSource::Values(inputs)), (inputs, PartialSource::Values(weights))],
            Some((bias.id, 1.0)),
        )
    }

    fn affine_frozen(weights: &[f64], inputs: &[Self], bias: f64) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let tape = inputs[0].tape;
        let value = affine_value(inputs.len(), |i| weights[i], |i| inputs[i].value, bias);
        tape.push_bulk(value, &[(inputs, PartialSource::Plain(weights))], None)
    }

    fn dense(weights: &[Self], biases: &[Self], inputs: &[Self], act: Activation) -> Vec<Self> {
        let n = inputs.len();
        debug_assert_eq!(weights.len(), n * biases.len());
        let Some(first) = biases.first() else { return Vec::new() };
        let tape = first.tape;
        if n == 0 || !contiguous(weights) {
            return (0..biases.len())
                .map(|o| act.apply(Self::affine(&weights[o * n..(o + 1) * n], inputs, biases[o])))
                .collect();
        }
        let xs = tape.contiguous_inputs(inputs);
        let x = xs[0].id;
        (0..biases.len())
            .map(|o| {
                let row = &weights[o * n..(o + 1) * n];
                let pre = affine_value(n, |i| row[i].value, |i| xs[i].value, biases[o].value);
                let (value, deriv) = act.eval(pre);
                tape.push_op(value, Op::Dense { w: row[0].id, x, n: n as u32, bias: biases[o].id, deriv })
            })
            .collect()
    }

    fn dense_frozen(weights: &[f64], biases: &[f64], inputs: &[Self], act: Activation) -> Vec<Self> {
        let n = inputs.len();
        debug_assert_eq!(weights.len(), n * biases.len());
        let tape = inputs.first().expect("dense layers have at least one input").tape;
        let xs = tape.contiguous_inputs(inputs);
        let x = xs[0].id;
        let start = {
            let mut nodes = tape.nodes.borrow_mut();
            let start = nodes.consts.len() as u32;
            nodes.consts.extend_from_slice(weights);
            start
        };
        (0..biases.len())
            .map(|o| {
                let row = &weights[o * n..(o + 1) * n];
                let pre = affine_value(n, |i| row[i], |i| xs[i].value, biases[o]);
                let (value, deriv) = act.eval(pre);
                tape.push_op(value, Op::DenseFrozen { start: start + (o * n) as u32, x, n: n as u32, deriv })
            })
            .collect()
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        let q = self.value / rhs.value;
        self.binary(rhs, q, inv, -q * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self + rhs.value, 1.0)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self * rhs.value, self)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.value;
        rhs.unary(q, -q / rhs.value)
    }
}
