//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to tensors that descend from
//! one of its parameters. Tensors built with [`Tensor::new`] are constants:
//! they carry no node, and any operation whose operands are all constants
//! yields another constant. Calling [`Tensor::backward`] on a scalar result
//! accumulates `d loss / d param` into each parameter recorded on the tape.
//!
//! ```
//! use sugar::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let w = tape.param(vec![1.0, 2.0], &[2]).unwrap();
//! let x = Tensor::from_vec(vec![3.0, 4.0]);
//! let loss = w.mul(&x).unwrap().sum().unwrap();
//! loss.backward().unwrap();
//! assert_eq!(w.grad().unwrap(), vec![3.0, 4.0]);
//! ```
//!
//! Storage is row-major and shapes are limited to rank two, plus the
//! trailing-dimension broadcast used for bias addition.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Records operations in creation order, which is already a topological order.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

struct Node {
    op: Op,
    parents: [Option<usize>; 2],
    len: usize,
    /// Accumulated gradient; only parameters keep one.
    grad: Option<Vec<f64>>,
}

enum Op {
    Param,
    Add,
    /// `[rows × cols] + [cols]`, parent 1 is the bias.
    AddBias {
        cols: usize,
    },
    Sub,
    Mul {
        lhs: Rc<[f64]>,
        rhs: Rc<[f64]>,
    },
    Scale(f64),
    MatMul {
        lhs: Rc<[f64]>,
        rhs: Rc<[f64]>,
        m: usize,
        k: usize,
        n: usize,
    },
    /// Elementwise map; holds `f'(x)` evaluated during the forward pass.
    Unary {
        local: Vec<f64>,
    },
    Sum,
    Mean,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable leaf. Its gradient accumulates across
    /// [`Tensor::backward`] calls until [`Tape::zero_grad`].
    pub fn param(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_count(shape, values.len())?;
        let len = values.len();
        let id = self.push(Op::Param, [None, None], len);
        Ok(Tensor {
            shape: shape.to_vec(),
            values: values.into(),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        })
    }

    pub fn zero_grad(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, parents: [Option<usize>; 2], len: usize) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        debug_assert!(parents.iter().flatten().all(|&p| p < id));
        inner.nodes.push(Node {
            op,
            parents,
            len,
            grad: None,
        });
        id
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn backward_from(&self, root: usize) {
        let mut inner = self.inner.borrow_mut();
        let mut adjoint: Vec<Option<Vec<f64>>> = Vec::with_capacity(root + 1);
        adjoint.resize_with(root + 1, || None);
        adjoint[root] = Some(vec![1.0; inner.nodes[root].len]);

        for id in (0..=root).rev() {
            let Some(up) = adjoint[id].take() else {
                continue;
            };
            let [p0, p1] = inner.nodes[id].parents;
            let parent_len = p0.map_or(0, |p| inner.nodes[p].len);
            let node = &mut inner.nodes[id];
            match &node.op {
                Op::Param => {
                    match node.grad.as_mut() {
                        Some(g) => g.iter_mut().zip(&up).for_each(|(g, u)| *g += u),
                        None => node.grad = Some(up),
                    }
                    continue;
                }
                Op::Add => {
                    if let Some(p) = p1 {
                        accumulate(&mut adjoint[p], &up);
                    }
                    if let Some(p) = p0 {
                        accumulate_owned(&mut adjoint[p], up);
                    }
                }
                Op::AddBias { cols } => {
                    if let Some(p) = p1 {
                        let mut bias = vec![0.0; *cols];
                        for row in up.chunks_exact(*cols) {
                            bias.iter_mut().zip(row).for_each(|(b, u)| *b += u);
                        }
                        accumulate_owned(&mut adjoint[p], bias);
                    }
                    if let Some(p) = p0 {
                        accumulate_owned(&mut adjoint[p], up);
                    }
                }
                Op::Sub => {
                    if let Some(p) = p1 {
                        let neg: Vec<f64> = up.iter().map(|u| -u).collect();
                        accumulate_owned(&mut adjoint[p], neg);
                    }
                    if let Some(p) = p0 {
                        accumulate_owned(&mut adjoint[p], up);
                    }
                }
                Op::Mul { lhs, rhs } => {
                    if let Some(p) = p0 {
                        let g = up.iter().zip(rhs.iter()).map(|(u, r)| u * r).collect();
                        accumulate_owned(&mut adjoint[p], g);
                    }
                    if let Some(p) = p1 {
                        let g = up.iter().zip(lhs.iter()).map(|(u, l)| u * l).collect();
                        accumulate_owned(&mut adjoint[p], g);
                    }
                }
                Op::Scale(c) => {
                    if let Some(p) = p0 {
                        let g = up.iter().map(|u| u * c).collect();
                        accumulate_owned(&mut adjoint[p], g);
                    }
                }
                Op::MatMul { lhs, rhs, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if let Some(p) = p0 {
                        // up · rhsᵀ
                        let mut g = vec![0.0; m * k];
                        for i in 0..m {
                            let up_row = &up[i * n..(i + 1) * n];
                            for (j, gij) in g[i * k..(i + 1) * k].iter_mut().enumerate() {
                                let rhs_row = &rhs[j * n..(j + 1) * n];
                                *gij = dot(up_row, rhs_row);
                            }
                        }
                        accumulate_owned(&mut adjoint[p], g);
                    }
                    if let Some(p) = p1 {
                        // lhsᵀ · up
                        let mut g = vec![0.0; k * n];
                        for i in 0..m {
                            let up_row = &up[i * n..(i + 1) * n];
                            for j in 0..k {
                                let a = lhs[i * k + j];
                                g[j * n..(j + 1) * n]
                                    .iter_mut()
                                    .zip(up_row)
                                    .for_each(|(g, u)| *g += a * u);
                            }
                        }
                        accumulate_owned(&mut adjoint[p], g);
                    }
                }
                Op::Unary { local } => {
                    if let Some(p) = p0 {
                        let g = up.iter().zip(local).map(|(u, d)| u * d).collect();
                        accumulate_owned(&mut adjoint[p], g);
                    }
                }
                Op::Sum => {
                    if let Some(p) = p0 {
                        accumulate_owned(&mut adjoint[p], vec![up[0]; parent_len]);
                    }
                }
                Op::Mean => {
                    if let Some(p) = p0 {
                        let share = up[0] / parent_len as f64;
                        accumulate_owned(&mut adjoint[p], vec![share; parent_len]);
                    }
                }
            }
        }
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, g)| *a += g),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
        None => *slot = Some(g),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_count(shape: &[usize], len: usize) -> Result<()> {
    if shape.len() > 2 || shape.iter().product::<usize>() != len {
        return Err(Error::ValueCount {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: usize,
}

/// A row-major array of `f64`, optionally attached to a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Rc<[f64]>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &&self.values[..])
            .field("node", &self.node.as_ref().map(|n| n.id))
            .finish()
    }
}

impl Tensor {
    /// A constant tensor; it contributes no gradient to anything.
    pub fn new(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_count(shape, values.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            values: values.into(),
            node: None,
        })
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            shape: vec![n],
            values: values.into(),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: Rc::from(vec![value]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.len() == 1).then(|| self.values[0])
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Accumulated gradient of a parameter, `None` for anything else or
    /// before the first backward pass reaches it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let node = self.node.as_ref()?;
        let inner = node.tape.inner.borrow();
        inner.nodes[node.id].grad.clone()
    }

    /// Same values, no node: nothing flows back through the result.
    pub fn stop_gradient(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: Rc::clone(&self.values),
            node: None,
        }
    }

    /// Constant tensor of the same shape with `f` applied to each value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            node: None,
        }
    }

    /// Populates parameter gradients with `d self / d param`.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::NotScalar {
                shape: self.shape.clone(),
            });
        }
        let node = self.node.as_ref().ok_or(Error::Detached)?;
        node.tape.backward_from(node.id);
        Ok(())
    }

    fn join_tape(&self, other: &Tensor) -> Result<Option<Tape>> {
        match (&self.node, &other.node) {
            (Some(a), Some(b)) if !a.tape.same(&b.tape) => Err(Error::TapeMismatch),
            (Some(a), _) => Ok(Some(a.tape.clone())),
            (None, Some(b)) => Ok(Some(b.tape.clone())),
            (None, None) => Ok(None),
        }
    }

    fn record(
        tape: Option<Tape>,
        op: impl FnOnce() -> Op,
        parents: [Option<usize>; 2],
        shape: Vec<usize>,
        values: Rc<[f64]>,
    ) -> Tensor {
        let node = tape.map(|tape| {
            let id = tape.push(op(), parents, values.len());
            NodeRef { tape, id }
        });
        Tensor {
            shape,
            values,
            node,
        }
    }

    fn id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    fn zip_same(
        &self,
        other: &Tensor,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Rc<[f64]>> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: name,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| f(a, b))
            .collect())
    }

    /// Elementwise sum. `other` may also be a `[cols]` vector broadcast over
    /// the rows of a `[rows × cols]` matrix.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let tape = self.join_tape(other)?;
        let parents = [self.id(), other.id()];
        if self.shape.len() == 2 && other.shape.len() == 1 && other.shape[0] == self.shape[1] {
            let cols = self.shape[1];
            let values: Rc<[f64]> = self
                .values
                .chunks_exact(cols.max(1))
                .flat_map(|row| row.iter().zip(other.values.iter()).map(|(a, b)| a + b))
                .collect();
            return Ok(Self::record(
                tape,
                || Op::AddBias { cols },
                parents,
                self.shape.clone(),
                values,
            ));
        }
        let values = self.zip_same(other, "add", |a, b| a + b)?;
        Ok(Self::record(
            tape,
            || Op::Add,
            parents,
            self.shape.clone(),
            values,
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let tape = self.join_tape(other)?;
        let values = self.zip_same(other, "sub", |a, b| a - b)?;
        let parents = [self.id(), other.id()];
        Ok(Self::record(
            tape,
            || Op::Sub,
            parents,
            self.shape.clone(),
            values,
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let tape = self.join_tape(other)?;
        let values = self.zip_same(other, "mul", |a, b| a * b)?;
        let parents = [self.id(), other.id()];
        let (lhs, rhs) = (Rc::clone(&self.values), Rc::clone(&other.values));
        Ok(Self::record(
            tape,
            || Op::Mul { lhs, rhs },
            parents,
            self.shape.clone(),
            values,
        ))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let values = self.values.iter().map(|v| v * c).collect();
        Self::record(
            self.tape().cloned(),
            || Op::Scale(c),
            [self.id(), None],
            self.shape.clone(),
            values,
        )
    }

    /// `[m × k] · [k × n] → [m × n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        let (&[m, k], &[k2, n]) = (self.shape.as_slice(), other.shape.as_slice()) else {
            return Err(mismatch());
        };
        if k != k2 {
            return Err(mismatch());
        }
        let tape = self.join_tape(other)?;
        let (a, b) = (&self.values, &other.values);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for j in 0..k {
                let aij = a[i * k + j];
                row.iter_mut()
                    .zip(&b[j * n..(j + 1) * n])
                    .for_each(|(o, bj)| *o += aij * bj);
            }
        }
        let (lhs, rhs) = (Rc::clone(a), Rc::clone(b));
        Ok(Self::record(
            tape,
            || Op::MatMul { lhs, rhs, m, k, n },
            [self.id(), other.id()],
            vec![m, n],
            out.into(),
        ))
    }

    /// Elementwise `f` whose backward rule multiplies by `df`.
    pub fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Tensor {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let local = || Op::Unary {
            local: self.values.iter().map(|&v| df(v)).collect(),
        };
        Self::record(
            self.tape().cloned(),
            local,
            [self.id(), None],
            self.shape.clone(),
            values,
        )
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, f64::exp)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |x| {
            let s = sigmoid(x);
            s * (1.0 - s)
        })
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, sigmoid)
    }

    pub fn erf(&self) -> Tensor {
        self.unary(libm::erf, |x| {
            std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp()
        })
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x| 2.0 * x)
    }

    pub fn sum(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Empty { op: "sum" });
        }
        let total: f64 = self.values.iter().sum();
        Ok(Self::record(
            self.tape().cloned(),
            || Op::Sum,
            [self.id(), None],
            Vec::new(),
            Rc::from(vec![total]),
        ))
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Empty { op: "mean" });
        }
        let total: f64 = self.values.iter().sum();
        Ok(Self::record(
            self.tape().cloned(),
            || Op::Mean,
            [self.id(), None],
            Vec::new(),
            Rc::from(vec![total / self.len() as f64]),
        ))
    }
}

/// Logistic sigmoid, evaluated without overflow for either sign.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` as `max(x, 0) + ln(1 + e^-|x|)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> (Tape, Tensor) {
        let tape = Tape::new();
        let t = tape.param(values.to_vec(), &[values.len()]).unwrap();
        (tape, t)
    }

    #[test]
    fn add_sub_scale() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().values(), &[4.0, 6.0]);
        assert_eq!(b.sub(&a).unwrap().values(), &[2.0, 2.0]);
        let c = Tensor::from_vec(vec![1.0, -1.0]).mul_scalar(-1.0);
        assert_eq!(c.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn mul_by_zero_annihilates_gradient() {
        let (_tape, a) = param(&[2.0, 3.0]);
        let zero = Tensor::from_vec(vec![0.0, 0.0]);
        let y = a.mul(&zero).unwrap();
        assert_eq!(y.values(), &[0.0, 0.0]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let err = a.add(&b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "add", .. }));
        assert!(err.to_string().contains("[2]") && err.to_string().contains("[3]"));
        let m = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert!(m.matmul(&m).is_err());
    }

    #[test]
    fn bias_broadcast_sums_rows_in_backward() {
        let tape = Tape::new();
        let b = tape.param(vec![0.5, -0.5], &[2]).unwrap();
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
        let y = x.add(&b).unwrap();
        assert_eq!(y.values(), &[1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn matmul_identity_and_row() {
        let eye = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let m = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap().values(), m.values());
        let a = Tensor::new(vec![1.0, 0.0], &[1, 2]).unwrap();
        let b = Tensor::new(vec![2.0, 5.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.values(), &[2.0]);
    }

    #[test]
    fn matmul_gradients() {
        let tape = Tape::new();
        let a = tape.param(vec![1.0, 1.0], &[1, 2]).unwrap();
        let b = tape.param(vec![2.0, 3.0], &[2, 1]).unwrap();
        a.matmul(&b).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![2.0, 3.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn elementwise_primitives() {
        let zero = Tensor::scalar(0.0);
        assert_eq!(zero.sigmoid().values(), &[0.5]);
        assert_eq!(Tensor::scalar(1000.0).softplus().values(), &[1000.0]);
        assert!(Tensor::scalar(-1000.0).softplus().values()[0] >= 0.0);
        let (_t, x) = param(&[0.0]);
        x.sigmoid().sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25]);
    }

    #[test]
    fn stop_gradient_identities() {
        let (_t, x) = param(&[3.5]);
        let sg = x.stop_gradient();
        assert_eq!(sg.values()[0].to_bits(), 3.5f64.to_bits());
        assert!(sg.sum().unwrap().backward().is_err());

        let (_t, x) = param(&[2.0]);
        let y = x.mul(&x.stop_gradient()).unwrap();
        assert_eq!(y.values(), &[4.0]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);

        let (_t, x) = param(&[7.0]);
        let y = x.sub(&x.stop_gradient()).unwrap();
        assert_eq!(y.values(), &[0.0]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn reductions() {
        assert_eq!(
            Tensor::from_vec(vec![1.0, 2.0, 3.0])
                .sum()
                .unwrap()
                .values(),
            &[6.0]
        );
        assert_eq!(
            Tensor::from_vec(vec![2.0, 4.0]).mean().unwrap().values(),
            &[3.0]
        );
        let (_t, x) = param(&[1.0, 5.0]);
        x.mean().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5, 0.5]);
        let empty = Tensor::from_vec(vec![]);
        assert!(matches!(empty.sum(), Err(Error::Empty { .. })));
        assert!(matches!(empty.mean(), Err(Error::Empty { .. })));
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let (tape, w) = param(&[1.0, 2.0]);
        let x = Tensor::from_vec(vec![3.0, 4.0]);
        let loss = w.mul(&x).unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, 4.0]);
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![6.0, 8.0]);
        tape.zero_grad();
        assert!(w.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (_t, w) = param(&[1.0, 2.0]);
        assert!(matches!(w.backward(), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn operands_from_two_tapes_are_rejected() {
        let (_t1, a) = param(&[1.0]);
        let (_t2, b) = param(&[1.0]);
        assert!(matches!(a.add(&b), Err(Error::TapeMismatch)));
    }

    #[test]
    fn constants_stay_off_the_tape() {
        let (tape, w) = param(&[1.0]);
        let before = tape.len();
        let c = Tensor::from_vec(vec![2.0]).exp().mul_scalar(3.0);
        assert!(!c.is_tracked());
        assert_eq!(tape.len(), before);
        assert!(w.mul(&c).unwrap().is_tracked());
    }
}
