//! Reverse-mode differentiation over a flat operation record.
//!
//! Every forward op appends a node whose inputs all have smaller indices,
//! so walking the node list backwards is a valid reverse topological order.
//! Parameters enter the tape once per tape through [`Tape::param`]; their
//! gradients are flushed into the [`ParamStore`] by [`Tape::backward`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{DenseArray, ParamStore};

/// Norms at or below this are treated as degenerate by [`Tape::l2_normalize`].
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(String),
    Affine { w: Var, b: Var, x: Var },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Sum(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SquaredNorm(Var),
    L2Normalize { input: Var, norm: f64 },
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v)
            .item()
            .ok_or_else(|| Error::Contract(format!("node {} is not a scalar", v.0)))
    }

    fn push(&mut self, value: DenseArray, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Bring a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param(name.to_string()), true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `W x + b` for `W: [m, n]`, `b: [m]`, `x: [n]`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        let (m, n) = match wv.shape() {
            [m, n] => (*m, *n),
            s => return Err(Error::dim("affine", format!("W must be a matrix, got shape {s:?}"))),
        };
        if bv.len() != m || xv.len() != n {
            return Err(Error::dim(
                "affine",
                format!(
                    "W is {m}x{n} but b has {} entries and x has {}",
                    bv.len(),
                    xv.len()
                ),
            ));
        }
        let (wd, xd) = (wv.data(), xv.data());
        let out: Vec<f64> = bv
            .data()
            .iter()
            .enumerate()
            .map(|(i, bi)| {
                let row = &wd[i * n..(i + 1) * n];
                bi + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let rg = self.req(w) || self.req(b) || self.req(x);
        Ok(self.push(DenseArray::vector(out), Op::Affine { w, b, x }, rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = DenseArray::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.req(a);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |v| 1.0 / (1.0 + (-v).exp()))
    }

    /// `max(0, a)` elementwise. The subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |v| v * c)
    }

    /// Concatenate one-dimensional arrays.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat of zero arrays"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(DenseArray::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Mean over the stacking axis of equally shaped arrays.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("mean of zero arrays"))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &p in parts {
            let v = self.value(p);
            if v.shape() != shape.as_slice() {
                return Err(Error::dim(
                    "mean",
                    format!("expected shape {shape:?}, got {:?}", v.shape()),
                ));
            }
            for (a, x) in acc.iter_mut().zip(v.data()) {
                *a += x;
            }
        }
        let k = parts.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        let rg = parts.iter().any(|&p| self.req(p));
        let value = DenseArray::new(shape, acc)?;
        Ok(self.push(value, Op::Mean(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.req(a);
        self.push(DenseArray::scalar(s), Op::Sum(a), rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(
                name,
                format!("operands have shapes {:?} and {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = DenseArray::new(av.shape().to_vec(), data)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `‖a‖²` as a scalar.
    pub fn squared_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        let rg = self.req(a);
        self.push(DenseArray::scalar(s), Op::SquaredNorm(a), rg)
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let norm = src.norm();
        if norm <= EPS_NORM || !norm.is_finite() {
            return Err(Error::DegenerateVector { norm, eps: EPS_NORM });
        }
        let data = src.data().iter().map(|v| v / norm).collect();
        let value = DenseArray::new(src.shape().to_vec(), data)?;
        let rg = self.req(a);
        Ok(self.push(value, Op::L2Normalize { input: a, norm }, rg))
    }

    /// Propagate `seed · ∂loss/∂θ` back through the tape and add it to the
    /// gradient buffers in `params`. Consumes the tape.
    pub fn backward(self, loss: Var, seed: f64, params: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "loss node must be scalar, has shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => params.accumulate_grad(name, &g)?,
                Op::Affine { w, b, x } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x).data();
                    let n = xv.len();
                    if self.req(*w) {
                        let gw = grad_slot(&mut grads, *w, wv.len());
                        for (i, gi) in g.iter().enumerate() {
                            for (j, xj) in xv.iter().enumerate() {
                                gw[i * n + j] += gi * xj;
                            }
                        }
                    }
                    if self.req(*b) {
                        add_into(grad_slot(&mut grads, *b, g.len()), &g);
                    }
                    if self.req(*x) {
                        let wd = wv.data();
                        let gx = grad_slot(&mut grads, *x, n);
                        for (i, gi) in g.iter().enumerate() {
                            for (j, gxj) in gx.iter_mut().enumerate() {
                                *gxj += wd[i * n + j] * gi;
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = grad_slot(&mut grads, *a, y.len());
                    for ((s, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *s += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = grad_slot(&mut grads, *a, y.len());
                    for ((s, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *s += gi * yi * (1.0 - yi);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let ga = grad_slot(&mut grads, *a, x.len());
                    for ((s, gi), xi) in ga.iter_mut().zip(&g).zip(x) {
                        if *xi > 0.0 {
                            *s += gi;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for (s, gi) in ga.iter_mut().zip(&g) {
                        *s += gi * c;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.req(p) {
                            add_into(grad_slot(&mut grads, p, len), &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::Mean(parts) => {
                    let k = parts.len() as f64;
                    for &p in parts {
                        if self.req(p) {
                            let gp = grad_slot(&mut grads, p, g.len());
                            for (s, gi) in gp.iter_mut().zip(&g) {
                                *s += gi / k;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    grad_slot(&mut grads, *a, len).iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.req(*a) {
                        add_into(grad_slot(&mut grads, *a, g.len()), &g);
                    }
                    if self.req(*b) {
                        let gb = grad_slot(&mut grads, *b, g.len());
                        for (s, gi) in gb.iter_mut().zip(&g) {
                            *s += sign * gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.req(*a) {
                        let ga = grad_slot(&mut grads, *a, g.len());
                        for ((s, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *s += gi * bi;
                        }
                    }
                    if self.req(*b) {
                        let gb = grad_slot(&mut grads, *b, g.len());
                        for ((s, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *s += gi * ai;
                        }
                    }
                }
                Op::SquaredNorm(a) => {
                    let x = self.value(*a).data();
                    let ga = grad_slot(&mut grads, *a, x.len());
                    for (s, xi) in ga.iter_mut().zip(x) {
                        *s += 2.0 * xi * g[0];
                    }
                }
                Op::L2Normalize { input, norm } => {
                    // d(v/‖v‖) = (g - y (y·g)) / ‖v‖
                    let y = node.value.data();
                    let dot: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    let ga = grad_slot(&mut grads, *input, y.len());
                    for ((s, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *s += (gi - yi * dot) / norm;
                    }
                }
            }
        }
        Ok(())
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, value: DenseArray) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert(name, value, false).unwrap();
        s
    }

    #[test]
    fn affine_examples() {
        let mut t = Tape::new();
        let w = t.constant(DenseArray::identity(2));
        let b = t.constant(DenseArray::vector(vec![0.0, 0.0]));
        let x = t.constant(DenseArray::vector(vec![3.0, -1.0]));
        let y = t.affine(w, b, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, -1.0]);

        let w = t.constant(DenseArray::zeros(&[2, 3]));
        let b = t.constant(DenseArray::vector(vec![1.0, 2.0]));
        let x = t.constant(DenseArray::vector(vec![0.3, -7.0, 11.0]));
        let y = t.affine(w, b, x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);

        let w = t.constant(DenseArray::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.constant(DenseArray::vector(vec![0.0, 0.0]));
        let x = t.constant(DenseArray::vector(vec![1.0, 1.0]));
        let y = t.affine(w, b, x).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let w = t.constant(DenseArray::zeros(&[2, 3]));
        let b = t.constant(DenseArray::vector(vec![0.0, 0.0]));
        let x = t.constant(DenseArray::vector(vec![1.0, 1.0]));
        let err = t.affine(w, b, x).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "affine", .. }), "{err}");
    }

    #[test]
    fn l2_normalize_examples() {
        let mut t = Tape::new();
        let a = t.constant(DenseArray::vector(vec![3.0, 4.0]));
        let y = t.l2_normalize(a).unwrap();
        let d = t.value(y).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);

        let a = t.constant(DenseArray::vector(vec![1.0, 0.0, 0.0]));
        let y = t.l2_normalize(a).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 0.0, 0.0]);

        let a = t.constant(DenseArray::vector(vec![0.0, 0.0]));
        assert!(matches!(t.l2_normalize(a), Err(Error::DegenerateVector { .. })));
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut s = store_with("x", DenseArray::vector(vec![0.5, -2.0, 7.0]));
        let mut t = Tape::new();
        let x = t.param(&s, "x").unwrap();
        let loss = t.sum(x);
        t.backward(loss, 1.0, &mut s).unwrap();
        assert_eq!(s.grad("x").unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut s = store_with("x", DenseArray::vector(vec![1.0, 2.0]));
        let mut t = Tape::new();
        let x = t.param(&s, "x").unwrap();
        let loss = t.squared_norm(x);
        t.backward(loss, 1.0, &mut s).unwrap();
        assert_eq!(s.grad("x").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut s = store_with("x", DenseArray::vector(vec![1.0, 2.0]));
        let mut t = Tape::new();
        let x = t.param(&s, "x").unwrap();
        let y = t.tanh(x);
        assert!(matches!(t.backward(y, 1.0, &mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn accumulation_is_additive() {
        let mut s = store_with("x", DenseArray::vector(vec![0.3, -1.1]));
        let run = |s: &mut ParamStore| {
            let mut t = Tape::new();
            let x = t.param(s, "x").unwrap();
            let y = t.tanh(x);
            let loss = t.squared_norm(y);
            t.backward(loss, 1.0, s).unwrap();
        };
        run(&mut s);
        let once = s.grad("x").unwrap().clone();
        run(&mut s);
        for (a, b) in once.data().iter().zip(s.grad("x").unwrap().data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let mut s = store_with("x", DenseArray::vector(vec![0.0, 1.0, -1.0]));
        let mut t = Tape::new();
        let x = t.param(&s, "x").unwrap();
        let r = t.relu(x);
        let loss = t.sum(r);
        t.backward(loss, 1.0, &mut s).unwrap();
        assert_eq!(s.grad("x").unwrap().data(), &[0.0, 1.0, 0.0]);
    }
}
