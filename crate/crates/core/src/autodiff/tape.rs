use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(usize),
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Concat(Vec<usize>),
    ConcatRows(Vec<usize>),
    Slice { src: usize, start: usize },
    Sum(usize),
    Mean(usize),
    Square(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a define-by-run computation.
///
/// Inputs of every node are strictly earlier nodes, so the node order is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_nodes: Vec<usize>,
}

/// Gradients of a scalar with respect to each leaf, indexed by leaf order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMap {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl GradMap {
    /// Gradient of leaf `i` (in registration order); zero if the loss does
    /// not depend on it.
    pub fn get(&self, leaf: usize) -> Tensor {
        match &self.grads[leaf] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[leaf];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn contributes(&self, leaf: usize) -> bool {
        self.grads[leaf].is_some()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
            .into_iter()
            .zip(self.shapes)
            .map(|(g, (r, c))| g.unwrap_or_else(|| Tensor::zeros(r, c)))
            .collect()
    }
}

fn broadcast_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    let pick = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (pick(ar, br), pick(ac, bc)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        }),
    }
}

fn binary_map(
    a: &Tensor,
    b: &Tensor,
    rows: usize,
    cols: usize,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    let mut out = Vec::with_capacity(rows * cols);
    if ar == br && ac == bc {
        out.extend(a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
    } else if br == 1 && bc == cols && ac == cols {
        for row in a.data.chunks_exact(cols) {
            out.extend(row.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
        }
    } else {
        for r in 0..rows {
            let ra = if ar == 1 { 0 } else { r };
            let rb = if br == 1 { 0 } else { r };
            for c in 0..cols {
                let x = a.data[ra * ac + if ac == 1 { 0 } else { c }];
                let y = b.data[rb * bc + if bc == 1 { 0 } else { c }];
                out.push(f(x, y));
            }
        }
    }
    Tensor {
        shape: vec![rows, cols],
        data: out,
    }
}

/// Sums a broadcast gradient back down to `(rows, cols)`.
fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
    let (gr, gc) = g.dims();
    if gr == rows && gc == cols {
        return g.clone();
    }
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..gr {
        let ro = if rows == 1 { 0 } else { r };
        for c in 0..gc {
            let co = if cols == 1 { 0 } else { c };
            out.data[ro * cols + co] += g.data[r * gc + c];
        }
    }
    out
}

/// `c (n x m) = op(a) * op(b)` with row/column strides chosen by the caller.
#[allow(clippy::too_many_arguments)]
fn gemm(
    n: usize,
    k: usize,
    m: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    if n == 0 || k == 0 || m == 0 {
        return out;
    }
    // SAFETY: the strides address exactly the `n x k` and `k x m` elements
    // of `a` and `b`, whose lengths the callers check via tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    out
}

/// `a (n x k) * b (k x m)`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    gemm(n, k, m, a, k as isize, 1, b, m as isize, 1)
}

/// `g (n x m) * b^T` where `b` is `k x m`.
fn matmul_nt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    gemm(n, m, k, g, m as isize, 1, b, 1, m as isize)
}

/// `a^T * g` where `a` is `n x k` and `g` is `n x m`.
fn matmul_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    gemm(k, n, m, a, 1, k as isize, g, m as isize, 1)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    /// Drops every node recorded after `mark` (a previous [`Tape::len`]).
    /// Leaves registered after the mark are dropped too. Handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.leaf_nodes.retain(|&n| n < mark);
    }

    fn push(
        &mut self,
        op: Op,
        value: Tensor,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a differentiable input. Leaves are numbered in registration
    /// order; that number indexes the [`GradMap`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let idx = self.leaf_nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf(idx),
            value,
            requires_grad: true,
        });
        let id = self.nodes.len() - 1;
        self.leaf_nodes.push(id);
        Var(id)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Const,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = ta.dims();
        let (k2, m) = tb.dims();
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = matmul_raw(&ta.data, &tb.data, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Op::MatMul(a.0, b.0),
            Tensor {
                shape: vec![n, m],
                data,
            },
            rg,
            "matmul",
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (rows, cols) = broadcast_dims(name, ta, tb)?;
        let out = binary_map(ta, tb, rows, cols, f);
        let rg = self.rg(a) || self.rg(b);
        self.push(op, out, rg, name)
    }

    /// Elementwise sum; either operand may broadcast along a size-1 axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Concatenates along columns; all parts must share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(*first).shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            rg,
            "concat",
        )
    }

    /// Stacks parts vertically; all parts must share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid("concat of nothing"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(*first).shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            rows += t.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&self.value(*p).data);
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            rg,
            "concat_rows",
        )
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims();
        if start >= end || end > cols {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: t.shape.clone(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * cols + start..r * cols + end]);
        }
        let rg = self.rg(a);
        self.push(
            Op::Slice { src: a.0, start },
            Tensor {
                shape: vec![rows, w],
                data,
            },
            rg,
            "slice",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a.0), Tensor::scalar(s), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a.0), Tensor::scalar(s), rg, "mean")
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, out, rg, name)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", libm::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", libm::log, Op::Log(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", libm::tanh, Op::Tanh(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "softplus", softplus, Op::Softplus(a.0))
    }

    // Compositions of the primitive set.

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.scalar(c);
        self.mul(a, k)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.scalar(c);
        self.add(a, k)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `a / b` as `a * exp(-log b)`; `b` must be positive.
    pub fn div_positive(&mut self, a: Var, b: Var) -> Result<Var> {
        let lb = self.log(b)?;
        let nlb = self.neg(lb)?;
        let inv = self.exp(nlb)?;
        self.mul(a, inv)
    }

    /// Per-row sums as an `rows x 1` column (a matmul against ones).
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        let ones = self.constant(Tensor::full(cols, 1, 1.0));
        self.matmul(a, ones)
    }

    /// Reverse sweep from a 1x1 node.
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NotScalar {
                shape: lt.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; self.leaf_nodes.len()];

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs = |i: usize| self.nodes[i].requires_grad;
            match &node.op {
                Op::Leaf(li) => leaf_grads[*li] = Some(g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (n, k) = ta.dims();
                    let m = tb.cols();
                    if needs(*a) {
                        let ga = matmul_nt(&g.data, &tb.data, n, m, k);
                        accumulate(
                            &mut grads[*a],
                            Tensor {
                                shape: vec![n, k],
                                data: ga,
                            },
                        );
                    }
                    if needs(*b) {
                        let gb = matmul_tn(&ta.data, &g.data, n, k, m);
                        accumulate(
                            &mut grads[*b],
                            Tensor {
                                shape: vec![k, m],
                                data: gb,
                            },
                        );
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -1.0
                    } else {
                        1.0
                    };
                    if needs(*a) {
                        let (r, c) = self.nodes[*a].value.dims();
                        accumulate(&mut grads[*a], reduce_to(&g, r, c));
                    }
                    if needs(*b) {
                        let (r, c) = self.nodes[*b].value.dims();
                        let mut gb = reduce_to(&g, r, c);
                        if sign < 0.0 {
                            gb.data.iter_mut().for_each(|v| *v = -*v);
                        }
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (rows, cols) = g.dims();
                    if needs(*a) {
                        let full = binary_map(&g, tb, rows, cols, |x, y| x * y);
                        let (r, c) = ta.dims();
                        accumulate(&mut grads[*a], reduce_to(&full, r, c));
                    }
                    if needs(*b) {
                        let full = binary_map(&g, ta, rows, cols, |x, y| x * y);
                        let (r, c) = tb.dims();
                        accumulate(&mut grads[*b], reduce_to(&full, r, c));
                    }
                }
                Op::Concat(parts) => {
                    let (rows, cols) = g.dims();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.cols();
                        if needs(p) {
                            let mut gp = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                gp.extend_from_slice(
                                    &g.data[r * cols + offset..r * cols + offset + w],
                                );
                            }
                            accumulate(
                                &mut grads[p],
                                Tensor {
                                    shape: vec![rows, w],
                                    data: gp,
                                },
                            );
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.numel();
                        if needs(p) {
                            let (r, c) = self.nodes[p].value.dims();
                            let gp = g.data[offset..offset + n].to_vec();
                            accumulate(
                                &mut grads[p],
                                Tensor {
                                    shape: vec![r, c],
                                    data: gp,
                                },
                            );
                        }
                        offset += n;
                    }
                }
                Op::Slice { src, start } => {
                    let (rows, cols) = self.nodes[*src].value.dims();
                    let w = g.cols();
                    let mut gs = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        gs.data[r * cols + start..r * cols + start + w]
                            .copy_from_slice(&g.data[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads[*src], gs);
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let t = &self.nodes[*a].value;
                    let (r, c) = t.dims();
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        1.0 / t.numel() as f64
                    } else {
                        1.0
                    };
                    accumulate(&mut grads[*a], Tensor::full(r, c, g.data[0] * scale));
                }
                Op::Square(a) => {
                    let x = &self.nodes[*a].value;
                    let d = zip_map(&g, x, |gv, xv| 2.0 * xv * gv);
                    accumulate(&mut grads[*a], d);
                }
                Op::Exp(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y);
                    accumulate(&mut grads[*a], d);
                }
                Op::Log(a) => {
                    let x = &self.nodes[*a].value;
                    let d = zip_map(&g, x, |gv, xv| gv / xv);
                    accumulate(&mut grads[*a], d);
                }
                Op::Sigmoid(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads[*a], d);
                }
                Op::Tanh(a) => {
                    let d = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads[*a], d);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[*a].value;
                    let d = zip_map(&g, x, |gv, xv| gv * sigmoid(xv));
                    accumulate(&mut grads[*a], d);
                }
            }
        }

        let shapes = self
            .leaf_nodes
            .iter()
            .map(|&n| self.nodes[n].value.dims())
            .collect();
        Ok(GradMap {
            grads: leaf_grads,
            shapes,
        })
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: g.data.iter().zip(&x.data).map(|(&a, &b)| f(a, b)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_then_sum() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        assert_eq!(t.item(s), 5.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(0).data, vec![2.0, 4.0]);
    }

    #[test]
    fn softplus_at_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.softplus(x).unwrap();
        assert!((t.item(y) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn matmul_ones() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::full(2, 3, 1.0));
        let b = t.constant(Tensor::full(3, 1, 1.0));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape, vec![2, 1]);
        assert_eq!(t.value(c).data, vec![3.0, 3.0]);
    }

    #[test]
    fn sigmoid_times_weight() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::scalar(3.0));
        let zero = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(zero).unwrap();
        let f = t.mul(s, w).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(0).item(), 0.5);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 2));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 2]
            }
        );
        assert!(t.add(a, b).is_err());
    }

    #[test]
    fn non_finite_is_rejected_with_op() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        assert_eq!(t.log(z).unwrap_err(), Error::NonFinite { op: "log" });
        let big = t.constant(Tensor::scalar(1e6));
        assert_eq!(t.exp(big).unwrap_err(), Error::NonFinite { op: "exp" });
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn unused_leaf_reads_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        let _unused = t.leaf(Tensor::zeros(2, 2));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!(!g.contributes(1));
        assert_eq!(g.get(1), Tensor::zeros(2, 2));
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(3, 2, 1.0));
        let bias = t.leaf(Tensor::row(&[0.5, -0.5]));
        let col = t.leaf(Tensor::column(&[1.0, 2.0, 3.0]));
        let y = t.add(x, bias).unwrap();
        let y = t.mul(y, col).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(1).data, vec![6.0, 6.0]);
        assert_eq!(g.get(2).data, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_rows_splits_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 2.0]));
        let b = t.leaf(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let s = t.concat_rows(&[a, b]).unwrap();
        assert_eq!(t.value(s).shape, vec![3, 2]);
        let w = t.constant(Tensor::column(&[1.0, 2.0, 3.0]));
        let y = t.mul(s, w).unwrap();
        let y = t.sum(y).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(0).data, vec![1.0, 1.0]);
        assert_eq!(g.get(1).data, vec![2.0, 2.0, 3.0, 3.0]);
        let c = t.constant(Tensor::zeros(1, 3));
        assert!(t.concat_rows(&[a, c]).is_err());
    }

    #[test]
    fn truncate_keeps_earlier_nodes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let mark = t.len();
        let y = t.square(x).unwrap();
        assert_eq!(t.item(y), 4.0);
        t.truncate(mark);
        assert_eq!(t.len(), mark);
        assert_eq!(t.item(x), 2.0);
    }
}
