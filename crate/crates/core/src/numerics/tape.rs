//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value, so node indices
//! are already a topological order. The backward pass walks the tape once from
//! the loss node down to index zero.
//!
//! Trainable tensors live in a [`ParamStore`]; a forward pass pulls them onto
//! the tape with [`GradTape::param`] and [`GradTape::gradient`] returns one
//! gradient per registered parameter (zeros for parameters the loss never
//! touched).
//!
//! Shape errors inside the tape are programming errors and panic; model code
//! validates user-supplied shapes before building a graph.

use super::tensor::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "parameter {name:?} registered twice"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Handle to a node on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `[n, m] + [m]` broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of one loss with respect to every parameter of a store.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    /// Euclidean norm over all gradient entries.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: operand shapes differ");
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self
            .value(a)
            .matmul(self.value(b))
            .expect("matmul shapes");
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let x = self.value(a);
        let r = self.value(row);
        let cols = x.cols();
        assert_eq!(r.len(), cols, "add_row: bias width");
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_exact_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let v = self.value(a).add(self.value(b)).unwrap();
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let v = self.value(a).sub(self.value(b)).unwrap();
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let v = self.value(a).mul(self.value(b)).unwrap();
        self.push(v, Op::Mul(a, b))
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Clips into `[lo, hi]`; the gradient is zero where clipping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols: row counts differ");
                out.extend_from_slice(t.row(r));
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start < end && end <= t.cols(), "slice_cols range");
        let out: Vec<f64> = t.row_iter().flat_map(|r| r[start..end].iter().copied()).collect();
        let rows = t.rows();
        self.push(Tensor::matrix(rows, end - start, out), Op::SliceCols(a, start))
    }

    /// Row lookup: output row `i` is input row `indices[i]`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let t = self.value(a);
        assert!(indices.iter().all(|&i| i < t.rows()), "gather_rows index");
        let v = t.select_rows(indices);
        self.push(v, Op::GatherRows(a, indices.to_vec()))
    }

    /// Gradient of the scalar `loss` with respect to every parameter in `store`.
    pub fn gradient(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "gradient needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut grads: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    // dA = G B^T, dB = A^T G
                    let mut da = vec![0.0; n * k];
                    gemm(n, m, k, MatRef::new(g.data(), m, false), MatRef::new(bv.data(), m, true), &mut da, false);
                    let mut db = vec![0.0; k * m];
                    gemm(k, n, m, MatRef::new(av.data(), k, true), MatRef::new(g.data(), m, false), &mut db, false);
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
                    accumulate(&mut adj, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
                Op::AddRow(a, row) => {
                    let rv = self.value(*row);
                    let mut dr = vec![0.0; rv.len()];
                    for chunk in g.data().chunks_exact(rv.len()) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adj, *row, Tensor::new(rv.shape().to_vec(), dr).unwrap());
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b)).unwrap();
                    let db = g.mul(self.value(*a)).unwrap();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Affine(a, scale) => accumulate(&mut adj, *a, g.scale(*scale)),
                Op::Tanh(a) => {
                    let d = g.zip_with(&node.value, |g, y| g * (1.0 - y * y)).unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_with(&node.value, |g, y| g * y * (1.0 - y)).unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Exp(a) => accumulate(&mut adj, *a, g.mul(&node.value).unwrap()),
                Op::Log(a) => {
                    let d = g.zip_with(self.value(*a), |g, x| g / x).unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let d = g.zip_with(self.value(*a), |g, x| 2.0 * g * x).unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = g
                        .zip_with(self.value(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g })
                        .unwrap();
                    accumulate(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::filled(av.shape(), g.item()));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::filled(av.shape(), g.item() / av.len() as f64));
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        let d: Vec<f64> = g
                            .data()
                            .chunks_exact(total)
                            .flat_map(|r| r[offset..offset + w].iter().copied())
                            .collect();
                        accumulate(&mut adj, p, Tensor::new(pv.shape().to_vec(), d).unwrap());
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let (cols, w) = (av.cols(), g.cols());
                    let mut d = vec![0.0; av.len()];
                    for (dst, src) in d.chunks_exact_mut(cols).zip(g.data().chunks_exact(w)) {
                        dst[*start..*start + w].copy_from_slice(src);
                    }
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), d).unwrap());
                }
                Op::GatherRows(a, indices) => {
                    let av = self.value(*a);
                    let cols = av.cols();
                    let mut d = vec![0.0; av.len()];
                    for (&src_row, grow) in indices.iter().zip(g.data().chunks_exact(cols)) {
                        for (o, v) in d[src_row * cols..(src_row + 1) * cols].iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), d).unwrap());
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative_at_three() {
        let mut store = ParamStore::new();
        let x = store.register("x", Tensor::scalar(3.0));
        let mut tape = GradTape::new();
        let xv = tape.param(&store, x);
        let y = tape.square(xv);
        let loss = tape.sum(y);
        let grads = tape.gradient(loss, &store).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut store = ParamStore::new();
        let used = store.register("used", Tensor::vector(vec![1.0, 2.0]));
        let unused = store.register("unused", Tensor::vector(vec![5.0, 6.0, 7.0]));
        let mut tape = GradTape::new();
        let u = tape.param(&store, used);
        let _ = tape.param(&store, unused);
        let s = tape.square(u);
        let loss = tape.sum(s);
        let grads = tape.gradient(loss, &store).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads.get(used).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = GradTape::new();
        let v = tape.param(&store, w);
        let sq = tape.square(v);
        assert!(matches!(tape.gradient(sq, &store), Err(Error::Contract(_))));
    }

    #[test]
    fn parameter_used_twice_accumulates() {
        // f = sum(w * w) via mul, df/dw = 2w
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::vector(vec![1.5, -2.0]));
        let mut tape = GradTape::new();
        let a = tape.param(&store, w);
        let m = tape.mul(a, a);
        let loss = tape.sum(m);
        let grads = tape.gradient(loss, &store).unwrap();
        assert_eq!(grads.get(w).data(), &[3.0, -4.0]);
    }

    #[test]
    fn gather_rows_scatters_back() {
        let mut store = ParamStore::new();
        let table = store.register("t", Tensor::matrix(3, 2, vec![0.0; 6]));
        let mut tape = GradTape::new();
        let t = tape.param(&store, table);
        let picked = tape.gather_rows(t, &[2, 0, 2]);
        let loss = tape.sum(picked);
        let grads = tape.gradient(loss, &store).unwrap();
        assert_eq!(grads.get(table).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
