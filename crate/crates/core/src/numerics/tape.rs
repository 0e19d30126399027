//! Define-by-run reverse-mode tape.
//!
//! Every differentiable op appends a node holding its forward value. Nodes
//! are only ever appended after their operands, so the node vector is already
//! a topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use rand::Rng;

use super::dropout::{check_rate, mask};
use super::matrix::{relu, sigmoid, softmax_in_place};
use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Identifies a trainable tensor. The numbering is owned by the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        param: ParamId,
        table_rows: usize,
        ids: Vec<usize>,
    },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Dropout(NodeId, Vec<f64>),
    MaxPoolRows(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    SliceCols {
        a: NodeId,
        start: usize,
    },
    ConcatRows(Vec<NodeId>),
    Sum(NodeId),
    /// Negative log-likelihood of `gold` under a softmax over a 1 x N row.
    SoftmaxNll {
        logits: NodeId,
        gold: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Tape::backward`]. Parameters that never
/// appeared on the tape have no entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.by_param.iter().map(|(&k, v)| (k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Adds `other` into `self`, matching on parameter id.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.by_param {
            match self.by_param.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.by_param.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.values_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|g| g.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.by_param.values().all(Matrix::is_finite)
    }

    pub fn insert(&mut self, id: ParamId, grad: Matrix) {
        self.by_param.insert(id, grad);
    }

    fn add_into(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Matrix {
        self.by_param
            .entry(id)
            .or_insert_with(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Trainable input. Registering the same id twice accumulates both uses.
    pub fn param(&mut self, id: ParamId, value: &Matrix) -> NodeId {
        self.push(value.clone(), Op::Param(id))
    }

    /// Rows `ids` of a trainable table, without copying the whole table.
    pub fn gather(&mut self, id: ParamId, table: &Matrix, ids: &[usize]) -> Result<NodeId> {
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (t, &row) in ids.iter().enumerate() {
            if row >= table.rows() {
                return Err(Error::TokenOutOfRange {
                    id: row,
                    rows: table.rows(),
                });
            }
            out.row_mut(t).copy_from_slice(table.row(row));
        }
        Ok(self.push(
            out,
            Op::Gather {
                param: id,
                table_rows: table.rows(),
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).softmax_rows()?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(relu);
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Inverted dropout with a mask drawn from `rng`. Rate 0 records nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        rate: f64,
        rng: &mut R,
    ) -> Result<NodeId> {
        check_rate(rate)?;
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = mask(self.value(a).len(), rate, rng);
        let mut v = self.value(a).clone();
        for (x, k) in v.data_mut().iter_mut().zip(&keep) {
            *x *= k;
        }
        Ok(self.push(v, Op::Dropout(a, keep)))
    }

    /// Column-wise max over rows, giving a 1 x cols node.
    pub fn maxpool_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (v, arg) = self.value(a).maxpool_over_rows()?;
        Ok(self.push(v.to_row(), Op::MaxPoolRows(a, arg)))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{} rows vs {rows}", v.rows()),
                ));
            }
            for i in 0..rows {
                out.row_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row(i));
            }
            offset += v.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        if start > end || end > v.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {} columns", v.cols()),
            ));
        }
        let mut out = Matrix::zeros(v.rows(), end - start);
        for i in 0..v.rows() {
            out.row_mut(i).copy_from_slice(&v.row(i)[start..end]);
        }
        Ok(self.push(out, Op::SliceCols { a, start }))
    }

    /// Vertical concatenation; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{} cols vs {cols}", v.cols()),
                ));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// `-log softmax(logits)[gold]` for a 1 x N logits row. Returns the loss
    /// node; the probabilities are available through [`Tape::softmax_probs`].
    pub fn softmax_nll(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let row = self.value(logits);
        if row.rows() != 1 {
            return Err(Error::shape(
                "softmax_nll",
                format!("logits must be 1xN, got {}x{}", row.rows(), row.cols()),
            ));
        }
        if gold >= row.cols() {
            return Err(Error::shape(
                "softmax_nll",
                format!("gold {gold} out of range for {} candidates", row.cols()),
            ));
        }
        if !row.is_finite() {
            return Err(Error::NonFinite("softmax_nll logits"));
        }
        let max = row.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max
            + row
                .data()
                .iter()
                .map(|&x| (x - max).exp())
                .sum::<f64>()
                .ln();
        let loss = log_z - row.get(0, gold);
        let mut probs = row.data().to_vec();
        softmax_in_place(&mut probs);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxNll {
                logits,
                gold,
                probs,
            },
        ))
    }

    /// Candidate probabilities recorded by a [`Tape::softmax_nll`] node.
    pub fn softmax_probs(&self, loss: NodeId) -> Option<&[f64]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxNll { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a 1 x 1 `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    grads.add_into(*id, g.rows(), g.cols()).add_assign(&g);
                }
                Op::Gather {
                    param,
                    table_rows,
                    ids,
                } => {
                    let acc = grads.add_into(*param, *table_rows, g.cols());
                    for (t, &row) in ids.iter().enumerate() {
                        for (a, &x) in acc.row_mut(row).iter_mut().zip(g.row(t)) {
                            *a += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g.scale(*f)),
                Op::SoftmaxRows(a) => {
                    // dx = y * (dy - <dy, y>) per row
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (&yv, &gv)) in gx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut adj, *a, gx);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut gx = g;
                    for (o, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, gx);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut gx = g;
                    for (o, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                        *o *= yv * (1.0 - yv);
                    }
                    accumulate(&mut adj, *a, gx);
                }
                Op::Dropout(a, keep) => {
                    let mut gx = g;
                    for (o, &k) in gx.data_mut().iter_mut().zip(keep) {
                        *o *= k;
                    }
                    accumulate(&mut adj, *a, gx);
                }
                Op::MaxPoolRows(a, arg) => {
                    let x = self.value(*a);
                    let mut gx = Matrix::zeros(x.rows(), x.cols());
                    for (k, &t) in arg.iter().enumerate() {
                        gx.set(t, k, g.get(0, k));
                    }
                    accumulate(&mut adj, *a, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let mut gp = Matrix::zeros(r, c);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        offset += c;
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::SliceCols { a, start } => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let gp = Matrix::from_vec(
                            r,
                            c,
                            g.data()[offset * c..(offset + r) * c].to_vec(),
                        )?;
                        offset += r;
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::SoftmaxNll {
                    logits,
                    gold,
                    probs,
                } => {
                    let scale = g.get(0, 0);
                    let mut gl = probs.clone();
                    gl[*gold] -= 1.0;
                    for x in &mut gl {
                        *x *= scale;
                    }
                    let n = gl.len();
                    accumulate(&mut adj, *logits, Matrix::from_vec(1, n, gl)?);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut adj[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = Matrix::filled(2, 2, 3.0);
        let p = tape.param(ParamId(0), &w);
        let c = tape.constant(Matrix::filled(1, 1, 7.0));
        let _unused = tape.relu(p);
        let grads = tape.backward(c).unwrap();
        assert!(grads
            .get(ParamId(0))
            .is_none_or(|g| g.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn sum_of_product_gradient_is_ones_times_b_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::random_uniform(3, 2, 1.0, &mut rng);
        let b = Matrix::random_uniform(2, 4, 1.0, &mut rng);
        let mut tape = Tape::new();
        let na = tape.param(ParamId(0), &a);
        let nb = tape.constant(b.clone());
        let prod = tape.matmul(na, nb).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let want = Matrix::filled(3, 4, 1.0).matmul(&b.transpose()).unwrap();
        for (x, y) in grads
            .get(ParamId(0))
            .unwrap()
            .data()
            .iter()
            .zip(want.data())
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 1));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn gather_scatters_only_used_rows() {
        let table = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let mut tape = Tape::new();
        let rows = tape.gather(ParamId(4), &table, &[2, 2, 0]).unwrap();
        assert_eq!(tape.value(rows).row(0), &[5.0, 6.0]);
        let loss = tape.sum(rows);
        let g = tape.backward(loss).unwrap();
        let g = g.get(ParamId(4)).unwrap();
        assert_eq!(g.row(0), &[1.0, 1.0]);
        assert_eq!(g.row(1), &[0.0, 0.0]);
        assert_eq!(g.row(2), &[2.0, 2.0]);
        assert!(Tape::new().gather(ParamId(0), &table, &[3]).is_err());
    }

    #[test]
    fn maxpool_gradient_goes_to_first_argmax() {
        let x = Matrix::from_rows(&[vec![2.0, 0.0], vec![2.0, 1.0]]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(ParamId(0), &x);
        let m = tape.maxpool_rows(p).unwrap();
        let loss = tape.sum(m);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_nll_value_and_probs() {
        let mut tape = Tape::new();
        let l = tape.constant(Matrix::zeros(1, 4));
        let loss = tape.softmax_nll(l, 2).unwrap();
        assert!((tape.value(loss).get(0, 0) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(tape.softmax_probs(loss).unwrap(), &[0.25; 4]);
        assert!(tape.softmax_nll(l, 4).is_err());
    }

    #[test]
    fn slice_cols_scatters_gradient() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(ParamId(0), &x);
        let s = tape.slice_cols(p, 1, 3).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 3.0]);
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[0.0, 1.0, 1.0]);
        assert!(tape.slice_cols(p, 2, 4).is_err());
    }
}
