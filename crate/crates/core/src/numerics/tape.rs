//! Recorded-operation reverse-mode gradient engine.
//!
//! Forward calls append nodes to the tape; `backward` walks the record in
//! reverse and accumulates adjoints. Values are materialized eagerly, so
//! `value(id)` is always available after construction.

use super::matrix::Matrix;
use super::ops;
use super::{NumericsError, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Row-broadcast add: `N x D` plus `1 x D`.
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SelectRows(NodeId, Vec<usize>),
    SumAll(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    KlDivergence {
        p: NodeId,
        q: NodeId,
    },
    LovaszSoftmax {
        probs: NodeId,
        labels: Vec<usize>,
    },
    /// Row-pair cosine similarity producing an `N x 1` column.
    CosineRows {
        a: NodeId,
        b: NodeId,
        epsilon: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Adjoints produced by [`Tape::backward`]; nodes that do not influence the
/// loss have no entry.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// The operation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        Ok(id)
    }

    /// Leaf node for parameters or data.
    pub fn input(&mut self, value: Matrix) -> Result<NodeId> {
        self.push(value, Op::Leaf, "input")
    }

    /// Leaf node whose gradient is never read; values treated as constants.
    pub fn constant(&mut self, value: Matrix) -> Result<NodeId> {
        self.push(value, Op::Leaf, "constant")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        self.push(value, Op::MatMulNT(a, b), "matmul_nt")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(value, Op::Sub(a, b), "sub")
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(value, Op::MulElem(a, b), "mul_elem")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| k * x);
        self.push(value, Op::Scale(a, k), "scale")
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != m.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + {:?}", m.shape(), b.shape()),
            });
        }
        let value = Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) + b.get(0, c));
        self.push(value, Op::AddRow(a, bias), "add_row")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = ops::relu(self.value(a));
        self.push(value, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = ops::sigmoid(self.value(a));
        self.push(value, Op::Sigmoid(a), "sigmoid")
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let value = ops::softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a), "softmax_rows")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&id| self.value(id)).collect();
        let value = Matrix::concat_cols(&values)?;
        self.push(value, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn select_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let value = self.value(a).select_rows(indices)?;
        self.push(value, Op::SelectRows(a, indices.to_vec()), "select_rows")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()])?;
        self.push(value, Op::SumAll(a), "sum_all")
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (v, _) = ops::cross_entropy_value_grad(self.value(logits), labels)?;
        self.push(
            Matrix::from_vec(1, 1, vec![v])?,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            "cross_entropy",
        )
    }

    pub fn kl_divergence(&mut self, p: NodeId, q: NodeId) -> Result<NodeId> {
        let (v, _, _) = ops::kl_value_grads(self.value(p), self.value(q))?;
        self.push(
            Matrix::from_vec(1, 1, vec![v])?,
            Op::KlDivergence { p, q },
            "kl_divergence",
        )
    }

    pub fn lovasz_softmax(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (v, _) = ops::lovasz_value_grad(self.value(probs), labels)?;
        self.push(
            Matrix::from_vec(1, 1, vec![v])?,
            Op::LovaszSoftmax {
                probs,
                labels: labels.to_vec(),
            },
            "lovasz_softmax",
        )
    }

    pub fn cosine_rows(&mut self, a: NodeId, b: NodeId, epsilon: f64) -> Result<NodeId> {
        let sims = ops::cosine_similarity(self.value(a), self.value(b), epsilon)?;
        self.push(
            Matrix::column_vector(&sims),
            Op::CosineRows { a, b, epsilon },
            "cosine_rows",
        )
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(NumericsError::ShapeMismatch {
                op: "backward",
                detail: format!("loss node is {:?}, expected 1x1", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) -> Result<()> {
        match &mut grads[id.0] {
            Some(existing) => existing.add_scaled_assign(&delta, 1.0),
            slot @ None => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => Ok(()),
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(*b))?;
                let db = self.value(*a).matmul_tn(g)?;
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)
            }
            Op::MatMulNT(a, b) => {
                // out = a * b^T: da = g * b, db = g^T * a
                let da = g.matmul(self.value(*b))?;
                let db = g.matmul_tn(self.value(*a))?;
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.map(|v| -v))
            }
            Op::MulElem(a, b) => {
                let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|v| v * k)),
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        db.set(0, c, db.get(0, c) + g.get(r, c));
                    }
                }
                self.accumulate(grads, *bias, db)
            }
            Op::Relu(a) => {
                let da = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, da)
            }
            Op::Sigmoid(a) => {
                let s = &self.nodes[idx].value;
                let da = g.zip_map(s, |gv, sv| gv * sv * (1.0 - sv))?;
                self.accumulate(grads, *a, da)
            }
            Op::SoftmaxRows(a) => {
                let s = &self.nodes[idx].value;
                let mut da = Matrix::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let dot: f64 = g
                        .row(r)
                        .iter()
                        .zip(s.row(r))
                        .map(|(&gv, &sv)| gv * sv)
                        .sum();
                    for c in 0..s.cols() {
                        da.set(r, c, s.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.accumulate(grads, *a, da)
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &part in parts {
                    let cols = self.value(part).cols();
                    let block = Matrix::from_fn(g.rows(), cols, |r, c| g.get(r, offset + c));
                    offset += cols;
                    self.accumulate(grads, part, block)?;
                }
                Ok(())
            }
            Op::SelectRows(a, indices) => {
                let src = self.value(*a);
                let mut da = Matrix::zeros(src.rows(), src.cols());
                for (out_row, &src_row) in indices.iter().enumerate() {
                    for c in 0..src.cols() {
                        da.set(src_row, c, da.get(src_row, c) + g.get(out_row, c));
                    }
                }
                self.accumulate(grads, *a, da)
            }
            Op::SumAll(a) => {
                let scalar = g.get(0, 0);
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::from_fn(shape.0, shape.1, |_, _| scalar))
            }
            Op::CrossEntropy { logits, labels } => {
                let (_, mut dl) = ops::cross_entropy_value_grad(self.value(*logits), labels)?;
                let scalar = g.get(0, 0);
                for v in dl.data_mut() {
                    *v *= scalar;
                }
                self.accumulate(grads, *logits, dl)
            }
            Op::KlDivergence { p, q } => {
                let (_, mut dp, mut dq) = ops::kl_value_grads(self.value(*p), self.value(*q))?;
                let scalar = g.get(0, 0);
                for v in dp.data_mut() {
                    *v *= scalar;
                }
                for v in dq.data_mut() {
                    *v *= scalar;
                }
                self.accumulate(grads, *p, dp)?;
                self.accumulate(grads, *q, dq)
            }
            Op::LovaszSoftmax { probs, labels } => {
                let (_, mut dp) = ops::lovasz_value_grad(self.value(*probs), labels)?;
                let scalar = g.get(0, 0);
                for v in dp.data_mut() {
                    *v *= scalar;
                }
                self.accumulate(grads, *probs, dp)
            }
            Op::CosineRows { a, b, epsilon } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let out = &self.nodes[idx].value;
                let mut da = Matrix::zeros(va.rows(), va.cols());
                let mut db = Matrix::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let gv = g.get(r, 0);
                    let (ra, rb) = (va.row(r), vb.row(r));
                    let na: f64 = ra.iter().map(|&x| x * x).sum::<f64>().sqrt();
                    let nb: f64 = rb.iter().map(|&y| y * y).sum::<f64>().sqrt();
                    let denom = na * nb;
                    if denom > *epsilon {
                        let o = out.get(r, 0);
                        for c in 0..va.cols() {
                            da.set(r, c, gv * (rb[c] / denom - o * ra[c] / (na * na)));
                            db.set(r, c, gv * (ra[c] / denom - o * rb[c] / (nb * nb)));
                        }
                    } else {
                        for c in 0..va.cols() {
                            da.set(r, c, gv * rb[c] / epsilon);
                            db.set(r, c, gv * ra[c] / epsilon);
                        }
                    }
                }
                self.accumulate(grads, *a, da)?;
                self.accumulate(grads, *b, db)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
    }

    /// Central finite difference of a scalar tape program in one input matrix.
    fn finite_diff(
        build: &dyn Fn(&mut Tape, &Matrix) -> NodeId,
        at: &Matrix,
        step: f64,
    ) -> Matrix {
        let mut out = Matrix::zeros(at.rows(), at.cols());
        for r in 0..at.rows() {
            for c in 0..at.cols() {
                let mut plus = at.clone();
                plus.set(r, c, at.get(r, c) + step);
                let mut minus = at.clone();
                minus.set(r, c, at.get(r, c) - step);
                let mut tp = Tape::new();
                let fp = build(&mut tp, &plus);
                let mut tm = Tape::new();
                let fm = build(&mut tm, &minus);
                let d = (tp.value(fp).get(0, 0) - tm.value(fm).get(0, 0)) / (2.0 * step);
                out.set(r, c, d);
            }
        }
        out
    }

    fn assert_grad_close(analytic: &Matrix, numeric: &Matrix, tol: f64) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!(
                ((a - n) / denom).abs() < tol,
                "analytic {} vs numeric {}",
                a,
                n
            );
        }
    }

    fn check_op(build: &dyn Fn(&mut Tape, &Matrix) -> NodeId, at: &Matrix, tol: f64) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, at);
        let grads = tape.backward(loss).unwrap();
        // The input is always the first node.
        let analytic = grads.get(NodeId(0)).unwrap();
        let numeric = finite_diff(build, at, 1e-6);
        assert_grad_close(analytic, &numeric, tol);
    }

    #[test]
    fn backward_matmul_chain() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = random_matrix(3, 4, &mut rng);
        let w = random_matrix(4, 2, &mut rng);
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            let b = tape.constant(w.clone()).unwrap();
            let y = tape.matmul(a, b).unwrap();
            let s = tape.sigmoid(y).unwrap();
            tape.sum_all(s).unwrap()
        };
        check_op(&build, &x, 1e-7);
    }

    #[test]
    fn backward_matmul_nt_and_softmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = random_matrix(4, 3, &mut rng);
        let other = random_matrix(5, 3, &mut rng);
        let weights = random_matrix(4, 5, &mut rng);
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            let b = tape.constant(other.clone()).unwrap();
            let scores = tape.matmul_nt(a, b).unwrap();
            let soft = tape.softmax_rows(scores).unwrap();
            let w = tape.constant(weights.clone()).unwrap();
            let weighted = tape.mul_elem(soft, w).unwrap();
            tape.sum_all(weighted).unwrap()
        };
        check_op(&build, &x, 1e-6);
    }

    #[test]
    fn backward_elementwise_ops() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = random_matrix(3, 3, &mut rng);
        let other = random_matrix(3, 3, &mut rng);
        let bias = random_matrix(1, 3, &mut rng);
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            let b = tape.constant(other.clone()).unwrap();
            let bias = tape.constant(bias.clone()).unwrap();
            let sum = tape.add(a, b).unwrap();
            let biased = tape.add_row(sum, bias).unwrap();
            let act = tape.relu(biased).unwrap();
            let scaled = tape.scale(act, 0.7).unwrap();
            let diff = tape.sub(scaled, b).unwrap();
            let prod = tape.mul_elem(diff, diff).unwrap();
            tape.sum_all(prod).unwrap()
        };
        check_op(&build, &x, 1e-6);
    }

    #[test]
    fn backward_select_and_concat() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = random_matrix(4, 3, &mut rng);
        let build = |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            // Duplicated row index exercises scatter-add accumulation.
            let sel = tape.select_rows(a, &[2, 0, 2]).unwrap();
            let both = tape.concat_cols(&[sel, sel]).unwrap();
            let act = tape.sigmoid(both).unwrap();
            tape.sum_all(act).unwrap()
        };
        check_op(&build, &x, 1e-7);
    }

    #[test]
    fn backward_cross_entropy() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = random_matrix(5, 4, &mut rng);
        let labels = vec![0usize, 2, 3, 1, 2];
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            tape.cross_entropy(a, &labels).unwrap()
        };
        check_op(&build, &x, 1e-7);
    }

    #[test]
    fn backward_kl_in_q_through_softmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let teacher = ops::softmax_rows(&random_matrix(4, 3, &mut rng));
        let x = random_matrix(4, 3, &mut rng);
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            let q = tape.softmax_rows(a).unwrap();
            let p = tape.constant(teacher.clone()).unwrap();
            tape.kl_divergence(p, q).unwrap()
        };
        check_op(&build, &x, 1e-6);
    }

    #[test]
    fn backward_lovasz_through_softmax() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x = random_matrix(6, 3, &mut rng);
        let labels = vec![0usize, 1, 2, 1, 0, 2];
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            let probs = tape.softmax_rows(a).unwrap();
            tape.lovasz_softmax(probs, &labels).unwrap()
        };
        check_op(&build, &x, 1e-5);
    }

    #[test]
    fn backward_cosine_rows() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = random_matrix(5, 4, &mut rng);
        let other = random_matrix(5, 4, &mut rng);
        let coeff = random_matrix(5, 1, &mut rng);
        let build = move |tape: &mut Tape, at: &Matrix| {
            let a = tape.input(at.clone()).unwrap();
            let b = tape.constant(other.clone()).unwrap();
            let sims = tape.cosine_rows(a, b, 1e-8).unwrap();
            let c = tape.constant(coeff.clone()).unwrap();
            let weighted = tape.mul_elem(sims, c).unwrap();
            tape.sum_all(weighted).unwrap()
        };
        check_op(&build, &x, 1e-6);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::zeros(2, 2)).unwrap();
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn constants_receive_no_propagation_cost() {
        let mut tape = Tape::new();
        let a = tape.input(Matrix::row_vector(&[1.0, 2.0])).unwrap();
        let loss = tape.sum_all(a).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert!(grads.get(loss).is_some());
    }
}
