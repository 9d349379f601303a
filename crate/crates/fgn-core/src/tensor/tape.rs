//! Dynamic forward record with reverse-mode differentiation.
//!
//! Each op pushed onto the tape appends a node holding the output values plus
//! whatever the backward pass needs (argmax indices, cached probabilities).
//! Node creation order is a topological order of the record, so the backward
//! sweep simply walks nodes in reverse. Gradients accumulate additively when
//! a tensor fans out into several consumers.

use super::{element_count, Tensor};
use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug)]
pub enum Op<T: Scalar> {
    Leaf,
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MatMul(TensorId, TensorId),
    /// input [r,c] plus bias [c] broadcast over rows.
    BiasAddRows(TensorId, TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    Conv3d {
        input: TensorId,
        kernel: TensorId,
        bias: TensorId,
    },
    MaxPool3d {
        input: TensorId,
        argmax: Vec<u32>,
    },
    GlobalMaxPool {
        input: TensorId,
        argmax: Vec<u32>,
    },
    SoftmaxCrossEntropy {
        logits: TensorId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(TensorId),
    /// Stacks K row vectors [1,n] into [K,n].
    ConcatRows(Vec<TensorId>),
    /// Selects channels [start, start+len) of a [t,h,w,c] tensor.
    ChannelSlice {
        input: TensorId,
        start: usize,
        len: usize,
    },
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].values
    }

    /// Gradient of the most recent backward pass; zeros if the node does not
    /// influence the loss.
    pub fn grad(&self, id: TensorId) -> &[T] {
        self.nodes[id.0]
            .grad
            .as_deref()
            .expect("backward has not run over this node")
    }

    pub fn tensor(&self, id: TensorId) -> Tensor<T> {
        let node = &self.nodes[id.0];
        let mut t = Tensor::new(node.shape.clone(), node.values.clone()).expect("node is valid");
        if let Some(g) = &node.grad {
            t.accumulate_grad(g).expect("grad length matches");
        }
        t
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, op: Op<T>) -> TensorId {
        debug_assert_eq!(element_count(&shape), values.len());
        self.nodes.push(Node {
            shape,
            values,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, tensor: &Tensor<T>) -> TensorId {
        self.push(tensor.shape().to_vec(), tensor.values().to_vec(), Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: &[usize], values: Vec<T>) -> Result<TensorId> {
        let t = Tensor::new(shape.to_vec(), values)?;
        Ok(self.leaf(&t))
    }

    fn binary_same_shape(&self, a: TensorId, b: TensorId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let shape = self.binary_same_shape(a, b)?;
        let values = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(shape, values, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let shape = self.binary_same_shape(a, b)?;
        let values = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(shape, values, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::MatmulMismatch {
                m: sa.first().copied().unwrap_or(0),
                k: sa.get(1).copied().unwrap_or(0),
                k2: sb.first().copied().unwrap_or(0),
                n: sb.get(1).copied().unwrap_or(0),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let values = kernels::matmul(self.values(a), self.values(b), m, k, n);
        Ok(self.push(vec![m, n], values, Op::MatMul(a, b)))
    }

    pub fn bias_add_rows(&mut self, input: TensorId, bias: TensorId) -> Result<TensorId> {
        let (si, sb) = (self.shape(input), self.shape(bias));
        if si.len() != 2 || sb.len() != 1 || si[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                left: si.to_vec(),
                right: sb.to_vec(),
            });
        }
        let shape = si.to_vec();
        let cols = shape[1];
        let bias_vals = self.values(bias).to_vec();
        let values = self
            .values(input)
            .chunks_exact(cols)
            .flat_map(|r| r.iter().zip(&bias_vals).map(|(&x, &b)| x + b))
            .collect();
        Ok(self.push(shape, values, Op::BiasAddRows(input, bias)))
    }

    pub fn relu(&mut self, input: TensorId) -> TensorId {
        let shape = self.shape(input).to_vec();
        let values = self
            .values(input)
            .iter()
            .map(|&x| x.maximum(T::ZERO))
            .collect();
        self.push(shape, values, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: TensorId) -> TensorId {
        let shape = self.shape(input).to_vec();
        let values = self
            .values(input)
            .iter()
            .map(|&x| kernels::sigmoid_scalar(x))
            .collect();
        self.push(shape, values, Op::Sigmoid(input))
    }

    /// Same-padding stride-1 3D convolution of [t,h,w,cin] with a kernel
    /// [kt,kh,kw,cin,cout] (odd extents) plus bias [cout].
    pub fn conv3d(&mut self, input: TensorId, kernel: TensorId, bias: TensorId) -> Result<TensorId> {
        let si = self.shape(input);
        let sk = self.shape(kernel);
        let sb = self.shape(bias);
        if si.len() != 4 {
            return Err(Error::InvalidShape {
                shape: si.to_vec(),
                reason: "conv3d input must be [t,h,w,cin]".into(),
            });
        }
        if sk.len() != 5 {
            return Err(Error::InvalidShape {
                shape: sk.to_vec(),
                reason: "conv3d kernel must be [kt,kh,kw,cin,cout]".into(),
            });
        }
        if sk[0] % 2 == 0 || sk[1] % 2 == 0 || sk[2] % 2 == 0 {
            return Err(Error::InvalidShape {
                shape: sk.to_vec(),
                reason: "same padding requires odd kernel extents".into(),
            });
        }
        if si[3] != sk[3] {
            return Err(Error::ChannelMismatch {
                input: si[3],
                expected: sk[3],
            });
        }
        if sb.len() != 1 || sb[0] != sk[4] {
            return Err(Error::ShapeMismatch {
                left: sb.to_vec(),
                right: vec![sk[4]],
            });
        }
        let xs = [si[0], si[1], si[2], si[3]];
        let ks = [sk[0], sk[1], sk[2], sk[3], sk[4]];
        let values = kernels::conv3d_forward(self.values(input), xs, self.values(kernel), ks, self.values(bias));
        let shape = vec![xs[0], xs[1], xs[2], ks[4]];
        Ok(self.push(shape, values, Op::Conv3d { input, kernel, bias }))
    }

    /// Non-overlapping max pooling; every pooled axis must divide exactly.
    pub fn maxpool3d(&mut self, input: TensorId, window: [usize; 3]) -> Result<TensorId> {
        let si = self.shape(input);
        if si.len() != 4 {
            return Err(Error::InvalidShape {
                shape: si.to_vec(),
                reason: "maxpool3d input must be [t,h,w,c]".into(),
            });
        }
        for (axis, (len, win)) in ["temporal", "height", "width"]
            .into_iter()
            .zip(si.iter().zip(window.iter()))
            .map(|(a, (l, w))| (a, (*l, *w)))
        {
            if win == 0 || len % win != 0 {
                return Err(Error::PoolNotDivisible {
                    axis,
                    len,
                    window: win,
                });
            }
        }
        let xs = [si[0], si[1], si[2], si[3]];
        let (values, argmax) = kernels::maxpool3d_forward(self.values(input), xs, window);
        let shape = vec![xs[0] / window[0], xs[1] / window[1], xs[2] / window[2], xs[3]];
        Ok(self.push(shape, values, Op::MaxPool3d { input, argmax }))
    }

    /// Max over t,h,w per channel, producing a [1,c] row vector.
    pub fn global_max_pool(&mut self, input: TensorId) -> Result<TensorId> {
        let si = self.shape(input);
        if si.len() != 4 {
            return Err(Error::InvalidShape {
                shape: si.to_vec(),
                reason: "global max pool input must be [t,h,w,c]".into(),
            });
        }
        let c = si[3];
        let (values, argmax) = kernels::global_maxpool_forward(self.values(input), c);
        Ok(self.push(vec![1, c], values, Op::GlobalMaxPool { input, argmax }))
    }

    /// Mean negative log-likelihood over the batch. Returns the scalar loss
    /// id; per-row probabilities are cached on the node for inspection.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: TensorId,
        labels: &[usize],
    ) -> Result<TensorId> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::InvalidShape {
                shape: sl.to_vec(),
                reason: format!("logits must be [{},classes]", labels.len()),
            });
        }
        let classes = sl[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let probs = kernels::softmax_rows(self.values(logits), classes);
        let batch = labels.len();
        let mut loss = T::ZERO;
        for (b, &label) in labels.iter().enumerate() {
            loss -= probs[b * classes + label].ln();
        }
        loss /= T::from_f64(batch as f64);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Cached probabilities of a softmax-cross-entropy node.
    pub fn probabilities(&self, loss: TensorId) -> Option<&[T]> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn sum(&mut self, input: TensorId) -> TensorId {
        let mut s = T::ZERO;
        for &v in self.values(input) {
            s += v;
        }
        self.push(vec![1], vec![s], Op::Sum(input))
    }

    /// Channel window [start, start+len) of a [t,h,w,c] tensor.
    pub fn channel_slice(&mut self, input: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let si = self.shape(input);
        if si.len() != 4 || start + len > si[3] || len == 0 {
            return Err(Error::InvalidShape {
                shape: si.to_vec(),
                reason: format!("cannot slice channels {start}..{}", start + len),
            });
        }
        let c = si[3];
        let shape = vec![si[0], si[1], si[2], len];
        let values = self
            .values(input)
            .chunks_exact(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(shape, values, Op::ChannelSlice { input, start, len }))
    }

    pub fn concat_rows(&mut self, rows: &[TensorId]) -> Result<TensorId> {
        if rows.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let cols = {
            let s0 = self.shape(rows[0]);
            if s0.len() != 2 || s0[0] != 1 {
                return Err(Error::InvalidShape {
                    shape: s0.to_vec(),
                    reason: "concat_rows expects [1,n] rows".into(),
                });
            }
            s0[1]
        };
        let mut values = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let s = self.shape(r);
            if s != [1, cols] {
                return Err(Error::ShapeMismatch {
                    left: s.to_vec(),
                    right: vec![1, cols],
                });
            }
            values.extend_from_slice(self.values(r));
        }
        Ok(self.push(
            vec![rows.len(), cols],
            values,
            Op::ConcatRows(rows.to_vec()),
        ))
    }

    /// Reverse sweep from a scalar loss. Gradients of every node that feeds
    /// the loss are (re)computed from scratch; running backward twice yields
    /// identical results.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let lshape = self.shape(loss);
        if element_count(lshape) != 1 {
            return Err(Error::NonScalarLoss {
                shape: lshape.to_vec(),
            });
        }
        for node in self.nodes.iter_mut().take(loss.0 + 1) {
            node.grad = Some(vec![T::ZERO; node.values.len()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = T::ONE;

        for id in (0..=loss.0).rev() {
            // Take the node's grad out so input grads can be borrowed mutably.
            let g = self.nodes[id].grad.take().unwrap();
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, &g);
                    self.add_grad(b, &g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da: Vec<T> = g
                        .iter()
                        .zip(self.nodes[b.0].values.iter())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let db: Vec<T> = g
                        .iter()
                        .zip(self.nodes[a.0].values.iter())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    let da = kernels::matmul_g_bt(&g, &self.nodes[b.0].values, m, k, n);
                    let db = kernels::matmul_at_g(&self.nodes[a.0].values, &g, m, k, n);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::BiasAddRows(input, bias) => {
                    let (input, bias) = (*input, *bias);
                    let cols = self.nodes[bias.0].values.len();
                    let mut db = vec![T::ZERO; cols];
                    for grow in g.chunks_exact(cols) {
                        for (d, &gv) in db.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                    self.add_grad(input, &g);
                    self.add_grad(bias, &db);
                }
                Op::Relu(input) => {
                    let input = *input;
                    let dx: Vec<T> = g
                        .iter()
                        .zip(self.nodes[input.0].values.iter())
                        .map(|(&gv, &xv)| if xv > T::ZERO { gv } else { T::ZERO })
                        .collect();
                    self.add_grad(input, &dx);
                }
                Op::Sigmoid(input) => {
                    let input = *input;
                    let dx: Vec<T> = g
                        .iter()
                        .zip(self.nodes[id].values.iter())
                        .map(|(&gv, &s)| gv * s * (T::ONE - s))
                        .collect();
                    self.add_grad(input, &dx);
                }
                Op::Conv3d {
                    input,
                    kernel,
                    bias,
                } => {
                    let (input, kernel, bias) = (*input, *kernel, *bias);
                    let si = &self.nodes[input.0].shape;
                    let sk = &self.nodes[kernel.0].shape;
                    let xs = [si[0], si[1], si[2], si[3]];
                    let ks = [sk[0], sk[1], sk[2], sk[3], sk[4]];
                    let dx = kernels::conv3d_backward_input(&g, xs, &self.nodes[kernel.0].values, ks);
                    let dk = kernels::conv3d_backward_kernel(&self.nodes[input.0].values, xs, &g, ks);
                    let db = kernels::conv3d_backward_bias(&g, ks[4]);
                    self.add_grad(input, &dx);
                    self.add_grad(kernel, &dk);
                    self.add_grad(bias, &db);
                }
                Op::MaxPool3d { input, argmax } => {
                    let input = *input;
                    let dx = kernels::maxpool3d_backward(&g, argmax, self.nodes[input.0].values.len());
                    self.add_grad(input, &dx);
                }
                Op::GlobalMaxPool { input, argmax } => {
                    let input = *input;
                    let dx = kernels::maxpool3d_backward(&g, argmax, self.nodes[input.0].values.len());
                    self.add_grad(input, &dx);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let logits = *logits;
                    let classes = self.nodes[logits.0].shape[1];
                    let batch = labels.len();
                    let scale = g[0] / T::from_f64(batch as f64);
                    let mut dl = probs.clone();
                    for (b, &label) in labels.iter().enumerate() {
                        dl[b * classes + label] -= T::ONE;
                    }
                    for v in dl.iter_mut() {
                        *v *= scale;
                    }
                    self.add_grad(logits, &dl);
                }
                Op::Sum(input) => {
                    let input = *input;
                    let dx = vec![g[0]; self.nodes[input.0].values.len()];
                    self.add_grad(input, &dx);
                }
                Op::ConcatRows(rows) => {
                    let rows = rows.clone();
                    let cols = self.nodes[id].shape[1];
                    for (i, r) in rows.iter().enumerate() {
                        self.add_grad(*r, &g[i * cols..(i + 1) * cols]);
                    }
                }
                Op::ChannelSlice { input, start, len } => {
                    let (input, start, len) = (*input, *start, *len);
                    let c = self.nodes[input.0].shape[3];
                    let grad = self.nodes[input.0]
                        .grad
                        .as_mut()
                        .expect("ancestor node precedes the loss");
                    for (grow, drow) in grad.chunks_exact_mut(c).zip(g.chunks_exact(len)) {
                        for (gd, &d) in grow[start..start + len].iter_mut().zip(drow) {
                            *gd += d;
                        }
                    }
                }
            }
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn add_grad(&mut self, id: TensorId, delta: &[T]) {
        let grad = self.nodes[id.0]
            .grad
            .as_mut()
            .expect("ancestor node precedes the loss");
        debug_assert_eq!(grad.len(), delta.len());
        for (g, &d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn mul_zero_annihilates_and_identity_holds() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf_from(&[2], vec![1.0, 2.0]).unwrap();
        let z = tape.leaf_from(&[2], vec![0.0, 0.0]).unwrap();
        let out = tape.mul(a, z).unwrap();
        assert_eq!(tape.values(out), &[0.0, 0.0]);

        let b = tape.leaf_from(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let ones = tape.leaf_from(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let out = tape.mul(b, ones).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn mul_shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf_from(&[2], vec![1.0; 2]).unwrap();
        let b = tape.leaf_from(&[3], vec![1.0; 3]).unwrap();
        match tape.mul(a, b) {
            Err(Error::ShapeMismatch { left, right }) => {
                assert_eq!(left, vec![2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn mul_gradient_matches_finite_differences() {
        let a = rand_tensor(&[2, 3], 11);
        let b = rand_tensor(&[2, 3], 12);
        let mut tape = Tape::<f64>::new();
        let ia = tape.leaf(&a);
        let ib = tape.leaf(&b);
        let prod = tape.mul(ia, ib).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();

        let fd_a = finite_diff_grad(
            |x| {
                let mut t = Tape::new();
                let ia = t.leaf(x);
                let ib = t.leaf(&b);
                let p = t.mul(ia, ib).unwrap();
                let s = t.sum(p);
                t.values(s)[0]
            },
            &a,
            1e-6,
        );
        assert!(max_rel_error(tape.grad(ia), fd_a.values()) < 1e-6);
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.leaf_from(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = tape.leaf_from(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.leaf_from(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = tape.leaf_from(&[2, 1], vec![3.0, 4.0]).unwrap();
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.values(out), &[11.0]);

        assert!(matches!(
            tape.matmul(b, m),
            Err(Error::MatmulMismatch { .. })
        ));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a = rand_tensor(&[3, 4], 21);
        let b = rand_tensor(&[4, 2], 22);
        let mut tape = Tape::<f64>::new();
        let ia = tape.leaf(&a);
        let ib = tape.leaf(&b);
        let prod = tape.matmul(ia, ib).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();

        let run = |xa: &Tensor<f64>, xb: &Tensor<f64>| {
            let mut t = Tape::new();
            let ia = t.leaf(xa);
            let ib = t.leaf(xb);
            let p = t.matmul(ia, ib).unwrap();
            let s = t.sum(p);
            t.values(s)[0]
        };
        let fd_a = finite_diff_grad(|x| run(x, &b), &a, 1e-6);
        let fd_b = finite_diff_grad(|x| run(&a, x), &b, 1e-6);
        assert!(max_rel_error(tape.grad(ia), fd_a.values()) < 1e-6);
        assert!(max_rel_error(tape.grad(ib), fd_b.values()) < 1e-6);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf_from(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf_from(&[2], vec![1.0, 2.0]).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[2.0, 4.0]);
    }

    #[test]
    fn fanout_accumulates_gradients() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf_from(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = tape.add(w, w).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss_and_empty_record() {
        let mut tape = Tape::<f64>::new();
        assert!(matches!(
            tape.backward(TensorId(0)),
            Err(Error::EmptyRecord)
        ));
        let w = tape.leaf_from(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            tape.backward(w),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_is_bit_for_bit_deterministic() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let a = rand_tensor(&[4, 5], 31).cast::<f32>();
            let b = rand_tensor(&[4, 5], 32).cast::<f32>();
            let ia = tape.leaf(&a);
            let ib = tape.leaf(&b);
            let m = tape.mul(ia, ib).unwrap();
            let r = tape.relu(m);
            let loss = tape.sum(r);
            tape.backward(loss).unwrap();
            (tape.grad(ia).to_vec(), tape.grad(ib).to_vec())
        };
        let (ga1, gb1) = run();
        let (ga2, gb2) = run();
        assert_eq!(ga1, ga2);
        assert_eq!(gb1, gb2);
    }

    #[test]
    fn split_record_gradients_sum_to_batched_gradient() {
        // One batched record of two rows vs two single-row records.
        let w = rand_tensor(&[2, 3], 41);
        let x0 = rand_tensor(&[1, 2], 42);
        let x1 = rand_tensor(&[1, 2], 43);

        let mut batched = Tape::<f64>::new();
        let iw = batched.leaf(&w);
        let r0 = batched.leaf(&x0);
        let r1 = batched.leaf(&x1);
        let y0 = batched.matmul(r0, iw).unwrap();
        let y1 = batched.matmul(r1, iw).unwrap();
        let rows = batched.concat_rows(&[y0, y1]).unwrap();
        let loss = batched.softmax_cross_entropy(rows, &[0, 2]).unwrap();
        batched.backward(loss).unwrap();
        let g_batched = batched.grad(iw).to_vec();

        let mut g_split = vec![0.0; w.len()];
        for (x, label) in [(&x0, 0usize), (&x1, 2usize)] {
            let mut t = Tape::<f64>::new();
            let iw = t.leaf(&w);
            let ix = t.leaf(x);
            let y = t.matmul(ix, iw).unwrap();
            let loss = t.softmax_cross_entropy(y, &[label]).unwrap();
            t.backward(loss).unwrap();
            for (acc, &g) in g_split.iter_mut().zip(t.grad(iw)) {
                *acc += g * 0.5; // each single-sample record weighs 1/batch
            }
        }
        assert!(max_rel_error(&g_batched, &g_split) < 1e-6);
    }
}
