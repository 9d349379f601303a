//! Network building blocks: 3D convolution layers (full and separable
//! pseudo-3D pairs), non-overlapping 3D max pooling, dense layers, the two
//! activations, and SGD with momentum.

mod sgd;

pub use sgd::SgdState;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorId};
use rand::Rng;

/// Activation applied after a layer. `Linear` is the no-op used by tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, x: TensorId) -> TensorId {
        match self {
            Activation::Linear => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Ids of a layer's parameters on a particular tape, used to read gradients
/// back after `backward`.
#[derive(Clone, Copy, Debug)]
pub struct ParamPair {
    pub weights: TensorId,
    pub bias: TensorId,
}

/// Same-padding stride-1 3D convolution with bias.
///
/// Kernel layout is [kt,kh,kw,cin,cout]; output dims equal input dims.
#[derive(Clone, Debug)]
pub struct Conv3dLayer<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 5 || ks[0] % 2 == 0 || ks[1] % 2 == 0 || ks[2] % 2 == 0 {
            return Err(Error::InvalidShape {
                shape: ks.to_vec(),
                reason: "kernel must be [kt,kh,kw,cin,cout] with odd extents".into(),
            });
        }
        if bias.shape() != [ks[4]] {
            return Err(Error::ShapeMismatch {
                left: bias.shape().to_vec(),
                right: vec![ks[4]],
            });
        }
        Ok(Self { kernel, bias })
    }

    /// Fan-in-scaled uniform weights (He-style), zero bias.
    pub fn init(
        kt: usize,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (kt * kh * kw * cin) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let kernel = Tensor::from_fn(&[kt, kh, kw, cin, cout], |_| {
            T::from_f64(rng.random_range(-limit..limit))
        });
        Self {
            kernel,
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[4]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Records the convolution on the tape, returning the output along with
    /// the parameter leaf ids.
    pub fn apply(&self, tape: &mut Tape<T>, x: TensorId) -> Result<(TensorId, ParamPair)> {
        let weights = tape.leaf(&self.kernel);
        let bias = tape.leaf(&self.bias);
        let out = tape.conv3d(x, weights, bias)?;
        Ok((out, ParamPair { weights, bias }))
    }
}

/// Convenience entry point mirroring the layer contract: checks the channel
/// count and runs the convolution on a fresh tape, returning the output
/// tensor (values only).
pub fn conv3d_forward<T: Scalar>(x: &Tensor<T>, layer: &Conv3dLayer<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let ix = tape.leaf(x);
    let (out, _) = layer.apply(&mut tape, ix)?;
    Ok(tape.tensor(out))
}

/// A separable pseudo-3D pair: a 1×k×k spatial convolution followed by a
/// k×1×1 temporal convolution, each with its own activation.
pub fn sepconv3d_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorId,
    spatial: &Conv3dLayer<T>,
    temporal: &Conv3dLayer<T>,
    spatial_act: Activation,
    temporal_act: Activation,
) -> Result<(TensorId, ParamPair, ParamPair)> {
    if spatial.out_channels() != temporal.in_channels() {
        return Err(Error::ChannelMismatch {
            input: spatial.out_channels(),
            expected: temporal.in_channels(),
        });
    }
    let (s_out, s_ids) = spatial.apply(tape, x)?;
    let s_act = spatial_act.apply(tape, s_out);
    let (t_out, t_ids) = temporal.apply(tape, s_act)?;
    let t_act = temporal_act.apply(tape, t_out);
    Ok((t_act, s_ids, t_ids))
}

/// Non-overlapping 3D max pooling; stride equals the window, no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool3dLayer {
    pub window: [usize; 3],
}

impl MaxPool3dLayer {
    pub fn new(pt: usize, ph: usize, pw: usize) -> Self {
        Self {
            window: [pt, ph, pw],
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: TensorId) -> Result<TensorId> {
        tape.maxpool3d(x, self.window)
    }
}

pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, layer: &MaxPool3dLayer) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let ix = tape.leaf(x);
    let out = layer.apply(&mut tape, ix)?;
    Ok(tape.tensor(out))
}

/// Fully connected layer on [rows, din] inputs.
#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub weights: Tensor<T>, // [din, dout]
    pub bias: Tensor<T>,    // [dout]
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 {
            return Err(Error::InvalidShape {
                shape: ws.to_vec(),
                reason: "dense weights must be [din,dout]".into(),
            });
        }
        if bias.shape() != [ws[1]] {
            return Err(Error::ShapeMismatch {
                left: bias.shape().to_vec(),
                right: vec![ws[1]],
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn init(din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / din as f64).sqrt();
        let weights =
            Tensor::from_fn(&[din, dout], |_| T::from_f64(rng.random_range(-limit..limit)));
        Self {
            weights,
            bias: Tensor::zeros(&[dout]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn apply(&self, tape: &mut Tape<T>, x: TensorId) -> Result<(TensorId, ParamPair)> {
        let weights = tape.leaf(&self.weights);
        let bias = tape.leaf(&self.bias);
        let prod = tape.matmul(x, weights)?;
        let out = tape.bias_add_rows(prod, bias)?;
        Ok((out, ParamPair { weights, bias }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, max_rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn conv_layer(kernel_vals: Vec<f64>, ks: [usize; 5], bias: Vec<f64>) -> Conv3dLayer<f64> {
        Conv3dLayer::new(
            Tensor::new(ks.to_vec(), kernel_vals).unwrap(),
            Tensor::new(vec![ks[4]], bias).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let layer = conv_layer(vec![1.0], [1, 1, 1, 1, 1], vec![0.0]);
        let x = rand_tensor(&[2, 3, 3, 1], 1);
        let out = conv3d_forward(&x, &layer).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn all_ones_kernel_counts_zero_padded_taps() {
        // 1x3x3 all-ones kernel over a 1x3x3x1 all-ones input: each output is
        // the number of in-bounds taps (4 corner, 6 edge, 9 center).
        let layer = conv_layer(vec![1.0; 9], [1, 3, 3, 1, 1], vec![0.0]);
        let x = Tensor::filled(&[1, 3, 3, 1], 1.0);
        let out = conv3d_forward(&x, &layer).unwrap();
        assert_eq!(
            out.values(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let layer = conv_layer(vec![1.0; 6], [1, 1, 1, 3, 2], vec![0.0; 2]);
        let x = Tensor::<f64>::filled(&[1, 2, 2, 2], 1.0);
        assert!(matches!(
            conv3d_forward(&x, &layer),
            Err(Error::ChannelMismatch {
                input: 2,
                expected: 3
            })
        ));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let x = rand_tensor(&[2, 4, 4, 2], 7);
        let kernel = rand_tensor(&[3, 1, 1, 2, 2], 8);
        let bias = rand_tensor(&[2], 9);

        let loss_of = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| {
            let mut tape = Tape::new();
            let ix = tape.leaf(x);
            let ik = tape.leaf(k);
            let ib = tape.leaf(b);
            let out = tape.conv3d(ix, ik, ib).unwrap();
            // A non-symmetric reduction so every coordinate matters.
            let weights = Tensor::from_fn(tape.shape(out), |i| ((i % 7) as f64 - 3.0) / 3.0);
            let iw = tape.leaf(&weights);
            let prod = tape.mul(out, iw).unwrap();
            let s = tape.sum(prod);
            tape.values(s)[0]
        };

        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let ik = tape.leaf(&kernel);
        let ib = tape.leaf(&bias);
        let out = tape.conv3d(ix, ik, ib).unwrap();
        let weights = Tensor::from_fn(tape.shape(out), |i| ((i % 7) as f64 - 3.0) / 3.0);
        let iw = tape.leaf(&weights);
        let prod = tape.mul(out, iw).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();

        let fd_x = finite_diff_grad(|t| loss_of(t, &kernel, &bias), &x, 1e-6);
        let fd_k = finite_diff_grad(|t| loss_of(&x, t, &bias), &kernel, 1e-6);
        let fd_b = finite_diff_grad(|t| loss_of(&x, &kernel, t), &bias, 1e-6);
        assert!(max_rel_error(tape.grad(ix), fd_x.values()) < 1e-4);
        assert!(max_rel_error(tape.grad(ik), fd_k.values()) < 1e-4);
        assert!(max_rel_error(tape.grad(ib), fd_b.values()) < 1e-4);
    }

    #[test]
    fn conv_same_padding_preserves_dims_for_table_shapes() {
        for (kt, kh, kw) in [(1, 3, 3), (3, 1, 1), (3, 3, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let layer = Conv3dLayer::<f64>::init(kt, kh, kw, 2, 4, &mut rng);
            let x = rand_tensor(&[4, 6, 6, 2], 4);
            let out = conv3d_forward(&x, &layer).unwrap();
            assert_eq!(out.shape(), &[4, 6, 6, 4]);
        }
    }

    #[test]
    fn sepconv_identity_pair_preserves_input() {
        let spatial = conv_layer(vec![1.0], [1, 1, 1, 1, 1], vec![0.0]);
        let temporal = conv_layer(vec![1.0], [1, 1, 1, 1, 1], vec![0.0]);
        let x = rand_tensor(&[2, 3, 3, 1], 5);
        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let (out, _, _) = sepconv3d_block(
            &mut tape,
            ix,
            &spatial,
            &temporal,
            Activation::Linear,
            Activation::Linear,
        )
        .unwrap();
        assert_eq!(tape.values(out), x.values());
    }

    #[test]
    fn sepconv_pair_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spatial = Conv3dLayer::<f32>::init(1, 3, 3, 3, 16, &mut rng);
        let temporal = Conv3dLayer::<f32>::init(3, 1, 1, 16, 16, &mut rng);
        assert_eq!(spatial.param_count(), 448);
        assert_eq!(temporal.param_count(), 784);
        assert_eq!(spatial.param_count() + temporal.param_count(), 1232);
    }

    #[test]
    fn sepconv_gradient_matches_finite_differences() {
        let x = rand_tensor(&[2, 3, 3, 2], 11);
        let spatial = rand_tensor(&[1, 3, 3, 2, 3], 12);
        let temporal = rand_tensor(&[3, 1, 1, 3, 2], 13);

        let loss_of = |x: &Tensor<f64>, s: &Tensor<f64>, t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let ix = tape.leaf(x);
            let sl = Conv3dLayer::new(s.clone(), Tensor::zeros(&[3])).unwrap();
            let tl = Conv3dLayer::new(t.clone(), Tensor::zeros(&[2])).unwrap();
            let (out, _, _) = sepconv3d_block(
                &mut tape,
                ix,
                &sl,
                &tl,
                Activation::Relu,
                Activation::Sigmoid,
            )
            .unwrap();
            let s = tape.sum(out);
            tape.values(s)[0]
        };

        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let sl = Conv3dLayer::new(spatial.clone(), Tensor::zeros(&[3])).unwrap();
        let tl = Conv3dLayer::new(temporal.clone(), Tensor::zeros(&[2])).unwrap();
        let (out, s_ids, t_ids) = sepconv3d_block(
            &mut tape,
            ix,
            &sl,
            &tl,
            Activation::Relu,
            Activation::Sigmoid,
        )
        .unwrap();
        let loss = tape.sum(out);
        tape.backward(loss).unwrap();

        let fd_x = finite_diff_grad(|t| loss_of(t, &spatial, &temporal), &x, 1e-6);
        let fd_s = finite_diff_grad(|t| loss_of(&x, t, &temporal), &spatial, 1e-6);
        let fd_t = finite_diff_grad(|t| loss_of(&x, &spatial, t), &temporal, 1e-6);
        assert!(max_rel_error(tape.grad(ix), fd_x.values()) < 1e-4);
        assert!(max_rel_error(tape.grad(s_ids.weights), fd_s.values()) < 1e-4);
        assert!(max_rel_error(tape.grad(t_ids.weights), fd_t.values()) < 1e-4);
    }

    #[test]
    fn maxpool_temporal_window_shrinks_64_to_8() {
        let x = rand_tensor(&[64, 2, 2, 3], 21);
        let out = maxpool3d(&x, &MaxPool3dLayer::new(8, 1, 1)).unwrap();
        assert_eq!(out.shape(), &[8, 2, 2, 3]);
    }

    #[test]
    fn maxpool_constant_input_stays_constant() {
        let x = Tensor::<f64>::filled(&[4, 4, 4, 2], 0.75);
        let out = maxpool3d(&x, &MaxPool3dLayer::new(2, 2, 2)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax_only() {
        let x = Tensor::new(vec![4, 1, 1, 1], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let ix = tape.leaf(&x);
        let out = tape.maxpool3d(ix, [4, 1, 1]).unwrap();
        assert_eq!(tape.values(out), &[5.0]);
        let loss = tape.sum(out);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(ix), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_non_divisible_axis() {
        let x = Tensor::<f64>::filled(&[5, 4, 4, 1], 0.0);
        match maxpool3d(&x, &MaxPool3dLayer::new(2, 2, 2)) {
            Err(Error::PoolNotDivisible { axis, len, window }) => {
                assert_eq!(axis, "temporal");
                assert_eq!((len, window), (5, 2));
            }
            other => panic!("expected pool divisibility error, got {other:?}"),
        }
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass() {
        for seed in 0..5 {
            let x = rand_tensor(&[4, 6, 6, 3], 100 + seed);
            let upstream = rand_tensor(&[2, 3, 3, 3], 200 + seed);
            let mut tape = Tape::new();
            let ix = tape.leaf(&x);
            let pooled = tape.maxpool3d(ix, [2, 2, 2]).unwrap();
            let iw = tape.leaf(&upstream);
            let prod = tape.mul(pooled, iw).unwrap();
            let loss = tape.sum(prod);
            tape.backward(loss).unwrap();
            let in_mass: f64 = tape.grad(ix).iter().sum();
            let out_mass: f64 = tape.grad(pooled).iter().sum();
            assert!((in_mass - out_mass).abs() < 1e-9);
        }
    }

    #[test]
    fn relu_and_sigmoid_basics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf_from(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let r = tape.relu(x);
        assert_eq!(tape.values(r), &[0.0, 0.0, 2.0]);

        let z = tape.leaf_from(&[1], vec![0.0]).unwrap();
        let s = tape.sigmoid(z);
        assert_eq!(tape.values(s), &[0.5]);

        // Saturated tails are exact, so a huge negative bias really gates to 0.
        let neg = tape.leaf_from(&[1], vec![-1e9]).unwrap();
        let s0 = tape.sigmoid(neg);
        assert_eq!(tape.values(s0), &[0.0]);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        // ReLU checked away from the kink at 0.
        let mut x = rand_tensor(&[3, 4], 31);
        for v in x.values_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        for act in [Activation::Relu, Activation::Sigmoid] {
            let loss_of = |t: &Tensor<f64>| {
                let mut tape = Tape::new();
                let ix = tape.leaf(t);
                let a = act.apply(&mut tape, ix);
                let s = tape.sum(a);
                tape.values(s)[0]
            };
            let mut tape = Tape::new();
            let ix = tape.leaf(&x);
            let a = act.apply(&mut tape, ix);
            let loss = tape.sum(a);
            tape.backward(loss).unwrap();
            let fd = finite_diff_grad(loss_of, &x, 1e-6);
            assert!(max_rel_error(tape.grad(ix), fd.values()) < 1e-4, "{act:?}");
        }
    }

    #[test]
    fn softmax_cross_entropy_symmetric_case() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf_from(&[1, 2], vec![0.0, 0.0]).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let probs = tape.probabilities(loss).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
        assert!((tape.values(loss)[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_is_overflow_safe() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf_from(&[1, 2], vec![1000.0, 0.0]).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        let v = tape.values(loss)[0];
        assert!(v.is_finite());
        assert!(v.abs() < 1e-9, "loss should be ~0, got {v}");
    }

    #[test]
    fn softmax_cross_entropy_rejects_bad_label() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf_from(&[1, 2], vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[2]),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn softmax_cross_entropy_gradient_matches_finite_differences() {
        let logits = rand_tensor(&[3, 2], 41);
        let labels = [0usize, 1, 1];
        let loss_of = |t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let il = tape.leaf(t);
            let loss = tape.softmax_cross_entropy(il, &labels).unwrap();
            tape.values(loss)[0]
        };
        let mut tape = Tape::new();
        let il = tape.leaf(&logits);
        let loss = tape.softmax_cross_entropy(il, &labels).unwrap();
        tape.backward(loss).unwrap();
        let fd = finite_diff_grad(loss_of, &logits, 1e-6);
        assert!(max_rel_error(tape.grad(il), fd.values()) < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_loss_is_shift_invariant() {
        for seed in 0..10 {
            let logits = rand_tensor(&[4, 2], 50 + seed);
            let mut shifted = logits.clone();
            for row in shifted.values_mut().chunks_exact_mut(2) {
                for v in row.iter_mut() {
                    *v += 7.25;
                }
            }
            let labels = [0usize, 1, 0, 1];
            let mut t1 = Tape::new();
            let l1 = t1.leaf(&logits);
            let loss1 = t1.softmax_cross_entropy(l1, &labels).unwrap();
            let mut t2 = Tape::new();
            let l2 = t2.leaf(&shifted);
            let loss2 = t2.softmax_cross_entropy(l2, &labels).unwrap();

            for row in t1.probabilities(loss1).unwrap().chunks_exact(2) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            assert!((t1.values(loss1)[0] - t2.values(loss2)[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_layer_applies_weights_and_bias() {
        let layer = DenseLayer::new(
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(layer.param_count(), 6);
        let mut tape = Tape::new();
        let x = tape.leaf_from(&[1, 2], vec![2.0, 3.0]).unwrap();
        let (out, _) = layer.apply(&mut tape, x).unwrap();
        assert_eq!(tape.values(out), &[2.5, 2.5]);
    }
}
