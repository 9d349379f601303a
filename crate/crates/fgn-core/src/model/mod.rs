//! The flow gated two-stream network and its ablation variants.
//!
//! Two structurally identical 3D-CNN branches process the RGB and optical
//! flow channels. The flow branch ends in a sigmoid and acts as a gate: the
//! branch outputs are multiplied elementwise and reduced by a temporal max
//! pool, so flow activity decides which RGB activations survive pooling.
//! A merging block of separable convolutions and a small dense head produce
//! two-class logits.

mod checkpoint;

pub use checkpoint::{load_model, read_checkpoint, save_model};

use crate::error::{Error, Result};
use crate::layers::{Activation, Conv3dLayer, DenseLayer, MaxPool3dLayer};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RGB_CHANNELS: usize = 3;
pub const FLOW_CHANNELS: usize = 2;
pub const INPUT_CHANNELS: usize = RGB_CHANNELS + FLOW_CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelVariant {
    RgbOnly,
    OptOnly,
    FusionP3D,
    FusionC3D,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::RgbOnly,
        ModelVariant::OptOnly,
        ModelVariant::FusionP3D,
        ModelVariant::FusionC3D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::RgbOnly => "rgb-only",
            ModelVariant::OptOnly => "opt-only",
            ModelVariant::FusionP3D => "fusion-p3d",
            ModelVariant::FusionC3D => "fusion-c3d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb-only" => Ok(ModelVariant::RgbOnly),
            "opt-only" => Ok(ModelVariant::OptOnly),
            "fusion-p3d" => Ok(ModelVariant::FusionP3D),
            "fusion-c3d" => Ok(ModelVariant::FusionC3D),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected rgb-only, opt-only, fusion-p3d or fusion-c3d)"
            ))),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ModelVariant::RgbOnly => 0,
            ModelVariant::OptOnly => 1,
            ModelVariant::FusionP3D => 2,
            ModelVariant::FusionC3D => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelVariant::RgbOnly),
            1 => Ok(ModelVariant::OptOnly),
            2 => Ok(ModelVariant::FusionP3D),
            3 => Ok(ModelVariant::FusionC3D),
            other => Err(Error::Checkpoint(format!("unknown variant tag {other}"))),
        }
    }

    fn has_rgb(self) -> bool {
        self != ModelVariant::OptOnly
    }

    fn has_flow(self) -> bool {
        self != ModelVariant::RgbOnly
    }

    fn full_conv(self) -> bool {
        self == ModelVariant::FusionC3D
    }
}

/// Input geometry of a model instance. The production network consumes
/// 64×224×224×5 samples with an 8-frame fusion pool; smaller clones of the
/// same topology (identical parameters, scaled pools) exist for desk-scale
/// testing and gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelTopology {
    pub frames: usize,
    pub side: usize,
    pub fusion_window: usize,
}

impl Default for ModelTopology {
    fn default() -> Self {
        Self {
            frames: 64,
            side: 224,
            fusion_window: 8,
        }
    }
}

impl ModelTopology {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fusion_window >= 1
            && self.frames % self.fusion_window == 0
            && (self.frames / self.fusion_window) % 4 == 0
            && self.side % 16 == 0
            && self.side >= 16;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "topology frames={} side={} fusion_window={} does not divide through the pooling stack",
                self.frames, self.side, self.fusion_window
            )))
        }
    }

    pub fn sample_shape(&self) -> [usize; 4] {
        [self.frames, self.side, self.side, INPUT_CHANNELS]
    }
}

enum Block<T> {
    Conv {
        layer: Conv3dLayer<T>,
        activation: Activation,
    },
    Pool(MaxPool3dLayer),
}

impl<T: Scalar> Block<T> {
    fn describe(&self) -> String {
        match self {
            Block::Conv { layer, .. } => {
                let ks = layer.kernel.shape();
                format!("Conv3d {}x{}x{}@{}", ks[0], ks[1], ks[2], ks[4])
            }
            Block::Pool(p) => format!(
                "MaxPool3d {}x{}x{}",
                p.window[0], p.window[1], p.window[2]
            ),
        }
    }
}

pub struct FlowGatedModel<T> {
    variant: ModelVariant,
    topology: ModelTopology,
    rgb_channel: Option<Vec<Block<T>>>,
    flow_channel: Option<Vec<Block<T>>>,
    merging: Vec<Block<T>>,
    fc1: DenseLayer<T>,
    fc2: DenseLayer<T>,
    classifier: DenseLayer<T>,
}

/// Tape ids of every parameter in one forward record, in canonical order.
pub struct ParamBinding {
    pub entries: Vec<(String, TensorId)>,
}

/// One recorded forward pass of a single sample.
pub struct SampleRecord {
    pub logits: TensorId,
    pub params: ParamBinding,
    /// (stage, shape) pairs for the structural checks.
    pub trace: Vec<(String, Vec<usize>)>,
}

/// Builds a variant at the production scale (64×224×224×5 input), with all
/// weights drawn fan-in-scaled uniform from `seed` and zero biases.
pub fn build_model<T: Scalar>(variant: ModelVariant, seed: u64) -> FlowGatedModel<T> {
    build_model_with(variant, seed, ModelTopology::default()).expect("default topology is valid")
}

/// Same topology at a different input scale (gradient checks, desk-scale
/// training fixtures). Parameter shapes and counts are identical across
/// scales; only the pooling geometry changes.
pub fn build_model_with<T: Scalar>(
    variant: ModelVariant,
    seed: u64,
    topology: ModelTopology,
) -> Result<FlowGatedModel<T>> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = variant.full_conv();

    let rgb_channel = variant
        .has_rgb()
        .then(|| channel_stack(RGB_CHANNELS, full, Activation::Relu, &mut rng));
    let flow_channel = variant
        .has_flow()
        .then(|| channel_stack(FLOW_CHANNELS, full, Activation::Sigmoid, &mut rng));
    let merging = merging_stack(full, &mut rng);
    let fc1 = DenseLayer::init(128, 128, &mut rng);
    let fc2 = DenseLayer::init(128, 128, &mut rng);
    let classifier = DenseLayer::init(128, 2, &mut rng);

    Ok(FlowGatedModel {
        variant,
        topology,
        rgb_channel,
        flow_channel,
        merging,
        fc1,
        fc2,
        classifier,
    })
}

fn conv<T: Scalar>(
    kt: usize,
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    activation: Activation,
    rng: &mut ChaCha8Rng,
) -> Block<T> {
    Block::Conv {
        layer: Conv3dLayer::init(kt, kh, kw, cin, cout, rng),
        activation,
    }
}

/// One separable pair (1×3×3 then 3×1×1) or its full 3×3×3 replacement.
fn pair<T: Scalar>(
    cin: usize,
    cout: usize,
    full: bool,
    last_act: Activation,
    rng: &mut ChaCha8Rng,
    blocks: &mut Vec<Block<T>>,
) {
    if full {
        blocks.push(conv(3, 3, 3, cin, cout, last_act, rng));
    } else {
        blocks.push(conv(1, 3, 3, cin, cout, Activation::Relu, rng));
        blocks.push(conv(3, 1, 1, cout, cout, last_act, rng));
    }
}

/// RGB/Flow channel: [pair@16 ×2, pool 1×2×2, pair@32 ×2, pool 1×2×2], with
/// the branch's terminal activation on the very last convolution.
fn channel_stack<T: Scalar>(
    cin: usize,
    full: bool,
    final_act: Activation,
    rng: &mut ChaCha8Rng,
) -> Vec<Block<T>> {
    let mut blocks = Vec::new();
    pair(cin, 16, full, Activation::Relu, rng, &mut blocks);
    pair(16, 16, full, Activation::Relu, rng, &mut blocks);
    blocks.push(Block::Pool(MaxPool3dLayer::new(1, 2, 2)));
    pair(16, 32, full, Activation::Relu, rng, &mut blocks);
    pair(32, 32, full, final_act, rng, &mut blocks);
    blocks.push(Block::Pool(MaxPool3dLayer::new(1, 2, 2)));
    blocks
}

/// Merging block: [pair@64 ×2, pool 2×2×2, pair@128, pool 2×2×2], all ReLU.
fn merging_stack<T: Scalar>(full: bool, rng: &mut ChaCha8Rng) -> Vec<Block<T>> {
    let mut blocks = Vec::new();
    pair(32, 64, full, Activation::Relu, rng, &mut blocks);
    pair(64, 64, full, Activation::Relu, rng, &mut blocks);
    blocks.push(Block::Pool(MaxPool3dLayer::new(2, 2, 2)));
    pair(64, 128, full, Activation::Relu, rng, &mut blocks);
    blocks.push(Block::Pool(MaxPool3dLayer::new(2, 2, 2)));
    blocks
}

/// Multiplies the gate against the RGB features and max-pools over time.
///
/// Shapes must match, the temporal axis must divide by `window`, and gate
/// values must lie in [0,1] (the sigmoid's range).
pub fn gate_fusion<T: Scalar>(
    tape: &mut Tape<T>,
    rgb_feat: TensorId,
    gate: TensorId,
    window: usize,
) -> Result<TensorId> {
    let (sr, sg) = (tape.shape(rgb_feat), tape.shape(gate));
    if sr != sg {
        return Err(Error::ShapeMismatch {
            left: sr.to_vec(),
            right: sg.to_vec(),
        });
    }
    if let Some(&bad) = tape
        .values(gate)
        .iter()
        .find(|v| **v < T::ZERO || **v > T::ONE)
    {
        return Err(Error::GateOutOfRange(bad.to_f64()));
    }
    let gated = tape.mul(rgb_feat, gate)?;
    tape.maxpool3d(gated, [window, 1, 1])
}

impl<T: Scalar> FlowGatedModel<T> {
    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn topology(&self) -> ModelTopology {
        self.topology
    }

    /// Trainable parameter count of the whole model.
    pub fn count_params(&self) -> usize {
        let mut total = 0;
        self.visit_params(|_, t| total += t.len());
        total
    }

    /// Canonical-order traversal of all parameter tensors.
    pub fn visit_params(&self, mut f: impl FnMut(&str, &Tensor<T>)) {
        let visit_stack = |stack: &[Block<T>], prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)| {
            let mut idx = 0;
            for block in stack {
                if let Block::Conv { layer, .. } = block {
                    f(&format!("{prefix}.conv{idx}.kernel"), &layer.kernel);
                    f(&format!("{prefix}.conv{idx}.bias"), &layer.bias);
                    idx += 1;
                }
            }
        };
        if let Some(stack) = &self.rgb_channel {
            visit_stack(stack, "rgb", &mut f);
        }
        if let Some(stack) = &self.flow_channel {
            visit_stack(stack, "flow", &mut f);
        }
        visit_stack(&self.merging, "merging", &mut f);
        f("head.fc0.weights", &self.fc1.weights);
        f("head.fc0.bias", &self.fc1.bias);
        f("head.fc1.weights", &self.fc2.weights);
        f("head.fc1.bias", &self.fc2.bias);
        f("head.out.weights", &self.classifier.weights);
        f("head.out.bias", &self.classifier.bias);
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        let visit_stack =
            |stack: &mut [Block<T>], prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)| {
                let mut idx = 0;
                for block in stack.iter_mut() {
                    if let Block::Conv { layer, .. } = block {
                        f(&format!("{prefix}.conv{idx}.kernel"), &mut layer.kernel);
                        f(&format!("{prefix}.conv{idx}.bias"), &mut layer.bias);
                        idx += 1;
                    }
                }
            };
        if let Some(stack) = self.rgb_channel.as_deref_mut() {
            visit_stack(stack, "rgb", &mut f);
        }
        if let Some(stack) = self.flow_channel.as_deref_mut() {
            visit_stack(stack, "flow", &mut f);
        }
        visit_stack(&mut self.merging, "merging", &mut f);
        f("head.fc0.weights", &mut self.fc1.weights);
        f("head.fc0.bias", &mut self.fc1.bias);
        f("head.fc1.weights", &mut self.fc2.weights);
        f("head.fc1.bias", &mut self.fc2.bias);
        f("head.out.weights", &mut self.classifier.weights);
        f("head.out.bias", &mut self.classifier.bias);
    }

    /// Owned list of (name, &mut tensor) in canonical order, for optimizer
    /// steps and gradient accumulation.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        fn stack_params<'a, T: Scalar>(
            stack: &'a mut [Block<T>],
            prefix: &str,
            out: &mut Vec<(String, &'a mut Tensor<T>)>,
        ) {
            let mut idx = 0;
            for block in stack.iter_mut() {
                if let Block::Conv { layer, .. } = block {
                    out.push((format!("{prefix}.conv{idx}.kernel"), &mut layer.kernel));
                    out.push((format!("{prefix}.conv{idx}.bias"), &mut layer.bias));
                    idx += 1;
                }
            }
        }
        if let Some(stack) = self.rgb_channel.as_deref_mut() {
            stack_params(stack, "rgb", &mut out);
        }
        if let Some(stack) = self.flow_channel.as_deref_mut() {
            stack_params(stack, "flow", &mut out);
        }
        stack_params(&mut self.merging, "merging", &mut out);
        out.push(("head.fc0.weights".into(), &mut self.fc1.weights));
        out.push(("head.fc0.bias".into(), &mut self.fc1.bias));
        out.push(("head.fc1.weights".into(), &mut self.fc2.weights));
        out.push(("head.fc1.bias".into(), &mut self.fc2.bias));
        out.push(("head.out.weights".into(), &mut self.classifier.weights));
        out.push(("head.out.bias".into(), &mut self.classifier.bias));
        out
    }

    /// Per-layer parameter table grouped by block, with subtotals and the
    /// model total as trailing rows.
    pub fn param_table(&self) -> Vec<(String, String, usize)> {
        let mut rows = Vec::new();
        let push_stack = |stack: &[Block<T>], name: &str, rows: &mut Vec<(String, String, usize)>| {
            let mut subtotal = 0;
            for block in stack {
                if let Block::Conv { layer, .. } = block {
                    rows.push((name.to_string(), block.describe(), layer.param_count()));
                    subtotal += layer.param_count();
                }
            }
            rows.push((name.to_string(), "subtotal".to_string(), subtotal));
        };
        if let Some(stack) = &self.rgb_channel {
            push_stack(stack, "rgb_channel", &mut rows);
        }
        if let Some(stack) = &self.flow_channel {
            push_stack(stack, "flow_channel", &mut rows);
        }
        push_stack(&self.merging, "merging_block", &mut rows);
        let head = self.fc1.param_count() + self.fc2.param_count() + self.classifier.param_count();
        rows.push(("head".to_string(), "FC layer 128".to_string(), self.fc1.param_count()));
        rows.push(("head".to_string(), "FC layer 128".to_string(), self.fc2.param_count()));
        rows.push(("head".to_string(), "Softmax 2".to_string(), self.classifier.param_count()));
        rows.push(("head".to_string(), "subtotal".to_string(), head));
        rows.push(("total".to_string(), String::new(), self.count_params()));
        rows
    }

    /// Subtotal of one block ("rgb_channel", "flow_channel", "merging_block",
    /// "head") from the table.
    pub fn block_params(&self, block: &str) -> usize {
        self.param_table()
            .iter()
            .find(|(b, layer, _)| b == block && layer == "subtotal")
            .map(|(_, _, n)| *n)
            .unwrap_or(0)
    }

    /// Records the forward pass of one sample [t,h,w,5] on `tape`.
    pub fn forward_sample(&self, tape: &mut Tape<T>, sample: TensorId) -> Result<SampleRecord> {
        let expected = self.topology.sample_shape();
        let actual = tape.shape(sample);
        if actual != expected {
            return Err(Error::InputShape {
                expected: expected.to_vec(),
                actual: actual.to_vec(),
            });
        }
        let mut params = Vec::new();
        let mut trace = Vec::new();

        let mut run_stack = |tape: &mut Tape<T>,
                             stack: &[Block<T>],
                             prefix: &str,
                             mut x: TensorId|
         -> Result<TensorId> {
            let mut idx = 0;
            for block in stack {
                match block {
                    Block::Conv { layer, activation } => {
                        let (out, ids) = layer.apply(tape, x)?;
                        params.push((format!("{prefix}.conv{idx}.kernel"), ids.weights));
                        params.push((format!("{prefix}.conv{idx}.bias"), ids.bias));
                        x = activation.apply(tape, out);
                        idx += 1;
                    }
                    Block::Pool(pool) => {
                        x = pool.apply(tape, x)?;
                    }
                }
            }
            Ok(x)
        };

        let fused = match (&self.rgb_channel, &self.flow_channel) {
            (Some(rgb_stack), Some(flow_stack)) => {
                let rgb_in = tape.channel_slice(sample, 0, RGB_CHANNELS)?;
                let flow_in = tape.channel_slice(sample, RGB_CHANNELS, FLOW_CHANNELS)?;
                let rgb_feat = run_stack(tape, rgb_stack, "rgb", rgb_in)?;
                trace.push(("rgb_channel".into(), tape.shape(rgb_feat).to_vec()));
                let gate = run_stack(tape, flow_stack, "flow", flow_in)?;
                trace.push(("flow_channel".into(), tape.shape(gate).to_vec()));
                let fused = gate_fusion(tape, rgb_feat, gate, self.topology.fusion_window)?;
                trace.push(("fusion_pool".into(), tape.shape(fused).to_vec()));
                fused
            }
            (Some(rgb_stack), None) => {
                let rgb_in = tape.channel_slice(sample, 0, RGB_CHANNELS)?;
                let feat = run_stack(tape, rgb_stack, "rgb", rgb_in)?;
                trace.push(("rgb_channel".into(), tape.shape(feat).to_vec()));
                let pooled = tape.maxpool3d(feat, [self.topology.fusion_window, 1, 1])?;
                trace.push(("fusion_pool".into(), tape.shape(pooled).to_vec()));
                pooled
            }
            (None, Some(flow_stack)) => {
                let flow_in = tape.channel_slice(sample, RGB_CHANNELS, FLOW_CHANNELS)?;
                let feat = run_stack(tape, flow_stack, "flow", flow_in)?;
                trace.push(("flow_channel".into(), tape.shape(feat).to_vec()));
                let pooled = tape.maxpool3d(feat, [self.topology.fusion_window, 1, 1])?;
                trace.push(("fusion_pool".into(), tape.shape(pooled).to_vec()));
                pooled
            }
            (None, None) => unreachable!("every variant keeps at least one branch"),
        };

        let merged = run_stack(tape, &self.merging, "merging", fused)?;
        trace.push(("merging_block".into(), tape.shape(merged).to_vec()));

        // Global max pool over t,h,w keeps the head at two FC(128) layers
        // plus the classifier instead of a multi-million-parameter flatten.
        let pooled = tape.global_max_pool(merged)?;
        let (h1, ids1) = self.fc1.apply(tape, pooled)?;
        let h1 = Activation::Relu.apply(tape, h1);
        let (h2, ids2) = self.fc2.apply(tape, h1)?;
        let h2 = Activation::Relu.apply(tape, h2);
        let (logits, ids3) = self.classifier.apply(tape, h2)?;
        params.push(("head.fc0.weights".into(), ids1.weights));
        params.push(("head.fc0.bias".into(), ids1.bias));
        params.push(("head.fc1.weights".into(), ids2.weights));
        params.push(("head.fc1.bias".into(), ids2.bias));
        params.push(("head.out.weights".into(), ids3.weights));
        params.push(("head.out.bias".into(), ids3.bias));
        trace.push(("logits".into(), tape.shape(logits).to_vec()));

        Ok(SampleRecord {
            logits,
            params: ParamBinding { entries: params },
            trace,
        })
    }

    /// Inference on a batch [b,t,h,w,5]; returns logits [b,2]. Each sample
    /// runs on its own record so memory stays bounded by one sample's
    /// activations.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = batch.shape();
        let expected = self.topology.sample_shape();
        if shape.len() != 5 || shape[1..] != expected {
            let mut exp = vec![shape.first().copied().unwrap_or(1)];
            exp.extend_from_slice(&expected);
            return Err(Error::InputShape {
                expected: exp,
                actual: shape.to_vec(),
            });
        }
        let batch_size = shape[0];
        let sample_len = batch.len() / batch_size;
        let mut logits = Vec::with_capacity(batch_size * 2);
        for b in 0..batch_size {
            let values = batch.values()[b * sample_len..(b + 1) * sample_len].to_vec();
            let mut tape = Tape::new();
            let sample = tape.leaf_from(&expected, values)?;
            let record = self.forward_sample(&mut tape, sample)?;
            logits.extend_from_slice(tape.values(record.logits));
        }
        Tensor::new(vec![batch_size, 2], logits)
    }

    /// Forward of a single sample returning (logits, stage trace).
    pub fn forward_traced(&self, sample: &Tensor<T>) -> Result<(Tensor<T>, Vec<(String, Vec<usize>)>)> {
        let mut tape = Tape::new();
        let id = tape.leaf(sample);
        let record = self.forward_sample(&mut tape, id)?;
        Ok((tape.tensor(record.logits), record.trace))
    }
}
