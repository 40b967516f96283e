use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, BatchNormMode, BatchStats, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Height, width and channel count of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub const MNIST: InputShape = InputShape {
        height: 28,
        width: 28,
        channels: 1,
    };
    pub const CIFAR10: InputShape = InputShape {
        height: 32,
        width: 32,
        channels: 3,
    };

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Shape of an observation tensor (height × width × channels).
    pub fn hwc(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    Lenet5,
    ResnetLite { channels: usize },
    Mlp { hidden: Vec<usize> },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Lenet5 => "lenet5",
            Architecture::ResnetLite { .. } => "resnet_lite",
            Architecture::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(flatten)]
    pub arch: Architecture,
    pub input: InputShape,
    pub num_categories: usize,
    pub output: OutputActivation,
}

impl EncoderConfig {
    pub fn lenet5(num_categories: usize) -> Self {
        Self {
            arch: Architecture::Lenet5,
            input: InputShape::MNIST,
            num_categories,
            output: OutputActivation::Softmax,
        }
    }

    pub fn resnet_lite(num_categories: usize) -> Self {
        Self {
            arch: Architecture::ResnetLite {
                channels: RESNET_CHANNELS,
            },
            input: InputShape::CIFAR10,
            num_categories,
            output: OutputActivation::Softmax,
        }
    }

    pub fn mlp(input: InputShape, hidden: Vec<usize>, num_categories: usize) -> Self {
        Self {
            arch: Architecture::Mlp { hidden },
            input,
            num_categories,
            output: OutputActivation::Softmax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 categories, got {}",
                self.num_categories
            )));
        }
        if self.input.numel() == 0 {
            return Err(Error::invalid("input shape has a zero dimension"));
        }
        match &self.arch {
            Architecture::Lenet5 if self.input != InputShape::MNIST => Err(Error::invalid(format!(
                "lenet5 expects 28x28x1 greyscale input, got {:?}",
                self.input
            ))),
            Architecture::ResnetLite { .. } if self.input != InputShape::CIFAR10 => Err(Error::invalid(
                format!("resnet_lite expects 32x32x3 input, got {:?}", self.input),
            )),
            Architecture::ResnetLite { channels: 0 } => Err(Error::invalid("resnet_lite needs channels >= 1")),
            Architecture::Mlp { hidden } if hidden.contains(&0) => {
                Err(Error::invalid("mlp hidden layer of width 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Feature maps used by every ResNet-lite layer.
pub const RESNET_CHANNELS: usize = 16;
/// Residual blocks in ResNet-lite; the feature map is halved after every pair.
pub const RESNET_BLOCKS: usize = 6;
const BN_MOMENTUM: f64 = 0.9;

/// Per-observation evidence, one element per category.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceVector<T>(pub Vec<T>);

impl<T: Scalar> EvidenceVector<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    a: Conv,
    b: Conv,
}

#[derive(Debug, Clone)]
enum Layers {
    Lenet5 {
        conv1: Conv,
        conv2: Conv,
        fc1: Dense,
        fc2: Dense,
        out: Dense,
    },
    ResnetLite {
        stem: Conv,
        bn_gamma: ParamId,
        bn_beta: ParamId,
        bn_mean: usize,
        bn_var: usize,
        blocks: Vec<Block>,
        out: Dense,
    },
    Mlp {
        hidden: Vec<Dense>,
        out: Dense,
    },
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    /// Uniform in ±sqrt(3 / fan_in), i.e. variance 1 / fan_in.
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let limit = (3.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.rng.random_range(-limit..limit)))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let w = self.uniform(&[inputs, outputs], inputs);
        Ok(Dense {
            weight: self.store.add(format!("{name}.weight"), w)?,
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]))?,
        })
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, pad: usize) -> Result<Conv> {
        let w = self.uniform(&[cout, cin, k, k], cin * k * k);
        Ok(Conv {
            weight: self.store.add(format!("{name}.weight"), w)?,
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
            pad,
        })
    }
}

/// How a forward pass treats batch-norm layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated.
    Train,
    /// Running averages, nothing mutated.
    Eval,
}

/// Evidence encoder: maps observations to per-category evidence.
#[derive(Debug, Clone)]
pub struct Encoder<T: Scalar> {
    config: EncoderConfig,
    seed: u64,
    store: ParamStore<T>,
    layers: Layers,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let k = config.num_categories;
        let layers = match &config.arch {
            // 28x28 -> conv5 pad2 -> 6@28x28 -> pool -> 6@14x14 -> conv5 -> 16@10x10 -> pool -> 16@5x5
            Architecture::Lenet5 => Layers::Lenet5 {
                conv1: b.conv("conv1", 1, 6, 5, 2)?,
                conv2: b.conv("conv2", 6, 16, 5, 0)?,
                fc1: b.dense("fc1", 16 * 5 * 5, 120)?,
                fc2: b.dense("fc2", 120, 84)?,
                out: b.dense("out", 84, k)?,
            },
            Architecture::ResnetLite { channels } => {
                let c = *channels;
                let stem = b.conv("stem", config.input.channels, c, 3, 1)?;
                let bn_gamma = b.store.add("stem_bn.gamma", Tensor::full(&[c], T::one()))?;
                let bn_beta = b.store.add("stem_bn.beta", Tensor::zeros(&[c]))?;
                let bn_mean = b.store.add_buffer("stem_bn.running_mean", Tensor::zeros(&[c]))?;
                let bn_var = b.store.add_buffer("stem_bn.running_var", Tensor::full(&[c], T::one()))?;
                let mut blocks = Vec::with_capacity(RESNET_BLOCKS);
                for i in 0..RESNET_BLOCKS {
                    blocks.push(Block {
                        a: b.conv(&format!("block{i}.conv_a"), c, c, 3, 1)?,
                        b: b.conv(&format!("block{i}.conv_b"), c, c, 3, 1)?,
                    });
                }
                Layers::ResnetLite {
                    stem,
                    bn_gamma,
                    bn_beta,
                    bn_mean,
                    bn_var,
                    blocks,
                    out: b.dense("out", c, k)?,
                }
            }
            Architecture::Mlp { hidden } => {
                let mut prev = config.input.numel();
                let mut layers = Vec::with_capacity(hidden.len());
                for (i, &h) in hidden.iter().enumerate() {
                    layers.push(b.dense(&format!("hidden{i}"), prev, h)?);
                    prev = h;
                }
                Layers::Mlp {
                    hidden: layers,
                    out: b.dense("out", prev, k)?,
                }
            }
        };
        Ok(Self {
            config,
            seed,
            store,
            layers,
        })
    }

    pub fn lenet5(num_categories: usize, seed: u64) -> Result<Self> {
        Self::new(EncoderConfig::lenet5(num_categories), seed)
    }

    pub fn resnet_lite(num_categories: usize, seed: u64) -> Result<Self> {
        Self::new(EncoderConfig::resnet_lite(num_categories), seed)
    }

    /// Linear map that copies a `1 × K × 1` one-hot observation into the
    /// evidence vector.
    pub fn identity(num_categories: usize) -> Result<Self> {
        let config = EncoderConfig {
            arch: Architecture::Mlp { hidden: vec![] },
            input: InputShape {
                height: 1,
                width: num_categories,
                channels: 1,
            },
            num_categories,
            output: OutputActivation::Linear,
        };
        let mut enc = Self::new(config, 0)?;
        let Layers::Mlp { out, .. } = enc.layers else {
            unreachable!("identity is an mlp")
        };
        let w = enc.store.value_mut(out.weight);
        w.fill(T::zero());
        for i in 0..num_categories {
            w.data_mut()[i * num_categories + i] = T::one();
        }
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_categories(&self) -> usize {
        self.config.num_categories
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Names of the convolution weights inside residual blocks.
    pub fn block_weight_names(&self) -> Vec<String> {
        match &self.layers {
            Layers::ResnetLite { blocks, .. } => blocks
                .iter()
                .flat_map(|b| [b.a.weight, b.b.weight])
                .map(|id| self.store.name(id).to_string())
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Forward pass without mutating running statistics. `input` is NCHW,
    /// the result is `[N, K]` after the output activation.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        Ok(self.run(tape, input, Mode::Eval, None)?.0)
    }

    /// Forward pass in the given mode; [`Mode::Train`] updates batch-norm
    /// running statistics.
    pub fn forward_mode(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<Var> {
        let (out, stats) = self.run(tape, input, mode, None)?;
        if let (Some((mean, var)), Layers::ResnetLite { bn_mean, bn_var, .. }) = (stats, &self.layers) {
            let m = T::lit(BN_MOMENTUM);
            let (bn_mean, bn_var) = (*bn_mean, *bn_var);
            for (r, b) in self.store.buffer_mut(bn_mean).data_mut().iter_mut().zip(mean) {
                *r = m * *r + (T::one() - m) * b;
            }
            for (r, b) in self.store.buffer_mut(bn_var).data_mut().iter_mut().zip(var) {
                *r = m * *r + (T::one() - m) * b;
            }
        }
        Ok(out)
    }

    /// Spatial `(height, width)` of the feature map after each residual block
    /// (and its downsampling, if any). Empty for other architectures.
    pub fn block_output_sizes(&self) -> Result<Vec<(usize, usize)>> {
        if !matches!(self.layers, Layers::ResnetLite { .. }) {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let s = self.config.input;
        let x = tape.constant(Tensor::zeros(&[1, s.channels, s.height, s.width]));
        let mut trace = Vec::new();
        self.run(&mut tape, x, Mode::Eval, Some(&mut trace))?;
        Ok(trace)
    }

    fn linear(&self, tape: &mut Tape<T>, x: Var, d: Dense) -> Result<Var> {
        let (w, b) = (tape.param(&self.store, d.weight), tape.param(&self.store, d.bias));
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn conv(&self, tape: &mut Tape<T>, x: Var, c: Conv) -> Result<Var> {
        let (w, b) = (tape.param(&self.store, c.weight), tape.param(&self.store, c.bias));
        tape.conv2d(x, w, b, 1, c.pad)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        mode: Mode,
        mut trace: Option<&mut Vec<(usize, usize)>>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let s = self.config.input;
        let shape = tape.shape(input);
        if shape.len() != 4 || shape[1..] != [s.channels, s.height, s.width] {
            return Err(Error::invalid(format!(
                "encoder expects N×{}×{}×{} input, got {:?}",
                s.channels, s.height, s.width, shape
            )));
        }
        let mut stats = None;
        let logits = match &self.layers {
            Layers::Lenet5 {
                conv1,
                conv2,
                fc1,
                fc2,
                out,
            } => {
                let h = self.conv(tape, input, *conv1)?;
                let h = tape.relu(h);
                let h = tape.avg_pool(h, 2)?;
                let h = self.conv(tape, h, *conv2)?;
                let h = tape.relu(h);
                let h = tape.avg_pool(h, 2)?;
                let h = tape.flatten(h)?;
                let h = self.linear(tape, h, *fc1)?;
                let h = tape.relu(h);
                let h = self.linear(tape, h, *fc2)?;
                let h = tape.relu(h);
                self.linear(tape, h, *out)?
            }
            Layers::ResnetLite {
                stem,
                bn_gamma,
                bn_beta,
                bn_mean,
                bn_var,
                blocks,
                out,
            } => {
                let h = self.conv(tape, input, *stem)?;
                let (g, b) = (tape.param(&self.store, *bn_gamma), tape.param(&self.store, *bn_beta));
                let bn_mode = match mode {
                    Mode::Train => BatchNormMode::Batch,
                    Mode::Eval => BatchNormMode::Fixed {
                        mean: self.store.buffer(*bn_mean).data(),
                        var: self.store.buffer(*bn_var).data(),
                    },
                };
                let (h, batch_stats) = tape.batch_norm(h, g, b, bn_mode)?;
                stats = batch_stats;
                let mut h = tape.relu(h);
                for (i, block) in blocks.iter().enumerate() {
                    let r = self.conv(tape, h, block.a)?;
                    let r = tape.relu(r);
                    let r = self.conv(tape, r, block.b)?;
                    h = tape.add(h, r)?;
                    if i % 2 == 1 {
                        h = tape.subsample(h, 2)?;
                    }
                    if let Some(t) = trace.as_deref_mut() {
                        let s = tape.shape(h);
                        t.push((s[2], s[3]));
                    }
                }
                let side = tape.shape(h)[2];
                let h = tape.avg_pool(h, side)?;
                let h = tape.flatten(h)?;
                self.linear(tape, h, *out)?
            }
            Layers::Mlp { hidden, out } => {
                let mut h = tape.flatten(input)?;
                for d in hidden {
                    h = self.linear(tape, h, *d)?;
                    h = tape.relu(h);
                }
                self.linear(tape, h, *out)?
            }
        };
        let out = match self.config.output {
            OutputActivation::Softmax => tape.softmax(logits)?,
            OutputActivation::Sigmoid => tape.sigmoid(logits),
            OutputActivation::Linear => logits,
        };
        Ok((out, stats))
    }

    /// Evidence for a single `H × W × C` observation.
    pub fn encode(&self, observation: &Tensor<T>) -> Result<EvidenceVector<T>> {
        let batch = to_nchw(&[observation], self.config.input)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let y = self.forward(&mut tape, x)?;
        Ok(EvidenceVector(tape.value(y).data().to_vec()))
    }

    /// Evidence for many observations at once, as a `[N, K]` tensor. Works
    /// through the batch in chunks so that activations stay small.
    pub fn encode_batch(&self, observations: &[&Tensor<T>]) -> Result<Tensor<T>> {
        const CHUNK: usize = 256;
        let k = self.num_categories();
        let mut out = Vec::with_capacity(observations.len() * k);
        for chunk in observations.chunks(CHUNK) {
            let mut tape = Tape::new();
            let x = tape.constant(to_nchw(chunk, self.config.input)?);
            let y = self.forward(&mut tape, x)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Tensor::new(vec![observations.len(), k], out)
    }
}

/// Stacks `H × W × C` observations into one `N × C × H × W` batch.
pub fn to_nchw<T: Scalar>(observations: &[&Tensor<T>], shape: InputShape) -> Result<Tensor<T>> {
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    if observations.is_empty() {
        return Err(Error::invalid("empty observation batch"));
    }
    let mut data = vec![T::zero(); observations.len() * shape.numel()];
    for (n, obs) in observations.iter().enumerate() {
        if obs.shape() != shape.hwc() {
            return Err(Error::invalid(format!(
                "observation shape {:?} does not match encoder input {:?}",
                obs.shape(),
                shape.hwc()
            )));
        }
        let dst = &mut data[n * shape.numel()..(n + 1) * shape.numel()];
        if c == 1 {
            dst.copy_from_slice(obs.data());
            continue;
        }
        for (i, &v) in obs.data().iter().enumerate() {
            let ch = i % c;
            let pix = i / c;
            dst[ch * h * w + pix] = v;
        }
    }
    Tensor::new(vec![observations.len(), c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax;

    fn on_simplex(y: &[f64]) -> bool {
        y.iter().all(|v| (0.0..=1.0).contains(v)) && (y.iter().sum::<f64>() - 1.0).abs() < 1e-12
    }

    fn random_image(shape: InputShape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.numel()).map(|_| rng.random::<f64>()).collect();
        Tensor::new(shape.hwc().to_vec(), data).unwrap()
    }

    #[test]
    fn lenet_maps_zero_image_to_simplex() {
        let enc = Encoder::<f64>::lenet5(10, 3).unwrap();
        let e = enc.encode(&Tensor::zeros(&InputShape::MNIST.hwc())).unwrap();
        assert_eq!(e.len(), 10);
        assert!(e.values().iter().all(|v| v.is_finite()));
        assert!(on_simplex(e.values()));
        let e = enc.encode(&random_image(InputShape::MNIST, 1)).unwrap();
        assert!(on_simplex(e.values()));
    }

    #[test]
    fn parameter_count_is_fixed_by_architecture() {
        let a = Encoder::<f64>::lenet5(10, 7).unwrap();
        let b = Encoder::<f64>::lenet5(10, 7).unwrap();
        // conv 6·1·25+6, conv 16·6·25+16, fc 400·120+120, 120·84+84, 84·10+10
        assert_eq!(a.params().num_scalars(), 156 + 2416 + 48120 + 10164 + 850);
        assert_eq!(a.params().flat_values(), b.params().flat_values());
        assert_ne!(a.params().flat_values(), Encoder::<f64>::lenet5(10, 8).unwrap().params().flat_values());
    }

    #[test]
    fn architectures_reject_foreign_input_shapes() {
        let mut cfg = EncoderConfig::lenet5(10);
        cfg.input = InputShape::CIFAR10;
        assert!(matches!(Encoder::<f64>::new(cfg, 0), Err(Error::InvalidArgument(_))));
        let mut cfg = EncoderConfig::resnet_lite(10);
        cfg.input = InputShape::MNIST;
        assert!(matches!(Encoder::<f64>::new(cfg, 0), Err(Error::InvalidArgument(_))));
        let enc = Encoder::<f64>::lenet5(10, 0).unwrap();
        assert!(enc.encode(&Tensor::zeros(&[27, 28, 1])).is_err());
    }

    #[test]
    fn resnet_halves_three_times_and_outputs_simplex() {
        let enc = Encoder::<f64>::resnet_lite(10, 5).unwrap();
        assert_eq!(
            enc.block_output_sizes().unwrap(),
            vec![(32, 32), (16, 16), (16, 16), (8, 8), (8, 8), (4, 4)]
        );
        let e = enc.encode(&random_image(InputShape::CIFAR10, 2)).unwrap();
        assert!(on_simplex(e.values()));
    }

    #[test]
    fn zeroed_residual_blocks_are_identities() {
        let mut enc = Encoder::<f64>::resnet_lite(10, 9).unwrap();
        for name in enc.block_weight_names() {
            let id = enc.params().find(&name).unwrap();
            enc.params_mut().value_mut(id).fill(0.0);
        }
        let img = random_image(InputShape::CIFAR10, 4);
        let got = enc.encode(&img).unwrap();

        // same network with the blocks removed: stem, fixed batch norm, relu,
        // three subsamplings, global average, head
        let Layers::ResnetLite { stem, bn_gamma, bn_beta, bn_mean, bn_var, out, .. } = enc.layers.clone() else {
            unreachable!()
        };
        let mut tape = Tape::new();
        let x = tape.constant(to_nchw(&[&img], InputShape::CIFAR10).unwrap());
        let h = enc.conv(&mut tape, x, stem).unwrap();
        let (g, b) = (tape.param(&enc.store, bn_gamma), tape.param(&enc.store, bn_beta));
        let mode = BatchNormMode::Fixed {
            mean: enc.store.buffer(bn_mean).data(),
            var: enc.store.buffer(bn_var).data(),
        };
        let (h, _) = tape.batch_norm(h, g, b, mode).unwrap();
        let mut h = tape.relu(h);
        for _ in 0..3 {
            h = tape.subsample(h, 2).unwrap();
        }
        let h = tape.avg_pool(h, 4).unwrap();
        let h = tape.flatten(h).unwrap();
        let logits = enc.linear(&mut tape, h, out).unwrap();
        let want = softmax(tape.value(logits).data()).unwrap();
        for (a, b) in got.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_encoder_copies_one_hot_symbols() {
        let enc = Encoder::<f64>::identity(4).unwrap();
        let mut obs = Tensor::zeros(&[1, 4, 1]);
        obs.data_mut()[2] = 1.0;
        assert_eq!(enc.encode(&obs).unwrap().values(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn batch_encoding_matches_single_encoding() {
        let enc = Encoder::<f64>::lenet5(10, 1).unwrap();
        let imgs: Vec<_> = (0..3).map(|s| random_image(InputShape::MNIST, s)).collect();
        let batch = enc.encode_batch(&imgs.iter().collect::<Vec<_>>()).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            let single = enc.encode(img).unwrap();
            for (a, b) in batch.row(i).iter().zip(single.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
