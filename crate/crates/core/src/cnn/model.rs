use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encode::{label_decode, Encoding};
use super::layers::{
    leaky_relu, leaky_relu_backward, tanh_backward, tanh_forward, BatchNorm2d, BnCache, Conv2d, ConvCache, Dense,
    DenseCache, MeanPool, PoolDivisor,
};
use super::tensor::{FeatureMap, Tensor3};
use super::train::TrainingMeta;
use crate::channel::{ChannelSet, RngStream};
use crate::error::{Error, Result};
use crate::precoding::DirectionMatrix;
use crate::scalar::Scalar;

/// Stream id reserved for weight initialization draws.
const INIT_STREAM: u64 = 0x1417;

/// Hyperparameters that fix the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Convolution kernels per block.
    pub channels: usize,
    pub blocks: usize,
    pub leaky_slope: f64,
    pub pool_divisor: PoolDivisor,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            blocks: 4,
            leaky_slope: 0.01,
            pool_divisor: PoolDivisor::Fixed,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.channels > 0
            && self.blocks > 0
            && self.leaky_slope > 0.0
            && self.leaky_slope < 1.0
            && self.bn_eps > 0.0
            && self.bn_eps.is_finite()
            && self.bn_momentum > 0.0
            && self.bn_momentum <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("architecture {self:?}")))
        }
    }
}

/// Convolution, batch normalization, leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

/// The regression network from an encoded channel to stacked directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    pub encoding: Encoding,
    pub n: usize,
    pub k: usize,
    /// SINR target of the training labels.
    pub gamma_db: f64,
    pub arch: ArchConfig,
    pub init_seed: u64,
    pub blocks: Vec<Block<T>>,
    pub pool: MeanPool,
    pub dense: Dense<T>,
    pub training: Option<TrainingMeta>,
}

/// Intermediate values of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    blocks: Vec<(ConvCache<T>, BnCache<T>, FeatureMap<T>)>,
    dense: DenseCache<T>,
    output: Vec<T>,
    batch: usize,
}

/// Parameter gradients, grouped like [`CnnModel::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub groups: Vec<Vec<T>>,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<FeatureMap<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        self.groups.iter().map(Vec::as_slice).collect()
    }
}

impl<T: Scalar> CnnModel<T> {
    /// A freshly initialized network: Kaiming-normal convolution and dense
    /// weights, zero biases, identity batch normalization.
    pub fn new(encoding: Encoding, n: usize, k: usize, gamma_db: f64, arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        if n == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!("n={n}, k={k}")));
        }
        if !gamma_db.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma_db={gamma_db}")));
        }
        let mut rng = RngStream::new(seed, INIT_STREAM).rng();
        let (h, w) = encoding.input_shape(n, k);
        let mut blocks = Vec::with_capacity(arch.blocks);
        let mut in_ch = 1;
        for _ in 0..arch.blocks {
            blocks.push(Block {
                conv: Conv2d::he_init(in_ch, arch.channels, arch.leaky_slope, &mut rng),
                bn: BatchNorm2d::new(arch.channels, arch.bn_eps, arch.bn_momentum),
            });
            in_ch = arch.channels;
        }
        let dense = Dense::he_init(arch.channels * h * w, 2 * n * k, arch.leaky_slope, &mut rng);
        let model = Self {
            encoding,
            n,
            k,
            gamma_db,
            arch,
            init_seed: seed,
            blocks,
            pool: MeanPool {
                divisor: arch.pool_divisor,
            },
            dense,
            training: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.encoding.input_shape(self.n, self.k)
    }

    pub fn output_len(&self) -> usize {
        2 * self.n * self.k
    }

    /// `(channels, height, width)` after the input and after each stage:
    /// every block, the pool, the dense layer and the head.
    pub fn shape_chain(&self) -> Vec<(usize, usize, usize)> {
        let (h, w) = self.input_shape();
        let mut chain = vec![(1, h, w)];
        chain.extend(self.blocks.iter().map(|b| (b.conv.out_channels, h, w)));
        chain.push((self.arch.channels, h, w));
        chain.push((self.dense.outputs, 1, 1));
        chain.push((self.dense.outputs, 1, 1));
        chain
    }

    /// Checks that every layer agrees with its neighbours and with the
    /// architecture, and that parameters are finite.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.blocks.len() != self.arch.blocks {
            return bad(format!("{} blocks, architecture has {}", self.blocks.len(), self.arch.blocks));
        }
        let mut in_ch = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            let c = &b.conv;
            if c.in_channels != in_ch || c.out_channels != self.arch.channels {
                return bad(format!(
                    "block {i}: conv {}->{} where {in_ch}->{} was expected",
                    c.in_channels, c.out_channels, self.arch.channels
                ));
            }
            if c.weight.len() != c.in_channels * c.out_channels * 9 || c.bias.len() != c.out_channels {
                return bad(format!("block {i}: conv parameter lengths"));
            }
            let bn = &b.bn;
            let lens = [bn.gamma.len(), bn.beta.len(), bn.running_mean.len(), bn.running_var.len()];
            if lens.iter().any(|&l| l != c.out_channels) {
                return bad(format!("block {i}: batchnorm over {lens:?} channels, conv has {}", c.out_channels));
            }
            if !(bn.eps > T::zero()) || bn.running_var.iter().any(|&v| !(v >= T::zero())) {
                return bad(format!("block {i}: batchnorm eps or running variance out of range"));
            }
            let finite = [&c.weight, &c.bias, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()));
            if !finite {
                return bad(format!("block {i}: non-finite parameter"));
            }
            in_ch = c.out_channels;
        }
        let (h, w) = self.input_shape();
        let d = &self.dense;
        if d.inputs != self.arch.channels * h * w || d.outputs != self.output_len() {
            return bad(format!(
                "dense {}->{} where {}->{} was expected",
                d.inputs,
                d.outputs,
                self.arch.channels * h * w,
                self.output_len()
            ));
        }
        if d.weight.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
            return bad("dense parameter lengths".into());
        }
        if d.weight.iter().chain(&d.bias).any(|x| !x.is_finite()) {
            return bad("dense: non-finite parameter".into());
        }
        if self.pool.divisor != self.arch.pool_divisor {
            return bad("pool divisor differs from architecture".into());
        }
        Ok(())
    }

    fn check_input(&self, x: &FeatureMap<T>) -> Result<()> {
        let (h, w) = self.input_shape();
        if (x.channels, x.height, x.width) != (1, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "{} model expects 1x{h}x{w} input, got {}x{}x{}",
                self.encoding, x.channels, x.height, x.width
            )));
        }
        Ok(())
    }

    /// Inference pass with running batch statistics; returns
    /// `batch x 2NK` outputs in (-1, 1).
    pub fn forward_infer(&self, x: &FeatureMap<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let slope = T::lit(self.arch.leaky_slope);
        let mut a = x.clone();
        for b in &self.blocks {
            let (z, _) = b.conv.forward(&a)?;
            a = b.bn.forward_infer(&z)?;
            leaky_relu(&mut a.data, slope);
        }
        let pooled = self.pool.forward(&a);
        let (mut y, _) = self.dense.forward(&pooled)?;
        tanh_forward(&mut y);
        Ok(y)
    }

    /// Training pass: batch statistics, running averages updated.
    pub fn forward_train(&mut self, x: &FeatureMap<T>) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        let slope = T::lit(self.arch.leaky_slope);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut a = x.clone();
        for b in &mut self.blocks {
            let (z, cc) = b.conv.forward(&a)?;
            let (mut act, bc) = b.bn.forward_train(&z)?;
            leaky_relu(&mut act.data, slope);
            a = act.clone();
            caches.push((cc, bc, act));
        }
        let pooled = self.pool.forward(&a);
        let (mut y, dense) = self.dense.forward(&pooled)?;
        tanh_forward(&mut y);
        let tape = Tape {
            blocks: caches,
            dense,
            output: y.clone(),
            batch: x.batch,
        };
        Ok((y, tape))
    }

    /// Backpropagates `dout` (gradient of the loss with respect to the
    /// outputs of [`forward_train`](Self::forward_train)).
    pub fn backward(&self, tape: &Tape<T>, dout: &[T], need_input: bool) -> Result<Gradients<T>> {
        if dout.len() != tape.output.len() || tape.blocks.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient of length {} for {} outputs",
                dout.len(),
                tape.output.len()
            )));
        }
        let slope = T::lit(self.arch.leaky_slope);
        let mut dz = dout.to_vec();
        tanh_backward(&tape.output, &mut dz);
        let (dpool, dw, db) = self.dense.backward(&tape.dense, &dz)?;
        let mut da = self.pool.backward(&dpool);

        let mut groups = vec![Vec::new(); 4 * self.blocks.len()];
        let mut input = None;
        for (i, (b, (cc, bc, act))) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            leaky_relu_backward(&act.data, &mut da.data, slope);
            let (dconv, dgamma, dbeta) = b.bn.backward(bc, &da)?;
            let (dx, dcw, dcb) = b.conv.backward(cc, &dconv, i > 0 || need_input)?;
            groups[4 * i] = dcw;
            groups[4 * i + 1] = dcb;
            groups[4 * i + 2] = dgamma;
            groups[4 * i + 3] = dbeta;
            match dx {
                Some(dx) if i > 0 => da = dx,
                dx => input = dx,
            }
        }
        debug_assert_eq!(tape.batch, da.batch);
        groups.push(dw);
        groups.push(db);
        Ok(Gradients { groups, input })
    }

    /// Trainable parameters: per block conv weight, conv bias, batch-norm
    /// scale and shift; then dense weight and bias.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(&mut self.dense.weight);
        out.push(&mut self.dense.bias);
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([b.conv.weight.len(), b.conv.bias.len(), b.bn.gamma.len(), b.bn.beta.len()]);
        }
        out.extend([self.dense.weight.len(), self.dense.bias.len()]);
        out
    }

    /// Encodes channels into one input batch.
    pub fn encode_batch(&self, channels: &[&ChannelSet<T>]) -> Result<FeatureMap<T>> {
        for c in channels {
            self.check_channel(c)?;
        }
        let tensors: Vec<Tensor3<T>> = channels.iter().map(|c| self.encoding.encode(c)).collect();
        FeatureMap::from_samples(&tensors.iter().collect::<Vec<_>>())
    }

    fn check_channel(&self, c: &ChannelSet<T>) -> Result<()> {
        if (c.n(), c.k()) != (self.n, self.k) {
            return Err(Error::Mismatch(format!(
                "model expects n={}, k={}; channel has n={}, k={}",
                self.n,
                self.k,
                c.n(),
                c.k()
            )));
        }
        Ok(())
    }

    /// Unit-norm beam directions for one channel.
    pub fn predict_directions(&self, c: &ChannelSet<T>) -> Result<DirectionMatrix<T>> {
        let x = self.encode_batch(&[c])?;
        let y = self.forward_infer(&x)?;
        label_decode(&y, self.n, self.k)
    }

    /// Directions for many channels with one batched pass; decode failures
    /// are reported per channel.
    pub fn predict_batch(&self, channels: &[&ChannelSet<T>]) -> Result<Vec<Result<DirectionMatrix<T>>>> {
        if channels.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.encode_batch(channels)?;
        let y = self.forward_infer(&x)?;
        Ok(y
            .chunks(self.output_len())
            .map(|row| label_decode(row, self.n, self.k))
            .collect())
    }

    /// SHA-256 over the geometry and every stored number (parameters and
    /// running statistics), as hex.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.encoding.as_str().as_bytes());
        for v in [self.n, self.k, self.arch.channels, self.arch.blocks] {
            hasher.update((v as u64).to_le_bytes());
        }
        hasher.update(self.gamma_db.to_le_bytes());
        let mut feed = |xs: &[T]| {
            for x in xs {
                hasher.update(x.as_f64().to_le_bytes());
            }
        };
        for b in &self.blocks {
            feed(&b.conv.weight);
            feed(&b.conv.bias);
            feed(&b.bn.gamma);
            feed(&b.bn.beta);
            feed(&b.bn.running_mean);
            feed(&b.bn.running_var);
        }
        feed(&self.dense.weight);
        feed(&self.dense.bias);
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
