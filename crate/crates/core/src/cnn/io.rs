//! Model files: one JSON document holding the geometry, every layer with its
//! parameters, and the training metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::Encoding;
use super::layers::{BatchNorm2d, Conv2d, Dense, MeanPool, PoolDivisor, KERNEL};
use super::model::{ArchConfig, Block, CnnModel};
use super::train::TrainingMeta;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "noma-beam-cnn";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerRecord {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        height: usize,
        width: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    LeakyRelu {
        slope: f64,
    },
    MeanPool {
        kernel: usize,
        divisor: PoolDivisor,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub encoding: Encoding,
    pub n: usize,
    pub k: usize,
    pub gamma_db: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    pub layers: Vec<LayerRecord>,
    pub training: Option<TrainingMeta>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: Vec<f64>) -> Vec<T> {
    v.into_iter().map(T::lit).collect()
}

fn invalid<R>(msg: impl Into<String>) -> Result<R> {
    Err(Error::InvalidModel(msg.into()))
}

impl<T: Scalar> CnnModel<T> {
    pub fn to_record(&self) -> ModelFile {
        let (h, w) = self.input_shape();
        let mut layers = Vec::with_capacity(3 * self.blocks.len() + 3);
        for b in &self.blocks {
            layers.push(LayerRecord::Conv2d {
                in_channels: b.conv.in_channels,
                out_channels: b.conv.out_channels,
                kernel: KERNEL,
                height: h,
                width: w,
                weight: to_f64(&b.conv.weight),
                bias: to_f64(&b.conv.bias),
            });
            layers.push(LayerRecord::BatchNorm {
                channels: b.bn.channels(),
                eps: b.bn.eps.as_f64(),
                momentum: b.bn.momentum.as_f64(),
                gamma: to_f64(&b.bn.gamma),
                beta: to_f64(&b.bn.beta),
                running_mean: to_f64(&b.bn.running_mean),
                running_var: to_f64(&b.bn.running_var),
            });
            layers.push(LayerRecord::LeakyRelu {
                slope: self.arch.leaky_slope,
            });
        }
        layers.push(LayerRecord::MeanPool {
            kernel: KERNEL,
            divisor: self.pool.divisor,
        });
        layers.push(LayerRecord::Dense {
            inputs: self.dense.inputs,
            outputs: self.dense.outputs,
            weight: to_f64(&self.dense.weight),
            bias: to_f64(&self.dense.bias),
        });
        layers.push(LayerRecord::Tanh);
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            encoding: self.encoding,
            n: self.n,
            k: self.k,
            gamma_db: self.gamma_db,
            seed: self.init_seed,
            arch: self.arch,
            layers,
            training: self.training.clone(),
        }
    }

    /// Rebuilds a model, checking the layer sequence and every shape
    /// against the declared geometry.
    pub fn from_record(rec: ModelFile) -> Result<Self> {
        if rec.format != MODEL_FORMAT || rec.version != MODEL_VERSION {
            return invalid(format!("unsupported format {} v{}", rec.format, rec.version));
        }
        rec.arch.validate()?;
        if rec.n == 0 || rec.k == 0 || !rec.gamma_db.is_finite() {
            return invalid(format!("geometry n={}, k={}, gamma_db={}", rec.n, rec.k, rec.gamma_db));
        }
        let (h, w) = rec.encoding.input_shape(rec.n, rec.k);
        let expected = 3 * rec.arch.blocks + 3;
        if rec.layers.len() != expected {
            return invalid(format!("{} layers, expected {expected}", rec.layers.len()));
        }
        let mut layers = rec.layers.into_iter();
        let mut blocks = Vec::with_capacity(rec.arch.blocks);
        for i in 0..rec.arch.blocks {
            let conv = match layers.next() {
                Some(LayerRecord::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    height,
                    width,
                    weight,
                    bias,
                }) => {
                    if kernel != KERNEL || (height, width) != (h, w) {
                        return invalid(format!("layer {}: conv {kernel}x{kernel} over {height}x{width}", 3 * i));
                    }
                    Conv2d::new(in_channels, out_channels, from_f64(weight), from_f64(bias))
                        .map_err(|e| Error::InvalidModel(format!("layer {}: {e}", 3 * i)))?
                }
                other => return invalid(format!("layer {}: expected conv2d, found {other:?}", 3 * i)),
            };
            let bn = match layers.next() {
                Some(LayerRecord::BatchNorm {
                    channels,
                    eps,
                    momentum,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                }) => {
                    if eps != rec.arch.bn_eps || momentum != rec.arch.bn_momentum {
                        return invalid(format!("layer {}: batchnorm constants differ from architecture", 3 * i + 1));
                    }
                    let lens = [gamma.len(), beta.len(), running_mean.len(), running_var.len()];
                    if lens.iter().any(|&l| l != channels) {
                        return invalid(format!("layer {}: batchnorm lengths {lens:?}", 3 * i + 1));
                    }
                    let mut bn = BatchNorm2d::new(channels, eps, momentum);
                    bn.gamma = from_f64(gamma);
                    bn.beta = from_f64(beta);
                    bn.running_mean = from_f64(running_mean);
                    bn.running_var = from_f64(running_var);
                    bn
                }
                other => return invalid(format!("layer {}: expected batch_norm, found {other:?}", 3 * i + 1)),
            };
            match layers.next() {
                Some(LayerRecord::LeakyRelu { slope }) if slope == rec.arch.leaky_slope => {}
                other => return invalid(format!("layer {}: expected leaky_relu, found {other:?}", 3 * i + 2)),
            }
            blocks.push(Block { conv, bn });
        }
        let pool = match layers.next() {
            Some(LayerRecord::MeanPool { kernel, divisor }) if kernel == KERNEL => MeanPool { divisor },
            other => return invalid(format!("expected mean_pool, found {other:?}")),
        };
        let dense = match layers.next() {
            Some(LayerRecord::Dense {
                inputs,
                outputs,
                weight,
                bias,
            }) => Dense::new(inputs, outputs, from_f64(weight), from_f64(bias))
                .map_err(|e| Error::InvalidModel(format!("dense: {e}")))?,
            other => return invalid(format!("expected dense, found {other:?}")),
        };
        match layers.next() {
            Some(LayerRecord::Tanh) => {}
            other => return invalid(format!("expected tanh, found {other:?}")),
        }
        let model = Self {
            encoding: rec.encoding,
            n: rec.n,
            k: rec.k,
            gamma_db: rec.gamma_db,
            arch: rec.arch,
            init_seed: rec.seed,
            blocks,
            pool,
            dense,
            training: rec.training,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelFile = serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        Self::from_record(rec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, &self.to_record())?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let rec: ModelFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_record(rec)
    }
}
