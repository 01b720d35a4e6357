use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encode::{label_encode, Encoding};
use super::model::{ArchConfig, CnnModel};
use super::optim::{rmse_loss, Adam, AdamConfig};
use super::tensor::{FeatureMap, Tensor3};
use crate::channel::{DatasetSample, RngStream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SPLIT_STREAM: u64 = 0;
const EPOCH_STREAM: u64 = 1;
/// Samples per inference pass when scoring the validation split.
const EVAL_CHUNK: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// First epoch (0-based) trained at `lr0 * lr_factor`.
    pub lr_drop_epoch: usize,
    pub lr_factor: f64,
    pub val_fraction: f64,
    /// L2 penalty on convolution and dense weights, added to their gradients.
    pub weight_decay: f64,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 200,
            lr0: 0.01,
            lr_drop_epoch: 50,
            lr_factor: 0.5,
            val_fraction: 0.2,
            weight_decay: 0.0,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            init_seed: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        // Batch normalization needs two samples per batch.
        if self.batch_size < 2 {
            return bad(format!("batch size {} (at least 2)", self.batch_size));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("learning rate {}", self.lr0));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("learning-rate factor {}", self.lr_factor));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction {}", self.val_fraction));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {}", self.weight_decay));
        }
        self.arch.validate()
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.lr_drop_epoch {
            self.lr0
        } else {
            self.lr0 * self.lr_factor
        }
    }
}

/// What training leaves behind in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub final_train_rmse: f64,
    pub final_val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub encoding: Encoding,
    /// Mean per-sample RMSE over each epoch's minibatches.
    pub train_rmse: Vec<f64>,
    /// Per-sample RMSE on the held-out split, inference mode, after each epoch.
    pub val_rmse: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub checksum: String,
    pub train_samples: usize,
    pub val_samples: usize,
}

struct Prepared<T> {
    inputs: Vec<Tensor3<T>>,
    labels: Vec<Vec<T>>,
}

impl<T: Scalar> Prepared<T> {
    fn batch(&self, idx: &[usize]) -> Result<(FeatureMap<T>, Vec<T>)> {
        let x = FeatureMap::from_samples(&idx.iter().map(|&i| &self.inputs[i]).collect::<Vec<_>>())?;
        let y = idx.iter().flat_map(|&i| self.labels[i].iter().copied()).collect();
        Ok((x, y))
    }
}

/// Indices of the weight (not bias or batch-norm) groups among
/// [`CnnModel::params_mut`]'s `groups` entries.
fn model_weight_groups(groups: usize) -> impl Iterator<Item = usize> {
    (0..groups - 2).step_by(4).chain([groups - 2])
}

/// Common `(n, k, gamma_db)` of the optimal samples.
pub fn dataset_geometry(samples: &[&DatasetSample]) -> Result<(usize, usize, f64)> {
    let first = samples.first().ok_or(Error::InsufficientSamples {
        needed: 1,
        available: 0,
    })?;
    let key = (first.channel.n(), first.channel.k(), first.gamma_db);
    for (i, s) in samples.iter().enumerate() {
        let other = (s.channel.n(), s.channel.k(), s.gamma_db);
        if other != key {
            return Err(Error::Mismatch(format!(
                "training samples disagree: (n, k, gamma_db) {key:?} vs {other:?} at optimal sample {i}"
            )));
        }
    }
    Ok(key)
}

fn mean_rmse<T: Scalar>(model: &CnnModel<T>, data: &Prepared<T>, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk)?;
        let pred = model.forward_infer(&x)?;
        let (loss, _) = rmse_loss(&pred, &y, chunk.len())?;
        total += loss.as_f64() * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Fits a fresh network to the optimal samples of `dataset`.
///
/// The validation split is drawn once from a seeded shuffle; training
/// batches are reshuffled every epoch. A trailing batch of a single sample
/// is skipped, since batch normalization cannot use it.
pub fn train<T: Scalar>(
    dataset: &[DatasetSample],
    encoding: Encoding,
    cfg: &TrainConfig,
) -> Result<(CnnModel<T>, TrainReport)> {
    cfg.validate()?;
    let usable: Vec<&DatasetSample> = dataset.iter().filter(|s| s.is_optimal()).collect();
    let (n, k, gamma_db) = dataset_geometry(&usable)?;

    let to_t = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    let mut data = Prepared {
        inputs: Vec::with_capacity(usable.len()),
        labels: Vec::with_capacity(usable.len()),
    };
    for s in &usable {
        let t = encoding.encode(&s.channel);
        data.inputs.push(Tensor3 {
            channels: t.channels,
            height: t.height,
            width: t.width,
            data: to_t(t.data),
        });
        data.labels.push(to_t(label_encode(&s.u)));
    }

    let total = usable.len();
    let n_val = ((cfg.val_fraction * total as f64).round() as usize).max(1);
    let n_train = total.saturating_sub(n_val);
    if n_train < cfg.batch_size {
        return Err(Error::InsufficientSamples {
            needed: cfg.batch_size + n_val,
            available: total,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut RngStream::new(cfg.shuffle_seed, SPLIT_STREAM).rng());
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let mut model = CnnModel::<T>::new(encoding, n, k, gamma_db, cfg.arch, cfg.init_seed)?;
    let mut adam = Adam::new(cfg.adam, &model.param_sizes())?;
    let mut rng = RngStream::new(cfg.shuffle_seed, EPOCH_STREAM).rng();
    let mut report = TrainReport {
        encoding,
        train_rmse: Vec::with_capacity(cfg.epochs),
        val_rmse: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
        checksum: String::new(),
        train_samples: n_train,
        val_samples: n_val,
    };

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = T::lit(cfg.learning_rate(epoch));
        train_idx.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = data.batch(chunk)?;
            let (pred, tape) = model.forward_train(&x)?;
            let (loss, dout) = rmse_loss(&pred, &y, chunk.len())?;
            let mut grads = model.backward(&tape, &dout, false)?;
            if cfg.weight_decay > 0.0 {
                let wd = T::lit(cfg.weight_decay);
                let mut params = model.params_mut();
                for gi in model_weight_groups(params.len()) {
                    for (g, &p) in grads.groups[gi].iter_mut().zip(params[gi].iter()) {
                        *g += wd * p;
                    }
                }
                drop(params.drain(..));
            }
            adam.step(&mut model.params_mut(), &grads.slices(), lr)?;
            loss_sum += loss.as_f64() * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_rmse = loss_sum / seen as f64;
        let val_rmse = mean_rmse(&model, &data, val_idx)?;
        let secs = start.elapsed().as_secs_f64();
        log::info!(
            "{encoding} epoch {}/{}: train rmse {train_rmse:.5}, val rmse {val_rmse:.5}, lr {}, {secs:.2}s",
            epoch + 1,
            cfg.epochs,
            cfg.learning_rate(epoch)
        );
        report.train_rmse.push(train_rmse);
        report.val_rmse.push(val_rmse);
        report.epoch_seconds.push(secs);
    }

    model.training = Some(TrainingMeta {
        config: *cfg,
        train_samples: n_train,
        val_samples: n_val,
        final_train_rmse: *report.train_rmse.last().unwrap(),
        final_val_rmse: *report.val_rmse.last().unwrap(),
    });
    report.checksum = model.checksum();
    Ok((model, report))
}
